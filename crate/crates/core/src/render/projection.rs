//! Shared projection stage: world-space Gaussians to screen-space splats.
//!
//! Both the tiled compositor and the pose-gradient pass consume the
//! `Projected` records produced here, so every geometric quantity the
//! backward pass re-derives (camera-frame covariance, Jacobian clamp
//! state) is captured at projection time instead of being recomputed
//! under possibly different rounding.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::{CameraPose, Intrinsics};
use crate::scene::{GaussianPrimitive, GaussianScene};

use super::RenderConfig;

/// Minimum camera-frame depth; splats at or behind this plane are culled.
pub(crate) const NEAR_CLIP: f64 = 1e-3;

/// Screen-space blur added to both diagonal entries of the projected
/// covariance. Keeps every splat at least ~half a pixel wide so thin
/// Gaussians do not vanish between sample points.
pub(crate) const COV2D_DILATION: f64 = 0.3;

/// Frustum slack for the perspective-Jacobian linearization point. The
/// normalized coordinates fed into the Jacobian are clamped to this
/// multiple of the half-frustum extent; the projected mean itself is
/// never clamped.
const JACOBIAN_FRUSTUM_SLACK: f64 = 1.3;

/// Hard clamp applied to per-sample opacity during compositing.
pub(crate) const ALPHA_MAX: f64 = 0.999;

/// One Gaussian after projection into a specific view.
///
/// `conic` is the inverse of the dilated 2D covariance, stored symmetric
/// as `[m00, m01, m11]`.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub prim_index: u32,
    pub mean2d: Vector2<f64>,
    pub conic: [f64; 3],
    pub z_cam: f64,
    pub x_cam: Vector3<f64>,
    /// Camera-frame 3D covariance, symmetric storage
    /// `[m00, m01, m02, m11, m12, m22]`.
    pub cov_cam: [f64; 6],
    pub clamped_x: bool,
    pub clamped_y: bool,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Screen-space influence radius consistent with the alpha cutoff:
    /// beyond it, `opacity * exp(power)` falls below `alpha_cutoff`.
    pub radius: f64,
}

/// Perspective Jacobian of (x/z, y/z) scaled by focal lengths, with the
/// linearization point clamped to the padded frustum.
pub(crate) fn perspective_jacobian(
    x_cam: &Vector3<f64>,
    k: &Intrinsics,
) -> (Matrix2x3<f64>, bool, bool) {
    let z = x_cam.z;
    let inv_z = 1.0 / z;
    let lim_x = JACOBIAN_FRUSTUM_SLACK * 0.5 * k.width as f64 / k.fx;
    let lim_y = JACOBIAN_FRUSTUM_SLACK * 0.5 * k.height as f64 / k.fy;
    let tx = x_cam.x * inv_z;
    let ty = x_cam.y * inv_z;
    let cx = tx.clamp(-lim_x, lim_x);
    let cy = ty.clamp(-lim_y, lim_y);
    let clamped_x = cx != tx;
    let clamped_y = cy != ty;
    let jac = Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * cx * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * cy * inv_z,
    );
    (jac, clamped_x, clamped_y)
}

/// World-frame 3D covariance of a primitive: R diag(s^2) R^T.
pub(crate) fn world_covariance(prim: &GaussianPrimitive) -> Matrix3<f64> {
    let rot = prim.rotation().matrix();
    let s = prim.scales();
    let scaled = Matrix3::from_columns(&[
        rot.column(0) * s.x,
        rot.column(1) * s.y,
        rot.column(2) * s.z,
    ]);
    &scaled * scaled.transpose()
}

/// Real-valued spherical-harmonics basis constants, bands 0..=3.
const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_74,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_74,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Evaluate a primitive's view-dependent color along `dir` (unit vector
/// from camera center toward the primitive), clamped to [0, 1].
///
/// The clamp keeps composited radiance inside [0, 1] by construction;
/// the backward pass treats color as locally constant, which the clamp
/// does not disturb because clamped channels have zero derivative
/// anyway under the photometric losses used here.
pub(crate) fn sh_color(prim: &GaussianPrimitive, sh_degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let coeffs = (sh_degree + 1) * (sh_degree + 1);
    let rest_per_channel = coeffs - 1;
    for c in 0..3 {
        let mut v = SH_C0 * prim.sh_dc[c];
        if sh_degree >= 1 {
            let rest = &prim.sh_rest[c * rest_per_channel..(c + 1) * rest_per_channel];
            let (x, y, z) = (dir.x, dir.y, dir.z);
            v += SH_C1 * (-y * rest[0] + z * rest[1] - x * rest[2]);
            if sh_degree >= 2 {
                let (xx, yy, zz) = (x * x, y * y, z * z);
                let (xy, yz, xz) = (x * y, y * z, x * z);
                v += SH_C2[0] * xy * rest[3]
                    + SH_C2[1] * yz * rest[4]
                    + SH_C2[2] * (2.0 * zz - xx - yy) * rest[5]
                    + SH_C2[3] * xz * rest[6]
                    + SH_C2[4] * (xx - yy) * rest[7];
                if sh_degree >= 3 {
                    v += SH_C3[0] * y * (3.0 * xx - yy) * rest[8]
                        + SH_C3[1] * xy * z * rest[9]
                        + SH_C3[2] * y * (4.0 * zz - xx - yy) * rest[10]
                        + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * rest[11]
                        + SH_C3[4] * x * (4.0 * zz - xx - yy) * rest[12]
                        + SH_C3[5] * z * (xx - yy) * rest[13]
                        + SH_C3[6] * x * (xx - 3.0 * yy) * rest[14];
                }
            }
        }
        rgb[c] = (v + 0.5).clamp(0.0, 1.0);
    }
    rgb
}

/// Project one primitive into the view. Returns `None` when the splat
/// cannot contribute: behind the near plane, peak opacity below the
/// cutoff, or influence disc entirely off screen.
pub(crate) fn project_one(
    prim: &GaussianPrimitive,
    prim_index: u32,
    rot_mat: &Matrix3<f64>,
    trans: &Vector3<f64>,
    cam_center: &Vector3<f64>,
    sh_degree: usize,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> Option<Projected> {
    let x_cam = rot_mat * prim.position + trans;
    if x_cam.z <= NEAR_CLIP {
        return None;
    }
    let opacity = prim.opacity();
    if opacity <= cfg.alpha_cutoff {
        return None;
    }

    let inv_z = 1.0 / x_cam.z;
    let mean2d = Vector2::new(
        k.fx * x_cam.x * inv_z + k.cx,
        k.fy * x_cam.y * inv_z + k.cy,
    );

    let cov_world = world_covariance(prim);
    let cov_cam_m = rot_mat * cov_world * rot_mat.transpose();
    let (jac, clamped_x, clamped_y) = perspective_jacobian(&x_cam, k);
    let cov2d_m = jac * cov_cam_m * jac.transpose();
    let a = cov2d_m[(0, 0)] + COV2D_DILATION;
    let b = cov2d_m[(0, 1)];
    let c = cov2d_m[(1, 1)] + COV2D_DILATION;
    let det = a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];

    // Influence radius from the cutoff itself: alpha drops below the
    // cutoff once the Mahalanobis power exceeds ln(opacity / cutoff),
    // and the largest eigenvalue bounds the spatial extent of that
    // level set. Matching the bin radius to the cutoff keeps tile
    // binning exactly equivalent to testing every splat per pixel.
    let power_limit = (opacity / cfg.alpha_cutoff).ln();
    let eig_mid = 0.5 * (a + c);
    let eig_span = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let eig_max = eig_mid + eig_span;
    let radius = (2.0 * power_limit * eig_max).sqrt();

    let w = k.width as f64;
    let h = k.height as f64;
    if mean2d.x + radius < 0.0
        || mean2d.x - radius > w - 1.0
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > h - 1.0
    {
        return None;
    }

    let color = if sh_degree == 0 {
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = (SH_C0 * prim.sh_dc[c] + 0.5).clamp(0.0, 1.0);
        }
        rgb
    } else {
        let dir = (prim.position - cam_center).normalize();
        sh_color(prim, sh_degree, &dir)
    };

    Some(Projected {
        prim_index,
        mean2d,
        conic,
        z_cam: x_cam.z,
        x_cam,
        cov_cam: [
            cov_cam_m[(0, 0)],
            cov_cam_m[(0, 1)],
            cov_cam_m[(0, 2)],
            cov_cam_m[(1, 1)],
            cov_cam_m[(1, 2)],
            cov_cam_m[(2, 2)],
        ],
        clamped_x,
        clamped_y,
        opacity,
        color,
        radius,
    })
}

/// Project the whole scene and bin the survivors into screen tiles.
///
/// Returns the projected splats (in ascending primitive order) and one
/// index list per tile, each sorted front-to-back by camera depth with
/// primitive index as the tie break. Tiles are laid out row-major.
pub(crate) fn project_and_bin(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> (Vec<Projected>, Vec<Vec<u32>>, usize, usize) {
    use rayon::prelude::*;

    let rot_mat = pose.rotation.matrix();
    let trans = pose.translation;
    let cam_center = pose.camera_center();
    let sh_degree = scene.sh_degree();

    let maybe: Vec<Option<Projected>> = scene
        .primitives()
        .par_iter()
        .enumerate()
        .map(|(i, prim)| {
            project_one(prim, i as u32, &rot_mat, &trans, &cam_center, sh_degree, k, cfg)
        })
        .collect();
    let kept: Vec<Projected> = maybe.into_iter().flatten().collect();

    let ts = cfg.tile_size as f64;
    let tiles_x = k.width.div_ceil(cfg.tile_size);
    let tiles_y = k.height.div_ceil(cfg.tile_size);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, proj) in kept.iter().enumerate() {
        let x0 = ((proj.mean2d.x - proj.radius) / ts).floor().max(0.0) as usize;
        let x1 = (((proj.mean2d.x + proj.radius) / ts).floor() as isize)
            .min(tiles_x as isize - 1)
            .max(0) as usize;
        let y0 = ((proj.mean2d.y - proj.radius) / ts).floor().max(0.0) as usize;
        let y1 = (((proj.mean2d.y + proj.radius) / ts).floor() as isize)
            .min(tiles_y as isize - 1)
            .max(0) as usize;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    tiles.par_iter_mut().for_each(|list| {
        list.sort_unstable_by(|&ia, &ib| {
            let pa = &kept[ia as usize];
            let pb = &kept[ib as usize];
            pa.z_cam
                .total_cmp(&pb.z_cam)
                .then(pa.prim_index.cmp(&pb.prim_index))
        });
    });

    (kept, tiles, tiles_x, tiles_y)
}
