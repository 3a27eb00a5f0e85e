//! Brute-force reference compositor.
//!
//! Tests every splat at every pixel with no tiling, no influence-radius
//! culling, and hand-expanded scalar math. Shares only the leaf color
//! model with the production path, so agreement between the two is
//! strong evidence that binning, per-tile sorting, and the parallel
//! blit do not change the image. Quadratic cost; test scenes only.

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::{Image, ScalarImage};
use crate::scene::{GaussianPrimitive, GaussianScene};

use super::forward::DEPTH_ALPHA_FLOOR;
use super::projection::{sh_color, ALPHA_MAX, COV2D_DILATION, NEAR_CLIP};
use super::RenderConfig;
use super::RenderedView;

struct FlatSplat {
    mean_x: f64,
    mean_y: f64,
    conic: [f64; 3],
    z: f64,
    opacity: f64,
    color: [f64; 3],
    prim_index: u32,
}

fn quat_to_rows(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn flatten_one(
    prim: &GaussianPrimitive,
    prim_index: u32,
    rot: &[[f64; 3]; 3],
    t: &[f64; 3],
    cam_center: &[f64; 3],
    sh_degree: usize,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> Option<FlatSplat> {
    let p = [prim.position.x, prim.position.y, prim.position.z];
    let mut xc = [0.0f64; 3];
    for r in 0..3 {
        xc[r] = rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + t[r];
    }
    if xc[2] <= NEAR_CLIP {
        return None;
    }
    let opacity = 1.0 / (1.0 + (-prim.opacity_logit).exp());
    if opacity <= cfg.alpha_cutoff {
        return None;
    }

    // World covariance R_q diag(exp(2 s)) R_q^T, expanded per entry.
    let rq = quat_to_rows(prim.quaternion);
    let var = [
        (2.0 * prim.scale_log.x).exp(),
        (2.0 * prim.scale_log.y).exp(),
        (2.0 * prim.scale_log.z).exp(),
    ];
    let mut cov_w = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += rq[r][a] * var[a] * rq[c][a];
            }
            cov_w[r][c] = s;
        }
    }
    // Camera-frame covariance R cov R^T.
    let mut tmp = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += rot[r][a] * cov_w[a][c];
            }
            tmp[r][c] = s;
        }
    }
    let mut mc = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += tmp[r][a] * rot[c][a];
            }
            mc[r][c] = s;
        }
    }

    let inv_z = 1.0 / xc[2];
    let lim_x = 1.3 * 0.5 * k.width as f64 / k.fx;
    let lim_y = 1.3 * 0.5 * k.height as f64 / k.fy;
    let txn = (xc[0] * inv_z).clamp(-lim_x, lim_x);
    let tyn = (xc[1] * inv_z).clamp(-lim_y, lim_y);
    let jac = [
        [k.fx * inv_z, 0.0, -k.fx * txn * inv_z],
        [0.0, k.fy * inv_z, -k.fy * tyn * inv_z],
    ];
    let mut jm = [[0.0f64; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += jac[r][a] * mc[a][c];
            }
            jm[r][c] = s;
        }
    }
    let mut s2 = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for a in 0..3 {
                s += jm[r][a] * jac[c][a];
            }
            s2[r][c] = s;
        }
    }
    let a = s2[0][0] + COV2D_DILATION;
    let b = s2[0][1];
    let c = s2[1][1] + COV2D_DILATION;
    let det = a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }

    let color = if sh_degree == 0 {
        let c0 = 0.282_094_791_773_878_14;
        [
            (c0 * prim.sh_dc[0] + 0.5).clamp(0.0, 1.0),
            (c0 * prim.sh_dc[1] + 0.5).clamp(0.0, 1.0),
            (c0 * prim.sh_dc[2] + 0.5).clamp(0.0, 1.0),
        ]
    } else {
        let d = [
            p[0] - cam_center[0],
            p[1] - cam_center[1],
            p[2] - cam_center[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let dir = nalgebra::Vector3::new(d[0] / n, d[1] / n, d[2] / n);
        sh_color(prim, sh_degree, &dir)
    };

    Some(FlatSplat {
        mean_x: k.fx * xc[0] * inv_z + k.cx,
        mean_y: k.fy * xc[1] * inv_z + k.cy,
        conic: [c / det, -b / det, a / det],
        z: xc[2],
        opacity,
        color,
        prim_index,
    })
}

pub fn render_reference(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> RenderedView {
    cfg.validate().expect("invalid render config");
    k.validate().expect("invalid intrinsics");
    let rm = pose.rotation.matrix();
    let rot = [
        [rm[(0, 0)], rm[(0, 1)], rm[(0, 2)]],
        [rm[(1, 0)], rm[(1, 1)], rm[(1, 2)]],
        [rm[(2, 0)], rm[(2, 1)], rm[(2, 2)]],
    ];
    let t = [pose.translation.x, pose.translation.y, pose.translation.z];
    let cc = pose.camera_center();
    let cam_center = [cc.x, cc.y, cc.z];

    let mut flats: Vec<FlatSplat> = scene
        .primitives()
        .iter()
        .enumerate()
        .filter_map(|(i, prim)| {
            flatten_one(prim, i as u32, &rot, &t, &cam_center, scene.sh_degree(), k, cfg)
        })
        .collect();
    flats.sort_by(|p, q| p.z.total_cmp(&q.z).then(p.prim_index.cmp(&q.prim_index)));

    let mut rgb = Image::zeros(k.width, k.height);
    let mut depth = ScalarImage::zeros(k.width, k.height);
    let mut alpha_img = ScalarImage::zeros(k.width, k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let px = x as f64;
            let py = y as f64;
            let mut transmittance = 1.0;
            let mut acc = [0.0f64; 3];
            let mut depth_num = 0.0;
            let mut alpha_acc = 0.0;
            let mut contributions = 0usize;
            for g in &flats {
                let dx = px - g.mean_x;
                let dy = py - g.mean_y;
                let power = -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy)
                    - g.conic[1] * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let alpha = (g.opacity * power.exp()).min(ALPHA_MAX);
                if alpha <= cfg.alpha_cutoff {
                    continue;
                }
                let weight = alpha * transmittance;
                for ch in 0..3 {
                    acc[ch] += g.color[ch] * weight;
                }
                depth_num += g.z * weight;
                alpha_acc += weight;
                transmittance *= 1.0 - alpha;
                contributions += 1;
                if transmittance < cfg.transmittance_floor
                    || contributions >= cfg.max_gaussians_per_pixel
                {
                    break;
                }
            }
            for ch in 0..3 {
                acc[ch] += cfg.background[ch] * transmittance;
            }
            rgb.set_pixel(x, y, acc);
            depth.set(x, y, depth_num / alpha_acc.max(DEPTH_ALPHA_FLOOR));
            alpha_img.set(x, y, alpha_acc);
        }
    }
    RenderedView { rgb, depth, alpha: alpha_img }
}
