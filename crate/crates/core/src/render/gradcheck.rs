//! Finite-difference validation of the analytic pose gradient.
//!
//! Each case builds a fresh random cloud, renders a query image from a
//! nearby offset pose, and compares [`super::render_backward`] on the
//! L1 photometric loss against central differences in all six pose
//! components.
//!
//! Central differences are only a valid oracle where the loss is
//! smooth across the probe bracket, and the raster loss is piecewise
//! smooth in three ways the check must respect:
//!
//! - The absolute-value kink: a pixel channel whose residual changes
//!   sign inside a probe bracket contributes a slope error that does
//!   not shrink with the step. Every image has a few such pixels along
//!   residual zero-crossing contours, so the comparison runs on the
//!   masked form of the loss (the same form refinement uses): pixels
//!   whose residual sign is unstable across the base render and all
//!   twelve probes are excluded, typically well under one percent of
//!   the image. Analytic and numeric sides share the mask, and the
//!   full-image unmasked loss is exercised by everything else in the
//!   pipeline.
//! - Threshold jumps: the alpha cutoff and transmittance floor make
//!   the image a piecewise function of pose. The check runs with both
//!   thresholds tiny so the jumps sit far below the comparison
//!   tolerance; the code path is the same as production.
//! - Ordering and clamping: per-splat camera depths are kept separated
//!   by more than twice the largest depth shift a probe can cause, so
//!   the compositing order is stable, and the cloud is kept well
//!   inside the frustum so no splat sits near the perspective-Jacobian
//!   clamp boundary (the clamped branch has its own dedicated test).
//!   Peak opacities stay below the hard alpha cap for the same reason.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{apply_rotation_update, CameraPose, Intrinsics, So3Increment};
use crate::image::Image;
use crate::photometry::{photometric_l1, ReliabilityMask};
use crate::scene::{look_at, random_rotation, GaussianPrimitive, GaussianScene};

use super::{render, render_backward, RenderConfig};
use nalgebra::Vector3;

/// Minimum camera-depth separation between any two splats, chosen to
/// exceed twice the largest depth shift a probe offset can cause.
const DEPTH_GAP: f64 = 2e-3;

/// Sign flips through residuals smaller than this are ignored by the
/// bracket screen: a crossing that close to a probe endpoint
/// contributes error far below tolerance.
const FLIP_IGNORE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub cases: usize,
    pub seed: u64,
    pub image_width: usize,
    pub image_height: usize,
    pub primitive_count: usize,
    /// Central-difference probe offset.
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            cases: 20,
            seed: 0x5EED_CA5E,
            image_width: 64,
            image_height: 64,
            primitive_count: 300,
            step: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-7,
        }
    }
}

/// Rasterizer settings for gradient checking; see the module docs for
/// why the cutoffs are smaller than production values.
pub fn gradcheck_render_config() -> RenderConfig {
    RenderConfig {
        tile_size: 16,
        alpha_cutoff: 1e-8,
        transmittance_floor: 1e-10,
        max_gaussians_per_pixel: 4096,
        background: [0.15, 0.20, 0.25],
    }
}

pub const COMPONENT_NAMES: [&str; 6] =
    ["rot_x", "rot_y", "rot_z", "trans_x", "trans_y", "trans_z"];

#[derive(Debug, Clone, Copy)]
pub struct GradCheckComponent {
    pub name: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub index: usize,
    /// Pixels excluded by the stable-sign screen.
    pub excluded_pixels: usize,
    pub components: [GradCheckComponent; 6],
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn build_case(
    cfg: &GradCheckConfig,
    case: usize,
    salt: u64,
) -> (GaussianScene, CameraPose, CameraPose, Intrinsics) {
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            ^ (case as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03),
    );

    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(-0.45..0.45);
    let radius = 3.4;
    let center = Vector3::new(
        radius * el.cos() * az.cos(),
        radius * el.cos() * az.sin(),
        radius * el.sin(),
    );
    let target = Vector3::new(
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
    );
    let pose = look_at(center, target);

    // Half-extent 0.7 at orbit radius 3.4 keeps every splat center
    // below ~0.55 in normalized camera coordinates, well clear of the
    // Jacobian clamp at 1.3 * half-frustum.
    let half = 0.7;
    let mut prims: Vec<GaussianPrimitive> = (0..cfg.primitive_count)
        .map(|_| {
            let mut prim = GaussianPrimitive {
                position: Vector3::new(
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                    rng.gen_range(-half..half),
                ),
                scale_log: Vector3::new(
                    rng.gen_range(0.05f64..0.14).ln(),
                    rng.gen_range(0.05f64..0.14).ln(),
                    rng.gen_range(0.05f64..0.14).ln(),
                ),
                quaternion: random_rotation(&mut rng).wxyz(),
                opacity_logit: logit(rng.gen_range(0.35..0.95)),
                sh_dc: [0.0; 3],
                sh_rest: Vec::new(),
            };
            prim.set_base_color([
                rng.gen_range(0.08..0.92),
                rng.gen_range(0.08..0.92),
                rng.gen_range(0.08..0.92),
            ]);
            prim
        })
        .collect();

    // Separate camera depths so probe offsets cannot reorder the
    // per-pixel compositing sequence.
    let rot = pose.rotation.matrix();
    let forward = Vector3::new(rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]);
    let mut order: Vec<usize> = (0..prims.len()).collect();
    let depth_of =
        |p: &GaussianPrimitive| forward.dot(&p.position) + pose.translation.z;
    order.sort_by(|&a, &b| depth_of(&prims[a]).total_cmp(&depth_of(&prims[b])));
    let mut prev = f64::NEG_INFINITY;
    for &i in &order {
        let z = depth_of(&prims[i]);
        if z < prev + DEPTH_GAP {
            let shift = prev + DEPTH_GAP - z;
            prims[i].position += forward * shift;
            prev += DEPTH_GAP;
        } else {
            prev = z;
        }
    }

    let scene = GaussianScene::new(prims, 0).expect("generated cloud is valid");

    let axis = {
        let v = Vector3::new(
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        v / v.norm().max(1e-9)
    };
    let angle = rng.gen_range(0.01..0.03);
    let rotated = apply_rotation_update(&pose, &(axis * angle));
    let query_center = pose.camera_center()
        + Vector3::new(
            rng.gen_range(-0.04..0.04),
            rng.gen_range(-0.04..0.04),
            rng.gen_range(-0.04..0.04),
        );
    let query_pose = CameraPose::from_rotation_center(rotated.rotation, &query_center);

    let k = Intrinsics::from_fov(cfg.image_width, cfg.image_height, 60.0);
    (scene, pose, query_pose, k)
}

fn probe_pose(pose: &CameraPose, component: usize, offset: f64) -> CameraPose {
    if component < 3 {
        let mut inc = So3Increment::zeros();
        inc[component] = offset;
        apply_rotation_update(pose, &inc)
    } else {
        let mut p = *pose;
        p.translation[component - 3] += offset;
        p
    }
}

/// Mask of pixels whose residual keeps one strict sign per channel
/// across the base image and every probe image, so the absolute value
/// is smooth over all brackets there. Residual magnitudes below
/// [`FLIP_IGNORE`] do not count as the opposite sign.
fn stable_sign_mask(base: &Image, probes: &[[Image; 2]], query: &Image) -> ReliabilityMask {
    let w = query.width;
    let h = query.height;
    let mut keep = vec![true; w * h];
    let mut lo = vec![0.0f64; w * h * 3];
    let mut hi = vec![0.0f64; w * h * 3];
    for (i, (&b, &q)) in base.data.iter().zip(query.data.iter()).enumerate() {
        let r = b - q;
        lo[i] = r;
        hi[i] = r;
    }
    for pair in probes {
        for img in pair {
            for (i, (&p, &q)) in img.data.iter().zip(query.data.iter()).enumerate() {
                let r = p - q;
                lo[i] = lo[i].min(r);
                hi[i] = hi[i].max(r);
            }
        }
    }
    for (i, k) in keep.iter_mut().enumerate() {
        for c in 0..3 {
            let at = i * 3 + c;
            if lo[at] < -FLIP_IGNORE && hi[at] > FLIP_IGNORE {
                *k = false;
                break;
            }
        }
    }
    ReliabilityMask::from_fn(w, h, |x, y| keep[y * w + x])
}

/// Runs all cases; see [`GradCheckConfig`] for knobs.
pub fn run_gradient_check(cfg: &GradCheckConfig) -> GradCheckReport {
    let rc = gradcheck_render_config();
    let mut cases = Vec::with_capacity(cfg.cases);
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let h = cfg.step;

    for case in 0..cfg.cases {
        let (scene, pose, query_pose, k) = build_case(cfg, case, 0);
        let query = render(&scene, &query_pose, &k, &rc).rgb;
        let probes: Vec<[Image; 2]> = (0..6)
            .map(|i| {
                [
                    render(&scene, &probe_pose(&pose, i, h), &k, &rc).rgb,
                    render(&scene, &probe_pose(&pose, i, -h), &k, &rc).rgb,
                ]
            })
            .collect();
        let base = render(&scene, &pose, &k, &rc);
        let mask = stable_sign_mask(&base.rgb, &probes, &query);
        let excluded = mask.width * mask.height - mask.count();

        let (_, weights) = photometric_l1(&base.rgb, &query, Some(&mask));
        let grad = render_backward(&scene, &pose, &k, &rc, &weights);
        let analytic = [
            grad.d_rotation.x,
            grad.d_rotation.y,
            grad.d_rotation.z,
            grad.d_translation.x,
            grad.d_translation.y,
            grad.d_translation.z,
        ];

        let mut components = [GradCheckComponent {
            name: "",
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
            abs_err: 0.0,
            pass: false,
        }; 6];
        for (i, slot) in components.iter_mut().enumerate() {
            let loss_plus = photometric_l1(&probes[i][0], &query, Some(&mask)).0.value;
            let loss_minus = photometric_l1(&probes[i][1], &query, Some(&mask)).0.value;
            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let a = analytic[i];
            let abs_err = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let rel_err = if denom > 0.0 { abs_err / denom } else { 0.0 };
            *slot = GradCheckComponent {
                name: COMPONENT_NAMES[i],
                analytic: a,
                numeric,
                rel_err,
                abs_err,
                pass: rel_err < cfg.rel_tol || abs_err < cfg.abs_tol,
            };
            max_rel = max_rel.max(rel_err);
            max_abs = max_abs.max(abs_err);
        }
        let pass = components.iter().all(|c| c.pass);
        cases.push(GradCheckCase { index: case, excluded_pixels: excluded, components, pass });
    }

    let pass = cases.iter().all(|c| c.pass);
    GradCheckReport { cases, max_rel_err: max_rel, max_abs_err: max_abs, pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[ignore]
    fn full_default_sweep_diagnostic() {
        let start = std::time::Instant::now();
        let report = run_gradient_check(&GradCheckConfig::default());
        for case in &report.cases {
            let worst = case
                .components
                .iter()
                .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
                .unwrap();
            println!(
                "case {:2} excluded {:4} worst {}: rel {:.3e} abs {:.3e} pass {}",
                case.index,
                case.excluded_pixels,
                worst.name,
                worst.rel_err,
                worst.abs_err,
                case.pass
            );
        }
        println!(
            "max_rel {:.3e} max_abs {:.3e} pass {} elapsed {:.1?}",
            report.max_rel_err,
            report.max_abs_err,
            report.pass,
            start.elapsed()
        );
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_smoke() {
        let cfg = GradCheckConfig {
            cases: 3,
            primitive_count: 120,
            image_width: 48,
            image_height: 48,
            ..GradCheckConfig::default()
        };
        let report = run_gradient_check(&cfg);
        for case in &report.cases {
            for c in &case.components {
                assert!(
                    c.pass,
                    "case {} component {}: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                    case.index, c.name, c.analytic, c.numeric, c.rel_err
                );
            }
        }
        assert!(report.pass);
    }

    #[test]
    fn gradient_is_nonzero_for_offset_poses() {
        let cfg = GradCheckConfig {
            cases: 1,
            primitive_count: 80,
            image_width: 40,
            image_height: 40,
            ..GradCheckConfig::default()
        };
        let (scene, pose, query_pose, k) = build_case(&cfg, 0, 0);
        let rc = gradcheck_render_config();
        let query = render(&scene, &query_pose, &k, &rc).rgb;
        let base = render(&scene, &pose, &k, &rc);
        let (loss, weights) = photometric_l1(&base.rgb, &query, None);
        assert!(loss.value > 1e-4, "query offset should produce residual");
        let grad = render_backward(&scene, &pose, &k, &rc, &weights);
        assert!(grad.d_rotation.norm() > 0.0);
        assert!(grad.d_translation.norm() > 0.0);
    }

    /// The frozen-linearization branch of the covariance backward pass
    /// (active when a splat sits beyond the Jacobian clamp) is kept
    /// out of the random cases on purpose, so probe it directly with a
    /// splat placed far off-axis but with a long reach onto screen.
    #[test]
    fn clamped_jacobian_branch_matches_finite_differences() {
        let mut prim = GaussianPrimitive {
            // x/z = 1.0 with the clamp at ~0.75 for a 60 degree fov.
            position: Vector3::new(2.0, 0.1, 2.0),
            scale_log: Vector3::new(0.9f64.ln(), 0.9f64.ln(), 0.9f64.ln()),
            quaternion: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 2.0,
            sh_dc: [0.0; 3],
            sh_rest: Vec::new(),
        };
        prim.set_base_color([0.9, 0.3, 0.2]);
        let scene = GaussianScene::new(vec![prim], 0).unwrap();
        let k = Intrinsics::from_fov(48, 48, 60.0);
        let rc = gradcheck_render_config();
        let pose = CameraPose::identity();

        let query_pose = probe_pose(&probe_pose(&pose, 1, 0.02), 3, 0.03);
        let query = render(&scene, &query_pose, &k, &rc).rgb;
        let base = render(&scene, &pose, &k, &rc);
        let h = 1e-4;
        let probes: Vec<[Image; 2]> = (0..6)
            .map(|i| {
                [
                    render(&scene, &probe_pose(&pose, i, h), &k, &rc).rgb,
                    render(&scene, &probe_pose(&pose, i, -h), &k, &rc).rgb,
                ]
            })
            .collect();
        let mask = stable_sign_mask(&base.rgb, &probes, &query);
        assert!(mask.coverage() > 0.5, "splat tail should cover the screen");
        let (_, weights) = photometric_l1(&base.rgb, &query, Some(&mask));
        let grad = render_backward(&scene, &pose, &k, &rc, &weights);
        let analytic = [
            grad.d_rotation.x,
            grad.d_rotation.y,
            grad.d_rotation.z,
            grad.d_translation.x,
            grad.d_translation.y,
            grad.d_translation.z,
        ];
        for i in 0..6 {
            let lp = photometric_l1(&probes[i][0], &query, Some(&mask)).0.value;
            let lm = photometric_l1(&probes[i][1], &query, Some(&mask)).0.value;
            let numeric = (lp - lm) / (2.0 * h);
            let abs = (analytic[i] - numeric).abs();
            let rel = abs / analytic[i].abs().max(numeric.abs()).max(1e-300);
            assert!(
                rel < 1e-3 || abs < 1e-7,
                "component {}: analytic {:.6e} numeric {:.6e}",
                COMPONENT_NAMES[i],
                analytic[i],
                numeric
            );
        }
    }
}
