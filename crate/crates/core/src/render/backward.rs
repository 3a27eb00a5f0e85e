//! Analytic pose gradient of the composited image.
//!
//! Given per-pixel, per-channel loss weights dL/dI, propagates through
//! alpha compositing, the Gaussian falloff, the perspective Jacobian,
//! and the camera-frame transform down to a rotation increment and the
//! translation vector. Colors are treated as constant with respect to
//! pose, which is exact for band-0 radiance; the depth and alpha
//! channels carry no gradient because losses consume only rgb.
//!
//! Determinism: per-tile accumulators are reduced serially in tile
//! order, and per-splat contributions are summed serially in primitive
//! order, so results do not depend on the worker count.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::Image;
use crate::scene::GaussianScene;

use super::projection::{perspective_jacobian, project_and_bin, Projected, ALPHA_MAX};
use super::{PoseGradient, RenderConfig};

/// Per-splat screen-space accumulator:
/// `[dL/d mean_x, dL/d mean_y, dL/dS00, dL/dS01, dL/dS11]`
/// where S is the dilated 2D covariance and S01 collects the shared
/// off-diagonal derivative (applied to both symmetric slots later).
type ScreenGrad = [f64; 5];

struct Contribution {
    order_pos: u32,
    alpha: f64,
    transmittance: f64,
    alpha_clamped: bool,
}

pub(crate) fn render_backward(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    loss_weights: &Image,
) -> PoseGradient {
    assert!(
        loss_weights.width == k.width && loss_weights.height == k.height,
        "loss weight image {}x{} does not match intrinsics {}x{}",
        loss_weights.width,
        loss_weights.height,
        k.width,
        k.height
    );
    let (splats, tiles, tiles_x, tiles_y) = project_and_bin(scene, pose, k, cfg);
    let width = k.width;
    let height = k.height;
    let ts = cfg.tile_size;

    let tile_grads: Vec<Vec<ScreenGrad>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile_idx| {
            let order = &tiles[tile_idx];
            let mut acc: Vec<ScreenGrad> = vec![[0.0; 5]; order.len()];
            if order.is_empty() {
                return acc;
            }
            let tx = tile_idx % tiles_x;
            let ty = tile_idx / tiles_x;
            let px0 = tx * ts;
            let py0 = ty * ts;
            let w = ts.min(width - px0);
            let h = ts.min(height - py0);
            let mut contribs: Vec<Contribution> = Vec::with_capacity(order.len());
            for row in 0..h {
                for col in 0..w {
                    let x = px0 + col;
                    let y = py0 + row;
                    let wpix = loss_weights.pixel(x, y);
                    backward_pixel(
                        x as f64, y as f64, &wpix, order, &splats, cfg, &mut contribs, &mut acc,
                    );
                }
            }
            acc
        })
        .collect();

    let mut global: Vec<ScreenGrad> = vec![[0.0; 5]; splats.len()];
    for (tile_idx, acc) in tile_grads.iter().enumerate() {
        let order = &tiles[tile_idx];
        for (j, grad) in acc.iter().enumerate() {
            let slot = order[j] as usize;
            for c in 0..5 {
                global[slot][c] += grad[c];
            }
        }
    }

    let rot_mat = pose.rotation.matrix();
    let trans = pose.translation;
    let per_splat: Vec<(Vector3<f64>, Vector3<f64>)> = splats
        .par_iter()
        .zip(global.par_iter())
        .map(|(splat, grad)| chain_to_pose(splat, grad, k, &trans, &rot_mat))
        .collect();

    let mut d_rotation = Vector3::zeros();
    let mut d_translation = Vector3::zeros();
    for (dr, dt) in &per_splat {
        d_rotation += dr;
        d_translation += dt;
    }
    PoseGradient { d_rotation, d_translation }
}

/// Replays compositing at one pixel, then walks the contributions in
/// reverse to form dL/dalpha via suffix sums and scatters screen-space
/// gradients into the tile accumulator.
#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    px: f64,
    py: f64,
    wpix: &[f64; 3],
    order: &[u32],
    splats: &[Projected],
    cfg: &RenderConfig,
    contribs: &mut Vec<Contribution>,
    acc: &mut [ScreenGrad],
) {
    if wpix[0] == 0.0 && wpix[1] == 0.0 && wpix[2] == 0.0 {
        return;
    }
    contribs.clear();
    let mut transmittance = 1.0;
    for (pos, &slot) in order.iter().enumerate() {
        let g = &splats[slot as usize];
        let dx = px - g.mean2d.x;
        let dy = py - g.mean2d.y;
        let power = -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy)
            - g.conic[1] * dx * dy;
        if power > 0.0 {
            continue;
        }
        let raw = g.opacity * power.exp();
        let alpha = raw.min(ALPHA_MAX);
        if alpha <= cfg.alpha_cutoff {
            continue;
        }
        contribs.push(Contribution {
            order_pos: pos as u32,
            alpha,
            transmittance,
            alpha_clamped: raw > ALPHA_MAX,
        });
        transmittance *= 1.0 - alpha;
        if transmittance < cfg.transmittance_floor
            || contribs.len() >= cfg.max_gaussians_per_pixel
        {
            break;
        }
    }
    let t_final = transmittance;

    // Suffix radiance behind each contribution, built back to front.
    let mut suffix = [0.0f64; 3];
    for item in contribs.iter().rev() {
        let g = &splats[order[item.order_pos as usize] as usize];
        let mut d_alpha = 0.0;
        for c in 0..3 {
            let d_channel = g.color[c] * item.transmittance
                - (suffix[c] + cfg.background[c] * t_final) / (1.0 - item.alpha);
            d_alpha += wpix[c] * d_channel;
        }
        let weight = item.alpha * item.transmittance;
        for c in 0..3 {
            suffix[c] += g.color[c] * weight;
        }
        if item.alpha_clamped {
            continue;
        }
        // d alpha / d power = alpha while the clamp is inactive.
        let d_power = d_alpha * item.alpha;
        let dx = px - g.mean2d.x;
        let dy = py - g.mean2d.y;
        let vx = g.conic[0] * dx + g.conic[1] * dy;
        let vy = g.conic[1] * dx + g.conic[2] * dy;
        let slot_acc = &mut acc[item.order_pos as usize];
        slot_acc[0] += d_power * vx;
        slot_acc[1] += d_power * vy;
        slot_acc[2] += 0.5 * d_power * vx * vx;
        slot_acc[3] += 0.5 * d_power * vx * vy;
        slot_acc[4] += 0.5 * d_power * vy * vy;
    }
}

/// Chains one splat's screen-space gradient to the pose parameters.
fn chain_to_pose(
    splat: &Projected,
    grad: &ScreenGrad,
    k: &Intrinsics,
    trans: &Vector3<f64>,
    _rot_mat: &Matrix3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    if grad.iter().all(|&g| g == 0.0) {
        return (Vector3::zeros(), Vector3::zeros());
    }
    let x_cam = splat.x_cam;
    let z = x_cam.z;
    let inv_z = 1.0 / z;

    let d_mean = Vector2::new(grad[0], grad[1]);
    let gamma = Matrix2::new(grad[2], grad[3], grad[3], grad[4]);

    // Mean path: unclamped pinhole projection.
    let mut d_xcam = Vector3::new(
        d_mean.x * k.fx * inv_z,
        d_mean.y * k.fy * inv_z,
        -(d_mean.x * k.fx * x_cam.x + d_mean.y * k.fy * x_cam.y) * inv_z * inv_z,
    );

    // Covariance path: S = J M J^T (+ const dilation).
    let m = Matrix3::new(
        splat.cov_cam[0],
        splat.cov_cam[1],
        splat.cov_cam[2],
        splat.cov_cam[1],
        splat.cov_cam[3],
        splat.cov_cam[4],
        splat.cov_cam[2],
        splat.cov_cam[4],
        splat.cov_cam[5],
    );
    let (jac, clamped_x, clamped_y) = perspective_jacobian(&x_cam, k);
    debug_assert_eq!(clamped_x, splat.clamped_x);
    debug_assert_eq!(clamped_y, splat.clamped_y);
    let d_m = jac.transpose() * gamma * jac;
    let d_jac: Matrix2x3<f64> = 2.0 * gamma * jac * m;

    let inv_z2 = inv_z * inv_z;
    d_xcam.z += d_jac[(0, 0)] * (-k.fx * inv_z2) + d_jac[(1, 1)] * (-k.fy * inv_z2);
    if splat.clamped_x {
        // J02 = -fx * tx_clamped / z with the linearization point frozen.
        let j02 = jac[(0, 2)];
        d_xcam.z += d_jac[(0, 2)] * (-j02 * inv_z);
    } else {
        d_xcam.x += d_jac[(0, 2)] * (-k.fx * inv_z2);
        d_xcam.z += d_jac[(0, 2)] * (2.0 * k.fx * x_cam.x * inv_z2 * inv_z);
    }
    if splat.clamped_y {
        let j12 = jac[(1, 2)];
        d_xcam.z += d_jac[(1, 2)] * (-j12 * inv_z);
    } else {
        d_xcam.y += d_jac[(1, 2)] * (-k.fy * inv_z2);
        d_xcam.z += d_jac[(1, 2)] * (2.0 * k.fy * x_cam.y * inv_z2 * inv_z);
    }

    // Rotation increment (left-multiplied, translation held fixed):
    // the mean moves as phi x (R p) and the camera-frame covariance as
    // hat(phi) M - M hat(phi).
    let rp = x_cam - trans;
    let mut d_rot = rp.cross(&d_xcam);
    for axis in 0..3 {
        let e = skew_basis(axis);
        let delta = e * m - m * e;
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += d_m[(r, c)] * delta[(r, c)];
            }
        }
        d_rot[axis] += s;
    }

    (d_rot, d_xcam)
}

fn skew_basis(axis: usize) -> Matrix3<f64> {
    match axis {
        0 => Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
        1 => Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0),
        _ => Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    }
}
