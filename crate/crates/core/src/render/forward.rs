//! Tiled front-to-back alpha compositing.
//!
//! Tiles are composited in parallel into private buffers and blitted
//! into the output serially, so the result is bit-identical for any
//! worker count: every pixel is owned by exactly one tile and the
//! per-pixel accumulation order is fixed by the per-tile depth sort.

use rayon::prelude::*;

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::{Image, ScalarImage};
use crate::scene::GaussianScene;

use super::projection::{project_and_bin, Projected, ALPHA_MAX};
use super::{RenderConfig, RenderedView};

/// Transmittance-weighted depth accumulators are normalized by the
/// accumulated alpha, floored to keep empty pixels finite.
pub(crate) const DEPTH_ALPHA_FLOOR: f64 = 1e-6;

struct TileOut {
    px0: usize,
    py0: usize,
    w: usize,
    h: usize,
    rgb: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
}

/// Composite one pixel. Returns (rgb, depth_numerator, accumulated_alpha).
#[inline]
fn composite_pixel(
    px: f64,
    py: f64,
    order: &[u32],
    splats: &[Projected],
    cfg: &RenderConfig,
) -> ([f64; 3], f64, f64) {
    let mut transmittance = 1.0;
    let mut rgb = [0.0f64; 3];
    let mut depth_num = 0.0;
    let mut alpha_acc = 0.0;
    let mut contributions = 0usize;
    for &slot in order {
        let g = &splats[slot as usize];
        let dx = px - g.mean2d.x;
        let dy = py - g.mean2d.y;
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
        rgb[0] += g.color[0] * weight;
        rgb[1] += g.color[1] * weight;
        rgb[2] += g.color[2] * weight;
        depth_num += g.z_cam * weight;
        alpha_acc += weight;
        transmittance *= 1.0 - alpha;
        contributions += 1;
        if transmittance < cfg.transmittance_floor
            || contributions >= cfg.max_gaussians_per_pixel
        {
            break;
        }
    }
    rgb[0] += cfg.background[0] * transmittance;
    rgb[1] += cfg.background[1] * transmittance;
    rgb[2] += cfg.background[2] * transmittance;
    (rgb, depth_num, alpha_acc)
}

pub(crate) fn render_forward(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> RenderedView {
    let (splats, tiles, tiles_x, tiles_y) = project_and_bin(scene, pose, k, cfg);
    let width = k.width;
    let height = k.height;
    let ts = cfg.tile_size;

    let tile_outputs: Vec<TileOut> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile_idx| {
            let tx = tile_idx % tiles_x;
            let ty = tile_idx / tiles_x;
            let px0 = tx * ts;
            let py0 = ty * ts;
            let w = ts.min(width - px0);
            let h = ts.min(height - py0);
            let order = &tiles[tile_idx];
            let mut rgb = vec![0.0; w * h * 3];
            let mut depth = vec![0.0; w * h];
            let mut alpha = vec![0.0; w * h];
            for row in 0..h {
                for col in 0..w {
                    let (c, d_num, a) = composite_pixel(
                        (px0 + col) as f64,
                        (py0 + row) as f64,
                        order,
                        &splats,
                        cfg,
                    );
                    let at = row * w + col;
                    rgb[at * 3] = c[0];
                    rgb[at * 3 + 1] = c[1];
                    rgb[at * 3 + 2] = c[2];
                    depth[at] = d_num / a.max(DEPTH_ALPHA_FLOOR);
                    alpha[at] = a;
                }
            }
            TileOut { px0, py0, w, h, rgb, depth, alpha }
        })
        .collect();

    let mut out_rgb = Image::zeros(k.width, k.height);
    let mut out_depth = ScalarImage::zeros(k.width, k.height);
    let mut out_alpha = ScalarImage::zeros(k.width, k.height);
    for tile in &tile_outputs {
        for row in 0..tile.h {
            let y = tile.py0 + row;
            for col in 0..tile.w {
                let x = tile.px0 + col;
                let at = row * tile.w + col;
                out_rgb.set_pixel(
                    x,
                    y,
                    [tile.rgb[at * 3], tile.rgb[at * 3 + 1], tile.rgb[at * 3 + 2]],
                );
                out_depth.set(x, y, tile.depth[at]);
                out_alpha.set(x, y, tile.alpha[at]);
            }
        }
    }

    RenderedView { rgb: out_rgb, depth: out_depth, alpha: out_alpha }
}
