//! Differentiable rasterization of Gaussian-splat scenes.
//!
//! The forward path projects each primitive to a screen-space Gaussian
//! (EWA approximation: perspective Jacobian at the mean, then a fixed
//! dilation), bins splats into tiles, and alpha-composites front to
//! back. Outputs are radiance, transmittance-weighted expected depth,
//! and accumulated opacity per pixel.
//!
//! The backward path ([`render_backward`]) returns the exact gradient
//! of a weighted sum of output radiance with respect to the camera
//! pose, holding splat colors fixed. [`reference::render_reference`]
//! is an intentionally naive second implementation used to cross-check
//! the tiled one, and [`gradcheck`] validates the analytic gradient
//! against central differences.
//!
//! # Invariants
//! - rgb is within [0, 1] per channel: splat colors are clamped at
//!   projection time and compositing is a convex combination with the
//!   (validated) background color.
//! - alpha is within [0, 1): per-sample opacity is capped below 1.
//! - Outputs are bit-identical across thread counts; see the forward
//!   and backward modules for the ordering argument.

mod backward;
mod forward;
pub mod gradcheck;
pub(crate) mod projection;
pub mod reference;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::{Image, ScalarImage};
use crate::scene::GaussianScene;

pub use reference::render_reference;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("sample point ({u:.3}, {v:.3}) outside {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },
    #[error("accumulated alpha {alpha:.4} below {min_alpha:.4}, depth unreliable")]
    LowCoverage { alpha: f64, min_alpha: f64 },
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
}

/// Rasterizer settings. `Default` gives the production values; the
/// gradient checker substitutes smoother cutoffs (see [`gradcheck`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Square tile edge in pixels.
    pub tile_size: usize,
    /// Per-sample opacity below or at this value is skipped; also sets
    /// the screen-space influence radius used for tile binning.
    pub alpha_cutoff: f64,
    /// Front-to-back compositing stops once transmittance falls below
    /// this value.
    pub transmittance_floor: f64,
    /// Hard cap on compositing steps per pixel.
    pub max_gaussians_per_pixel: usize,
    /// Radiance assigned to the residual transmittance.
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            max_gaussians_per_pixel: 1024,
            background: [0.0, 0.0, 0.0],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.tile_size == 0 {
            return Err(RenderError::InvalidConfig("tile_size must be positive".into()));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < 1.0) {
            return Err(RenderError::InvalidConfig(format!(
                "alpha_cutoff {} outside (0, 1)",
                self.alpha_cutoff
            )));
        }
        if !(self.transmittance_floor > 0.0 && self.transmittance_floor < 1.0) {
            return Err(RenderError::InvalidConfig(format!(
                "transmittance_floor {} outside (0, 1)",
                self.transmittance_floor
            )));
        }
        if self.max_gaussians_per_pixel == 0 {
            return Err(RenderError::InvalidConfig(
                "max_gaussians_per_pixel must be positive".into(),
            ));
        }
        for (i, b) in self.background.iter().enumerate() {
            if !(0.0..=1.0).contains(b) || !b.is_finite() {
                return Err(RenderError::InvalidConfig(format!(
                    "background[{i}] = {b} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One rendered view: radiance, expected depth, accumulated opacity.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub rgb: Image,
    pub depth: ScalarImage,
    pub alpha: ScalarImage,
}

impl RenderedView {
    /// Bilinear depth lookup guarded by accumulated opacity: pixels the
    /// scene barely covers carry meaningless expected depth and are
    /// reported as [`RenderError::LowCoverage`].
    pub fn depth_at(&self, u: f64, v: f64, min_alpha: f64) -> Result<f64, RenderError> {
        let w = self.depth.width;
        let h = self.depth.height;
        if !u.is_finite()
            || !v.is_finite()
            || u < 0.0
            || v < 0.0
            || u > (w - 1) as f64
            || v > (h - 1) as f64
        {
            return Err(RenderError::OutOfBounds { u, v, width: w, height: h });
        }
        let alpha = self.alpha.sample_bilinear(u, v);
        if alpha < min_alpha {
            return Err(RenderError::LowCoverage { alpha, min_alpha });
        }
        Ok(self.depth.sample_bilinear(u, v))
    }
}

/// Gradient of a scalar image loss with respect to the camera pose.
///
/// `d_rotation` is taken with respect to a left-multiplied rotation
/// increment (R <- exp(hat(phi)) R) with the translation vector held
/// fixed; `d_translation` with respect to the translation vector with
/// the rotation held fixed. Callers reparameterizing translation (for
/// example as a camera-center step) own that extra chain rule.
#[derive(Debug, Clone, Copy)]
pub struct PoseGradient {
    pub d_rotation: Vector3<f64>,
    pub d_translation: Vector3<f64>,
}

impl PoseGradient {
    pub fn zero() -> Self {
        PoseGradient { d_rotation: Vector3::zeros(), d_translation: Vector3::zeros() }
    }
}

/// Render the scene from `pose`. Panics on invalid config or
/// intrinsics; both are validated cheaply up front because every
/// failure mode is a programming error, not a data condition.
pub fn render(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> RenderedView {
    cfg.validate().expect("invalid render config");
    k.validate().expect("invalid intrinsics");
    forward::render_forward(scene, pose, k, cfg)
}

/// Pose gradient of `sum_{pixel,channel} loss_weights * rgb` for the
/// image [`render`] would produce under the same arguments.
pub fn render_backward(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    loss_weights: &Image,
) -> PoseGradient {
    cfg.validate().expect("invalid render config");
    k.validate().expect("invalid intrinsics");
    backward::render_backward(scene, pose, k, cfg, loss_weights)
}

/// Render and sample expected depth at one sub-pixel location.
pub fn render_depth_at(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    u: f64,
    v: f64,
    min_alpha: f64,
) -> Result<f64, RenderError> {
    render(scene, pose, k, cfg).depth_at(u, v, min_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::scene::{GaussianPrimitive, SceneRecipe};
    use nalgebra::Vector3;

    fn single_splat_scene(z: f64, color: [f64; 3], opacity_logit: f64) -> GaussianScene {
        let mut prim = GaussianPrimitive {
            position: Vector3::new(0.0, 0.0, z),
            scale_log: Vector3::new(0.12f64.ln(), 0.12f64.ln(), 0.12f64.ln()),
            quaternion: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
            sh_dc: [0.0; 3],
            sh_rest: Vec::new(),
        };
        prim.set_base_color(color);
        GaussianScene::new(vec![prim], 0).unwrap()
    }

    fn test_intrinsics(w: usize, h: usize) -> Intrinsics {
        Intrinsics::from_fov(w, h, 60.0)
    }

    #[test]
    fn lone_splat_composites_over_background() {
        let scene = single_splat_scene(2.0, [0.9, 0.2, 0.1], 3.0);
        let k = test_intrinsics(48, 48);
        let cfg = RenderConfig { background: [0.0, 0.0, 1.0], ..RenderConfig::default() };
        let view = render(&scene, &CameraPose::identity(), &k, &cfg);
        let center = view.rgb.pixel(k.cx as usize, k.cy as usize);
        let a = view.alpha.at(k.cx as usize, k.cy as usize);
        assert!(a > 0.9, "center alpha {a}");
        assert!(center[0] > 0.8 && center[2] < 0.2, "center {center:?}");
        let corner = view.rgb.pixel(0, 0);
        assert!(corner[2] > 0.99, "corner should be background, got {corner:?}");
    }

    #[test]
    fn depth_matches_splat_distance() {
        let scene = single_splat_scene(2.5, [0.5, 0.5, 0.5], 4.0);
        let k = test_intrinsics(48, 48);
        let cfg = RenderConfig::default();
        let view = render(&scene, &CameraPose::identity(), &k, &cfg);
        let d = view.depth_at(k.cx, k.cy, 0.5).unwrap();
        assert!((d - 2.5).abs() < 1e-9, "depth {d}");
        match view.depth_at(1.0, 1.0, 0.5) {
            Err(RenderError::LowCoverage { .. }) => {}
            other => panic!("expected LowCoverage, got {other:?}"),
        }
        match view.depth_at(-1.0, 5.0, 0.5) {
            Err(RenderError::OutOfBounds { .. }) => {}
            other => panic!("expected OutOfBounds, got {other:?}"),
        }
    }

    #[test]
    fn outputs_stay_in_range_on_synthetic_scene() {
        let recipe = SceneRecipe { primitive_count: 800, seed: 11, ..SceneRecipe::default() };
        let (scene, trajectory) = crate::scene::synthesize_scene(&recipe).unwrap();
        let k = test_intrinsics(64, 48);
        let cfg = RenderConfig { background: [0.3, 0.3, 0.3], ..RenderConfig::default() };
        let view = render(&scene, &trajectory[4], &k, &cfg);
        for v in &view.rgb.data {
            assert!((0.0..=1.0).contains(v), "rgb {v}");
        }
        for y in 0..k.height {
            for x in 0..k.width {
                let a = view.alpha.at(x, y);
                assert!((0.0..1.0).contains(&a), "alpha {a}");
            }
        }
    }

    #[test]
    fn tiled_matches_reference_on_synthetic_scene() {
        let recipe = SceneRecipe { primitive_count: 400, seed: 3, ..SceneRecipe::default() };
        let (scene, trajectory) = crate::scene::synthesize_scene(&recipe).unwrap();
        let k = test_intrinsics(40, 32);
        let cfg = RenderConfig { background: [0.2, 0.1, 0.4], ..RenderConfig::default() };
        let tiled = render(&scene, &trajectory[0], &k, &cfg);
        let naive = render_reference(&scene, &trajectory[0], &k, &cfg);
        let mut max_err = 0.0f64;
        for (a, b) in tiled.rgb.data.iter().zip(naive.rgb.data.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err <= 1e-6, "tiled vs reference max err {max_err}");
    }

    #[test]
    fn render_is_bit_identical_across_worker_counts() {
        let recipe = SceneRecipe { primitive_count: 500, seed: 9, ..SceneRecipe::default() };
        let (scene, trajectory) = crate::scene::synthesize_scene(&recipe).unwrap();
        let k = test_intrinsics(48, 48);
        let cfg = RenderConfig::default();
        let images: Vec<Vec<f64>> = [1usize, 4]
            .iter()
            .map(|&n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| render(&scene, &trajectory[2], &k, &cfg).rgb.data)
            })
            .collect();
        assert!(
            images[0].iter().zip(images[1].iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "worker count changed output bits"
        );
    }

    #[test]
    fn off_axis_pose_keeps_outputs_finite() {
        let scene = single_splat_scene(2.0, [0.4, 0.6, 0.8], 2.0);
        let k = test_intrinsics(32, 32);
        let rot = Rotation::from_wxyz(0.9, 0.3, -0.2, 0.1).unwrap();
        let pose = CameraPose::new(rot, Vector3::new(0.4, -0.3, 1.5));
        let view = render(&scene, &pose, &k, &RenderConfig::default());
        assert!(view.rgb.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = RenderConfig { alpha_cutoff: 0.0, ..RenderConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RenderConfig { background: [0.0, 1.5, 0.0], ..RenderConfig::default() };
        assert!(bad.validate().is_err());
        assert!(RenderConfig::default().validate().is_ok());
    }
}
