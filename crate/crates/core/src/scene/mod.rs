//! Gaussian splat scenes: primitive soup, synthetic scene generation, and
//! reconstruction-artifact injection for benchmark scenes.

mod ply;
mod synth;

pub use ply::{load_ply, save_ply};
pub use synth::{synthesize_scene, TRAJECTORY_LEN};

pub(crate) use synth::{look_at, random_rotation};

use crate::geometry::{pixel_ray_direction, CameraPose, Intrinsics, Rotation};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Zeroth-order spherical harmonic basis constant; `color = 0.5 + C0 * f_dc`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("scene contains no primitives")]
    EmptyScene,
    #[error("invalid scene recipe: {0}")]
    InvalidRecipe(String),
    #[error("primitive {index} is invalid: {reason}")]
    InvalidPrimitive { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ply format error: {0}")]
    Format(String),
    #[error("ply data error at vertex {index}: {reason}")]
    Data { index: usize, reason: String },
}

/// One anisotropic Gaussian. Fields are stored raw (pre-activation), exactly
/// as a splat PLY stores them: scales are log-space, opacity is a logit, and
/// color is spherical-harmonic coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    /// Per-axis log standard deviation; activation is `exp`.
    pub scale_log: Vector3<f64>,
    /// Quaternion in (w, x, y, z) order, kept raw so PLY round trips are
    /// bit-exact; activation is normalization, see [`Self::rotation`].
    pub quaternion: [f64; 4],
    /// Activation is the logistic sigmoid.
    pub opacity_logit: f64,
    /// Degree-0 SH coefficients (one per channel).
    pub sh_dc: [f64; 3],
    /// Higher-order SH coefficients in splat PLY order: all coefficients for
    /// R, then G, then B. Empty at degree 0.
    pub sh_rest: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        1.0 / (1.0 + (-self.opacity_logit).exp())
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.scale_log.map(f64::exp)
    }

    /// Normalized orientation. Construction validates the quaternion, so
    /// this cannot fail on a scene that passed [`GaussianScene::new`].
    pub fn rotation(&self) -> Rotation {
        let [w, x, y, z] = self.quaternion;
        Rotation::from_wxyz(w, x, y, z).expect("validated at scene construction")
    }

    /// View-independent base color from the DC term, clamped to [0, 1].
    pub fn base_color(&self) -> [f64; 3] {
        [
            (0.5 + SH_C0 * self.sh_dc[0]).clamp(0.0, 1.0),
            (0.5 + SH_C0 * self.sh_dc[1]).clamp(0.0, 1.0),
            (0.5 + SH_C0 * self.sh_dc[2]).clamp(0.0, 1.0),
        ]
    }

    /// Inverse of [`Self::base_color`] for synthetic scenes.
    pub fn set_base_color(&mut self, rgb: [f64; 3]) {
        for c in 0..3 {
            self.sh_dc[c] = (rgb[c] - 0.5) / SH_C0;
        }
    }

    fn validate(&self, index: usize, sh_degree: usize) -> Result<(), SceneError> {
        let fail = |reason: &str| SceneError::InvalidPrimitive {
            index,
            reason: reason.to_string(),
        };
        let finite = self.position.iter().all(|x| x.is_finite())
            && self.scale_log.iter().all(|x| x.is_finite())
            && self.quaternion.iter().all(|x| x.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh_dc.iter().all(|x| x.is_finite())
            && self.sh_rest.iter().all(|x| x.is_finite());
        if !finite {
            return Err(fail("non-finite field"));
        }
        let qn = self.quaternion.iter().map(|x| x * x).sum::<f64>().sqrt();
        if qn < 1e-12 {
            return Err(fail("degenerate rotation quaternion"));
        }
        let expected_rest = 3 * ((sh_degree + 1) * (sh_degree + 1) - 1);
        if self.sh_rest.len() != expected_rest {
            return Err(fail("sh_rest length does not match scene sh_degree"));
        }
        Ok(())
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Option<Aabb> {
        let mut it = points;
        let first = *it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Slab test: does the ray `origin + t*dir` (t > 0) hit the box?
    pub fn intersects_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        t0 <= t1
    }
}

/// An immutable bag of Gaussian primitives plus cached bounds. Construction
/// validates every primitive; after that the scene is safe to share across
/// render workers.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    primitives: Vec<GaussianPrimitive>,
    sh_degree: usize,
    bounds: Aabb,
}

impl GaussianScene {
    pub fn new(
        primitives: Vec<GaussianPrimitive>,
        sh_degree: usize,
    ) -> Result<GaussianScene, SceneError> {
        if primitives.is_empty() {
            return Err(SceneError::EmptyScene);
        }
        if sh_degree > 3 {
            return Err(SceneError::InvalidRecipe(format!(
                "sh_degree {sh_degree} unsupported (max 3)"
            )));
        }
        for (i, p) in primitives.iter().enumerate() {
            p.validate(i, sh_degree)?;
        }
        let bounds = Aabb::from_points(primitives.iter().map(|p| &p.position))
            .expect("non-empty primitive list");
        Ok(GaussianScene {
            primitives,
            sh_degree,
            bounds,
        })
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Diagonal of the position bounds; the scale unit for thresholds,
    /// floater sizes, and translation-gradient balancing.
    pub fn diameter(&self) -> f64 {
        self.bounds.diagonal()
    }
}

/// Synthetic scene layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneLayout {
    /// Camera ring inside a box room with textured walls, floor, ceiling.
    TexturedBoxRoom,
    /// Strafing run along a large textured wall.
    FacadeGrid,
    /// Orbit around a handful of free-floating blob clusters.
    RandomBlobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub layout: SceneLayout,
    pub primitive_count: usize,
    /// Spatial frequency of the albedo noise texture, in cycles per scene unit.
    pub texture_frequency: f64,
    pub seed: u64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        SceneRecipe {
            layout: SceneLayout::TexturedBoxRoom,
            primitive_count: 5000,
            texture_frequency: 6.0,
            seed: 1,
        }
    }
}

/// Reconstruction-artifact injection settings. Scale and distance knobs are
/// fractions of the scene diameter so one config works across layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub floater_count: usize,
    /// Floater standard deviation, as a fraction of scene diameter.
    pub floater_scale_range: (f64, f64),
    /// Post-sigmoid opacity range.
    pub floater_opacity_range: (f64, f64),
    /// Fraction of primitives around a random center whose scales get
    /// inflated 3-6x (a localized blur patch).
    pub blur_region_fraction: f64,
    pub seed: u64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        ArtifactSpec {
            floater_count: 0,
            floater_scale_range: (0.015, 0.035),
            floater_opacity_range: (0.5, 0.85),
            blur_region_fraction: 0.0,
            seed: 0,
        }
    }
}

impl ArtifactSpec {
    fn validate(&self) -> Result<(), SceneError> {
        let ok_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && r.0 >= 0.0;
        if !ok_range(self.floater_scale_range) {
            return Err(SceneError::InvalidRecipe(
                "floater_scale_range must be a nonnegative ordered pair".into(),
            ));
        }
        if !ok_range(self.floater_opacity_range)
            || self.floater_opacity_range.1 > 1.0
            || (self.floater_count > 0 && self.floater_opacity_range.0 <= 0.0)
        {
            return Err(SceneError::InvalidRecipe(
                "floater_opacity_range must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=0.9).contains(&self.blur_region_fraction) {
            return Err(SceneError::InvalidRecipe(
                "blur_region_fraction must lie in [0, 0.9]".into(),
            ));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Adds synthetic reconstruction artifacts to a copy of `scene`: translucent
/// floater blobs hung in the camera frustums between the trajectory and the
/// surfaces, and optionally a contiguous blur region of scale-inflated
/// primitives. The input scene is untouched; query imagery should be rendered
/// from the clean scene so artifacts exist only in the "reconstruction".
pub fn inject_artifacts(
    scene: &GaussianScene,
    spec: &ArtifactSpec,
    trajectory: &[CameraPose],
    k: &Intrinsics,
) -> Result<GaussianScene, SceneError> {
    spec.validate()?;
    if spec.floater_count > 0 && trajectory.is_empty() {
        return Err(SceneError::InvalidRecipe(
            "floater placement requires a non-empty trajectory".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA17F_Ac75_0000_0001);
    let mut prims = scene.primitives.clone();
    let original_len = prims.len();
    let diameter = scene.diameter().max(1e-9);

    for _ in 0..spec.floater_count {
        let pose = &trajectory[rng.gen_range(0..trajectory.len())];
        // Median camera-space depth of (a sample of) the primitives in front
        // of this pose approximates the surface distance.
        let mut depths: Vec<f64> = Vec::with_capacity(256);
        let stride = (original_len / 256).max(1);
        for p in prims[..original_len].iter().step_by(stride) {
            let z = pose.transform_point(&p.position).z;
            if z > 0.0 {
                depths.push(z);
            }
        }
        if depths.is_empty() {
            continue;
        }
        depths.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let median = depths[depths.len() / 2];

        // A pixel in the central 60% of the view, pushed 20-60% of the way
        // toward the surface.
        let px = Vector2::new(
            rng.gen_range(0.2 * k.width as f64..0.8 * k.width as f64),
            rng.gen_range(0.2 * k.height as f64..0.8 * k.height as f64),
        );
        let dir = pixel_ray_direction(&px, &pose.rotation, k);
        let dist = median * rng.gen_range(0.2..0.6);
        let position = pose.camera_center() + dir * dist;

        let sigma = diameter * rng.gen_range(spec.floater_scale_range.0..=spec.floater_scale_range.1);
        let scale_log = Vector3::new(
            (sigma * rng.gen_range(0.8..1.25)).ln(),
            (sigma * rng.gen_range(0.8..1.25)).ln(),
            (sigma * rng.gen_range(0.8..1.25)).ln(),
        );
        let opacity =
            rng.gen_range(spec.floater_opacity_range.0..=spec.floater_opacity_range.1);
        // Muddy gray-brown blob: desaturated, unlike the scene texture.
        let g = rng.gen_range(0.35..0.65);
        let mut prim = GaussianPrimitive {
            position,
            scale_log,
            quaternion: synth::random_rotation(&mut rng).wxyz(),
            opacity_logit: logit(opacity.clamp(1e-6, 1.0 - 1e-6)),
            sh_dc: [0.0; 3],
            sh_rest: vec![0.0; 3 * ((scene.sh_degree + 1) * (scene.sh_degree + 1) - 1)],
        };
        prim.set_base_color([
            g * rng.gen_range(0.9..1.1),
            g * rng.gen_range(0.9..1.1),
            g * rng.gen_range(0.9..1.1),
        ]);
        prims.push(prim);
    }

    if spec.blur_region_fraction > 0.0 {
        let center = prims[rng.gen_range(0..original_len)].position;
        let count = ((original_len as f64) * spec.blur_region_fraction).round() as usize;
        let mut by_dist: Vec<(f64, usize)> = prims[..original_len]
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.position - center).norm_squared(), i))
            .collect();
        by_dist.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, idx) in by_dist.iter().take(count) {
            let factor: f64 = rng.gen_range(3.0..6.0);
            prims[idx].scale_log += Vector3::repeat(factor.ln());
        }
    }

    GaussianScene::new(prims, scene.sh_degree)
}
