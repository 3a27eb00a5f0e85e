//! Deterministic synthetic scenes with known trajectories.
//!
//! Each layout produces a surfel-style splat soup with a high-frequency
//! value-noise albedo (so photometric losses have wide, informative basins)
//! and a smooth camera path with large inter-frame overlap.

use super::{GaussianPrimitive, GaussianScene, SceneError, SceneLayout, SceneRecipe};
use crate::geometry::{CameraPose, Rotation};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of trajectory poses every layout emits. With the 1:2
/// reference/query split this yields 30 reference and 60 query views.
pub const TRAJECTORY_LEN: usize = 90;

pub(crate) fn random_rotation(rng: &mut impl Rng) -> Rotation {
    let axis = loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 {
            break v / n;
        }
    };
    crate::geometry::so3_exp(&(axis * rng.gen_range(0.0..std::f64::consts::PI)))
}

/// Hash of a lattice point to [0, 1). SplitMix64-style mixing keeps the
/// field stable across platforms.
fn lattice_hash(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [ix as u64, iy as u64, iz as u64] {
        h ^= v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in [0, 1] at `p` (lattice units).
fn value_noise(seed: u64, p: &Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let frac = p - base;
    let s = frac.map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 0 { 1.0 - s.x } else { s.x })
                    * (if dy == 0 { 1.0 - s.y } else { s.y })
                    * (if dz == 0 { 1.0 - s.z } else { s.z });
                acc += w * lattice_hash(seed, ix + dx, iy + dy, iz + dz);
            }
        }
    }
    acc
}

/// Two-octave albedo: a low-frequency octave keeps neighboring views
/// correlated for retrieval, the high-frequency octave sharpens the
/// photometric basin.
fn albedo(seed: u64, freq: f64, p: &Vector3<f64>) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let sc = seed.wrapping_add(c as u64 * 0x9E37);
        let hi = value_noise(sc, &(p * freq));
        let lo = value_noise(sc ^ 0x5bd1e995, &(p * freq * 0.19 + Vector3::repeat(17.3)));
        let n = 0.55 * hi + 0.45 * lo;
        *out = 0.12 + 0.76 * n;
    }
    rgb
}

/// World-to-camera pose at `center` looking toward `target`, world +z up.
pub(crate) fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> CameraPose {
    let forward = (target - center).normalize();
    let up_hint = if forward.z.abs() > 0.99 {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let right = forward.cross(&up_hint).normalize();
    let down = forward.cross(&right);
    let m = nalgebra::Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]);
    CameraPose::from_rotation_center(Rotation::from_matrix(&m), &center)
}

fn surfel(
    position: Vector3<f64>,
    normal: Vector3<f64>,
    tangent_sigma: f64,
    normal_sigma: f64,
    opacity_logit: f64,
    rgb: [f64; 3],
    twist: f64,
) -> GaussianPrimitive {
    // Rotation carrying local +z onto the face normal, with an in-plane twist
    // so anisotropy directions vary.
    let z = Vector3::new(0.0, 0.0, 1.0);
    let align = {
        let d = z.dot(&normal).clamp(-1.0, 1.0);
        if d > 0.999_999 {
            Rotation::identity()
        } else if d < -0.999_999 {
            crate::geometry::so3_exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0))
        } else {
            let axis = z.cross(&normal).normalize();
            crate::geometry::so3_exp(&(axis * d.acos()))
        }
    };
    let spin = crate::geometry::so3_exp(&(normal * twist));
    let mut prim = GaussianPrimitive {
        position,
        scale_log: Vector3::new(tangent_sigma.ln(), tangent_sigma.ln(), normal_sigma.ln()),
        quaternion: spin.compose(&align).wxyz(),
        opacity_logit,
        sh_dc: [0.0; 3],
        sh_rest: vec![],
    };
    prim.set_base_color(rgb);
    prim
}

struct Face {
    origin: Vector3<f64>,
    edge_u: Vector3<f64>,
    edge_v: Vector3<f64>,
    normal: Vector3<f64>,
    area: f64,
}

impl Face {
    fn new(origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>) -> Face {
        let normal = edge_u.cross(&edge_v).normalize();
        let area = edge_u.cross(&edge_v).norm();
        Face {
            origin,
            edge_u,
            edge_v,
            normal,
            area,
        }
    }
}

fn scatter_faces(
    faces: &[Face],
    count: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
    freq: f64,
    prims: &mut Vec<GaussianPrimitive>,
) {
    let total_area: f64 = faces.iter().map(|f| f.area).sum();
    // Tangential footprint sized to overlap neighbors at this density.
    let spacing = (total_area / count as f64).sqrt();
    // Cumulative rounding keeps the total at exactly `count`.
    let mut cum_area = 0.0;
    let mut assigned = 0usize;
    for face in faces {
        cum_area += face.area;
        let upto = ((cum_area / total_area) * count as f64).round() as usize;
        let n = upto.saturating_sub(assigned);
        assigned = upto;
        for _ in 0..n {
            let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
            let pos = face.origin + face.edge_u * a + face.edge_v * b;
            let tangent = spacing * rng.gen_range(0.65..0.95);
            prims.push(surfel(
                pos,
                face.normal,
                tangent,
                spacing * 0.06,
                rng.gen_range(1.8..3.0),
                albedo(seed, freq, &pos),
                rng.gen_range(0.0..std::f64::consts::PI),
            ));
        }
    }
}

fn box_room(recipe: &SceneRecipe) -> (Vec<GaussianPrimitive>, Vec<CameraPose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let (hx, hy, zt) = (2.0, 2.0, 2.5);
    let faces = [
        // floor, ceiling
        Face::new(
            Vector3::new(-hx, -hy, 0.0),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 2.0 * hy, 0.0),
        ),
        Face::new(
            Vector3::new(-hx, -hy, zt),
            Vector3::new(0.0, 2.0 * hy, 0.0),
            Vector3::new(2.0 * hx, 0.0, 0.0),
        ),
        // walls x = +-hx, y = +-hy (normals point inward)
        Face::new(
            Vector3::new(hx, -hy, 0.0),
            Vector3::new(0.0, 2.0 * hy, 0.0),
            Vector3::new(0.0, 0.0, zt),
        ),
        Face::new(
            Vector3::new(-hx, -hy, 0.0),
            Vector3::new(0.0, 0.0, zt),
            Vector3::new(0.0, 2.0 * hy, 0.0),
        ),
        Face::new(
            Vector3::new(-hx, hy, 0.0),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 0.0, zt),
        ),
        Face::new(
            Vector3::new(-hx, -hy, 0.0),
            Vector3::new(0.0, 0.0, zt),
            Vector3::new(2.0 * hx, 0.0, 0.0),
        ),
    ];
    let mut prims = Vec::with_capacity(recipe.primitive_count + 8);
    scatter_faces(
        &faces,
        recipe.primitive_count,
        &mut rng,
        recipe.seed,
        recipe.texture_frequency,
        &mut prims,
    );

    // Ring near the room center, looking outward at the walls; 4 deg steps
    // keep adjacent frames heavily overlapped at a 60 deg field of view.
    let mut traj = Vec::with_capacity(TRAJECTORY_LEN);
    for i in 0..TRAJECTORY_LEN {
        let th = 2.0 * std::f64::consts::PI * i as f64 / TRAJECTORY_LEN as f64;
        let center = Vector3::new(0.75 * th.cos(), 0.75 * th.sin(), 1.25);
        let target = center
            + Vector3::new(th.cos(), th.sin(), 0.12 * (3.0 * th).sin());
        traj.push(look_at(center, target));
    }
    (prims, traj)
}

fn facade(recipe: &SceneRecipe) -> (Vec<GaussianPrimitive>, Vec<CameraPose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let (hx, zt) = (6.0, 4.0);
    let mut prims = Vec::with_capacity(recipe.primitive_count + 8);
    let area = 2.0 * hx * zt;
    let spacing = (area / recipe.primitive_count as f64).sqrt();
    for _ in 0..recipe.primitive_count {
        // Wall plane y ~ 0 with a little relief for parallax.
        let pos = Vector3::new(
            rng.gen_range(-hx..hx),
            rng.gen_range(-0.12..0.12),
            rng.gen_range(0.0..zt),
        );
        let tangent = spacing * rng.gen_range(0.65..0.95);
        prims.push(surfel(
            pos,
            Vector3::new(0.0, 1.0, 0.0),
            tangent,
            spacing * 0.06,
            rng.gen_range(1.8..3.0),
            albedo(recipe.seed, recipe.texture_frequency, &pos),
            rng.gen_range(0.0..std::f64::consts::PI),
        ));
    }

    let mut traj = Vec::with_capacity(TRAJECTORY_LEN);
    for i in 0..TRAJECTORY_LEN {
        let s = i as f64 / (TRAJECTORY_LEN - 1) as f64;
        let x = -4.5 + 9.0 * s;
        let center = Vector3::new(x, 2.6, 2.0 + 0.25 * (5.0 * s * std::f64::consts::PI).sin());
        // Yaw wobble so reference rotations are not all identical.
        let yaw = 0.10 * (7.0 * s * std::f64::consts::PI).sin();
        let target = center + Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
        traj.push(look_at(center, target));
    }
    (prims, traj)
}

fn blobs(recipe: &SceneRecipe) -> (Vec<GaussianPrimitive>, Vec<CameraPose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let n_clusters = 6;
    let centers: Vec<Vector3<f64>> = (0..n_clusters)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-0.8..0.8),
            )
        })
        .collect();
    let mut prims = Vec::with_capacity(recipe.primitive_count);
    for i in 0..recipe.primitive_count {
        let c = centers[i % n_clusters];
        let offset = Vector3::new(
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
        ) * 0.35;
        let pos = c + offset;
        let sigma: f64 = rng.gen_range(0.035..0.09);
        let mut prim = GaussianPrimitive {
            position: pos,
            scale_log: Vector3::new(
                (sigma * rng.gen_range(0.7..1.4)).ln(),
                (sigma * rng.gen_range(0.7..1.4)).ln(),
                (sigma * rng.gen_range(0.7..1.4)).ln(),
            ),
            quaternion: random_rotation(&mut rng).wxyz(),
            opacity_logit: rng.gen_range(1.2..2.8),
            sh_dc: [0.0; 3],
            sh_rest: vec![],
        };
        prim.set_base_color(albedo(recipe.seed, recipe.texture_frequency, &pos));
        prims.push(prim);
    }

    let mut traj = Vec::with_capacity(TRAJECTORY_LEN);
    for i in 0..TRAJECTORY_LEN {
        let th = 2.0 * std::f64::consts::PI * i as f64 / TRAJECTORY_LEN as f64;
        let center = Vector3::new(3.4 * th.cos(), 3.4 * th.sin(), 1.0 + 0.5 * (2.0 * th).sin());
        traj.push(look_at(center, Vector3::zeros()));
    }
    (prims, traj)
}

/// Builds a deterministic synthetic scene and its camera trajectory.
/// Identical recipes produce bit-identical scenes and poses.
pub fn synthesize_scene(
    recipe: &SceneRecipe,
) -> Result<(GaussianScene, Vec<CameraPose>), SceneError> {
    if recipe.primitive_count == 0 {
        return Err(SceneError::InvalidRecipe(
            "primitive_count must be nonzero".into(),
        ));
    }
    if !(recipe.texture_frequency.is_finite() && recipe.texture_frequency > 0.0) {
        return Err(SceneError::InvalidRecipe(
            "texture_frequency must be finite and positive".into(),
        ));
    }
    let (prims, traj) = match recipe.layout {
        SceneLayout::TexturedBoxRoom => box_room(recipe),
        SceneLayout::FacadeGrid => facade(recipe),
        SceneLayout::RandomBlobs => blobs(recipe),
    };
    debug_assert!(traj.len() >= 40);
    Ok((GaussianScene::new(prims, 0)?, traj))
}
