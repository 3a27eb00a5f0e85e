//! Camera geometry and SO(3) utilities.
//!
//! Conventions, used everywhere in this crate:
//! - Poses are world-to-camera: `x_cam = R * x_world + t`. The camera center
//!   in world coordinates is `C = -R^T t`.
//! - `Rotation` wraps a unit quaternion canonicalized to `w >= 0`, so the
//!   double cover never leaks into serialization or comparisons.
//! - Rotation increments are so(3) axis-angle vectors applied on the left:
//!   `R <- exp([phi]_x) * R`. Translation is not touched by such an update.
//! - Pixel coordinates are continuous sample positions; the pixel at row `v`,
//!   column `u` of an image samples the point `(u, v)`, and a world point on
//!   the optical axis projects to `(cx, cy)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Axis-angle rotation increment in so(3). Magnitude is the angle in radians.
pub type So3Increment = Vector3<f64>;

/// Angles below this are expanded with a Taylor series in [`so3_exp`].
pub const SMALL_ANGLE: f64 = 1e-8;

/// Camera-space depths at or below this are rejected as behind the camera.
pub const MIN_PROJECT_DEPTH: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("quaternion has non-finite components or zero norm")]
    InvalidQuaternion,
    #[error("point is behind the camera (z = {z:.6e})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive and finite (got {depth})")]
    InvalidDepth { depth: f64 },
    #[error("invalid intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
}

/// A 3D rotation stored as a unit quaternion with `w >= 0`.
///
/// Every constructor renormalizes and canonicalizes the sign, so long
/// composition chains cannot drift off the unit sphere and `q`/`-q` never
/// compare as different rotations. When `w == 0` exactly (a half-turn), the
/// first nonzero vector component is made positive to keep a single
/// representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds from quaternion components in (w, x, y, z) order.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::InvalidQuaternion);
        }
        Ok(Self::canonicalize(UnitQuaternion::new_unchecked(q / n)))
    }

    /// Wraps an already-unit quaternion, fixing only the canonical sign.
    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonicalize(q)
    }

    /// Converts a rotation matrix. The matrix is trusted to be orthonormal
    /// with determinant +1; callers validating untrusted input should check
    /// that first.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Self::canonicalize(UnitQuaternion::from_rotation_matrix(&r))
    }

    fn canonicalize(q: UnitQuaternion<f64>) -> Self {
        let c = q.coords; // (x, y, z, w)
        let flip = c.w < 0.0
            || (c.w == 0.0
                && (c.x < 0.0
                    || (c.x == 0.0 && (c.y < 0.0 || (c.y == 0.0 && c.z < 0.0)))));
        if flip {
            Rotation(UnitQuaternion::new_unchecked(Quaternion::from_parts(
                -q.w,
                -q.imag(),
            )))
        } else {
            Rotation(q)
        }
    }

    /// Components in (w, x, y, z) order, `w >= 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        let c = self.0.coords;
        [c.w, c.x, c.y, c.z]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    /// Composition `self * other`: applies `other` first, then `self`.
    /// The product is renormalized, so `|‖q‖ - 1|` stays at rounding level
    /// over arbitrarily long chains.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let q = self.0.quaternion() * other.0.quaternion();
        Rotation::from_wxyz(q.w, q.i, q.j, q.k).expect("product of unit quaternions")
    }

    pub fn inverse(&self) -> Rotation {
        Self::canonicalize(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// Relative angle to `other` in radians, in `[0, pi]`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    /// Shortest-path spherical interpolation. Falls back to normalized linear
    /// interpolation when the rotations are nearly antipodal (t is then still
    /// well-defined but the path is not unique).
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        match self.0.try_slerp(&other.0, t, 1e-9) {
            Some(q) => Self::canonicalize(q),
            None => {
                let a = self.0.quaternion();
                let b = other.0.quaternion();
                let b = if a.dot(b) < 0.0 { -*b } else { *b };
                let q = a * (1.0 - t) + b * t;
                Rotation::from_wxyz(q.w, q.i, q.j, q.k).unwrap_or(*self)
            }
        }
    }
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct CameraPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

/// JSON wire format for poses: `{qw, qx, qy, qz, tx, ty, tz}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PoseRecord {
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
}

impl From<PoseRecord> for CameraPose {
    fn from(r: PoseRecord) -> Self {
        CameraPose {
            rotation: Rotation::from_wxyz(r.qw, r.qx, r.qy, r.qz)
                .unwrap_or_else(|_| Rotation::identity()),
            translation: Vector3::new(r.tx, r.ty, r.tz),
        }
    }
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        let [qw, qx, qy, qz] = p.rotation.wxyz();
        PoseRecord {
            qw,
            qx,
            qy,
            qz,
            tx: p.translation.x,
            ty: p.translation.y,
            tz: p.translation.z,
        }
    }
}

impl CameraPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        CameraPose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        CameraPose::new(Rotation::identity(), Vector3::zeros())
    }

    /// Builds the pose whose camera center in world coordinates is `center`.
    pub fn from_rotation_center(rotation: Rotation, center: &Vector3<f64>) -> Self {
        let t = -rotation.rotate(center);
        CameraPose::new(rotation, t)
    }

    /// Camera center in world coordinates: `C = -R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -self.rotation.inverse_rotate(&self.translation)
    }

    pub fn transform_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(world) + self.translation
    }

    pub fn world_from_camera(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_rotate(&(cam - self.translation))
    }
}

/// Pinhole intrinsics. `cx`/`cy` live in the same continuous pixel
/// coordinates as [`project`]: the center of a `W x H` image is
/// `((W-1)/2, (H-1)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: &str| GeometryError::InvalidIntrinsics {
            reason: reason.to_string(),
        };
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(bad("focal lengths must be finite and positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("image dimensions must be nonzero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(bad("cx out of image bounds"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(bad("cy out of image bounds"));
        }
        Ok(())
    }

    /// Symmetric pinhole with the given horizontal field of view, principal
    /// point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Intrinsics {
        let f = width as f64 * 0.5 / (fov_x_deg.to_radians() * 0.5).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
            width,
            height,
        }
    }

    /// Intrinsics for the same camera rendered at `scale` times the
    /// resolution. Output pixel `i` samples input coordinate
    /// `(i + 0.5)/scale - 0.5`, which keeps the image center fixed.
    pub fn scaled(&self, scale: f64) -> Intrinsics {
        Intrinsics {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx + 0.5) * scale - 0.5,
            cy: (self.cy + 0.5) * scale - 0.5,
            width: ((self.width as f64 * scale).round() as usize).max(1),
            height: ((self.height as f64 * scale).round() as usize).max(1),
        }
    }
}

/// Exponential map so(3) -> SO(3) via the quaternion form of Rodrigues'
/// formula; angles below [`SMALL_ANGLE`] use a second-order Taylor expansion
/// of `cos(t/2)` and `sin(t/2)/t`.
pub fn so3_exp(phi: &So3Increment) -> Rotation {
    let t2 = phi.norm_squared();
    let (w, k) = if t2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - t2 * 0.125, 0.5 - t2 / 48.0)
    } else {
        let t = t2.sqrt();
        ((0.5 * t).cos(), (0.5 * t).sin() / t)
    };
    Rotation::from_wxyz(w, k * phi.x, k * phi.y, k * phi.z)
        .expect("exp of finite increment is a valid quaternion")
}

/// Logarithm SO(3) -> so(3). Returns the unique increment with norm in
/// `[0, pi]`; the canonical `w >= 0` makes the half-turn branch pick a fixed
/// axis sign, so `so3_exp(so3_log(r))` always reproduces `r`.
pub fn so3_log(r: &Rotation) -> So3Increment {
    let [w, x, y, z] = r.wxyz();
    let v = Vector3::new(x, y, z);
    let nv = v.norm();
    if nv < 1e-9 {
        // theta/nv = 2*atan(nv/w)/nv expanded around nv = 0.
        let s = nv / w;
        return v * (2.0 / w) * (1.0 - s * s / 3.0);
    }
    let theta = 2.0 * nv.atan2(w);
    v * (theta / nv)
}

/// Left-multiplied rotation update: the result has rotation
/// `exp([phi]_x) * R` and the translation of `pose` unchanged.
pub fn apply_rotation_update(pose: &CameraPose, phi: &So3Increment) -> CameraPose {
    CameraPose::new(so3_exp(phi).compose(&pose.rotation), pose.translation)
}

/// Projects a world point. Returns the continuous pixel (which may fall
/// outside the image bounds) and the camera-space depth `z`.
pub fn project(
    point: &Vector3<f64>,
    pose: &CameraPose,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let pc = pose.transform_point(point);
    if pc.z <= MIN_PROJECT_DEPTH {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    let u = k.fx * pc.x / pc.z + k.cx;
    let v = k.fy * pc.y / pc.z + k.cy;
    Ok((Vector2::new(u, v), pc.z))
}

/// Lifts a pixel at the given camera-space depth back to world coordinates.
pub fn back_project(
    pixel: &Vector2<f64>,
    depth: f64,
    pose: &CameraPose,
    k: &Intrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth { depth });
    }
    let cam = Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    Ok(pose.world_from_camera(&cam))
}

/// Unit world-space direction of the viewing ray through `pixel` for a
/// camera with the given world-to-camera rotation. Points from the camera
/// toward the scene.
pub fn pixel_ray_direction(
    pixel: &Vector2<f64>,
    rotation: &Rotation,
    k: &Intrinsics,
) -> Vector3<f64> {
    let cam = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
    rotation.inverse_rotate(&cam).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
    }

    /// Independent oracle: truncated matrix power series for exp([phi]_x).
    /// 30 terms is far past f64 convergence for |phi| <= pi.
    fn matrix_exp_series(phi: &Vector3<f64>) -> Matrix3<f64> {
        let a = skew(phi);
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for n in 1..=30 {
            term = term * a / n as f64;
            sum += term;
        }
        sum
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        so3_exp(&(axis * angle))
    }

    #[test]
    fn exp_matches_matrix_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let phi = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            if phi.norm() >= std::f64::consts::PI {
                continue;
            }
            let diff = so3_exp(&phi).matrix() - matrix_exp_series(&phi);
            assert!(diff.norm() < 1e-12, "phi={phi:?} err={}", diff.norm());
        }
    }

    #[test]
    fn exp_small_angle_branch_matches_series() {
        for &scale in &[1e-12, 1e-9, 9.9e-9, 1.1e-8, 1e-6] {
            let phi = Vector3::new(0.6, -0.7, 0.38).normalize() * scale;
            let diff = so3_exp(&phi).matrix() - matrix_exp_series(&phi);
            assert!(diff.norm() < 1e-15, "scale={scale} err={}", diff.norm());
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let back = so3_exp(&so3_log(&r));
            assert!(r.angle_to(&back) < 1e-9);
        }
    }

    #[test]
    fn log_near_half_turn() {
        // trace ~ -1 + eps: angle just below pi around a known axis.
        let axis = Vector3::new(2.0, -1.0, 0.5).normalize();
        for &angle in &[std::f64::consts::PI - 1e-7, std::f64::consts::PI - 1e-3] {
            let r = so3_exp(&(axis * angle));
            let phi = so3_log(&r);
            assert!((phi.norm() - angle).abs() < 1e-9);
            assert!((phi.normalize() - axis).norm() < 1e-6);
            // Agreement with the quaternion-derived angle.
            let w = r.wxyz()[0];
            assert!((2.0 * w.acos() - phi.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(so3_log(&Rotation::identity()).norm(), 0.0);
    }

    #[test]
    fn canonical_w_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let [w, ..] = r.wxyz();
            assert!(w >= 0.0);
            let [w2, x2, y2, z2] = r.wxyz();
            let flipped = Rotation::from_wxyz(-w2, -x2, -y2, -z2).unwrap();
            assert!(r.angle_to(&flipped) < 1e-12);
            for (a, b) in r.wxyz().iter().zip(flipped.wxyz()) {
                // Renormalization may wobble the last ulp.
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn composition_stays_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut acc = Rotation::identity();
        let steps: Vec<Rotation> = (0..64).map(|_| random_rotation(&mut rng)).collect();
        for i in 0..100_000 {
            acc = acc.compose(&steps[i % steps.len()]);
        }
        let [w, x, y, z] = acc.wxyz();
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_update_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let pose = CameraPose::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let phi = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let updated = apply_rotation_update(&pose, &phi);
            let expected = matrix_exp_series(&phi) * pose.rotation.matrix();
            assert!((updated.rotation.matrix() - expected).norm() < 1e-12);
            assert_eq!(updated.translation, pose.translation);
        }
    }

    #[test]
    fn identity_update_is_noop() {
        let pose = CameraPose::new(
            so3_exp(&Vector3::new(0.1, 0.2, -0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let updated = apply_rotation_update(&pose, &Vector3::zeros());
        assert!(pose.rotation.angle_to(&updated.rotation) < 1e-15);
    }

    fn test_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 120.0,
            fy: 115.0,
            cx: 31.5,
            cy: 31.5,
            width: 64,
            height: 64,
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let k = test_intrinsics();
        let pose = CameraPose::identity();
        let (px, z) = project(&Vector3::new(0.0, 0.0, 2.0), &pose, &k).unwrap();
        assert!((px.x - k.cx).abs() < 1e-12 && (px.y - k.cy).abs() < 1e-12);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let k = test_intrinsics();
        let pose = CameraPose::identity();
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &pose, &k),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_back_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let k = test_intrinsics();
        let mut checked = 0;
        while checked < 10_000 {
            let pose = CameraPose::new(
                random_rotation(&mut rng),
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
            );
            let point = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let Ok((px, z)) = project(&point, &pose, &k) else {
                continue;
            };
            let back = back_project(&px, z, &pose, &k).unwrap();
            assert!((back - point).norm() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn ray_direction_is_consistent_with_projection() {
        // Placing the camera center at P - d*v and projecting P must return
        // the pixel the ray came from.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = test_intrinsics();
        for _ in 0..500 {
            let rot = random_rotation(&mut rng);
            let pixel = Vector2::new(rng.gen_range(0.0..63.0), rng.gen_range(0.0..63.0));
            let v = pixel_ray_direction(&pixel, &rot, &k);
            assert!((v.norm() - 1.0).abs() < 1e-12);
            let p = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let d = rng.gen_range(0.5..5.0);
            let center = p - v * d;
            let pose = CameraPose::from_rotation_center(rot, &center);
            let (px, _) = project(&p, &pose, &k).unwrap();
            assert!((px - pixel).norm() < 1e-9, "pixel={pixel:?} px={px:?}");
        }
    }

    #[test]
    fn camera_center_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..100 {
            let rot = random_rotation(&mut rng);
            let c = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let pose = CameraPose::from_rotation_center(rot, &c);
            assert!((pose.camera_center() - c).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_json_round_trip() {
        let pose = CameraPose::new(
            so3_exp(&Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(0.5, -1.5, 2.0),
        );
        let json = serde_json::to_string(&pose).unwrap();
        for key in ["qw", "qx", "qy", "qz", "tx", "ty", "tz"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: CameraPose = serde_json::from_str(&json).unwrap();
        assert!(pose.rotation.angle_to(&back.rotation) < 1e-12);
        assert!((pose.translation - back.translation).norm() < 1e-12);
    }

    #[test]
    fn slerp_midpoint_has_equal_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let mid = a.slerp(&b, 0.5);
            assert!((mid.angle_to(&a) - mid.angle_to(&b)).abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_intrinsics_keep_center_fixed() {
        let k = Intrinsics::from_fov(192, 192, 60.0);
        let s = k.scaled(0.25);
        assert_eq!((s.width, s.height), (48, 48));
        assert!((s.cx - (s.width as f64 - 1.0) * 0.5).abs() < 1e-12);
        assert!((s.fx - k.fx * 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_intrinsics_are_rejected() {
        let mut k = test_intrinsics();
        k.fx = -1.0;
        assert!(k.validate().is_err());
        let mut k = test_intrinsics();
        k.cx = 64.0;
        assert!(k.validate().is_err());
        assert!(test_intrinsics().validate().is_ok());
    }

    proptest! {
        #[test]
        fn prop_exp_log_round_trip(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            angle in 0.0f64..3.1,
        ) {
            let n = (ax * ax + ay * ay + az * az).sqrt();
            prop_assume!(n > 1e-3);
            let phi = Vector3::new(ax, ay, az) / n * angle;
            let r = so3_exp(&phi);
            let back = so3_log(&r);
            prop_assert!((back - phi).norm() < 1e-9);
        }

        #[test]
        fn prop_rotation_preserves_norm(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            vx in -10.0f64..10.0, vy in -10.0f64..10.0, vz in -10.0f64..10.0,
        ) {
            let n = (ax * ax + ay * ay + az * az).sqrt();
            prop_assume!(n > 1e-3);
            let r = so3_exp(&(Vector3::new(ax, ay, az) / n));
            let v = Vector3::new(vx, vy, vz);
            prop_assert!((r.rotate(&v).norm() - v.norm()).abs() < 1e-9);
        }
    }
}
