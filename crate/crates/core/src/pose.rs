//! Geometry kernel shared by both game engines.
//!
//! Conventions: world axes are right-handed with +Y up. A head at identity
//! orientation looks down its local forward axis `(0, 0, -1)`, with local
//! up `(0, 1, 0)` and local right `(1, 0, 0)`. Every other module derives its
//! directions from [`forward_of`], [`NeutralFrame`] and [`roll_about`].

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the quaternion norm accepted as "unit".
pub const UNIT_TOLERANCE: f64 = 1e-9;

pub const LOCAL_FORWARD: Vec3 = Vec3::new(0.0, 0.0, -1.0);
pub const LOCAL_UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);
pub const LOCAL_RIGHT: Vec3 = Vec3::new(1.0, 0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction; fails on zero-length or non-finite input.
    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if !self.is_finite() || !n.is_finite() || n == 0.0 {
            return Err(Error::invalid(format!(
                "cannot normalize vector ({}, {}, {})",
                self.x, self.y, self.z
            )));
        }
        Ok(self * (1.0 / n))
    }

    pub fn lerp(self, other: Vec3, s: f64) -> Vec3 {
        self + (other - self) * s
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation quaternion `w + xi + yj + zk`. `q` and `-q` denote the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Checked constructor: components must be finite with norm 1 within [`UNIT_TOLERANCE`].
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = UnitQuat { w, x, y, z };
        q.validate()?;
        Ok(q)
    }

    /// Scales any finite, non-zero quaternion to unit length.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(UnitQuat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `degrees` about `axis` (right-hand rule).
    pub fn from_axis_angle(axis: Vec3, degrees: f64) -> Result<Self> {
        let a = axis.normalized()?;
        let half = degrees.to_radians() * 0.5;
        let (s, c) = half.sin_cos();
        Ok(UnitQuat {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        })
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn validate(self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::invalid("quaternion has non-finite components"));
        }
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
        }
        Ok(())
    }

    pub fn conjugate(self) -> UnitQuat {
        UnitQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn negated(self) -> UnitQuat {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn dot(self, o: UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotates `v` by this quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w(u x v) + 2 u x (u x v)
        let u = self.vector();
        let uv = u.cross(v);
        let uuv = u.cross(uv);
        v + uv * (2.0 * self.w) + uuv * 2.0
    }
}

/// Hamilton product: `a * b` applies `b` first, then `a`.
impl Mul for UnitQuat {
    type Output = UnitQuat;
    fn mul(self, b: UnitQuat) -> UnitQuat {
        let a = self;
        UnitQuat {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }
}

/// One timestamped head pose; `t` is the sample clock in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl PoseSample {
    pub fn new(t: f64, position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            t,
            position,
            orientation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || !self.position.is_finite() {
            return Err(Error::invalid("pose sample has non-finite components"));
        }
        self.orientation.validate()
    }
}

/// Calibrated reference pose and its derived axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeutralFrame {
    pub position: Vec3,
    pub orientation: UnitQuat,
    pub forward: Vec3,
    pub up: Vec3,
    pub right: Vec3,
}

impl NeutralFrame {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Result<Self> {
        if !position.is_finite() {
            return Err(Error::invalid("neutral position has non-finite components"));
        }
        orientation.validate()?;
        Ok(Self {
            position,
            orientation,
            forward: orientation.rotate(LOCAL_FORWARD),
            up: orientation.rotate(LOCAL_UP),
            right: orientation.rotate(LOCAL_RIGHT),
        })
    }

    pub fn from_pose(pose: &PoseSample) -> Result<Self> {
        Self::new(pose.position, pose.orientation)
    }
}

/// Head displacement measured in a neutral frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameDisplacement {
    /// Signed, positive toward the back of the head.
    pub backward: f64,
    pub lateral: f64,
    pub vertical: f64,
    /// Geodesic orientation deviation in degrees.
    pub rotation_dev: f64,
}

pub fn forward_of(q: UnitQuat) -> Result<Vec3> {
    q.validate()?;
    Ok(q.rotate(LOCAL_FORWARD))
}

/// Angle in degrees between two non-zero vectors, in `[0, 180]`.
pub fn angle_between(u: Vec3, v: Vec3) -> Result<f64> {
    let a = u.normalized()?;
    let b = v.normalized()?;
    Ok(a.dot(b).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Geodesic angle in degrees between two orientations, in `[0, 180]`.
pub fn rotation_angle(a: UnitQuat, b: UnitQuat) -> f64 {
    if a == b || a == b.negated() {
        return 0.0;
    }
    // 2·acos(|<a,b>|), evaluated through atan2 for precision near zero.
    let rel = a.conjugate() * b;
    let s = rel.vector().norm();
    (2.0 * s.atan2(rel.w.abs())).to_degrees()
}

pub fn displacement_in(frame: &NeutralFrame, pose: &PoseSample) -> FrameDisplacement {
    let delta = pose.position - frame.position;
    FrameDisplacement {
        backward: delta.dot(-frame.forward),
        lateral: delta.dot(frame.right).abs(),
        vertical: delta.dot(frame.up).abs(),
        rotation_dev: rotation_angle(frame.orientation, pose.orientation),
    }
}

/// Signed twist of `q` about the frame's forward axis, in `(-180, 180]`.
///
/// Positive values tilt the head toward the user's right (clockwise when
/// viewed from behind).
pub fn roll_about(frame: &NeutralFrame, q: UnitQuat) -> f64 {
    // Relative rotation expressed in the frame's local axes; the twist about
    // local forward is the projection of the vector part onto that axis.
    if q == frame.orientation || q == frame.orientation.negated() {
        return 0.0;
    }
    let mut rel = frame.orientation.conjugate() * q;
    if rel.w < 0.0 {
        rel = rel.negated();
    }
    let s = rel.vector().dot(LOCAL_FORWARD);
    if s == 0.0 && rel.w == 0.0 {
        // Pure 180° swing: no defined twist.
        return 0.0;
    }
    let deg = (2.0 * s.atan2(rel.w)).to_degrees();
    if deg <= -180.0 {
        deg + 360.0
    } else {
        deg
    }
}

/// Whether the ray from `origin` along `dir` passes within `radius` of `center`
/// at a non-negative ray parameter. The boundary counts as a hit.
pub fn ray_hits_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Result<bool> {
    let d = dir.normalized()?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let to_center = center - origin;
    let along = to_center.dot(d);
    if along < 0.0 {
        return Ok(false);
    }
    let perpendicular = to_center - d * along;
    Ok(perpendicular.norm() <= radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn frame_at(yaw: f64, pitch: f64) -> NeutralFrame {
        let q = UnitQuat::from_axis_angle(LOCAL_UP, yaw).unwrap()
            * UnitQuat::from_axis_angle(LOCAL_RIGHT, pitch).unwrap();
        NeutralFrame::new(Vec3::new(0.1, 1.2, -0.3), q).unwrap()
    }

    /// Rotation matrix built from axis/angle with Rodrigues' formula, used as
    /// an independent route for checking quaternion rotation.
    fn rodrigues(axis: Vec3, deg: f64, v: Vec3) -> Vec3 {
        let k = axis.normalized().unwrap();
        let (s, c) = deg.to_radians().sin_cos();
        v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
    }

    #[test]
    fn forward_of_identity() {
        assert_eq!(forward_of(UnitQuat::IDENTITY).unwrap(), Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn forward_of_half_turn_about_up() {
        let q = UnitQuat::from_axis_angle(LOCAL_UP, 180.0).unwrap();
        assert!(close(forward_of(q).unwrap(), Vec3::new(0.0, 0.0, 1.0), EPS));
    }

    #[test]
    fn forward_of_quarter_turn_about_x_matches_matrix() {
        let q = UnitQuat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 90.0).unwrap();
        let f = forward_of(q).unwrap();
        assert!(close(f, Vec3::new(0.0, 1.0, 0.0), EPS));
        assert!(close(f, rodrigues(LOCAL_RIGHT, 90.0, LOCAL_FORWARD), EPS));
    }

    #[test]
    fn forward_of_rejects_bad_quaternions() {
        let q = UnitQuat { w: 2.0, x: 0.0, y: 0.0, z: 0.0 };
        assert!(matches!(forward_of(q), Err(Error::InvalidArgument(_))));
        let q = UnitQuat { w: f64::NAN, x: 0.0, y: 0.0, z: 0.0 };
        assert!(forward_of(q).is_err());
    }

    #[test]
    fn angle_between_examples() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(angle_between(x, Vec3::new(0.0, 1.0, 0.0)).unwrap(), 90.0);
        assert_eq!(angle_between(x, x).unwrap(), 0.0);
        let s = 45f64.to_radians();
        let a = angle_between(LOCAL_FORWARD, Vec3::new(0.0, s.sin(), -s.cos())).unwrap();
        assert!((a - 45.0).abs() < 1e-9);
        assert!(angle_between(Vec3::ZERO, x).is_err());
    }

    #[test]
    fn displacement_examples() {
        let frame = frame_at(30.0, -5.0);
        let at_frame = PoseSample::new(0.0, frame.position, frame.orientation);
        let d = displacement_in(&frame, &at_frame);
        assert_eq!(d, FrameDisplacement::default());

        let back = PoseSample::new(0.0, frame.position - frame.forward * 0.05, frame.orientation);
        let d = displacement_in(&frame, &back);
        assert!((d.backward - 0.05).abs() < 1e-12);
        assert!(d.lateral < 1e-12 && d.vertical < 1e-12 && d.rotation_dev == 0.0);

        let turned = UnitQuat::from_axis_angle(frame.up, 10.0).unwrap() * frame.orientation;
        let d = displacement_in(&frame, &PoseSample::new(0.0, frame.position, turned));
        assert!((d.rotation_dev - 10.0).abs() < 1e-6);
    }

    #[test]
    fn roll_examples() {
        let frame = frame_at(-20.0, 8.0);
        assert_eq!(roll_about(&frame, frame.orientation), 0.0);
        let right = UnitQuat::from_axis_angle(frame.forward, 25.0).unwrap() * frame.orientation;
        assert!((roll_about(&frame, right) - 25.0).abs() < 1e-9);
        let yaw = UnitQuat::from_axis_angle(frame.up, 25.0).unwrap() * frame.orientation;
        assert!(roll_about(&frame, yaw).abs() < 1e-6);
    }

    #[test]
    fn positive_roll_moves_head_top_toward_right() {
        let frame = frame_at(0.0, 0.0);
        let q = UnitQuat::from_axis_angle(frame.forward, 25.0).unwrap();
        let up = q.rotate(LOCAL_UP);
        assert!(up.x > 0.0);
        assert!(roll_about(&frame, q) > 0.0);
    }

    #[test]
    fn roll_range_is_half_open() {
        let frame = frame_at(0.0, 0.0);
        let half = UnitQuat::from_axis_angle(frame.forward, 180.0).unwrap();
        assert!((roll_about(&frame, half) - 180.0).abs() < 1e-9);
        assert!((roll_about(&frame, half.negated()) - 180.0).abs() < 1e-9);
        let back = UnitQuat::from_axis_angle(frame.forward, -180.0).unwrap();
        assert!((roll_about(&frame, back) - 180.0).abs() < 1e-9);
    }

    /// Swing-twist oracle: compare against the roll angle read off a rotation
    /// matrix after removing the swing that carries forward onto its image.
    #[test]
    fn roll_matches_matrix_oracle() {
        let frame = frame_at(12.0, -7.0);
        for (swing_axis, swing, twist) in [
            (LOCAL_UP, 25.0, 0.0),
            (LOCAL_RIGHT, 30.0, 15.0),
            (Vec3::new(1.0, 1.0, 0.0), 20.0, -40.0),
        ] {
            let local = UnitQuat::from_axis_angle(swing_axis, swing).unwrap()
                * UnitQuat::from_axis_angle(LOCAL_FORWARD, twist).unwrap();
            let q = frame.orientation * local;
            // Oracle: rotate local axes, undo swing via Rodrigues, read the
            // angle of the image of local up in the local x/y plane.
            let f = rodrigues(swing_axis, swing, LOCAL_FORWARD);
            let up_image = rodrigues(swing_axis, swing, rodrigues(LOCAL_FORWARD, twist, LOCAL_UP));
            let axis = f.cross(LOCAL_FORWARD);
            let unswung = if axis.norm() < 1e-12 {
                up_image
            } else {
                let ang = angle_between(f, LOCAL_FORWARD).unwrap();
                rodrigues(axis, ang, up_image)
            };
            let oracle = unswung.x.atan2(unswung.y).to_degrees();
            assert!((roll_about(&frame, q) - oracle).abs() < 1e-6, "twist {twist}");
        }
    }

    #[test]
    fn ray_examples() {
        let o = Vec3::ZERO;
        assert!(ray_hits_sphere(o, LOCAL_FORWARD, Vec3::new(0.0, 0.0, -2.0), 0.2).unwrap());
        assert!(!ray_hits_sphere(o, LOCAL_FORWARD, Vec3::new(0.0, 0.0, 2.0), 0.2).unwrap());
        assert!(ray_hits_sphere(o, LOCAL_FORWARD, Vec3::new(0.25, 0.0, -5.0), 0.25).unwrap());
        assert!(!ray_hits_sphere(o, LOCAL_FORWARD, Vec3::new(0.2500001, 0.0, -5.0), 0.25).unwrap());
        assert!(ray_hits_sphere(o, Vec3::ZERO, Vec3::ZERO, 1.0).is_err());
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuat> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.01)
            .prop_map(|(w, x, y, z)| UnitQuat::normalized(w, x, y, z).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn angle_is_symmetric_and_scale_invariant(u in arb_vec(), v in arb_vec(), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let base = angle_between(u, v).unwrap();
            prop_assert!((base - angle_between(v, u).unwrap()).abs() < 1e-9);
            prop_assert!((base - angle_between(u * a, v * b).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn frame_as_pose_has_zero_displacement(q in arb_quat(), p in arb_vec()) {
            let frame = NeutralFrame::new(p, q).unwrap();
            let d = displacement_in(&frame, &PoseSample::new(1.0, p, q));
            prop_assert_eq!(d, FrameDisplacement::default());
        }

        #[test]
        fn frame_axes_are_orthonormal(q in arb_quat()) {
            let f = NeutralFrame::new(Vec3::ZERO, q).unwrap();
            for v in [f.forward, f.up, f.right] {
                prop_assert!((v.norm() - 1.0).abs() < 1e-6);
            }
            prop_assert!(f.forward.dot(f.up).abs() < 1e-6);
            prop_assert!(f.forward.dot(f.right).abs() < 1e-6);
            prop_assert!(f.up.dot(f.right).abs() < 1e-6);
        }

        #[test]
        fn forward_ignores_quaternion_sign(q in arb_quat()) {
            prop_assert!(close(forward_of(q).unwrap(), forward_of(q.negated()).unwrap(), 1e-12));
        }

        #[test]
        fn roll_is_additive_and_ignores_swing(
            q in arb_quat(), a in -80.0f64..80.0, b in -80.0f64..80.0,
            swing_dir in 0.0f64..360.0, swing in 0.0f64..60.0,
        ) {
            let frame = NeutralFrame::new(Vec3::ZERO, q).unwrap();
            let twist = |d: f64| UnitQuat::from_axis_angle(LOCAL_FORWARD, d).unwrap();
            let composed = roll_about(&frame, q * twist(a) * twist(b));
            let expected = a + b;
            let diff = (composed - expected).rem_euclid(360.0);
            prop_assert!(!(1e-6..=360.0 - 1e-6).contains(&diff));

            let r = swing_dir.to_radians();
            let axis = Vec3::new(r.cos(), r.sin(), 0.0);
            let s = UnitQuat::from_axis_angle(axis, swing).unwrap();
            prop_assert!((roll_about(&frame, q * s * twist(a)) - a).abs() < 1e-6);
        }

        #[test]
        fn operations_are_pure(q in arb_quat(), p in arb_vec()) {
            let f = NeutralFrame::new(Vec3::ZERO, q).unwrap();
            let pose = PoseSample::new(0.0, p, q);
            prop_assert_eq!(displacement_in(&f, &pose), displacement_in(&f, &pose));
            prop_assert_eq!(roll_about(&f, q).to_bits(), roll_about(&f, q).to_bits());
        }
    }
}
