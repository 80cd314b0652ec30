//! Rigid motions in SE(3).
//!
//! A [`RigidMotion`] stores a rotation and a translation explicitly; the 4x4
//! homogeneous form is built on demand. Anything that comes out of a numerical
//! solver as a raw 4x4 block goes through [`project_to_se3`] before it is
//! treated as a motion again.

use core::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::Point3;

/// Absolute Frobenius tolerance for the rotation invariants.
pub const INVARIANT_TOL: f64 = 1e-9;

const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a motion, checking `R^T R = I` and `det R = 1` within
    /// [`INVARIANT_TOL`].
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let m = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::SingularBlock("non-finite translation"));
        }
        if !m.is_valid(INVARIANT_TOL) {
            return Err(Error::SingularBlock("rotation is not in SO(3)"));
        }
        Ok(m)
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation `exp([w]_x)` (Rodrigues) followed by translation `t`.
    pub fn from_axis_angle(w: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_exp(&w),
            translation: t,
        }
    }

    /// Checked conversion from a homogeneous matrix. Unlike
    /// [`project_to_se3`] nothing is corrected; the bottom row must be exactly
    /// `(0, 0, 0, 1)`.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::SingularBlock("bottom row is not (0, 0, 0, 1)"));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_parts(r, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        let det = self.rotation.determinant();
        ortho <= tol && (det - 1.0).abs() <= tol
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self * other` as homogeneous matrices.
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidMotion {
        let rt = self.rotation.transpose();
        RigidMotion {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle of the rotation part, in radians.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Geodesic rotation distance and translation distance to `other`.
    pub fn distance_to(&self, other: &RigidMotion) -> (f64, f64) {
        let rel = self.rotation.transpose() * other.rotation;
        (
            rotation_angle(&rel),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Mul for RigidMotion {
    type Output = RigidMotion;

    fn mul(self, rhs: RigidMotion) -> RigidMotion {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidMotion> for &'a RigidMotion {
    type Output = RigidMotion;

    fn mul(self, rhs: &'a RigidMotion) -> RigidMotion {
        self.compose(rhs)
    }
}

/// `M_ij = M_i^-1 M_j`: maps coordinates in frame `j` to frame `i`.
pub fn relative_motion(mi: &RigidMotion, mj: &RigidMotion) -> RigidMotion {
    mi.invert().compose(mj)
}

/// Projects a raw 4x4 block onto SE(3).
///
/// The block is divided by its `(4,4)` entry, the bottom row is reset to
/// `(0,0,0,1)` and the upper-left 3x3 block is replaced by the closest
/// rotation in Frobenius norm, `U diag(1, 1, det(U V^T)) V^T`.
pub fn project_to_se3(m: &Matrix4<f64>) -> Result<RigidMotion> {
    let scale = m[(3, 3)];
    if !scale.is_finite() || scale.abs() <= SINGULAR_TOL {
        return Err(Error::SingularBlock("homogeneous scale entry is zero"));
    }
    let m = m / scale;
    let block = m.fixed_view::<3, 3>(0, 0).into_owned();
    if !block.iter().all(|c| c.is_finite()) {
        return Err(Error::SingularBlock("non-finite rotation block"));
    }
    let svd = Svd3::new(&block);
    if svd.singular_values[2] < SINGULAR_TOL {
        return Err(Error::SingularBlock("rotation block is singular"));
    }
    let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
    Ok(RigidMotion {
        rotation: svd.nearest_rotation(),
        translation,
    })
}

/// `exp` of a rotation vector.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = w.cross_matrix();
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = libm::sqrt(theta2);
        (libm::sin(theta) / theta, (1.0 - libm::cos(theta)) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Geodesic angle of a rotation matrix. Uses `atan2` so small angles keep
/// full relative precision.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    libm::atan2(s, c)
}

/// Singular value decomposition of a 3x3 matrix by one-sided Jacobi
/// rotations. `a = u * diag(s) * v^T`, singular values descending, `u` and
/// `v` orthogonal (determinant may be -1).
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub singular_values: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3 {
    pub fn new(a: &Matrix3<f64>) -> Self {
        let mut b = *a;
        let mut v = Matrix3::identity();
        for _sweep in 0..60 {
            let mut rotated = false;
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(q).norm_squared();
                let gamma = b.column(p).dot(&b.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_columns(&mut b, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
            if !rotated {
                break;
            }
        }

        let mut order = [0usize, 1, 2];
        let norms = [b.column(0).norm(), b.column(1).norm(), b.column(2).norm()];
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

        let mut u = Matrix3::zeros();
        let mut vs = Matrix3::zeros();
        let mut s = Vector3::zeros();
        for (k, &i) in order.iter().enumerate() {
            s[k] = norms[i];
            vs.set_column(k, &v.column(i));
            if norms[i] > 0.0 {
                u.set_column(k, &(b.column(i) / norms[i]));
            }
        }
        complete_basis(&mut u, &s);
        Self {
            u,
            singular_values: s,
            v: vs,
        }
    }

    /// Closest rotation to the decomposed matrix.
    pub fn nearest_rotation(&self) -> Matrix3<f64> {
        let d = (self.u * self.v.transpose()).determinant();
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        self.u * fix * self.v.transpose()
    }

    /// Number of singular values above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.singular_values[0];
        if self.singular_values[0] == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

fn rotate_columns(m: &mut Matrix3<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..3 {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = c * mp - s * mq;
        m[(r, q)] = s * mp + c * mq;
    }
}

// Columns of `u` for (numerically) zero singular values are noise divided by
// noise; rebuild them so `u` stays orthogonal.
fn complete_basis(u: &mut Matrix3<f64>, s: &Vector3<f64>) {
    if s[0] == 0.0 {
        *u = Matrix3::identity();
        return;
    }
    let negligible = 1e-10 * s[0];
    if s[1] <= negligible {
        let a = u.column(0).into_owned();
        let axis = if a.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let b = a.cross(&axis).normalize();
        u.set_column(1, &b);
    }
    if s[2] <= negligible {
        let c = u.column(0).cross(&u.column(1));
        u.set_column(2, &c);
    }
}
