//! Rigid 3D transforms: composition, inversion, least-squares fitting and
//! the rotation/translation error metrics used for evaluation.
//!
//! A [`RigidTransform`] is a plain 4x4 homogeneous map acting on voxel
//! coordinates. Rotations "about the volume center" are baked into the
//! matrix by the constructors; nothing downstream carries a pivot.

use nalgebra::{Matrix3, Matrix4, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance on ‖RᵀR − I‖ before a composed rotation block gets
/// re-orthonormalized.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Rotation + translation as a 4x4 homogeneous matrix, bottom row
/// exactly [0,0,0,1], det(R) = +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    m: Matrix4<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
        }
    }

    /// Build from rotation block and translation vector.
    pub fn from_parts(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { m }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), t)
    }

    /// Rotation about an axis through the origin, angle in radians.
    pub fn rotation_axis_angle(axis: Unit<Vector3<f64>>, angle: f64) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self::from_parts(*r.matrix(), Vector3::zeros())
    }

    /// Rotation about an axis through `pivot`: T(p)·R·T(−p).
    pub fn rotation_about_point(
        axis: Unit<Vector3<f64>>,
        angle: f64,
        pivot: Point3,
    ) -> Self {
        let r = Self::rotation_axis_angle(axis, angle);
        let p = pivot.coords;
        Self::translation(p).compose(&r).compose(&Self::translation(-p))
    }

    pub fn rotation_z(angle: f64) -> Self {
        Self::rotation_axis_angle(Vector3::z_axis(), angle)
    }

    /// Validating constructor for externally supplied matrices.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let bottom_ok = m[(3, 0)] == 0.0 && m[(3, 1)] == 0.0 && m[(3, 2)] == 0.0 && m[(3, 3)] == 1.0;
        if !bottom_ok {
            return Err(Error::Format("bottom row must be [0,0,0,1]".into()));
        }
        let t = Self { m };
        if t.orthonormality_defect() > 1e-6 || t.rotation().determinant() < 0.0 {
            return Err(Error::Format(
                "rotation block is not a proper rotation".into(),
            ));
        }
        // Small drift from file round-trips is tolerated but not kept.
        Ok(if t.orthonormality_defect() > ORTHONORMALITY_TOL {
            t.reorthonormalized()
        } else {
            t
        })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// ‖RᵀR − I‖ (Frobenius), the drift guarded by [`ORTHONORMALITY_TOL`].
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.rotation();
        (r.transpose() * r - Matrix3::identity()).norm()
    }

    /// Nearest proper rotation via polar decomposition (SVD).
    pub fn reorthonormalized(&self) -> Self {
        Self::from_parts(
            nearest_rotation(&self.rotation()),
            self.translation_vec(),
        )
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let t = Self { m: self.m * other.m };
        if t.orthonormality_defect() > ORTHONORMALITY_TOL {
            t.reorthonormalized()
        } else {
            t
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let r = self.rotation();
        let rt = r.transpose();
        Self::from_parts(rt, -(rt * self.translation_vec()))
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        Point3::from(self.rotation() * p.coords + self.translation_vec())
    }

    /// Rotation-only action, for direction vectors and normals.
    pub fn apply_vector(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// Serialize as 4 lines of 4 numbers, 17 significant digits so f64
    /// round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..4 {
            let row: Vec<String> = (0..4).map(|j| format!("{:.16e}", self.m[(i, j)])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad transform entry {tok:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 16 {
            return Err(Error::Format(format!(
                "expected 16 matrix entries, got {}",
                vals.len()
            )));
        }
        Self::from_matrix(Matrix4::from_row_slice(&vals))
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Project a near-rotation onto SO(3), flipping the smallest singular
/// vector when the determinant comes out negative.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Least-squares rigid fit `dst ≈ R·src + t` (no scale) via SVD of the
/// cross-covariance, determinant-corrected to keep det(R) = +1.
pub fn umeyama_fit(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::InvalidParameter(format!(
            "point count mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration("fewer than 3 point pairs"));
    }
    let n = src.len() as f64;
    let c_src = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let c_dst = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - c_src) * (d.coords - c_dst).transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    // Collinear (or coincident) sources leave the rotation about the
    // line unconstrained: second singular value vanishes.
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident",
        ));
    }
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let t = c_dst - r * c_src;
    Ok(RigidTransform::from_parts(r, t))
}

/// Geodesic angle between the two rotation blocks, in degrees.
pub fn rotation_error(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    let rel = est.rotation() * gt.rotation().transpose();
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// ‖t_est − t_gt‖ converted to micrometers.
pub fn translation_error(est: &RigidTransform, gt: &RigidTransform, voxel_size_um: f64) -> f64 {
    (est.translation_vec() - gt.translation_vec()).norm() * voxel_size_um
}
