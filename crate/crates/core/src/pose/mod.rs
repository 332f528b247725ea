//! Tag pose: PCA partial pose, marker corners and closed-form template alignment.
//!
//! The canonical template is the marker square in the `y`-`z` plane of the tag frame,
//! centered at the origin with its printed side facing `-x` (see [`crate::synth`] for the
//! frame convention). Its corners are listed counterclockwise as seen from the front,
//! starting at the top-left: `(0, h, h)`, `(0, h, -h)`, `(0, -h, -h)`, `(0, -h, h)`.

mod corners;

pub use corners::estimate_corners;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, SVD};
use thiserror::Error;

use crate::pointcloud::Point;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("corner fit failed: {0}")]
    CornerFitFailed(String),
    #[error("ill-conditioned alignment (singular values {0:?})")]
    IllConditioned([f64; 3]),
}

/// Centroid and plane orientation of the marker returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialPose<T: Real> {
    pub mu: Vector3<T>,
    /// Unit normal pointing toward the sensor (`normal . mu < 0`).
    pub normal: Vector3<T>,
    /// `[e1, e2]` with `e1 x e2 = normal`; `e1` is the direction of largest spread.
    pub in_plane_axes: [Vector3<T>; 2],
    pub plane_residual_rms: T,
}

pub fn estimate_partial_pose<T: Real>(points: &[Point<T>]) -> Result<PartialPose<T>, PoseError> {
    let positions: Vec<Vector3<T>> = points.iter().map(|p| p.position).collect();
    partial_pose_from_positions(&positions)
}

/// PCA over positions: the mean, and the singular vectors of the zero-mean point matrix
/// (computed from its 3x3 scatter matrix, which has the same left singular vectors).
pub fn partial_pose_from_positions<T: Real>(
    positions: &[Vector3<T>],
) -> Result<PartialPose<T>, PoseError> {
    if positions.len() < 3 {
        return Err(PoseError::DegenerateGeometry("fewer than 3 points"));
    }
    let n = T::from_usize_lossy(positions.len());
    let mu = positions.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in positions {
        let q = p - mu;
        scatter += q * q.transpose();
    }
    let svd = SVD::new(scatter, true, false);
    let u = svd.u.expect("requested U");
    let s = svd.singular_values;
    if !(s[1] > s[0] * T::lit(1e-12)) {
        return Err(PoseError::DegenerateGeometry("points are collinear"));
    }
    let mut normal: Vector3<T> = u.column(2).into_owned();
    if normal.dot(&mu) > T::zero() {
        normal = -normal;
    }
    let e1: Vector3<T> = u.column(0).into_owned();
    let e2 = normal.cross(&e1);
    Ok(PartialPose {
        mu,
        normal,
        in_plane_axes: [e1, e2],
        plane_residual_rms: (s[2].max(T::zero()) / n).sqrt(),
    })
}

/// Centroid of the surface sampled by `points`, each return weighted by the plane area it
/// covers. A sensor with uniform angular steps hits a tilted plane more densely on its near
/// side, which pulls the plain mean toward the sensor's side of the tag; the footprint of
/// a return grows with `r^2 cos(elevation) / |cos(incidence)|`, which undoes that.
pub fn footprint_centroid<T: Real>(points: &[Point<T>], normal: &Vector3<T>) -> Option<Vector3<T>> {
    let mut sum = Vector3::zeros();
    let mut total = T::zero();
    for p in points {
        let r2 = p.position.norm_squared();
        let r = r2.sqrt();
        let horizontal = p.position.x.hypot(p.position.y);
        let incidence = (normal.dot(&p.position) / r).abs();
        if !(r > T::zero()) || !(incidence > T::lit(1e-6)) {
            continue;
        }
        let w = r2 * (horizontal / r) / incidence;
        sum += p.position * w;
        total += w;
    }
    (total > T::zero()).then(|| sum / total)
}

pub fn template_corners<T: Real>(tag_size: T) -> [Vector3<T>; 4] {
    let h = tag_size / T::lit(2.0);
    let z = T::zero();
    [
        Vector3::new(z, h, h),
        Vector3::new(z, h, -h),
        Vector3::new(z, -h, -h),
        Vector3::new(z, -h, h),
    ]
}

/// Rigid map `x = R p + T` from the sensor frame to the template frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateAlignment<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
    /// `||R P - X||_F` over the corner difference vectors.
    pub residual: T,
}

impl<T: Real> TemplateAlignment<T> {
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }
}

/// Closed-form orthogonal Procrustes alignment of measured corners to the template.
///
/// With `P` the corners minus the centroid `p0 = partial.mu` and `X` the template corners
/// (columns), `M = X P^T = U S V^T` and `R = U V^T`. If that product is a reflection the
/// last column of `U` is negated. The translation is `T = -R p0`.
pub fn procrustes_align<T: Real>(
    corners: &[Vector3<T>; 4],
    template: &[Vector3<T>; 4],
    partial: &PartialPose<T>,
) -> Result<TemplateAlignment<T>, PoseError> {
    let p0 = partial.mu;
    let mut m = Matrix3::zeros();
    for (x, c) in template.iter().zip(corners) {
        m += x * (c - p0).transpose();
    }
    let svd = SVD::new(m, true, true);
    let s = svd.singular_values;
    if !(s[1] > s[0] * T::lit(1e-9)) {
        return Err(PoseError::IllConditioned([s[0].as_f64(), s[1].as_f64(), s[2].as_f64()]));
    }
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    if (u * v_t).determinant() < T::zero() {
        let last = -u.column(2).into_owned();
        u.set_column(2, &last);
    }
    let rotation = u * v_t;
    let residual = template
        .iter()
        .zip(corners)
        .map(|(x, c)| (rotation * (c - p0) - x).norm_squared())
        .fold(T::zero(), |a, b| a + b)
        .sqrt();
    Ok(TemplateAlignment {
        rotation,
        translation: -(rotation * p0),
        residual,
    })
}

/// Rotation about the tag `x` axis by `k` quarter turns, clockwise as seen from the front.
pub fn quarter_turn<T: Real>(k: u8) -> Matrix3<T> {
    let (o, l) = (T::zero(), T::one());
    let (c, s) = match k % 4 {
        0 => (l, o),
        1 => (o, l),
        2 => (-l, o),
        _ => (o, -l),
    };
    Matrix3::new(l, o, o, o, c, -s, o, s, c)
}

/// Tag-to-sensor rotation from the sensor-to-template alignment and the decoded number of
/// quarter turns of the payload.
pub fn compose_rotation<T: Real>(alignment: &TemplateAlignment<T>, rotation_k: u8) -> Matrix3<T> {
    alignment.rotation.transpose() * quarter_turn(rotation_k)
}

/// Unit quaternion of a rotation matrix with a non-negative scalar part.
pub fn to_quaternion<T: Real>(r: &Matrix3<T>) -> UnitQuaternion<T> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    if q.w < T::zero() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Clockwise quarter turns (as seen from the front) of a tag with tag-to-sensor rotation
/// `r`, measured from the sensor's up direction expressed in the tag frame.
pub fn quarter_turns<T: Real>(r: &Matrix3<T>) -> u8 {
    let a = r.transpose() * Vector3::z();
    let angle = a.y.atan2(a.z).as_f64().to_degrees();
    ((angle / 90.0).round() as i64).rem_euclid(4) as u8
}

/// Signed in-plane angle (radians, clockwise as seen from the front) of a tag with
/// tag-to-sensor rotation `r`, on the same reference as [`quarter_turns`].
pub fn in_plane_angle<T: Real>(r: &Matrix3<T>) -> f64 {
    let a = r.transpose() * Vector3::z();
    a.y.atan2(a.z).as_f64()
}
