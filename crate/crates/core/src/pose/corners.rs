use nalgebra::{Matrix3, Vector2, Vector3};

use super::{PartialPose, PoseError};
use crate::scalar::Real;

/// Angular resolution of the coarse orientation search, degrees.
const COARSE_STEP_DEG: f64 = 0.5;
const REFINE_ITERATIONS: usize = 15;

/// Marker corners from samples of its outer boundary.
///
/// The samples are expressed in the marker plane, in a frame whose second axis is the
/// sensor's up direction projected onto the plane. A square of side `tag_size` is fitted to
/// them: a coarse search over orientations (modulo 90 degrees) followed by Gauss-Newton on
/// center and orientation. Each sample is assigned to a side by its angular quadrant around
/// the current center in the square-aligned frame. A side parallel to the scan lines
/// receives few or no samples; the shared orientation and known side length still pin
/// the other sides, and the center along the unobserved direction stays at `mu`.
///
/// Corners are returned counterclockwise as seen from the sensor, starting at the corner
/// with the highest elevation angle.
pub fn estimate_corners<T: Real>(
    boundary: &[Vector3<T>],
    pose: &PartialPose<T>,
    tag_size: T,
) -> Result<[Vector3<T>; 4], PoseError> {
    let s = tag_size.as_f64();
    if !(s > 0.0) {
        return Err(PoseError::CornerFitFailed("tag size must be positive".into()));
    }
    if boundary.len() < 4 {
        return Err(PoseError::CornerFitFailed(format!(
            "{} boundary samples",
            boundary.len()
        )));
    }
    let mu: Vector3<f64> = pose.mu.map(|c| c.as_f64());
    let normal: Vector3<f64> = pose.normal.map(|c| c.as_f64());
    let mut up = Vector3::z() - normal * normal.z;
    if up.norm() < 1e-6 {
        up = pose.in_plane_axes[0].map(|c| c.as_f64());
    }
    let up = up.normalize();
    // Viewer looks along -normal, so right = (-normal) x up = up x normal.
    let right = up.cross(&normal);
    let samples: Vec<Vector2<f64>> = boundary
        .iter()
        .map(|p| {
            let q = p.map(|c| c.as_f64()) - mu;
            Vector2::new(q.dot(&right), q.dot(&up))
        })
        .collect();

    let h = s / 2.0;
    let mut best = (f64::INFINITY, 0.0, Vector2::zeros());
    let steps = (90.0 / COARSE_STEP_DEG).round() as usize;
    for i in 0..steps {
        let theta = (i as f64 * COARSE_STEP_DEG).to_radians();
        let center = recenter(&samples, theta, Vector2::zeros(), h);
        let center = recenter(&samples, theta, center, h);
        let cost = cost(&samples, theta, center, h);
        if cost < best.0 {
            best = (cost, theta, center);
        }
    }
    let (_, mut theta, mut center) = best;
    for _ in 0..REFINE_ITERATIONS {
        let (dc, dt) = gauss_newton_step(&samples, theta, center, h);
        center += dc;
        theta += dt;
        if dc.norm() < 1e-12 * s && dt.abs() < 1e-12 {
            break;
        }
    }
    let rms = (cost(&samples, theta, center, h) / samples.len() as f64).sqrt();
    let sides = side_counts(&samples, theta, center);
    if sides.iter().filter(|&&n| n >= 2).count() < 2 {
        return Err(PoseError::CornerFitFailed("boundary samples cover fewer than two sides".into()));
    }
    if !rms.is_finite() || rms > s / 8.0 || center.norm() > h {
        return Err(PoseError::CornerFitFailed(format!(
            "square fit residual {rms:.4} m, center offset {:.4} m",
            center.norm()
        )));
    }

    let (sin, cos) = theta.sin_cos();
    let corners2: Vec<Vector2<f64>> = [(h, h), (-h, h), (-h, -h), (h, -h)]
        .iter()
        .map(|&(x, y)| center + Vector2::new(cos * x - sin * y, sin * x + cos * y))
        .collect();
    let corners3: Vec<Vector3<f64>> = corners2
        .iter()
        .map(|c| mu + right * c.x + up * c.y)
        .collect();
    let elevation = |p: &Vector3<f64>| p.z.atan2(p.x.hypot(p.y));
    let mut top = 0;
    for i in 1..4 {
        if elevation(&corners3[i]) > elevation(&corners3[top]) {
            top = i;
        }
    }
    // corners2 is already counterclockwise in the (right, up) frame.
    Ok(std::array::from_fn(|i| {
        corners3[(top + i) % 4].map(T::lit)
    }))
}

/// Sample coordinates in the frame of a square rotated by `theta` about `center`.
fn local(q: &Vector2<f64>, theta: f64, center: Vector2<f64>) -> Vector2<f64> {
    let (sin, cos) = theta.sin_cos();
    let d = q - center;
    Vector2::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y)
}

/// Side of a local sample: 0 = +x, 1 = +y, 2 = -x, 3 = -y.
fn side(l: &Vector2<f64>) -> usize {
    if l.x.abs() >= l.y.abs() {
        if l.x >= 0.0 {
            0
        } else {
            2
        }
    } else if l.y >= 0.0 {
        1
    } else {
        3
    }
}

fn residual(l: &Vector2<f64>, h: f64) -> (usize, f64) {
    let k = side(l);
    let r = match k {
        0 => l.x - h,
        1 => l.y - h,
        2 => -l.x - h,
        _ => -l.y - h,
    };
    (k, r)
}

fn cost(samples: &[Vector2<f64>], theta: f64, center: Vector2<f64>, h: f64) -> f64 {
    samples
        .iter()
        .map(|q| residual(&local(q, theta, center), h).1.powi(2))
        .sum()
}

fn side_counts(samples: &[Vector2<f64>], theta: f64, center: Vector2<f64>) -> [usize; 4] {
    let mut n = [0; 4];
    for q in samples {
        n[side(&local(q, theta, center))] += 1;
    }
    n
}

/// Least-squares center for a fixed orientation and side assignment.
fn recenter(samples: &[Vector2<f64>], theta: f64, center: Vector2<f64>, h: f64) -> Vector2<f64> {
    let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0usize, 0.0, 0usize);
    for q in samples {
        let l = local(q, theta, center);
        let (k, r) = residual(&l, h);
        match k {
            0 => (sx, nx) = (sx + r, nx + 1),
            2 => (sx, nx) = (sx - r, nx + 1),
            1 => (sy, ny) = (sy + r, ny + 1),
            _ => (sy, ny) = (sy - r, ny + 1),
        }
    }
    let dx = if nx > 0 { sx / nx as f64 } else { 0.0 };
    let dy = if ny > 0 { sy / ny as f64 } else { 0.0 };
    let (sin, cos) = theta.sin_cos();
    center + Vector2::new(cos * dx - sin * dy, sin * dx + cos * dy)
}

/// One Gauss-Newton step on `(cx, cy, theta)`. A weak pull toward the initial center keeps
/// the normal equations regular when a direction is unobserved.
fn gauss_newton_step(
    samples: &[Vector2<f64>],
    theta: f64,
    center: Vector2<f64>,
    h: f64,
) -> (Vector2<f64>, f64) {
    let (sin, cos) = theta.sin_cos();
    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vector3::<f64>::zeros();
    for q in samples {
        let l = local(q, theta, center);
        let (k, r) = residual(&l, h);
        let j = match k {
            0 => Vector3::new(-cos, -sin, l.y),
            2 => Vector3::new(cos, sin, -l.y),
            1 => Vector3::new(sin, -cos, -l.x),
            _ => Vector3::new(-sin, cos, l.x),
        };
        jtj += j * j.transpose();
        jtr += j * r;
    }
    let prior = 1e-6 * samples.len() as f64;
    jtj[(0, 0)] += prior;
    jtj[(1, 1)] += prior;
    jtr[0] += prior * center.x;
    jtr[1] += prior * center.y;
    jtj[(2, 2)] += 1e-12 * samples.len() as f64 * h * h;
    match jtj.cholesky() {
        Some(c) => {
            let delta = -c.solve(&jtr);
            (Vector2::new(delta[0], delta[1]), delta[2])
        }
        None => (Vector2::zeros(), 0.0),
    }
}
