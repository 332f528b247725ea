//! Synthetic multi-beam LiDAR renderer.
//!
//! Rays leave the sensor origin along `(cos e cos a, cos e sin a, sin e)` for every beam
//! elevation `e` and azimuth `a`. Each ray returns the nearest hit among the tag plates and
//! box obstacles, or a point on a background sphere. Every return carries a label so the
//! renderer doubles as a ground-truth oracle.
//!
//! # Tag frame
//!
//! A tag's local frame has the marker in the `y`-`z` plane with its printed side facing
//! `-x`. Seen from the front, local `+z` is up and local `+y` points to the viewer's left.
//! Grid row 0 is the top row and column 0 the leftmost column, matching the codeword
//! layout in [`crate::codebook`].

mod noise;
mod scene_file;

pub use noise::{apply_noise, transition_adjacent, NoiseModel, TRANSITION_CONTRAST};
pub use scene_file::{LidarSpec, ObstacleSpec, SceneDescription};

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{cell, TagFamily};
use crate::pointcloud::{build_scan, Point, Scan};

/// Nominal intensity of white cells and of the backing.
pub const WHITE: f64 = 0.9;
/// Nominal intensity of black cells.
pub const BLACK: f64 = 0.1;
/// Default background intensity, chosen so that backing/background boundaries stay below
/// the default intensity-edge threshold.
pub const BACKGROUND_INTENSITY: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid lidar model: {0}")]
    InvalidModel(String),
    #[error("target {index} is behind the sensor or faces away from it")]
    TargetBehindSensor { index: usize },
    #[error("target {index} at {distance:.3} m is outside the usable range {limit:.3} m")]
    TargetOutOfRange {
        index: usize,
        distance: f64,
        limit: f64,
    },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// Beam layout of a spinning multi-beam sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarModel {
    /// One elevation per beam, radians, strictly increasing. Beam 0 is the lowest.
    pub elevation_angles: Vec<f64>,
    /// Azimuth increment between consecutive firings, radians.
    pub azimuth_step: f64,
    /// Azimuth of firing index 0, radians.
    pub azimuth_start: f64,
    /// Firings per beam.
    pub azimuth_count: usize,
    pub max_range: f64,
}

impl LidarModel {
    /// Full-revolution model.
    pub fn new(elevation_angles: Vec<f64>, azimuth_step: f64, max_range: f64) -> Self {
        let azimuth_count = if azimuth_step > 0.0 {
            (std::f64::consts::TAU / azimuth_step).round() as usize
        } else {
            0
        };
        Self {
            elevation_angles,
            azimuth_step,
            azimuth_start: -std::f64::consts::PI,
            azimuth_count,
            max_range,
        }
    }

    /// `num_beams` beams evenly spaced over `[min_deg, max_deg]`.
    pub fn uniform(
        num_beams: usize,
        min_deg: f64,
        max_deg: f64,
        azimuth_step_deg: f64,
        max_range: f64,
    ) -> Self {
        let elevations = (0..num_beams)
            .map(|i| {
                let t = if num_beams > 1 {
                    i as f64 / (num_beams - 1) as f64
                } else {
                    0.5
                };
                (min_deg + t * (max_deg - min_deg)).to_radians()
            })
            .collect();
        Self::new(elevations, azimuth_step_deg.to_radians(), max_range)
    }

    /// Restricts firings to the azimuth interval `[min_deg, max_deg]`.
    pub fn with_azimuth_window(mut self, min_deg: f64, max_deg: f64) -> Self {
        self.azimuth_start = min_deg.to_radians();
        self.azimuth_count = if self.azimuth_step > 0.0 && max_deg >= min_deg {
            ((max_deg - min_deg).to_radians() / self.azimuth_step + 1e-9).floor() as usize + 1
        } else {
            0
        };
        self
    }

    /// 32 beams over +-15 degrees, 0.2 degree azimuth step, full revolution.
    pub fn puck32() -> Self {
        Self::uniform(32, -15.0, 15.0, 0.2, 100.0)
    }

    /// 301 beams over +-12 degrees with a 0.08 degree grid in both directions, limited to a
    /// +-12 degree azimuth window (about 90k returns).
    pub fn dense() -> Self {
        Self::uniform(301, -12.0, 12.0, 0.08, 20.0).with_azimuth_window(-12.0, 12.0)
    }

    pub fn num_beams(&self) -> usize {
        self.elevation_angles.len()
    }

    pub fn azimuth(&self, index: usize) -> f64 {
        self.azimuth_start + index as f64 * self.azimuth_step
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.elevation_angles.is_empty() {
            return Err(SynthError::InvalidModel("no beams".into()));
        }
        if self.elevation_angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SynthError::InvalidModel(
                "elevation angles must be strictly increasing".into(),
            ));
        }
        if self
            .elevation_angles
            .iter()
            .any(|e| !e.is_finite() || e.abs() >= std::f64::consts::FRAC_PI_2)
        {
            return Err(SynthError::InvalidModel("elevation outside (-90, 90) degrees".into()));
        }
        if !(self.azimuth_step > 0.0) || !self.azimuth_step.is_finite() {
            return Err(SynthError::InvalidModel("azimuth step must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(SynthError::InvalidModel("max range must be positive".into()));
        }
        if self.azimuth_count as u64 > u32::MAX as u64 {
            return Err(SynthError::InvalidModel("too many firings per beam".into()));
        }
        Ok(())
    }
}

/// A marker printed on a square plate.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTarget {
    pub tag_id: u32,
    /// Payload side in cells.
    pub d: usize,
    pub codeword: u64,
    /// Side of the full marker (border included), meters.
    pub tag_size: f64,
    /// Tag frame to sensor frame.
    pub mount_pose: Isometry3<f64>,
    /// White plate margin around the marker, meters.
    pub backing_extent: f64,
}

impl TagTarget {
    /// Target for codeword `tag_id` of `family`. The backing defaults to one cell width.
    pub fn new(
        family: &TagFamily,
        tag_id: u32,
        tag_size: f64,
        mount_pose: Isometry3<f64>,
    ) -> Result<Self, SynthError> {
        let codeword = *family.codewords.get(tag_id as usize).ok_or_else(|| {
            SynthError::InvalidTarget(format!(
                "tag id {tag_id} not in family {} ({} codewords)",
                family.name,
                family.len()
            ))
        })?;
        if !(tag_size > 0.0) {
            return Err(SynthError::InvalidTarget("tag size must be positive".into()));
        }
        Ok(Self {
            tag_id,
            d: family.d,
            codeword,
            tag_size,
            mount_pose,
            backing_extent: tag_size / (family.d + 2) as f64,
        })
    }

    /// Grid cell side, meters.
    pub fn cell_size(&self) -> f64 {
        self.tag_size / (self.d + 2) as f64
    }

    /// Front-facing unit normal (toward the viewer) in the sensor frame.
    pub fn front_normal(&self) -> Vector3<f64> {
        -(self.mount_pose.rotation * Vector3::x())
    }

    /// Marker corners in the sensor frame, ordered top-left, bottom-left, bottom-right,
    /// top-right as seen from the front.
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let h = self.tag_size / 2.0;
        [(h, h), (h, -h), (-h, -h), (-h, h)]
            .map(|(y, z)| (self.mount_pose * Point3::new(0.0, y, z)).coords)
    }

    /// Intensity and label of the plate at local `(y, z)`, or `None` off the plate.
    pub fn sample(&self, y: f64, z: f64) -> Option<(f64, Surface)> {
        let h = self.tag_size / 2.0;
        let outer = h + self.backing_extent;
        if y.abs() > outer || z.abs() > outer {
            return None;
        }
        if y.abs() > h || z.abs() > h {
            return Some((WHITE, Surface::Backing));
        }
        let n = self.d + 2;
        let c = self.cell_size();
        let col = (((h - y) / c).floor() as usize).min(n - 1);
        let row = (((h - z) / c).floor() as usize).min(n - 1);
        let border = row == 0 || col == 0 || row == n - 1 || col == n - 1;
        let white = !border && cell(self.codeword, self.d, row - 1, col - 1);
        let intensity = if white { WHITE } else { BLACK };
        Some((
            intensity,
            Surface::Cell {
                row: row as u8,
                col: col as u8,
            },
        ))
    }

    pub fn truth(&self) -> TagTruth {
        let q = self.mount_pose.rotation;
        TagTruth {
            tag_id: self.tag_id,
            mu: self.mount_pose.translation.vector.into(),
            q: [q.w, q.i, q.j, q.k],
            rotation_k: quarter_turns(q.to_rotation_matrix().matrix()),
            normal: self.front_normal().into(),
            corners: self.corners().map(Into::into),
        }
    }
}

/// Which part of a tag plate a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Backing,
    /// Cell of the full `(d+2) x (d+2)` grid, border included.
    Cell { row: u8, col: u8 },
}

/// Axis-aligned box in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub intensity: f64,
}

impl Obstacle {
    fn intersect(&self, dir: &Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let inv = 1.0 / dir[a];
            let (mut lo, mut hi) = (self.min[a] * inv, self.max[a] * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            if lo.is_nan() || hi.is_nan() {
                // Ray parallel to the slab: inside iff the origin lies between the planes.
                if self.min[a] > 0.0 || self.max[a] < 0.0 {
                    return None;
                }
                continue;
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }
}

/// Per-return ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnLabel {
    Background,
    Obstacle { index: usize },
    Backing { target: usize },
    Marker { target: usize, row: u8, col: u8 },
}

impl ReturnLabel {
    pub fn target(&self) -> Option<usize> {
        match *self {
            Self::Backing { target } | Self::Marker { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn is_marker_of(&self, index: usize) -> bool {
        matches!(*self, Self::Marker { target, .. } if target == index)
    }
}

/// Pose and identity of a rendered tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTruth {
    pub tag_id: u32,
    /// Marker center, sensor frame.
    pub mu: [f64; 3],
    /// Tag-to-sensor rotation `[w, x, y, z]`.
    pub q: [f64; 4],
    pub rotation_k: u8,
    /// Front normal, sensor frame.
    pub normal: [f64; 3],
    /// Top-left, bottom-left, bottom-right, top-right.
    pub corners: [[f64; 3]; 4],
}

impl TagTruth {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.q;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }
}

/// Everything the renderer draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub model: LidarModel,
    pub targets: Vec<TagTarget>,
    pub obstacles: Vec<Obstacle>,
    pub background_range: f64,
    pub background_intensity: f64,
}

impl Scene {
    pub fn new(model: LidarModel, target: TagTarget, background_range: f64) -> Self {
        Self {
            model,
            targets: vec![target],
            obstacles: Vec::new(),
            background_range,
            background_intensity: BACKGROUND_INTENSITY,
        }
    }
}

/// A rendered scan together with its per-return labels (canonical order) and tag truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub scan: Scan<f64>,
    pub labels: Vec<ReturnLabel>,
    pub truths: Vec<TagTruth>,
}

impl Rendered {
    /// Returns labeled as belonging to target `index` (marker or backing).
    pub fn target_return_count(&self, index: usize) -> usize {
        self.labels
            .iter()
            .filter(|l| l.target() == Some(index))
            .count()
    }

    pub fn marker_return_count(&self, index: usize) -> usize {
        self.labels.iter().filter(|l| l.is_marker_of(index)).count()
    }

    /// Applies `noise`, keeping labels aligned with the surviving returns.
    pub fn with_noise(&self, noise: &NoiseModel) -> Result<Self, SynthError> {
        let (scan, kept) = noise::apply_noise_with_mask(&self.scan, noise)?;
        let labels = self
            .labels
            .iter()
            .zip(kept)
            .filter_map(|(l, k)| k.then_some(*l))
            .collect();
        Ok(Self {
            scan,
            labels,
            truths: self.truths.clone(),
        })
    }
}

/// Renders a single tag in front of a background sphere.
pub fn render_scene(
    model: &LidarModel,
    target: &TagTarget,
    background_range: f64,
) -> Result<Scan<f64>, SynthError> {
    Ok(render(&Scene::new(model.clone(), target.clone(), background_range))?.scan)
}

pub fn render(scene: &Scene) -> Result<Rendered, SynthError> {
    let model = &scene.model;
    model.validate()?;
    if !(scene.background_range > 0.0) || scene.background_range > model.max_range {
        return Err(SynthError::InvalidModel(format!(
            "background range {} must lie in (0, {}]",
            scene.background_range, model.max_range
        )));
    }
    if !(0.0..=1.0).contains(&scene.background_intensity) {
        return Err(SynthError::InvalidModel("background intensity outside [0, 1]".into()));
    }
    for o in &scene.obstacles {
        if !(0.0..=1.0).contains(&o.intensity) || (0..3).any(|a| o.min[a] > o.max[a]) {
            return Err(SynthError::InvalidModel("malformed obstacle".into()));
        }
    }
    // Plane data per target: inverse pose, world normal (+x local), distance of the plane.
    let mut planes = Vec::with_capacity(scene.targets.len());
    for (index, t) in scene.targets.iter().enumerate() {
        let center = t.mount_pose.translation.vector;
        let distance = center.norm();
        let away = t.mount_pose.rotation * Vector3::x();
        if distance <= 0.0 || away.dot(&center) <= 0.0 {
            return Err(SynthError::TargetBehindSensor { index });
        }
        let reach = distance + std::f64::consts::SQRT_2 * (t.tag_size / 2.0 + t.backing_extent);
        let limit = scene.background_range.min(model.max_range);
        if reach >= limit {
            return Err(SynthError::TargetOutOfRange {
                index,
                distance,
                limit,
            });
        }
        planes.push((t.mount_pose.inverse(), away, away.dot(&center)));
    }

    let az: Vec<(f64, f64)> = (0..model.azimuth_count)
        .map(|j| {
            let a = model.azimuth(j);
            (a.cos(), a.sin())
        })
        .collect();
    let mut points = Vec::with_capacity(model.num_beams() * model.azimuth_count);
    let mut labels = Vec::with_capacity(points.capacity());
    for (beam, &e) in model.elevation_angles.iter().enumerate() {
        let (se, ce) = e.sin_cos();
        for (j, &(ca, sa)) in az.iter().enumerate() {
            let dir = Vector3::new(ce * ca, ce * sa, se);
            let mut best = scene.background_range;
            let mut label = ReturnLabel::Background;
            let mut intensity = scene.background_intensity;
            for (index, (t, (inv, away, offset))) in
                scene.targets.iter().zip(&planes).enumerate()
            {
                let denom = dir.dot(away);
                if denom <= 1e-12 {
                    continue;
                }
                let s = offset / denom;
                if s <= 0.0 || s >= best {
                    continue;
                }
                let local = inv * Point3::from(dir * s);
                if let Some((i, surface)) = t.sample(local.y, local.z) {
                    best = s;
                    intensity = i;
                    label = match surface {
                        Surface::Backing => ReturnLabel::Backing { target: index },
                        Surface::Cell { row, col } => ReturnLabel::Marker {
                            target: index,
                            row,
                            col,
                        },
                    };
                }
            }
            for (index, o) in scene.obstacles.iter().enumerate() {
                if let Some(s) = o.intersect(&dir) {
                    if s < best {
                        best = s;
                        intensity = o.intensity;
                        label = ReturnLabel::Obstacle { index };
                    }
                }
            }
            points.push(Point::new(dir * best, intensity, beam as u32, j as u32));
            labels.push(label);
        }
    }
    // Points are generated in canonical order, so labels stay aligned after grouping.
    let scan = build_scan(points, model.num_beams()).expect("renderer emits a valid scan");
    Ok(Rendered {
        scan,
        labels,
        truths: scene.targets.iter().map(TagTarget::truth).collect(),
    })
}

/// Pose that places a tag's center at `center` facing the sensor origin, upright, and then
/// applies `in_plane` (a rotation about the tag's own `x` axis, positive = clockwise as seen
/// from the front) after an optional `tilt` about local axes.
pub fn facing_pose(center: Vector3<f64>, tilt: UnitQuaternion<f64>, in_plane: f64) -> Isometry3<f64> {
    let away = center.normalize();
    let mut left = Vector3::z().cross(&away);
    if left.norm() < 1e-9 {
        left = Vector3::y();
    }
    let left = left.normalize();
    let up = away.cross(&left);
    let face = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[away, left, up]));
    let rotation = UnitQuaternion::from_rotation_matrix(&face)
        * tilt
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), in_plane);
    Isometry3::from_parts(Translation3::from(center), rotation)
}

/// Number of clockwise quarter turns (as seen from the front) of a tag with tag-to-sensor
/// rotation `r`, measured from the sensor's up direction expressed in the tag frame.
pub fn quarter_turns(r: &Matrix3<f64>) -> u8 {
    let a = r.transpose() * Vector3::z();
    let angle = a.y.atan2(a.z).to_degrees();
    ((angle / 90.0).round() as i64).rem_euclid(4) as u8
}
