//! Template gridding, weighted bit voting and full tag decoding.

use std::time::Instant;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{decode_codeword, DecodeError, DecodingTable};
use crate::detection::{extract_marker, Cluster, EdgeParams};
use crate::pipeline::StageTimings;
use crate::pointcloud::Point;
use crate::pose::{
    compose_rotation, estimate_corners, estimate_partial_pose, footprint_centroid,
    procrustes_align,
    quarter_turns, template_corners, to_quaternion, PoseError, TemplateAlignment,
};
use crate::scalar::Real;

/// Cells with fewer mapped returns are bad bits.
pub const MIN_POINTS_PER_BIT: usize = 5;
/// Bit decision threshold on `P_k`, the midpoint of the nominal white and black levels.
pub const BIT_THRESHOLD: f64 = 0.5;
/// Out-of-plane tolerance as a fraction of the tag size.
pub const OUT_OF_PLANE_LIMIT: f64 = 0.1;
/// Largest fraction of out-of-plane returns accepted by [`map_to_template`].
pub const OUT_OF_PLANE_FRACTION: f64 = 0.05;

/// A return in template-plane coordinates `(y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedPoint<T: Real> {
    pub position: Vector2<T>,
    pub intensity: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell<T: Real> {
    /// `row * (d + 2) + col`; row 0 on top, column 0 on the viewer's left.
    pub index: usize,
    pub center: Vector2<T>,
    pub points: Vec<MappedPoint<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitEstimate<T: Real> {
    /// Weighted mean intensity; 0 for an empty cell.
    pub p: T,
    pub n_points: usize,
    pub is_bad: bool,
    /// `None` for bad bits, `Some(true)` for white.
    pub bit: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Gaussian,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Rejection {
    #[error("no marker boundary found")]
    NoMarker,
    #[error("pose: {0}")]
    Pose(#[from] PoseError),
    #[error("{fraction:.3} of the marker returns are out of the template plane")]
    OutOfPlane { fraction: f64 },
    #[error("border cells are not dark (mean {mean:.3})")]
    BorderNotDark { mean: f64 },
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}

impl Rejection {
    /// Pipeline stage that produced the rejection.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::NoMarker => "extraction",
            Self::Pose(_) => "pose",
            Self::OutOfPlane { .. } | Self::BorderNotDark { .. } => "voting",
            Self::Decode(_) => "decoding",
        }
    }
}

/// A decoded tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDetection<T: Real> {
    pub tag_id: u32,
    /// Marker centroid, sensor frame.
    pub mu: Vector3<T>,
    /// Tag-to-sensor rotation, scalar part non-negative.
    pub q: UnitQuaternion<T>,
    /// Clockwise quarter turns of the tag relative to the sensor's up direction.
    pub rotation_k: u8,
    pub hamming_distance: u32,
    pub bad_bits: u32,
    /// Payload cells, row-major.
    pub bits: Vec<BitEstimate<T>>,
    /// Marker corners, counterclockwise from the highest one.
    pub corners: [Vector3<T>; 4],
    pub marker_points: usize,
    pub timings: StageTimings,
}

impl<T: Real> TagDetection<T> {
    pub fn rotation(&self) -> Matrix3<T> {
        *self.q.to_rotation_matrix().matrix()
    }

    /// Front normal (toward the sensor).
    pub fn normal(&self) -> Vector3<T> {
        -(self.q * Vector3::x())
    }
}

/// Parameters of [`decode_tag`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams<T: Real> {
    pub tag_size: T,
    pub edge: EdgeParams<T>,
    pub weighting: Weighting,
    /// Gaussian variance; `tag_size / (4 (d + 2))` when `None`.
    pub sigma2: Option<T>,
    /// `floor((h - 1) / 2)` when `None`.
    pub max_bad_bits: Option<u32>,
    /// Reject candidates whose border cells are not dark on average.
    pub check_border: bool,
}

impl<T: Real> DecodeParams<T> {
    pub fn new(tag_size: T, edge: EdgeParams<T>) -> Self {
        Self {
            tag_size,
            edge,
            weighting: Weighting::Gaussian,
            sigma2: None,
            max_bad_bits: None,
            check_border: true,
        }
    }
}

/// Maps returns into the template plane with `x = R p + T`. The out-of-plane coordinate is
/// discarded; returns outside the `1.1 * tag_size` square around the origin are dropped.
pub fn map_to_template<T: Real>(
    points: &[Point<T>],
    alignment: &TemplateAlignment<T>,
    tag_size: T,
) -> Result<Vec<MappedPoint<T>>, Rejection> {
    let limit = tag_size * T::lit(OUT_OF_PLANE_LIMIT);
    let half = tag_size * T::lit(0.55);
    let mut out = Vec::with_capacity(points.len());
    let mut off_plane = 0usize;
    for p in points {
        let x = alignment.apply(&p.position);
        if x.x.abs() >= limit {
            off_plane += 1;
        }
        if x.y.abs() <= half && x.z.abs() <= half {
            out.push(MappedPoint {
                position: Vector2::new(x.y, x.z),
                intensity: p.intensity,
            });
        }
    }
    let fraction = if points.is_empty() {
        0.0
    } else {
        off_plane as f64 / points.len() as f64
    };
    if fraction > OUT_OF_PLANE_FRACTION {
        return Err(Rejection::OutOfPlane { fraction });
    }
    Ok(out)
}

/// Bins mapped returns into the `(d+2) x (d+2)` grid covering the marker. Returns outside
/// the grid are dropped.
pub fn assign_to_grid<T: Real>(points: &[MappedPoint<T>], tag_size: T, d: usize) -> Vec<GridCell<T>> {
    let n = d + 2;
    let h = tag_size / T::lit(2.0);
    let c = tag_size / T::from_usize_lossy(n);
    let half_cell = c / T::lit(2.0);
    let mut cells: Vec<GridCell<T>> = (0..n * n)
        .map(|k| {
            let (row, col) = (k / n, k % n);
            GridCell {
                index: k,
                center: Vector2::new(
                    h - T::from_usize_lossy(col) * c - half_cell,
                    h - T::from_usize_lossy(row) * c - half_cell,
                ),
                points: Vec::new(),
            }
        })
        .collect();
    for p in points {
        let col = ((h - p.position.x) / c).floor();
        let row = ((h - p.position.y) / c).floor();
        if col < T::zero() || row < T::zero() {
            continue;
        }
        let (col, row) = (col.as_f64() as usize, row.as_f64() as usize);
        if col < n && row < n {
            cells[row * n + col].points.push(*p);
        }
    }
    cells
}

/// Default Gaussian variance, `tag_size / (4 (d + 2))`.
pub fn default_sigma2<T: Real>(tag_size: T, d: usize) -> T {
    tag_size / T::from_usize_lossy(4 * (d + 2))
}

fn estimate<T: Real>(weighted: impl Iterator<Item = (T, T)>, n_points: usize) -> BitEstimate<T> {
    let (mut num, mut den) = (T::zero(), T::zero());
    for (w, i) in weighted {
        num += w * i;
        den += w;
    }
    let p = if den > T::zero() { num / den } else { T::zero() };
    let is_bad = n_points < MIN_POINTS_PER_BIT;
    BitEstimate {
        p,
        n_points,
        is_bad,
        bit: (!is_bad).then(|| p > T::lit(BIT_THRESHOLD)),
    }
}

/// Weighted vote with `w = exp(-|p - mu_k|^2 / (2 sigma2))` and the default variance.
pub fn gaussian_vote<T: Real>(cells: &[GridCell<T>], tag_size: T, d: usize) -> Vec<BitEstimate<T>> {
    gaussian_vote_with_variance(cells, default_sigma2(tag_size, d))
}

/// The normalization constant of the density cancels in `P_k`, and so does any common
/// factor; weights are taken relative to the point nearest the cell center so they cannot
/// all underflow.
pub fn gaussian_vote_with_variance<T: Real>(cells: &[GridCell<T>], sigma2: T) -> Vec<BitEstimate<T>> {
    let two_s2 = T::lit(2.0) * sigma2;
    cells
        .iter()
        .map(|cell| {
            let d2: Vec<T> = cell
                .points
                .iter()
                .map(|p| (p.position - cell.center).norm_squared())
                .collect();
            let nearest = d2.iter().copied().fold(T::max_value().unwrap_or(T::zero()), |a, b| a.min(b));
            estimate(
                cell.points
                    .iter()
                    .zip(&d2)
                    .map(|(p, &q)| (((nearest - q) / two_s2).exp(), p.intensity)),
                cell.points.len(),
            )
        })
        .collect()
}

/// Unweighted mean intensity per cell.
pub fn equal_weight_vote<T: Real>(cells: &[GridCell<T>]) -> Vec<BitEstimate<T>> {
    cells
        .iter()
        .map(|cell| estimate(cell.points.iter().map(|p| (T::one(), p.intensity)), cell.points.len()))
        .collect()
}

/// Payload word and unknown-bit mask from a full-grid vote.
pub fn payload_word<T: Real>(bits: &[BitEstimate<T>], d: usize) -> (u64, u64) {
    let n = d + 2;
    let (mut word, mut unknown) = (0u64, 0u64);
    for r in 0..d {
        for c in 0..d {
            let shift = d * d - 1 - (r * d + c);
            match bits[(r + 1) * n + c + 1].bit {
                Some(true) => word |= 1 << shift,
                Some(false) => {}
                None => unknown |= 1 << shift,
            }
        }
    }
    (word, unknown)
}

/// Mean `P_k` over the non-empty border cells.
pub fn border_mean<T: Real>(bits: &[BitEstimate<T>], d: usize) -> Option<f64> {
    let n = d + 2;
    let (mut sum, mut count) = (0.0, 0usize);
    for (k, b) in bits.iter().enumerate() {
        let (r, c) = (k / n, k % n);
        let border = r == 0 || c == 0 || r == n - 1 || c == n - 1;
        if border && b.n_points > 0 {
            sum += b.p.as_f64();
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Decodes a validated cluster.
pub fn decode_tag<T: Real>(
    cluster: &Cluster<T>,
    table: &DecodingTable,
    params: &DecodeParams<T>,
) -> Result<TagDetection<T>, Rejection> {
    let mut timings = StageTimings::default();
    decode_cluster(cluster, table, params, &mut timings)
}

/// [`decode_tag`] recording the time spent in the extraction, pose, voting and decoding
/// stages, including for rejected clusters.
pub(crate) fn decode_cluster<T: Real>(
    cluster: &Cluster<T>,
    table: &DecodingTable,
    params: &DecodeParams<T>,
    timings: &mut StageTimings,
) -> Result<TagDetection<T>, Rejection> {
    let d = table.family().d;
    let start = Instant::now();
    let marker = extract_marker(cluster, &params.edge);
    timings.extraction += ms(start);
    if marker.points.len() < 3 || marker.boundary.len() < 4 {
        return Err(Rejection::NoMarker);
    }

    let start = Instant::now();
    let pose = (|| {
        let mut partial = estimate_partial_pose(&marker.points)?;
        if let Some(center) = footprint_centroid(&marker.points, &partial.normal) {
            partial.mu = center;
        }
        let corners = estimate_corners(&marker.boundary, &partial, params.tag_size)?;
        let alignment = procrustes_align(&corners, &template_corners(params.tag_size), &partial)?;
        Ok::<_, PoseError>((partial, corners, alignment))
    })();
    timings.pose += ms(start);
    let (partial, corners, alignment) = pose?;

    let start = Instant::now();
    let voted = (|| {
        let mapped = map_to_template(&marker.points, &alignment, params.tag_size)?;
        let cells = assign_to_grid(&mapped, params.tag_size, d);
        let bits = match params.weighting {
            Weighting::Gaussian => gaussian_vote_with_variance(
                &cells,
                params.sigma2.unwrap_or_else(|| default_sigma2(params.tag_size, d)),
            ),
            Weighting::Equal => equal_weight_vote(&cells),
        };
        if params.check_border {
            if let Some(mean) = border_mean(&bits, d) {
                if mean >= BIT_THRESHOLD {
                    return Err(Rejection::BorderNotDark { mean });
                }
            }
        }
        Ok(bits)
    })();
    timings.voting += ms(start);
    let bits = voted?;

    let start = Instant::now();
    let (word, unknown) = payload_word(&bits, d);
    let max_bad = params.max_bad_bits.unwrap_or_else(|| table.max_correctable());
    let decoded = decode_codeword(table, word, unknown, max_bad);
    let detection = decoded.map(|r| {
        let rotation = compose_rotation(&alignment, r.rotation_k);
        let n = d + 2;
        TagDetection {
            tag_id: r.tag_id,
            mu: partial.mu,
            q: to_quaternion(&rotation),
            rotation_k: quarter_turns(&rotation),
            hamming_distance: r.hamming_distance,
            bad_bits: unknown.count_ones(),
            bits: (0..d * d)
                .map(|i| bits[(i / d + 1) * n + i % d + 1])
                .collect(),
            corners,
            marker_points: marker.points.len(),
            timings: StageTimings::default(),
        }
    });
    timings.decoding += ms(start);
    Ok(detection?)
}

pub(crate) fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
