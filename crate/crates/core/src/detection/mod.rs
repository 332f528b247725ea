//! Candidate tag localization: edge detection, clustering, cluster fill, validation and
//! payload boundary extraction.

mod index;

pub use index::ScanIndex;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::codebook::TagFamily;
use crate::pointcloud::{Point, Scan};
use crate::scalar::Real;

/// Gradient kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeParams<T: Real> {
    /// Neighbor offset of the distance gradient.
    pub ell_distance: usize,
    /// Meters.
    pub distance_threshold: T,
    /// Neighbor offset of the intensity gradient.
    pub ell_intensity: usize,
    /// On normalized intensities.
    pub intensity_threshold: T,
    /// Also feed intensity edges to the clustering stage. Distance edges alone only mark
    /// the left and right silhouette of a plate, which sit further apart than the linkage
    /// window; the printed pattern's intensity edges bridge them.
    pub cluster_intensity_edges: bool,
}

impl<T: Real> EdgeParams<T> {
    /// Defaults for a sensor with the given azimuth step (radians) and maximum tag range:
    /// the distance threshold is twice the spacing of returns `ell_distance` apart at that
    /// range.
    pub fn for_sensor(azimuth_step: f64, max_range: f64) -> Self {
        let ell = 2;
        Self {
            ell_distance: ell,
            distance_threshold: T::lit(2.0 * ell as f64 * azimuth_step * max_range),
            ell_intensity: 1,
            intensity_threshold: T::lit(0.4),
            cluster_intensity_edges: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ell_distance == 0 || self.ell_intensity == 0 {
            return Err("neighbor offsets must be >= 1".into());
        }
        if !(self.distance_threshold > T::zero()) || !(self.intensity_threshold > T::zero()) {
            return Err("thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EdgeParams<U> {
        EdgeParams {
            ell_distance: self.ell_distance,
            distance_threshold: U::lit(self.distance_threshold.as_f64()),
            ell_intensity: self.ell_intensity,
            intensity_threshold: U::lit(self.intensity_threshold.as_f64()),
            cluster_intensity_edges: self.cluster_intensity_edges,
        }
    }
}

impl<T: Real> Default for EdgeParams<T> {
    /// 0.2 degree azimuth step, tags up to 20 m.
    fn default() -> Self {
        Self::for_sensor(0.2f64.to_radians(), 20.0)
    }
}

/// Axis-aligned box, the `b_1..b_6` of a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T: Real> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> Bounds<T> {
    pub fn around(p: &Vector3<T>, half: T) -> Self {
        let h = Vector3::repeat(half);
        Self {
            min: p - h,
            max: p + h,
        }
    }

    pub fn contains(&self, p: &Vector3<T>) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Linkage test: `min - margin <= p <= max + margin` on every axis.
    pub fn contains_with_margin(&self, p: &Vector3<T>, margin: T) -> bool {
        (0..3).all(|a| self.min[a] - margin <= p[a] && p[a] <= self.max[a] + margin)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    pub fn extend(&mut self, p: &Vector3<T>) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn center(&self) -> Vector3<T> {
        (self.min + self.max) * T::lit(0.5)
    }
}

/// A cuboid-bounded group of edge points, later filled with the scan returns it encloses.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    pub edge_points: Vec<Point<T>>,
    /// Empty until filled. Canonical scan order.
    pub filled_points: Vec<Point<T>>,
    pub bounds: Bounds<T>,
    pub tau: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    TooFewPoints,
    TooFewPayloadEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Filled point count.
    pub eta: usize,
    /// Payload edge count.
    pub psi: usize,
    pub passed: bool,
    pub reject_reason: Option<RejectReason>,
}

/// Minimum filled points for a `d x d` payload: five returns per cell of the roughly
/// `(d+4) x (d+4)` tag.
pub fn eta_min(d: usize) -> usize {
    5 * (d + 4) * (d + 4)
}

/// Minimum payload edges: one beam per grid row, entering and leaving.
pub fn psi_min(d: usize) -> usize {
    2 * (d + 2)
}

fn is_edge<T: Real>(beam: &[Point<T>], i: usize, ell: usize, metric: impl Fn(&Point<T>, &Point<T>) -> T, threshold: T) -> bool {
    let p = &beam[i];
    let ahead = beam.get(i + ell).map(|q| metric(q, p));
    let behind = i.checked_sub(ell).map(|j| metric(&beam[j], p));
    match (ahead, behind) {
        (Some(a), Some(b)) => a.max(b) > threshold,
        (Some(g), None) | (None, Some(g)) => g > threshold,
        (None, None) => false,
    }
}

fn range_gap<T: Real>(a: &Point<T>, b: &Point<T>) -> T {
    (a.position - b.position).norm()
}

fn intensity_gap<T: Real>(a: &Point<T>, b: &Point<T>) -> T {
    (a.intensity - b.intensity).abs()
}

/// Distance-discontinuity edges, per beam over sequence positions. Canonical order.
pub fn detect_edges<T: Real>(scan: &Scan<T>, params: &EdgeParams<T>) -> Vec<Point<T>> {
    let mut out = Vec::new();
    for beam in scan.beams() {
        for i in 0..beam.len() {
            if is_edge(beam, i, params.ell_distance, range_gap, params.distance_threshold) {
                out.push(beam[i]);
            }
        }
    }
    out
}

/// Intensity-gradient edges over whole beams. Canonical order.
pub fn detect_intensity_edges<T: Real>(scan: &Scan<T>, params: &EdgeParams<T>) -> Vec<Point<T>> {
    let mut out = Vec::new();
    for beam in scan.beams() {
        for i in 0..beam.len() {
            if is_edge(beam, i, params.ell_intensity, intensity_gap, params.intensity_threshold) {
                out.push(beam[i]);
            }
        }
    }
    out
}

/// Edge points handed to clustering: distance edges, plus intensity edges when
/// `cluster_intensity_edges` is set. Canonical order, no duplicates.
pub fn detect_candidate_edges<T: Real>(scan: &Scan<T>, params: &EdgeParams<T>) -> Vec<Point<T>> {
    if !params.cluster_intensity_edges {
        return detect_edges(scan, params);
    }
    let mut out = Vec::new();
    for beam in scan.beams() {
        for i in 0..beam.len() {
            if is_edge(beam, i, params.ell_distance, range_gap, params.distance_threshold)
                || is_edge(beam, i, params.ell_intensity, intensity_gap, params.intensity_threshold)
            {
                out.push(beam[i]);
            }
        }
    }
    out
}

/// Single-pass linkage clustering with `tau = tag_size / 4`.
///
/// Each edge point joins the first cluster whose bounds, widened by `tau`, contain it and
/// extends that cluster's bounds to cover `p +- tau`; otherwise it seeds a new cluster with
/// bounds `p +- tau`. A point thus links to a cluster within Chebyshev distance `2 tau` of
/// some member. Clusters are not merged here; see [`merge_overlapping`].
pub fn cluster_edges<T: Real>(edges: &[Point<T>], tag_size: T) -> Vec<Cluster<T>> {
    let tau = tag_size / T::lit(4.0);
    let mut clusters: Vec<Cluster<T>> = Vec::new();
    for p in edges {
        match clusters
            .iter_mut()
            .find(|c| c.bounds.contains_with_margin(&p.position, tau))
        {
            Some(c) => {
                let own = Bounds::around(&p.position, tau);
                c.bounds.extend(&own.min);
                c.bounds.extend(&own.max);
                c.edge_points.push(*p);
            }
            None => clusters.push(Cluster {
                edge_points: vec![*p],
                filled_points: Vec::new(),
                bounds: Bounds::around(&p.position, tau),
                tau,
            }),
        }
    }
    clusters
}

/// Merges clusters whose bounds intersect, until no such pair remains. A merged cluster keeps the position of its
/// earliest member; edge points stay in canonical order.
///
/// The single-pass linkage seeds separate clusters on the two silhouettes of a plate and
/// lets both grow into the marker, so one tag usually ends up split across overlapping
/// clusters. Disjoint clusters are left untouched.
pub fn merge_overlapping<T: Real>(mut clusters: Vec<Cluster<T>>) -> Vec<Cluster<T>> {
    // Repeat full passes: a cluster that grows can start to overlap one already visited.
    let mut changed = true;
    while changed {
        changed = false;
        let mut i = 0;
        while i < clusters.len() {
            let mut j = i + 1;
            while j < clusters.len() {
                if clusters[i].bounds.intersects(&clusters[j].bounds) {
                    let other = clusters.remove(j);
                    absorb(&mut clusters[i], other);
                    changed = true;
                    j = i + 1;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
    }
    clusters
}

fn absorb<T: Real>(into: &mut Cluster<T>, other: Cluster<T>) {
    into.bounds.extend(&other.bounds.min);
    into.bounds.extend(&other.bounds.max);
    into.edge_points.extend(other.edge_points);
    into.edge_points.sort_by_key(|p| (p.beam, p.azimuth_index));
    into.filled_points.clear();
}

/// Fills `cluster` with every return of `scan` inside its bounds (inclusive), in canonical
/// order. Linear in the scan size; [`ScanIndex::fill`] gives the same result faster.
pub fn fill_cluster<T: Real>(scan: &Scan<T>, cluster: &Cluster<T>) -> Cluster<T> {
    Cluster {
        filled_points: scan
            .iter()
            .filter(|p| cluster.bounds.contains(&p.position))
            .copied()
            .collect(),
        ..cluster.clone()
    }
}

/// Splits canonically ordered points into per-beam runs.
fn beam_runs<T: Real>(points: &[Point<T>]) -> impl Iterator<Item = &[Point<T>]> {
    points.chunk_by(|a, b| a.beam == b.beam)
}

/// Intensity-gradient edges among the filled points, per beam in azimuth order.
pub fn extract_payload_edges<T: Real>(cluster: &Cluster<T>, params: &EdgeParams<T>) -> Vec<Point<T>> {
    let mut out = Vec::new();
    for run in beam_runs(&cluster.filled_points) {
        for i in 0..run.len() {
            if is_edge(run, i, params.ell_intensity, intensity_gap, params.intensity_threshold) {
                out.push(run[i]);
            }
        }
    }
    out
}

pub fn validate_cluster<T: Real>(
    cluster: &Cluster<T>,
    family: &TagFamily,
    payload_edges: &[Point<T>],
) -> ValidationReport {
    let eta = cluster.filled_points.len();
    let psi = payload_edges.len();
    let reject_reason = if eta < eta_min(family.d) {
        Some(RejectReason::TooFewPoints)
    } else if psi < psi_min(family.d) {
        Some(RejectReason::TooFewPayloadEdges)
    } else {
        None
    };
    ValidationReport {
        eta,
        psi,
        passed: reject_reason.is_none(),
        reject_reason,
    }
}

/// Returns on the printed marker and samples of its outer boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker<T: Real> {
    /// Returns strictly between the first and the last intensity transition of each beam.
    pub points: Vec<Point<T>>,
    /// Midpoints of the first and last transition of each beam.
    pub boundary: Vec<Vector3<T>>,
}

/// Locates the marker inside a filled cluster. On every beam the outermost intensity
/// transitions mark where the ray enters and leaves the dark border; beams with fewer than
/// two transitions or no return between them contribute nothing.
pub fn extract_marker<T: Real>(cluster: &Cluster<T>, params: &EdgeParams<T>) -> Marker<T> {
    let mut points = Vec::new();
    let mut boundary = Vec::new();
    let thr = params.intensity_threshold;
    let half = T::lit(0.5);
    for run in beam_runs(&cluster.filled_points) {
        let step = |i: usize| (run[i + 1].intensity - run[i].intensity).abs() > thr;
        let n = run.len();
        if n < 3 {
            continue;
        }
        let Some(first) = (0..n - 1).find(|&i| step(i)) else {
            continue;
        };
        let last = (0..n - 1).rev().find(|&i| step(i)).expect("first exists");
        // Marker occupies first+1 ..= last.
        if last <= first {
            continue;
        }
        points.extend_from_slice(&run[first + 1..=last]);
        boundary.push((run[first].position + run[first + 1].position) * half);
        boundary.push((run[last].position + run[last + 1].position) * half);
    }
    Marker { points, boundary }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::build_scan;

    fn p(beam: u32, az: u32, x: f64, y: f64, z: f64, i: f64) -> Point<f64> {
        Point::new(Vector3::new(x, y, z), i, beam, az)
    }

    #[test]
    fn overlapping_clusters_merge() {
        // tau = 0.1. Seeds at 0 and 0.5 are too far apart to link; the first cluster then
        // grows through 0.2 and 0.35 until its bounds reach the second one.
        let edges = [
            p(0, 0, 0.0, 0.0, 0.0, 0.5),
            p(0, 1, 0.0, 0.5, 0.0, 0.5),
            p(1, 0, 0.0, 0.2, 0.0, 0.5),
            p(1, 1, 0.0, 0.35, 0.0, 0.5),
            p(2, 0, 0.0, 5.0, 0.0, 0.5),
        ];
        let clusters = cluster_edges(&edges, 0.4);
        assert_eq!(clusters.len(), 3);
        assert!(clusters[0].bounds.intersects(&clusters[1].bounds));
        let merged = merge_overlapping(clusters);
        assert_eq!(merged.len(), 2);
        let order: Vec<_> = merged[0].edge_points.iter().map(|q| (q.beam, q.azimuth_index)).collect();
        assert_eq!(order, [(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!((merged[0].bounds.min.y + 0.1).abs() < 1e-12);
        assert!((merged[0].bounds.max.y - 0.6).abs() < 1e-12);
        for c in &merged {
            assert!(c.edge_points.iter().all(|q| c.bounds.contains(&q.position)));
        }
        assert!(!merged[0].bounds.intersects(&merged[1].bounds));
    }

    fn params() -> EdgeParams<f64> {
        EdgeParams {
            distance_threshold: 0.5,
            ..EdgeParams::default()
        }
    }

    #[test]
    fn flat_wall_has_no_edges() {
        let pts = (0..100).map(|a| p(0, a, 5.0, a as f64 * 0.01, 0.0, 0.5));
        let scan = build_scan(pts, 1).unwrap();
        assert!(detect_edges(&scan, &params()).is_empty());
    }

    #[test]
    fn single_point_beam_has_no_edges() {
        let scan = build_scan(vec![p(0, 0, 1.0, 0.0, 0.0, 0.5)], 1).unwrap();
        assert!(detect_edges(&scan, &params()).is_empty());
    }

    #[test]
    fn depth_jump_marks_both_sides_within_ell() {
        // Near surface for indices 0..10, far surface from 10 on.
        let pts = (0..20).map(|a| {
            let x = if a < 10 { 2.0 } else { 8.0 };
            p(0, a, x, a as f64 * 0.01, 0.0, 0.5)
        });
        let scan = build_scan(pts, 1).unwrap();
        let idx: Vec<u32> = detect_edges(&scan, &params())
            .iter()
            .map(|p| p.azimuth_index)
            .collect();
        assert_eq!(idx, vec![8, 9, 10, 11]);
    }

    #[test]
    fn linkage_examples() {
        let far = [p(0, 0, 0.0, 0.0, 0.0, 0.5), p(0, 1, 1.0, 1.0, 1.0, 0.5)];
        assert_eq!(cluster_edges(&far, 0.4).len(), 2);
        let same = [p(0, 0, 1.0, 1.0, 1.0, 0.5), p(0, 1, 1.0, 1.0, 1.0, 0.5)];
        let c = cluster_edges(&same, 0.4);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].edge_points.len(), 2);
    }

    #[test]
    fn linkage_window_is_bounds_plus_tau() {
        // tau = 0.1; seed bounds are +-0.1, so a point 0.2 away still links and extends the
        // bounds to 0.3. A point 0.41 further on is out of reach.
        let pts = [p(0, 0, 0.0, 0.0, 0.0, 0.5), p(0, 1, 0.2, 0.0, 0.0, 0.5), p(0, 2, 0.61, 0.0, 0.0, 0.5)];
        let c = cluster_edges(&pts, 0.4);
        assert_eq!(c.len(), 2);
        assert!((c[0].bounds.max.x - 0.3).abs() < 1e-12);
        assert_eq!(c[0].bounds.min.x, -0.1);
    }

    #[test]
    fn fill_examples() {
        let pts: Vec<_> = (0..10).map(|a| p(0, a, a as f64, 0.0, 0.0, 0.5)).collect();
        let scan = build_scan(pts.clone(), 1).unwrap();
        let everything = Cluster {
            edge_points: vec![pts[0]],
            filled_points: vec![],
            bounds: Bounds {
                min: Vector3::repeat(-100.0),
                max: Vector3::repeat(100.0),
            },
            tau: 1.0,
        };
        assert_eq!(fill_cluster(&scan, &everything).filled_points, pts);
        let only = cluster_edges(&pts[3..4], 0.4).remove(0);
        assert_eq!(fill_cluster(&scan, &only).filled_points, vec![pts[3]]);
    }

    #[test]
    fn validation_bounds_for_d4() {
        assert_eq!((eta_min(4), psi_min(4)), (320, 12));
        let family = TagFamily {
            name: "t".into(),
            d: 4,
            h: 5,
            codewords: vec![],
        };
        let pt = p(0, 0, 0.0, 0.0, 0.0, 0.5);
        let report = |eta: usize, psi: usize| {
            let c = Cluster {
                edge_points: vec![],
                filled_points: vec![pt; eta],
                bounds: Bounds::around(&pt.position, 1.0),
                tau: 0.1,
            };
            validate_cluster(&c, &family, &vec![pt; psi])
        };
        assert!(report(320, 12).passed);
        assert_eq!(report(319, 12).reject_reason, Some(RejectReason::TooFewPoints));
        assert_eq!(report(400, 11).reject_reason, Some(RejectReason::TooFewPayloadEdges));
        assert_eq!(report(319, 0).reject_reason, Some(RejectReason::TooFewPoints));
    }

    #[test]
    fn payload_edges_and_marker() {
        // white backing | black border | white | black border | white backing
        let pattern = [0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9];
        let filled: Vec<_> = pattern
            .iter()
            .enumerate()
            .map(|(a, &i)| p(0, a as u32, 3.0, a as f64 * 0.1, 0.0, i))
            .collect();
        let c = Cluster {
            edge_points: vec![],
            filled_points: filled,
            bounds: Bounds::around(&Vector3::zeros(), 10.0),
            tau: 0.1,
        };
        let edges: Vec<u32> = extract_payload_edges(&c, &params())
            .iter()
            .map(|p| p.azimuth_index)
            .collect();
        assert_eq!(edges, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let m = extract_marker(&c, &params());
        let idx: Vec<u32> = m.points.iter().map(|p| p.azimuth_index).collect();
        assert_eq!(idx, vec![2, 3, 4, 5, 6, 7]);
        assert!((m.boundary[0].y - 0.15).abs() < 1e-12);
        assert!((m.boundary[1].y - 0.75).abs() < 1e-12);
        let uniform = Cluster {
            filled_points: c.filled_points.iter().map(|q| Point { intensity: 0.5, ..*q }).collect(),
            ..c.clone()
        };
        assert!(extract_payload_edges(&uniform, &params()).is_empty());
        let strict = EdgeParams {
            intensity_threshold: 1.01,
            ..params()
        };
        assert!(extract_payload_edges(&c, &strict).is_empty());
    }
}
