//! Timing and accuracy benchmark over rendered scenes, reported in the column layout of
//! the published detector's evaluation table.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::pipeline::{Detector, StageTimings};
use crate::synth::Rendered;
use crate::voting::Weighting;

/// Stage groups of the table. Edge detection belongs to clustering, cluster filling to
/// validation, corner fitting and alignment to the normal vector column, and voting to
/// decoding.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TableTimings {
    pub clustering: f64,
    pub validation: f64,
    pub extraction: f64,
    pub normal_vector: f64,
    pub decoding: f64,
    pub total: f64,
}

impl From<StageTimings> for TableTimings {
    fn from(t: StageTimings) -> Self {
        Self {
            clustering: t.edges + t.clustering,
            validation: t.fill + t.validation,
            extraction: t.extraction,
            normal_vector: t.pose,
            decoding: t.voting + t.decoding,
            total: t.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub label: String,
    pub scans: usize,
    /// Per-scan means.
    pub points: f64,
    pub edges: f64,
    pub clusters: f64,
    /// Milliseconds, mean per scan.
    pub timings: TableTimings,
    pub rate_hz: f64,
    /// Percent of rendered tags decoded with the right id and rotation.
    pub equal_weight_accuracy: Option<f64>,
    pub gaussian_accuracy: Option<f64>,
}

/// Reference rows published with the original detector (Velodyne 32-beam scans).
pub fn reference_rows() -> Vec<BenchRow> {
    let row = |label: &str, scans, points, edges, clusters, t: [f64; 6], hz, eq, g| BenchRow {
        label: label.into(),
        scans,
        points,
        edges,
        clusters,
        timings: TableTimings {
            clustering: t[0],
            validation: t[1],
            extraction: t[2],
            normal_vector: t[3],
            decoding: t[4],
            total: t[5],
        },
        rate_hz: hz,
        equal_weight_accuracy: Some(eq),
        gaussian_accuracy: Some(g),
    };
    vec![
        row(
            "reference indoor",
            1240,
            53548.0,
            3813.0,
            779.0,
            [24.004, 1.754, 0.0271, 0.0339, 1.199, 29.496896],
            33.9,
            0.0001,
            99.6371,
        ),
        row(
            "reference outdoor",
            3820,
            52477.0,
            2416.0,
            1757.0,
            [38.096, 4.741, 0.0290, 0.0319, 1.202, 44.655821],
            22.4,
            0.0000,
            99.7382,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub measured: BenchRow,
    pub reference: Vec<BenchRow>,
    /// Mean wall-clock milliseconds of one `detect` call.
    pub wall_ms: f64,
}

fn correct(detector: &Detector<f64>, scene: &Rendered, weighting: Weighting) -> usize {
    let report = detector.detect_weighted(&scene.scan, weighting);
    scene
        .truths
        .iter()
        .filter(|t| {
            report
                .detections
                .iter()
                .any(|d| d.tag_id == t.tag_id && d.rotation_k == t.rotation_k)
        })
        .count()
}

/// Decoding accuracy in percent under both weightings.
pub fn accuracy(detector: &Detector<f64>, scenes: &[Rendered]) -> (f64, f64) {
    let total: usize = scenes.iter().map(|s| s.truths.len()).sum();
    if total == 0 {
        return (0.0, 0.0);
    }
    let pct = |w: Weighting| {
        let c: usize = scenes.iter().map(|s| correct(detector, s, w)).sum();
        100.0 * c as f64 / total as f64
    };
    (pct(Weighting::Equal), pct(Weighting::Gaussian))
}

/// Runs every scene `repetitions` times and averages the per-stage timings. Accuracy is
/// measured once per scene (outputs do not depend on the repetition).
pub fn run(detector: &Detector<f64>, scenes: &[Rendered], repetitions: usize, label: &str) -> BenchReport {
    let repetitions = repetitions.max(1);
    let mut sum = StageTimings::default();
    let (mut points, mut edges, mut clusters) = (0usize, 0usize, 0usize);
    let mut wall = 0.0;
    for _ in 0..repetitions {
        for s in scenes {
            let start = Instant::now();
            let report = detector.detect(&s.scan);
            wall += start.elapsed().as_secs_f64() * 1e3;
            sum += report.timings;
            points += report.num_points;
            edges += report.num_edges;
            clusters += report.num_clusters();
        }
    }
    let n = (repetitions * scenes.len()).max(1) as f64;
    let timings = TableTimings::from(sum.scaled(1.0 / n));
    let has_truth = scenes.iter().any(|s| !s.truths.is_empty());
    let (eq, g) = if has_truth {
        let (e, g) = accuracy(detector, scenes);
        (Some(e), Some(g))
    } else {
        (None, None)
    };
    BenchReport {
        repetitions,
        measured: BenchRow {
            label: label.into(),
            scans: scenes.len(),
            points: points as f64 / n,
            edges: edges as f64 / n,
            clusters: clusters as f64 / n,
            rate_hz: if timings.total > 0.0 { 1e3 / timings.total } else { 0.0 },
            timings,
            equal_weight_accuracy: eq,
            gaussian_accuracy: g,
        },
        reference: reference_rows(),
        wall_ms: wall / n,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}%"))
}

/// Plain-text table, measured row first.
pub fn format_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>6} {:>9} {:>7} {:>8} | {:>10} {:>10} {:>10} {:>11} {:>9} | {:>20} | {:>12} {:>10}",
        "",
        "scans",
        "points",
        "edges",
        "clusters",
        "Clustering",
        "Validation",
        "Extraction",
        "Normal Vec.",
        "Decoding",
        "Total",
        "Equal-weight",
        "Gaussian"
    );
    for row in std::iter::once(&report.measured).chain(&report.reference) {
        let t = &row.timings;
        let _ = writeln!(
            out,
            "{:<18} {:>6} {:>9.0} {:>7.0} {:>8.0} | {:>10.4} {:>10.4} {:>10.4} {:>11.4} {:>9.4} | {:>11.6} ({:>4.1} Hz) | {:>12} {:>10}",
            row.label,
            row.scans,
            row.points,
            row.edges,
            row.clusters,
            t.clustering,
            t.validation,
            t.extraction,
            t.normal_vector,
            t.decoding,
            t.total,
            row.rate_hz,
            pct(row.equal_weight_accuracy),
            pct(row.gaussian_accuracy),
        );
    }
    let _ = writeln!(
        out,
        "times in ms, mean over {} repetition(s); wall-clock per detect call {:.4} ms",
        report.repetitions, report.wall_ms
    );
    out
}
