//! Scan-level orchestration: edges, clustering, then per-cluster fill, validation and
//! decoding, optionally across a worker pool.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{build_hash_table, CodebookError, DecodingTable, TagFamily};
use crate::detection::{
    cluster_edges, detect_candidate_edges, merge_overlapping, extract_payload_edges, validate_cluster, Cluster,
    EdgeParams, ScanIndex, ValidationReport,
};
use crate::pointcloud::Scan;
use crate::scalar::Real;
use crate::voting::{decode_cluster, ms, DecodeParams, Rejection, TagDetection, Weighting};

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTimings {
    pub edges: f64,
    pub clustering: f64,
    pub fill: f64,
    pub validation: f64,
    pub extraction: f64,
    pub pose: f64,
    pub voting: f64,
    pub decoding: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.edges
            + self.clustering
            + self.fill
            + self.validation
            + self.extraction
            + self.pose
            + self.voting
            + self.decoding
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            edges: self.edges * factor,
            clustering: self.clustering * factor,
            fill: self.fill * factor,
            validation: self.validation * factor,
            extraction: self.extraction * factor,
            pose: self.pose * factor,
            voting: self.voting * factor,
            decoding: self.decoding * factor,
        }
    }
}

impl Add for StageTimings {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            edges: self.edges + o.edges,
            clustering: self.clustering + o.clustering,
            fill: self.fill + o.fill,
            validation: self.validation + o.validation,
            extraction: self.extraction + o.extraction,
            pose: self.pose + o.pose,
            voting: self.voting + o.voting,
            decoding: self.decoding + o.decoding,
        }
    }
}

impl AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

/// Detector settings. Every field has a default, so `{}` is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Builtin family name or path to a family JSON file.
    pub family: String,
    /// Marker side length in meters.
    pub tag_size: f64,
    pub edge: EdgeParams<f64>,
    pub weighting: Weighting,
    /// Overrides the Gaussian variance `tag_size / (4 (d + 2))`.
    pub sigma2: Option<f64>,
    /// Overrides `floor((h - 1) / 2)`.
    pub max_bad_bits: Option<u32>,
    pub check_border: bool,
    /// Merge clusters with intersecting bounds before filling them.
    pub merge_clusters: bool,
    /// Threads for per-cluster work; 0 uses all cores.
    pub workers: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            family: "lex16h5".into(),
            tag_size: 0.25,
            edge: EdgeParams::default(),
            weighting: Weighting::Gaussian,
            sigma2: None,
            max_bad_bits: None,
            check_border: true,
            merge_clusters: true,
            workers: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tag_size > 0.0 && self.tag_size.is_finite()) {
            return Err(ConfigError::Invalid("tag_size must be positive".into()));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::Invalid("sigma2 must be positive".into()));
            }
        }
        self.edge.validate().map_err(ConfigError::Invalid)
    }
}

/// Outcome of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub edge_points: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub validation: ValidationReport,
    /// `None` when decoding produced a detection or validation failed.
    pub rejection: Option<CandidateRejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateRejection {
    pub stage: &'static str,
    pub reason: String,
}

impl From<&Rejection> for CandidateRejection {
    fn from(r: &Rejection) -> Self {
        Self {
            stage: r.stage(),
            reason: r.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport<T: Real> {
    /// Sorted by tag id, then by position.
    pub detections: Vec<TagDetection<T>>,
    /// One entry per cluster, in clustering order.
    pub candidates: Vec<CandidateReport>,
    pub num_points: usize,
    pub num_edges: usize,
    /// Scan-level stages plus the sum of per-cluster stage times.
    pub timings: StageTimings,
}

impl<T: Real> DetectionReport<T> {
    pub fn num_clusters(&self) -> usize {
        self.candidates.len()
    }
}

/// Serialized form of a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub tag_id: u32,
    pub mu: [f64; 3],
    /// `[w, x, y, z]`.
    pub q: [f64; 4],
    pub rotation_k: u8,
    pub hamming_distance: u32,
    pub bad_bits: u32,
    pub corners: [[f64; 3]; 4],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings_ms: Option<StageTimings>,
}

impl<T: Real> TagDetection<T> {
    pub fn record(&self, with_timings: bool) -> DetectionRecord {
        let v = |p: &nalgebra::Vector3<T>| [p.x.as_f64(), p.y.as_f64(), p.z.as_f64()];
        let q = self.q.quaternion();
        DetectionRecord {
            tag_id: self.tag_id,
            mu: v(&self.mu),
            q: [q.w.as_f64(), q.i.as_f64(), q.j.as_f64(), q.k.as_f64()],
            rotation_k: self.rotation_k,
            hamming_distance: self.hamming_distance,
            bad_bits: self.bad_bits,
            corners: self.corners.each_ref().map(v),
            timings_ms: with_timings.then_some(self.timings),
        }
    }
}

/// Tag detector for one family and configuration.
pub struct Detector<T: Real> {
    config: DetectorConfig,
    table: DecodingTable,
    params: DecodeParams<T>,
    pool: Option<rayon::ThreadPool>,
}

impl<T: Real> Detector<T> {
    pub fn new(config: DetectorConfig, family: &TagFamily) -> Result<Self, ConfigError> {
        config.validate()?;
        let table = build_hash_table(family)?;
        let params = DecodeParams {
            tag_size: T::lit(config.tag_size),
            edge: config.edge.cast(),
            weighting: config.weighting,
            sigma2: config.sigma2.map(T::lit),
            max_bad_bits: config.max_bad_bits,
            check_border: config.check_border,
        };
        let pool = if config.workers == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )
        };
        Ok(Self {
            config,
            table,
            params,
            pool,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn table(&self) -> &DecodingTable {
        &self.table
    }

    pub fn family(&self) -> &TagFamily {
        self.table.family()
    }

    /// Same detector with another vote weighting.
    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.config.weighting = weighting;
        self.params.weighting = weighting;
        self
    }

    pub fn detect(&self, scan: &Scan<T>) -> DetectionReport<T> {
        self.run(scan, &self.params)
    }

    /// [`Self::detect`] with a different vote weighting.
    pub fn detect_weighted(&self, scan: &Scan<T>, weighting: Weighting) -> DetectionReport<T> {
        self.run(scan, &DecodeParams { weighting, ..self.params })
    }

    fn run(&self, scan: &Scan<T>, params: &DecodeParams<T>) -> DetectionReport<T> {
        let mut timings = StageTimings::default();
        let start = Instant::now();
        let edges = detect_candidate_edges(scan, &self.params.edge);
        timings.edges = ms(start);

        let start = Instant::now();
        let mut clusters = cluster_edges(&edges, self.params.tag_size);
        if self.config.merge_clusters {
            clusters = merge_overlapping(clusters);
        }
        timings.clustering = ms(start);

        let start = Instant::now();
        let index = ScanIndex::new(scan);
        timings.fill = ms(start);

        let process = |c: &Cluster<T>| self.process_cluster(&index, c, params);
        let outcomes: Vec<_> = match &self.pool {
            None => clusters.iter().map(process).collect(),
            Some(pool) => pool.install(|| clusters.par_iter().map(process).collect()),
        };

        let scan_level = StageTimings {
            edges: timings.edges,
            clustering: timings.clustering,
            ..Default::default()
        };
        let mut detections = Vec::new();
        let mut candidates = Vec::with_capacity(outcomes.len());
        for (candidate, detection, t) in outcomes {
            timings += t;
            candidates.push(candidate);
            if let Some(mut d) = detection {
                d.timings = scan_level + t;
                detections.push(d);
            }
        }
        DetectionReport {
            detections: dedupe(detections, self.params.tag_size),
            candidates,
            num_points: scan.len(),
            num_edges: edges.len(),
            timings,
        }
    }

    fn process_cluster(
        &self,
        index: &ScanIndex<'_, T>,
        cluster: &Cluster<T>,
        params: &DecodeParams<T>,
    ) -> (CandidateReport, Option<TagDetection<T>>, StageTimings) {
        let mut t = StageTimings::default();
        let start = Instant::now();
        let filled = index.fill(cluster);
        t.fill = ms(start);

        let start = Instant::now();
        let payload = extract_payload_edges(&filled, &self.params.edge);
        let validation = validate_cluster(&filled, self.table.family(), &payload);
        t.validation = ms(start);

        let (detection, rejection) = if validation.passed {
            match decode_cluster(&filled, &self.table, params, &mut t) {
                Ok(d) => (Some(d), None),
                Err(r) => (None, Some(CandidateRejection::from(&r))),
            }
        } else {
            (None, None)
        };
        let b = &cluster.bounds;
        let candidate = CandidateReport {
            edge_points: cluster.edge_points.len(),
            bounds_min: [b.min.x.as_f64(), b.min.y.as_f64(), b.min.z.as_f64()],
            bounds_max: [b.max.x.as_f64(), b.max.y.as_f64(), b.max.z.as_f64()],
            validation,
            rejection,
        };
        (candidate, detection, t)
    }
}

/// Keeps one detection per tag: among detections whose centers lie within half a tag size,
/// the lowest Hamming distance wins, then the one with more marker returns, then the
/// earlier one. The result is sorted by tag id, then by position.
fn dedupe<T: Real>(mut detections: Vec<TagDetection<T>>, tag_size: T) -> Vec<TagDetection<T>> {
    let radius = tag_size / T::lit(2.0);
    // Stable sort keeps cluster order among equals.
    detections.sort_by(|a, b| {
        a.hamming_distance
            .cmp(&b.hamming_distance)
            .then(b.marker_points.cmp(&a.marker_points))
    });
    let mut kept: Vec<TagDetection<T>> = Vec::new();
    for d in detections {
        if kept.iter().all(|k| (k.mu - d.mu).norm() > radius) {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| {
        a.tag_id.cmp(&b.tag_id).then_with(|| {
            (0..3)
                .map(|i| a.mu[i].as_f64().total_cmp(&b.mu[i].as_f64()))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    kept
}
