//! Beam-organized scan model.
//!
//! A [`Scan`] stores the returns of one sensor revolution grouped by beam. Within a beam the
//! returns are ordered by `azimuth_index`; gaps in the index sequence are kept as-is because
//! the gradient kernels downstream work on sequence positions, not on azimuth values.

mod io;

pub use io::{read_csv, write_csv, CsvOptions};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("duplicate return at beam {beam}, azimuth index {azimuth_index}")]
    DuplicateReturn { beam: u32, azimuth_index: u32 },
    #[error("beam {beam} out of range for a {num_beams}-beam scan")]
    BeamOutOfRange { beam: u32, num_beams: usize },
    #[error("intensity {intensity} at beam {beam}, azimuth index {azimuth_index} is outside [0, 1]")]
    IntensityOutOfRange {
        beam: u32,
        azimuth_index: u32,
        intensity: f64,
    },
    #[error("non-finite position at beam {beam}, azimuth index {azimuth_index}")]
    NonFinitePosition { beam: u32, azimuth_index: u32 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T: Real> {
    /// Sensor-frame position in meters.
    pub position: Vector3<T>,
    /// Normalized return intensity in `[0, 1]`.
    pub intensity: T,
    pub beam: u32,
    /// Position of the return within its beam's firing sequence.
    pub azimuth_index: u32,
}

impl<T: Real> Point<T> {
    pub fn new(position: Vector3<T>, intensity: T, beam: u32, azimuth_index: u32) -> Self {
        Self {
            position,
            intensity,
            beam,
            azimuth_index,
        }
    }

    pub fn cast<U: Real>(&self) -> Point<U> {
        Point {
            position: self.position.map(|c| U::lit(c.as_f64())),
            intensity: U::lit(self.intensity.as_f64()),
            beam: self.beam,
            azimuth_index: self.azimuth_index,
        }
    }
}

/// An immutable, beam-organized point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T: Real> {
    beams: Vec<Vec<Point<T>>>,
    timestamp: Option<f64>,
}

impl<T: Real> Scan<T> {
    /// A scan with `num_beams` empty beams.
    pub fn empty(num_beams: usize) -> Self {
        Self {
            beams: vec![Vec::new(); num_beams],
            timestamp: None,
        }
    }

    pub fn with_timestamp(mut self, seconds: f64) -> Self {
        self.timestamp = Some(seconds);
        self
    }

    pub fn timestamp(&self) -> Option<f64> {
        self.timestamp
    }

    pub fn num_beams(&self) -> usize {
        self.beams.len()
    }

    pub fn beams(&self) -> &[Vec<Point<T>>] {
        &self.beams
    }

    pub fn beam(&self, index: usize) -> &[Point<T>] {
        &self.beams[index]
    }

    /// Total number of returns.
    pub fn len(&self) -> usize {
        self.beams.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.iter().all(Vec::is_empty)
    }

    /// Iterates returns in canonical order: beam-major, azimuth ascending.
    pub fn iter(&self) -> impl Iterator<Item = &Point<T>> + '_ {
        self.beams.iter().flatten()
    }

    /// Converts every coordinate and intensity to another scalar type.
    pub fn cast<U: Real>(&self) -> Scan<U> {
        Scan {
            beams: self
                .beams
                .iter()
                .map(|beam| beam.iter().map(Point::cast).collect())
                .collect(),
            timestamp: self.timestamp,
        }
    }

    /// Rebuilds the scan keeping only the returns accepted by `keep`. Ordering and the
    /// beam count are preserved, so the result satisfies the same invariants.
    pub fn filter(&self, mut keep: impl FnMut(&Point<T>) -> bool) -> Self {
        Self {
            beams: self
                .beams
                .iter()
                .map(|beam| beam.iter().filter(|p| keep(p)).copied().collect())
                .collect(),
            timestamp: self.timestamp,
        }
    }

    /// Applies `f` to every return. `f` must not change beam or azimuth indices.
    pub(crate) fn map_points(&self, mut f: impl FnMut(&Point<T>) -> Point<T>) -> Self {
        Self {
            beams: self
                .beams
                .iter()
                .map(|beam| {
                    beam.iter()
                        .map(|p| {
                            let q = f(p);
                            debug_assert_eq!((q.beam, q.azimuth_index), (p.beam, p.azimuth_index));
                            q
                        })
                        .collect()
                })
                .collect(),
            timestamp: self.timestamp,
        }
    }
}

/// Groups an unordered list of returns into a [`Scan`].
pub fn build_scan<T: Real>(
    points: impl IntoIterator<Item = Point<T>>,
    num_beams: usize,
) -> Result<Scan<T>, ScanError> {
    let mut beams: Vec<Vec<Point<T>>> = vec![Vec::new(); num_beams];
    for p in points {
        if p.beam as usize >= num_beams {
            return Err(ScanError::BeamOutOfRange {
                beam: p.beam,
                num_beams,
            });
        }
        let intensity = p.intensity.as_f64();
        if !(0.0..=1.0).contains(&intensity) {
            return Err(ScanError::IntensityOutOfRange {
                beam: p.beam,
                azimuth_index: p.azimuth_index,
                intensity,
            });
        }
        if p.position.iter().any(|c| !c.as_f64().is_finite()) {
            return Err(ScanError::NonFinitePosition {
                beam: p.beam,
                azimuth_index: p.azimuth_index,
            });
        }
        beams[p.beam as usize].push(p);
    }
    for beam in &mut beams {
        beam.sort_unstable_by_key(|p| p.azimuth_index);
        if let Some(w) = beam.windows(2).find(|w| w[0].azimuth_index == w[1].azimuth_index) {
            return Err(ScanError::DuplicateReturn {
                beam: w[0].beam,
                azimuth_index: w[0].azimuth_index,
            });
        }
    }
    Ok(Scan {
        beams,
        timestamp: None,
    })
}

/// Per-beam return counts of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanStats {
    pub points_per_beam: Vec<usize>,
    pub total_points: usize,
    pub min_per_beam: usize,
    pub max_per_beam: usize,
    pub mean_per_beam: f64,
}

pub fn analyze_scan<T: Real>(scan: &Scan<T>) -> ScanStats {
    let points_per_beam: Vec<usize> = scan.beams().iter().map(Vec::len).collect();
    let total_points = points_per_beam.iter().sum();
    let mean_per_beam = if points_per_beam.is_empty() {
        0.0
    } else {
        total_points as f64 / points_per_beam.len() as f64
    };
    ScanStats {
        min_per_beam: points_per_beam.iter().copied().min().unwrap_or(0),
        max_per_beam: points_per_beam.iter().copied().max().unwrap_or(0),
        points_per_beam,
        total_points,
        mean_per_beam,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(beam: u32, az: u32) -> Point<f64> {
        Point::new(Vector3::new(az as f64, beam as f64, 1.0), 0.5, beam, az)
    }

    #[test]
    fn empty_input_gives_empty_beams() {
        let scan = build_scan(Vec::<Point<f64>>::new(), 32).unwrap();
        assert_eq!(scan.num_beams(), 32);
        assert!(scan.is_empty());
        let stats = analyze_scan(&scan);
        assert_eq!(stats.total_points, 0);
        assert_eq!(stats.points_per_beam, vec![0; 32]);
        assert_eq!(stats.mean_per_beam, 0.0);
    }

    #[test]
    fn beams_are_sorted_by_azimuth() {
        let scan = build_scan(vec![pt(0, 5), pt(0, 2), pt(0, 9)], 1).unwrap();
        let order: Vec<u32> = scan.beam(0).iter().map(|p| p.azimuth_index).collect();
        assert_eq!(order, vec![2, 5, 9]);
    }

    #[test]
    fn duplicate_return_is_rejected() {
        let err = build_scan(vec![pt(1, 4), pt(1, 4)], 2).unwrap_err();
        assert_eq!(
            err,
            ScanError::DuplicateReturn {
                beam: 1,
                azimuth_index: 4
            }
        );
    }

    #[test]
    fn beam_out_of_range_is_rejected() {
        let err = build_scan(vec![pt(3, 0)], 3).unwrap_err();
        assert!(matches!(err, ScanError::BeamOutOfRange { beam: 3, .. }));
    }

    #[test]
    fn intensity_outside_unit_interval_is_rejected() {
        let mut p = pt(0, 0);
        p.intensity = 1.5;
        assert!(matches!(
            build_scan(vec![p], 1),
            Err(ScanError::IntensityOutOfRange { .. })
        ));
    }

    #[test]
    fn stats_arithmetic() {
        let mut pts: Vec<_> = (0..10).map(|i| pt(0, i)).collect();
        pts.extend((0..20).map(|i| pt(1, i)));
        let stats = analyze_scan(&build_scan(pts, 2).unwrap());
        assert_eq!(stats.total_points, 30);
        assert_eq!(stats.mean_per_beam, 15.0);
        assert_eq!((stats.min_per_beam, stats.max_per_beam), (10, 20));
    }

    proptest! {
        #[test]
        fn build_is_permutation_invariant(
            keys in proptest::collection::btree_set((0u32..4, 0u32..200), 0..120),
            seed in any::<u64>(),
        ) {
            let points: Vec<_> = keys.iter().map(|&(b, a)| pt(b, a)).collect();
            let mut shuffled = points.clone();
            // Deterministic Fisher-Yates driven by the proptest seed.
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let a = build_scan(points.clone(), 4).unwrap();
            let b = build_scan(shuffled, 4).unwrap();
            prop_assert_eq!(&a, &b);
            let stats = analyze_scan(&a);
            prop_assert_eq!(stats.total_points, points.len());
            prop_assert_eq!(stats.points_per_beam.iter().sum::<usize>(), stats.total_points);
        }
    }
}
