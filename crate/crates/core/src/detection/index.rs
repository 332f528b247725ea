use crate::pointcloud::Scan;
use crate::scalar::Real;

use super::{Bounds, Cluster};

const BLOCK: usize = 32;

/// Bounding boxes over short runs of consecutive returns on each beam.
///
/// Consecutive returns of a beam are spatial neighbors, so the boxes stay small and a
/// cluster query only touches the runs whose box overlaps the cluster.
#[derive(Debug, Clone)]
pub struct ScanIndex<'a, T: Real> {
    scan: &'a Scan<T>,
    /// `(beam, start, end, bounds)`.
    blocks: Vec<(usize, usize, usize, Bounds<T>)>,
}

impl<'a, T: Real> ScanIndex<'a, T> {
    pub fn new(scan: &'a Scan<T>) -> Self {
        let mut blocks = Vec::with_capacity(scan.len() / BLOCK + scan.num_beams());
        for (b, beam) in scan.beams().iter().enumerate() {
            for start in (0..beam.len()).step_by(BLOCK) {
                let end = (start + BLOCK).min(beam.len());
                let mut bounds = Bounds {
                    min: beam[start].position,
                    max: beam[start].position,
                };
                for p in &beam[start + 1..end] {
                    bounds.extend(&p.position);
                }
                blocks.push((b, start, end, bounds));
            }
        }
        Self { scan, blocks }
    }

    pub fn scan(&self) -> &'a Scan<T> {
        self.scan
    }

    /// Same result as [`super::fill_cluster`].
    pub fn fill(&self, cluster: &Cluster<T>) -> Cluster<T> {
        let mut filled = Vec::new();
        for (b, start, end, bounds) in &self.blocks {
            if !bounds.intersects(&cluster.bounds) {
                continue;
            }
            filled.extend(
                self.scan.beam(*b)[*start..*end]
                    .iter()
                    .filter(|p| cluster.bounds.contains(&p.position)),
            );
        }
        Cluster {
            filled_points: filled,
            ..cluster.clone()
        }
    }
}
