use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::pointcloud::{Point, Scan};

/// Intensity step between beam neighbors that counts as a black/white transition.
pub const TRANSITION_CONTRAST: f64 = 0.4;

/// Return irregularities of a real sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Gaussian range noise along the ray, meters.
    pub range_sigma: f64,
    /// Gaussian intensity noise before clamping to `[0, 1]`.
    pub intensity_sigma: f64,
    /// Drop probability for returns next to a black/white transition.
    pub transition_dropout_prob: f64,
    /// Gaussian tangential shift of transition-adjacent returns, meters.
    pub transition_jitter: f64,
    /// Drop probability for every return.
    pub uniform_dropout_prob: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            range_sigma: 0.0,
            intensity_sigma: 0.0,
            transition_dropout_prob: 0.0,
            transition_jitter: 0.0,
            uniform_dropout_prob: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let sigmas = [self.range_sigma, self.intensity_sigma, self.transition_jitter];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SynthError::InvalidNoise("sigmas must be finite and >= 0".into()));
        }
        let probs = [self.transition_dropout_prob, self.uniform_dropout_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::InvalidNoise("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        *self
            == Self {
                seed: self.seed,
                ..Self::default()
            }
    }
}

/// Flags, in canonical order, every return whose predecessor or successor on the same beam
/// differs in intensity by more than [`TRANSITION_CONTRAST`].
pub fn transition_adjacent(scan: &Scan<f64>) -> Vec<bool> {
    let mut out = Vec::with_capacity(scan.len());
    for beam in scan.beams() {
        for (i, p) in beam.iter().enumerate() {
            let step = |j: Option<usize>| {
                j.and_then(|j| beam.get(j))
                    .is_some_and(|q| (q.intensity - p.intensity).abs() > TRANSITION_CONTRAST)
            };
            out.push(step(i.checked_sub(1)) || step(Some(i + 1)));
        }
    }
    out
}

pub fn apply_noise(scan: &Scan<f64>, noise: &NoiseModel) -> Result<Scan<f64>, SynthError> {
    apply_noise_with_mask(scan, noise).map(|(s, _)| s)
}

/// Noisy copy of `scan` plus, in canonical order, whether each input return survived.
pub(super) fn apply_noise_with_mask(
    scan: &Scan<f64>,
    noise: &NoiseModel,
) -> Result<(Scan<f64>, Vec<bool>), SynthError> {
    noise.validate()?;
    if noise.is_identity() {
        return Ok((scan.clone(), vec![true; scan.len()]));
    }
    let adjacent = transition_adjacent(scan);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut kept = Vec::with_capacity(scan.len());
    let mut perturbed: Vec<Option<Point<f64>>> = Vec::with_capacity(scan.len());
    for (p, &adj) in scan.iter().zip(&adjacent) {
        let mut drop = false;
        if adj && noise.transition_dropout_prob > 0.0 {
            drop |= rng.random::<f64>() < noise.transition_dropout_prob;
        }
        if noise.uniform_dropout_prob > 0.0 {
            drop |= rng.random::<f64>() < noise.uniform_dropout_prob;
        }
        kept.push(!drop);
        if drop {
            perturbed.push(None);
            continue;
        }
        let mut q = *p;
        if noise.range_sigma > 0.0 {
            let range = q.position.norm();
            if range > 0.0 {
                let dr = noise.range_sigma * std_normal.sample(&mut rng);
                q.position *= (range + dr).max(0.0) / range;
            }
        }
        if adj && noise.transition_jitter > 0.0 {
            let tangent = Vector3::new(-q.position.y, q.position.x, 0.0);
            let len = tangent.norm();
            if len > 0.0 {
                q.position += tangent * (noise.transition_jitter * std_normal.sample(&mut rng) / len);
            }
        }
        if noise.intensity_sigma > 0.0 {
            q.intensity =
                (q.intensity + noise.intensity_sigma * std_normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
        perturbed.push(Some(q));
    }
    // `filter` and `map_points` both visit returns in canonical order.
    let mut mask = kept.iter();
    let mut noisy = perturbed.into_iter().flatten();
    let out = scan
        .filter(|_| *mask.next().expect("mask covers the scan"))
        .map_points(|_| noisy.next().expect("one perturbed point per survivor"));
    Ok((out, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::build_scan;

    fn striped() -> Scan<f64> {
        // Two beams of alternating 4-wide black/white stripes.
        let pts = (0..2u32).flat_map(|b| {
            (0..40u32).map(move |a| {
                let i = if (a / 4) % 2 == 0 { 0.1 } else { 0.9 };
                Point::new(Vector3::new(5.0, a as f64 * 0.01, b as f64 * 0.01), i, b, a)
            })
        });
        build_scan(pts, 2).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let scan = striped();
        let out = apply_noise(&scan, &NoiseModel { seed: 99, ..Default::default() }).unwrap();
        assert_eq!(out, scan);
    }

    #[test]
    fn full_transition_dropout_matches_adjacency_oracle() {
        let scan = striped();
        // Oracle: brute-force scan of every beam for contrast with either neighbor.
        let mut expected = 0;
        for beam in scan.beams() {
            for i in 0..beam.len() {
                let left = i > 0 && (beam[i - 1].intensity - beam[i].intensity).abs() > 0.4;
                let right = i + 1 < beam.len() && (beam[i + 1].intensity - beam[i].intensity).abs() > 0.4;
                if left || right {
                    expected += 1;
                }
            }
        }
        let noise = NoiseModel {
            transition_dropout_prob: 1.0,
            ..Default::default()
        };
        let out = apply_noise(&scan, &noise).unwrap();
        assert_eq!(scan.len() - out.len(), expected);
        // Stripes of width 4: each interior boundary removes two returns per beam.
        assert_eq!(expected, 2 * 2 * 9);
    }

    #[test]
    fn same_seed_same_scan() {
        let noise = NoiseModel {
            range_sigma: 0.02,
            intensity_sigma: 0.3,
            transition_dropout_prob: 0.5,
            transition_jitter: 0.01,
            uniform_dropout_prob: 0.1,
            seed: 5,
        };
        let a = apply_noise(&striped(), &noise).unwrap();
        assert_eq!(a, apply_noise(&striped(), &noise).unwrap());
        assert_ne!(a, apply_noise(&striped(), &NoiseModel { seed: 6, ..noise }).unwrap());
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.intensity)));
    }

    #[test]
    fn range_noise_stays_on_the_ray() {
        let scan = striped();
        let out = apply_noise(
            &scan,
            &NoiseModel {
                range_sigma: 0.05,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in scan.iter().zip(out.iter()) {
            let cross = a.position.normalize().cross(&b.position.normalize()).norm();
            assert!(cross < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = NoiseModel {
            transition_dropout_prob: 1.5,
            ..Default::default()
        };
        assert!(apply_noise(&striped(), &bad).is_err());
    }
}
