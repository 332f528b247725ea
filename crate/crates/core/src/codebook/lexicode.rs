use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{all_rotations, hamming, CodebookError, TagFamily, MAX_D};

/// Upper bound on the number of candidates examined for large payloads.
const MAX_CANDIDATES: u64 = 1 << 26;

/// Greedy lexicode over a seeded permutation of all `d*d`-bit words.
///
/// A candidate is accepted when it keeps distance `>= h` to its own three nontrivial
/// rotations and to all four rotations of every codeword accepted so far. The candidate
/// order is the affine permutation `start + i * stride (mod 2^n)` with an odd stride, so
/// every word is visited once (up to [`MAX_CANDIDATES`]).
pub fn generate_lexicode(d: usize, h: usize, rng_seed: u64) -> Result<TagFamily, CodebookError> {
    let n = d * d;
    if !(2..=MAX_D).contains(&d) || h < 1 || h > n {
        return Err(CodebookError::BadParameters { d, h });
    }
    let modulus_mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let start = rng.random::<u64>() & modulus_mask;
    let stride = (rng.random::<u64>() | 1) & modulus_mask;
    let total = if n >= 64 { u64::MAX } else { 1u64 << n };
    let budget = total.min(MAX_CANDIDATES);

    // Rotations of accepted words, flattened for a tight inner loop.
    let mut accepted_rotations: Vec<u64> = Vec::new();
    let mut codewords = Vec::new();
    let h32 = h as u32;
    for i in 0..budget {
        let candidate = start.wrapping_add(i.wrapping_mul(stride)) & modulus_mask;
        let rots = all_rotations(candidate, d);
        if rots[1..].iter().any(|&r| hamming(candidate, r) < h32) {
            continue;
        }
        if accepted_rotations
            .iter()
            .any(|&r| hamming(candidate, r) < h32)
        {
            continue;
        }
        codewords.push(candidate);
        accepted_rotations.extend_from_slice(&rots);
    }
    if codewords.is_empty() {
        return Err(CodebookError::Infeasible { d, h });
    }
    Ok(TagFamily {
        name: format!("lex{n}h{h}s{rng_seed}"),
        d,
        h,
        codewords,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{format_bits, rotate_codeword};
    use super::*;

    /// Brute-force oracle working on bit-strings, independent of the packed helpers.
    fn min_rotation_inclusive_distance(family: &TagFamily) -> u32 {
        let d = family.d;
        let strings: Vec<Vec<String>> = family
            .codewords
            .iter()
            .map(|&c| (0..4).map(|k| format_bits(rotate_codeword(c, d, k), d)).collect())
            .collect();
        let dist = |a: &str, b: &str| a.chars().zip(b.chars()).filter(|(x, y)| x != y).count() as u32;
        let mut best = u32::MAX;
        for i in 0..strings.len() {
            for k in 1..4 {
                best = best.min(dist(&strings[i][0], &strings[i][k]));
            }
            for j in 0..strings.len() {
                if i == j {
                    continue;
                }
                for ki in 0..4 {
                    for kj in 0..4 {
                        best = best.min(dist(&strings[i][ki], &strings[j][kj]));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn family_16h5_is_sound() {
        let family = generate_lexicode(4, 5, 1).unwrap();
        assert!(family.len() >= 10, "only {} codewords", family.len());
        assert!(min_rotation_inclusive_distance(&family) >= 5);
        let report = family.verify();
        assert!(report.is_sound());
        assert!(report.min_distance.unwrap() >= 5);
    }

    #[test]
    fn tiny_payload_with_large_distance() {
        // 2x2 with h=5 is impossible: a word and its rotation differ in at most 4 bits.
        assert_eq!(
            generate_lexicode(2, 5, 3),
            Err(CodebookError::BadParameters { d: 2, h: 5 })
        );
        // h=4 over 4 bits: exhaustive re-check of whatever was accepted.
        match generate_lexicode(2, 4, 3) {
            Ok(family) => assert!(min_rotation_inclusive_distance(&family) >= 4),
            Err(e) => assert_eq!(e, CodebookError::Infeasible { d: 2, h: 4 }),
        }
        let family = generate_lexicode(2, 2, 3).unwrap();
        assert!(min_rotation_inclusive_distance(&family) >= 2);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_lexicode(4, 5, 42).unwrap(),
            generate_lexicode(4, 5, 42).unwrap()
        );
        assert_ne!(
            generate_lexicode(4, 5, 42).unwrap().codewords,
            generate_lexicode(4, 5, 43).unwrap().codewords
        );
    }
}
