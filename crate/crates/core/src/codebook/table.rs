use std::collections::HashMap;

use thiserror::Error;

use super::{all_rotations, hamming, CodebookError, TagFamily};

/// Precomputed lookup over every codeword in all four orientations.
#[derive(Debug, Clone)]
pub struct DecodingTable {
    family: TagFamily,
    exact: HashMap<u64, (u32, u8)>,
    /// `(word, id, k)` in insertion order, for the nearest-neighbor search.
    entries: Vec<(u64, u32, u8)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeResult {
    pub tag_id: u32,
    /// Clockwise quarter turns between the stored codeword and the observed word.
    pub rotation_k: u8,
    /// Distance over the known bits.
    pub hamming_distance: u32,
    /// Flipped plus unknown bits.
    pub corrected_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no codeword within the correctable distance (best {best_distance}, ambiguous: {ambiguous})")]
    NoMatch { best_distance: u32, ambiguous: bool },
    #[error("{unknown} unknown bits exceed the allowance of {allowed}")]
    TooManyBadBits { unknown: u32, allowed: u32 },
}

impl DecodingTable {
    pub fn family(&self) -> &TagFamily {
        &self.family
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_correctable(&self) -> u32 {
        self.family.max_correctable()
    }

    pub fn lookup_exact(&self, word: u64) -> Option<(u32, u8)> {
        self.exact.get(&word).copied()
    }

    pub fn entries(&self) -> &[(u64, u32, u8)] {
        &self.entries
    }
}

pub fn build_hash_table(family: &TagFamily) -> Result<DecodingTable, CodebookError> {
    let mut exact = HashMap::with_capacity(family.codewords.len() * 4);
    let mut entries = Vec::with_capacity(family.codewords.len() * 4);
    for (id, &code) in family.codewords.iter().enumerate() {
        for (k, word) in all_rotations(code, family.d).into_iter().enumerate() {
            let k = k as u8;
            if let Some(&(other_id, other_k)) = exact.get(&word) {
                return Err(CodebookError::CollisionDetected {
                    id,
                    k,
                    other_id: other_id as usize,
                    other_k,
                });
            }
            exact.insert(word, (id as u32, k));
            entries.push((word, id as u32, k));
        }
    }
    Ok(DecodingTable {
        family: family.clone(),
        exact,
        entries,
    })
}

/// Nearest-codeword decoding over the known bits of `word`.
///
/// Bits set in `unknown_mask` are ignored when measuring distance and counted as
/// corrected. A unique nearest entry within `floor((h-1)/2)` is returned; a tie at the
/// minimum distance is reported as an ambiguous [`DecodeError::NoMatch`].
pub fn decode_codeword(
    table: &DecodingTable,
    word: u64,
    unknown_mask: u64,
    max_bad_bits: u32,
) -> Result<DecodeResult, DecodeError> {
    let n = table.family.bits();
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let unknown_mask = unknown_mask & full;
    let unknown = unknown_mask.count_ones();
    if unknown > max_bad_bits {
        return Err(DecodeError::TooManyBadBits {
            unknown,
            allowed: max_bad_bits,
        });
    }
    let limit = table.max_correctable();
    if unknown == 0 {
        if let Some((tag_id, rotation_k)) = table.lookup_exact(word & full) {
            return Ok(DecodeResult {
                tag_id,
                rotation_k,
                hamming_distance: 0,
                corrected_bits: 0,
            });
        }
    }
    let known = full & !unknown_mask;
    let mut best: Option<(u32, u32, u8)> = None;
    let mut ties = 0usize;
    for &(entry, id, k) in &table.entries {
        let dist = hamming(entry & known, word & known);
        match best {
            Some((b, _, _)) if dist > b => {}
            Some((b, _, _)) if dist == b => ties += 1,
            _ => {
                best = Some((dist, id, k));
                ties = 0;
            }
        }
    }
    match best {
        Some((dist, tag_id, rotation_k)) if dist <= limit && ties == 0 => Ok(DecodeResult {
            tag_id,
            rotation_k,
            hamming_distance: dist,
            corrected_bits: dist + unknown,
        }),
        Some((dist, _, _)) => Err(DecodeError::NoMatch {
            best_distance: dist,
            ambiguous: ties > 0,
        }),
        None => Err(DecodeError::NoMatch {
            best_distance: n as u32,
            ambiguous: false,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_lexicode, rotate_codeword};
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn table16h5() -> &'static DecodingTable {
        static TABLE: OnceLock<DecodingTable> = OnceLock::new();
        TABLE.get_or_init(|| build_hash_table(&generate_lexicode(4, 5, 1).unwrap()).unwrap())
    }

    #[test]
    fn single_codeword_has_four_entries() {
        let family = TagFamily {
            name: "one".into(),
            d: 4,
            h: 5,
            codewords: vec![table16h5().family().codewords[0]],
        };
        assert_eq!(build_hash_table(&family).unwrap().len(), 4);
    }

    #[test]
    fn generated_family_has_no_collisions() {
        let t = table16h5();
        assert_eq!(t.len(), 4 * t.family().len());
    }

    #[test]
    fn duplicate_codeword_collides() {
        let mut family = table16h5().family().clone();
        family.codewords.push(family.codewords[2]);
        assert!(matches!(
            build_hash_table(&family),
            Err(CodebookError::CollisionDetected { other_id: 2, .. })
        ));
    }

    #[test]
    fn exact_and_corrected_lookups() {
        let t = table16h5();
        let c = t.family().codewords[3];
        assert_eq!(
            decode_codeword(t, c, 0, 2).unwrap(),
            DecodeResult {
                tag_id: 3,
                rotation_k: 0,
                hamming_distance: 0,
                corrected_bits: 0
            }
        );
        let two_flips = c ^ 0b1000_0000_0000_0001;
        let r = decode_codeword(t, two_flips, 0, 2).unwrap();
        assert_eq!((r.tag_id, r.rotation_k, r.hamming_distance), (3, 0, 2));
        let rotated = rotate_codeword(c, 4, 3) ^ (1 << 7);
        let r = decode_codeword(t, rotated, 0, 2).unwrap();
        assert_eq!((r.tag_id, r.rotation_k, r.hamming_distance), (3, 3, 1));
    }

    #[test]
    fn unknown_bits_do_not_count_toward_distance() {
        let t = table16h5();
        let c = t.family().codewords[1];
        let mask = 0b11 << 4;
        let r = decode_codeword(t, c ^ mask, mask, 2).unwrap();
        assert_eq!((r.tag_id, r.hamming_distance, r.corrected_bits), (1, 0, 2));
        assert_eq!(
            decode_codeword(t, c, 0b111, 2),
            Err(DecodeError::TooManyBadBits {
                unknown: 3,
                allowed: 2
            })
        );
    }

    proptest! {
        #[test]
        fn correctable_errors_always_decode(
            idx in 0usize..1000,
            k in 0u8..4,
            e1 in 0u32..16,
            e2 in 0u32..16,
            n_err in 0usize..=2,
        ) {
            let t = table16h5();
            let id = idx % t.family().len();
            let mut err = 0u64;
            for b in [e1, e2].into_iter().take(n_err) {
                err |= 1 << b;
            }
            let word = rotate_codeword(t.family().codewords[id], 4, k) ^ err;
            let r = decode_codeword(t, word, 0, 2).unwrap();
            prop_assert_eq!((r.tag_id as usize, r.rotation_k), (id, k));
            prop_assert!(r.hamming_distance <= 2);
        }

        #[test]
        fn never_exceeds_correctable_distance(word in 0u64..(1 << 16), mask in 0u64..(1 << 16)) {
            let t = table16h5();
            if let Ok(r) = decode_codeword(t, word, mask, 16) {
                prop_assert!(r.hamming_distance <= t.max_correctable());
            }
        }
    }
}
