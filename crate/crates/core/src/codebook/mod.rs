//! Tag families, codeword rotation and Hamming-distance decoding.
//!
//! # Bit ordering
//!
//! A codeword of a `d x d` payload is stored in the low `d*d` bits of a `u64`. Cell
//! `(row, col)` (row 0 at the top, column 0 on the left as seen from the front of the tag)
//! has row-major index `i = row * d + col` and lives at bit `d*d - 1 - i`, so the first
//! character of the bit-string and the leading hex digit both describe the top-left cells.
//! A bit value of `1` is a white cell.

mod family_file;
mod lexicode;
mod table;

pub use family_file::{
    builtin_family, family_from_hex_lines, read_family, resolve_family, write_family, FamilyFile,
    DEFAULT_BUILTIN_SEED,
};
pub use lexicode::generate_lexicode;
pub use table::{build_hash_table, decode_codeword, DecodeError, DecodeResult, DecodingTable};

use thiserror::Error;

/// Largest supported payload side; `d*d` bits must fit a `u64`.
pub const MAX_D: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodebookError {
    #[error("bit strings have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("expected {expected} bits, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("invalid bit character {0:?}")]
    BadBit(char),
    #[error("unsupported family parameters d={d}, h={h}")]
    BadParameters { d: usize, h: usize },
    #[error("no codeword satisfies d={d}, h={h}")]
    Infeasible { d: usize, h: usize },
    #[error("codeword {id} rotation {k} collides with codeword {other_id} rotation {other_k}")]
    CollisionDetected {
        id: usize,
        k: u8,
        other_id: usize,
        other_k: u8,
    },
    #[error("invalid family file: {0}")]
    BadFile(String),
}

/// A set of codewords with a rotation-inclusive minimum Hamming distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFamily {
    pub name: String,
    /// Payload side length in cells.
    pub d: usize,
    /// Guaranteed minimum Hamming distance.
    pub h: usize,
    pub codewords: Vec<u64>,
}

/// Result of the exhaustive distance check over all codewords and rotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyReport {
    pub codewords: usize,
    /// Smallest distance seen between any codeword and any rotation of itself or another
    /// codeword; `None` for an empty family.
    pub min_distance: Option<u32>,
    /// `(id, other_id, k, distance)` for every pair below `h`. `id == other_id` denotes a
    /// self-rotation conflict.
    pub violations: Vec<(usize, usize, u8, u32)>,
}

impl FamilyReport {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }
}

impl TagFamily {
    pub fn bits(&self) -> usize {
        self.d * self.d
    }

    /// Maximum number of bit errors the family corrects, `floor((h - 1) / 2)`.
    pub fn max_correctable(&self) -> u32 {
        (self.h.saturating_sub(1) / 2) as u32
    }

    /// Exhaustive rotation-inclusive distance check.
    pub fn verify(&self) -> FamilyReport {
        let mut violations = Vec::new();
        let mut min_distance: Option<u32> = None;
        let mut record = |i: usize, j: usize, k: u8, dist: u32| {
            min_distance = Some(min_distance.map_or(dist, |m| m.min(dist)));
            if (dist as usize) < self.h {
                violations.push((i, j, k, dist));
            }
        };
        let rotations: Vec<[u64; 4]> = self
            .codewords
            .iter()
            .map(|&c| all_rotations(c, self.d))
            .collect();
        for (i, &a) in self.codewords.iter().enumerate() {
            for k in 1..4u8 {
                record(i, i, k, hamming(a, rotations[i][k as usize]));
            }
            for (j, rot_b) in rotations.iter().enumerate().skip(i + 1) {
                for k in 0..4u8 {
                    record(i, j, k, hamming(a, rot_b[k as usize]));
                }
            }
        }
        FamilyReport {
            codewords: self.codewords.len(),
            min_distance,
            violations,
        }
    }

    /// Number of codewords.
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }
}

#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Hamming distance between two `0`/`1` strings.
pub fn hamming_str(a: &str, b: &str) -> Result<u32, CodebookError> {
    if a.len() != b.len() {
        return Err(CodebookError::LengthMismatch(a.len(), b.len()));
    }
    let mut dist = 0;
    for (x, y) in a.chars().zip(b.chars()) {
        for c in [x, y] {
            if c != '0' && c != '1' {
                return Err(CodebookError::BadBit(c));
            }
        }
        dist += u32::from(x != y);
    }
    Ok(dist)
}

/// Parses a `d*d` character `0`/`1` string, first character = top-left cell.
pub fn parse_bits(s: &str, d: usize) -> Result<u64, CodebookError> {
    let n = d * d;
    if d > MAX_D || s.chars().count() != n {
        return Err(CodebookError::BadLength {
            expected: n,
            actual: s.chars().count(),
        });
    }
    s.chars().try_fold(0u64, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        other => Err(CodebookError::BadBit(other)),
    })
}

pub fn format_bits(code: u64, d: usize) -> String {
    (0..d * d)
        .map(|i| if cell(code, d, i / d, i % d) { '1' } else { '0' })
        .collect()
}

/// Value of cell `(row, col)`.
#[inline]
pub fn cell(code: u64, d: usize, row: usize, col: usize) -> bool {
    (code >> (d * d - 1 - (row * d + col))) & 1 == 1
}

#[inline]
fn with_cell(code: u64, d: usize, row: usize, col: usize) -> u64 {
    code | (1u64 << (d * d - 1 - (row * d + col)))
}

/// Rotates the `d x d` grid by `90 * k` degrees clockwise (as seen from the front).
pub fn rotate_codeword(code: u64, d: usize, k: u8) -> u64 {
    let mut out = code;
    for _ in 0..(k % 4) {
        out = rotate90(out, d);
    }
    out
}

fn rotate90(code: u64, d: usize) -> u64 {
    let mut out = 0;
    for row in 0..d {
        for col in 0..d {
            // new(row, col) = old(d - 1 - col, row)
            if cell(code, d, d - 1 - col, row) {
                out = with_cell(out, d, row, col);
            }
        }
    }
    out
}

pub fn all_rotations(code: u64, d: usize) -> [u64; 4] {
    let r1 = rotate90(code, d);
    let r2 = rotate90(r1, d);
    let r3 = rotate90(r2, d);
    [code, r1, r2, r3]
}

/// Rectangle count of the pattern drawn inside a black border, reported as a descriptive
/// metric. Computed by a greedy painter: each step paints the bounding box of the cells
/// that still differ from the current color, then recurses inside that box with the
/// opposite color.
pub fn complexity(code: u64, d: usize) -> usize {
    let grid: Vec<bool> = (0..d * d).map(|i| cell(code, d, i / d, i % d)).collect();
    let mut count = 0;
    let mut region = (0, d - 1, 0, d - 1);
    // The border is black, so painting starts from a black background.
    let mut background = false;
    loop {
        let (r0, r1, c0, c1) = region;
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if grid[r * d + c] != background {
                    bbox = Some(match bbox {
                        None => (r, r, c, c),
                        Some((a, b, x, y)) => (a.min(r), b.max(r), x.min(c), y.max(c)),
                    });
                }
            }
        }
        match bbox {
            None => return count,
            Some(b) => {
                count += 1;
                region = b;
                background = !background;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_hamming_examples() {
        assert_eq!(hamming_str("1011111", "1001011").unwrap(), 2);
        // Differs at positions 2 and 4 only.
        let oracle = "1011110".chars().zip("1001010".chars()).filter(|(a, b)| a != b).count();
        assert_eq!(oracle, 2);
        assert_eq!(hamming_str("1011110", "1001010").unwrap(), 2);
        assert_eq!(hamming_str("1011110", "1011110").unwrap(), 0);
        assert_eq!(
            hamming_str("101", "10"),
            Err(CodebookError::LengthMismatch(3, 2))
        );
    }

    /// Independent oracle: rotate an explicit 2-D grid clockwise.
    fn rotate_grid_oracle(bits: &str, d: usize) -> String {
        let g: Vec<Vec<char>> = bits
            .chars()
            .collect::<Vec<_>>()
            .chunks(d)
            .map(<[char]>::to_vec)
            .collect();
        let mut out = vec![vec!['0'; d]; d];
        for (r, row) in g.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                // Clockwise: (r, c) moves to (c, d - 1 - r).
                out[c][d - 1 - r] = v;
            }
        }
        out.into_iter().flatten().collect()
    }

    #[test]
    fn rotation_moves_corner_clockwise() {
        let code = parse_bits("1000", 2).unwrap();
        assert_eq!(format_bits(rotate_codeword(code, 2, 1), 2), "0100");
        assert_eq!(rotate_grid_oracle("1000", 2), "0100");
        assert_eq!(rotate_codeword(code, 2, 0), code);
    }

    #[test]
    fn bad_length_is_rejected() {
        assert_eq!(
            parse_bits("101", 2),
            Err(CodebookError::BadLength {
                expected: 4,
                actual: 3
            })
        );
    }

    #[test]
    fn complexity_examples() {
        // Solid white needs one rectangle on top of the black border.
        assert_eq!(complexity(parse_bits("1111", 2).unwrap(), 2), 1);
        // Solid black needs nothing beyond the border.
        assert_eq!(complexity(0, 2), 0);
        // White-black-white stripes: white block, then a black bar.
        assert_eq!(complexity(parse_bits("101101101", 3).unwrap(), 3), 2);
    }

    proptest! {
        #[test]
        fn rotation_matches_grid_oracle(code in 0u64..(1 << 16), k in 0u8..4) {
            let mut expected = format_bits(code, 4);
            for _ in 0..k {
                expected = rotate_grid_oracle(&expected, 4);
            }
            prop_assert_eq!(format_bits(rotate_codeword(code, 4, k), 4), expected);
        }

        #[test]
        fn rotation_group_law(code in 0u64..(1 << 25), a in 0u8..4, b in 0u8..4) {
            let d = 5;
            prop_assert_eq!(
                rotate_codeword(rotate_codeword(code, d, a), d, b),
                rotate_codeword(code, d, (a + b) % 4)
            );
            prop_assert_eq!(rotate_codeword(code, d, 4), code);
        }

        #[test]
        fn rotation_is_a_bijection(a in 0u64..(1 << 16), b in 0u64..(1 << 16), k in 0u8..4) {
            prop_assume!(a != b);
            prop_assert_ne!(rotate_codeword(a, 4, k), rotate_codeword(b, 4, k));
        }

        #[test]
        fn bit_string_round_trip(code in 0u64..(1 << 16)) {
            prop_assert_eq!(parse_bits(&format_bits(code, 4), 4).unwrap(), code);
        }
    }
}
