use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{generate_lexicode, CodebookError, TagFamily, MAX_D};

/// Largest payload generated on demand for builtin names.
const MAX_BUILTIN_BITS: usize = 16;
/// Seed used when a builtin name carries none.
pub const DEFAULT_BUILTIN_SEED: u64 = 1;

/// On-disk family description: `{name, d, h, codewords: [hex strings]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub name: String,
    pub d: usize,
    pub h: usize,
    pub codewords: Vec<String>,
}

impl From<&TagFamily> for FamilyFile {
    fn from(family: &TagFamily) -> Self {
        let width = family.bits().div_ceil(4);
        Self {
            name: family.name.clone(),
            d: family.d,
            h: family.h,
            codewords: family
                .codewords
                .iter()
                .map(|c| format!("0x{c:0width$x}"))
                .collect(),
        }
    }
}

impl TryFrom<FamilyFile> for TagFamily {
    type Error = CodebookError;

    fn try_from(file: FamilyFile) -> Result<Self, Self::Error> {
        if !(2..=MAX_D).contains(&file.d) || file.h == 0 || file.h > file.d * file.d {
            return Err(CodebookError::BadParameters {
                d: file.d,
                h: file.h,
            });
        }
        let codewords = file
            .codewords
            .iter()
            .map(|s| parse_hex(s, file.d))
            .collect::<Result<_, _>>()?;
        Ok(TagFamily {
            name: file.name,
            d: file.d,
            h: file.h,
            codewords,
        })
    }
}

fn parse_hex(s: &str, d: usize) -> Result<u64, CodebookError> {
    let trimmed = s.trim();
    let digits = trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
        .unwrap_or(trimmed);
    let value = u64::from_str_radix(digits, 16)
        .map_err(|e| CodebookError::BadFile(format!("codeword {s:?}: {e}")))?;
    let n = d * d;
    if n < 64 && value >> n != 0 {
        return Err(CodebookError::BadFile(format!(
            "codeword {s:?} has more than {n} bits"
        )));
    }
    Ok(value)
}

pub fn read_family(reader: impl Read) -> Result<TagFamily, CodebookError> {
    let file: FamilyFile =
        serde_json::from_reader(reader).map_err(|e| CodebookError::BadFile(e.to_string()))?;
    TagFamily::try_from(file)
}

pub fn write_family(family: &TagFamily, mut writer: impl Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut writer, &FamilyFile::from(family))?;
    writeln!(writer)
}

/// Loads an external codeword list with one hex word per line. Blank lines and lines
/// starting with `#` are skipped.
pub fn family_from_hex_lines(
    name: &str,
    d: usize,
    h: usize,
    text: &str,
) -> Result<TagFamily, CodebookError> {
    let codewords = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect();
    TagFamily::try_from(FamilyFile {
        name: name.to_owned(),
        d,
        h,
        codewords,
    })
}

/// Parses builtin family names of the form `lex{n}h{h}` or `lex{n}h{h}s{seed}`, where `n`
/// is a square payload size of at most 16 bits. Returns `None` for other names.
pub fn builtin_family(name: &str) -> Option<Result<TagFamily, CodebookError>> {
    let rest = name.strip_prefix("lex")?;
    let (n, rest) = rest.split_once('h')?;
    let (h, seed) = match rest.split_once('s') {
        Some((h, seed)) => (h, seed.parse::<u64>().ok()?),
        None => (rest, DEFAULT_BUILTIN_SEED),
    };
    let n: usize = n.parse().ok()?;
    let h: usize = h.parse().ok()?;
    let d = (1..=MAX_D).find(|d| d * d == n)?;
    if n > MAX_BUILTIN_BITS {
        return None;
    }
    Some(generate_lexicode(d, h, seed).map(|mut f| {
        f.name = name.to_owned();
        f
    }))
}

/// Resolves a builtin name (see [`builtin_family`]) or reads a family JSON file.
pub fn resolve_family(spec: &str) -> Result<TagFamily, CodebookError> {
    if let Some(family) = builtin_family(spec) {
        return family;
    }
    let file = std::fs::File::open(spec)
        .map_err(|e| CodebookError::BadFile(format!("{spec}: {e}")))?;
    read_family(std::io::BufReader::new(file))
}
