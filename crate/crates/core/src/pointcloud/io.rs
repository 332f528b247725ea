//! Scan CSV format: `beam,azimuth_index,x,y,z,intensity`, one header line, one return per line.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::Deserialize;

use super::{build_scan, Point, Scan, ScanError};

pub const CSV_HEADER: &str = "beam,azimuth_index,x,y,z,intensity";

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    /// Beam count of the sensor. Inferred as `max(beam) + 1` when absent.
    pub num_beams: Option<usize>,
    /// Raw intensities are divided by this value at ingestion (255 for 8-bit sensors).
    pub intensity_scale: f64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            num_beams: None,
            intensity_scale: 1.0,
        }
    }
}

#[derive(Deserialize)]
struct Row {
    beam: u32,
    azimuth_index: u32,
    x: f64,
    y: f64,
    z: f64,
    intensity: f64,
}

pub fn read_csv(reader: impl Read, options: CsvOptions) -> Result<Scan<f64>, ScanError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| ScanError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if !header.is_empty() && header.join(",") != CSV_HEADER {
        return Err(ScanError::Parse {
            line: 1,
            message: format!("expected header `{CSV_HEADER}`"),
        });
    }
    let mut points = Vec::new();
    for record in rdr.deserialize::<Row>() {
        let row = record.map_err(|e| ScanError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                other => format!("{other:?}"),
            },
        })?;
        points.push(Point::new(
            Vector3::new(row.x, row.y, row.z),
            row.intensity / options.intensity_scale,
            row.beam,
            row.azimuth_index,
        ));
    }
    let num_beams = options
        .num_beams
        .unwrap_or_else(|| points.iter().map(|p| p.beam as usize + 1).max().unwrap_or(0));
    build_scan(points, num_beams)
}

/// Writes returns in canonical order. Floats use the shortest representation that reads back
/// to the same value, so a write/read cycle is lossless.
pub fn write_csv(scan: &Scan<f64>, mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "{CSV_HEADER}")?;
    for p in scan.iter() {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            p.beam, p.azimuth_index, p.position.x, p.position.y, p.position.z, p.intensity
        )?;
    }
    Ok(())
}
