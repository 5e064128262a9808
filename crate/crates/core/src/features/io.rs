//! Feature matrix (`FMAT`, CSV) and waveform (16-bit PCM WAV) files.
//!
//! `FMAT` layout: the bytes `FMAT`, then little-endian `u32` rows and `u32`
//! cols, then `rows * cols` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::Waveform;
use crate::error::{Error, Result};

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";

pub fn write_fmat<W: Write>(mut w: W, m: &Array2<f64>) -> Result<()> {
    let (rows, cols) = m.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::invalid("too many rows for FMAT"))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::invalid("too many cols for FMAT"))?;
    w.write_all(FMAT_MAGIC)?;
    w.write_u32::<LittleEndian>(rows32)?;
    w.write_u32::<LittleEndian>(cols32)?;
    for v in m.iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

/// Reads an FMAT stream. `name` labels parse errors.
pub fn read_fmat<R: Read>(mut r: R, name: &Path) -> Result<Array2<f64>> {
    let truncated = |what: &str| Error::parse(name, 0, format!("truncated FMAT: missing {what}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != FMAT_MAGIC {
        return Err(Error::parse(name, 0, "bad magic, expected FMAT"));
    }
    let rows = r.read_u32::<LittleEndian>().map_err(|_| truncated("row count"))? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(|_| truncated("column count"))? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::parse(name, 0, "matrix size overflows"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::parse(
            name,
            0,
            format!(
                "truncated FMAT: expected {} data bytes for {rows}x{cols}, found {}",
                count * 4,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn save_fmat(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fmat(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_fmat(path: &Path) -> Result<Array2<f64>> {
    read_fmat(BufReader::new(File::open(path)?), path)
}

/// Reads a numeric CSV. A first row that does not parse as numbers is
/// taken as a header.
pub fn load_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(Error::parse(
                            path,
                            i + 1,
                            format!("expected {} columns, found {}", first.len(), row.len()),
                        ));
                    }
                }
                rows.push(row);
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::parse(path, i + 1, e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no numeric rows"));
    }
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("rectangular"))
}

/// Loads `.fmat` or `.csv` by extension.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_csv_matrix(path),
        _ => load_fmat(path),
    }
}

pub fn save_csv_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// 16-bit PCM mono WAV, scaled to [-1, 1).
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::parse(
            path,
            0,
            format!(
                "expected 16-bit PCM mono, got {} channel(s) at {} bits",
                spec.channels, spec.bits_per_sample
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono, clipping to the representable range.
pub fn save_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::invalid(e.to_string()))?;
    for s in w.samples() {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(|e| Error::invalid(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(())
}
