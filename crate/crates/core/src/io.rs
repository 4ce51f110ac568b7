//! Plain-text artifacts. Indices on disk are one-based and every float is
//! written with 17 significant digits, so values read back are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::limitlaw::SpectralDensity;
use crate::matrices::EdgeCounts;
use crate::sampler::SamplePath;
use crate::spectra::HistogramBin;

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::ParseError {
        line,
        message: format!("not a number: {s:?}"),
    })
}

fn parse_index(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .ok()
        .filter(|&i| i >= 1)
        .ok_or_else(|| Error::ParseError {
            line,
            message: format!("not a one-based index: {s:?}"),
        })
}

/// Nonblank lines with one-based numbers, skipping `#` comments.
fn data_lines(reader: impl Read) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, t.to_owned()));
        }
    }
    Ok(out)
}

/// Drops the first line if it does not start with a number.
fn skip_header(mut lines: Vec<(usize, String)>) -> Vec<(usize, String)> {
    let is_header = lines.first().is_some_and(|(_, l)| {
        let first = l.split(',').next().unwrap_or("").trim();
        first.parse::<f64>().is_err()
    });
    if is_header {
        lines.remove(0);
    }
    lines
}

/// Sparse counts as `i,j,value` triplets, preceded by a `# n = ..` line.
pub fn write_counts(mut w: impl Write, counts: &EdgeCounts) -> Result<()> {
    writeln!(w, "# n = {}", counts.n())?;
    writeln!(w, "i,j,value")?;
    for (i, j, v) in counts.iter() {
        writeln!(w, "{},{},{}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn save_counts(path: &Path, counts: &EdgeCounts) -> Result<()> {
    let mut w = create(path)?;
    write_counts(&mut w, counts)?;
    w.flush()?;
    Ok(())
}

/// Reads triplets written by [`write_counts`]. Without a `# n = ..` line the
/// dimension is the largest index seen.
pub fn read_counts(reader: impl Read) -> Result<EdgeCounts> {
    let mut declared = None;
    let mut triplets = Vec::new();
    let mut max_index = 0;
    let mut header_seen = false;
    for (line_no, line) in BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
    {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(v) = rest
                .trim()
                .strip_prefix("n =")
                .or_else(|| rest.trim().strip_prefix("n="))
            {
                declared = Some(parse_index(v, line_no)?);
            }
            continue;
        }
        if !header_seen && triplets.is_empty() && t.eq_ignore_ascii_case("i,j,value") {
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::ParseError {
                line: line_no,
                message: "expected i,j,value".into(),
            });
        }
        let i = parse_index(fields[0], line_no)?;
        let j = parse_index(fields[1], line_no)?;
        let v: u64 = fields[2].trim().parse().map_err(|_| Error::ParseError {
            line: line_no,
            message: format!("not a count: {:?}", fields[2]),
        })?;
        max_index = max_index.max(i).max(j);
        triplets.push((i - 1, j - 1, v));
    }
    let n = declared.unwrap_or(max_index);
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    EdgeCounts::from_triplets(n, triplets)
}

pub fn load_counts(path: &Path) -> Result<EdgeCounts> {
    read_counts(File::open(path)?)
}

/// Dense matrix, one comma-separated row per line.
pub fn write_dense(mut w: impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_dense(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    write_dense(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_dense(reader: impl Read) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in data_lines(reader)? {
        let row = line
            .split(',')
            .map(|s| parse_f64(s, line_no))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ParseError {
                    line: line_no,
                    message: "ragged matrix row".into(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| {
        rows[i][j]
    }))
}

pub fn load_dense(path: &Path) -> Result<DMatrix<f64>> {
    read_dense(File::open(path)?)
}

/// Singular values, one per line under a `singular_value` header.
pub fn write_spectrum(mut w: impl Write, values: &[f64]) -> Result<()> {
    writeln!(w, "singular_value")?;
    for &v in values {
        writeln!(w, "{}", fmt_f64(v))?;
    }
    Ok(())
}

pub fn save_spectrum(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    write_spectrum(&mut w, values)?;
    w.flush()?;
    Ok(())
}

pub fn read_spectrum(reader: impl Read) -> Result<Vec<f64>> {
    let values = skip_header(data_lines(reader)?)
        .into_iter()
        .map(|(line_no, l)| parse_f64(&l, line_no))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values)
}

pub fn load_spectrum(path: &Path) -> Result<Vec<f64>> {
    read_spectrum(File::open(path)?)
}

/// Density table `x,density,cdf`.
pub fn write_density(mut w: impl Write, d: &SpectralDensity) -> Result<()> {
    writeln!(w, "x,density,cdf")?;
    for i in 0..d.grid.len() {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(d.grid[i]),
            fmt_f64(d.density[i]),
            fmt_f64(d.cdf[i])
        )?;
    }
    Ok(())
}

pub fn save_density(path: &Path, d: &SpectralDensity) -> Result<()> {
    let mut w = create(path)?;
    write_density(&mut w, d)?;
    w.flush()?;
    Ok(())
}

/// Reads a density table; a grid starting at `x >= 0` is taken to be a
/// folded singular value density. The CDF is recomputed from the density.
pub fn read_density(reader: impl Read) -> Result<SpectralDensity> {
    let (mut grid, mut density) = (Vec::new(), Vec::new());
    for (line_no, line) in skip_header(data_lines(reader)?) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::ParseError {
                line: line_no,
                message: "expected x,density[,cdf]".into(),
            });
        }
        grid.push(parse_f64(fields[0], line_no)?);
        density.push(parse_f64(fields[1], line_no)?);
    }
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let folded = grid[0] >= 0.0;
    SpectralDensity::new(grid, density, Vec::new(), folded)
}

pub fn load_density(path: &Path) -> Result<SpectralDensity> {
    read_density(File::open(path)?)
}

pub fn write_histogram(mut w: impl Write, bins: &[HistogramBin]) -> Result<()> {
    writeln!(w, "lo,hi,mass")?;
    for b in bins {
        writeln!(w, "{},{},{}", fmt_f64(b.lo), fmt_f64(b.hi), fmt_f64(b.mass))?;
    }
    Ok(())
}

/// Frequency table of edge counts: `value,count`.
pub fn write_value_histogram(mut w: impl Write, hist: &[u64]) -> Result<()> {
    writeln!(w, "value,count")?;
    for (v, c) in hist.iter().enumerate() {
        writeln!(w, "{v},{c}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFormat {
    /// One one-based state per line, readable as a state sequence.
    Csv,
    /// Little-endian `u32` zero-based states.
    Binary,
}

pub fn write_path(mut w: impl Write, path: &SamplePath, format: PathFormat) -> Result<()> {
    match format {
        PathFormat::Csv => {
            for &s in &path.states {
                writeln!(w, "{}", s + 1)?;
            }
        }
        PathFormat::Binary => {
            for &s in &path.states {
                let s = u32::try_from(s)
                    .map_err(|_| Error::InvalidArgument("state exceeds u32".into()))?;
                w.write_all(&s.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_binary_path(mut reader: impl Read) -> Result<Vec<usize>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::ParseError {
            line: 0,
            message: "binary path length is not a multiple of 4".into(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect())
}

pub fn save_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
