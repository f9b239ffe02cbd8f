//! Dataset loading, persistence, synthetic generation and row chunking.
//!
//! Three on-disk formats are supported:
//!
//! * fvecs: repeated `[dim: i32 LE][dim × f32 LE]` records.
//! * native: `"PQIM"`, version `u32 = 1`, `N: u64`, `D: u32`, then `N×D` `f32`, all LE.
//! * CSV with a header row.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{read_file, ByteReader};
use crate::matrix::VectorMatrix;

pub const NATIVE_MAGIC: [u8; 4] = *b"PQIM";
pub const NATIVE_VERSION: u32 = 1;

/// Half-open row interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// Parameters of the equal-weight Gaussian mixture produced by [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_dims: usize,
    pub n_clusters: usize,
    /// Per-component standard deviation.
    pub spread: f64,
    pub seed: u64,
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorMatrix> {
    let path = path.as_ref();
    parse_fvecs(&read_file(path)?)
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorMatrix> {
    let mut reader = ByteReader::new(bytes);
    if reader.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut dim = None;
    let mut values = Vec::new();
    let mut record = 0usize;
    while !reader.is_empty() {
        let raw_dim = reader
            .i32()
            .map_err(|_| Error::Truncated(format!("record {record}: incomplete dimension header")))?;
        if raw_dim <= 0 {
            return Err(Error::Truncated(format!(
                "record {record}: invalid dimension {raw_dim}"
            )));
        }
        let d = raw_dim as usize;
        let expected = *dim.get_or_insert(d);
        if d != expected {
            return Err(Error::RecordDimension {
                record,
                expected,
                found: d,
            });
        }
        for col in 0..d {
            let v = reader
                .f32()
                .map_err(|_| Error::Truncated(format!("record {record}: payload ends early")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: record, col });
            }
            values.push(v);
        }
        record += 1;
    }
    let d = dim.unwrap_or(0);
    VectorMatrix::new(record, d, values)
}

pub fn save_fvecs(matrix: &VectorMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(matrix.n_rows() * (4 + 4 * matrix.n_dims()));
    for row in matrix.rows() {
        out.extend_from_slice(&(row.len() as i32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_native(matrix: &VectorMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_native(matrix, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_native(matrix: &VectorMatrix, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&NATIVE_MAGIC)?;
    w.write_all(&NATIVE_VERSION.to_le_bytes())?;
    w.write_all(&(matrix.n_rows() as u64).to_le_bytes())?;
    w.write_all(&(matrix.n_dims() as u32).to_le_bytes())?;
    for v in matrix.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_native(path: impl AsRef<Path>) -> Result<VectorMatrix> {
    parse_native(&read_file(path.as_ref())?)
}

pub fn parse_native(bytes: &[u8]) -> Result<VectorMatrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(NATIVE_MAGIC)?;
    let version = r.u32()?;
    if version != NATIVE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.u64()?;
    let d = r.u32()? as u64;
    let expected = n
        .checked_mul(d)
        .ok_or_else(|| Error::Truncated("header dimensions overflow".into()))?;
    let available = (r.remaining() / 4) as u64;
    if available < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: available,
        });
    }
    let values = r.f32_vec(expected as usize)?;
    if !r.is_empty() {
        return Err(Error::Shape(format!(
            "{} trailing bytes after payload",
            r.remaining()
        )));
    }
    VectorMatrix::new(n as usize, d as usize, values)
}

/// Loads a CSV file whose first row is a header.
///
/// With `columns = None` every column whose cells all parse as numbers is
/// kept, in file order. With a selection, columns come back in selection
/// order and any unparseable cell is an error.
pub fn load_csv(path: impl AsRef<Path>, columns: Option<&[&str]>) -> Result<VectorMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, columns)
}

pub fn parse_csv(input: impl std::io::Read, columns: Option<&[&str]>) -> Result<VectorMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Csv(e.to_string()))?;

    let parse = |s: &str| s.trim().parse::<f32>().ok().filter(|v| v.is_finite());

    let selected: Vec<usize> = match columns {
        Some(names) => names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| {
                !records.is_empty()
                    && records
                        .iter()
                        .all(|r| r.get(c).and_then(parse).is_some())
            })
            .collect(),
    };
    if selected.is_empty() || records.is_empty() {
        return Err(Error::EmptySelection);
    }

    let mut values = Vec::with_capacity(records.len() * selected.len());
    for (row, record) in records.iter().enumerate() {
        for &c in &selected {
            let cell = record.get(c).unwrap_or("");
            let v = parse(cell).ok_or_else(|| Error::CsvParse {
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
    }
    VectorMatrix::new(records.len(), selected.len(), values)
}

/// Loads a matrix, choosing the format from the file extension:
/// `.fvecs`, `.csv`, anything else is the native format.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<VectorMatrix> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("fvecs") => load_fvecs(path),
        Some("csv") => load_csv(path, None),
        _ => load_native(path),
    }
}

/// Saves a matrix as fvecs when the extension is `.fvecs`, native otherwise.
pub fn save_matrix(matrix: &VectorMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("fvecs") => save_fvecs(matrix, path),
        _ => save_native(matrix, path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Draws rows from an equal-weight Gaussian mixture.
///
/// Component means are uniform in `[0, 10]^D`; each row picks a component
/// uniformly and adds isotropic noise with standard deviation `spread`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<VectorMatrix> {
    if spec.n_rows == 0 || spec.n_dims == 0 {
        return Err(Error::InvalidParameter(format!(
            "synthetic shape must be at least 1x1, got {}x{}",
            spec.n_rows, spec.n_dims
        )));
    }
    if spec.n_clusters == 0 {
        return Err(Error::InvalidParameter("n_clusters must be >= 1".into()));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "spread must be positive, got {}",
            spec.spread
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.n_dims;
    let means: Vec<f64> = (0..spec.n_clusters * d)
        .map(|_| rng.random::<f64>() * 10.0)
        .collect();

    let mut values = Vec::with_capacity(spec.n_rows * d);
    for _ in 0..spec.n_rows {
        let c = rng.random_range(0..spec.n_clusters);
        let mean = &means[c * d..(c + 1) * d];
        for &mu in mean {
            let z: f64 = rng.sample(StandardNormal);
            values.push((mu + spec.spread * z) as f32);
        }
    }
    VectorMatrix::new(spec.n_rows, d, values)
}

/// Splits `n_rows` into `n_chunks` contiguous ranges whose sizes differ by at
/// most one; the first `n_rows % n_chunks` ranges carry the extra row.
pub fn chunk_rows(n_rows: usize, n_chunks: usize) -> Result<Vec<RowRange>> {
    if n_chunks == 0 || n_chunks > n_rows {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n_rows} rows into {n_chunks} chunks"
        )));
    }
    let base = n_rows / n_chunks;
    let extra = n_rows % n_chunks;
    let mut start = 0;
    Ok((0..n_chunks)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let range = RowRange {
                start,
                end: start + len,
            };
            start += len;
            range
        })
        .collect())
}
