//! Product quantization: codebook training, encoding, decoding and
//! asymmetric distance computation (ADC).
//!
//! A D-dimensional vector is split into `M` contiguous blocks of `Ds = D / M`
//! columns. Each block is quantized independently against its own table of
//! `Ks` codewords, so a vector is stored as `M` small integers. Queries stay
//! unquantized: [`Codebook::adc_table`] precomputes the squared distance from
//! every query block to every codeword, after which the distance to any code
//! is `M` table lookups.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, ByteReader};
use crate::kmeans::{kmeans_fit, CentroidBlocks, KMeansParams, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::matrix::{squared_l2, VectorMatrix};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"PQCB";
pub const CODES_MAGIC: [u8; 4] = *b"PQCM";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_KS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqParams {
    pub m_subspaces: usize,
    pub ks: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl PqParams {
    pub fn new(m_subspaces: usize, ks: usize) -> Self {
        Self {
            m_subspaces,
            ks,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

/// `M` tables of `Ks` codewords, each `Ds` wide. Stored as one flat
/// `M × Ks × Ds` slab.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    m_subspaces: usize,
    ks: usize,
    sub_dim: usize,
    tables: Vec<f32>,
}

impl Codebook {
    pub fn new(m_subspaces: usize, ks: usize, sub_dim: usize, tables: Vec<f32>) -> Result<Self> {
        if m_subspaces == 0 || sub_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "codebook needs M >= 1 and Ds >= 1, got M={m_subspaces}, Ds={sub_dim}"
            )));
        }
        check_ks(ks)?;
        if tables.len() != m_subspaces * ks * sub_dim {
            return Err(Error::Shape(format!(
                "{} codeword values for M={m_subspaces}, Ks={ks}, Ds={sub_dim}",
                tables.len()
            )));
        }
        if tables.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite codeword".into()));
        }
        Ok(Self {
            m_subspaces,
            ks,
            sub_dim,
            tables,
        })
    }

    /// Trains one k-means table per subspace. Subspace `m` uses seed
    /// `params.seed + m`.
    pub fn fit(data: &VectorMatrix, params: &PqParams) -> Result<Self> {
        let m = params.m_subspaces;
        if m == 0 || !data.n_dims().is_multiple_of(m) {
            return Err(Error::InvalidParameter(format!(
                "dimension {} is not divisible by M={m}",
                data.n_dims()
            )));
        }
        check_ks(params.ks)?;
        if params.ks > data.n_rows() {
            return Err(Error::TooFewPoints {
                k: params.ks,
                n: data.n_rows(),
            });
        }
        let sub_dim = data.n_dims() / m;
        let mut tables = Vec::with_capacity(m * params.ks * sub_dim);
        for sub in 0..m {
            let slice = data.slice_cols(sub * sub_dim, (sub + 1) * sub_dim)?;
            let fit = kmeans_fit(
                &slice,
                params.ks,
                &KMeansParams {
                    max_iters: params.max_iters,
                    tol: params.tol,
                    seed: params.seed.wrapping_add(sub as u64),
                },
            )?;
            tables.extend_from_slice(fit.centroids.values());
        }
        Ok(Self {
            m_subspaces: m,
            ks: params.ks,
            sub_dim,
            tables,
        })
    }

    #[inline]
    pub fn m_subspaces(&self) -> usize {
        self.m_subspaces
    }

    #[inline]
    pub fn ks(&self) -> usize {
        self.ks
    }

    #[inline]
    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m_subspaces * self.sub_dim
    }

    pub fn tables(&self) -> &[f32] {
        &self.tables
    }

    /// The `Ks × Ds` codeword table of one subspace.
    #[inline]
    pub fn table(&self, sub: usize) -> &[f32] {
        let width = self.ks * self.sub_dim;
        &self.tables[sub * width..(sub + 1) * width]
    }

    #[inline]
    pub fn codeword(&self, sub: usize, j: usize) -> &[f32] {
        let base = (sub * self.ks + j) * self.sub_dim;
        &self.tables[base..base + self.sub_dim]
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Shape(format!(
                "vector dimension {d} does not match codebook dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<CentroidBlocks> {
        (0..self.m_subspaces)
            .map(|sub| CentroidBlocks::new(self.table(sub), self.sub_dim))
            .collect()
    }

    /// Encodes one vector into `out` (length `M`).
    fn encode_into(&self, blocks: &[CentroidBlocks], row: &[f32], out: &mut [u16]) {
        for (sub, code) in out.iter_mut().enumerate() {
            let slice = &row[sub * self.sub_dim..(sub + 1) * self.sub_dim];
            *code = blocks[sub].nearest(slice).0 as u16;
        }
    }

    pub fn encode(&self, data: &VectorMatrix) -> Result<CodeMatrix> {
        self.check_dim(data.n_dims())?;
        let blocks = self.blocks();
        let mut codes = vec![0u16; data.n_rows() * self.m_subspaces];
        for (row, out) in data.rows().zip(codes.chunks_exact_mut(self.m_subspaces)) {
            self.encode_into(&blocks, row, out);
        }
        Ok(CodeMatrix::from_wide_unchecked(
            data.n_rows(),
            self.m_subspaces,
            self.ks,
            codes,
        ))
    }

    pub fn encode_vector(&self, v: &[f32]) -> Result<Vec<usize>> {
        self.check_dim(v.len())?;
        let mut out = vec![0u16; self.m_subspaces];
        self.encode_into(&self.blocks(), v, &mut out);
        Ok(out.into_iter().map(usize::from).collect())
    }

    pub fn decode(&self, codes: &CodeMatrix) -> Result<VectorMatrix> {
        self.check_codes(codes)?;
        let mut values = Vec::with_capacity(codes.n_rows() * self.dim());
        for i in 0..codes.n_rows() {
            self.decode_into(codes.row(i), &mut values);
        }
        Ok(VectorMatrix::from_parts_unchecked(
            codes.n_rows(),
            self.dim(),
            values,
        ))
    }

    pub fn decode_row(&self, code: CodeRow<'_>) -> Result<Vec<f32>> {
        self.check_row(code)?;
        let mut out = Vec::with_capacity(self.dim());
        self.decode_into(code, &mut out);
        Ok(out)
    }

    fn decode_into(&self, code: CodeRow<'_>, out: &mut Vec<f32>) {
        for (sub, j) in code.iter().enumerate() {
            out.extend_from_slice(self.codeword(sub, j));
        }
    }

    pub(crate) fn check_codes(&self, codes: &CodeMatrix) -> Result<()> {
        if codes.m_subspaces() != self.m_subspaces {
            return Err(Error::Shape(format!(
                "codes have M={}, codebook has M={}",
                codes.m_subspaces(),
                self.m_subspaces
            )));
        }
        if codes.ks() > self.ks {
            for i in 0..codes.n_rows() {
                self.check_row(codes.row(i))?;
            }
        }
        Ok(())
    }

    pub(crate) fn check_row(&self, code: CodeRow<'_>) -> Result<()> {
        if code.len() != self.m_subspaces {
            return Err(Error::Shape(format!(
                "code has {} entries, codebook has M={}",
                code.len(),
                self.m_subspaces
            )));
        }
        match code.iter().enumerate().find(|&(_, j)| j >= self.ks) {
            Some((subspace, code)) => Err(Error::CodeOutOfRange {
                subspace,
                code,
                ks: self.ks,
            }),
            None => Ok(()),
        }
    }

    /// Squared distances from each query block to every codeword of its subspace.
    pub fn adc_table(&self, query: &[f32]) -> Result<DistanceTable> {
        self.check_dim(query.len())?;
        let mut entries = Vec::with_capacity(self.m_subspaces * self.ks);
        for sub in 0..self.m_subspaces {
            let q = &query[sub * self.sub_dim..(sub + 1) * self.sub_dim];
            entries.extend(
                self.table(sub)
                    .chunks_exact(self.sub_dim)
                    .map(|c| squared_l2(q, c)),
            );
        }
        Ok(DistanceTable {
            m_subspaces: self.m_subspaces,
            ks: self.ks,
            entries,
        })
    }

    /// RMSE between `data` and its encode/decode reconstruction.
    pub fn reconstruction_rmse(&self, data: &VectorMatrix) -> Result<f64> {
        self.check_dim(data.n_dims())?;
        let blocks = self.blocks();
        let mut buf = vec![0u16; self.m_subspaces];
        let mut sum = 0.0;
        for row in data.rows() {
            self.encode_into(&blocks, row, &mut buf);
            for (sub, &j) in buf.iter().enumerate() {
                let slice = &row[sub * self.sub_dim..(sub + 1) * self.sub_dim];
                sum += squared_l2(slice, self.codeword(sub, j as usize));
            }
        }
        Ok((sum / (data.n_rows() * data.n_dims()) as f64).sqrt())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let mut r = ByteReader::new(&bytes);
        let cb = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(cb)
    }

    pub(crate) fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&CODEBOOK_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.m_subspaces as u32).to_le_bytes())?;
        w.write_all(&(self.ks as u32).to_le_bytes())?;
        w.write_all(&(self.sub_dim as u32).to_le_bytes())?;
        for v in &self.tables {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(CODEBOOK_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let m = r.u32()? as usize;
        let ks = r.u32()? as usize;
        let ds = r.u32()? as usize;
        let tables = r.f32_vec(m * ks * ds)?;
        Self::new(m, ks, ds, tables)
    }
}

fn check_ks(ks: usize) -> Result<()> {
    if ks == 0 || ks > MAX_KS {
        return Err(Error::InvalidParameter(format!(
            "Ks must be in [1, {MAX_KS}], got {ks}"
        )));
    }
    Ok(())
}

/// Per-element RMSE: `sqrt(Σ (a - b)² / (N·D))`.
pub fn rmse(a: &VectorMatrix, b: &VectorMatrix) -> Result<f64> {
    if a.n_rows() != b.n_rows() || a.n_dims() != b.n_dims() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.n_rows(),
            a.n_dims(),
            b.n_rows(),
            b.n_dims()
        )));
    }
    let sum = squared_l2(a.values(), b.values());
    Ok((sum / a.values().len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum CodeStorage {
    Narrow(Vec<u8>),
    Wide(Vec<u16>),
}

/// N×M PQ codes. Stored as bytes when `Ks <= 256`, else as `u16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n_rows: usize,
    m_subspaces: usize,
    ks: usize,
    storage: CodeStorage,
}

/// One row of a [`CodeMatrix`].
#[derive(Debug, Clone, Copy)]
pub enum CodeRow<'a> {
    Narrow(&'a [u8]),
    Wide(&'a [u16]),
}

impl<'a> CodeRow<'a> {
    #[inline]
    pub fn len(&self) -> usize {
        match self {
            CodeRow::Narrow(c) => c.len(),
            CodeRow::Wide(c) => c.len(),
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, sub: usize) -> usize {
        match self {
            CodeRow::Narrow(c) => c[sub] as usize,
            CodeRow::Wide(c) => c[sub] as usize,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = usize> + 'a {
        let (narrow, wide): (&'a [u8], &'a [u16]) = match *self {
            CodeRow::Narrow(c) => (c, &[]),
            CodeRow::Wide(c) => (&[], c),
        };
        let n = narrow.len() + wide.len();
        (0..n).map(move |i| {
            if narrow.is_empty() {
                wide[i] as usize
            } else {
                narrow[i] as usize
            }
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl<'a> From<&'a [u8]> for CodeRow<'a> {
    fn from(c: &'a [u8]) -> Self {
        CodeRow::Narrow(c)
    }
}

impl<'a> From<&'a [u16]> for CodeRow<'a> {
    fn from(c: &'a [u16]) -> Self {
        CodeRow::Wide(c)
    }
}

impl CodeMatrix {
    /// Builds a code matrix from explicit rows, validating every code.
    pub fn from_rows<R: AsRef<[usize]>>(m_subspaces: usize, ks: usize, rows: &[R]) -> Result<Self> {
        check_ks(ks)?;
        let mut flat = Vec::with_capacity(rows.len() * m_subspaces);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != m_subspaces {
                return Err(Error::Shape(format!(
                    "code row {i} has {} entries, expected {m_subspaces}",
                    row.len()
                )));
            }
            for (sub, &c) in row.iter().enumerate() {
                if c >= ks {
                    return Err(Error::CodeOutOfRange {
                        subspace: sub,
                        code: c,
                        ks,
                    });
                }
                flat.push(c as u16);
            }
        }
        Ok(Self::from_wide_unchecked(rows.len(), m_subspaces, ks, flat))
    }

    fn from_wide_unchecked(n_rows: usize, m_subspaces: usize, ks: usize, codes: Vec<u16>) -> Self {
        let storage = if ks <= 256 {
            CodeStorage::Narrow(codes.into_iter().map(|c| c as u8).collect())
        } else {
            CodeStorage::Wide(codes)
        };
        Self {
            n_rows,
            m_subspaces,
            ks,
            storage,
        }
    }

    pub(crate) fn empty(m_subspaces: usize, ks: usize) -> Self {
        Self::from_wide_unchecked(0, m_subspaces, ks, Vec::new())
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn m_subspaces(&self) -> usize {
        self.m_subspaces
    }

    #[inline]
    pub fn ks(&self) -> usize {
        self.ks
    }

    /// Bytes per stored code: 1 or 2.
    pub fn code_width(&self) -> usize {
        match self.storage {
            CodeStorage::Narrow(_) => 1,
            CodeStorage::Wide(_) => 2,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> CodeRow<'_> {
        let m = self.m_subspaces;
        match &self.storage {
            CodeStorage::Narrow(c) => CodeRow::Narrow(&c[i * m..(i + 1) * m]),
            CodeStorage::Wide(c) => CodeRow::Wide(&c[i * m..(i + 1) * m]),
        }
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = CodeRow<'_>> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, sub: usize) -> usize {
        self.row(i).get(sub)
    }

    pub(crate) fn push_row(&mut self, code: CodeRow<'_>) {
        debug_assert_eq!(code.len(), self.m_subspaces);
        match &mut self.storage {
            CodeStorage::Narrow(c) => c.extend(code.iter().map(|j| j as u8)),
            CodeStorage::Wide(c) => c.extend(code.iter().map(|j| j as u16)),
        }
        self.n_rows += 1;
    }

    /// Concatenates code matrices that share `M` and `Ks`.
    pub fn concat(parts: &[&CodeMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot concatenate zero code matrices".into()))?;
        let mut out = Self::empty(first.m_subspaces, first.ks);
        for p in parts {
            if p.m_subspaces != first.m_subspaces || p.ks != first.ks {
                return Err(Error::Shape("code matrices disagree on M or Ks".into()));
            }
            for row in p.rows() {
                out.push_row(row);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&CODES_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        w.write_all(&(self.m_subspaces as u32).to_le_bytes())?;
        w.write_all(&(self.ks as u32).to_le_bytes())?;
        match &self.storage {
            CodeStorage::Narrow(c) => w.write_all(c)?,
            CodeStorage::Wide(c) => {
                for v in c {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let mut r = ByteReader::new(&bytes);
        r.expect_magic(CODES_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n = r.u64()? as usize;
        let m = r.u32()? as usize;
        let ks = r.u32()? as usize;
        check_ks(ks)?;
        let total = n * m;
        let mut codes = Vec::with_capacity(total);
        for _ in 0..total {
            let c = if ks <= 256 { r.u8()? as u16 } else { r.u16()? };
            if c as usize >= ks {
                return Err(Error::CodeOutOfRange {
                    subspace: codes.len() % m.max(1),
                    code: c as usize,
                    ks,
                });
            }
            codes.push(c);
        }
        r.finish()?;
        Ok(Self::from_wide_unchecked(n, m, ks, codes))
    }
}

/// `M × Ks` squared distances from one query to every codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    m_subspaces: usize,
    ks: usize,
    entries: Vec<f64>,
}

impl DistanceTable {
    pub fn m_subspaces(&self) -> usize {
        self.m_subspaces
    }

    pub fn ks(&self) -> usize {
        self.ks
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn entry(&self, sub: usize, j: usize) -> f64 {
        self.entries[sub * self.ks + j]
    }

    /// Approximate squared distance from the query to the decoded `code`.
    pub fn lookup(&self, code: CodeRow<'_>) -> Result<f64> {
        if code.len() != self.m_subspaces {
            return Err(Error::Shape(format!(
                "code has {} entries, table has M={}",
                code.len(),
                self.m_subspaces
            )));
        }
        if let Some((subspace, c)) = code.iter().enumerate().find(|&(_, c)| c >= self.ks) {
            return Err(Error::CodeOutOfRange {
                subspace,
                code: c,
                ks: self.ks,
            });
        }
        Ok(self.lookup_unchecked(code))
    }

    /// Caller guarantees the code is valid for this table.
    #[inline]
    pub(crate) fn lookup_unchecked(&self, code: CodeRow<'_>) -> f64 {
        match code {
            CodeRow::Narrow(c) => c
                .iter()
                .enumerate()
                .map(|(sub, &j)| self.entries[sub * self.ks + j as usize])
                .sum(),
            CodeRow::Wide(c) => c
                .iter()
                .enumerate()
                .map(|(sub, &j)| self.entries[sub * self.ks + j as usize])
                .sum(),
        }
    }
}
