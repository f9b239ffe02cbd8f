//! IVF-PQ inverted index.
//!
//! Items are PQ codes tagged with a `u64` id. Each item lives in the posting
//! list of the coarse centroid nearest to its decoded vector. A query probes
//! the `nprobe` lists whose coarse centroids are nearest to it and ranks the
//! candidates by ADC distance. Results are ordered by distance, then id.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{read_file, ByteReader};
use crate::kmeans::{kmeans_fit, nearest, CentroidBlocks, KMeansParams};
use crate::matrix::{squared_l2, VectorMatrix};
use crate::pq::{CodeMatrix, CodeRow, Codebook, DistanceTable, FORMAT_VERSION};

pub const INDEX_MAGIC: [u8; 4] = *b"PQII";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    /// Squared L2 distance estimated by ADC.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    pub k_requested: usize,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Fraction of `truth`'s ids that also appear in `approx`.
pub fn recall(approx: &QueryResult, truth: &QueryResult) -> f64 {
    if truth.hits.is_empty() {
        return 1.0;
    }
    let found: HashSet<u64> = approx.hits.iter().map(|h| h.id).collect();
    let hit = truth.hits.iter().filter(|h| found.contains(&h.id)).count();
    hit as f64 / truth.hits.len() as f64
}

/// Options for [`InvertedIndex::search`].
#[derive(Debug, Clone, Copy)]
pub struct SearchParams<'a> {
    pub k: usize,
    pub nprobe: usize,
    /// Restrict candidates to these ids; must be sorted ascending and unique.
    pub subset: Option<&'a [u64]>,
    /// Drop hits whose squared distance exceeds this bound.
    pub max_distance: Option<f64>,
}

impl SearchParams<'_> {
    pub fn new(k: usize, nprobe: usize) -> Self {
        Self {
            k,
            nprobe,
            subset: None,
            max_distance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PostingList {
    ids: Vec<u64>,
    codes: CodeMatrix,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    codebook: Arc<Codebook>,
    coarse: VectorMatrix,
    lists: Vec<PostingList>,
    id_set: HashSet<u64>,
}

impl PartialEq for InvertedIndex {
    fn eq(&self, other: &Self) -> bool {
        self.codebook == other.codebook && self.coarse == other.coarse && self.lists == other.lists
    }
}

/// `round(sqrt(n))` clamped to `[1, n]`.
pub fn default_nlist(n_items: usize) -> usize {
    ((n_items as f64).sqrt().round() as usize).clamp(1, n_items.max(1))
}

impl InvertedIndex {
    /// Trains `nlist` coarse centroids on the decoded codes and indexes every item.
    pub fn build(
        codebook: Arc<Codebook>,
        codes: &CodeMatrix,
        ids: &[u64],
        nlist: usize,
        seed: u64,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidParameter("cannot build an index over zero items".into()));
        }
        if nlist == 0 || nlist > ids.len() {
            return Err(Error::InvalidParameter(format!(
                "nlist must be in [1, {}], got {nlist}",
                ids.len()
            )));
        }
        check_batch(&codebook, codes, ids)?;
        let decoded = codebook.decode(codes)?;
        let coarse = kmeans_fit(
            &decoded,
            nlist,
            &KMeansParams {
                seed,
                ..Default::default()
            },
        )?
        .centroids;
        Self::build_with_coarse(codebook, coarse, codes, ids)
    }

    /// Indexes items against fixed, externally trained coarse centroids.
    pub fn build_with_coarse(
        codebook: Arc<Codebook>,
        coarse: VectorMatrix,
        codes: &CodeMatrix,
        ids: &[u64],
    ) -> Result<Self> {
        let mut index = Self::empty(codebook, coarse)?;
        index.add(codes, ids)?;
        Ok(index)
    }

    pub fn empty(codebook: Arc<Codebook>, coarse: VectorMatrix) -> Result<Self> {
        if coarse.n_dims() != codebook.dim() {
            return Err(Error::Shape(format!(
                "coarse centroids have {} columns, codebook dimension is {}",
                coarse.n_dims(),
                codebook.dim()
            )));
        }
        let lists = (0..coarse.n_rows())
            .map(|_| PostingList {
                ids: Vec::new(),
                codes: CodeMatrix::empty(codebook.m_subspaces(), codebook.ks()),
            })
            .collect();
        Ok(Self {
            codebook,
            coarse,
            lists,
            id_set: HashSet::new(),
        })
    }

    pub fn codebook(&self) -> &Arc<Codebook> {
        &self.codebook
    }

    pub fn coarse_centroids(&self) -> &VectorMatrix {
        &self.coarse
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn n_items(&self) -> usize {
        self.id_set.len()
    }

    pub fn list_ids(&self, list: usize) -> &[u64] {
        &self.lists[list].ids
    }

    pub fn list_codes(&self, list: usize) -> &CodeMatrix {
        &self.lists[list].codes
    }

    pub fn contains(&self, id: u64) -> bool {
        self.id_set.contains(&id)
    }

    /// Appends items to their nearest existing posting lists. Nothing is
    /// modified if any id collides.
    pub fn add(&mut self, codes: &CodeMatrix, ids: &[u64]) -> Result<()> {
        if ids.is_empty() && codes.n_rows() == 0 {
            return Ok(());
        }
        check_batch(&self.codebook, codes, ids)?;
        if let Some(&dup) = ids.iter().find(|id| self.id_set.contains(id)) {
            return Err(Error::DuplicateId(dup));
        }
        let d = self.codebook.dim();
        let coarse = CentroidBlocks::new(self.coarse.values(), d);
        let mut decoded = Vec::with_capacity(d);
        for (row, &id) in codes.rows().zip(ids) {
            decoded.clear();
            for (sub, j) in row.iter().enumerate() {
                decoded.extend_from_slice(self.codebook.codeword(sub, j));
            }
            let (list, _) = coarse.nearest(&decoded);
            self.lists[list].ids.push(id);
            self.lists[list].codes.push_row(row);
            self.id_set.insert(id);
        }
        Ok(())
    }

    /// Concatenates the posting lists of two indexes that share a codebook
    /// and coarse centroids: list `l` of the result is `self`'s list `l`
    /// followed by `other`'s.
    pub fn merge(&self, other: &InvertedIndex) -> Result<InvertedIndex> {
        if !Arc::ptr_eq(&self.codebook, &other.codebook) && self.codebook != other.codebook {
            return Err(Error::IndexMismatch("codebooks differ".into()));
        }
        if self.coarse != other.coarse {
            return Err(Error::IndexMismatch("coarse centroids differ".into()));
        }
        let (small, large) = if self.id_set.len() <= other.id_set.len() {
            (&self.id_set, &other.id_set)
        } else {
            (&other.id_set, &self.id_set)
        };
        if let Some(dup) = small.iter().filter(|id| large.contains(id)).min() {
            return Err(Error::DuplicateId(*dup));
        }
        let mut out = self.clone();
        for (dst, src) in out.lists.iter_mut().zip(&other.lists) {
            dst.ids.extend_from_slice(&src.ids);
            for row in src.codes.rows() {
                dst.codes.push_row(row);
            }
        }
        out.id_set.extend(other.id_set.iter().copied());
        Ok(out)
    }

    pub fn query(&self, query: &[f32], k: usize, nprobe: usize) -> Result<QueryResult> {
        self.search(query, &SearchParams::new(k, nprobe))
    }

    pub fn query_subset(
        &self,
        query: &[f32],
        k: usize,
        subset: &[u64],
        nprobe: usize,
    ) -> Result<QueryResult> {
        self.search(
            query,
            &SearchParams {
                subset: Some(subset),
                ..SearchParams::new(k, nprobe)
            },
        )
    }

    pub fn search(&self, query: &[f32], params: &SearchParams<'_>) -> Result<QueryResult> {
        if params.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if params.nprobe == 0 || params.nprobe > self.nlist() {
            return Err(Error::InvalidParameter(format!(
                "nprobe must be in [1, {}], got {}",
                self.nlist(),
                params.nprobe
            )));
        }
        if let Some(subset) = params.subset {
            check_sorted(subset)?;
        }
        let table = self.codebook.adc_table(query)?;

        let mut probes: Vec<(f64, usize)> = self
            .coarse
            .rows()
            .enumerate()
            .map(|(l, c)| (squared_l2(query, c), l))
            .collect();
        probes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut candidates = Vec::new();
        for &(_, l) in &probes[..params.nprobe] {
            let list = &self.lists[l];
            for (row, &id) in list.codes.rows().zip(&list.ids) {
                if let Some(subset) = params.subset {
                    if subset.binary_search(&id).is_err() {
                        continue;
                    }
                }
                candidates.push(Hit {
                    id,
                    distance: table.lookup_unchecked(row),
                });
            }
        }
        Ok(top_k(candidates, params.k, params.max_distance))
    }

    /// Checks that every item sits in the list of the coarse centroid
    /// nearest its decoded vector, and that ids are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let d = self.codebook.dim();
        for (l, list) in self.lists.iter().enumerate() {
            for (row, &id) in list.codes.rows().zip(&list.ids) {
                if !seen.insert(id) {
                    return Err(Error::DuplicateId(id));
                }
                let v = self.codebook.decode_row(row)?;
                let (best, _) = nearest(&v, self.coarse.values(), d);
                if best != l {
                    return Err(Error::IndexMismatch(format!(
                        "id {id} stored in list {l}, nearest coarse centroid is {best}"
                    )));
                }
            }
        }
        if seen.len() != self.id_set.len() {
            return Err(Error::IndexMismatch("id set out of sync with posting lists".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&INDEX_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        self.codebook.write_to(w)?;
        w.write_all(&(self.nlist() as u32).to_le_bytes())?;
        for v in self.coarse.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        let wide = self.codebook.ks() > 256;
        for list in &self.lists {
            w.write_all(&(list.ids.len() as u64).to_le_bytes())?;
            for (row, id) in list.codes.rows().zip(&list.ids) {
                w.write_all(&id.to_le_bytes())?;
                for j in row.iter() {
                    if wide {
                        w.write_all(&(j as u16).to_le_bytes())?;
                    } else {
                        w.write_all(&[j as u8])?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let codebook = Arc::new(Codebook::read_from(&mut r)?);
        let nlist = r.u32()? as usize;
        let d = codebook.dim();
        let coarse = VectorMatrix::new(nlist, d, r.f32_vec(nlist * d)?)?;
        let mut index = Self::empty(codebook, coarse)?;
        let m = index.codebook.m_subspaces();
        let ks = index.codebook.ks();
        let mut code = vec![0u16; m];
        for l in 0..nlist {
            let len = r.u64()? as usize;
            for _ in 0..len {
                let id = r.u64()?;
                for c in code.iter_mut() {
                    *c = if ks > 256 { r.u16()? } else { r.u8()? as u16 };
                }
                index.codebook.check_row(CodeRow::Wide(&code))?;
                if !index.id_set.insert(id) {
                    return Err(Error::DuplicateId(id));
                }
                index.lists[l].ids.push(id);
                index.lists[l].codes.push_row(CodeRow::Wide(&code));
            }
        }
        r.finish()?;
        Ok(index)
    }
}

/// Exhaustive ADC ranking of every code.
pub fn flat_scan(
    codebook: &Codebook,
    codes: &CodeMatrix,
    ids: &[u64],
    query: &[f32],
    k: usize,
) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    check_batch(codebook, codes, ids)?;
    let table: DistanceTable = codebook.adc_table(query)?;
    let candidates = codes
        .rows()
        .zip(ids)
        .map(|(row, &id)| Hit {
            id,
            distance: table.lookup_unchecked(row),
        })
        .collect();
    Ok(top_k(candidates, k, None))
}

fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

fn top_k(mut candidates: Vec<Hit>, k: usize, max_distance: Option<f64>) -> QueryResult {
    if let Some(bound) = max_distance {
        candidates.retain(|h| h.distance <= bound);
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, hit_order);
        candidates.truncate(k);
    }
    candidates.sort_by(hit_order);
    QueryResult {
        hits: candidates,
        k_requested: k,
    }
}

fn check_batch(codebook: &Codebook, codes: &CodeMatrix, ids: &[u64]) -> Result<()> {
    if codes.n_rows() != ids.len() {
        return Err(Error::Shape(format!(
            "{} codes but {} ids",
            codes.n_rows(),
            ids.len()
        )));
    }
    codebook.check_codes(codes)?;
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(&dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::DuplicateId(dup));
    }
    Ok(())
}

fn check_sorted(subset: &[u64]) -> Result<()> {
    match subset.windows(2).position(|w| w[0] >= w[1]) {
        Some(p) => Err(Error::UnsortedSubset(p + 1)),
        None => Ok(()),
    }
}
