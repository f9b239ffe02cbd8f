//! Chunked-parallel PQ training and index construction.
//!
//! The dataset is split row-wise into `C` chunks. Each chunk gets its own
//! local PQ model on a pool of `T` worker threads; instead of returning the
//! chunk's codes, a worker returns the local codebook decoded into `Ks`
//! full-dimension rows. The rows from all chunks are stacked and a global
//! PQ model is fitted on them, which then encodes the original data.
//!
//! In [`Mode::ParallelPqIndex`] the encode step and per-chunk inverted index
//! construction also run on the pool, against coarse centroids trained once
//! on the representative rows, and the chunk indexes are merged.
//!
//! All reductions are ordered by chunk id, so results do not depend on `T`
//! or on task completion order.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{chunk_rows, RowRange};
use crate::error::{Error, Result};
use crate::ivf::{default_nlist, InvertedIndex};
use crate::kmeans::{kmeans_fit, KMeansParams, DEFAULT_MAX_ITERS};
use crate::matrix::VectorMatrix;
use crate::pq::{rmse, CodeMatrix, Codebook, PqParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// One PQ fit over the whole dataset.
    Single,
    /// Parallel local fits, global refit, serial encode.
    ParallelPq,
    /// As `ParallelPq`, plus parallel encode and per-chunk index build, then merge.
    ParallelPqIndex,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Single, Mode::ParallelPq, Mode::ParallelPqIndex];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::ParallelPq => "parallel_pq",
            Mode::ParallelPqIndex => "parallel_pq_index",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_chunks: usize,
    pub m_subspaces: usize,
    pub ks: usize,
    /// Coarse lists for `ParallelPqIndex`; `None` picks `round(sqrt(N))`.
    pub nlist: Option<usize>,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub n_threads: usize,
    pub mode: Mode,
    /// Also fit a single-process model in the parallel modes and report its RMSE.
    pub measure_single: bool,
}

impl PipelineConfig {
    pub fn new(mode: Mode, m_subspaces: usize, ks: usize) -> Self {
        Self {
            n_chunks: 1,
            m_subspaces,
            ks,
            nlist: None,
            kmeans_iters: DEFAULT_MAX_ITERS,
            seed: 0,
            n_threads: 1,
            mode,
            measure_single: false,
        }
    }

    fn pq_params(&self, seed: u64) -> PqParams {
        PqParams::new(self.m_subspaces, self.ks)
            .with_max_iters(self.kmeans_iters)
            .with_seed(seed)
    }

    fn validate(&self, data: &VectorMatrix) -> Result<()> {
        if self.n_threads == 0 {
            return Err(Error::InvalidParameter("thread count must be >= 1".into()));
        }
        if self.kmeans_iters == 0 {
            return Err(Error::InvalidParameter("kmeans_iters must be >= 1".into()));
        }
        if self.m_subspaces == 0 || !data.n_dims().is_multiple_of(self.m_subspaces) {
            return Err(Error::InvalidParameter(format!(
                "dimension {} is not divisible by M={}",
                data.n_dims(),
                self.m_subspaces
            )));
        }
        if self.mode != Mode::Single {
            if self.n_chunks == 0 || self.n_chunks > data.n_rows() {
                return Err(Error::InvalidParameter(format!(
                    "cannot split {} rows into {} chunks",
                    data.n_rows(),
                    self.n_chunks
                )));
            }
            let smallest = data.n_rows() / self.n_chunks;
            if smallest < self.ks {
                return Err(Error::InvalidParameter(format!(
                    "smallest chunk has {smallest} rows, fewer than ks={}",
                    self.ks
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    SingleFit,
    Chunking,
    LocalFit,
    GlobalFit,
    Encode,
    IndexBuild,
    Merge,
    Total,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::SingleFit => "single_fit",
            Phase::Chunking => "chunking",
            Phase::LocalFit => "local_fit",
            Phase::GlobalFit => "global_fit",
            Phase::Encode => "encode",
            Phase::IndexBuild => "index_build",
            Phase::Merge => "merge",
            Phase::Total => "total",
        }
    }
}

/// What one chunk task returns: its local codebook decoded into `Ks` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutput {
    pub chunk_id: usize,
    pub representatives: VectorMatrix,
    pub local_rmse: f64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub n_rows: usize,
    pub n_dims: usize,
    pub global_codebook: Codebook,
    /// Reconstruction RMSE of the reported model on the original data.
    pub global_rmse: f64,
    pub single_rmse: Option<f64>,
    /// Wall-clock seconds per phase, in execution order.
    pub phase_timings: Vec<(Phase, f64)>,
    pub chunk_outputs: Vec<ChunkOutput>,
    pub representatives: Option<VectorMatrix>,
    pub codes: Option<CodeMatrix>,
    pub index: Option<InvertedIndex>,
}

impl PipelineReport {
    pub fn timing(&self, phase: Phase) -> Option<f64> {
        self.phase_timings
            .iter()
            .find(|(p, _)| *p == phase)
            .map(|&(_, t)| t)
    }

    pub fn total_seconds(&self) -> f64 {
        self.timing(Phase::Total).unwrap_or(0.0)
    }
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "mode         {}", c.mode)?;
        writeln!(f, "data         {} x {}", self.n_rows, self.n_dims)?;
        writeln!(
            f,
            "params       M={} Ks={} chunks={} threads={} seed={}",
            c.m_subspaces, c.ks, c.n_chunks, c.n_threads, c.seed
        )?;
        writeln!(f, "rmse         {:.6}", self.global_rmse)?;
        if let Some(single) = self.single_rmse {
            writeln!(f, "single rmse  {single:.6}")?;
            if single > 0.0 {
                writeln!(f, "ratio        {:.4}", self.global_rmse / single)?;
            }
        }
        if let Some(index) = &self.index {
            writeln!(f, "index        {} items in {} lists", index.n_items(), index.nlist())?;
        }
        for (phase, secs) in &self.phase_timings {
            writeln!(f, "{:<12} {secs:.3}s", phase.as_str())?;
        }
        Ok(())
    }
}

/// Fits a local PQ model on one chunk and decodes its codebook into `Ks`
/// full-dimension rows: row `j` concatenates codeword `j` of every subspace.
pub fn train_chunk(
    chunk_id: usize,
    chunk: &VectorMatrix,
    params: &PqParams,
) -> Result<ChunkOutput> {
    let start = Instant::now();
    if chunk.n_rows() < params.ks {
        return Err(Error::TooFewPoints {
            k: params.ks,
            n: chunk.n_rows(),
        });
    }
    let local = Codebook::fit(chunk, params)?;
    let local_rmse = local.reconstruction_rmse(chunk)?;
    Ok(ChunkOutput {
        chunk_id,
        representatives: decoded_codewords(&local),
        local_rmse,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn decoded_codewords(cb: &Codebook) -> VectorMatrix {
    let mut values = Vec::with_capacity(cb.ks() * cb.dim());
    for j in 0..cb.ks() {
        for sub in 0..cb.m_subspaces() {
            values.extend_from_slice(cb.codeword(sub, j));
        }
    }
    VectorMatrix::from_parts_unchecked(cb.ks(), cb.dim(), values)
}

/// Stacks chunk representatives in ascending chunk id order.
pub fn aggregate_representatives(outputs: &[ChunkOutput]) -> Result<VectorMatrix> {
    let mut ordered: Vec<&ChunkOutput> = outputs.iter().collect();
    ordered.sort_by_key(|o| o.chunk_id);
    let parts: Vec<&VectorMatrix> = ordered.iter().map(|o| &o.representatives).collect();
    VectorMatrix::vstack(&parts)
}

/// Fits the global PQ model on the stacked representatives.
pub fn fit_global(representatives: &VectorMatrix, params: &PqParams) -> Result<Codebook> {
    let distinct: HashSet<Vec<u32>> = representatives
        .rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < params.ks {
        return Err(Error::TooFewDistinct {
            distinct: distinct.len(),
            ks: params.ks,
        });
    }
    Codebook::fit(representatives, params)
}

struct Timer {
    timings: Vec<(Phase, f64)>,
}

impl Timer {
    fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((phase, start.elapsed().as_secs_f64()));
        out
    }
}

pub fn run_pipeline(data: &VectorMatrix, config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate(data)?;
    let mut timer = Timer {
        timings: Vec::new(),
    };
    let mut report = match config.mode {
        Mode::Single => run_single(data, config, &mut timer)?,
        Mode::ParallelPq | Mode::ParallelPqIndex => run_parallel(data, config, &mut timer)?,
    };
    if config.measure_single && config.mode != Mode::Single {
        let mut ref_timer = Timer {
            timings: Vec::new(),
        };
        let single = run_single(data, config, &mut ref_timer)?;
        report.single_rmse = Some(single.global_rmse);
    }
    Ok(report)
}

fn run_single(
    data: &VectorMatrix,
    config: &PipelineConfig,
    timer: &mut Timer,
) -> Result<PipelineReport> {
    let start = Instant::now();
    let codebook = timer.time(Phase::SingleFit, || {
        Codebook::fit(data, &config.pq_params(config.seed))
    })?;
    let rmse = timer.time(Phase::Encode, || codebook.reconstruction_rmse(data))?;
    timer
        .timings
        .push((Phase::Total, start.elapsed().as_secs_f64()));
    Ok(PipelineReport {
        config: config.clone(),
        n_rows: data.n_rows(),
        n_dims: data.n_dims(),
        global_codebook: codebook,
        global_rmse: rmse,
        single_rmse: Some(rmse),
        phase_timings: std::mem::take(&mut timer.timings),
        chunk_outputs: Vec::new(),
        representatives: None,
        codes: None,
        index: None,
    })
}

fn run_parallel(
    data: &VectorMatrix,
    config: &PipelineConfig,
    timer: &mut Timer,
) -> Result<PipelineReport> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.n_threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;

    let ranges = timer.time(Phase::Chunking, || chunk_rows(data.n_rows(), config.n_chunks))?;

    let outputs: Vec<ChunkOutput> = timer.time(Phase::LocalFit, || {
        pool.install(|| {
            ranges
                .par_iter()
                .enumerate()
                .map(|(chunk_id, range)| {
                    let seed = config.seed.wrapping_add(chunk_id as u64);
                    data.slice_rows(range.start, range.end)
                        .and_then(|chunk| train_chunk(chunk_id, &chunk, &config.pq_params(seed)))
                        .map_err(|e| chunk_error(chunk_id, e))
                })
                .collect::<Result<Vec<_>>>()
        })
    })?;

    let (representatives, codebook) = timer.time(Phase::GlobalFit, || -> Result<_> {
        let reps = aggregate_representatives(&outputs)?;
        let cb = fit_global(&reps, &config.pq_params(config.seed))?;
        Ok((reps, cb))
    })?;

    let mut report = PipelineReport {
        config: config.clone(),
        n_rows: data.n_rows(),
        n_dims: data.n_dims(),
        global_rmse: 0.0,
        global_codebook: codebook,
        single_rmse: None,
        phase_timings: Vec::new(),
        chunk_outputs: outputs,
        representatives: None,
        codes: None,
        index: None,
    };

    if config.mode == Mode::ParallelPq {
        let (codes, global_rmse) = timer.time(Phase::Encode, || -> Result<_> {
            let codes = report.global_codebook.encode(data)?;
            let rmse = rmse(data, &report.global_codebook.decode(&codes)?)?;
            Ok((codes, rmse))
        })?;
        report.codes = Some(codes);
        report.global_rmse = global_rmse;
    } else {
        let codebook = Arc::new(report.global_codebook.clone());
        let chunk_codes = timer.time(Phase::Encode, || {
            pool.install(|| {
                ranges
                    .par_iter()
                    .enumerate()
                    .map(|(chunk_id, range)| {
                        data.slice_rows(range.start, range.end)
                            .and_then(|chunk| codebook.encode(&chunk))
                            .map_err(|e| chunk_error(chunk_id, e))
                    })
                    .collect::<Result<Vec<_>>>()
            })
        })?;

        let chunk_indexes = timer.time(Phase::IndexBuild, || -> Result<Vec<InvertedIndex>> {
            let nlist = config
                .nlist
                .unwrap_or_else(|| default_nlist(data.n_rows()))
                .min(representatives.n_rows());
            let coarse = kmeans_fit(
                &representatives,
                nlist,
                &KMeansParams {
                    max_iters: config.kmeans_iters,
                    seed: config.seed,
                    ..Default::default()
                },
            )?
            .centroids;
            pool.install(|| {
                ranges
                    .par_iter()
                    .zip(&chunk_codes)
                    .enumerate()
                    .map(|(chunk_id, (range, codes))| {
                        let ids = row_ids(range);
                        InvertedIndex::build_with_coarse(
                            codebook.clone(),
                            coarse.clone(),
                            codes,
                            &ids,
                        )
                        .map_err(|e| chunk_error(chunk_id, e))
                    })
                    .collect()
            })
        })?;

        let index = timer.time(Phase::Merge, || -> Result<InvertedIndex> {
            let mut iter = chunk_indexes.into_iter();
            let first = iter.next().expect("at least one chunk");
            iter.try_fold(first, |acc, next| acc.merge(&next))
        })?;

        let parts: Vec<&CodeMatrix> = chunk_codes.iter().collect();
        let codes = CodeMatrix::concat(&parts)?;
        report.global_rmse = rmse(data, &report.global_codebook.decode(&codes)?)?;
        report.codes = Some(codes);
        report.index = Some(index);
    }

    report.representatives = Some(representatives);
    timer
        .timings
        .push((Phase::Total, start.elapsed().as_secs_f64()));
    report.phase_timings = std::mem::take(&mut timer.timings);
    Ok(report)
}

fn row_ids(range: &RowRange) -> Vec<u64> {
    (range.start as u64..range.end as u64).collect()
}

fn chunk_error(chunk_id: usize, e: Error) -> Error {
    match e {
        already @ Error::Chunk { .. } => already,
        other => Error::Chunk {
            chunk_id,
            source: Box::new(other),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticSpec};

    fn synth(n: usize, d: usize, seed: u64) -> VectorMatrix {
        gen_synthetic(&SyntheticSpec {
            n_rows: n,
            n_dims: d,
            n_clusters: 10,
            spread: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn ks_one_representative_is_the_mean() {
        let chunk = synth(50, 6, 1);
        let out = train_chunk(0, &chunk, &PqParams::new(3, 1)).unwrap();
        assert_eq!(out.representatives.n_rows(), 1);
        for d in 0..6 {
            let mean = chunk.rows().map(|r| r[d] as f64).sum::<f64>() / 50.0;
            assert!((out.representatives.row(0)[d] as f64 - mean).abs() < 1e-5);
        }
    }

    #[test]
    fn exact_chunk_is_reproduced() {
        // Four distinct rows repeated; each subspace slice also has four values.
        let base = [
            [0.0f32, 1.0, 2.0, 3.0],
            [5.0, 5.0, -1.0, 0.0],
            [9.0, -3.0, 4.0, 4.0],
            [-7.0, 2.0, 8.0, -8.0],
        ];
        let rows: Vec<[f32; 4]> = (0..40).map(|i| base[i % 4]).collect();
        let chunk = VectorMatrix::from_rows(&rows).unwrap();
        let out = (0..10)
            .map(|s| train_chunk(0, &chunk, &PqParams::new(2, 4).with_seed(s)).unwrap())
            .find(|o| o.local_rmse <= 1e-6)
            .expect("some seed separates the four points");
        // Row j pairs codeword j of every subspace, so the original rows are
        // recovered per subspace block, not necessarily as whole rows.
        for sub in 0..2 {
            let block = |r: &[f32]| -> Vec<u32> {
                r[sub * 2..sub * 2 + 2].iter().map(|v| v.to_bits()).collect()
            };
            let mut got: Vec<Vec<u32>> = out.representatives.rows().map(block).collect();
            let mut want: Vec<Vec<u32>> = base.iter().map(|r| block(r)).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn always_ks_rows() {
        for n in [16, 100, 400] {
            let out = train_chunk(0, &synth(n, 8, 2), &PqParams::new(4, 16)).unwrap();
            assert_eq!(out.representatives.n_rows(), 16);
            assert_eq!(out.representatives.n_dims(), 8);
        }
        assert!(train_chunk(0, &synth(10, 8, 2), &PqParams::new(4, 16)).is_err());
    }

    #[test]
    fn aggregation_is_order_independent() {
        let outs: Vec<ChunkOutput> = (0..4)
            .map(|c| train_chunk(c, &synth(60, 4, c as u64), &PqParams::new(2, 8)).unwrap())
            .collect();
        let ordered = aggregate_representatives(&outs).unwrap();
        assert_eq!(ordered.n_rows(), 32);
        let shuffled = vec![outs[2].clone(), outs[0].clone(), outs[3].clone(), outs[1].clone()];
        assert_eq!(aggregate_representatives(&shuffled).unwrap(), ordered);
        assert_eq!(
            aggregate_representatives(&outs[..1]).unwrap(),
            outs[0].representatives
        );

        let odd = ChunkOutput {
            chunk_id: 9,
            representatives: VectorMatrix::from_rows(&[[1.0f32]]).unwrap(),
            local_rmse: 0.0,
            wall_time: 0.0,
        };
        assert!(aggregate_representatives(&[outs[0].clone(), odd]).is_err());
    }

    #[test]
    fn global_fit_rejects_degenerate_input() {
        let same = VectorMatrix::new(8, 2, vec![3.0; 16]).unwrap();
        assert!(matches!(
            fit_global(&same, &PqParams::new(1, 2)),
            Err(Error::TooFewDistinct { distinct: 1, ks: 2 })
        ));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("dask".parse::<Mode>().is_err());
    }

    #[test]
    fn chunk_failures_name_the_chunk() {
        let data = synth(100, 4, 3);
        let mut cfg = PipelineConfig::new(Mode::ParallelPq, 2, 8);
        cfg.n_chunks = 20;
        // Chunks of 5 rows cannot support Ks=8; rejected up front.
        assert!(run_pipeline(&data, &cfg).is_err());
        let err = chunk_error(3, Error::NoRecords);
        assert!(err.to_string().starts_with("chunk 3 failed"));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let data = synth(2000, 8, 4);
        let mut cfg = PipelineConfig::new(Mode::ParallelPqIndex, 4, 16);
        cfg.n_chunks = 5;
        cfg.seed = 21;
        cfg.nlist = Some(12);
        let one = run_pipeline(&data, &cfg).unwrap();
        cfg.n_threads = 3;
        let three = run_pipeline(&data, &cfg).unwrap();
        assert_eq!(one.global_codebook, three.global_codebook);
        assert_eq!(one.global_rmse, three.global_rmse);
        assert_eq!(one.index, three.index);
    }

    #[test]
    fn merged_index_covers_all_rows() {
        let data = synth(1500, 8, 5);
        let mut cfg = PipelineConfig::new(Mode::ParallelPqIndex, 4, 16);
        cfg.n_chunks = 6;
        cfg.n_threads = 2;
        let report = run_pipeline(&data, &cfg).unwrap();
        let index = report.index.as_ref().unwrap();
        assert_eq!(index.n_items(), 1500);
        index.validate().unwrap();

        let codes = report.codes.as_ref().unwrap();
        let ids: Vec<u64> = (0..1500).collect();
        for i in [0usize, 700, 1499] {
            let q = data.row(i);
            assert_eq!(
                index.query(q, 10, index.nlist()).unwrap(),
                crate::ivf::flat_scan(&report.global_codebook, codes, &ids, q, 10).unwrap()
            );
        }

        let mut pq_only = cfg.clone();
        pq_only.mode = Mode::ParallelPq;
        let plain = run_pipeline(&data, &pq_only).unwrap();
        assert_eq!(plain.global_rmse, report.global_rmse);
        assert!(plain.index.is_none());
    }

    #[test]
    fn single_chunk_collapses_to_single_fit() {
        let data = synth(600, 8, 6);
        let mut cfg = PipelineConfig::new(Mode::ParallelPq, 4, 16);
        cfg.seed = 8;
        cfg.measure_single = true;
        let r = run_pipeline(&data, &cfg).unwrap();
        let single = r.single_rmse.unwrap();
        assert!((r.global_rmse - single).abs() <= 1e-6, "{} vs {single}", r.global_rmse);
    }

    #[test]
    fn phases_are_recorded() {
        let data = synth(400, 4, 7);
        let mut cfg = PipelineConfig::new(Mode::ParallelPqIndex, 2, 8);
        cfg.n_chunks = 4;
        let r = run_pipeline(&data, &cfg).unwrap();
        for p in [
            Phase::Chunking,
            Phase::LocalFit,
            Phase::GlobalFit,
            Phase::Encode,
            Phase::IndexBuild,
            Phase::Merge,
            Phase::Total,
        ] {
            assert!(r.timing(p).unwrap() >= 0.0, "{p:?}");
        }
        assert_eq!(r.representatives.as_ref().unwrap().n_rows(), 32);
        assert!(r.to_string().contains("parallel_pq_index"));
    }
}
