//! `pqii`: dataset generation, PQ fit/encode, index build/query, and the
//! single vs parallel benchmark harness.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pqii_core::bench::{self, BenchGrid, Sweep};
use pqii_core::dataset::{gen_synthetic, load_matrix, save_matrix, SyntheticSpec};
use pqii_core::ivf::{default_nlist, SearchParams};
use pqii_core::{CodeMatrix, Codebook, InvertedIndex, Mode, PqParams};

#[derive(Parser)]
#[command(name = "pqii", version, about = "Product quantization with chunked-parallel training and IVF-PQ search")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; defaults to the logical core count.
    #[arg(long, global = true, env = "PQII_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset.
    Gen(GenArgs),
    /// Train a PQ codebook.
    Fit(FitArgs),
    /// Encode a dataset with a codebook and report reconstruction RMSE.
    Encode(EncodeArgs),
    /// Build an inverted index over encoded data.
    Build(BuildArgs),
    /// Query an inverted index; prints `id<TAB>distance` lines.
    Query(QueryArgs),
    /// Run the single / parallel_pq / parallel_pq_index cases over a parameter grid.
    Bench(BenchArgs),
    /// Render SVG charts from a bench CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    dims: u32,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    clusters: u32,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Output path; `.fvecs` selects fvecs, anything else the native format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    ks: usize,
    #[arg(long, default_value_t = pqii_core::kmeans::DEFAULT_MAX_ITERS)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    /// Coarse lists; defaults to round(sqrt(N)).
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Matrix file with one query per row.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, short, default_value_t = 10)]
    k: usize,
    /// Lists to probe; defaults to all of them.
    #[arg(long)]
    nprobe: Option<usize>,
    /// Restrict results to these ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<u64>>,
    /// Drop hits whose squared distance exceeds this value.
    #[arg(long)]
    max_distance: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "single,parallel_pq,parallel_pq_index")]
    modes: Vec<Mode>,
    #[arg(long, short, value_delimiter = ',', default_value = "8")]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "256")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    chunks: Vec<usize>,
    /// Thread counts for the parallel cases; defaults to `--threads`.
    #[arg(long, value_delimiter = ',')]
    thread_counts: Option<Vec<usize>>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long, default_value_t = pqii_core::kmeans::DEFAULT_MAX_ITERS)]
    iters: usize,
    /// Seeds per point; the median RMSE and wall time are reported.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Replace the M grid (subspace) or the Ks grid (codesize) with the standard sweep.
    #[arg(long)]
    sweep: Option<Sweep>,
    /// CSV output, appended to if it exists; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Directory for the SVG charts.
    #[arg(long)]
    out: PathBuf,
}

/// Bad flag values detected after parsing; exits with status 2 like clap.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.map(|t| t as usize).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    match cli.command {
        Command::Gen(args) => cmd_gen(args, cli.seed),
        Command::Fit(args) => cmd_fit(args, cli.seed),
        Command::Encode(args) => cmd_encode(args),
        Command::Build(args) => cmd_build(args, cli.seed),
        Command::Query(args) => cmd_query(args),
        Command::Bench(args) => cmd_bench(args, cli.seed, threads, cli.verbose),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_gen(args: GenArgs, seed: u64) -> Result<()> {
    if args.spread.is_nan() || args.spread <= 0.0 {
        return Err(usage("--spread must be positive"));
    }
    let spec = SyntheticSpec {
        n_rows: args.rows as usize,
        n_dims: args.dims as usize,
        n_clusters: args.clusters as usize,
        spread: args.spread,
        seed,
    };
    let data = gen_synthetic(&spec)?;
    save_matrix(&data, &args.out)?;
    println!(
        "{}\t{}x{}",
        args.out.display(),
        data.n_rows(),
        data.n_dims()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs, seed: u64) -> Result<()> {
    let data = load_matrix(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    if args.m == 0 || data.n_dims() % args.m != 0 {
        return Err(usage(format!(
            "--m {} does not divide the data dimension {}",
            args.m,
            data.n_dims()
        )));
    }
    let params = PqParams::new(args.m, args.ks)
        .with_max_iters(args.iters)
        .with_seed(seed);
    let codebook = Codebook::fit(&data, &params)?;
    codebook.save(&args.out)?;
    println!("{}\tM={} Ks={} Ds={}", args.out.display(), codebook.m_subspaces(), codebook.ks(), codebook.sub_dim());
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let codebook = Codebook::load(&args.codebook)?;
    let data = load_matrix(&args.data)?;
    let codes = codebook.encode(&data)?;
    codes.save(&args.out)?;
    let decoded = codebook.decode(&codes)?;
    println!("rmse\t{}", pqii_core::rmse(&data, &decoded)?);
    Ok(())
}

fn cmd_build(args: BuildArgs, seed: u64) -> Result<()> {
    let codebook = Arc::new(Codebook::load(&args.codebook)?);
    let codes = CodeMatrix::load(&args.codes)?;
    let n = codes.n_rows();
    let nlist = args.nlist.unwrap_or_else(|| default_nlist(n));
    if nlist == 0 || nlist > n {
        return Err(usage(format!("--nlist must be in [1, {n}], got {nlist}")));
    }
    let ids: Vec<u64> = (0..n as u64).collect();
    let index = InvertedIndex::build(codebook, &codes, &ids, nlist, seed)?;
    index.save(&args.out)?;
    println!("{}\t{} items in {} lists", args.out.display(), index.n_items(), index.nlist());
    Ok(())
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let index = InvertedIndex::load(&args.index)?;
    let nprobe = args.nprobe.unwrap_or(index.nlist());
    if nprobe == 0 || nprobe > index.nlist() {
        return Err(usage(format!(
            "--nprobe must be in [1, {}] (the index nlist), got {nprobe}",
            index.nlist()
        )));
    }
    if args.k == 0 {
        return Err(usage("--k must be >= 1"));
    }
    let mut subset = args.subset;
    if let Some(s) = subset.as_mut() {
        s.sort_unstable();
        s.dedup();
    }
    let queries = load_matrix(&args.queries)?;
    let params = SearchParams {
        subset: subset.as_deref(),
        max_distance: args.max_distance,
        ..SearchParams::new(args.k, nprobe)
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, q) in queries.rows().enumerate() {
        let res = index.search(q, &params)?;
        if queries.n_rows() > 1 {
            writeln!(out, "# query {i}")?;
        }
        for hit in &res.hits {
            writeln!(out, "{}\t{}", hit.id, hit.distance)?;
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, seed: u64, threads: usize, verbose: bool) -> Result<()> {
    let data = load_matrix(&args.data)?;
    if args.repeats == 0 {
        return Err(usage("--repeats must be >= 1"));
    }
    let mut grid = BenchGrid {
        modes: args.modes,
        m_values: args.m,
        ks_values: args.ks,
        chunk_values: args.chunks,
        thread_values: args.thread_counts.unwrap_or_else(|| vec![threads]),
        nlist: args.nlist,
        kmeans_iters: args.iters,
        seed,
        repeats: args.repeats,
    };
    if let Some(sweep) = args.sweep {
        grid.apply_sweep(sweep);
    }
    let d = data.n_dims();
    if let Some(m) = grid.m_values.iter().find(|&&m| m == 0 || d % m != 0) {
        bail!(UsageError(format!("M={m} does not divide the data dimension {d}")));
    }
    let rows = bench::run_bench(&data, &grid, |row| {
        if verbose {
            eprintln!(
                "{} M={} Ks={} C={} T={} rmse={:.6} wall={:.3}s",
                row.case_label, row.m, row.ks, row.chunks, row.threads, row.rmse, row.wall_seconds
            );
        }
    })?;
    match args.out {
        Some(path) => {
            bench::append_csv(&path, &rows)?;
            println!("{}\t{} rows", path.display(), rows.len());
        }
        None => print!("{}", bench::to_csv(&rows, true)),
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let written = bench::write_report(&args.csv, &args.out)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
