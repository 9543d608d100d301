use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covquery_core::bundle::{has_ground_truth, read_bundle, write_bundle};
use covquery_core::graph::block_cut_stats;
use covquery_core::harness::{
    bench_csv, run_bench, run_recovery, verify_report, Algorithm, BenchGrid, Command, OracleBackend, ParamOverrides,
    RecoveryReport, RunSpec, REPORT_SCHEMA,
};
use covquery_core::models::{
    canonical_dary_moves, four_cycle_example, gen_adversarial_dary, gen_adversarial_star, gen_partial_ktree_model,
    gen_small_block_model, gen_tree_model_with, ModelInstance, TreeOptions,
};
use covquery_core::{Error, Result};

#[derive(Parser)]
#[command(name = "covquery", version, about = "Graph recovery from covariance-entry queries")]
struct Cli {
    /// Worker threads for bench sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance bundle.
    Generate(GenerateArgs),
    /// Run a recovery algorithm on a bundle and emit a report.
    Recover(RecoverArgs),
    /// Compare a report against a bundle's ground truth.
    Verify(VerifyArgs),
    /// Sweep sizes and seeds, writing CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tree,
    SmallBlock,
    Ktree,
    AdversarialStar,
    AdversarialDary,
    FourCycle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Tree,
    SmallBlock,
    Treewidth,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Tree => Algorithm::Tree,
            AlgoArg::SmallBlock => Algorithm::SmallBlock,
            AlgoArg::Treewidth => Algorithm::Treewidth,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct GenerateArgs {
    kind: Kind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 6)]
    b: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Height of the adversarial d-ary tree.
    #[arg(long, default_value_t = 2)]
    height: usize,
    /// Canonical leaf-move set (0, 1 or 2) for the d-ary tree; random when unset.
    #[arg(long)]
    moves: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    keep: f64,
    #[arg(long, default_value_t = 0.3)]
    lo: f64,
    #[arg(long, default_value_t = 0.8)]
    hi: f64,
    /// Depth bound for tree generation.
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Params {
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    /// Overall failure probability used to size κ.
    #[arg(long)]
    epsilon_fail: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    retries: Option<usize>,
}

impl Params {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            kappa: self.kappa,
            m: self.m,
            k: self.k,
            d: self.d,
            b: self.b,
            epsilon_fail: self.epsilon_fail,
            tau: self.tau,
            seed: self.seed,
            retries: self.retries,
        }
    }
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long, value_enum)]
    algorithm: AlgoArg,
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    params: Params,
    /// Entrywise noise bound for a noisy oracle.
    #[arg(long, conflicts_with = "samples")]
    noise_epsilon: Option<f64>,
    /// Answer from median-of-means estimates; `0` uses the sample bound.
    #[arg(long, requires = "target_epsilon")]
    samples: Option<u64>,
    /// Accuracy target for the sampled oracle.
    #[arg(long)]
    target_epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    algorithm: AlgoArg,
    /// Comma-separated sizes.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    d: Option<usize>,
    /// Block size, small-block only.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epsilon_fail: Option<f64>,
    #[arg(long)]
    retries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summary(inst: &ModelInstance) -> String {
    let stats = block_cut_stats(&inst.graph);
    let mut s = format!(
        "kind={:?} n={} edges={} max_degree={} b={} d={}",
        inst.kind,
        inst.n(),
        inst.graph.edge_count(),
        inst.graph.max_degree(),
        stats.max_block_size,
        stats.max_bc_degree
    );
    if let Some(c) = &inst.certificate {
        s += &format!(" k_certificate={}", c.width());
    }
    s
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let opts = TreeOptions {
        max_depth: a.max_depth,
        keep_labels: false,
    };
    let inst = match a.kind {
        Kind::Tree => gen_tree_model_with(a.n, a.d, a.lo, a.hi, a.seed, opts)?,
        Kind::SmallBlock => gen_small_block_model(a.n, a.b, a.d, a.seed)?,
        Kind::Ktree => gen_partial_ktree_model(a.n, a.k, a.d, a.keep, a.seed)?,
        Kind::FourCycle => four_cycle_example(),
        Kind::AdversarialDary => {
            let moves = a.moves.map(canonical_dary_moves);
            gen_adversarial_dary(a.d, a.height, moves.as_deref(), a.lo, a.hi, a.seed)?
        }
        Kind::AdversarialStar => {
            let (spec, b0, b1) = gen_adversarial_star(a.n, a.seed)?;
            for (name, inst) in [("b0", &b0), ("b1", &b1)] {
                write_bundle(&a.out.join(name), inst)?;
                println!("{name}: {}", summary(inst));
            }
            println!("twins differ at ({}, {}); drawn bit {}", spec.i_idx, spec.j_idx, spec.bernoulli_b);
            return Ok(());
        }
    };
    write_bundle(&a.out, &inst)?;
    println!("{}", summary(&inst));
    Ok(())
}

fn report_csv(r: &RecoveryReport) -> String {
    format!(
        "# schema={REPORT_SCHEMA}\ninstance_id,algorithm,n,distinct_queries,raw_queries,wall_ms,depth,retries,true_positive,false_positive,false_negative,max_abs_error,success\n{},{},{},{},{},{:.3},{},{},{},{},{},{},{}\n",
        r.instance_id,
        r.algorithm.as_str(),
        r.n,
        r.distinct_queries,
        r.raw_queries,
        r.wall_ms,
        r.depth,
        r.retries,
        r.edges_true_positive,
        r.false_positive,
        r.false_negative,
        r.max_abs_error.map(|e| format!("{e:e}")).unwrap_or_default(),
        r.success
    )
}

fn recover(a: &RecoverArgs) -> Result<()> {
    let mut spec = RunSpec::new(Command::Recover, a.algorithm.into());
    spec.instance = Some(a.instance.clone());
    spec.params = a.params.overrides();
    spec.out = a.out.clone();
    spec.backend = match (a.noise_epsilon, a.samples) {
        (Some(epsilon), _) => OracleBackend::Noisy { epsilon },
        (None, Some(n)) => OracleBackend::Sampled {
            epsilon: a.target_epsilon.expect("required by clap"),
            eta: a.eta,
            samples: (n > 0).then_some(n),
        },
        (None, None) => OracleBackend::Exact,
    };
    spec.validate()?;
    let inst = read_bundle(&a.instance)?;
    let report = run_recovery(&inst, &spec)?;
    if let Some(d) = &report.diagnostic {
        eprintln!("recovery failed: {d}");
    }
    let text = match a.format {
        Format::Json => report.to_json()? + "\n",
        Format::Csv => report_csv(&report),
    };
    emit(a.out.as_deref(), &text)
}

fn verify(a: &VerifyArgs) -> Result<ExitCode> {
    if !has_ground_truth(&a.instance) {
        eprintln!("no ground truth in {}", a.instance.display());
        return Ok(ExitCode::from(2));
    }
    let inst = read_bundle(&a.instance)?;
    let text = fs::read_to_string(&a.report).map_err(|e| Error::Io {
        path: a.report.clone(),
        source: e,
    })?;
    let report = RecoveryReport::from_json(&text)?;
    let v = verify_report(&inst, &report)?;
    println!(
        "true_positive={} false_positive={} false_negative={}",
        v.diff.true_positive,
        v.diff.false_positive.len(),
        v.diff.false_negative.len()
    );
    if let Some(e) = v.max_abs_error {
        println!("max_abs_error={e:e}");
    }
    for (u, w) in &v.diff.false_positive {
        println!("+ {u} {w}");
    }
    for (u, w) in &v.diff.false_negative {
        println!("- {u} {w}");
    }
    Ok(if v.diff.exact() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn bench(a: &BenchArgs, threads: usize) -> Result<()> {
    let algorithm: Algorithm = a.algorithm.into();
    let mut grid = BenchGrid::new(algorithm, a.n.clone(), (0..a.seeds).collect());
    if let Some(d) = a.d {
        grid.d = d;
    }
    match algorithm {
        Algorithm::SmallBlock => grid.size_param = a.b.unwrap_or(grid.size_param),
        Algorithm::Treewidth => grid.size_param = a.k.unwrap_or(grid.size_param),
        Algorithm::Tree => {}
    }
    grid.threads = threads;
    grid.params = ParamOverrides {
        kappa: a.kappa,
        m: a.m,
        k: a.k.filter(|_| algorithm == Algorithm::Treewidth),
        epsilon_fail: a.epsilon_fail,
        retries: a.retries,
        seed: Some(a.seed),
        ..ParamOverrides::default()
    };
    let mut check = RunSpec::new(Command::Bench, algorithm);
    check.params = grid.params.clone();
    check.validate()?;
    let out = run_bench(&grid)?;
    let text = match a.format {
        Format::Csv => bench_csv(&out),
        Format::Json => serde_json::to_string_pretty(&out)? + "\n",
    };
    emit(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COVQUERY_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Generate(a) => generate(a).map(|_| ExitCode::SUCCESS),
        Cmd::Recover(a) => recover(a).map(|_| ExitCode::SUCCESS),
        Cmd::Verify(a) => verify(a),
        Cmd::Bench(a) => bench(a, cli.threads).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
