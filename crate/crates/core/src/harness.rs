//! Run specifications, recovery reports, verification and scaling sweeps.
//! This is the layer shared by the `covquery` binary and the acceptance suite.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::block::{block_kappa, reconstruct_sb, BlockRecoveryConfig};
use crate::error::{Error, Result};
use crate::graph::block_cut_stats;
use crate::models::{gen_partial_ktree_model, gen_small_block_model, gen_tree_model, ModelInstance};
use crate::oracle::{CovarianceOracle, NoiseMode, NoiseModel, NoisyOracle, QueryCounter, SampledOracle, SampledOracleConfig, TreeOracle};
use crate::tree::{reconstruct_tree, tree_kappa, CentralityConfig, NoisyPredicateConfig, SeparationPredicate};
use crate::treewidth::{main_reconstruct_report, practical_m, SampleSizeMode, SeparatorConfig, DEFAULT_C_M};

pub const REPORT_SCHEMA: &str = "covquery-report/1";
pub const BENCH_SCHEMA: &str = "covquery-bench/1";
pub const BENCH_COLUMNS: &str =
    "kind,n,seed,algorithm,distinct_queries,raw_queries,wall_ms,success,median_distinct,median_raw,fitted_exponent";

/// Failure probability used for `κ` when none is given.
pub const DEFAULT_EPSILON_FAIL: f64 = 0.1;
/// Relative tolerance on `|K̂_ij| / sqrt(K̂_ii K̂_jj)` for reading off edges.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Generate,
    Recover,
    Verify,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tree,
    SmallBlock,
    Treewidth,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Tree => "tree",
            Algorithm::SmallBlock => "small-block",
            Algorithm::Treewidth => "treewidth",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Algorithm::Tree),
            "small-block" => Ok(Algorithm::SmallBlock),
            "treewidth" => Ok(Algorithm::Treewidth),
            other => Err(Error::InvalidInput(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Where the answers come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OracleBackend {
    #[default]
    Exact,
    /// Frozen uniform noise of size below `epsilon`.
    Noisy { epsilon: f64 },
    /// Median-of-means estimates; `samples = None` uses the sample bound.
    Sampled { epsilon: f64, eta: f64, samples: Option<u64> },
}

impl OracleBackend {
    fn epsilon(&self) -> Option<f64> {
        match *self {
            OracleBackend::Exact => None,
            OracleBackend::Noisy { epsilon } | OracleBackend::Sampled { epsilon, .. } => Some(epsilon),
        }
    }
}

/// Optional parameter overrides; unset values are derived from the instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides {
    pub kappa: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub b: Option<usize>,
    pub epsilon_fail: Option<f64>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub retries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub command: Command,
    pub algorithm: Algorithm,
    pub instance: Option<PathBuf>,
    pub params: ParamOverrides,
    pub backend: OracleBackend,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(command: Command, algorithm: Algorithm) -> Self {
        RunSpec {
            command,
            algorithm,
            instance: None,
            params: ParamOverrides::default(),
            backend: OracleBackend::Exact,
            out: None,
        }
    }

    /// Rejects parameter combinations that cannot run, before any work is done.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if matches!(self.command, Command::Recover | Command::Verify) && self.instance.is_none() {
            return bad(format!("{:?} needs an instance path", self.command).to_lowercase());
        }
        if self.backend != OracleBackend::Exact && self.algorithm != Algorithm::Tree {
            return bad(format!("noisy and sampled oracles require the tree algorithm, not {}", self.algorithm.as_str()));
        }
        if p.tau.is_some() && self.backend == OracleBackend::Exact {
            return bad("tau only applies to a noisy or sampled oracle".into());
        }
        if self.algorithm != Algorithm::Treewidth && (p.m.is_some() || p.k.is_some()) {
            return bad("m and k only apply to the treewidth algorithm".into());
        }
        if self.algorithm == Algorithm::Treewidth && p.kappa.is_some() {
            return bad("kappa does not apply to the treewidth algorithm".into());
        }
        if self.algorithm != Algorithm::SmallBlock && p.b.is_some() && self.command != Command::Generate {
            return bad("b only applies to the small-block algorithm".into());
        }
        for (name, v) in [("kappa", p.kappa), ("m", p.m), ("k", p.k), ("d", p.d), ("b", p.b)] {
            if v == Some(0) {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if let Some(e) = p.epsilon_fail {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("failure probability {e} outside (0, 1)"));
            }
        }
        if let Some(t) = p.tau {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tau {t} must be positive"));
            }
        }
        match self.backend {
            OracleBackend::Exact => {}
            OracleBackend::Noisy { epsilon } => {
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return bad(format!("noise epsilon {epsilon} must be non-negative"));
                }
            }
            OracleBackend::Sampled { epsilon, eta, samples } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) || !(eta > 0.0 && eta < 1.0) || samples == Some(0) {
                    return bad("sampled oracle needs epsilon > 0, eta in (0, 1) and at least one sample".into());
                }
            }
        }
        Ok(())
    }
}

/// Parameters as actually used, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub backend: OracleBackend,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_fail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
}

/// Fills in every parameter the chosen algorithm needs.
pub fn resolve_params(inst: &ModelInstance, spec: &RunSpec) -> Result<ResolvedParams> {
    spec.validate()?;
    let p = &spec.params;
    let n = inst.n();
    let mut out = ResolvedParams {
        algorithm: spec.algorithm,
        seed: p.seed.unwrap_or(0),
        backend: spec.backend,
        kappa: None,
        epsilon_fail: None,
        d: None,
        b: None,
        k: None,
        m: None,
        retries: None,
        tau: None,
        samples: None,
    };
    match spec.algorithm {
        Algorithm::Tree => {
            let eps = p.epsilon_fail.unwrap_or(DEFAULT_EPSILON_FAIL);
            out.epsilon_fail = Some(eps);
            out.kappa = Some(match p.kappa {
                Some(k) => k,
                None => tree_kappa(n, eps)?,
            });
            if let Some(e) = spec.backend.epsilon() {
                out.tau = Some(p.tau.unwrap_or(4.0 * e));
            }
            if let OracleBackend::Sampled { epsilon, eta, samples } = spec.backend {
                out.samples = Some(samples.unwrap_or_else(|| SampledOracleConfig::at_bound(n, epsilon, eta).samples_per_pair));
            }
        }
        Algorithm::SmallBlock => {
            let stats = (p.d.is_none() || p.b.is_none()).then(|| block_cut_stats(&inst.graph));
            let d = p.d.or(stats.as_ref().map(|s| s.max_bc_degree.max(1))).expect("stats computed");
            let b = p.b.or(stats.as_ref().map(|s| s.max_block_size.max(1))).expect("stats computed");
            let eps = p.epsilon_fail.unwrap_or(DEFAULT_EPSILON_FAIL);
            out.d = Some(d);
            out.b = Some(b);
            out.epsilon_fail = Some(eps);
            out.kappa = Some(match p.kappa {
                Some(k) => k,
                None => block_kappa(n, d, eps)?,
            });
            out.retries = Some(p.retries.unwrap_or(5));
        }
        Algorithm::Treewidth => {
            let k = p
                .k
                .or(inst.params.k)
                .or(inst.certificate.as_ref().map(|c| c.width().max(1)))
                .ok_or_else(|| Error::InvalidInput("treewidth run needs k (none given, none recorded)".into()))?;
            out.k = Some(k);
            out.m = Some(p.m.unwrap_or_else(|| practical_m(n, k, DEFAULT_C_M)));
            out.retries = Some(p.retries.unwrap_or(crate::treewidth::DEFAULT_MAX_RETRIES));
        }
    }
    Ok(out)
}

/// Edge-set comparison against the truth.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportDiff {
    pub true_positive: usize,
    pub false_positive: Vec<(usize, usize)>,
    pub false_negative: Vec<(usize, usize)>,
}

impl SupportDiff {
    pub fn exact(&self) -> bool {
        self.false_positive.is_empty() && self.false_negative.is_empty()
    }
}

pub fn compare_support(truth: &[(usize, usize)], found: &[(usize, usize)]) -> SupportDiff {
    let norm = |e: &(usize, usize)| (e.0.min(e.1), e.0.max(e.1));
    let t: BTreeSet<(usize, usize)> = truth.iter().map(norm).collect();
    let f: BTreeSet<(usize, usize)> = found.iter().map(norm).collect();
    SupportDiff {
        true_positive: t.intersection(&f).count(),
        false_positive: f.difference(&t).copied().collect(),
        false_negative: t.difference(&f).copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema: String,
    pub instance_id: String,
    pub n: usize,
    pub algorithm: Algorithm,
    pub params: ParamsEcho,
    pub raw_queries: u64,
    pub distinct_queries: u64,
    pub wall_ms: f64,
    pub depth: usize,
    pub retries: usize,
    pub edges_true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_error: Option<f64>,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    /// Upper-triangle entries of `K̂`, for algorithms that estimate it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Vec<(usize, usize, f64)>>,
}

pub type ParamsEcho = ResolvedParams;

impl RecoveryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RecoveryReport = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::parse("report", 0, format!("unsupported schema {:?}", r.schema)));
        }
        Ok(r)
    }
}

/// Short stable identifier of an instance's content.
pub fn instance_fingerprint(inst: &ModelInstance) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}\n{}\n", inst.kind, inst.seed));
    h.update(inst.graph.to_text());
    h.update(inst.precision.to_text());
    hex(&h.finalize()[..8])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Outcome {
    edges: Vec<(usize, usize)>,
    depth: usize,
    retries: usize,
    precision: Option<crate::sparse::PrecisionEstimate>,
}

fn run_algorithm<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    params: &ResolvedParams,
    pred: &SeparationPredicate,
) -> Result<Outcome> {
    match params.algorithm {
        Algorithm::Tree => {
            let cfg = CentralityConfig::new(params.kappa.expect("resolved"), params.seed)?;
            let rec = reconstruct_tree(oracle, &cfg, pred)?;
            Ok(Outcome {
                edges: rec.edges,
                depth: rec.max_depth,
                retries: 0,
                precision: None,
            })
        }
        Algorithm::SmallBlock => {
            let mut cfg = BlockRecoveryConfig::new(
                params.d.expect("resolved"),
                params.b.expect("resolved"),
                params.kappa.expect("resolved"),
                params.seed,
            )?;
            cfg.max_retries = params.retries.expect("resolved");
            let rec = reconstruct_sb(oracle, &cfg)?;
            Ok(Outcome {
                edges: rec.edges,
                depth: rec.max_depth,
                retries: rec.retries,
                precision: None,
            })
        }
        Algorithm::Treewidth => {
            let mut cfg = SeparatorConfig::with_m(
                params.k.expect("resolved"),
                params.m.expect("resolved"),
                SampleSizeMode::Practical,
                params.seed,
            )?;
            cfg.max_retries = params.retries.expect("resolved");
            let rec = main_reconstruct_report(oracle, &cfg)?;
            Ok(Outcome {
                edges: rec.edges(SUPPORT_TOL),
                depth: rec.max_depth,
                retries: rec.splits.iter().map(|s| s.attempts - 1).sum(),
                precision: Some(rec.precision),
            })
        }
    }
}

/// Warnings about a noisy configuration that falls outside the proven window.
pub fn noise_warnings(inst: &ModelInstance, params: &ResolvedParams) -> Vec<String> {
    let (Some(epsilon), Some(tau)) = (params.backend.epsilon(), params.tau) else {
        return Vec::new();
    };
    let Some(tree) = &inst.tree else {
        return Vec::new();
    };
    let mags = tree.edges.iter().map(|e| e.2.abs());
    let delta = mags.clone().fold(1.0, f64::min);
    let gamma = mags.fold(0.0, f64::max);
    let noise = NoiseModel {
        epsilon,
        mode: match params.backend {
            OracleBackend::Sampled { .. } => NoiseMode::Sampled,
            _ => NoiseMode::AdversarialUniform,
        },
        delta_edge: delta,
        gamma_edge: gamma,
        diameter: inst.graph.diameter(),
    };
    match (NoisyPredicateConfig { tau, epsilon }).check_noise(&noise) {
        Ok(()) => Vec::new(),
        Err(e) => vec![format!("recovery is not guaranteed: {e}")],
    }
}

/// Runs one recovery. Parameter problems are errors; algorithm failures are
/// reported with `success = false`.
pub fn run_recovery(inst: &ModelInstance, spec: &RunSpec) -> Result<RecoveryReport> {
    let params = resolve_params(inst, spec)?;
    let warnings = noise_warnings(inst, &params);
    for w in &warnings {
        log::warn!("{w}");
    }
    let n = inst.n();
    let base: Box<dyn CovarianceOracle> = match params.backend {
        OracleBackend::Exact => Box::new(inst.oracle()?),
        OracleBackend::Noisy { epsilon } => {
            let tree = inst.tree.as_ref().ok_or_else(|| Error::InvalidInput("noisy oracle needs a tree instance".into()))?;
            Box::new(NoisyOracle::new(TreeOracle::new(tree)?, epsilon, crate::seed::derive_seed(params.seed, "noise", 0))?)
        }
        OracleBackend::Sampled { epsilon, eta, .. } => {
            let tree = inst.tree.as_ref().ok_or_else(|| Error::InvalidInput("sampled oracle needs a tree instance".into()))?;
            let mut cfg = SampledOracleConfig::at_bound(n, epsilon, eta);
            cfg.samples_per_pair = params.samples.expect("resolved");
            Box::new(SampledOracle::new(tree, cfg, crate::seed::derive_seed(params.seed, "samples", 0))?)
        }
    };
    let pred = match params.tau {
        Some(tau) => SeparationPredicate::Noisy(NoisyPredicateConfig {
            tau,
            epsilon: params.backend.epsilon().unwrap_or(0.0),
        }),
        None => SeparationPredicate::default(),
    };
    let oracle = QueryCounter::new(base);
    let started = Instant::now();
    let result = run_algorithm(&oracle, &params, &pred);
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let stats = oracle.snapshot();
    let truth = inst.graph.edges();
    let mut report = RecoveryReport {
        schema: REPORT_SCHEMA.into(),
        instance_id: instance_fingerprint(inst),
        n,
        algorithm: params.algorithm,
        params,
        raw_queries: stats.raw_queries,
        distinct_queries: stats.distinct_queries,
        wall_ms,
        depth: 0,
        retries: 0,
        edges_true_positive: 0,
        false_positive: 0,
        false_negative: truth.len(),
        max_abs_error: None,
        success: false,
        diagnostic: None,
        warnings,
        edges: Vec::new(),
        precision: None,
    };
    match result {
        Ok(out) => {
            let diff = compare_support(&truth, &out.edges);
            report.depth = out.depth;
            report.retries = out.retries;
            report.edges_true_positive = diff.true_positive;
            report.false_positive = diff.false_positive.len();
            report.false_negative = diff.false_negative.len();
            report.success = diff.exact();
            if let Some(k) = &out.precision {
                report.max_abs_error = Some(k.max_abs_diff(&inst.precision));
                report.precision = Some(k.iter().filter(|&(i, j, _)| i <= j).collect());
            }
            if !report.success {
                report.diagnostic = Some(format!(
                    "support mismatch: {} missing, {} extra",
                    report.false_negative, report.false_positive
                ));
            }
            report.edges = out.edges;
        }
        Err(e) => {
            log::info!("recovery failed: {e}");
            report.diagnostic = Some(e.to_string());
        }
    }
    Ok(report)
}

/// Result of checking a report against a bundle's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub diff: SupportDiff,
    pub max_abs_error: Option<f64>,
}

pub fn verify_report(inst: &ModelInstance, report: &RecoveryReport) -> Result<Verification> {
    if report.n != inst.n() {
        return Err(Error::InvalidInput(format!("report is for n={}, bundle has n={}", report.n, inst.n())));
    }
    let max_abs_error = match &report.precision {
        Some(entries) => {
            let k = crate::sparse::SparseSymmetric::from_triplets(report.n, entries)?;
            Some(k.max_abs_diff(&inst.precision))
        }
        None => None,
    };
    Ok(Verification {
        diff: compare_support(&inst.graph.edges(), &report.edges),
        max_abs_error,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Sweep over sizes and seeds with freshly generated instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub algorithm: Algorithm,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Maximum degree of generated instances.
    pub d: usize,
    /// Block size (small-block) or treewidth (treewidth).
    pub size_param: usize,
    pub corr_range: (f64, f64),
    pub edge_keep_prob: f64,
    pub params: ParamOverrides,
    pub threads: usize,
}

impl BenchGrid {
    pub fn new(algorithm: Algorithm, ns: Vec<usize>, seeds: Vec<u64>) -> Self {
        let (d, size_param) = match algorithm {
            Algorithm::Tree => (5, 0),
            Algorithm::SmallBlock => (4, 6),
            Algorithm::Treewidth => (8, 2),
        };
        BenchGrid {
            algorithm,
            ns,
            seeds,
            d,
            size_param,
            corr_range: (0.3, 0.8),
            edge_keep_prob: 0.8,
            params: ParamOverrides::default(),
            threads: 1,
        }
    }

    pub fn instance(&self, n: usize, seed: u64) -> Result<ModelInstance> {
        match self.algorithm {
            Algorithm::Tree => gen_tree_model(n, self.d, self.corr_range.0, self.corr_range.1, seed),
            Algorithm::SmallBlock => gen_small_block_model(n, self.size_param, self.d, seed),
            Algorithm::Treewidth => gen_partial_ktree_model(n, self.size_param, self.d, self.edge_keep_prob, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub distinct_queries: u64,
    pub raw_queries: u64,
    pub wall_ms: f64,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub n: usize,
    pub runs: usize,
    pub successes: usize,
    pub median_distinct: f64,
    pub median_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub algorithm: Algorithm,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
    /// Slope of median distinct queries against `n` on log-log axes.
    pub fitted_exponent: Option<f64>,
    pub fitted_exponent_raw: Option<f64>,
}

fn bench_one(grid: &BenchGrid, n: usize, seed: u64) -> BenchRow {
    let failed = |e: Error| BenchRow {
        n,
        seed,
        algorithm: grid.algorithm,
        distinct_queries: 0,
        raw_queries: 0,
        wall_ms: 0.0,
        success: false,
        error: Some(e.to_string()),
    };
    let inst = match grid.instance(n, seed) {
        Ok(i) => i,
        Err(e) => return failed(e),
    };
    let mut spec = RunSpec::new(Command::Bench, grid.algorithm);
    spec.params = grid.params.clone();
    spec.params.seed = Some(grid.params.seed.unwrap_or(0) ^ seed);
    match run_recovery(&inst, &spec) {
        Ok(r) => BenchRow {
            n,
            seed,
            algorithm: grid.algorithm,
            distinct_queries: r.distinct_queries,
            raw_queries: r.raw_queries,
            wall_ms: r.wall_ms,
            success: r.success,
            error: r.diagnostic,
        },
        Err(e) => failed(e),
    }
}

/// Runs the grid; per-run failures are recorded and the sweep continues.
pub fn run_bench(grid: &BenchGrid) -> Result<BenchOutcome> {
    let jobs: Vec<(usize, u64)> = grid.ns.iter().flat_map(|&n| grid.seeds.iter().map(move |&s| (n, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let rows: Vec<BenchRow> = pool.install(|| jobs.par_iter().map(|&(n, s)| bench_one(grid, n, s)).collect());
    Ok(summarize(grid.algorithm, rows))
}

pub fn summarize(algorithm: Algorithm, rows: Vec<BenchRow>) -> BenchOutcome {
    let ns: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let summary: Vec<BenchSummary> = ns
        .into_iter()
        .map(|n| {
            let runs: Vec<&BenchRow> = rows.iter().filter(|r| r.n == n).collect();
            let distinct: Vec<f64> = runs.iter().map(|r| r.distinct_queries as f64).collect();
            let raw: Vec<f64> = runs.iter().map(|r| r.raw_queries as f64).collect();
            BenchSummary {
                n,
                runs: runs.len(),
                successes: runs.iter().filter(|r| r.success).count(),
                median_distinct: median(&distinct).unwrap_or(0.0),
                median_raw: median(&raw).unwrap_or(0.0),
            }
        })
        .collect();
    let fit = |f: fn(&BenchSummary) -> f64| loglog_slope(&summary.iter().map(|s| (s.n as f64, f(s))).collect::<Vec<_>>());
    BenchOutcome {
        algorithm,
        fitted_exponent: fit(|s| s.median_distinct),
        fitted_exponent_raw: fit(|s| s.median_raw),
        rows,
        summary,
    }
}

/// Fingerprint line tying CSV data to its schema and column layout.
pub fn bench_fingerprint() -> String {
    let digest = Sha256::digest(format!("{BENCH_SCHEMA}\n{BENCH_COLUMNS}").as_bytes());
    format!("# schema={BENCH_SCHEMA} fingerprint={}", hex(&digest[..8]))
}

/// CSV: fingerprint, header, one `run` row per run, one `summary` row per `n`.
pub fn bench_csv(out: &BenchOutcome) -> String {
    let mut s = format!("{}\n{BENCH_COLUMNS}\n", bench_fingerprint());
    for r in &out.rows {
        let _ = writeln!(
            s,
            "run,{},{},{},{},{},{:.3},{},,,",
            r.n,
            r.seed,
            r.algorithm.as_str(),
            r.distinct_queries,
            r.raw_queries,
            r.wall_ms,
            r.success
        );
    }
    let exponent = out.fitted_exponent.map(|e| format!("{e:.4}")).unwrap_or_default();
    for m in &out.summary {
        let _ = writeln!(
            s,
            "summary,{},,{},,,,{}/{},{},{},{exponent}",
            m.n,
            out.algorithm.as_str(),
            m.successes,
            m.runs,
            m.median_distinct,
            m.median_raw
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::four_cycle_example;
    use proptest::prelude::*;

    #[test]
    fn spec_validation() {
        let mut s = RunSpec::new(Command::Recover, Algorithm::Treewidth);
        assert!(s.validate().is_err());
        s.instance = Some("x".into());
        assert!(s.validate().is_ok());
        s.backend = OracleBackend::Noisy { epsilon: 0.01 };
        assert!(s.validate().is_err());
        let mut t = RunSpec::new(Command::Bench, Algorithm::Tree);
        t.params.tau = Some(0.1);
        assert!(t.validate().is_err());
        t.backend = OracleBackend::Noisy { epsilon: 0.01 };
        assert!(t.validate().is_ok());
        t.params.m = Some(30);
        assert!(t.validate().is_err());
        let mut u = RunSpec::new(Command::Bench, Algorithm::Tree);
        u.params.epsilon_fail = Some(1.5);
        assert!(u.validate().is_err());
    }

    #[test]
    fn support_comparison() {
        let d = compare_support(&[(0, 1), (1, 2)], &[(1, 0), (2, 3)]);
        assert_eq!(d.true_positive, 1);
        assert_eq!(d.false_positive, vec![(2, 3)]);
        assert_eq!(d.false_negative, vec![(1, 2)]);
        assert!(!d.exact());
        assert!(compare_support(&[(0, 1)], &[(1, 0)]).exact());
    }

    #[test]
    fn four_cycle_treewidth_report() {
        let inst = four_cycle_example();
        let mut spec = RunSpec::new(Command::Recover, Algorithm::Treewidth);
        spec.instance = Some("mem".into());
        spec.params.k = Some(2);
        let r = run_recovery(&inst, &spec).unwrap();
        assert!(r.success);
        assert!(r.max_abs_error.unwrap() < 1e-14);
        assert_eq!(r.distinct_queries, 10);
        let back = RecoveryReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.edges, r.edges);
        let v = verify_report(&inst, &back).unwrap();
        assert!(v.diff.exact());
        assert!(v.max_abs_error.unwrap() < 1e-14);
    }

    #[test]
    fn reports_are_deterministic() {
        let inst = gen_tree_model(200, 4, 0.3, 0.8, 3).unwrap();
        let mut spec = RunSpec::new(Command::Recover, Algorithm::Tree);
        spec.instance = Some("mem".into());
        spec.params.seed = Some(5);
        let mut a = run_recovery(&inst, &spec).unwrap();
        let mut b = run_recovery(&inst, &spec).unwrap();
        assert!(a.success);
        a.wall_ms = 0.0;
        b.wall_ms = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn noise_outside_window_warns() {
        let inst = gen_tree_model(60, 3, 0.3, 0.8, 1).unwrap();
        let mut spec = RunSpec::new(Command::Recover, Algorithm::Tree);
        spec.instance = Some("mem".into());
        spec.backend = OracleBackend::Noisy { epsilon: 0.05 };
        let r = run_recovery(&inst, &spec).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("exceeds"));
    }

    #[test]
    fn failed_recovery_is_reported() {
        let inst = gen_partial_ktree_model(120, 3, 8, 1.0, 2).unwrap();
        let mut spec = RunSpec::new(Command::Recover, Algorithm::Treewidth);
        spec.instance = Some("mem".into());
        spec.params.k = Some(1);
        spec.params.retries = Some(1);
        let r = run_recovery(&inst, &spec).unwrap();
        assert!(!r.success);
        assert!(r.diagnostic.unwrap().contains("retries exhausted"));
    }

    #[test]
    fn empty_grid_has_header_only() {
        let out = run_bench(&BenchGrid::new(Algorithm::Tree, vec![], vec![0, 1])).unwrap();
        let csv = bench_csv(&out);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# schema=covquery-bench/1 fingerprint="));
        assert_eq!(lines[1], BENCH_COLUMNS);
    }

    #[test]
    fn small_grid_summary() {
        let out = run_bench(&BenchGrid::new(Algorithm::Tree, vec![64, 128], vec![1, 2, 3])).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.summary.len(), 2);
        assert!(out.rows.iter().all(|r| r.success));
        let csv = bench_csv(&out);
        assert_eq!(csv.lines().filter(|l| l.starts_with("summary,")).count(), 2);
        assert!(out.fitted_exponent.unwrap() > 0.5);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn slope_of_power_law(c in 0.1f64..100.0, e in -2.0f64..3.0, xs in proptest::collection::btree_set(1u32..10_000, 2..8)) {
            let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x as f64, c * (x as f64).powf(e))).collect();
            let s = loglog_slope(&pts).unwrap();
            prop_assert!((s - e).abs() < 1e-9);
        }
    }
}
