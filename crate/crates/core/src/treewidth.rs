//! Recovery of bounded-treewidth concentration graphs together with the full
//! precision matrix, by recursive balanced separation under conditioning.
//!
//! All rank questions are asked about conditional cross-covariances
//! `Σ_{A,B|S}`, which have the same rank as `Σ_{AS,BS}` minus `|S|`. Entries
//! come with a magnitude bound so that exact cancellations are recognized no
//! matter how small the surviving correlations are.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{graded_elimination, graded_pivots, graded_rank_capped, invert, submatrix, Cholesky, DenseMatrix};
use crate::oracle::CovarianceOracle;
use crate::seed::{derive_seed, rng_from, set_seed};
use crate::sparse::PrecisionEstimate;

/// How the sample size `m` was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSizeMode {
    /// VC sample bound with `r = 11k`.
    Theoretical,
    /// `m = max(6(k+1), ⌈c_m·k·ln n⌉)`.
    #[default]
    Practical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorConfig {
    /// Treewidth bound.
    pub k: usize,
    /// Sample size, also the leaf size of the recursion.
    pub m: usize,
    pub delta_vc: f64,
    pub tau_vc: f64,
    pub mode: SampleSizeMode,
    /// Partitions of `W` examined before settling for the best one seen.
    pub partition_budget: usize,
    /// Fresh samples tried when a split fails its certificate.
    pub max_retries: usize,
    /// Relative tolerance for rank and support decisions.
    pub rank_tol: f64,
    pub seed: u64,
}

pub const DEFAULT_DELTA_VC: f64 = 1.0 / 24.0;
pub const DEFAULT_TAU_VC: f64 = 1.0 / 3.0;
pub const DEFAULT_PARTITION_BUDGET: usize = 50_000;
pub const DEFAULT_MAX_RETRIES: usize = 8;
pub const DEFAULT_C_M: f64 = 4.0;
/// Largest allowed component, as a fraction of the view minus the separator.
pub const BALANCE: f64 = 0.93;

/// `max(10r/δ² · ln(8r/δ²), 2/δ² · ln(2/τ))` with `r = 11k`.
pub fn theoretical_m(k: usize, delta: f64, tau: f64) -> usize {
    let r = 11.0 * k as f64;
    let d2 = delta * delta;
    let vc = 10.0 * r / d2 * (8.0 * r / d2).ln();
    let conf = 2.0 / d2 * (2.0 / tau).ln();
    vc.max(conf).ceil() as usize
}

/// `max(6(k+1), ⌈c_m·k·ln n⌉)`.
pub fn practical_m(n: usize, k: usize, c_m: f64) -> usize {
    let logn = (n.max(2) as f64).ln();
    (6 * (k + 1)).max((c_m * k as f64 * logn).ceil() as usize)
}

impl SeparatorConfig {
    pub fn practical(n: usize, k: usize, seed: u64) -> Result<Self> {
        Self::with_m(k, practical_m(n, k, DEFAULT_C_M), SampleSizeMode::Practical, seed)
    }

    pub fn theoretical(k: usize, seed: u64) -> Result<Self> {
        let m = theoretical_m(k, DEFAULT_DELTA_VC, DEFAULT_TAU_VC);
        Self::with_m(k, m, SampleSizeMode::Theoretical, seed)
    }

    pub fn with_m(k: usize, m: usize, mode: SampleSizeMode, seed: u64) -> Result<Self> {
        let cfg = SeparatorConfig {
            k,
            m,
            delta_vc: DEFAULT_DELTA_VC,
            tau_vc: DEFAULT_TAU_VC,
            mode,
            partition_budget: DEFAULT_PARTITION_BUDGET,
            max_retries: DEFAULT_MAX_RETRIES,
            rank_tol: 1e-8,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("treewidth bound k must be at least 1".into()));
        }
        if self.m < 6 * (self.k + 1) {
            return Err(Error::InvalidInput(format!(
                "sample size m={} below 6(k+1)={}",
                self.m,
                6 * (self.k + 1)
            )));
        }
        if self.mode == SampleSizeMode::Theoretical && self.m < theoretical_m(self.k, self.delta_vc, self.tau_vc) {
            return Err(Error::InvalidInput(format!(
                "theoretical mode needs m >= {}",
                theoretical_m(self.k, self.delta_vc, self.tau_vc)
            )));
        }
        if !(self.delta_vc > 0.0 && self.delta_vc < 1.0 && self.tau_vc > 0.0 && self.tau_vc < 1.0) {
            return Err(Error::InvalidInput("delta_vc and tau_vc must lie in (0, 1)".into()));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::InvalidInput(format!("rank_tol {} outside (0, 1)", self.rank_tol)));
        }
        if self.partition_budget == 0 {
            return Err(Error::InvalidInput("partition_budget must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional covariances `Σ_{u,v|S}` for a fixed conditioning set, with
/// per-vertex whitened columns cached.
struct Frame<'a, O: ?Sized> {
    oracle: &'a O,
    cond: Vec<usize>,
    chol: Option<Cholesky>,
    coords: HashMap<usize, Vec<f64>>,
}

impl<'a, O: CovarianceOracle + ?Sized> Frame<'a, O> {
    fn new(oracle: &'a O, cond: &[usize]) -> Result<Self> {
        let chol = if cond.is_empty() {
            None
        } else {
            Some(Cholesky::factor(&submatrix(oracle, cond, cond)?)?)
        };
        Ok(Frame {
            oracle,
            cond: cond.to_vec(),
            chol,
            coords: HashMap::new(),
        })
    }

    fn ensure(&mut self, v: usize) {
        if self.coords.contains_key(&v) {
            return;
        }
        let mut col: Vec<f64> = self.cond.iter().map(|&s| self.oracle.query(s, v)).collect();
        if let Some(chol) = &self.chol {
            chol.forward_in_place(&mut col);
        }
        self.coords.insert(v, col);
    }

    /// `(Σ_{u,v|S}, bound on the magnitude of the terms summed into it)`.
    fn entry(&mut self, u: usize, v: usize) -> (f64, f64) {
        self.ensure(u);
        self.ensure(v);
        let raw = self.oracle.query(u, v);
        let (xu, xv) = (&self.coords[&u], &self.coords[&v]);
        let (mut dot, mut mag) = (0.0, raw.abs());
        for (a, b) in xu.iter().zip(xv) {
            dot += a * b;
            mag += (a * b).abs();
        }
        (raw - dot, mag)
    }

    fn block(&mut self, rows: &[usize], cols: &[usize]) -> (DenseMatrix, DenseMatrix) {
        let mut vals = DenseMatrix::zeros(rows.len(), cols.len());
        let mut mags = DenseMatrix::zeros(rows.len(), cols.len());
        for (i, &u) in rows.iter().enumerate() {
            for (j, &v) in cols.iter().enumerate() {
                let (x, m) = self.entry(u, v);
                vals[(i, j)] = x;
                mags[(i, j)] = m;
            }
        }
        (vals, mags)
    }

    /// `rank(Σ_{A,B|S}) = rank(Σ_{AS,BS}) − |S|`.
    fn rank(&mut self, a: &[usize], b: &[usize], tol: f64) -> usize {
        let (vals, mags) = self.block(a, b);
        graded_rank_capped(&vals, &mags, tol, usize::MAX)
    }

    /// True when `Σ_{u,v|S} ≠ 0`, i.e. `rank(Σ_{uS,vS}) = |S| + 1`.
    fn linked(&mut self, u: usize, v: usize, tol: f64) -> bool {
        let (x, m) = self.entry(u, v);
        x.abs() > tol * m && x != 0.0
    }
}

fn with(set: &[usize], extra: &[usize]) -> Vec<usize> {
    let mut out = set.to_vec();
    out.extend_from_slice(extra);
    out
}

/// Minimal separator of `a` and `b` in the graph left after removing `cond`.
pub fn ab_separator<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    a: &[usize],
    b: &[usize],
    cond: &[usize],
    oracle: &O,
    cfg: &SeparatorConfig,
) -> Result<Vec<usize>> {
    let mut frame = Frame::new(oracle, cond)?;
    ab_separator_in(&mut frame, view, a, b, cfg.rank_tol)
}

fn ab_separator_in<O: CovarianceOracle + ?Sized>(
    frame: &mut Frame<'_, O>,
    view: &[usize],
    a: &[usize],
    b: &[usize],
    tol: f64,
) -> Result<Vec<usize>> {
    let (vals, mags) = frame.block(a, b);
    let pivots = graded_pivots(&vals, &mags, tol, usize::MAX);
    let r = pivots.len();
    if r == 0 {
        return Ok(Vec::new());
    }
    // Minimal separators of (A, B) are minimal separators of the pivot rows
    // and columns too, so the small test is a sound prefilter.
    let a_core: Vec<usize> = pivots.iter().map(|&(i, _)| a[i]).collect();
    let b_core: Vec<usize> = pivots.iter().map(|&(_, j)| b[j]).collect();
    let u: Vec<usize> = view
        .iter()
        .copied()
        .filter(|&v| {
            frame.rank(&with(&a_core, &[v]), &with(&b_core, &[v]), tol) == r
                && frame.rank(&with(a, &[v]), &with(b, &[v]), tol) == r
        })
        .collect();
    let Some(&v0) = u.first() else {
        return Err(Error::RankInconsistency(format!(
            "no vertex keeps rank {r} for |A|={}, |B|={}, |S|={}",
            a.len(),
            b.len(),
            frame.cond.len()
        )));
    };
    let mut c = vec![v0];
    for &x in &u[1..] {
        if c.len() == r {
            break;
        }
        let cx = with(&c, &[x]);
        if frame.rank(&with(a, &cx), &with(b, &cx), tol) == r {
            c.push(x);
        }
    }
    if c.len() != r {
        return Err(Error::RankInconsistency(format!(
            "greedy pass stopped at {} of {r} separator vertices (|U|={})",
            c.len(),
            u.len()
        )));
    }
    Ok(c)
}

/// Outcome of the search over balanced partitions of the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSearch {
    /// Distinct sampled vertices.
    pub sample: Vec<usize>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    /// `rank(Σ_{A,B|S})` of the chosen partition.
    pub rank: usize,
    pub examined: usize,
}

/// Conditional covariances among the sample, with bounds.
struct SampleMatrix {
    vals: DenseMatrix,
    mags: DenseMatrix,
    corr: DenseMatrix,
}

impl SampleMatrix {
    fn new<O: CovarianceOracle + ?Sized>(frame: &mut Frame<'_, O>, w: &[usize]) -> Self {
        let (vals, mags) = frame.block(w, w);
        let sd: Vec<f64> = (0..w.len()).map(|i| vals[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
        let corr = DenseMatrix::from_fn(w.len(), w.len(), |i, j| (vals[(i, j)] / (sd[i] * sd[j])).abs());
        SampleMatrix { vals, mags, corr }
    }

    fn rank(&self, a: &[usize], b: &[usize], tol: f64, cap: usize) -> usize {
        let v = self.vals.select(a, b);
        let m = self.mags.select(a, b);
        graded_rank_capped(&v, &m, tol, cap)
    }
}

struct Search<'s> {
    matrix: &'s SampleMatrix,
    tol: f64,
    target: usize,
    lo: usize,
    hi: usize,
    examined: usize,
    best: Option<(usize, Vec<bool>)>,
}

impl Search<'_> {
    /// Scores a balanced side mask; true once the target rank is reached.
    fn offer(&mut self, in_a: &[bool]) -> bool {
        let a: Vec<usize> = (0..in_a.len()).filter(|&i| in_a[i]).collect();
        let b: Vec<usize> = (0..in_a.len()).filter(|&i| !in_a[i]).collect();
        debug_assert!(a.len() >= self.lo && a.len() <= self.hi);
        self.examined += 1;
        let cap = self.best.as_ref().map_or(usize::MAX, |(r, _)| *r);
        let r = self.matrix.rank(&a, &b, self.tol, cap);
        if self.best.as_ref().is_none_or(|(br, _)| r < *br) {
            self.best = Some((r, in_a.to_vec()));
        }
        r <= self.target
    }

    /// Like [`Search::offer`] but returns how strongly the partition exceeds
    /// the target: the summed log-significance of the pivots past `k+1`.
    fn measure(&mut self, in_a: &[bool]) -> f64 {
        let a: Vec<usize> = (0..in_a.len()).filter(|&i| in_a[i]).collect();
        let b: Vec<usize> = (0..in_a.len()).filter(|&i| !in_a[i]).collect();
        self.examined += 1;
        let v = self.matrix.vals.select(&a, &b);
        let m = self.matrix.mags.select(&a, &b);
        let pivots = graded_elimination(&v, &m, self.tol, usize::MAX);
        let r = pivots.len();
        if self.best.as_ref().is_none_or(|(br, _)| r < *br) {
            self.best = Some((r, in_a.to_vec()));
        }
        let mut ratios: Vec<f64> = pivots.iter().map(|p| p.2).collect();
        ratios.sort_by(|x, y| y.total_cmp(x));
        ratios.iter().skip(self.target).map(|&x| (x / self.tol).ln()).sum()
    }

    fn done(&self) -> bool {
        self.best.as_ref().is_some_and(|(r, _)| *r <= self.target)
    }
}

/// Grows a side from `seed`, always adding the sample vertex most correlated
/// with the current side, and offers the balanced prefixes, most even first.
fn growth_sweep(search: &mut Search<'_>, seed: usize, budget: usize) -> bool {
    let m = search.matrix.corr.rows();
    let mut in_a = vec![false; m];
    let mut affinity: Vec<f64> = (0..m).map(|j| search.matrix.corr[(seed, j)]).collect();
    in_a[seed] = true;
    let mut order = vec![seed];
    while order.len() < search.hi {
        let next = (0..m)
            .filter(|&j| !in_a[j])
            .max_by(|&x, &y| affinity[x].total_cmp(&affinity[y]).then(y.cmp(&x)));
        let Some(next) = next else { break };
        in_a[next] = true;
        order.push(next);
        for j in 0..m {
            affinity[j] = affinity[j].max(search.matrix.corr[(next, j)]);
        }
    }
    let mut sizes: Vec<usize> = (search.lo..=order.len()).collect();
    sizes.sort_by_key(|&t| (2 * t).abs_diff(m));
    for t in sizes {
        if search.examined >= budget {
            return false;
        }
        let mut mask = vec![false; m];
        for &v in &order[..t] {
            mask[v] = true;
        }
        if search.offer(&mask) {
            return true;
        }
    }
    false
}

/// Annealed single-vertex moves (or swaps when a move would unbalance)
/// starting from the best partition seen so far.
fn refine(search: &mut Search<'_>, budget: usize, rng: &mut ChaCha8Rng) -> bool {
    let Some((_, start)) = search.best.clone() else {
        return false;
    };
    let m = start.len();
    let mut cur = start;
    let mut size = cur.iter().filter(|&&x| x).count();
    let mut f = search.measure(&cur);
    let steps = budget.saturating_sub(search.examined);
    for step in 0..steps {
        if search.done() {
            return true;
        }
        let temp = 2.0 * (1.0 - step as f64 / steps as f64) + 0.05;
        let i = rng.random_range(0..m);
        let to_a = !cur[i];
        let new_size = if to_a { size + 1 } else { size - 1 };
        let mut next = cur.clone();
        next[i] = to_a;
        let mut next_size = new_size;
        if !(search.lo..=search.hi).contains(&new_size) {
            let others: Vec<usize> = (0..m).filter(|&j| cur[j] == to_a).collect();
            let j = others[rng.random_range(0..others.len())];
            next[j] = !to_a;
            next_size = size;
        }
        let g = search.measure(&next);
        if g <= f || rng.random_bool(((f - g) / temp).exp().min(1.0)) {
            cur = next;
            size = next_size;
            f = g;
        }
    }
    search.done()
}

/// Uniform draw among balanced two-colourings of `m` vertices.
fn random_balanced(m: usize, lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    loop {
        let mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let size = mask.iter().filter(|&&x| x).count();
        if (lo..=hi).contains(&size) {
            return mask;
        }
    }
}

/// Samples `W` from `view` and searches its balanced partitions for a small
/// conditional rank.
pub fn search_partition<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    cond: &[usize],
    oracle: &O,
    cfg: &SeparatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PartitionSearch> {
    let mut frame = Frame::new(oracle, cond)?;
    search_partition_in(&mut frame, view, cfg, rng)
}

fn search_partition_in<O: CovarianceOracle + ?Sized>(
    frame: &mut Frame<'_, O>,
    view: &[usize],
    cfg: &SeparatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PartitionSearch> {
    if view.len() < 2 {
        return Err(Error::InvalidInput(format!("cannot partition a view of {} vertices", view.len())));
    }
    let mut sample: Vec<usize> = (0..cfg.m).map(|_| view[rng.random_range(0..view.len())]).collect();
    sample.sort_unstable();
    sample.dedup();
    if sample.len() < 2 {
        sample = view[..2].to_vec();
    }
    let w = sample.len();
    let matrix = SampleMatrix::new(frame, &sample);
    let hi = (2 * w / 3).max(1);
    let lo = w - hi;
    let mut search = Search {
        matrix: &matrix,
        tol: cfg.rank_tol,
        target: cfg.k + 1,
        lo: lo.max(1),
        hi,
        examined: 0,
        best: None,
    };
    let mut seeds: Vec<usize> = (0..w).collect();
    seeds.shuffle(rng);
    for &s in &seeds {
        if growth_sweep(&mut search, s, cfg.partition_budget) || search.examined >= cfg.partition_budget {
            break;
        }
    }
    if !search.done() {
        let refine_budget = search.examined + (cfg.partition_budget - search.examined.min(cfg.partition_budget)) / 2;
        refine(&mut search, refine_budget, rng);
    }
    while !search.done() && search.examined < cfg.partition_budget {
        let mask = random_balanced(w, search.lo, search.hi, rng);
        search.offer(&mask);
    }
    let examined = search.examined;
    let (rank, mask) = search.best.expect("at least one partition is examined");
    let a = (0..w).filter(|&i| mask[i]).map(|i| sample[i]).collect();
    let b = (0..w).filter(|&i| !mask[i]).map(|i| sample[i]).collect();
    Ok(PartitionSearch {
        sample,
        a,
        b,
        rank,
        examined,
    })
}

/// Balanced separator of the view in the graph left after removing `cond`.
pub fn find_balanced_separator<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    cond: &[usize],
    oracle: &O,
    cfg: &SeparatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut frame = Frame::new(oracle, cond)?;
    let search = search_partition_in(&mut frame, view, cfg, rng)?;
    ab_separator_in(&mut frame, view, &search.a, &search.b, cfg.rank_tol)
}

/// Groups `view ∖ separator` into the components left after removing
/// `cond ∪ separator`, testing each vertex against one representative per
/// component found so far.
pub fn components_given<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    cond: &[usize],
    separator: &[usize],
    oracle: &O,
    rank_tol: f64,
) -> Result<Vec<Vec<usize>>> {
    let mut frame = Frame::new(oracle, &with(cond, separator))?;
    Ok(components_in(&mut frame, view, separator, rank_tol))
}

fn components_in<O: CovarianceOracle + ?Sized>(
    frame: &mut Frame<'_, O>,
    view: &[usize],
    separator: &[usize],
    tol: f64,
) -> Vec<Vec<usize>> {
    let removed: HashSet<usize> = separator.iter().copied().collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &v in view.iter().filter(|v| !removed.contains(v)) {
        match groups.iter_mut().find(|g| frame.linked(g[0], v, tol)) {
            Some(g) => g.push(v),
            None => groups.push(vec![v]),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub separator: Vec<usize>,
    pub components: Vec<Vec<usize>>,
    /// Samples drawn before the certificate held.
    pub attempts: usize,
    /// Rank of the partition the separator came from.
    pub partition_rank: usize,
}

impl SplitResult {
    pub fn largest(&self) -> usize {
        self.components.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Whether a split passes `|S′| ≤ k+1` and `max |C| ≤ 0.93 |view ∖ S′|`.
pub fn split_is_certified(view_len: usize, split: &SplitResult, k: usize) -> bool {
    let rest = view_len.saturating_sub(split.separator.len());
    split.separator.len() <= k + 1 && (split.largest() as f64) <= BALANCE * rest as f64
}

/// Balanced separator and the components it leaves, retried with fresh
/// samples until the balance certificate holds.
pub fn split_components<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    cond: &[usize],
    oracle: &O,
    cfg: &SeparatorConfig,
) -> Result<SplitResult> {
    let call_seed = set_seed(cfg.seed, "tw-split", view);
    let mut frame = Frame::new(oracle, cond)?;
    let mut worst = String::new();
    for attempt in 0..=cfg.max_retries {
        let mut rng = rng_from(derive_seed(call_seed, "attempt", attempt as u64));
        let search = search_partition_in(&mut frame, view, cfg, &mut rng)?;
        let separator = ab_separator_in(&mut frame, view, &search.a, &search.b, cfg.rank_tol)?;
        let mut inner = Frame::new(oracle, &with(cond, &separator))?;
        let components = components_in(&mut inner, view, &separator, cfg.rank_tol);
        let split = SplitResult {
            separator,
            components,
            attempts: attempt + 1,
            partition_rank: search.rank,
        };
        if split_is_certified(view.len(), &split, cfg.k) {
            return Ok(split);
        }
        worst = format!(
            "separator of size {} (partition rank {}) left a component of {} out of {}",
            split.separator.len(),
            search.rank,
            split.largest(),
            view.len()
        );
        log::debug!("split attempt {attempt} rejected: {worst}");
    }
    Err(Error::RetriesExhausted {
        attempts: cfg.max_retries + 1,
        context: format!("no certified split of a view of {} vertices; last: {worst}", view.len()),
    })
}

/// One accepted split, as evidence for later checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCertificate {
    pub depth: usize,
    pub view: Vec<usize>,
    pub cond: Vec<usize>,
    pub separator: Vec<usize>,
    pub components: Vec<Vec<usize>>,
    pub attempts: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreewidthRecovery {
    pub precision: PrecisionEstimate,
    pub splits: Vec<SplitCertificate>,
    pub leaves: usize,
    pub max_depth: usize,
    /// Multiply-adds spent assembling cross blocks.
    pub multiply_ops: u64,
}

impl TreewidthRecovery {
    pub fn edges(&self, support_tol: f64) -> Vec<(usize, usize)> {
        self.precision.support(support_tol)
    }
}

/// `(i, j, value)` entries of `K̂` restricted to one view.
type Entries = Vec<(usize, usize, f64)>;

/// Drops entries whose partial correlation is numerically zero.
fn keep_entry(v: f64, kii: f64, kjj: f64, tol: f64) -> bool {
    v.abs() > tol * (kii * kjj).abs().sqrt()
}

struct Reconstructor<'a, O: ?Sized> {
    oracle: &'a O,
    cfg: &'a SeparatorConfig,
    depth_limit: usize,
    out: TreewidthRecovery,
}

impl<'a, O: CovarianceOracle + ?Sized> Reconstructor<'a, O> {
    fn leaf(&mut self, view: &[usize], cond: &[usize]) -> Result<Entries> {
        let mut frame = Frame::new(self.oracle, cond)?;
        let (sigma, _) = frame.block(view, view);
        let k = invert(&sigma.symmetrized())?;
        let mut out = Vec::new();
        for i in 0..view.len() {
            for j in i..view.len() {
                if i == j || keep_entry(k[(i, j)], k[(i, i)], k[(j, j)], self.cfg.rank_tol) {
                    out.push((view[i], view[j], k[(i, j)]));
                }
            }
        }
        self.out.leaves += 1;
        Ok(out)
    }

    fn run(&mut self, view: &[usize], cond: &[usize], depth: usize) -> Result<Entries> {
        if depth > self.depth_limit {
            return Err(Error::DepthExceeded {
                depth,
                limit: self.depth_limit,
                context: format!("treewidth recursion on a view of {} vertices", view.len()),
            });
        }
        self.out.max_depth = self.out.max_depth.max(depth);
        if view.len() <= self.cfg.m {
            return self.leaf(view, cond);
        }
        let split = split_components(view, cond, self.oracle, self.cfg)?;
        let sep = split.separator.clone();
        self.out.splits.push(SplitCertificate {
            depth,
            view: view.to_vec(),
            cond: cond.to_vec(),
            separator: sep.clone(),
            components: split.components.clone(),
            attempts: split.attempts,
        });
        let child_cond = with(cond, &sep);
        let mut frame = Frame::new(self.oracle, cond)?;
        let (sigma_sep, _) = frame.block(&sep, &sep);
        let p = if sep.is_empty() {
            DenseMatrix::zeros(0, 0)
        } else {
            invert(&sigma_sep.symmetrized())?
        };
        let s = sep.len();
        let mut entries = Vec::new();
        // Σ_i K̂_{S′,C_i} Σ_{C_i,S′|S}
        let mut acc = DenseMatrix::zeros(s, s);
        let mut diag: HashMap<usize, f64> = HashMap::new();
        let mut cross: Vec<(DenseMatrix, Vec<usize>)> = Vec::new();
        for comp in &split.components {
            let block = self.run(comp, &child_cond, depth + 1)?;
            let local: HashMap<usize, usize> = comp.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            if s == 0 {
                entries.extend(block);
                continue;
            }
            let (x, _) = frame.block(comp, &sep);
            // Y = K̂_{C_i} X using the sparsity of K̂_{C_i}
            let mut y = DenseMatrix::zeros(comp.len(), s);
            let mut ops = 0u64;
            for &(i, j, v) in &block {
                let (li, lj) = (local[&i], local[&j]);
                for c in 0..s {
                    y[(li, c)] += v * x[(lj, c)];
                }
                ops += s as u64;
                if li != lj {
                    for c in 0..s {
                        y[(lj, c)] += v * x[(li, c)];
                    }
                    ops += s as u64;
                } else {
                    diag.insert(i, v);
                }
            }
            let kcs = y.matmul(&p).scaled(-1.0);
            ops += (comp.len() * s * s) as u64;
            let kk = self.cfg.k as u64 + 1;
            debug_assert!(
                ops <= 4 * kk * kk * comp.len() as u64 + block.len() as u64 * 2 * s as u64,
                "cross-block multiply used {ops} operations for |C|={}",
                comp.len()
            );
            self.out.multiply_ops += ops;
            #[cfg(debug_assertions)]
            {
                let resid = y.add(&kcs.matmul(&sigma_sep));
                let scale = y.max_abs().max(1.0);
                debug_assert!(resid.max_abs() <= 1e-8 * scale, "assembly identity residual {}", resid.max_abs());
            }
            // K̂_{S′,C_i} Σ_{C_i,S′|S} = kcsᵀ X
            acc = acc.add(&kcs.transpose().matmul(&x));
            entries.extend(block);
            cross.push((kcs, comp.clone()));
        }
        if s > 0 {
            let ks = DenseMatrix::identity(s).sub(&acc).matmul(&p).symmetrized();
            for a in 0..s {
                for b in a..s {
                    if a == b || keep_entry(ks[(a, b)], ks[(a, a)], ks[(b, b)], self.cfg.rank_tol) {
                        let (u, v) = (sep[a], sep[b]);
                        entries.push((u.min(v), u.max(v), ks[(a, b)]));
                    }
                }
            }
            for (kcs, comp) in cross {
                for (i, &c) in comp.iter().enumerate() {
                    for (a, &t) in sep.iter().enumerate() {
                        let v = kcs[(i, a)];
                        if keep_entry(v, diag[&c], ks[(a, a)], self.cfg.rank_tol) {
                            entries.push((c.min(t), c.max(t), v));
                        }
                    }
                }
            }
        }
        Ok(entries)
    }
}

/// Recovers `K̂` on `view` given that `cond` separates it from the rest.
pub fn reconstruct<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    cond: &[usize],
    oracle: &O,
    cfg: &SeparatorConfig,
    out: &mut TreewidthRecovery,
) -> Result<()> {
    cfg.validate()?;
    let n = oracle.dim();
    let mut rec = Reconstructor {
        oracle,
        cfg,
        depth_limit: treewidth_depth_limit(n),
        out: std::mem::take(out),
    };
    if rec.out.precision.dim() != n {
        rec.out.precision = PrecisionEstimate::new(n);
    }
    let result = rec.run(view, cond, 0);
    *out = rec.out;
    for (i, j, v) in result? {
        out.precision.set(i, j, v);
    }
    Ok(())
}

/// `⌈log_{100/93} n⌉ + 2`.
pub fn treewidth_depth_limit(n: usize) -> usize {
    ((n.max(2) as f64).ln() / (100.0f64 / 93.0).ln()).ceil() as usize + 2
}

/// Full recovery of `K̂` over all `n` variables.
pub fn main_reconstruct_report<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    cfg: &SeparatorConfig,
) -> Result<TreewidthRecovery> {
    let n = oracle.dim();
    let mut out = TreewidthRecovery {
        precision: PrecisionEstimate::new(n),
        ..TreewidthRecovery::default()
    };
    let all: Vec<usize> = (0..n).collect();
    reconstruct(&all, &[], oracle, cfg, &mut out)?;
    Ok(out)
}

pub fn main_reconstruct<O: CovarianceOracle + ?Sized>(
    n: usize,
    oracle: &O,
    cfg: &SeparatorConfig,
) -> Result<PrecisionEstimate> {
    if oracle.dim() != n {
        return Err(Error::InvalidInput(format!("oracle has dimension {}, expected {n}", oracle.dim())));
    }
    Ok(main_reconstruct_report(oracle, cfg)?.precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{components_within, min_vertex_separator_exhaustive, separates, Graph};
    use crate::models::{four_cycle_example, gen_partial_ktree_model, gen_tree_model, generic_precision};
    use crate::oracle::DenseOracle;
    use crate::sparse::{dense_inverse, SparseSymmetric};
    use crate::tree::{reconstruct_tree, CentralityConfig, SeparationPredicate};
    use proptest::prelude::*;

    fn sorted(mut v: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        for c in &mut v {
            c.sort_unstable();
        }
        v.sort();
        v
    }

    fn check_certificates(g: &Graph, rec: &TreewidthRecovery, k: usize) {
        for sp in &rec.splits {
            assert!(sp.separator.len() <= k + 1);
            let rest = sp.view.len() - sp.separator.len();
            let largest = sp.components.iter().map(Vec::len).max().unwrap_or(0);
            assert!(largest as f64 <= BALANCE * rest as f64);
            let truth = components_within(g, &sp.view, &sp.separator);
            assert_eq!(sorted(sp.components.clone()), sorted(truth.components));
            let removed = with(&sp.cond, &sp.separator);
            for c in &sp.components {
                let others: Vec<usize> = sp
                    .view
                    .iter()
                    .copied()
                    .filter(|v| !c.contains(v) && !sp.separator.contains(v))
                    .collect();
                assert!(separates(g, &removed, c, &others));
            }
        }
    }

    #[test]
    fn four_cycle_small_view_inverts_directly() {
        let inst = four_cycle_example();
        let o = inst.oracle().unwrap();
        let cfg = SeparatorConfig::practical(4, 1, 0).unwrap();
        let rec = main_reconstruct_report(&o, &cfg).unwrap();
        assert_eq!(rec.leaves, 1);
        assert!(rec.splits.is_empty());
        let want = SparseSymmetric::from_triplets(
            4,
            &[
                (0, 0, 4.0),
                (1, 1, 4.0),
                (2, 2, 4.0),
                (3, 3, 4.0),
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (0, 3, 1.0),
            ]
            .map(|(i, j, v)| (i, j, v / 24.0)),
        )
        .unwrap();
        assert!(rec.precision.max_abs_diff(&want) < 1e-14);
        assert_eq!(rec.edges(1e-8), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn four_cycle_separator_and_components() {
        let o = four_cycle_example().oracle().unwrap();
        let cfg = SeparatorConfig::practical(4, 1, 0).unwrap();
        // vertices 2 and 4 in 1-based labels
        let sep = ab_separator(&[0, 1, 2, 3], &[1], &[3], &[], &o, &cfg).unwrap();
        assert_eq!(sep.len(), 1);
        assert!(sep == vec![1] || sep == vec![3]);
        let both = ab_separator(&[0, 1, 2, 3], &[1], &[3], &[0], &o, &cfg).unwrap();
        assert_eq!(both.len(), 1);
        let comps = components_given(&[0, 1, 2, 3], &[], &[0, 2], &o, cfg.rank_tol).unwrap();
        assert_eq!(sorted(comps), vec![vec![1], vec![3]]);
        let whole = components_given(&[0, 1, 2, 3], &[], &[0], &o, cfg.rank_tol).unwrap();
        assert_eq!(sorted(whole), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn sample_size_rules() {
        assert_eq!(practical_m(300, 2, 4.0), (8.0 * 300f64.ln()).ceil() as usize);
        assert_eq!(practical_m(4, 3, 4.0), 24);
        let r = 11.0f64;
        let d2 = 1.0f64 / 576.0;
        let want = (10.0 * r / d2 * (8.0 * r / d2).ln()).ceil() as usize;
        assert_eq!(theoretical_m(1, 1.0 / 24.0, 1.0 / 3.0), want);
        assert!(SeparatorConfig::theoretical(1, 0).unwrap().m > 600_000);
        assert!(SeparatorConfig::with_m(2, 17, SampleSizeMode::Practical, 0).is_err());
        assert!(SeparatorConfig::with_m(1, 50, SampleSizeMode::Theoretical, 0).is_err());
        assert!(SeparatorConfig::with_m(0, 50, SampleSizeMode::Practical, 0).is_err());
    }

    #[test]
    fn tree_split_matches_graph_components() {
        let inst = gen_tree_model(200, 3, 0.3, 0.8, 5).unwrap();
        let o = inst.oracle().unwrap();
        let cfg = SeparatorConfig::practical(200, 1, 3).unwrap();
        let view: Vec<usize> = (0..200).collect();
        let split = split_components(&view, &[], &o, &cfg).unwrap();
        assert!(split.separator.len() <= 2);
        let truth = components_within(&inst.graph, &view, &split.separator);
        assert_eq!(sorted(split.components), sorted(truth.components));
    }

    #[test]
    fn two_tree_recursion_matches_dense_inverse() {
        let inst = gen_partial_ktree_model(50, 2, 6, 0.8, 3).unwrap();
        let o = inst.oracle().unwrap();
        let cfg = SeparatorConfig::with_m(2, 18, SampleSizeMode::Practical, 1).unwrap();
        let rec = main_reconstruct_report(&o, &cfg).unwrap();
        assert!(rec.max_depth >= 1);
        let k = dense_inverse(&inst.precision).map(|s| invert(&s).unwrap()).unwrap();
        let scale = k.max_abs();
        let got = rec.precision.to_dense();
        assert!(got.max_abs_diff(&k) <= 1e-6 * scale);
        assert_eq!(rec.edges(1e-8), inst.graph.edges());
        check_certificates(&inst.graph, &rec, 2);
    }

    #[test]
    fn k1_agrees_with_tree_recovery() {
        let inst = gen_tree_model(300, 4, 0.3, 0.8, 9).unwrap();
        let o = inst.oracle().unwrap();
        let cfg = SeparatorConfig::practical(300, 1, 9).unwrap();
        let tw = main_reconstruct(300, &o, &cfg).unwrap();
        let tree = reconstruct_tree(&o, &CentralityConfig::new(60, 9).unwrap(), &SeparationPredicate::default()).unwrap();
        assert_eq!(tw.support(1e-8), tree.edges);
    }

    #[test]
    fn too_small_k_exhausts_retries() {
        // 5x5 grid has treewidth 5
        let mut edges = Vec::new();
        for r in 0..5 {
            for c in 0..5 {
                let v = 5 * r + c;
                if c + 1 < 5 {
                    edges.push((v, v + 1));
                }
                if r + 1 < 5 {
                    edges.push((v, v + 5));
                }
            }
        }
        let g = Graph::from_edges(25, &edges).unwrap();
        let k = generic_precision(&g, Default::default(), &mut rng_from(2));
        let o = DenseOracle::new(dense_inverse(&k).unwrap()).unwrap();
        let mut cfg = SeparatorConfig::with_m(1, 12, SampleSizeMode::Practical, 0).unwrap();
        cfg.partition_budget = 200;
        cfg.max_retries = 2;
        let view: Vec<usize> = (0..25).collect();
        assert!(matches!(
            split_components(&view, &[], &o, &cfg),
            Err(Error::RetriesExhausted { attempts: 3, .. })
        ));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let inst = gen_partial_ktree_model(120, 2, 8, 0.7, 4).unwrap();
        let o = inst.oracle().unwrap();
        let cfg = SeparatorConfig::practical(120, 2, 4).unwrap();
        let a = main_reconstruct_report(&o, &cfg).unwrap();
        let b = main_reconstruct_report(&o, &cfg).unwrap();
        assert_eq!(a.precision, b.precision);
        assert_eq!(a.splits, b.splits);
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = rng_from(seed);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) && !edges.contains(&(u, v)) {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edges(n, &edges).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ab_separator_is_minimum(n in 4usize..10, p in 0.0f64..0.5, seed: u64, pick: (usize, usize)) {
            let g = random_graph(n, p, seed);
            let k = generic_precision(&g, Default::default(), &mut rng_from(seed ^ 1));
            let o = DenseOracle::new(dense_inverse(&k).unwrap()).unwrap();
            let (a, b) = (pick.0 % n, pick.1 % n);
            prop_assume!(a != b);
            let cfg = SeparatorConfig::practical(n, 1, 0).unwrap();
            let view: Vec<usize> = (0..n).collect();
            let sep = ab_separator(&view, &[a], &[b], &[], &o, &cfg).unwrap();
            prop_assert_eq!(sep.len(), min_vertex_separator_exhaustive(&g, &[a], &[b]).len());
            prop_assert!(separates(&g, &sep, &[a], &[b]));
        }

        #[test]
        fn recovers_partial_ktrees(n in 60usize..160, k in 1usize..4, keep in 0.5f64..1.0, seed: u64) {
            let inst = gen_partial_ktree_model(n, k, 8, keep, seed).unwrap();
            let o = inst.oracle().unwrap();
            let cfg = SeparatorConfig::practical(n, k, seed).unwrap();
            let rec = main_reconstruct_report(&o, &cfg).unwrap();
            prop_assert_eq!(rec.edges(1e-8), inst.graph.edges());
            let err = rec.precision.max_abs_diff(&inst.precision);
            prop_assert!(err <= 1e-6 * inst.precision.max_abs());
            check_certificates(&inst.graph, &rec, k);
        }
    }
}
