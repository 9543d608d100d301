//! Tree recovery by centroid-guided divide and conquer.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{det2_is_zero, RankConfig};
use crate::oracle::{CovarianceOracle, NoiseModel};
use crate::seed::{derive_seed, rng_from};

/// Repetitions per vertex for the centrality estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentralityConfig {
    pub kappa: usize,
    pub seed: u64,
}

impl CentralityConfig {
    pub fn new(kappa: usize, seed: u64) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidInput("kappa must be at least 1".into()));
        }
        Ok(CentralityConfig { kappa, seed })
    }

    /// `κ = ⌈32 ln(2n²/ε)⌉`, enough for every centrality call to succeed with
    /// probability at least `1 − ε`.
    pub fn for_failure_probability(n: usize, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(tree_kappa(n, epsilon)?, seed)
    }
}

pub fn tree_kappa(n: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("failure probability {epsilon} outside (0, 1)")));
    }
    let n = n.max(2) as f64;
    Ok((32.0 * (2.0 * n * n / epsilon).ln()).ceil() as usize)
}

/// Threshold rules for a noisy oracle with unit diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyPredicateConfig {
    pub tau: f64,
    pub epsilon: f64,
}

impl NoisyPredicateConfig {
    /// `τ = 4ε`, the midpoint choice inside the admissible window.
    pub fn at_epsilon(epsilon: f64) -> Self {
        NoisyPredicateConfig { tau: 4.0 * epsilon, epsilon }
    }

    /// Checks `3ε < τ ≤ δ^D (1 − γ²) − 3ε` for the given edge-correlation bounds.
    pub fn check_window(&self, delta: f64, gamma: f64, diameter: usize) -> Result<()> {
        let floor = delta.powi(diameter as i32) * (1.0 - gamma * gamma);
        let eps = self.epsilon;
        if !(self.tau > 3.0 * eps) {
            return Err(Error::Infeasible(format!("tau {} must exceed 3 epsilon = {}", self.tau, 3.0 * eps)));
        }
        if self.tau > floor - 3.0 * eps {
            return Err(Error::Infeasible(format!(
                "tau {} exceeds delta^D (1 - gamma^2) - 3 epsilon = {:.6e}",
                self.tau,
                floor - 3.0 * eps
            )));
        }
        Ok(())
    }

    pub fn check_noise(&self, noise: &NoiseModel) -> Result<()> {
        noise.validate()?;
        self.check_window(noise.delta_edge, noise.gamma_edge, noise.diameter)
    }
}

/// Separation test and neighbor ordering, exact or noise tolerant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparationPredicate {
    Exact(RankConfig),
    Noisy(NoisyPredicateConfig),
}

impl Default for SeparationPredicate {
    fn default() -> Self {
        SeparationPredicate::Exact(RankConfig::default())
    }
}

impl SeparationPredicate {
    /// Whether `mid` separates `a` from `b`: `σ_{a,mid} σ_{mid,b} = σ_{ab} σ_{mid,mid}`.
    #[inline]
    pub fn separates<O: CovarianceOracle + ?Sized>(&self, o: &O, mid: usize, a: usize, b: usize) -> bool {
        match self {
            SeparationPredicate::Exact(_) => self.separates_given(o, mid, o.query(mid, mid), a, b),
            SeparationPredicate::Noisy(_) => self.separates_given(o, mid, 1.0, a, b),
        }
    }

    /// [`Self::separates`] with `σ_{mid,mid}` already known.
    #[inline]
    pub fn separates_given<O: CovarianceOracle + ?Sized>(
        &self,
        o: &O,
        mid: usize,
        sigma_mid: f64,
        a: usize,
        b: usize,
    ) -> bool {
        let lhs = o.query(a, mid) * o.query(mid, b);
        match self {
            SeparationPredicate::Exact(cfg) => det2_is_zero(lhs, o.query(a, b) * sigma_mid, cfg.rel_tol),
            SeparationPredicate::Noisy(cfg) => (lhs - o.query(a, b)).abs() < cfg.tau,
        }
    }

    /// Sort key for neighbors of `w`; larger means closer.
    #[inline]
    pub fn closeness<O: CovarianceOracle + ?Sized>(&self, o: &O, u: usize, w: usize, sigma_ww: f64) -> f64 {
        match self {
            SeparationPredicate::Exact(_) => o.query(u, w).abs() / (o.query(u, u) * sigma_ww).sqrt(),
            SeparationPredicate::Noisy(_) => o.query(u, w).abs(),
        }
    }
}

/// Callbacks fired during recovery.
pub trait RecoveryObserver {
    fn on_central(&mut self, _view: &[usize], _w: usize) {}
    fn on_leaf(&mut self, _view: &[usize], _edges: &[(usize, usize)]) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RecoveryObserver for NoObserver {}

/// Estimated s-centrality counts: `scores[i]` is how many of the `κ` draws
/// found `view[i]` not separating the sampled pair.
pub fn s_central_scores<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    oracle: &O,
    kappa: usize,
    pred: &SeparationPredicate,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let len = view.len();
    let mut scores = vec![0usize; len];
    if len < 2 {
        return scores;
    }
    for (pos, &v) in view.iter().enumerate() {
        let sigma_vv = match pred {
            SeparationPredicate::Exact(_) => oracle.query(v, v),
            SeparationPredicate::Noisy(_) => 1.0,
        };
        let mut hits = 0;
        for _ in 0..kappa {
            let a = skip_index(rng.random_range(0..len - 1), pos);
            let b = skip_index(rng.random_range(0..len - 1), pos);
            if !pred.separates_given(oracle, v, sigma_vv, view[a], view[b]) {
                hits += 1;
            }
        }
        scores[pos] = hits;
    }
    scores
}

#[inline]
fn skip_index(i: usize, skip: usize) -> usize {
    if i >= skip {
        i + 1
    } else {
        i
    }
}

/// Position of the lowest score not in `excluded`, ties broken by vertex id.
pub(crate) fn argmin_score(view: &[usize], scores: &[usize], excluded: &[usize]) -> Option<usize> {
    (0..view.len())
        .filter(|&p| !excluded.contains(&view[p]))
        .min_by_key(|&p| (scores[p], view[p]))
}

/// Vertex of `view` with the smallest estimated s-centrality.
pub fn s_central<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    oracle: &O,
    kappa: usize,
    pred: &SeparationPredicate,
    rng: &mut ChaCha8Rng,
) -> usize {
    let scores = s_central_scores(view, oracle, kappa, pred, rng);
    view[argmin_score(view, &scores, &[]).expect("non-empty view")]
}

/// Split of `view ∖ {w}` by the chosen central vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSplit {
    pub w: usize,
    /// `(neighbor of w, component containing it)`.
    pub parts: Vec<(usize, Vec<usize>)>,
}

/// Orders `view ∖ {w}` by decreasing closeness to `w` and assigns each vertex
/// to the first known neighbor it is not separated from.
pub fn split_at<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    w: usize,
    oracle: &O,
    pred: &SeparationPredicate,
) -> TreeSplit {
    let sigma_ww = oracle.query(w, w);
    let mut order: Vec<(f64, usize)> = view
        .iter()
        .filter(|&&u| u != w)
        .map(|&u| (pred.closeness(oracle, u, w, sigma_ww), u))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut parts: Vec<(usize, Vec<usize>)> = Vec::new();
    for (_, u) in order {
        match parts.iter_mut().find(|(v, _)| !pred.separates_given(oracle, w, sigma_ww, u, *v)) {
            Some((_, members)) => members.push(u),
            None => parts.push((u, vec![u])),
        }
    }
    TreeSplit { w, parts }
}

/// One centrality pick followed by [`split_at`].
pub fn components_tree<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    oracle: &O,
    kappa: usize,
    pred: &SeparationPredicate,
    rng: &mut ChaCha8Rng,
) -> TreeSplit {
    let w = if view.len() <= 3 {
        view[0]
    } else {
        s_central(view, oracle, kappa, pred, rng)
    };
    split_at(view, w, oracle, pred)
}

/// Recovered edge set plus recursion bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeRecovery {
    pub edges: Vec<(usize, usize)>,
    pub max_depth: usize,
    pub central_calls: usize,
}

pub(crate) fn depth_limit(n: usize) -> usize {
    4 * (n.max(2) as f64).log2().ceil() as usize + 64
}

/// Recovers the edges of a tree-structured concentration graph.
pub fn reconstruct_tree<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    cfg: &CentralityConfig,
    pred: &SeparationPredicate,
) -> Result<TreeRecovery> {
    reconstruct_tree_observed(oracle, cfg, pred, &mut NoObserver)
}

pub fn reconstruct_tree_observed<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    cfg: &CentralityConfig,
    pred: &SeparationPredicate,
    observer: &mut dyn RecoveryObserver,
) -> Result<TreeRecovery> {
    let n = oracle.dim();
    let limit = depth_limit(n);
    let mut edges = BTreeSet::new();
    let mut out = TreeRecovery::default();
    let mut stack: Vec<(Vec<usize>, usize, u64)> = vec![((0..n).collect(), 0, derive_seed(cfg.seed, "tree-root", 0))];
    while let Some((view, depth, seed)) = stack.pop() {
        if view.len() < 2 {
            continue;
        }
        if depth > limit {
            return Err(Error::DepthExceeded {
                depth,
                limit,
                context: format!("tree recursion on a view of {} vertices", view.len()),
            });
        }
        out.max_depth = out.max_depth.max(depth);
        let mut rng = rng_from(seed);
        let split = components_tree(&view, oracle, cfg.kappa, pred, &mut rng);
        if view.len() > 3 {
            out.central_calls += 1;
            observer.on_central(&view, split.w);
        }
        for (v, part) in split.parts {
            edges.insert((v.min(split.w), v.max(split.w)));
            stack.push((part, depth + 1, derive_seed(seed, "tree-child", v as u64)));
        }
    }
    out.edges = edges.into_iter().collect();
    Ok(out)
}
