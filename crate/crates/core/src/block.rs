//! Recovery of graphs whose blocks are small, by splitting at cut vertices
//! and inverting the leaves directly.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{invert, submatrix, RankConfig};
use crate::oracle::CovarianceOracle;
use crate::seed::{derive_seed, rng_from};
use crate::tree::{argmin_score, depth_limit, s_central_scores, NoObserver, RecoveryObserver, SeparationPredicate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockRecoveryConfig {
    /// Maximum degree of the block-cut tree.
    pub d: usize,
    /// Maximum block size.
    pub b: usize,
    pub kappa: usize,
    pub seed: u64,
    /// Extra central-vertex attempts on a view that does not split.
    pub max_retries: usize,
    #[serde(skip)]
    pub rank: RankConfig,
}

impl BlockRecoveryConfig {
    /// Uses `κ = ⌈32 d² ln(2dn/ε)⌉` for overall failure probability `ε`.
    pub fn for_failure_probability(n: usize, d: usize, b: usize, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(d, b, block_kappa(n, d, epsilon)?, seed)
    }

    pub fn new(d: usize, b: usize, kappa: usize, seed: u64) -> Result<Self> {
        if d == 0 || b == 0 || kappa == 0 {
            return Err(Error::InvalidInput(format!("need d, b, kappa >= 1, got {d}, {b}, {kappa}")));
        }
        Ok(BlockRecoveryConfig {
            d,
            b,
            kappa,
            seed,
            max_retries: 5,
            rank: RankConfig::default(),
        })
    }

    fn leaf_size(&self) -> usize {
        self.d.saturating_mul(self.b)
    }
}

pub fn block_kappa(n: usize, d: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("failure probability {epsilon} outside (0, 1)")));
    }
    let (n, d) = (n.max(2) as f64, d.max(1) as f64);
    Ok((32.0 * d * d * (2.0 * d * n / epsilon).ln()).ceil() as usize)
}

/// Parts `C ∪ {w}` around the chosen vertex `w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSplit {
    pub w: usize,
    pub parts: Vec<Vec<usize>>,
}

/// Groups `view ∖ {w}` by non-separation from `w` and adds `w` back to every group.
pub fn split_sb<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    w: usize,
    oracle: &O,
    pred: &SeparationPredicate,
) -> BlockSplit {
    let sigma_ww = oracle.query(w, w);
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &u in view.iter().filter(|&&u| u != w) {
        match groups.iter_mut().find(|(v, _)| !pred.separates_given(oracle, w, sigma_ww, u, *v)) {
            Some((_, members)) => members.push(u),
            None => groups.push((u, vec![u])),
        }
    }
    let parts = groups
        .into_iter()
        .map(|(_, mut g)| {
            g.push(w);
            g
        })
        .collect();
    BlockSplit { w, parts }
}

/// Central vertex (skipping `excluded`) followed by [`split_sb`].
pub fn components_sb<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    oracle: &O,
    kappa: usize,
    pred: &SeparationPredicate,
    excluded: &[usize],
    rng: &mut ChaCha8Rng,
) -> Option<BlockSplit> {
    let scores = s_central_scores(view, oracle, kappa, pred, rng);
    let w = view[argmin_score(view, &scores, excluded)?];
    Some(split_sb(view, w, oracle, pred))
}

/// Edges of the concentration graph of `Σ_view`, read off its inverse.
pub fn leaf_edges<O: CovarianceOracle + ?Sized>(
    view: &[usize],
    oracle: &O,
    rank: &RankConfig,
) -> Result<Vec<(usize, usize)>> {
    let k = invert(&submatrix(oracle, view, view)?)?;
    let scale = (0..view.len()).map(|i| k[(i, i)].abs()).fold(0.0, f64::max);
    let mut edges = Vec::new();
    for i in 0..view.len() {
        for j in 0..i {
            if k[(i, j)].abs() > rank.rel_tol * scale {
                let (a, b) = (view[i], view[j]);
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecovery {
    pub edges: Vec<(usize, usize)>,
    pub max_depth: usize,
    pub retries: usize,
    pub leaves: usize,
}

pub fn reconstruct_sb<O: CovarianceOracle + ?Sized>(oracle: &O, cfg: &BlockRecoveryConfig) -> Result<BlockRecovery> {
    reconstruct_sb_observed(oracle, cfg, &mut NoObserver)
}

pub fn reconstruct_sb_observed<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    cfg: &BlockRecoveryConfig,
    observer: &mut dyn RecoveryObserver,
) -> Result<BlockRecovery> {
    let n = oracle.dim();
    let pred = SeparationPredicate::Exact(cfg.rank);
    let limit = depth_limit(n);
    let mut edges = BTreeSet::new();
    let mut out = BlockRecovery::default();
    let mut stack: Vec<(Vec<usize>, usize, u64)> = vec![((0..n).collect(), 0, derive_seed(cfg.seed, "sb-root", 0))];
    while let Some((view, depth, seed)) = stack.pop() {
        if depth > limit {
            return Err(Error::DepthExceeded {
                depth,
                limit,
                context: format!("block recursion on a view of {} vertices", view.len()),
            });
        }
        out.max_depth = out.max_depth.max(depth);
        if view.len() <= cfg.leaf_size() {
            if view.len() >= 2 {
                let found = leaf_edges(&view, oracle, &cfg.rank)?;
                observer.on_leaf(&view, &found);
                edges.extend(found);
            }
            out.leaves += 1;
            continue;
        }
        let mut tried: Vec<usize> = Vec::new();
        let split = loop {
            let mut rng = rng_from(derive_seed(seed, "sb-attempt", tried.len() as u64));
            let split = components_sb(&view, oracle, cfg.kappa, &pred, &tried, &mut rng)
                .expect("retries stay below the view size");
            if split.parts.len() > 1 {
                break split;
            }
            tried.push(split.w);
            if tried.len() > cfg.max_retries || tried.len() == view.len() {
                return Err(Error::RetriesExhausted {
                    attempts: tried.len(),
                    context: format!("no cut vertex found in a view of {} vertices", view.len()),
                });
            }
            out.retries += 1;
        };
        observer.on_central(&view, split.w);
        for part in split.parts {
            let root = part[0];
            stack.push((part, depth + 1, derive_seed(seed, "sb-child", root as u64)));
        }
    }
    out.edges = edges.into_iter().collect();
    Ok(out)
}
