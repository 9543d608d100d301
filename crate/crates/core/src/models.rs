//! Ground-truth instance generators: tree models, small-block graphs, partial
//! k-trees, and the two adversarial tree families.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{block_cut_stats, min_vertex_separator_flow, Graph};
use crate::linalg::{invert, singular_values, DenseMatrix};
use crate::oracle::{CovarianceOracle, DenseOracle, QueryStats, TreeModel, TreeOracle};
use crate::seed::{derive_seed, rng_from};
use crate::sparse::{dense_inverse, SparseSymmetric};

/// Largest `n` for which a dense `Σ` is materialized.
pub const MATERIALIZATION_CAP: usize = 5000;
/// Largest `n` for which the support of `Σ⁻¹` is re-derived at generation.
pub const SUPPORT_CHECK_CAP: usize = 300;
/// Largest `n` for which minors are screened for a generic gap.
pub const GAP_CHECK_CAP: usize = 10;
pub const MIN_GENERIC_GAP: f64 = 1e-6;
const GENERATOR_RESTARTS: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tree,
    SmallBlock,
    PartialKTree,
    AdversarialStar,
    AdversarialDary,
}

impl ModelKind {
    pub fn is_tree(self) -> bool {
        matches!(self, ModelKind::Tree | ModelKind::AdversarialStar | ModelKind::AdversarialDary)
    }
}

/// Sign convention for generated off-diagonal precision entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPolicy {
    #[default]
    Random,
    /// All off-diagonal precision entries negative.
    Attractive,
}

/// Generator parameters echoed into bundles and reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corr_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_keep_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub star_bit: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub star_pair: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_policy: Option<SignPolicy>,
}

/// Tree decomposition: bags plus the edges of the decomposition tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDecomposition {
    pub bags: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize)>,
}

impl TreeDecomposition {
    pub fn width(&self) -> usize {
        self.bags.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1)
    }

    /// Checks vertex coverage, edge coverage and the running-intersection property.
    pub fn is_valid_for(&self, g: &Graph) -> bool {
        let nb = self.bags.len();
        let Ok(tree) = Graph::from_edges(nb, &self.edges) else {
            return false;
        };
        if nb == 0 || !tree.is_tree() {
            return g.n() == 0;
        }
        let mut holders: Vec<Vec<usize>> = vec![Vec::new(); g.n()];
        for (bi, bag) in self.bags.iter().enumerate() {
            for &v in bag {
                if v >= g.n() {
                    return false;
                }
                holders[v].push(bi);
            }
        }
        if holders.iter().any(Vec::is_empty) {
            return false;
        }
        for (u, v) in g.edges() {
            if !holders[u].iter().any(|b| self.bags[*b].contains(&v)) {
                return false;
            }
        }
        let all: Vec<usize> = (0..nb).collect();
        holders.iter().all(|hs| {
            let removed: Vec<usize> = all.iter().copied().filter(|b| !hs.contains(b)).collect();
            crate::graph::components_within(&tree, &all, &removed).components.len() == 1
        })
    }

    fn relabel(&mut self, perm: &[usize]) {
        for bag in &mut self.bags {
            for v in bag.iter_mut() {
                *v = perm[*v];
            }
            bag.sort_unstable();
        }
    }
}

/// A generated ground-truth instance.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub kind: ModelKind,
    pub graph: Graph,
    pub seed: u64,
    pub params: ModelParams,
    /// Edge correlations, for tree-structured kinds.
    pub tree: Option<TreeModel>,
    /// True precision matrix; its off-diagonal support is the edge set.
    pub precision: SparseSymmetric,
    /// Materialized covariance for the non-tree kinds.
    pub sigma: Option<Arc<DenseOracle>>,
    pub certificate: Option<TreeDecomposition>,
}

/// Oracle view of an instance.
#[derive(Debug, Clone)]
pub enum ModelOracle {
    Tree(TreeOracle),
    Dense(Arc<DenseOracle>),
}

impl CovarianceOracle for ModelOracle {
    fn dim(&self) -> usize {
        match self {
            ModelOracle::Tree(t) => t.dim(),
            ModelOracle::Dense(d) => d.dim(),
        }
    }

    #[inline]
    fn query(&self, i: usize, j: usize) -> f64 {
        match self {
            ModelOracle::Tree(t) => t.query(i, j),
            ModelOracle::Dense(d) => d.query(i, j),
        }
    }

    fn stats(&self) -> Option<QueryStats> {
        None
    }
}

impl ModelInstance {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Explicit `Σ` when present, the lazy tree oracle otherwise.
    pub fn oracle(&self) -> Result<ModelOracle> {
        if let Some(s) = &self.sigma {
            return Ok(ModelOracle::Dense(Arc::clone(s)));
        }
        match &self.tree {
            Some(t) => Ok(ModelOracle::Tree(TreeOracle::new(t)?)),
            None => Err(Error::Infeasible(format!(
                "instance with n={} has no materialized covariance (cap {MATERIALIZATION_CAP})",
                self.n()
            ))),
        }
    }

    /// Dense `Σ`, materializing tree correlations when needed.
    pub fn dense_sigma(&self) -> Result<DenseMatrix> {
        if let Some(s) = &self.sigma {
            return Ok(s.matrix().clone());
        }
        let o = self.oracle()?;
        let n = self.n();
        Ok(DenseMatrix::from_fn(n, n, |i, j| o.query(i, j)))
    }

    /// Re-derives `support(Σ⁻¹)` by dense inversion and compares with the graph.
    pub fn check_support(&self) -> Result<()> {
        let sigma = self.dense_sigma()?;
        let k = invert(&sigma)?;
        let scale = k.max_abs();
        for i in 0..self.n() {
            for j in 0..i {
                let v = k[(i, j)].abs() / scale;
                let edge = self.graph.has_edge(i, j);
                if edge && v <= 1e-4 {
                    return Err(Error::RankInconsistency(format!(
                        "edge ({j}, {i}) has precision {v:e} below the on-support floor"
                    )));
                }
                if !edge && v >= 1e-9 {
                    return Err(Error::RankInconsistency(format!(
                        "non-edge ({j}, {i}) has precision {v:e} above the off-support ceiling"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest relative gap `s_r / s_1` over screened minors `Σ_{A∪C, B∪C}`,
    /// where `r` is the minimum separator size; `0` if any minor has the wrong rank.
    pub fn generic_gap(&self) -> Result<f64> {
        let sigma = self.dense_sigma()?;
        Ok(screen_minors(&self.graph, &sigma))
    }
}

fn subsets_up_to(items: &[usize], max: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for &x in items {
        let extra: Vec<Vec<usize>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| {
                let mut t = s.clone();
                t.push(x);
                t
            })
            .collect();
        out.extend(extra);
    }
    out
}

fn screen_minors(g: &Graph, sigma: &DenseMatrix) -> f64 {
    let n = g.n();
    let all: Vec<usize> = (0..n).collect();
    let small: Vec<Vec<usize>> = subsets_up_to(&all, 2).into_iter().filter(|s| !s.is_empty()).collect();
    let mut worst: f64 = 1.0;
    for a in &small {
        for b in &small {
            if b.iter().any(|v| a.contains(v)) || a[0] > b[0] {
                continue;
            }
            for c in std::iter::once(None).chain((0..n).map(Some)) {
                let mut rows = a.clone();
                let mut cols = b.clone();
                if let Some(c) = c {
                    if a.contains(&c) || b.contains(&c) {
                        continue;
                    }
                    rows.push(c);
                    cols.push(c);
                }
                let r = min_vertex_separator_flow(g, &rows, &cols).len();
                let sv = singular_values(&sigma.select(&rows, &cols));
                let top = sv[0];
                if sv.get(r).is_some_and(|&s| s > 1e-10 * top) {
                    return 0.0;
                }
                if r > 0 {
                    worst = worst.min(sv[r - 1] / top);
                }
            }
        }
    }
    worst
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn validate_corr_range(lo: f64, hi: f64) -> Result<()> {
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "correlation range must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn draw_correlation(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let mag = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    random_sign(rng) * mag
}

/// Options for [`gen_tree_model`] beyond the required parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct TreeOptions {
    /// Attach new vertices only to vertices at depth below this bound.
    pub max_depth: Option<usize>,
    /// Keep insertion-order labels instead of permuting them.
    pub keep_labels: bool,
}

fn instance_from_tree(
    kind: ModelKind,
    model: TreeModel,
    seed: u64,
    params: ModelParams,
) -> Result<ModelInstance> {
    let graph = model.graph()?;
    let precision = SparseSymmetric::from_triplets(model.n, &model.precision_triplets())?;
    Ok(ModelInstance {
        kind,
        graph,
        seed,
        params,
        tree: Some(model),
        precision,
        sigma: None,
        certificate: None,
    })
}

/// Random recursive tree with maximum degree `d` and `|ρ|` uniform in `[lo, hi]`.
pub fn gen_tree_model(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<ModelInstance> {
    gen_tree_model_with(n, d, lo, hi, seed, TreeOptions::default())
}

pub fn gen_tree_model_with(
    n: usize,
    d: usize,
    lo: f64,
    hi: f64,
    seed: u64,
    opts: TreeOptions,
) -> Result<ModelInstance> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("tree needs n >= 2, got {n}")));
    }
    if d < 2 && n > 2 {
        return Err(Error::Infeasible(format!("max degree {d} cannot hold a tree on {n} vertices")));
    }
    validate_corr_range(lo, hi)?;
    let mut rng = rng_from(derive_seed(seed, "tree", 0));
    let mut degree = vec![0usize; n];
    let mut depth = vec![0usize; n];
    let depth_ok = |dep: usize| opts.max_depth.is_none_or(|m| dep < m);
    let mut open: Vec<usize> = vec![0];
    let mut edges = Vec::with_capacity(n - 1);
    for v in 1..n {
        if open.is_empty() {
            return Err(Error::Infeasible(format!(
                "no vertex can accept a child at size {v} (d={d}, max_depth={:?})",
                opts.max_depth
            )));
        }
        let slot = rng.random_range(0..open.len());
        let p = open[slot];
        degree[p] += 1;
        degree[v] = 1;
        depth[v] = depth[p] + 1;
        if degree[p] >= d {
            open.swap_remove(slot);
        }
        if degree[v] < d && depth_ok(depth[v]) {
            open.push(v);
        }
        edges.push((p, v, draw_correlation(&mut rng, lo, hi)));
    }
    let perm = if opts.keep_labels {
        (0..n).collect()
    } else {
        random_permutation(n, &mut rng)
    };
    let edges = edges.into_iter().map(|(u, v, r)| (perm[u], perm[v], r)).collect();
    let model = TreeModel::new(n, edges)?;
    let params = ModelParams {
        d: Some(d),
        corr_range: Some((lo, hi)),
        max_depth: opts.max_depth,
        root: Some(perm[0]),
        ..ModelParams::default()
    };
    let inst = instance_from_tree(ModelKind::Tree, model, seed, params)?;
    if n <= GAP_CHECK_CAP {
        ensure_gap(&inst)?;
    }
    Ok(inst)
}

fn ensure_gap(inst: &ModelInstance) -> Result<()> {
    let gap = inst.generic_gap()?;
    if gap < MIN_GENERIC_GAP {
        return Err(Error::RankInconsistency(format!(
            "generic gap {gap:e} below {MIN_GENERIC_GAP:e}"
        )));
    }
    Ok(())
}

/// Off-diagonal weights `|K_uv| ∈ [0.2, 1]` on edges, dominant diagonal `1 + Σ|K_uv|`.
pub fn generic_precision(g: &Graph, policy: SignPolicy, rng: &mut ChaCha8Rng) -> SparseSymmetric {
    let n = g.n();
    let mut k = SparseSymmetric::new(n);
    let mut diag = vec![1.0; n];
    for (u, v) in g.edges() {
        let mag = rng.random_range(0.2..=1.0);
        let sign = match policy {
            SignPolicy::Random => random_sign(rng),
            SignPolicy::Attractive => -1.0,
        };
        k.set(u, v, sign * mag);
        diag[u] += mag;
        diag[v] += mag;
    }
    for (i, d) in diag.into_iter().enumerate() {
        k.set(i, i, d);
    }
    k
}

fn dense_instance(
    kind: ModelKind,
    graph: Graph,
    seed: u64,
    params: ModelParams,
    certificate: Option<TreeDecomposition>,
    policy: SignPolicy,
) -> Result<ModelInstance> {
    let n = graph.n();
    for attempt in 0..GENERATOR_RESTARTS {
        let mut rng = rng_from(derive_seed(seed, "precision", attempt));
        let precision = generic_precision(&graph, policy, &mut rng);
        let sigma = if n <= MATERIALIZATION_CAP {
            Some(Arc::new(DenseOracle::new(dense_inverse(&precision)?)?))
        } else {
            None
        };
        let inst = ModelInstance {
            kind,
            graph: graph.clone(),
            seed,
            params: params.clone(),
            tree: None,
            precision,
            sigma,
            certificate: certificate.clone(),
        };
        if n <= SUPPORT_CHECK_CAP {
            inst.check_support()?;
        }
        if n <= GAP_CHECK_CAP && inst.generic_gap()? < MIN_GENERIC_GAP {
            log::debug!("resampling precision weights for n={n}, attempt {attempt}");
            continue;
        }
        return Ok(inst);
    }
    Err(Error::RetriesExhausted {
        attempts: GENERATOR_RESTARTS as usize,
        context: "no generic precision weights found".into(),
    })
}

/// Random 2-connected graph on `s` local vertices: a shuffled cycle plus chords.
fn random_block(s: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if s == 2 {
        return vec![(0, 1)];
    }
    let order = random_permutation(s, rng);
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for i in 0..s {
        let (a, b) = (order[i], order[(i + 1) % s]);
        edges.insert((a.min(b), a.max(b)));
    }
    for a in 0..s {
        for b in a + 1..s {
            if !edges.contains(&(a, b)) && rng.random_bool(0.3) {
                edges.insert((a, b));
            }
        }
    }
    let mut out: Vec<_> = edges.into_iter().collect();
    out.sort_unstable();
    out
}

/// Blocks of size at most `b` glued into a block tree of degree at most `d`.
pub fn gen_small_block_model(n: usize, b: usize, d: usize, seed: u64) -> Result<ModelInstance> {
    gen_small_block_model_with(n, b, d, seed, SignPolicy::default())
}

pub fn gen_small_block_model_with(
    n: usize,
    b: usize,
    d: usize,
    seed: u64,
    policy: SignPolicy,
) -> Result<ModelInstance> {
    if b < 2 || d < 2 {
        return Err(Error::Infeasible(format!("need b >= 2 and d >= 2, got b={b}, d={d}")));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("small-block graph needs n >= 2, got {n}")));
    }
    let mut rng = rng_from(derive_seed(seed, "small-block", 0));
    let mut blocks_of: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut block_cuts: Vec<usize> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();

    let first = rng.random_range(2..=b).min(n);
    for (x, y) in random_block(first, &mut rng) {
        edges.push((x, y));
    }
    blocks_of.extend((0..first).map(|_| vec![0]));
    block_cuts.push(0);
    let mut count = first;
    while count < n {
        let eligible: Vec<usize> = (0..count)
            .filter(|&v| {
                let bs = &blocks_of[v];
                bs.len() < d && (bs.len() > 1 || block_cuts[bs[0]] < d)
            })
            .collect();
        let v = *eligible.choose(&mut rng).expect("the newest block always has room");
        let s = rng.random_range(2..=b).min(n - count + 1);
        let id = block_cuts.len();
        if blocks_of[v].len() == 1 {
            block_cuts[blocks_of[v][0]] += 1;
        }
        blocks_of[v].push(id);
        block_cuts.push(1);
        // local vertex 0 is the attachment vertex
        let local: Vec<usize> = std::iter::once(v).chain(count..count + s - 1).collect();
        for (x, y) in random_block(s, &mut rng) {
            edges.push((local[x], local[y]));
        }
        blocks_of.extend((0..s - 1).map(|_| vec![id]));
        count += s - 1;
    }
    let perm = random_permutation(n, &mut rng);
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(x, y)| (perm[x], perm[y])).collect();
    let graph = Graph::from_edges(n, &edges)?;
    let stats = block_cut_stats(&graph);
    debug_assert!(stats.max_block_size <= b && stats.max_bc_degree <= d);
    let params = ModelParams {
        d: Some(d),
        b: Some(b),
        sign_policy: Some(policy),
        ..ModelParams::default()
    };
    dense_instance(ModelKind::SmallBlock, graph, seed, params, None, policy)
}

/// Random partial k-tree with maximum degree `d`, keeping each removable edge
/// with probability `edge_keep_prob`.
pub fn gen_partial_ktree_model(
    n: usize,
    k: usize,
    d: usize,
    edge_keep_prob: f64,
    seed: u64,
) -> Result<ModelInstance> {
    gen_partial_ktree_model_with(n, k, d, edge_keep_prob, seed, SignPolicy::default())
}

pub fn gen_partial_ktree_model_with(
    n: usize,
    k: usize,
    d: usize,
    edge_keep_prob: f64,
    seed: u64,
    policy: SignPolicy,
) -> Result<ModelInstance> {
    if k < 1 {
        return Err(Error::InvalidInput("treewidth k must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("partial k-tree needs n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&edge_keep_prob) {
        return Err(Error::InvalidInput(format!("edge_keep_prob {edge_keep_prob} outside [0, 1]")));
    }
    if n > k + 1 && d < k + 1 {
        return Err(Error::Infeasible(format!(
            "max degree {d} cannot grow a {k}-tree beyond {} vertices",
            k + 1
        )));
    }
    for attempt in 0..GENERATOR_RESTARTS {
        let mut rng = rng_from(derive_seed(seed, "ktree", attempt));
        if let Some((graph, cert)) = grow_partial_ktree(n, k, d, edge_keep_prob, &mut rng) {
            let params = ModelParams {
                d: Some(d),
                k: Some(k),
                edge_keep_prob: Some(edge_keep_prob),
                sign_policy: Some(policy),
                ..ModelParams::default()
            };
            return dense_instance(ModelKind::PartialKTree, graph, seed, params, Some(cert), policy);
        }
        log::debug!("k-tree growth hit the degree cap, restart {attempt}");
    }
    Err(Error::Infeasible(format!(
        "degree cap {d} blocked {k}-tree growth to n={n} in {GENERATOR_RESTARTS} restarts"
    )))
}

fn grow_partial_ktree(
    n: usize,
    k: usize,
    d: usize,
    keep: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(Graph, TreeDecomposition)> {
    let base = (k + 1).min(n);
    let mut degree = vec![0usize; n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..base {
        for b in a + 1..base {
            edges.push((a, b));
        }
        degree[a] = base - 1;
    }
    let protected = edges.len();
    let mut bags = vec![(0..base).collect::<Vec<_>>()];
    let mut bag_edges = Vec::new();
    // (k-clique, bag containing it)
    let mut cliques: Vec<(Vec<usize>, usize)> = Vec::new();
    if n > base {
        for skip in 0..base {
            cliques.push(((0..base).filter(|&x| x != skip).collect(), 0));
        }
    }
    for v in base..n {
        // weight each open clique by the product of its spare degrees
        let weights: Vec<f64> = cliques
            .iter()
            .map(|(q, _)| q.iter().map(|&u| d.saturating_sub(degree[u]) as f64).product())
            .collect();
        let c = WeightedIndex::new(&weights).ok()?.sample(rng);
        let (clique, parent_bag) = cliques[c].clone();
        for &u in &clique {
            edges.push((u, v));
            degree[u] += 1;
        }
        degree[v] = k;
        let bag_id = bags.len();
        let mut bag = clique.clone();
        bag.push(v);
        bags.push(bag);
        bag_edges.push((parent_bag, bag_id));
        for skip in 0..clique.len() {
            let mut q: Vec<usize> = clique.iter().copied().filter(|&x| x != clique[skip]).collect();
            q.push(v);
            cliques.push((q, bag_id));
        }
    }

    // random deletions that keep the graph connected; the seed clique stays
    let mut adjacency: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for &(a, b) in &edges {
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }
    let mut order: Vec<usize> = (protected..edges.len()).collect();
    order.shuffle(rng);
    for idx in order {
        if rng.random_bool(keep) {
            continue;
        }
        let (a, b) = edges[idx];
        adjacency[a].remove(&b);
        adjacency[b].remove(&a);
        if !reachable(&adjacency, a, b) {
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
    }
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (a, nbrs) in adjacency.iter().enumerate() {
        kept.extend(nbrs.iter().filter(|&&b| b > a).map(|&b| (a, b)));
    }
    let perm = random_permutation(n, rng);
    let kept: Vec<(usize, usize)> = kept.into_iter().map(|(a, b)| (perm[a], perm[b])).collect();
    let graph = Graph::from_edges(n, &kept).ok()?;
    let mut cert = TreeDecomposition {
        bags,
        edges: bag_edges,
    };
    cert.relabel(&perm);
    Some((graph, cert))
}

fn reachable(adjacency: &[HashSet<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(x) = stack.pop() {
        if x == to {
            return true;
        }
        for &y in &adjacency[x] {
            if !seen[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    false
}

/// Parameters of one adversarial star draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialStarSpec {
    pub n: usize,
    pub bernoulli_b: u8,
    /// `U_1..U_{n−1}`; `u[i - 1]` belongs to vertex `i`.
    pub u: Vec<f64>,
    pub i_idx: usize,
    pub j_idx: usize,
}

impl AdversarialStarSpec {
    fn u_of(&self, v: usize) -> f64 {
        self.u[v - 1]
    }

    /// `σ_ij` written out directly: `U_i` against vertex 0, `U_i U_j` between
    /// leaves, and `min(U_I, U_J) / max(U_I, U_J)` at `(I, J)` when the bit is set.
    pub fn entry(&self, bit: u8, i: usize, j: usize) -> f64 {
        let (i, j) = (i.min(j), i.max(j));
        let (a, b) = (self.i_idx.min(self.j_idx), self.i_idx.max(self.j_idx));
        match (i, j) {
            _ if i == j => 1.0,
            (0, j) => self.u_of(j),
            _ if bit == 1 && (i, j) == (a, b) => {
                let (x, y) = (self.u_of(i), self.u_of(j));
                x.min(y) / x.max(y)
            }
            _ => self.u_of(i) * self.u_of(j),
        }
    }

    fn tree(&self, bit: u8) -> Result<TreeModel> {
        let (i, j) = (self.i_idx, self.j_idx);
        // the vertex with the larger U sits in the middle of the 0–·–· path
        let (inner, outer) = if self.u_of(i) < self.u_of(j) { (j, i) } else { (i, j) };
        let edges = (1..self.n)
            .map(|v| {
                if bit == 1 && v == outer {
                    (inner, outer, self.u_of(outer) / self.u_of(inner))
                } else {
                    (0, v, self.u_of(v))
                }
            })
            .collect();
        TreeModel::new(self.n, edges)
    }
}

/// Star twins: the bit-0 star and the bit-1 variant differ only at entry `(I, J)`.
pub fn gen_adversarial_star(
    n: usize,
    seed: u64,
) -> Result<(AdversarialStarSpec, ModelInstance, ModelInstance)> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("adversarial star needs n >= 4, got {n}")));
    }
    let mut rng = rng_from(derive_seed(seed, "adversarial-star", 0));
    let u: Vec<f64> = (1..n)
        .map(|_| loop {
            let x: f64 = rng.random();
            if x > 0.0 && x < 1.0 {
                break x;
            }
        })
        .collect();
    let i_idx = rng.random_range(1..n);
    let j_idx = loop {
        let j = rng.random_range(1..n);
        if j != i_idx {
            break j;
        }
    };
    let spec = AdversarialStarSpec {
        n,
        bernoulli_b: rng.random_range(0..=1),
        u,
        i_idx,
        j_idx,
    };
    let make = |bit: u8| -> Result<ModelInstance> {
        let params = ModelParams {
            star_bit: Some(bit),
            star_pair: Some((i_idx, j_idx)),
            root: Some(0),
            ..ModelParams::default()
        };
        let mut inst = instance_from_tree(ModelKind::AdversarialStar, spec.tree(bit)?, seed, params)?;
        if n <= MATERIALIZATION_CAP {
            let sigma = DenseMatrix::from_fn(n, n, |a, b| spec.entry(bit, a, b));
            inst.sigma = Some(Arc::new(DenseOracle::new(sigma)?));
        }
        Ok(inst)
    };
    let b0 = make(0)?;
    let b1 = make(1)?;
    Ok((spec, b0, b1))
}

/// Re-attaches leaf `leaf` of bottom branch `branch` under its sibling `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafMove {
    pub branch: usize,
    pub leaf: usize,
    pub target: usize,
}

/// The move sets drawn in the ternary figure: none, one, and two branches modified.
pub fn canonical_dary_moves(which: usize) -> Vec<LeafMove> {
    match which {
        0 => Vec::new(),
        1 => vec![LeafMove { branch: 1, leaf: 0, target: 1 }],
        _ => vec![
            LeafMove { branch: 1, leaf: 2, target: 0 },
            LeafMove { branch: 2, leaf: 2, target: 0 },
        ],
    }
}

/// Complete `d`-ary tree of height `h` with bottom-level leaf moves. `moves =
/// None` draws at most one random move per bottom branch.
pub fn gen_adversarial_dary(
    d: usize,
    h: usize,
    moves: Option<&[LeafMove]>,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<ModelInstance> {
    if d < 2 || h < 1 {
        return Err(Error::InvalidInput(format!("need d >= 2 and h >= 1, got d={d}, h={h}")));
    }
    validate_corr_range(lo, hi)?;
    let n = (d.pow(h as u32 + 1) - 1) / (d - 1);
    if n > 1 << 22 {
        return Err(Error::Infeasible(format!("d-ary tree with {n} vertices exceeds the size budget")));
    }
    let mut rng = rng_from(derive_seed(seed, "adversarial-dary", 0));
    let first_branch = (d.pow(h as u32 - 1) - 1) / (d - 1);
    let branches = d.pow(h as u32 - 1);
    let chosen: Vec<LeafMove> = match moves {
        Some(m) => m.to_vec(),
        None => {
            let mut out = Vec::new();
            for branch in 0..branches {
                if rng.random_bool(0.5) {
                    let leaf = rng.random_range(0..d);
                    let target = (leaf + rng.random_range(1..d)) % d;
                    out.push(LeafMove { branch, leaf, target });
                }
            }
            out
        }
    };
    let mut parent: Vec<usize> = (0..n).map(|v| if v == 0 { 0 } else { (v - 1) / d }).collect();
    let mut used = HashSet::new();
    for m in &chosen {
        if m.branch >= branches || m.leaf >= d || m.target >= d || m.leaf == m.target {
            return Err(Error::InvalidInput(format!("invalid leaf move {m:?}")));
        }
        if !used.insert(m.branch) {
            return Err(Error::InvalidInput(format!("branch {} moved twice", m.branch)));
        }
        let p = first_branch + m.branch;
        let leaf = d * p + 1 + m.leaf;
        let target = d * p + 1 + m.target;
        if parent[target] != p {
            return Err(Error::InvalidInput(format!("target of {m:?} was already moved")));
        }
        parent[leaf] = target;
    }
    let perm = random_permutation(n, &mut rng);
    let edges: Vec<(usize, usize, f64)> = (1..n)
        .map(|v| (perm[parent[v]], perm[v], draw_correlation(&mut rng, lo, hi)))
        .collect();
    let model = TreeModel::new(n, edges)?;
    let params = ModelParams {
        d: Some(d),
        height: Some(h),
        corr_range: Some((lo, hi)),
        root: Some(perm[0]),
        ..ModelParams::default()
    };
    instance_from_tree(ModelKind::AdversarialDary, model, seed, params)
}

/// The four-cycle 1–2–3–4–1 with its covariance and precision, relabeled to 0..4.
pub fn four_cycle_example() -> ModelInstance {
    let graph = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).expect("valid cycle");
    let sigma = DenseMatrix::from_rows(&[
        vec![7.0, -2.0, 1.0, -2.0],
        vec![-2.0, 7.0, -2.0, 1.0],
        vec![1.0, -2.0, 7.0, -2.0],
        vec![-2.0, 1.0, -2.0, 7.0],
    ]);
    let triplets: Vec<(usize, usize, f64)> = [
        (0, 0, 4.0),
        (0, 1, 1.0),
        (0, 3, 1.0),
        (1, 1, 4.0),
        (1, 2, 1.0),
        (2, 2, 4.0),
        (2, 3, 1.0),
        (3, 3, 4.0),
    ]
    .iter()
    .map(|&(i, j, v)| (i, j, v / 24.0))
    .collect();
    ModelInstance {
        kind: ModelKind::SmallBlock,
        graph,
        seed: 0,
        params: ModelParams {
            b: Some(4),
            d: Some(1),
            ..ModelParams::default()
        },
        tree: None,
        precision: SparseSymmetric::from_triplets(4, &triplets).expect("in range"),
        sigma: Some(Arc::new(DenseOracle::new(sigma).expect("valid covariance"))),
        certificate: None,
    }
}
