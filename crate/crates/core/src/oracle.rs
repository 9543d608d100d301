//! Covariance oracles: the only channel through which recovery algorithms see
//! the data. Backends answer single entries `σ_ij`; [`QueryCounter`] wraps any
//! of them with raw and distinct query accounting.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::DenseMatrix;
use crate::seed::{pair_seed, rng_from, splitmix64, unit_open};

/// Single-entry covariance oracle.
pub trait CovarianceOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Entry `σ_ij`. Indices must be in range.
    fn query(&self, i: usize, j: usize) -> f64;

    fn checked_query(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.dim();
        if i >= n || j >= n {
            return Err(Error::OutOfRange {
                index: i.max(j),
                dim: n,
            });
        }
        Ok(self.query(i, j))
    }

    /// Accounting, for wrappers that keep it.
    fn stats(&self) -> Option<QueryStats> {
        None
    }
}

impl<T: CovarianceOracle + ?Sized> CovarianceOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn query(&self, i: usize, j: usize) -> f64 {
        (**self).query(i, j)
    }
    fn stats(&self) -> Option<QueryStats> {
        (**self).stats()
    }
}

impl<T: CovarianceOracle + ?Sized> CovarianceOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn query(&self, i: usize, j: usize) -> f64 {
        (**self).query(i, j)
    }
    fn stats(&self) -> Option<QueryStats> {
        (**self).stats()
    }
}

impl<T: CovarianceOracle + ?Sized> CovarianceOracle for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn query(&self, i: usize, j: usize) -> f64 {
        (**self).query(i, j)
    }
    fn stats(&self) -> Option<QueryStats> {
        (**self).stats()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryStats {
    pub raw_queries: u64,
    pub distinct_queries: u64,
    #[serde(with = "duration_ms")]
    pub wall_time: Duration,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// Exact oracle over an explicit matrix.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    sigma: DenseMatrix,
}

impl DenseOracle {
    /// Accepts a finite symmetric matrix with positive diagonal.
    pub fn new(sigma: DenseMatrix) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::InvalidInput("covariance must be square".into()));
        }
        if !sigma.is_finite() {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        let n = sigma.rows();
        let scale = sigma.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            if !(sigma[(i, i)] > 0.0) {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DenseOracle { sigma })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.sigma
    }
}

impl CovarianceOracle for DenseOracle {
    fn dim(&self) -> usize {
        self.sigma.rows()
    }

    #[inline]
    fn query(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }
}

/// A tree with one correlation per edge. Edges are stored as `(u, v, ρ_uv)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct TreeModelFile {
    #[serde(rename = "type")]
    kind: String,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl TreeModel {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let model = TreeModel { n, edges };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&(u, v, r)) = self.edges.iter().find(|e| !(e.2.abs() > 0.0 && e.2.abs() < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "edge ({u}, {v}) has correlation {r} outside (-1, 1) \\ {{0}}"
            )));
        }
        if !self.graph()?.is_tree() {
            return Err(Error::InvalidInput("edge list is not a spanning tree".into()));
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<Graph> {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|&(u, v, _)| (u, v)).collect();
        Graph::from_edges(self.n, &pairs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TreeModelFile {
            kind: "tree".into(),
            n: self.n,
            edges: self.edges.clone(),
        })
        .expect("tree model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TreeModelFile = serde_json::from_str(text)?;
        if file.kind != "tree" {
            return Err(Error::InvalidInput(format!(
                "expected model type \"tree\", found {:?}",
                file.kind
            )));
        }
        TreeModel::new(file.n, file.edges)
    }

    /// Closed-form precision matrix of the unit-variance tree model, as
    /// `(i, j, value)` triplets with `i <= j`.
    pub fn precision_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut diag = vec![1.0; self.n];
        let mut out = Vec::with_capacity(self.n + self.edges.len());
        for &(u, v, r) in &self.edges {
            let q = 1.0 - r * r;
            diag[u] += r * r / q;
            diag[v] += r * r / q;
            out.push((u.min(v), u.max(v), -r / q));
        }
        out.extend(diag.into_iter().enumerate().map(|(i, d)| (i, i, d)));
        out.sort_by_key(|&(i, j, _)| (i, j));
        out
    }
}

const PRODUCT_LOG_FLOOR: f64 = -300.0;

/// Rooted view of a tree model: parents, depths, ancestor tables.
#[derive(Debug, Clone)]
struct RootedTree {
    parent: Vec<usize>,
    parent_rho: Vec<f64>,
    depth: Vec<u32>,
    /// `Σ ln|ρ|` along the root path.
    log_mag: Vec<f64>,
    /// Parity of negative edges along the root path.
    neg_parity: Vec<bool>,
    /// Signed root-path products and their inverse squares, when every
    /// product stays well inside the normal range.
    products: Option<(Vec<f64>, Vec<f64>)>,
    /// First occurrence of each vertex in the Euler tour.
    first: Vec<u32>,
    /// Sparse table over the Euler tour holding vertices of minimum depth.
    table: Vec<Vec<u32>>,
}

impl RootedTree {
    fn new(model: &TreeModel) -> Result<Self> {
        let n = model.n;
        if n == 0 {
            return Err(Error::InvalidInput("empty tree".into()));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, v, r) in &model.edges {
            if u >= n || v >= n {
                return Err(Error::OutOfRange { index: u.max(v), dim: n });
            }
            adj[u].push((v, r));
            adj[v].push((u, r));
        }
        let mut parent = vec![usize::MAX; n];
        let mut parent_rho = vec![1.0; n];
        let mut depth = vec![0u32; n];
        let mut log_mag = vec![0.0; n];
        let mut neg_parity = vec![false; n];
        let mut first = vec![0u32; n];
        let mut tour: Vec<u32> = Vec::with_capacity(2 * n);
        parent[0] = 0;
        // iterative DFS producing the Euler tour
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        first[0] = 0;
        tour.push(0);
        let mut visited = 1;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let (w, r) = adj[u][*next];
                *next += 1;
                if parent[w] != usize::MAX {
                    continue;
                }
                parent[w] = u;
                parent_rho[w] = r;
                depth[w] = depth[u] + 1;
                log_mag[w] = log_mag[u] + r.abs().ln();
                neg_parity[w] = neg_parity[u] ^ (r < 0.0);
                first[w] = tour.len() as u32;
                tour.push(w as u32);
                visited += 1;
                stack.push((w, 0));
            } else {
                stack.pop();
                if let Some(&(p, _)) = stack.last() {
                    tour.push(p as u32);
                }
            }
        }
        if visited != n {
            return Err(Error::InvalidInput("tree is disconnected".into()));
        }
        let mut table = vec![tour];
        let mut span = 1;
        while 2 * span <= table[0].len() {
            let prev = table.last().expect("nonempty");
            let next: Vec<u32> = (0..prev.len() - span)
                .map(|i| {
                    let (a, b) = (prev[i], prev[i + span]);
                    if depth[a as usize] <= depth[b as usize] {
                        a
                    } else {
                        b
                    }
                })
                .collect();
            table.push(next);
            span *= 2;
        }
        let products = (log_mag.iter().all(|&l| l > PRODUCT_LOG_FLOOR)).then(|| {
            let signed: Vec<f64> = log_mag
                .iter()
                .zip(&neg_parity)
                .map(|(&l, &neg)| if neg { -l.exp() } else { l.exp() })
                .collect();
            let inv_sq = signed.iter().map(|p| 1.0 / (p * p)).collect();
            (signed, inv_sq)
        });
        Ok(RootedTree {
            parent,
            parent_rho,
            depth,
            log_mag,
            neg_parity,
            products,
            first,
            table,
        })
    }

    #[inline]
    fn lca(&self, i: usize, j: usize) -> usize {
        let (mut a, mut b) = (self.first[i] as usize, self.first[j] as usize);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let len = b - a + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let row = &self.table[level];
        let (x, y) = (row[a], row[b + 1 - (1 << level)]);
        if self.depth[x as usize] <= self.depth[y as usize] {
            x as usize
        } else {
            y as usize
        }
    }

    #[inline]
    fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let l = self.lca(i, j);
        if let Some((p, inv_sq)) = &self.products {
            return (p[i] * p[j] * inv_sq[l]).clamp(-1.0, 1.0);
        }
        let mag = (self.log_mag[i] + self.log_mag[j] - 2.0 * self.log_mag[l]).exp();
        if self.neg_parity[i] ^ self.neg_parity[j] {
            -mag
        } else {
            mag
        }
    }

    /// Edge correlations on the paths from `i` and `j` up to their common ancestor.
    fn path_legs(&self, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.lca(i, j);
        let leg = |mut v: usize| {
            let mut out = Vec::new();
            while v != l {
                out.push(self.parent_rho[v]);
                v = self.parent[v];
            }
            out.reverse();
            out
        };
        (leg(i), leg(j))
    }
}

/// Unit-variance tree model answered lazily through the product formula.
#[derive(Debug, Clone)]
pub struct TreeOracle {
    rooted: RootedTree,
}

impl TreeOracle {
    pub fn new(model: &TreeModel) -> Result<Self> {
        model.validate()?;
        Ok(TreeOracle {
            rooted: RootedTree::new(model)?,
        })
    }

    pub fn lca(&self, i: usize, j: usize) -> usize {
        self.rooted.lca(i, j)
    }

    /// Path length between `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        let l = self.rooted.lca(i, j);
        (self.rooted.depth[i] + self.rooted.depth[j] - 2 * self.rooted.depth[l]) as usize
    }
}

impl CovarianceOracle for TreeOracle {
    fn dim(&self) -> usize {
        self.rooted.parent.len()
    }

    #[inline]
    fn query(&self, i: usize, j: usize) -> f64 {
        self.rooted.correlation(i, j)
    }
}

/// Entrywise noise parameters and the validity bounds that go with them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub epsilon: f64,
    pub mode: NoiseMode,
    pub delta_edge: f64,
    pub gamma_edge: f64,
    pub diameter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    AdversarialUniform,
    Sampled,
}

impl NoiseModel {
    /// Largest admissible ε: `δ^D (1 − γ²) / 8`.
    pub fn epsilon_bound(delta: f64, gamma: f64, diameter: usize) -> f64 {
        delta.powi(diameter as i32) * (1.0 - gamma * gamma) / 8.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.delta_edge && self.delta_edge < self.gamma_edge && self.gamma_edge < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < delta < gamma < 1, got delta={} gamma={}",
                self.delta_edge, self.gamma_edge
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidInput("epsilon must be non-negative".into()));
        }
        let bound = Self::epsilon_bound(self.delta_edge, self.gamma_edge, self.diameter);
        if self.epsilon > bound * (1.0 + 1e-12) {
            return Err(Error::Infeasible(format!(
                "epsilon {} exceeds the recovery bound {bound:.6e} for delta={}, gamma={}, D={}",
                self.epsilon, self.delta_edge, self.gamma_edge, self.diameter
            )));
        }
        Ok(())
    }
}

/// Frozen uniform noise in `(−ε, ε)` on every off-diagonal pair, clamped to `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct NoisyOracle<O> {
    base: O,
    epsilon: f64,
    seed: u64,
}

impl<O: CovarianceOracle> NoisyOracle<O> {
    pub fn new(base: O, epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("noise epsilon {epsilon} is invalid")));
        }
        Ok(NoisyOracle { base, epsilon, seed })
    }

    /// The frozen perturbation for the unordered pair `{i, j}`.
    pub fn noise(&self, i: usize, j: usize) -> f64 {
        self.epsilon * (2.0 * unit_open(pair_seed(self.seed, i, j)) - 1.0)
    }

    pub fn base(&self) -> &O {
        &self.base
    }
}

impl<O: CovarianceOracle> CovarianceOracle for NoisyOracle<O> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn query(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        if self.epsilon == 0.0 {
            return self.base.query(i, j);
        }
        (self.base.query(i, j) + self.noise(i, j)).clamp(-1.0, 1.0)
    }

    fn stats(&self) -> Option<QueryStats> {
        self.base.stats()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    /// Direct simulation while `N` is small, block-sum simulation above.
    #[default]
    Auto,
    /// Structural equation along the tree path, one draw per sample.
    Path,
    /// Exact in-distribution block sums from two χ² variates per block.
    BlockSums,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledOracleConfig {
    pub kappa4: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub blocks: usize,
    pub samples_per_pair: u64,
    pub method: SamplingMethod,
}

/// Largest `N` simulated sample by sample under [`SamplingMethod::Auto`].
const DIRECT_SAMPLE_LIMIT: u64 = 200_000;

impl SampledOracleConfig {
    /// Gaussian defaults at the sample bound `N = ⌈32 (κ4/ε)² ln(n/η)⌉`.
    pub fn at_bound(n: usize, epsilon: f64, eta: f64) -> Self {
        let kappa4 = 3.0;
        SampledOracleConfig {
            kappa4,
            eta,
            epsilon,
            blocks: Self::default_blocks(n, eta),
            samples_per_pair: Self::sample_bound(n, kappa4, epsilon, eta),
            method: SamplingMethod::Auto,
        }
    }

    pub fn default_blocks(n: usize, eta: f64) -> usize {
        ((8.0 * (n as f64 / eta).ln()).ceil() as usize).max(1)
    }

    pub fn sample_bound(n: usize, kappa4: f64, epsilon: f64, eta: f64) -> u64 {
        (32.0 * (kappa4 / epsilon).powi(2) * (n as f64 / eta).ln()).ceil() as u64
    }

    pub fn meets_bound(&self, n: usize) -> bool {
        self.samples_per_pair >= Self::sample_bound(n, self.kappa4, self.epsilon, self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.samples_per_pair < self.blocks as u64 {
            return Err(Error::InvalidInput(format!(
                "need at least one sample per block (N={}, blocks={})",
                self.samples_per_pair, self.blocks
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) || !(self.epsilon > 0.0) || !(self.kappa4 > 0.0) {
            return Err(Error::InvalidInput("sampled oracle needs eta in (0,1), epsilon > 0, kappa4 > 0".into()));
        }
        Ok(())
    }
}

/// Median-of-means covariance estimates from simulated Gaussian samples on a tree.
pub struct SampledOracle {
    rooted: RootedTree,
    cfg: SampledOracleConfig,
    seed: u64,
    cache: Mutex<HashMap<(u32, u32), f64>>,
}

impl SampledOracle {
    pub fn new(model: &TreeModel, cfg: SampledOracleConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        Ok(SampledOracle {
            rooted: RootedTree::new(model)?,
            cfg,
            seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SampledOracleConfig {
        &self.cfg
    }

    /// Estimate for `{i, j}` with an explicit method, bypassing the cache.
    pub fn estimate_with(&self, i: usize, j: usize, method: SamplingMethod) -> f64 {
        let mut rng = rng_from(pair_seed(self.seed, i, j));
        let blocks = self.cfg.blocks as u64;
        let n = self.cfg.samples_per_pair;
        let method = match method {
            SamplingMethod::Auto if n <= DIRECT_SAMPLE_LIMIT => SamplingMethod::Path,
            SamplingMethod::Auto => SamplingMethod::BlockSums,
            m => m,
        };
        let mut means = Vec::with_capacity(blocks as usize);
        match method {
            SamplingMethod::Path => {
                let (left, right) = self.rooted.path_legs(i, j);
                let walk = |x0: f64, leg: &[f64], rng: &mut rand_chacha::ChaCha8Rng| {
                    leg.iter().fold(x0, |x, &r| {
                        let z: f64 = StandardNormal.sample(rng);
                        r * x + (1.0 - r * r).sqrt() * z
                    })
                };
                for b in 0..blocks {
                    let size = block_size(n, blocks, b);
                    let mut sum = 0.0;
                    for _ in 0..size {
                        let root: f64 = StandardNormal.sample(&mut rng);
                        let xi = walk(root, &left, &mut rng);
                        let xj = walk(root, &right, &mut rng);
                        sum += xi * xj;
                    }
                    means.push(sum / size as f64);
                }
            }
            _ => {
                let rho = self.rooted.correlation(i, j);
                for b in 0..blocks {
                    let size = block_size(n, blocks, b);
                    let chi = Gamma::new(size as f64 / 2.0, 2.0).expect("positive shape");
                    let plus: f64 = chi.sample(&mut rng);
                    let minus: f64 = chi.sample(&mut rng);
                    // X_i X_j = ((X_i + X_j)² − (X_i − X_j)²) / 4
                    let sum = (2.0 * (1.0 + rho) * plus - 2.0 * (1.0 - rho) * minus) / 4.0;
                    means.push(sum / size as f64);
                }
            }
        }
        median(&mut means)
    }

    /// True correlation, for diagnostics.
    pub fn exact(&self, i: usize, j: usize) -> f64 {
        self.rooted.correlation(i, j)
    }
}

fn block_size(total: u64, blocks: u64, b: u64) -> u64 {
    total / blocks + u64::from(b < total % blocks)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

impl CovarianceOracle for SampledOracle {
    fn dim(&self) -> usize {
        self.rooted.parent.len()
    }

    fn query(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let key = (i.min(j) as u32, i.max(j) as u32);
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(&key) {
            return v;
        }
        let v = self.estimate_with(i, j, self.cfg.method).clamp(-1.0, 1.0);
        self.cache.lock().expect("cache poisoned").insert(key, v);
        v
    }
}

/// Upper-triangle bitset budget before switching to a hash set.
const BITSET_LIMIT_BITS: u128 = 1 << 32;
const SHARDS: usize = 64;

enum DistinctSet {
    Bits(Vec<AtomicU64>),
    Hashed(Vec<Mutex<HashSet<u64>>>),
}

/// Transparent wrapper recording raw and distinct query counts.
pub struct QueryCounter<O> {
    base: O,
    n: usize,
    raw: AtomicU64,
    distinct: AtomicU64,
    seen: DistinctSet,
    started: Instant,
}

impl<O: CovarianceOracle> QueryCounter<O> {
    pub fn new(base: O) -> Self {
        let n = base.dim();
        let bits = (n as u128) * (n as u128 + 1) / 2;
        let seen = if bits <= BITSET_LIMIT_BITS {
            let words = bits.div_ceil(64) as usize;
            DistinctSet::Bits((0..words).map(|_| AtomicU64::new(0)).collect())
        } else {
            DistinctSet::Hashed((0..SHARDS).map(|_| Mutex::new(HashSet::new())).collect())
        };
        QueryCounter {
            base,
            n,
            raw: AtomicU64::new(0),
            distinct: AtomicU64::new(0),
            seen,
            started: Instant::now(),
        }
    }

    pub fn inner(&self) -> &O {
        &self.base
    }

    pub fn into_inner(self) -> O {
        self.base
    }

    pub fn snapshot(&self) -> QueryStats {
        QueryStats {
            raw_queries: self.raw.load(Ordering::Relaxed),
            distinct_queries: self.distinct.load(Ordering::Relaxed),
            wall_time: self.started.elapsed(),
        }
    }

    #[inline]
    fn record(&self, i: usize, j: usize) {
        self.raw.fetch_add(1, Ordering::Relaxed);
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle index
        let (lo, hi) = (lo as u64, hi as u64);
        let idx = lo * self.n as u64 - (lo * lo - lo) / 2 + (hi - lo);
        let fresh = match &self.seen {
            DistinctSet::Bits(words) => {
                let mask = 1u64 << (idx % 64);
                words[(idx / 64) as usize].fetch_or(mask, Ordering::Relaxed) & mask == 0
            }
            DistinctSet::Hashed(shards) => {
                let shard = (splitmix64(idx) as usize) % SHARDS;
                shards[shard].lock().expect("shard poisoned").insert(idx)
            }
        };
        if fresh {
            self.distinct.fetch_add(1, Ordering::Relaxed);
        }
    }
}

impl<O: CovarianceOracle> CovarianceOracle for QueryCounter<O> {
    fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn query(&self, i: usize, j: usize) -> f64 {
        self.record(i, j);
        self.base.query(i, j)
    }

    fn stats(&self) -> Option<QueryStats> {
        Some(self.snapshot())
    }
}

const COVQ_MAGIC: &[u8; 5] = b"COVQ1";

/// Writes the binary dense format: magic, dimension (u64 LE), row-major f64 LE.
pub fn write_covq(path: &Path, sigma: &DenseMatrix) -> Result<()> {
    if !sigma.is_square() {
        return Err(Error::InvalidInput("covariance must be square".into()));
    }
    let mut buf = Vec::with_capacity(13 + 8 * sigma.data().len());
    buf.extend_from_slice(COVQ_MAGIC);
    buf.extend_from_slice(&(sigma.rows() as u64).to_le_bytes());
    for v in sigma.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_covq(path: &Path) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_covq(&bytes)
}

pub fn decode_covq(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 13 || &bytes[..5] != COVQ_MAGIC {
        return Err(Error::parse("covq", 0, "bad magic"));
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let expected = n
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(13))
        .ok_or_else(|| Error::parse("covq", 0, "dimension overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            "covq",
            0,
            format!("expected {expected} bytes for n={n}, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes[13..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DenseMatrix::from_row_slice(n, n, &values))
}
