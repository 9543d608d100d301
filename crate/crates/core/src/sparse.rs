//! Sparse symmetric matrices (true and estimated precision matrices) and the
//! extended-precision sparse factorization used to materialize `Σ = K⁻¹`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::DenseMatrix;

/// Symmetric matrix stored as its upper triangle, diagonal included.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSymmetric {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

/// Precision-matrix estimate assembled by recovery.
pub type PrecisionEstimate = SparseSymmetric;

#[inline]
fn key(i: usize, j: usize) -> (usize, usize) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

impl SparseSymmetric {
    pub fn new(n: usize) -> Self {
        SparseSymmetric {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = Self::new(n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::OutOfRange { index: i.max(j), dim: n });
            }
            m.set(i, j, v);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored upper-triangle entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&key(i, j)).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.contains_key(&key(i, j))
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries.insert(key(i, j), v);
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.entries.entry(key(i, j)).or_insert(0.0) += v;
    }

    /// Upper-triangle entries `(i, j, value)` with `i <= j`, ordered.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diagonal(&self) -> f64 {
        self.iter()
            .filter(|&(i, j, _)| i == j)
            .fold(0.0, |m, (_, _, v)| m.max(v.abs()))
    }

    /// Off-diagonal pairs with `|value| > threshold`.
    pub fn support_above(&self, threshold: f64) -> Vec<(usize, usize)> {
        self.iter()
            .filter(|&(i, j, v)| i != j && v.abs() > threshold)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    /// Support with the tolerance `rel_tol · max diagonal`.
    pub fn support(&self, rel_tol: f64) -> Vec<(usize, usize)> {
        self.support_above(rel_tol * self.max_diagonal())
    }

    pub fn support_graph(&self, rel_tol: f64) -> Result<Graph> {
        Graph::from_edges(self.n, &self.support(rel_tol))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `max |self − other|` over the union of both supports.
    pub fn max_abs_diff(&self, other: &SparseSymmetric) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.iter() {
            worst = worst.max((v - other.get(i, j)).abs());
        }
        for (i, j, v) in other.iter() {
            if !self.contains(i, j) {
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// Text format: header `n nnz`, then one `i j value` line per stored entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.nnz());
        for (i, j, v) in self.iter() {
            let _ = writeln!(out, "{i} {j} {v:e}");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse("precision", 1, "missing header"))?;
        let mut it = header.split_whitespace();
        let (n, nnz) = match (it.next().map(str::parse::<usize>), it.next().map(str::parse::<usize>)) {
            (Some(Ok(n)), Some(Ok(nnz))) => (n, nnz),
            _ => return Err(Error::parse("precision", hline, "expected `n nnz`")),
        };
        let mut m = Self::new(n);
        for (line, body) in lines {
            let mut it = body.split_whitespace();
            let parsed = (|| {
                let i: usize = it.next()?.parse().ok()?;
                let j: usize = it.next()?.parse().ok()?;
                let v: f64 = it.next()?.parse().ok()?;
                it.next().is_none().then_some((i, j, v))
            })();
            let (i, j, v) = parsed.ok_or_else(|| Error::parse("precision", line, "expected `i j value`"))?;
            if i >= n || j >= n {
                return Err(Error::parse("precision", line, format!("index out of range for n={n}")));
            }
            m.set(i, j, v);
        }
        if m.nnz() != nnz {
            return Err(Error::parse(
                "precision",
                hline,
                format!("header declares {nnz} entries, found {}", m.nnz()),
            ));
        }
        Ok(m)
    }
}

/// Greedy minimum-degree elimination order of the off-diagonal pattern.
fn minimum_degree_order(n: usize, adjacency: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = adjacency.to_vec();
    let mut done = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &nbrs {
            heap.push(Reverse((adj[a].len(), a)));
        }
    }
    order
}

/// Dense `K⁻¹` for a sparse positive-definite `K`.
///
/// Factorizes `K` under a minimum-degree ordering and solves for every column
/// in double-double arithmetic, so entries far below `‖Σ‖` keep their leading
/// digits.
pub fn dense_inverse(k: &SparseSymmetric) -> Result<DenseMatrix> {
    let n = k.dim();
    let mut adjacency = vec![BTreeSet::new(); n];
    for (i, j, _) in k.iter() {
        if i != j {
            adjacency[i].insert(j);
            adjacency[j].insert(i);
        }
    }
    let order = minimum_degree_order(n, &adjacency);
    let mut pos = vec![0usize; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }

    // lower triangle by column in permuted coordinates, right-looking
    let mut work: Vec<HashMap<usize, TwoFloat>> = vec![HashMap::new(); n];
    for (i, j, v) in k.iter() {
        let (pi, pj) = (pos[i], pos[j]);
        let (row, col) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        *work[col].entry(row).or_insert(TwoFloat::from(0.0)) += TwoFloat::from(v);
    }
    let mut diag = vec![TwoFloat::from(0.0); n];
    let mut cols: Vec<Vec<(usize, TwoFloat)>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut col = std::mem::take(&mut work[j]);
        let d = col.remove(&j).unwrap_or(TwoFloat::from(0.0));
        if !(d.hi() > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: order[j],
                value: d.hi(),
            });
        }
        let d = d.sqrt();
        diag[j] = d;
        let mut entries: Vec<(usize, TwoFloat)> = col.into_iter().map(|(i, v)| (i, v / d)).collect();
        entries.sort_by_key(|e| e.0);
        for (x, &(i, li)) in entries.iter().enumerate() {
            for &(r, lr) in &entries[x..] {
                *work[i].entry(r).or_insert(TwoFloat::from(0.0)) -= lr * li;
            }
        }
        cols.push(entries);
    }

    let mut sigma = DenseMatrix::zeros(n, n);
    let mut y = vec![TwoFloat::from(0.0); n];
    for p in 0..n {
        y.iter_mut().for_each(|v| *v = TwoFloat::from(0.0));
        y[p] = TwoFloat::from(1.0);
        for j in p..n {
            if y[j].hi() == 0.0 && y[j].lo() == 0.0 {
                continue;
            }
            y[j] /= diag[j];
            let yj = y[j];
            for &(i, l) in &cols[j] {
                y[i] -= l * yj;
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for &(i, l) in &cols[j] {
                s -= l * y[i];
            }
            y[j] = s / diag[j];
        }
        let orig = order[p];
        for q in 0..n {
            sigma[(order[q], orig)] = y[q].hi() + y[q].lo();
        }
    }
    Ok(sigma.symmetrized())
}
