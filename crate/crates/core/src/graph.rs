//! Undirected simple graphs on dense vertex ids `0..n`, plus the exact
//! combinatorial oracles (components, centrality, minimum separators, block
//! structure) that generators and tests use as ground truth.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl Graph {
    /// Graph on `n` isolated vertices.
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: vec![Vec::new(); n],
            edge_count: 0,
        }
    }

    /// Builds a graph from an edge list, rejecting self-loops, duplicates and
    /// out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::OutOfRange {
                    index: u.max(v),
                    dim: n,
                });
            }
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop at vertex {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for (v, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput(format!(
                    "duplicate edge {{{v}, {}}}",
                    w[0]
                )));
            }
        }
        Ok(Graph {
            adjacency,
            edge_count: edges.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n() && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.n() <= 1 || connected_components(self, &[]).components.len() == 1
    }

    pub fn is_tree(&self) -> bool {
        self.n() >= 1 && self.edge_count + 1 == self.n() && self.is_connected()
    }

    /// Breadth-first distances from `source`; unreachable vertices get `usize::MAX`.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Diameter of a connected graph (exact, one BFS per vertex; two for trees).
    pub fn diameter(&self) -> usize {
        if self.n() <= 1 {
            return 0;
        }
        if self.is_tree() {
            let d0 = self.bfs_distances(0);
            let far = argmax(&d0);
            let d1 = self.bfs_distances(far);
            return d1.into_iter().max().unwrap_or(0);
        }
        (0..self.n())
            .map(|s| {
                self.bfs_distances(s)
                    .into_iter()
                    .filter(|&d| d != usize::MAX)
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Parses the text format: a header line `n m`, then `m` lines `u v`.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse("graph", 1, "missing header"))?;
        let (n, m) = parse_pair(header).ok_or_else(|| Error::parse("graph", hline, "expected `n m`"))?;
        let mut edges = Vec::with_capacity(m);
        for (line, body) in lines {
            let (u, v) = parse_pair(body).ok_or_else(|| Error::parse("graph", line, "expected `u v`"))?;
            edges.push((u, v));
        }
        if edges.len() != m {
            return Err(Error::parse(
                "graph",
                hline,
                format!("header declares {m} edges, found {}", edges.len()),
            ));
        }
        Graph::from_edges(n, &edges)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n(), self.edge_count);
        for (u, v) in self.edges() {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

fn parse_pair(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

fn argmax(values: &[usize]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by_key(|(_, &d)| d)
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// A removed vertex set together with the connected components of what remains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSplit {
    pub separator: Vec<usize>,
    /// Each component sorted ascending; components ordered by smallest member.
    pub components: Vec<Vec<usize>>,
}

impl ComponentSplit {
    pub fn largest(&self) -> usize {
        self.components.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Connected components of `G \ removed`.
pub fn connected_components(g: &Graph, removed: &[usize]) -> ComponentSplit {
    let all: Vec<usize> = (0..g.n()).collect();
    components_within(g, &all, removed)
}

/// Connected components of the induced subgraph `G[view] \ removed`.
pub fn components_within(g: &Graph, view: &[usize], removed: &[usize]) -> ComponentSplit {
    // 0 = outside the view, 1 = unvisited, 2 = visited
    let mut state = vec![0u8; g.n()];
    for &v in view {
        state[v] = 1;
    }
    for &v in removed {
        state[v] = 0;
    }
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    let mut sorted_view = view.to_vec();
    sorted_view.sort_unstable();
    for &start in &sorted_view {
        if state[start] != 1 {
            continue;
        }
        state[start] = 2;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &w in g.neighbors(u) {
                if state[w] == 1 {
                    state[w] = 2;
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    let mut separator = removed.to_vec();
    separator.sort_unstable();
    separator.dedup();
    ComponentSplit {
        separator,
        components,
    }
}

/// Largest-component fraction `c` and sum-of-squares fraction `s` after
/// deleting a single vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralityValue {
    pub c: f64,
    pub s: f64,
}

/// Exact centrality of `v` in a connected graph with at least two vertices.
pub fn exact_centrality(g: &Graph, v: usize) -> CentralityValue {
    let all: Vec<usize> = (0..g.n()).collect();
    centrality_within(g, &all, v)
}

/// Centrality of `v` inside the induced subgraph `G[view]`.
pub fn centrality_within(g: &Graph, view: &[usize], v: usize) -> CentralityValue {
    let rest = (view.len() - 1) as f64;
    let split = components_within(g, view, &[v]);
    let largest = split.largest() as f64;
    let squares: f64 = split.components.iter().map(|c| (c.len() as f64).powi(2)).sum();
    CentralityValue {
        c: largest / rest,
        s: squares / (rest * rest),
    }
}

/// `c(S)`: largest component of `G \ S` as a fraction of `|V \ S|`.
pub fn exact_set_centrality(g: &Graph, s: &[usize]) -> f64 {
    let all: Vec<usize> = (0..g.n()).collect();
    set_centrality_within(g, &all, s)
}

pub fn set_centrality_within(g: &Graph, view: &[usize], s: &[usize]) -> f64 {
    let split = components_within(g, view, s);
    let remaining: usize = split.components.iter().map(Vec::len).sum();
    if remaining == 0 {
        return 0.0;
    }
    split.largest() as f64 / remaining as f64
}

/// True when every path from `a` to `b` meets `s` (vertices of `a`, `b` in `s` count as met).
pub fn separates(g: &Graph, s: &[usize], a: &[usize], b: &[usize]) -> bool {
    let mut blocked = vec![false; g.n()];
    for &v in s {
        blocked[v] = true;
    }
    let mut target = vec![false; g.n()];
    for &v in b {
        if !blocked[v] {
            target[v] = true;
        }
    }
    let mut seen = blocked.clone();
    let mut queue = VecDeque::new();
    for &v in a {
        if !seen[v] {
            seen[v] = true;
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        if target[u] {
            return false;
        }
        for &w in g.neighbors(u) {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    true
}

/// A minimum-cardinality vertex set separating `a` from `b`.
///
/// Exhaustive subset search for `n <= 16`, unit-capacity vertex-split max-flow
/// otherwise. `a ∩ b` is always part of the answer.
pub fn min_vertex_separator(g: &Graph, a: &[usize], b: &[usize]) -> Vec<usize> {
    if g.n() <= 16 {
        min_vertex_separator_exhaustive(g, a, b)
    } else {
        min_vertex_separator_flow(g, a, b)
    }
}

fn split_intersection(a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut common: Vec<usize> = a.iter().copied().filter(|v| b.contains(v)).collect();
    common.sort_unstable();
    common.dedup();
    let only_a = a.iter().copied().filter(|v| !common.contains(v)).collect();
    let only_b = b.iter().copied().filter(|v| !common.contains(v)).collect();
    (common, only_a, only_b)
}

pub fn min_vertex_separator_exhaustive(g: &Graph, a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = g.n();
    assert!(n <= 24, "exhaustive separator search is for tiny graphs");
    let (common, _, _) = split_intersection(a, b);
    let free: Vec<usize> = (0..n).filter(|v| !common.contains(v)).collect();
    for size in 0..=free.len() {
        let mut found = None;
        for_each_subset(&free, size, &mut |subset| {
            let mut s = common.clone();
            s.extend_from_slice(subset);
            if separates(g, &s, a, b) {
                s.sort_unstable();
                found = Some(s);
                true
            } else {
                false
            }
        });
        if let Some(s) = found {
            return s;
        }
    }
    unreachable!("the full vertex set always separates")
}

/// Calls `f` on every `size`-subset of `items`, stopping early when `f` returns true.
fn for_each_subset(items: &[usize], size: usize, f: &mut dyn FnMut(&[usize]) -> bool) {
    fn rec(
        items: &[usize],
        size: usize,
        start: usize,
        buf: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if buf.len() == size {
            return f(buf);
        }
        let need = size - buf.len();
        for i in start..=items.len().saturating_sub(need) {
            if items.len() < need {
                break;
            }
            buf.push(items[i]);
            if rec(items, size, i + 1, buf, f) {
                return true;
            }
            buf.pop();
        }
        false
    }
    let mut buf = Vec::with_capacity(size);
    rec(items, size, 0, &mut buf, f);
}

pub fn min_vertex_separator_flow(g: &Graph, a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = g.n();
    let (common, only_a, only_b) = split_intersection(a, b);
    if only_a.is_empty() || only_b.is_empty() {
        return common;
    }
    const INF: i32 = i32::MAX / 4;
    let source = 2 * n;
    let sink = 2 * n + 1;
    let mut net = FlowNetwork::new(2 * n + 2);
    let mut removed = vec![false; n];
    for &v in &common {
        removed[v] = true;
    }
    for v in 0..n {
        if removed[v] {
            continue;
        }
        net.add_edge(2 * v, 2 * v + 1, 1);
        for &w in g.neighbors(v) {
            if !removed[w] {
                net.add_edge(2 * v + 1, 2 * w, INF);
            }
        }
    }
    for &v in &only_a {
        net.add_edge(source, 2 * v, INF);
    }
    for &v in &only_b {
        net.add_edge(2 * v + 1, sink, INF);
    }
    net.max_flow(source, sink);
    let reach = net.residual_reachable(source);
    let mut cut = common;
    cut.extend((0..n).filter(|&v| !removed[v] && reach[2 * v] && !reach[2 * v + 1]));
    cut.sort_unstable();
    cut
}

struct FlowNetwork {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        FlowNetwork {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: i32) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0i64;
        let nodes = self.head.len();
        loop {
            let mut parent_edge = vec![usize::MAX; nodes];
            let mut seen = vec![false; nodes];
            let mut queue = VecDeque::new();
            seen[s] = true;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && !seen[v] {
                        seen[v] = true;
                        parent_edge[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut bottleneck = i32::MAX;
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.to[e ^ 1];
            }
            total += i64::from(bottleneck);
        }
    }

    fn residual_reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        let mut queue = VecDeque::new();
        seen[s] = true;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > 0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Block (2-connected component) structure of a connected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCutStats {
    /// Vertex count of the largest block.
    pub max_block_size: usize,
    /// Maximum degree over the block-cut tree (blocks and cut vertices alike).
    pub max_bc_degree: usize,
    pub blocks: Vec<Vec<usize>>,
    pub cut_vertices: Vec<usize>,
}

/// Biconnected components via the lowpoint traversal. A bridge is a block of size 2.
pub fn block_cut_stats(g: &Graph) -> BlockCutStats {
    let n = g.n();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    let mut edge_stack: Vec<(usize, usize)> = Vec::new();
    let mut blocks: Vec<Vec<usize>> = Vec::new();

    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        if g.degree(root) == 0 {
            blocks.push(vec![root]);
            continue;
        }
        // (vertex, parent, next neighbor index)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        while let Some(&mut (u, parent, ref mut next)) = stack.last_mut() {
            if *next < g.degree(u) {
                let w = g.neighbors(u)[*next];
                *next += 1;
                if w == parent {
                    continue;
                }
                if disc[w] == usize::MAX {
                    edge_stack.push((u, w));
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, u, 0));
                } else if disc[w] < disc[u] {
                    edge_stack.push((u, w));
                    low[u] = low[u].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] >= disc[p] {
                        let mut block = Vec::new();
                        while let Some((x, y)) = edge_stack.pop() {
                            block.push(x);
                            block.push(y);
                            if (x, y) == (p, u) {
                                break;
                            }
                        }
                        block.sort_unstable();
                        block.dedup();
                        blocks.push(block);
                    }
                }
            }
        }
    }

    let mut membership = vec![0usize; n];
    for block in &blocks {
        for &v in block {
            membership[v] += 1;
        }
    }
    let cut_vertices: Vec<usize> = (0..n).filter(|&v| membership[v] > 1).collect();
    let block_deg = blocks
        .iter()
        .map(|b| b.iter().filter(|&&v| membership[v] > 1).count())
        .max()
        .unwrap_or(0);
    let cut_deg = membership.iter().copied().max().unwrap_or(0);
    let max_bc_degree = if cut_vertices.is_empty() {
        0
    } else {
        block_deg.max(cut_deg)
    };
    BlockCutStats {
        max_block_size: blocks.iter().map(Vec::len).max().unwrap_or(0),
        max_bc_degree,
        blocks,
        cut_vertices,
    }
}

/// Unique path between `u` and `v` in a tree, endpoints included.
pub fn tree_path(g: &Graph, u: usize, v: usize) -> Vec<usize> {
    let mut parent = vec![usize::MAX; g.n()];
    let mut queue = VecDeque::new();
    parent[u] = u;
    queue.push_back(u);
    while let Some(x) = queue.pop_front() {
        if x == v {
            break;
        }
        for &y in g.neighbors(x) {
            if parent[y] == usize::MAX {
                parent[y] = x;
                queue.push_back(y);
            }
        }
    }
    let mut path = vec![v];
    let mut x = v;
    while x != u {
        x = parent[x];
        path.push(x);
    }
    path.reverse();
    path
}
