//! Undirected weighted graphs and piecewise-constant switching schedules.
//!
//! A [`WeightedGraph`] holds a symmetric, nonnegative weight matrix with an
//! empty diagonal; a link `(i, j)` exists iff `W[i][j] > 0`. A
//! [`GraphSchedule`] cycles through a list of graphs, each active for a fixed
//! dwell time. The network only needs to be connected in the union sense:
//! over every window the union of the active graphs must contain a spanning
//! tree, see [`GraphSchedule::check_uniform_connectivity`].

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Closed interval from which random link weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRange {
    pub lo: f64,
    pub hi: f64,
}

impl WeightRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::param(format!(
                "weight range [{lo}, {hi}] must satisfy 0 < lo <= hi"
            )));
        }
        Ok(Self { lo, hi })
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

impl Default for WeightRange {
    fn default() -> Self {
        Self { lo: 0.5, hi: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    weights: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Graph on `n` nodes with no links.
    pub fn empty(n: usize) -> Self {
        Self::from_raw_unchecked(n, vec![0.0; n * n])
    }

    /// Builds a graph from a row-major `n x n` weight matrix, validating
    /// symmetry, a zero diagonal and nonnegative finite entries.
    pub fn from_matrix(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::dim(format!(
                "weight matrix has {} entries, expected {}",
                weights.len(),
                n * n
            )));
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(Error::param(format!("nonzero self-loop weight at node {i}")));
            }
            for j in 0..n {
                let w = weights[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::param(format!("weight ({i},{j}) = {w} is not a finite nonnegative number")));
                }
                if w != weights[j * n + i] {
                    return Err(Error::param(format!("weight matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self::from_raw_unchecked(n, weights))
    }

    /// Builds a graph from undirected edges `(i, j, w)`; repeated edges add up.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut weights = vec![0.0; n * n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::dim(format!("edge ({i},{j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::param(format!("self-loop at node {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::param(format!("edge ({i},{j}) has invalid weight {w}")));
            }
            weights[i * n + j] += w;
            weights[j * n + i] += w;
        }
        Self::from_matrix(n, weights)
    }

    /// Skips every invariant check. Only meant for tests that need to feed
    /// the dynamics a deliberately broken (e.g. asymmetric) weight matrix.
    #[doc(hidden)]
    pub fn from_raw_unchecked(n: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), n * n, "weight matrix must be n x n");
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let w = weights[i * n + j];
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Self { n, weights, neighbors }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Row-major weight matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Positive-weight neighbors of node `i` as `(j, W_ij)`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Undirected links `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors[i]
                .iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Weighted degree `sum_j W_ij`.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, w)| w).sum()
    }

    /// True iff the positive-weight links connect all nodes.
    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == self.n
    }

    /// Serializes as a `# n=<n>` header followed by one `i j w` line per link.
    pub fn to_triples(&self) -> String {
        let mut out = format!("# n={}\n", self.n);
        for (i, j, w) in self.edges() {
            let _ = writeln!(out, "{i} {j} {w}");
        }
        out
    }

    /// Parses the triple format. Without a `# n=` header the node count is
    /// inferred from the largest index.
    pub fn parse_triples(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("n=") {
                    n = Some(v.trim().parse().map_err(|_| {
                        Error::param(format!("line {}: bad node count `{v}`", lineno + 1))
                    })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::param(format!(
                    "line {}: expected `i j w`, got `{line}`",
                    lineno + 1
                )));
            }
            let bad = || Error::param(format!("line {}: cannot parse `{line}`", lineno + 1));
            let i: usize = fields[0].parse().map_err(|_| bad())?;
            let j: usize = fields[1].parse().map_err(|_| bad())?;
            let w: f64 = fields[2].parse().map_err(|_| bad())?;
            edges.push((i, j, w));
        }
        let n = n.unwrap_or_else(|| {
            edges
                .iter()
                .map(|&(i, j, _)| i.max(j) + 1)
                .max()
                .unwrap_or(0)
        });
        Self::from_edges(n, &edges)
    }
}

/// Random graph where each unordered pair is linked independently with
/// probability `p`, with weights uniform in `range`.
pub fn build_erdos_renyi(n: usize, p: f64, range: WeightRange, seed: u64) -> Result<WeightedGraph> {
    if n < 2 {
        return Err(Error::param(format!("Erdos-Renyi graph needs n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("edge probability {p} outside [0, 1]")));
    }
    let range = WeightRange::new(range.lo, range.hi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                let w = range.sample(&mut rng);
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
    }
    Ok(WeightedGraph::from_raw_unchecked(n, weights))
}

/// Ring `0 - 1 - ... - (n-1) - 0` with random weights.
pub fn build_cycle(n: usize, range: WeightRange, seed: u64) -> Result<WeightedGraph> {
    if n < 3 {
        return Err(Error::param(format!("cycle graph needs n >= 3, got {n}")));
    }
    let range = WeightRange::new(range.lo, range.hi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<_> = (0..n)
        .map(|i| (i, (i + 1) % n, range.sample(&mut rng)))
        .collect();
    WeightedGraph::from_edges(n, &edges)
}

/// Entrywise sum of the weight matrices.
pub fn union_graph(graphs: &[WeightedGraph]) -> Result<WeightedGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::param("union of an empty list of graphs"))?;
    let n = first.n;
    let mut weights = vec![0.0; n * n];
    for g in graphs {
        if g.n != n {
            return Err(Error::dim(format!("graph with {} nodes in a union over {n} nodes", g.n)));
        }
        for (acc, w) in weights.iter_mut().zip(&g.weights) {
            *acc += w;
        }
    }
    Ok(WeightedGraph::from_raw_unchecked(n, weights))
}

/// Draws `count` Erdos-Renyi graphs whose union is connected, even though
/// each one alone usually is not. Retries with an advanced seed, at most
/// `max_attempts` times.
pub fn build_switching_erdos_renyi(
    n: usize,
    count: usize,
    p: f64,
    range: WeightRange,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<WeightedGraph>> {
    if count == 0 {
        return Err(Error::param("switching family needs at least one graph"));
    }
    for attempt in 0..max_attempts as u64 {
        let base = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let graphs = (0..count as u64)
            .map(|k| build_erdos_renyi(n, p, range, base.wrapping_add(k)))
            .collect::<Result<Vec<_>>>()?;
        if union_graph(&graphs)?.is_connected() {
            return Ok(graphs);
        }
    }
    Err(Error::param(format!(
        "no connected union of {count} Erdos-Renyi graphs (n = {n}, p = {p}) within {max_attempts} attempts"
    )))
}

/// Cyclic round-robin over a list of graphs, each active for `dwell` seconds.
/// `graph_at` is right-continuous: at `t = k * dwell` graph `k mod len` is
/// already active.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    graphs: Vec<WeightedGraph>,
    dwell: f64,
}

// Absorbs round-off when t is an exact multiple of the dwell time.
const SLOT_EPS: f64 = 1e-9;

impl GraphSchedule {
    pub fn new(graphs: Vec<WeightedGraph>, dwell: f64) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::param("schedule needs at least one graph"));
        }
        if !(dwell > 0.0) || !dwell.is_finite() {
            return Err(Error::param(format!("dwell time must be positive, got {dwell}")));
        }
        let n = graphs[0].n;
        if let Some(g) = graphs.iter().find(|g| g.n != n) {
            return Err(Error::dim(format!("schedule mixes graphs with {} and {} nodes", n, g.n)));
        }
        Ok(Self { graphs, dwell })
    }

    /// A single graph that never switches.
    pub fn constant(graph: WeightedGraph) -> Self {
        Self {
            graphs: vec![graph],
            dwell: f64::INFINITY,
        }
    }

    pub fn n(&self) -> usize {
        self.graphs[0].n
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn graphs(&self) -> &[WeightedGraph] {
        &self.graphs
    }

    pub fn graphs_mut(&mut self) -> &mut [WeightedGraph] {
        &mut self.graphs
    }

    /// Length of one full round-robin cycle.
    pub fn period(&self) -> f64 {
        self.dwell * self.graphs.len() as f64
    }

    pub fn index_at(&self, t: f64) -> usize {
        if !self.dwell.is_finite() || t <= 0.0 {
            return 0;
        }
        let slot = (t / self.dwell + SLOT_EPS).floor() as usize;
        slot % self.graphs.len()
    }

    pub fn graph_at(&self, t: f64) -> &WeightedGraph {
        &self.graphs[self.index_at(t)]
    }

    /// Checks that for every window-aligned interval `[k w, (k+1) w)` within
    /// one schedule period the union of active graphs is connected.
    pub fn check_uniform_connectivity(&self, window: f64) -> Result<bool> {
        if !self.dwell.is_finite() {
            return Ok(self.graphs[0].is_connected());
        }
        if !(window >= self.dwell * (1.0 - SLOT_EPS)) || !window.is_finite() {
            return Err(Error::param(format!(
                "window {window} is shorter than the dwell time {}",
                self.dwell
            )));
        }
        let m = self.graphs.len();
        let windows = ((self.period() / window) - SLOT_EPS).ceil().max(1.0) as usize;
        for k in 0..windows {
            let start = k as f64 * window;
            let end = start + window;
            let first = (start / self.dwell + SLOT_EPS).floor() as usize;
            let last = ((end / self.dwell - SLOT_EPS).ceil() as usize).max(first + 1);
            let active: Vec<WeightedGraph> = (first..last)
                .map(|s| self.graphs[s % m].clone())
                .collect();
            if !union_graph(&active)?.is_connected() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> WeightRange {
        WeightRange::new(1.0, 1.0).unwrap()
    }

    fn path(n: usize, edges: &[(usize, usize)]) -> WeightedGraph {
        let e: Vec<_> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        WeightedGraph::from_edges(n, &e).unwrap()
    }

    #[test]
    fn erdos_renyi_p_one_is_complete() {
        let g = build_erdos_renyi(3, 1.0, unit(), 42).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.weight(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn erdos_renyi_sparse_is_symmetric() {
        let g = build_erdos_renyi(100, 0.02, WeightRange::default(), 7).unwrap();
        for i in 0..100 {
            assert_eq!(g.weight(i, i), 0.0);
            for j in 0..100 {
                assert_eq!(g.weight(i, j), g.weight(j, i));
                let w = g.weight(i, j);
                assert!(w == 0.0 || (0.5..=1.0).contains(&w));
            }
        }
        assert!(WeightedGraph::from_matrix(100, g.weights().to_vec()).is_ok());
    }

    #[test]
    fn erdos_renyi_p_zero_is_empty() {
        let g = build_erdos_renyi(5, 0.0, unit(), 1).unwrap();
        assert!(g.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn erdos_renyi_rejects_bad_ranges() {
        assert!(build_erdos_renyi(5, 0.5, WeightRange { lo: 0.0, hi: 1.0 }, 1).is_err());
        assert!(build_erdos_renyi(5, 0.5, WeightRange { lo: 2.0, hi: 1.0 }, 1).is_err());
        assert!(build_erdos_renyi(5, 1.5, unit(), 1).is_err());
        assert!(build_erdos_renyi(1, 0.5, unit(), 1).is_err());
    }

    #[test]
    fn erdos_renyi_is_reproducible() {
        let a = build_erdos_renyi(30, 0.2, WeightRange::default(), 99).unwrap();
        let b = build_erdos_renyi(30, 0.2, WeightRange::default(), 99).unwrap();
        let bits = |g: &WeightedGraph| g.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = build_erdos_renyi(30, 0.2, WeightRange::default(), 100).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn cycle_triangle_and_degrees() {
        let g = build_cycle(3, unit(), 5).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!((0..3).all(|i| g.weighted_degree(i) == 2.0));

        let g = build_cycle(10, WeightRange::default(), 3).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert!((0..10).all(|i| g.neighbors(i).len() == 2));
    }

    #[test]
    fn cycle_four_has_exact_weights() {
        let g = build_cycle(4, WeightRange::new(2.0, 2.0).unwrap(), 0).unwrap();
        let expected = [(0, 1), (1, 2), (2, 3), (3, 0)];
        for i in 0..4 {
            for j in 0..4 {
                let linked = expected.contains(&(i, j)) || expected.contains(&(j, i));
                assert_eq!(g.weight(i, j), if linked { 2.0 } else { 0.0 });
            }
        }
        assert!(build_cycle(2, unit(), 0).is_err());
    }

    #[test]
    fn union_examples() {
        let a = path(3, &[(0, 1)]);
        let b = path(3, &[(1, 2)]);
        assert!(!a.is_connected());
        let u = union_graph(&[a.clone(), b]).unwrap();
        assert!(u.is_connected());
        assert_eq!(u.edge_count(), 2);

        let doubled = union_graph(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(doubled.weight(0, 1), 2.0);
        assert_eq!(doubled.edge_count(), 1);

        let e = union_graph(&[WeightedGraph::empty(3), WeightedGraph::empty(3)]).unwrap();
        assert_eq!(e.edge_count(), 0);

        assert!(matches!(
            union_graph(&[a, WeightedGraph::empty(4)]),
            Err(Error::Dimension(_))
        ));
        assert!(union_graph(&[]).is_err());
    }

    #[test]
    fn connectivity_examples() {
        assert!(build_erdos_renyi(3, 1.0, unit(), 0).unwrap().is_connected());
        assert!(!WeightedGraph::empty(2).is_connected());
        assert!(!path(4, &[(0, 1), (2, 3)]).is_connected());
    }

    #[test]
    fn matrix_validation() {
        assert!(WeightedGraph::from_matrix(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(WeightedGraph::from_matrix(2, vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(WeightedGraph::from_matrix(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(WeightedGraph::from_matrix(2, vec![0.0, 1.0, 1.0]).is_err());
    }

    fn tree_quarters() -> GraphSchedule {
        // spanning path 0-1-2-3-4 split into four single-edge graphs
        let graphs = (0..4).map(|k| path(5, &[(k, k + 1)])).collect();
        GraphSchedule::new(graphs, 0.1).unwrap()
    }

    #[test]
    fn uniform_connectivity_examples() {
        let s = tree_quarters();
        assert!(s.check_uniform_connectivity(0.4).unwrap());
        assert!(!s.check_uniform_connectivity(0.2).unwrap());

        let empty = GraphSchedule::new(vec![WeightedGraph::empty(3); 4], 0.1).unwrap();
        assert!(!empty.check_uniform_connectivity(0.4).unwrap());

        let single = GraphSchedule::new(vec![build_cycle(6, unit(), 0).unwrap()], 0.1).unwrap();
        for w in [0.1, 0.25, 1.0, 7.3] {
            assert!(single.check_uniform_connectivity(w).unwrap());
        }
        assert!(s.check_uniform_connectivity(0.05).is_err());
    }

    #[test]
    fn schedule_is_round_robin_and_right_continuous() {
        let s = tree_quarters();
        assert_eq!(s.index_at(0.0), 0);
        assert_eq!(s.index_at(0.0999), 0);
        assert_eq!(s.index_at(0.1), 1);
        assert_eq!(s.index_at(0.3), 3);
        assert_eq!(s.index_at(0.4), 0);
        // accumulated step times land on the right slot
        let t = (0..100).fold(0.0, |t, _| t + 1e-3);
        assert_eq!(s.index_at(t), 1);
        assert!((s.period() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(GraphSchedule::new(vec![], 0.1).is_err());
        assert!(GraphSchedule::new(vec![WeightedGraph::empty(3)], 0.0).is_err());
        assert!(GraphSchedule::new(vec![WeightedGraph::empty(3), WeightedGraph::empty(4)], 0.1).is_err());
    }

    #[test]
    fn switching_family_has_connected_union() {
        let gs = build_switching_erdos_renyi(100, 4, 0.02, WeightRange::default(), 11, 200).unwrap();
        assert_eq!(gs.len(), 4);
        assert!(union_graph(&gs).unwrap().is_connected());
        let s = GraphSchedule::new(gs, 0.1).unwrap();
        assert!(s.check_uniform_connectivity(0.4).unwrap());
    }

    #[test]
    fn triples_round_trip() {
        let g = build_erdos_renyi(12, 0.4, WeightRange::default(), 3).unwrap();
        let text = g.to_triples();
        let back = WeightedGraph::parse_triples(&text).unwrap();
        assert_eq!(g, back);

        let inferred = WeightedGraph::parse_triples("0 1 0.5\n1 2 0.25\n").unwrap();
        assert_eq!(inferred.n(), 3);
        assert_eq!(inferred.weight(2, 1), 0.25);
        assert!(WeightedGraph::parse_triples("0 1\n").is_err());
    }
}
