use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SpdFactor;

use super::panel::FunctionalPanel;

/// Symmetric 0/1 district adjacency with no self-edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    n: usize,
    /// Sorted neighbor lists; symmetry is enforced at construction.
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph over `n` districts from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::validation(format!(
                    "edge ({a}, {b}) out of range for {n} districts"
                )));
            }
            if a == b {
                return Err(Error::validation(format!("self-edge on district {a}")));
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(AdjacencyGraph { n, neighbors })
    }

    pub fn empty(n: usize) -> Self {
        AdjacencyGraph { n, neighbors: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, list) in self.neighbors.iter().enumerate() {
            for &b in list {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Row-normalized adjacency over the induced subgraph on districts
    /// `from..n`. Rows are divided by their degree within the subgraph;
    /// isolated districts get an all-zero row.
    pub fn row_normalized_subgraph(&self, from: usize) -> DMatrix<f64> {
        let m = self.n - from;
        let mut w = DMatrix::zeros(m, m);
        for i in from..self.n {
            let inside: Vec<usize> =
                self.neighbors[i].iter().copied().filter(|&j| j >= from).collect();
            if inside.is_empty() {
                continue;
            }
            let weight = 1.0 / inside.len() as f64;
            for j in inside {
                w[(i - from, j - from)] = weight;
            }
        }
        w
    }

    /// Relabels districts: new index i holds old district `perm.old_of(i)`.
    pub fn permuted(&self, perm: &Permutation) -> Result<AdjacencyGraph> {
        if perm.len() != self.n {
            return Err(Error::validation("permutation length does not match graph"));
        }
        let edges: Vec<(usize, usize)> = self
            .edges()
            .iter()
            .map(|&(a, b)| (perm.new_of(a), perm.new_of(b)))
            .collect();
        AdjacencyGraph::from_edges(self.n, &edges)
    }
}

/// CAR precision for one factor column: Q = (I - psi W)(I - psi W)' over the
/// districts below the factor's diagonal position.
#[derive(Debug, Clone)]
pub struct CarPrecision {
    pub q: DMatrix<f64>,
    pub psi: f64,
}

/// Builds the CAR precision for factor `s` (1-based): the induced,
/// row-normalized subgraph over districts s+1..N.
pub fn car_precision(graph: &AdjacencyGraph, s: usize, psi: f64) -> Result<CarPrecision> {
    if !(0.0..1.0).contains(&psi) {
        return Err(Error::validation(format!(
            "spatial autoregression parameter must lie in [0, 1), got {psi}"
        )));
    }
    if s == 0 || s >= graph.n() {
        return Err(Error::validation(format!(
            "factor index {s} out of range for {} districts",
            graph.n()
        )));
    }
    let w = graph.row_normalized_subgraph(s);
    let m = w.nrows();
    let a = DMatrix::identity(m, m) - w * psi;
    let q = &a * a.transpose();
    Ok(CarPrecision { q, psi })
}

impl CarPrecision {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// b' Q b.
    pub fn quad(&self, b: &DVector<f64>) -> f64 {
        if b.is_empty() {
            return 0.0;
        }
        (b.transpose() * &self.q * b)[(0, 0)]
    }

    /// log det Q via Cholesky.
    pub fn log_det(&self) -> Result<f64> {
        Ok(SpdFactor::new(&self.q)?.log_det())
    }
}

/// A district relabeling recorded as `new index -> old index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    old_of_new: Vec<usize>,
    new_of_old: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation { old_of_new: (0..n).collect(), new_of_old: (0..n).collect() }
    }

    fn from_old_of_new(old_of_new: Vec<usize>) -> Self {
        let mut new_of_old = vec![0; old_of_new.len()];
        for (new, &old) in old_of_new.iter().enumerate() {
            new_of_old[old] = new;
        }
        Permutation { old_of_new, new_of_old }
    }

    pub fn len(&self) -> usize {
        self.old_of_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_of_new.is_empty()
    }

    pub fn old_of(&self, new: usize) -> usize {
        self.old_of_new[new]
    }

    pub fn new_of(&self, old: usize) -> usize {
        self.new_of_old[old]
    }

    pub fn old_of_new(&self) -> &[usize] {
        &self.old_of_new
    }
}

/// Reorders the panel and graph so the chosen factor districts occupy
/// indices 0..M in the given order; all other districts follow in their
/// original relative order. Returns the permuted panel, graph, and the
/// permutation for mapping results back.
pub fn reorder_for_factors(
    panel: &FunctionalPanel,
    graph: &AdjacencyGraph,
    factor_districts: &[String],
) -> Result<(FunctionalPanel, AdjacencyGraph, Permutation)> {
    let n = panel.n_districts();
    if graph.n() != n {
        return Err(Error::validation("graph and panel district counts differ"));
    }
    if factor_districts.is_empty() || factor_districts.len() >= n {
        return Err(Error::validation(format!(
            "factor count must be in 1..{} (got {})",
            n,
            factor_districts.len()
        )));
    }
    let mut old_of_new = Vec::with_capacity(n);
    for id in factor_districts {
        let idx = panel
            .district_ids
            .iter()
            .position(|d| d == id)
            .ok_or_else(|| Error::validation(format!("unknown factor district `{id}`")))?;
        if old_of_new.contains(&idx) {
            return Err(Error::validation(format!("duplicate factor district `{id}`")));
        }
        old_of_new.push(idx);
    }
    for idx in 0..n {
        if !old_of_new.contains(&idx) {
            old_of_new.push(idx);
        }
    }
    let perm = Permutation::from_old_of_new(old_of_new);

    let (_, t, k) = panel.values.dims();
    let mut values = super::panel::Cube::zeros(n, t, k);
    let mut district_ids = Vec::with_capacity(n);
    for new in 0..n {
        let old = perm.old_of(new);
        district_ids.push(panel.district_ids[old].clone());
        for d in 0..t {
            values.lane_mut(new, d).copy_from_slice(panel.values.lane(old, d));
        }
    }
    let permuted_panel =
        FunctionalPanel::new(values, panel.grid.clone(), district_ids, panel.day_ids.clone())?;
    let permuted_graph = graph.permuted(&perm)?;
    Ok((permuted_panel, permuted_graph, perm))
}
