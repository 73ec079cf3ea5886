//! Communication graphs and doubly stochastic mixing matrices.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are unordered; `(i, j)` and
    /// `(j, i)` in the same list count as a duplicate.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidConfig(format!(
                    "edge ({i}, {j}) references an agent outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidConfig(format!("self-loop at agent {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidConfig(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(min, max)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }
}

/// Ring `0-1-...-(n-1)-0` plus `extra_edges` distinct chords drawn with a
/// seeded generator.
pub fn ring_plus_random(n: usize, extra_edges: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("ring needs n >= 2, got {n}")));
    }
    let mut ring: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    if n == 2 {
        ring.truncate(1);
    }
    let available = if n >= 3 { n * (n - 3) / 2 } else { 0 };
    if extra_edges > available {
        return Err(Error::InvalidConfig(format!(
            "{extra_edges} extra edges requested but only {available} chords exist for n = {n}"
        )));
    }

    let base = Graph::new(n, &ring)?;
    let mut chords: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !base.has_edge(i, j))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    chords.shuffle(&mut rng);
    ring.extend(chords.into_iter().take(extra_edges));
    Graph::new(n, &ring)
}

/// Doubly stochastic weight matrix with its consensus contraction factor.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    lambda_bar: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Wraps an arbitrary matrix after checking it is square, nonnegative and
    /// doubly stochastic. Connectivity is not required here; see
    /// [`MixingMatrix::is_contractive`].
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::InvalidConfig("mixing matrix must be square and nonempty".into()));
        }
        let n = w.nrows();
        if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidConfig("mixing matrix has negative or non-finite entries".into()));
        }
        for i in 0..n {
            let row: f64 = w.row(i).sum();
            let col: f64 = w.column(i).sum();
            if (row - 1.0).abs() >= STOCHASTIC_TOL || (col - 1.0).abs() >= STOCHASTIC_TOL {
                return Err(Error::InvalidConfig(format!(
                    "mixing matrix is not doubly stochastic at index {i} (row {row}, column {col})"
                )));
            }
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[(i, j)] > 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        let lambda_bar = spectral_gap(&w);
        Ok(Self { w, lambda_bar, rows })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// `‖W − 11ᵀ/n‖₂`.
    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn is_contractive(&self) -> bool {
        self.lambda_bar < 1.0 - 1e-9
    }

    /// Nonzero entries of row `i` as `(column, weight)`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Σ_j w_ij · values[j] for every i.
    pub fn mix(&self, values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut acc = DVector::zeros(values[0].len());
                for &(j, wij) in row {
                    acc.axpy(wij, &values[j], 1.0);
                }
                acc
            })
            .collect()
    }
}

/// Metropolis–Hastings weights: `1/(1 + max(deg_i, deg_j))` on edges, the
/// remainder on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::InvalidConfig("communication graph is disconnected".into()));
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let wij = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_matrix(w)
}

/// Spectral norm of `W − 11ᵀ/n` by power iteration on `W̃ᵀW̃`.
pub fn spectral_gap(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    let gram = centered.transpose() * &centered;
    let scale = gram.norm();
    if scale == 0.0 {
        return 0.0;
    }

    // The all-ones vector lies in the kernel of W̃, so start from a
    // deterministic perturbation of it and fall back to others if that
    // happens to be orthogonal to the dominant eigenspace.
    for attempt in 0..4u32 {
        let shift = 0.7 + attempt as f64;
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * (1.3 * i as f64 + shift).cos());
        let mut prev = 0.0;
        let mut estimate = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let norm = v.norm();
            if norm <= 1e-300 {
                break;
            }
            v /= norm;
            let next = &gram * &v;
            estimate = v.dot(&next);
            v = next;
            if (estimate - prev).abs() <= POWER_TOL * estimate.abs().max(1e-300) {
                break;
            }
            prev = estimate;
        }
        if estimate > 1e-14 * scale {
            return estimate.max(0.0).sqrt();
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_eigen_gap(w: &DMatrix<f64>) -> f64 {
        let n = w.nrows();
        let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
        centered
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn triangle_is_complete_mixing() {
        let g = ring_plus_random(3, 0, 1).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        let w = metropolis_weights(&g).unwrap();
        for v in w.matrix().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(w.lambda_bar() < 1e-9);
    }

    #[test]
    fn ring_of_fourteen() {
        let g = ring_plus_random(14, 0, 0).unwrap();
        assert_eq!(g.edge_count(), 14);
        assert!(g.degrees().iter().all(|&d| d == 2));
    }

    #[test]
    fn chords_are_seeded() {
        let a = ring_plus_random(4, 1, 9).unwrap();
        let b = ring_plus_random(4, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.edge_count(), 5);
        assert!(a.is_connected());
        let c = ring_plus_random(10, 12, 3).unwrap();
        assert_eq!(c.edge_count(), 22);
    }

    #[test]
    fn too_many_chords_rejected() {
        assert!(matches!(ring_plus_random(4, 3, 0), Err(Error::InvalidConfig(_))));
        assert!(ring_plus_random(4, 2, 0).is_ok());
        assert!(ring_plus_random(1, 0, 0).is_err());
    }

    #[test]
    fn four_cycle_gap_is_one_third() {
        let g = ring_plus_random(4, 0, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        for (i, j) in g.edges() {
            assert!((w.matrix()[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        for i in 0..4 {
            assert!((w.matrix()[(i, i)] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((w.lambda_bar() - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_edge() {
        let g = ring_plus_random(2, 0, 0).unwrap();
        assert_eq!(g.edge_count(), 1);
        let w = metropolis_weights(&g).unwrap();
        assert!(w.matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(w.lambda_bar() < 1e-12);
    }

    #[test]
    fn averaging_matrix_has_zero_gap() {
        assert_eq!(spectral_gap(&DMatrix::from_element(5, 5, 0.2)), 0.0);
    }

    #[test]
    fn disconnected_triangles() {
        let g = Graph::new(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
        assert!(!g.is_connected());
        assert!(metropolis_weights(&g).is_err());

        let mut w = DMatrix::zeros(6, 6);
        for b in [0, 3] {
            for i in 0..3 {
                for j in 0..3 {
                    w[(b + i, b + j)] = 1.0 / 3.0;
                }
            }
        }
        let mix = MixingMatrix::from_matrix(w).unwrap();
        assert!(mix.lambda_bar() >= 1.0 - 1e-9);
        assert!(!mix.is_contractive());
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::new(3, &[(0, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, &[(0, 5)]).is_err());
    }

    #[test]
    fn power_iteration_matches_eigendecomposition() {
        for seed in 0..20 {
            let n = 5 + (seed as usize % 10);
            let extra = seed as usize % 5;
            let g = ring_plus_random(n, extra, seed).unwrap();
            let w = metropolis_weights(&g).unwrap();
            let oracle = symmetric_eigen_gap(w.matrix());
            assert!(
                (w.lambda_bar() - oracle).abs() <= 1e-9 * oracle.max(1e-12),
                "n={n} power={} eig={oracle}",
                w.lambda_bar()
            );
            assert!(w.is_contractive());
        }
    }

    #[test]
    fn rejects_non_stochastic() {
        let w = DMatrix::from_row_slice(2, 2, &[0.6, 0.5, 0.4, 0.5]);
        assert!(MixingMatrix::from_matrix(w).is_err());
    }
}
