//! Network topologies and doubly stochastic consensus weights.
//!
//! Every topology carries self-loops so that the weight matrix has a strictly
//! positive diagonal. Weights follow the Metropolis–Hastings rule
//! `W_ij = 1 / (1 + max(deg_i, deg_j))` for neighbors, with the diagonal
//! absorbing the remaining mass. Spectral quantities are taken from a dense
//! symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Ring,
    CirculantExpander,
    Custom,
}

/// Undirected graph with self-loops on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    kind: TopologyKind,
    n: usize,
    degree: usize,
    adjacency: Vec<bool>,
}

impl Topology {
    /// Builds a topology from an explicit adjacency matrix.
    ///
    /// The matrix must be square and symmetric. Missing self-loops are added.
    /// Connectivity is checked when weights are assigned.
    pub fn custom(adjacency: &[Vec<bool>]) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::invalid("topology needs at least one node"));
        }
        let mut flat = vec![false; n * n];
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "adjacency row",
                    expected: n.to_string(),
                    actual: row.len().to_string(),
                });
            }
            for (j, &a) in row.iter().enumerate() {
                flat[i * n + j] = a || i == j;
            }
        }
        for i in 0..n {
            for j in 0..i {
                if flat[i * n + j] != flat[j * n + i] {
                    return Err(Error::invalid(format!(
                        "adjacency is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut t = Topology {
            kind: TopologyKind::Custom,
            n,
            degree: 0,
            adjacency: flat,
        };
        t.degree = (0..n).map(|i| t.degree_of(i)).max().unwrap_or(0);
        Ok(t)
    }

    fn from_offsets(kind: TopologyKind, n: usize, offsets: &[usize]) -> Self {
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            adjacency[i * n + i] = true;
            for &s in offsets {
                let fwd = (i + s) % n;
                let back = (i + n - s % n) % n;
                adjacency[i * n + fwd] = true;
                adjacency[i * n + back] = true;
                adjacency[fwd * n + i] = true;
                adjacency[back * n + i] = true;
            }
        }
        let mut t = Topology {
            kind,
            n,
            degree: 0,
            adjacency,
        };
        t.degree = (0..n).map(|i| t.degree_of(i)).max().unwrap_or(0);
        t
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Maximum node degree, self-loops excluded.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Number of neighbors of `i`, excluding the self-loop.
    pub fn degree_of(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| j != i && self.adjacent(i, j)).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.adjacent(i, j))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<bool>> {
        self.adjacency.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Cycle graph with self-loops. `n = 1` is a single node, `n = 2` the
/// complete graph on two nodes.
pub fn build_ring(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::invalid("ring needs n >= 1"));
    }
    let offsets: &[usize] = if n == 1 { &[] } else { &[1] };
    Ok(Topology::from_offsets(TopologyKind::Ring, n, offsets))
}

/// Circulant graph where node `i` links to `i ± 1, …, i ± degree/2 (mod n)`.
pub fn build_circulant_expander(n: usize, degree: usize) -> Result<Topology> {
    if degree == 0 || degree % 2 != 0 {
        return Err(Error::invalid(format!(
            "expander degree must be even and positive, got {degree}"
        )));
    }
    if degree >= n {
        return Err(Error::invalid(format!(
            "expander degree {degree} must be smaller than n = {n}"
        )));
    }
    let offsets: Vec<usize> = (1..=degree / 2).collect();
    Ok(Topology::from_offsets(
        TopologyKind::CirculantExpander,
        n,
        &offsets,
    ))
}

/// A topology together with its consensus weights and spectral constants.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Topology,
    weights: DMatrix<f64>,
    rho: f64,
    beta: f64,
}

impl Network {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n(&self) -> usize {
        self.topology.n
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `‖W − (1/n)·11ᵀ‖₂`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `‖I − W‖₂`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Contraction factor of the damped mixing `(1 − γ)I + γW`.
    pub fn rho_tilde(&self, gamma: f64) -> f64 {
        (1.0 - gamma) + gamma * self.rho
    }

    /// `W · m` for an `n × p` matrix.
    pub fn mix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.weights * m
    }
}

/// Assigns Metropolis–Hastings weights to a connected topology.
pub fn metropolis_hastings_weights(t: &Topology) -> Result<Network> {
    if !t.is_connected() {
        return Err(Error::invalid("topology is not connected"));
    }
    let n = t.n;
    let deg: Vec<usize> = (0..n).map(|i| t.degree_of(i)).collect();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if t.adjacent(i, j) {
                let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let averaging = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let rho = symmetric_spectral_norm(&w - averaging);
    let beta = symmetric_spectral_norm(DMatrix::identity(n, n) - &w);
    Ok(Network {
        topology: t.clone(),
        weights: w,
        rho,
        beta,
    })
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_spectral_norm(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
