//! Weighted directed communication graphs.
//!
//! Convention: `adjacency[(i, j)] = a_ij > 0` iff agent `i` receives from
//! agent `j`, i.e. the edge `(j, i)` exists. Node indices are 0-based.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron_identity;

/// Relative tolerance of the weight-balance check, scaled by `1 + max degree`.
pub const BALANCE_TOL: f64 = 1e-12;

/// Default number of redraws for [`generate_er_balanced`].
pub const DEFAULT_ER_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    adjacency: DMatrix<f64>,
}

impl NetworkGraph {
    /// Wraps an adjacency matrix after checking it is square, finite,
    /// nonnegative and has a zero diagonal.
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be a nonempty square matrix, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight a[{i}][{j}] = {a} is not a finite nonnegative number"
                    )));
                }
            }
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "self-loop at node {i} (a[{i}][{i}] = {})",
                    adjacency[(i, i)]
                )));
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds a graph from `(from, to, weight)` triples, i.e. `a[to][from] = weight`.
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n_agents, n_agents);
        for &(from, to, w) in edges {
            if from >= n_agents || to >= n_agents {
                return Err(Error::InvalidGraph(format!(
                    "edge ({from}, {to}) out of range for {n_agents} nodes"
                )));
            }
            adjacency[(to, from)] += w;
        }
        Self::from_adjacency(adjacency)
    }

    /// Bidirectional graph with unit weights on every listed pair.
    pub fn undirected_unit(n_agents: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges: Vec<_> = pairs
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        Self::from_edges(n_agents, &edges)
    }

    /// Directed cycle `0 → 1 → … → N−1 → 0` with unit weights.
    pub fn directed_cycle(n_agents: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n_agents)
            .map(|k| (k, (k + 1) % n_agents, 1.0))
            .collect();
        Self::from_edges(n_agents, &edges)
    }

    /// Complete graph with unit weights.
    pub fn complete(n_agents: usize) -> Result<Self> {
        let mut a = DMatrix::from_element(n_agents, n_agents, 1.0);
        a.fill_diagonal(0.0);
        Self::from_adjacency(a)
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// In-neighbours of `i` with their weights `a_ij`, in increasing `j`.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n_agents()).filter_map(move |j| {
            let a = self.adjacency[(i, j)];
            (a != 0.0).then_some((j, a))
        })
    }

    pub fn in_degrees(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_agents(),
            self.adjacency.row_iter().map(|r| r.sum()),
        )
    }

    pub fn out_degrees(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_agents(),
            self.adjacency.column_iter().map(|c| c.sum()),
        )
    }

    /// Returns `(balanced, max_i |d_in − d_out|)`.
    pub fn check_weight_balanced(&self) -> (bool, f64) {
        let din = self.in_degrees();
        let dout = self.out_degrees();
        let imbalance = (&din - &dout).amax();
        let max_degree = din.max().max(dout.max());
        (imbalance <= BALANCE_TOL * (1.0 + max_degree), imbalance)
    }

    /// Directed reachability from node 0 along edges and along reversed edges.
    pub fn check_strongly_connected(&self) -> bool {
        let forward = self.reach_from(0, |g, from, to| g.adjacency[(to, from)] > 0.0);
        let backward = self.reach_from(0, |g, from, to| g.adjacency[(from, to)] > 0.0);
        forward && backward
    }

    fn reach_from(&self, start: usize, edge: impl Fn(&Self, usize, usize) -> bool) -> bool {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for next in 0..n {
                if !seen[next] && edge(self, v, next) {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Fails unless the graph is weight-balanced and strongly connected.
    pub fn validate(&self) -> Result<()> {
        let (balanced, imbalance) = self.check_weight_balanced();
        if !balanced {
            return Err(Error::InvalidGraph(format!(
                "not weight-balanced (max |d_in - d_out| = {imbalance:e})"
            )));
        }
        if !self.check_strongly_connected() {
            return Err(Error::InvalidGraph("not strongly connected".into()));
        }
        Ok(())
    }

    /// `ℒ = D_in − A` and its block lift `L = ℒ ⊗ I_d`.
    pub fn laplacian(&self, block_dim: usize) -> LaplacianPair {
        let mut small = -self.adjacency.clone();
        for (i, d) in self.in_degrees().iter().enumerate() {
            small[(i, i)] += d;
        }
        let big = kron_identity(&small, block_dim);
        LaplacianPair {
            laplacian_small: small,
            laplacian_big: big,
            block_dim,
        }
    }

    /// Parses `N` rows of `N` comma-separated weights.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("bad weight {c:?}: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse(format!(
                "adjacency CSV must have {n} columns on each of its {n} rows"
            )));
        }
        Self::from_adjacency(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.adjacency.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses `{"n": N, "edges": [[j, i, w], ...]}` where each triple is an
    /// edge from `j` to `i` with weight `w`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: GraphJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("graph JSON: {e}")))?;
        spec.try_into()
    }

    pub fn to_json(&self) -> GraphJson {
        let n = self.n_agents();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.adjacency[(i, j)];
                if w != 0.0 {
                    edges.push((j, i, w));
                }
            }
        }
        GraphJson { n, edges }
    }
}

/// JSON edge-list form of a [`NetworkGraph`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<GraphJson> for NetworkGraph {
    type Error = Error;

    fn try_from(spec: GraphJson) -> Result<Self> {
        NetworkGraph::from_edges(spec.n, &spec.edges)
    }
}

#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub laplacian_small: DMatrix<f64>,
    pub laplacian_big: DMatrix<f64>,
    pub block_dim: usize,
}

/// Draws an undirected Erdős–Rényi graph with Metropolis–Hastings weights,
/// redrawing until it is connected.
///
/// Each unordered pair is kept with probability `edge_prob`; a kept pair gets
/// `a_ij = a_ji = 1 / (1 + max(deg_i, deg_j))`. Redraws continue the same
/// seeded stream, so the result is a pure function of the arguments.
pub fn generate_er_balanced(n_agents: usize, edge_prob: f64, seed: u64) -> Result<NetworkGraph> {
    generate_er_balanced_with_retries(n_agents, edge_prob, seed, DEFAULT_ER_RETRIES)
}

pub fn generate_er_balanced_with_retries(
    n_agents: usize,
    edge_prob: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<NetworkGraph> {
    if n_agents < 2 {
        return Err(Error::Config(format!(
            "Erdős–Rényi graph needs at least 2 agents, got {n_agents}"
        )));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::Config(format!(
            "edge probability must lie in (0, 1], got {edge_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let mut keep = vec![vec![false; n_agents]; n_agents];
        let mut degree = vec![0usize; n_agents];
        for i in 0..n_agents {
            for j in (i + 1)..n_agents {
                if rng.random::<f64>() < edge_prob {
                    keep[i][j] = true;
                    keep[j][i] = true;
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        let adjacency = DMatrix::from_fn(n_agents, n_agents, |i, j| {
            if keep[i][j] {
                1.0 / (1.0 + degree[i].max(degree[j]) as f64)
            } else {
                0.0
            }
        });
        let graph = NetworkGraph::from_adjacency(adjacency)?;
        if graph.check_strongly_connected() {
            return Ok(graph);
        }
    }
    Err(Error::GraphGeneration {
        attempts: max_attempts,
        edge_prob,
    })
}

/// Orthonormal basis `R` of the complement of the agreement direction.
#[derive(Debug, Clone)]
pub struct ConsensusBasis {
    pub r_matrix: DMatrix<f64>,
    pub n_agents: usize,
    pub block_dim: usize,
}

impl ConsensusBasis {
    /// `𝟏 = 1_N ⊗ I_d`.
    pub fn ones(&self) -> DMatrix<f64> {
        stacked_ones(self.n_agents, self.block_dim)
    }

    /// `T = [R  𝟏/N]ᵀ`, square of size `Nd`.
    pub fn transform_matrix(&self) -> DMatrix<f64> {
        let nd = self.n_agents * self.block_dim;
        let mut t = DMatrix::zeros(nd, nd);
        let rt = self.r_matrix.transpose();
        t.rows_mut(0, nd - self.block_dim).copy_from(&rt);
        let avg = self.ones().transpose() / self.n_agents as f64;
        t.rows_mut(nd - self.block_dim, self.block_dim).copy_from(&avg);
        t
    }
}

/// `1_N ⊗ I_d` as an `Nd × d` matrix.
pub fn stacked_ones(n_agents: usize, block_dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_agents * block_dim, block_dim, |r, c| {
        if r % block_dim == c {
            1.0
        } else {
            0.0
        }
    })
}

/// Builds `R` from the Householder reflector that maps `1_N/√N` to `e₁`:
/// its last `N − 1` columns, lifted by `⊗ I_d`.
pub fn build_consensus_basis(n_agents: usize, block_dim: usize) -> Result<ConsensusBasis> {
    if n_agents < 2 {
        return Err(Error::Config(format!(
            "consensus basis needs at least 2 agents, got {n_agents}"
        )));
    }
    if block_dim == 0 {
        return Err(Error::Config("block dimension must be positive".into()));
    }
    let n = n_agents;
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    v[0] -= 1.0;
    let vtv = v.norm_squared();
    let reflector = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vtv);
    let small = reflector.columns(1, n - 1).into_owned();
    Ok(ConsensusBasis {
        r_matrix: kron_identity(&small, block_dim),
        n_agents,
        block_dim,
    })
}
