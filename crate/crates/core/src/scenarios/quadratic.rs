//! Strongly convex quadratic benchmark with a closed-form minimizer.
//!
//! `fᵢ(xᵢ, σ) = ½xᵢᵀQᵢxᵢ + cᵢᵀxᵢ + γ‖xᵢ − σ‖²`, `φᵢ = βᵢxᵢ`, single-integrator
//! plants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::NetworkState;
use crate::error::{Error, Result};
use crate::graph::{generate_er_balanced, NetworkGraph};
use crate::model::{AgentModel, NetworkModel};

#[derive(Debug, Clone)]
pub struct QuadraticAgent {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub gamma: f64,
    pub beta: f64,
}

impl AgentModel for QuadraticAgent {
    fn state_dim(&self) -> usize {
        self.c.len()
    }

    fn input_dim(&self) -> usize {
        self.c.len()
    }

    fn agg_dim(&self) -> usize {
        self.c.len()
    }

    fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u - x
    }

    fn steady_state(&self, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }

    fn steady_state_jac(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(u.len(), u.len())
    }

    fn cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.gamma * (x - s).norm_squared()
    }

    fn grad1_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c + (x - s) * (2.0 * self.gamma)
    }

    fn grad2_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        (x - s) * (-2.0 * self.gamma)
    }

    fn aggregation(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.beta
    }

    fn aggregation_jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) * self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub n_agents: usize,
    pub dim: usize,
    pub gamma: f64,
    pub er_prob: f64,
    pub seed: u64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            n_agents: 6,
            dim: 2,
            gamma: 0.5,
            er_prob: 0.5,
            seed: 0,
        }
    }
}

/// Benchmark instance together with its exact minimizer.
#[derive(Debug, Clone)]
pub struct QuadraticBenchmark {
    pub agents: Vec<QuadraticAgent>,
    pub graph: NetworkGraph,
    pub minimizer: DVector<f64>,
}

/// Solves `(blkdiag(Qᵢ) + 2γMᵀM)x = −c` where `M = I − B` and
/// `B = [βⱼ/N · I]ᵢⱼ` maps `x` to the stacked copies of `σ(x)`.
pub fn solve_quadratic(agents: &[QuadraticAgent]) -> Result<DVector<f64>> {
    let n = agents.len();
    if n == 0 {
        return Err(Error::Dimension("quadratic instance has no agents".into()));
    }
    let d = agents[0].c.len();
    if agents.iter().any(|a| a.c.len() != d || a.q.shape() != (d, d)) {
        return Err(Error::Dimension("quadratic agents disagree on dimension".into()));
    }
    let gamma = agents[0].gamma;
    if agents.iter().any(|a| a.gamma != gamma) {
        return Err(Error::Config("quadratic agents must share gamma".into()));
    }
    let nd = n * d;
    let mut m = DMatrix::<f64>::identity(nd, nd);
    let mut h = DMatrix::<f64>::zeros(nd, nd);
    let mut rhs = DVector::<f64>::zeros(nd);
    for (j, a) in agents.iter().enumerate() {
        h.view_mut((j * d, j * d), (d, d)).copy_from(&a.q);
        rhs.rows_mut(j * d, d).copy_from(&(-&a.c));
        for i in 0..n {
            for k in 0..d {
                m[(i * d + k, j * d + k)] -= a.beta / n as f64;
            }
        }
    }
    h += m.transpose() * &m * (2.0 * gamma);
    h.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Singular("quadratic stationarity system is not positive definite".into()))
}

impl QuadraticBenchmark {
    pub fn from_parts(agents: Vec<QuadraticAgent>, graph: NetworkGraph) -> Result<Self> {
        let minimizer = solve_quadratic(&agents)?;
        Ok(Self {
            agents,
            graph,
            minimizer,
        })
    }

    pub fn model(&self) -> Result<NetworkModel> {
        let agents = self
            .agents
            .iter()
            .map(|a| Arc::new(a.clone()) as Arc<dyn AgentModel>)
            .collect();
        NetworkModel::new(agents, self.graph.clone())
    }

    /// Random `x(0)`, `u(0)` in `[−5, 5]`, zero compensators.
    pub fn initial_state(&self, model: &NetworkModel, seed: u64) -> Result<NetworkState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let x = DVector::from_fn(model.state_dim(), |_, _| rng.random_range(-5.0..=5.0));
        let u = DVector::from_fn(model.input_dim(), |_, _| rng.random_range(-5.0..=5.0));
        NetworkState::with_zero_compensators(model, x, u)
    }
}

impl QuadraticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.dim == 0 {
            return Err(Error::Config("quadratic benchmark needs n_agents >= 1 and dim >= 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.er_prob > 0.0 && self.er_prob <= 1.0) {
            return Err(Error::Config(format!("er_prob must be in (0, 1], got {}", self.er_prob)));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<QuadraticBenchmark> {
        self.validate()?;
        let (n, d) = (self.n_agents, self.dim);
        let graph = if n == 1 {
            NetworkGraph::from_adjacency(DMatrix::zeros(1, 1))?
        } else {
            generate_er_balanced(n, self.er_prob, self.seed)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let agents = (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..=1.0));
                let q = &a * a.transpose() + DMatrix::identity(d, d) * rng.random_range(0.5..=2.0);
                let c = DVector::from_fn(d, |_, _| rng.random_range(-10.0..=10.0));
                let beta = rng.random_range(0.2..=1.0);
                QuadraticAgent {
                    q,
                    c,
                    gamma: self.gamma,
                    beta,
                }
            })
            .collect();
        QuadraticBenchmark::from_parts(agents, graph)
    }
}

/// Random instance with `N` agents of dimension `d`.
pub fn quadratic_benchmark(n: usize, d: usize, seed: u64) -> Result<QuadraticBenchmark> {
    QuadraticConfig {
        n_agents: n,
        dim: d,
        seed,
        ..Default::default()
    }
    .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::stationarity_residual;
    use crate::model::{finite_diff_check, FdCheckOptions};

    #[test]
    fn single_agent_isotropic_minimizer_is_origin() {
        let agent = QuadraticAgent {
            q: DMatrix::identity(2, 2) * 2.0,
            c: DVector::zeros(2),
            gamma: 3.7,
            beta: 0.4,
        };
        let b = QuadraticBenchmark::from_parts(
            vec![agent],
            NetworkGraph::from_adjacency(DMatrix::zeros(1, 1)).unwrap(),
        )
        .unwrap();
        assert_eq!(b.minimizer, DVector::zeros(2));
    }

    #[test]
    fn minimizer_is_stationary() {
        for seed in 0..10 {
            let b = quadratic_benchmark(6, 2, seed).unwrap();
            let model = b.model().unwrap();
            assert!(stationarity_residual(&model, &b.minimizer).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn oracles_are_accurate() {
        let b = quadratic_benchmark(5, 3, 4).unwrap();
        let model = b.model().unwrap();
        let report = finite_diff_check(
            &model,
            &FdCheckOptions {
                tolerance: 1e-7,
                ..Default::default()
            },
        );
        assert!(report.max_error() < 1e-7, "{report:?}");
    }

    #[test]
    fn random_point_is_not_stationary() {
        let b = quadratic_benchmark(4, 2, 1).unwrap();
        let model = b.model().unwrap();
        let u = &b.minimizer + DVector::from_element(8, 0.3);
        assert!(stationarity_residual(&model, &u).unwrap() > 0.0);
    }

    #[test]
    fn build_is_reproducible() {
        let a = quadratic_benchmark(6, 2, 9).unwrap();
        let b = quadratic_benchmark(6, 2, 9).unwrap();
        assert_eq!(a.minimizer, b.minimizer);
        assert_eq!(a.graph, b.graph);
    }
}
