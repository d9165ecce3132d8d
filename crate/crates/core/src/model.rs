//! Agent oracles and the network-level aggregative problem.
//!
//! Jacobians are stored in gradient orientation: `∇h_i(u)` is `m_i × n_i`
//! (the transpose of `∂h/∂u`) and `∇φ_i(x)` is `n_i × d`, so every chain
//! rule below is a plain matrix–vector product.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;

/// Local oracles of one agent.
///
/// Implementations must be pure: the same arguments always give the same
/// bits. The controller never calls [`AgentModel::cost`]; it is used by
/// monitors and finite-difference checks only.
pub trait AgentModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn agg_dim(&self) -> usize;

    /// Number of leading state components that converge to `h_i(u_i)`.
    /// Costs and aggregation may only depend on these.
    fn settled_dim(&self) -> usize {
        self.state_dim()
    }

    fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn steady_state(&self, u: &DVector<f64>) -> DVector<f64>;
    /// `m_i × n_i`.
    fn steady_state_jac(&self, u: &DVector<f64>) -> DMatrix<f64>;

    fn cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64;
    fn grad1_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64>;
    fn grad2_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64>;

    fn aggregation(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `n_i × d`.
    fn aggregation_jac(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone)]
pub struct NetworkModel {
    agents: Vec<Arc<dyn AgentModel>>,
    graph: NetworkGraph,
    agg_dim: usize,
    x_offsets: Vec<usize>,
    u_offsets: Vec<usize>,
}

impl fmt::Debug for NetworkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkModel")
            .field("n_agents", &self.n_agents())
            .field("agg_dim", &self.agg_dim)
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .finish()
    }
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for d in dims {
        out.push(out.last().unwrap() + d);
    }
    out
}

impl NetworkModel {
    pub fn new(agents: Vec<Arc<dyn AgentModel>>, graph: NetworkGraph) -> Result<Self> {
        let Some(first) = agents.first() else {
            return Err(Error::Config("network needs at least one agent".into()));
        };
        let agg_dim = first.agg_dim();
        if agg_dim == 0 {
            return Err(Error::Config("aggregation dimension must be positive".into()));
        }
        if let Some((i, a)) = agents.iter().enumerate().find(|(_, a)| a.agg_dim() != agg_dim) {
            return Err(Error::Dimension(format!(
                "agent {i} has aggregation dimension {} but agent 0 has {agg_dim}",
                a.agg_dim()
            )));
        }
        if graph.n_agents() != agents.len() {
            return Err(Error::Dimension(format!(
                "graph has {} nodes for {} agents",
                graph.n_agents(),
                agents.len()
            )));
        }
        let x_offsets = offsets(agents.iter().map(|a| a.state_dim()));
        let u_offsets = offsets(agents.iter().map(|a| a.input_dim()));
        Ok(Self {
            agents,
            graph,
            agg_dim,
            x_offsets,
            u_offsets,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agg_dim(&self) -> usize {
        self.agg_dim
    }

    pub fn agents(&self) -> &[Arc<dyn AgentModel>] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &dyn AgentModel {
        self.agents[i].as_ref()
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    /// `n = Σ n_i`.
    pub fn state_dim(&self) -> usize {
        *self.x_offsets.last().unwrap()
    }

    /// `m = Σ m_i`.
    pub fn input_dim(&self) -> usize {
        *self.u_offsets.last().unwrap()
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.x_offsets[i]..self.x_offsets[i + 1]
    }

    pub fn input_range(&self, i: usize) -> std::ops::Range<usize> {
        self.u_offsets[i]..self.u_offsets[i + 1]
    }

    pub fn agg_range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.agg_dim..(i + 1) * self.agg_dim
    }

    pub fn x_block(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        let r = self.state_range(i);
        x.rows(r.start, r.len()).into_owned()
    }

    pub fn u_block(&self, u: &DVector<f64>, i: usize) -> DVector<f64> {
        let r = self.input_range(i);
        u.rows(r.start, r.len()).into_owned()
    }

    pub fn agg_block(&self, v: &DVector<f64>, i: usize) -> DVector<f64> {
        v.rows(i * self.agg_dim, self.agg_dim).into_owned()
    }

    pub fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        check_len("stacked state x", x.len(), self.state_dim())
    }

    pub fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        check_len("stacked input u", u.len(), self.input_dim())
    }

    /// `σ(x) = (1/N) Σ_i φ_i(x_i)`.
    pub fn sigma(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok(self.sigma_unchecked(x))
    }

    pub(crate) fn sigma_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.agg_dim);
        for (i, a) in self.agents.iter().enumerate() {
            acc += a.aggregation(&self.x_block(x, i));
        }
        acc / self.n_agents() as f64
    }

    /// Stacked `φ(x) ∈ ℝ^{Nd}`.
    pub fn phi_stacked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_agents() * self.agg_dim);
        for (i, a) in self.agents.iter().enumerate() {
            out.rows_mut(i * self.agg_dim, self.agg_dim)
                .copy_from(&a.aggregation(&self.x_block(x, i)));
        }
        out
    }

    /// Stacked `G₂(x, s) = col(∇₂f_i(x_i, s_i))` for per-agent arguments `s ∈ ℝ^{Nd}`.
    pub fn grad2_stacked(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_agents() * self.agg_dim);
        for (i, a) in self.agents.iter().enumerate() {
            let g = a.grad2_cost(&self.x_block(x, i), &self.agg_block(s, i));
            out.rows_mut(i * self.agg_dim, self.agg_dim).copy_from(&g);
        }
        out
    }

    /// `F(x, σ(x)) = Σ_i f_i(x_i, σ(x))`.
    pub fn total_cost(&self, x: &DVector<f64>) -> Result<f64> {
        let s = self.sigma(x)?;
        Ok(self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.cost(&self.x_block(x, i), &s))
            .sum())
    }

    /// `G(x) = ∇F(v, σ(v))|_{v=x}`, block `i` being
    /// `∇₁f_i(x_i, σ) + ∇φ_i(x_i) (1/N) Σ_j ∇₂f_j(x_j, σ)`.
    pub fn grad_total(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.sigma(x)?;
        let n = self.n_agents() as f64;
        let blocks: Vec<DVector<f64>> = (0..self.n_agents()).map(|i| self.x_block(x, i)).collect();
        let mut grad2_mean = DVector::zeros(self.agg_dim);
        for (a, xi) in self.agents.iter().zip(&blocks) {
            grad2_mean += a.grad2_cost(xi, &s);
        }
        grad2_mean /= n;
        let mut out = DVector::zeros(self.state_dim());
        for (i, (a, xi)) in self.agents.iter().zip(&blocks).enumerate() {
            let g = a.grad1_cost(xi, &s) + a.aggregation_jac(xi) * &grad2_mean;
            let r = self.state_range(i);
            out.rows_mut(r.start, r.len()).copy_from(&g);
        }
        Ok(out)
    }

    /// Stacked steady state `h(u)`.
    pub fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(u)?;
        let mut out = DVector::zeros(self.state_dim());
        for (i, a) in self.agents.iter().enumerate() {
            let r = self.state_range(i);
            out.rows_mut(r.start, r.len())
                .copy_from(&a.steady_state(&self.u_block(u, i)));
        }
        Ok(out)
    }

    /// Block-diagonal `∇h(u)`, `m × n`.
    pub fn steady_state_jac(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(u)?;
        let mut out = DMatrix::zeros(self.input_dim(), self.state_dim());
        for (i, a) in self.agents.iter().enumerate() {
            let (ru, rx) = (self.input_range(i), self.state_range(i));
            out.view_mut((ru.start, rx.start), (ru.len(), rx.len()))
                .copy_from(&a.steady_state_jac(&self.u_block(u, i)));
        }
        Ok(out)
    }

    /// `F_{σ,h}(u) = F(h(u), σ(h(u)))`.
    pub fn reduced_cost(&self, u: &DVector<f64>) -> Result<f64> {
        self.total_cost(&self.steady_state(u)?)
    }

    /// `∇F_{σ,h}(u)`, assembled per agent as `∇h_i(u_i) [G(h(u))]_i`.
    pub fn grad_reduced(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.steady_state(u)?;
        let g = self.grad_total(&x)?;
        let mut out = DVector::zeros(self.input_dim());
        for (i, a) in self.agents.iter().enumerate() {
            let rx = self.state_range(i);
            let gi = g.rows(rx.start, rx.len()).into_owned();
            let ru = self.input_range(i);
            out.rows_mut(ru.start, ru.len())
                .copy_from(&(a.steady_state_jac(&self.u_block(u, i)) * gi));
        }
        Ok(out)
    }

    /// Same quantity as [`Self::grad_reduced`] through the stacked product
    /// `∇h(u) G(h(u))`.
    pub fn grad_reduced_stacked(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.steady_state(u)?;
        Ok(self.steady_state_jac(u)? * self.grad_total(&x)?)
    }

    /// Settled part of `x − h(u)`: only the components each plant drives to its
    /// steady state.
    pub fn settling_error(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let hu = self.steady_state(u)?;
        let mut parts = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let r = self.state_range(i);
            for k in r.start..r.start + a.settled_dim() {
                parts.push(x[k] - hu[k]);
            }
        }
        Ok(DVector::from_vec(parts))
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Default tolerance at which [`finite_diff_check`] flags an oracle.
pub const FD_FLAG_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FdCheckOptions {
    pub samples: usize,
    pub seed: u64,
    /// Sampling box for every coordinate of `x`, `u` and `s`.
    pub lo: f64,
    pub hi: f64,
    pub tolerance: f64,
}

impl Default for FdCheckOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 0,
            lo: -1.0,
            hi: 1.0,
            tolerance: FD_FLAG_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub oracle: &'static str,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    /// `max ‖p_i(h_i(u_i), u_i)‖∞` over the samples.
    pub steady_state_residual: f64,
    /// Whether repeated evaluation reproduced every oracle bit-for-bit.
    pub deterministic: bool,
    pub tolerance: f64,
}

impl FdReport {
    pub fn error(&self, oracle: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.oracle == oracle)
            .map(|e| e.max_rel_error)
    }

    pub fn flagged(&self) -> Vec<&'static str> {
        self.entries
            .iter()
            .filter(|e| !(e.max_rel_error <= self.tolerance))
            .map(|e| e.oracle)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty() && self.steady_state_residual <= 1e-9 && self.deterministic
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// Central-difference step `1e-6 (1 + ‖point‖∞)`.
pub fn fd_step(point: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + point.amax())
}

/// `‖analytic − numeric‖∞ / max(1, ‖numeric‖∞)`.
pub fn relative_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, at: &DVector<f64>) -> DVector<f64> {
    let h = fd_step(at);
    DVector::from_fn(at.len(), |k, _| {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[k] += h;
        minus[k] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Central-difference Jacobian in gradient orientation: entry `(k, r)` is
/// `∂f_r/∂v_k`.
pub fn fd_jacobian_t(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64> {
    let h = fd_step(at);
    let mut jac = DMatrix::zeros(at.len(), out_dim);
    for k in 0..at.len() {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[k] += h;
        minus[k] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.row_mut(k).copy_from(&col.transpose());
    }
    jac
}

fn matrix_rel_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1.0)
}

/// Compares every analytic derivative of `model` with central differences at
/// random points and reports the worst relative error per oracle.
pub fn finite_diff_check(model: &NetworkModel, opts: &FdCheckOptions) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut draw = |len: usize| DVector::from_fn(len, |_, _| rng.random_range(opts.lo..=opts.hi));
    let names = [
        "grad1_cost",
        "grad2_cost",
        "aggregation_jac",
        "steady_state_jac",
        "grad_total",
        "grad_reduced",
    ];
    let mut worst = [0.0f64; 6];
    let mut bump = |k: usize, e: f64| {
        if !(e <= worst[k]) {
            worst[k] = e;
        }
    };
    let mut residual = 0.0f64;
    let mut deterministic = true;
    let d = model.agg_dim();

    for _ in 0..opts.samples {
        for a in model.agents() {
            let x = draw(a.state_dim());
            let u = draw(a.input_dim());
            let s = draw(d);

            let g1 = a.grad1_cost(&x, &s);
            bump(0, relative_error(&g1, &fd_gradient(|v| a.cost(v, &s), &x)));
            let g2 = a.grad2_cost(&x, &s);
            bump(1, relative_error(&g2, &fd_gradient(|v| a.cost(&x, v), &s)));
            let jphi = a.aggregation_jac(&x);
            bump(2, matrix_rel_error(&jphi, &fd_jacobian_t(|v| a.aggregation(v), &x, d)));
            let jh = a.steady_state_jac(&u);
            bump(
                3,
                matrix_rel_error(&jh, &fd_jacobian_t(|v| a.steady_state(v), &u, a.state_dim())),
            );

            let hu = a.steady_state(&u);
            residual = residual.max(a.plant(&hu, &u).amax());

            deterministic &= a.grad1_cost(&x, &s) == g1
                && a.grad2_cost(&x, &s) == g2
                && a.aggregation_jac(&x) == jphi
                && a.steady_state_jac(&u) == jh
                && a.cost(&x, &s).to_bits() == a.cost(&x, &s).to_bits()
                && a.plant(&x, &u) == a.plant(&x, &u);
        }

        let x = draw(model.state_dim());
        let u = draw(model.input_dim());
        let g = model.grad_total(&x).expect("dimensions are consistent");
        let g_fd = fd_gradient(|v| model.total_cost(v).unwrap(), &x);
        bump(4, relative_error(&g, &g_fd));
        let gr = model.grad_reduced(&u).expect("dimensions are consistent");
        let gr_fd = fd_gradient(|v| model.reduced_cost(v).unwrap(), &u);
        bump(5, relative_error(&gr, &gr_fd));
    }

    FdReport {
        entries: names
            .iter()
            .zip(worst)
            .map(|(&oracle, max_rel_error)| FdEntry {
                oracle,
                max_rel_error,
            })
            .collect(),
        steady_state_residual: residual,
        deterministic,
        tolerance: opts.tolerance,
    }
}

#[cfg(test)]
pub(crate) mod test_agents {
    use super::*;

    /// Scalar/vector agent with `p = −x + u`, `h = id`,
    /// `f = (x − c)ᵀ(x − c) · k + g ‖x − s‖²`, `φ = β x`.
    #[derive(Debug, Clone)]
    pub struct ToyAgent {
        pub dim: usize,
        pub k: f64,
        pub center: f64,
        pub g: f64,
        pub beta: f64,
        pub flip_grad2: bool,
    }

    impl ToyAgent {
        pub fn new(dim: usize, k: f64, center: f64, g: f64, beta: f64) -> Self {
            Self {
                dim,
                k,
                center,
                g,
                beta,
                flip_grad2: false,
            }
        }
    }

    impl AgentModel for ToyAgent {
        fn state_dim(&self) -> usize {
            self.dim
        }
        fn input_dim(&self) -> usize {
            self.dim
        }
        fn agg_dim(&self) -> usize {
            self.dim
        }
        fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            u - x
        }
        fn steady_state(&self, u: &DVector<f64>) -> DVector<f64> {
            u.clone()
        }
        fn steady_state_jac(&self, _u: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(self.dim, self.dim)
        }
        fn cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
            let c = x.add_scalar(-self.center);
            self.k * c.norm_squared() + self.g * (x - s).norm_squared()
        }
        fn grad1_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
            x.add_scalar(-self.center) * (2.0 * self.k) + (x - s) * (2.0 * self.g)
        }
        fn grad2_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
            let sign = if self.flip_grad2 { -1.0 } else { 1.0 };
            (s - x) * (2.0 * self.g * sign)
        }
        fn aggregation(&self, x: &DVector<f64>) -> DVector<f64> {
            x * self.beta
        }
        fn aggregation_jac(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(self.dim, self.dim) * self.beta
        }
    }

    /// Nonlinear steady-state map `h(u) = u + 0.1 sin(u)` realized by
    /// `p(x, u) = −(x − u − 0.1 sin u)`.
    #[derive(Debug, Clone)]
    pub struct WarpedAgent {
        pub inner: ToyAgent,
    }

    impl AgentModel for WarpedAgent {
        fn state_dim(&self) -> usize {
            self.inner.dim
        }
        fn input_dim(&self) -> usize {
            self.inner.dim
        }
        fn agg_dim(&self) -> usize {
            self.inner.dim
        }
        fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            self.steady_state(u) - x
        }
        fn steady_state(&self, u: &DVector<f64>) -> DVector<f64> {
            u + u.map(f64::sin) * 0.1
        }
        fn steady_state_jac(&self, u: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_diagonal(&u.map(|v| 1.0 + 0.1 * v.cos()))
        }
        fn cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
            self.inner.cost(x, s) + x.map(f64::sin).sum()
        }
        fn grad1_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
            self.inner.grad1_cost(x, s) + x.map(f64::cos)
        }
        fn grad2_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
            self.inner.grad2_cost(x, s)
        }
        fn aggregation(&self, x: &DVector<f64>) -> DVector<f64> {
            x * self.inner.beta + x.map(|v| (0.5 * v).sin())
        }
        fn aggregation_jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_diagonal(&x.map(|v| self.inner.beta + 0.5 * (0.5 * v).cos()))
        }
    }

    pub fn network(agents: Vec<Arc<dyn AgentModel>>) -> NetworkModel {
        let n = agents.len();
        let graph = if n == 1 {
            NetworkGraph::from_adjacency(DMatrix::zeros(1, 1)).unwrap()
        } else {
            NetworkGraph::complete(n).unwrap()
        };
        NetworkModel::new(agents, graph).unwrap()
    }
}
