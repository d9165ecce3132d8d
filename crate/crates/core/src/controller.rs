//! Closed-loop dynamics of the distributed feedback-optimization law.
//!
//! Each agent integrates
//!
//! ```text
//! ẋᵢ = pᵢ(xᵢ, uᵢ)
//! u̇ᵢ = −α₁ ∇hᵢ(uᵢ) [∇₁fᵢ(xᵢ, ŝᵢ) + ∇φᵢ(xᵢ)(zᵢ + ∇₂fᵢ(xᵢ, ŝᵢ))],   ŝᵢ = wᵢ + φᵢ(xᵢ)
//! ẇᵢ = −(α₁/α₂) Σⱼ aᵢⱼ [(wᵢ + φᵢ(xᵢ)) − (wⱼ + φⱼ(xⱼ))]
//! żᵢ = −(α₁/α₂) Σⱼ aᵢⱼ [(zᵢ + ∇₂fᵢ(xᵢ, ŝᵢ)) − (zⱼ + ∇₂fⱼ(xⱼ, ŝⱼ))]
//! ```
//!
//! using only its own oracles and the `2d` reals broadcast by each in-neighbour.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentModel, NetworkModel};

/// Timescale gains. `alpha1` slows the controller relative to the plant,
/// `alpha2` speeds the compensators up relative to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Gains {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        let g = Self { alpha1, alpha2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) || !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!(
                "gains must be positive and finite, got alpha1 = {}, alpha2 = {}",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }

    /// Consensus rate `α₁/α₂`.
    pub fn consensus_rate(&self) -> f64 {
        self.alpha1 / self.alpha2
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            alpha1: 0.75,
            alpha2: 0.01,
        }
    }
}

/// Stacked closed-loop state `(x, u, w, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

impl NetworkState {
    /// Initial state with `w = z = 0`.
    pub fn with_zero_compensators(model: &NetworkModel, x: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        let nd = model.n_agents() * model.agg_dim();
        let s = Self {
            x,
            u,
            w: DVector::zeros(nd),
            z: DVector::zeros(nd),
        };
        s.check(model)?;
        Ok(s)
    }

    pub fn check(&self, model: &NetworkModel) -> Result<()> {
        model.check_state(&self.x)?;
        model.check_input(&self.u)?;
        let nd = model.n_agents() * model.agg_dim();
        if self.w.len() != nd || self.z.len() != nd {
            return Err(Error::Dimension(format!(
                "compensators have lengths ({}, {}), expected {nd}",
                self.w.len(),
                self.z.len()
            )));
        }
        Ok(())
    }

    /// Whether `w = z = 0`, the initialization under which the average of the
    /// compensators stays at zero.
    pub fn has_zero_compensators(&self) -> bool {
        self.w.iter().chain(self.z.iter()).all(|v| *v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.u.len() + self.w.len() + self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `col(x, u, w, z)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        self.write_flat(out.as_mut_slice());
        out
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let mut k = 0;
        for part in [&self.x, &self.u, &self.w, &self.z] {
            out[k..k + part.len()].copy_from_slice(part.as_slice());
            k += part.len();
        }
    }

    pub fn from_flat(model: &NetworkModel, flat: &[f64]) -> Result<Self> {
        let (n, m) = (model.state_dim(), model.input_dim());
        let nd = model.n_agents() * model.agg_dim();
        if flat.len() != n + m + 2 * nd {
            return Err(Error::Dimension(format!(
                "flat state has length {}, expected {}",
                flat.len(),
                n + m + 2 * nd
            )));
        }
        Ok(Self {
            x: DVector::from_column_slice(&flat[..n]),
            u: DVector::from_column_slice(&flat[n..n + m]),
            w: DVector::from_column_slice(&flat[n + m..n + m + nd]),
            z: DVector::from_column_slice(&flat[n + m + nd..]),
        })
    }

    /// `Σᵢ wᵢ` and `Σᵢ zᵢ`, i.e. `𝟏ᵀw` and `𝟏ᵀz`.
    pub fn compensator_sums(&self, agg_dim: usize) -> (DVector<f64>, DVector<f64>) {
        let sum = |v: &DVector<f64>| {
            let mut acc = DVector::zeros(agg_dim);
            for chunk in v.as_slice().chunks(agg_dim) {
                for (a, c) in acc.iter_mut().zip(chunk) {
                    *a += c;
                }
            }
            acc
        };
        (sum(&self.w), sum(&self.z))
    }
}

/// One agent's slice of the network state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

impl AgentState {
    pub fn of(model: &NetworkModel, state: &NetworkState, i: usize) -> Self {
        Self {
            x: model.x_block(&state.x, i),
            u: model.u_block(&state.u, i),
            w: model.agg_block(&state.w, i),
            z: model.agg_block(&state.z, i),
        }
    }
}

/// The `2d` reals agent `j` broadcasts: `wⱼ + φⱼ(xⱼ)` and
/// `zⱼ + ∇₂fⱼ(xⱼ, wⱼ + φⱼ(xⱼ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub w_part: DVector<f64>,
    pub z_part: DVector<f64>,
}

impl Message {
    pub fn broadcast(agent: &dyn AgentModel, local: &AgentState) -> Self {
        let estimate = &local.w + agent.aggregation(&local.x);
        let z_part = &local.z + agent.grad2_cost(&local.x, &estimate);
        Self {
            w_part: estimate,
            z_part,
        }
    }
}

/// A message received by agent `i` together with the weight `a_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMessage {
    pub weight: f64,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDerivative {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

fn check_agent_dims(agent: &dyn AgentModel, local: &AgentState) -> Result<()> {
    let d = agent.agg_dim();
    if local.x.len() != agent.state_dim()
        || local.u.len() != agent.input_dim()
        || local.w.len() != d
        || local.z.len() != d
    {
        return Err(Error::Dimension(format!(
            "agent state lengths (x {}, u {}, w {}, z {}) do not match model (n {}, m {}, d {d})",
            local.x.len(),
            local.u.len(),
            local.w.len(),
            local.z.len(),
            agent.state_dim(),
            agent.input_dim()
        )));
    }
    Ok(())
}

/// Closed-loop right-hand side of one agent given its in-neighbour messages.
pub fn agent_rhs(
    agent: &dyn AgentModel,
    local: &AgentState,
    neighbors: &[WeightedMessage],
    gains: &Gains,
) -> Result<AgentDerivative> {
    if neighbors.is_empty() {
        return Err(Error::InvalidGraph(
            "agent has no in-neighbours; a strongly connected graph with N ≥ 2 always provides one".into(),
        ));
    }
    agent_rhs_inner(agent, local, neighbors, gains)
}

fn agent_rhs_inner(
    agent: &dyn AgentModel,
    local: &AgentState,
    neighbors: &[WeightedMessage],
    gains: &Gains,
) -> Result<AgentDerivative> {
    check_agent_dims(agent, local)?;
    let d = agent.agg_dim();
    if let Some(bad) = neighbors
        .iter()
        .find(|m| m.message.w_part.len() != d || m.message.z_part.len() != d)
    {
        return Err(Error::Dimension(format!(
            "neighbour message carries ({}, {}) reals, expected ({d}, {d})",
            bad.message.w_part.len(),
            bad.message.z_part.len()
        )));
    }

    let x_dot = agent.plant(&local.x, &local.u);

    let estimate = &local.w + agent.aggregation(&local.x);
    let grad2 = agent.grad2_cost(&local.x, &estimate);
    let descent = agent.grad1_cost(&local.x, &estimate)
        + agent.aggregation_jac(&local.x) * (&local.z + &grad2);
    let u_dot = agent.steady_state_jac(&local.u) * descent * (-gains.alpha1);

    let own_z = &local.z + &grad2;
    let mut w_dot = DVector::zeros(d);
    let mut z_dot = DVector::zeros(d);
    for m in neighbors {
        w_dot += (&estimate - &m.message.w_part) * m.weight;
        z_dot += (&own_z - &m.message.z_part) * m.weight;
    }
    let k = -gains.consensus_rate();
    Ok(AgentDerivative {
        x: x_dot,
        u: u_dot,
        w: w_dot * k,
        z: z_dot * k,
    })
}

/// Derivative of agent `i` inside the network, reading only agent `i`'s own
/// block and the blocks of its in-neighbours.
pub fn agent_derivative_in_network(
    model: &NetworkModel,
    state: &NetworkState,
    i: usize,
    gains: &Gains,
) -> Result<AgentDerivative> {
    let agent = model.agent(i);
    let local = AgentState::of(model, state, i);
    let inbox: Vec<WeightedMessage> = model
        .graph()
        .in_neighbors(i)
        .map(|(j, weight)| WeightedMessage {
            weight,
            message: Message::broadcast(model.agent(j), &AgentState::of(model, state, j)),
        })
        .collect();
    if model.n_agents() == 1 {
        agent_rhs_inner(agent, &local, &inbox, gains)
    } else {
        agent_rhs(agent, &local, &inbox, gains)
    }
}

/// Stacked closed-loop derivative assembled agent by agent.
pub fn network_rhs(model: &NetworkModel, state: &NetworkState, gains: &Gains) -> Result<NetworkState> {
    state.check(model)?;
    let mut out = NetworkState {
        x: DVector::zeros(state.x.len()),
        u: DVector::zeros(state.u.len()),
        w: DVector::zeros(state.w.len()),
        z: DVector::zeros(state.z.len()),
    };
    let d = model.agg_dim();
    // Broadcasts once per agent; each agent then reads only its inbox.
    let messages: Vec<Message> = (0..model.n_agents())
        .map(|j| Message::broadcast(model.agent(j), &AgentState::of(model, state, j)))
        .collect();
    for i in 0..model.n_agents() {
        let inbox: Vec<WeightedMessage> = model
            .graph()
            .in_neighbors(i)
            .map(|(j, weight)| WeightedMessage {
                weight,
                message: messages[j].clone(),
            })
            .collect();
        let local = AgentState::of(model, state, i);
        let der = if model.n_agents() == 1 {
            agent_rhs_inner(model.agent(i), &local, &inbox, gains)?
        } else {
            agent_rhs(model.agent(i), &local, &inbox, gains)?
        };
        let (rx, ru) = (model.state_range(i), model.input_range(i));
        out.x.rows_mut(rx.start, rx.len()).copy_from(&der.x);
        out.u.rows_mut(ru.start, ru.len()).copy_from(&der.u);
        out.w.rows_mut(i * d, d).copy_from(&der.w);
        out.z.rows_mut(i * d, d).copy_from(&der.z);
    }
    Ok(out)
}

/// Same derivative through the stacked Laplacian form:
/// `ẇ = −(α₁/α₂) L (w + φ(x))`, `ż = −(α₁/α₂) L (z + G₂(x, w + φ(x)))`.
pub fn network_rhs_stacked(model: &NetworkModel, state: &NetworkState, gains: &Gains) -> Result<NetworkState> {
    state.check(model)?;
    let d = model.agg_dim();
    let n_agents = model.n_agents();
    let lap = model.graph().laplacian(d).laplacian_big;

    let estimate = &state.w + model.phi_stacked(&state.x);
    let g2 = model.grad2_stacked(&state.x, &estimate);

    let mut g1 = DVector::zeros(model.state_dim());
    let mut phi_jac = DMatrix::zeros(model.state_dim(), n_agents * d);
    let mut x_dot = DVector::zeros(model.state_dim());
    for i in 0..n_agents {
        let a = model.agent(i);
        let r = model.state_range(i);
        let xi = model.x_block(&state.x, i);
        let si = model.agg_block(&estimate, i);
        g1.rows_mut(r.start, r.len()).copy_from(&a.grad1_cost(&xi, &si));
        phi_jac
            .view_mut((r.start, i * d), (r.len(), d))
            .copy_from(&a.aggregation_jac(&xi));
        x_dot
            .rows_mut(r.start, r.len())
            .copy_from(&a.plant(&xi, &model.u_block(&state.u, i)));
    }
    let h_jac = model.steady_state_jac(&state.u)?;
    let u_dot = h_jac * (g1 + phi_jac * (&state.z + &g2)) * (-gains.alpha1);
    let k = -gains.consensus_rate();
    Ok(NetworkState {
        x: x_dot,
        u: u_dot,
        w: &lap * estimate * k,
        z: &lap * (&state.z + g2) * k,
    })
}

/// `π^w(x)`: block `i` is `σ(x) − φᵢ(xᵢ)`.
pub fn pi_w(model: &NetworkModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let s = model.sigma(x)?;
    let phi = model.phi_stacked(x);
    let mut out = -phi;
    for chunk in out.as_mut_slice().chunks_mut(model.agg_dim()) {
        for (c, v) in chunk.iter_mut().zip(s.iter()) {
            *c += v;
        }
    }
    Ok(out)
}

/// `π^z(x)`: block `i` is `(1/N) Σⱼ ∇₂fⱼ(xⱼ, σ) − ∇₂fᵢ(xᵢ, σ)`.
pub fn pi_z(model: &NetworkModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let s = model.sigma(x)?;
    let d = model.agg_dim();
    let n = model.n_agents();
    let mut g2 = DVector::zeros(n * d);
    for i in 0..n {
        g2.rows_mut(i * d, d)
            .copy_from(&model.agent(i).grad2_cost(&model.x_block(x, i), &s));
    }
    let mut mean = DVector::zeros(d);
    for chunk in g2.as_slice().chunks(d) {
        mean += DVector::from_column_slice(chunk);
    }
    mean /= n as f64;
    let mut out = -g2;
    for chunk in out.as_mut_slice().chunks_mut(d) {
        for (c, v) in chunk.iter_mut().zip(mean.iter()) {
            *c += v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `‖col(x − h(u), ∇F_{σ,h}(u))‖`.
    pub e_opt: f64,
    /// `‖col(w − π^w(x), z − π^z(x))‖`.
    pub e_wz: f64,
    /// `F(x, σ(x))`.
    pub cost: f64,
    /// `‖∇F_{σ,h}(u)‖`.
    pub stationarity: f64,
}

pub fn metrics(model: &NetworkModel, state: &NetworkState) -> Result<Metrics> {
    state.check(model)?;
    let settle = model.settling_error(&state.x, &state.u)?;
    let grad = model.grad_reduced(&state.u)?;
    let stationarity = grad.norm();
    let e_opt = (settle.norm_squared() + grad.norm_squared()).sqrt();
    let dw = &state.w - pi_w(model, &state.x)?;
    let dz = &state.z - pi_z(model, &state.x)?;
    let e_wz = (dw.norm_squared() + dz.norm_squared()).sqrt();
    Ok(Metrics {
        e_opt,
        e_wz,
        cost: model.total_cost(&state.x)?,
        stationarity,
    })
}
