//! Multi-robot surveillance over uneven terrain.
//!
//! Robot `i` guards intruder `sᵢ` and minimizes
//! `γ₁‖xᵢ − sᵢ‖² − γ_alt z_alt(xᵢ) + γ₂‖xᵢ − σ(x)‖²` with `σ(x) = (1/N) Σ βᵢ xᵢ`
//! the weighted center of mass of the team.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::NetworkState;
use crate::error::{Error, Result};
use crate::graph::{generate_er_balanced, NetworkGraph};
use crate::model::{AgentModel, NetworkModel};

/// Radius below which the unicycle is considered at its target.
pub const UNICYCLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crevasse {
    /// Depth `a_c ≥ 0`.
    pub depth: f64,
    /// Spread `s > 0` (divides the squared distance).
    pub spread: f64,
    pub center: [f64; 2],
}

/// Sinusoidal landscape minus Gaussian crevasses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub a1: f64,
    pub rho: f64,
    pub crevasses: Vec<Crevasse>,
}

impl Terrain {
    /// `z_alt(ℓ) = −a₁ cos(ρℓ₁) sin(ρℓ₂) − Σ_g a_g exp(−‖ℓ − μ_g‖² / s_g)`.
    pub fn altitude(&self, l: [f64; 2]) -> f64 {
        let wave = -self.a1 * (self.rho * l[0]).cos() * (self.rho * l[1]).sin();
        let holes: f64 = self
            .crevasses
            .iter()
            .map(|c| {
                let r2 = (l[0] - c.center[0]).powi(2) + (l[1] - c.center[1]).powi(2);
                c.depth * (-r2 / c.spread).exp()
            })
            .sum();
        wave - holes
    }

    pub fn altitude_grad(&self, l: [f64; 2]) -> [f64; 2] {
        let (s1, c1) = (self.rho * l[0]).sin_cos();
        let (s2, c2) = (self.rho * l[1]).sin_cos();
        let mut g = [self.a1 * self.rho * s1 * s2, -self.a1 * self.rho * c1 * c2];
        for c in &self.crevasses {
            let d = [l[0] - c.center[0], l[1] - c.center[1]];
            let e = (-(d[0] * d[0] + d[1] * d[1]) / c.spread).exp();
            let k = c.depth * 2.0 / c.spread * e;
            g[0] += k * d[0];
            g[1] += k * d[1];
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// `ẋ = −x + u`.
    #[default]
    SingleIntegrator,
    /// Unicycle `(x, θ)` under a go-to-goal low-level loop.
    Unicycle,
}

impl std::str::FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_integrator" => Ok(Self::SingleIntegrator),
            "unicycle" => Ok(Self::Unicycle),
            other => Err(Error::Config(format!(
                "unknown plant {other:?} (single_integrator | unicycle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleState {
    pub position: [f64; 2],
    /// Unwrapped heading in radians.
    pub heading: f64,
}

/// Go-to-goal closed loop of a unicycle: returns `(ẋ, θ̇)`.
///
/// `θ̃ = atan2(u₂ − x₂, u₁ − x₁) − θ`, `v = k‖x − u‖ cos θ̃`,
/// `ω = k(cos θ̃ sin θ̃ + sin θ̃)`. The first term of `ω` cancels the bearing
/// drift `k cos θ̃ sin θ̃` caused by `v`, so the heading error obeys
/// `θ̃' = −k sin θ̃` and the distance `ρ' = −kρ cos²θ̃`. Inside the `ε`-ball
/// both commands are zero.
pub fn unicycle_closed_loop(k: f64, state: &UnicycleState, target: [f64; 2]) -> ([f64; 2], f64) {
    let dx = target[0] - state.position[0];
    let dy = target[1] - state.position[1];
    let dist = dx.hypot(dy);
    if dist < UNICYCLE_EPS {
        return ([0.0, 0.0], 0.0);
    }
    let bearing = dy.atan2(dx) - state.heading;
    let (sb, cb) = bearing.sin_cos();
    let v = k * dist * cb;
    let omega = k * cb * sb + k * sb;
    let (sh, ch) = state.heading.sin_cos();
    ([ch * v, sh * v], omega)
}

/// One robot of the surveillance team.
#[derive(Debug, Clone)]
pub struct SurveillanceAgent {
    pub intruder: [f64; 2],
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_alt: f64,
    pub terrain: Arc<Terrain>,
    pub plant: PlantKind,
    /// Low-level gain of the unicycle loop.
    pub k: f64,
}

impl SurveillanceAgent {
    fn pos(x: &DVector<f64>) -> [f64; 2] {
        [x[0], x[1]]
    }

    fn pad(&self, v: [f64; 2]) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        out[0] = v[0];
        out[1] = v[1];
        out
    }
}

impl AgentModel for SurveillanceAgent {
    fn state_dim(&self) -> usize {
        match self.plant {
            PlantKind::SingleIntegrator => 2,
            PlantKind::Unicycle => 3,
        }
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn agg_dim(&self) -> usize {
        2
    }

    fn settled_dim(&self) -> usize {
        2
    }

    fn plant(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self.plant {
            PlantKind::SingleIntegrator => u - x,
            PlantKind::Unicycle => {
                let state = UnicycleState {
                    position: Self::pos(x),
                    heading: x[2],
                };
                let (v, omega) = unicycle_closed_loop(self.k, &state, [u[0], u[1]]);
                DVector::from_vec(vec![v[0], v[1], omega])
            }
        }
    }

    fn steady_state(&self, u: &DVector<f64>) -> DVector<f64> {
        self.pad([u[0], u[1]])
    }

    fn steady_state_jac(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, self.state_dim())
    }

    fn cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
        let p = Self::pos(x);
        let to_intruder = (p[0] - self.intruder[0]).powi(2) + (p[1] - self.intruder[1]).powi(2);
        let to_center = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2);
        self.gamma1 * to_intruder - self.gamma_alt * self.terrain.altitude(p) + self.gamma2 * to_center
    }

    fn grad1_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let p = Self::pos(x);
        let gz = self.terrain.altitude_grad(p);
        let g = [0, 1].map(|k| {
            2.0 * self.gamma1 * (p[k] - self.intruder[k]) - self.gamma_alt * gz[k]
                + 2.0 * self.gamma2 * (p[k] - s[k])
        });
        self.pad(g)
    }

    fn grad2_cost(&self, x: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            -2.0 * self.gamma2 * (x[0] - s[0]),
            -2.0 * self.gamma2 * (x[1] - s[1]),
        ])
    }

    fn aggregation(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.beta * x[0], self.beta * x[1]])
    }

    fn aggregation_jac(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), 2) * self.beta
    }
}

/// Parameters of the surveillance scenario. Anything left `None` is drawn
/// from the seeded stream within its documented range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveillanceConfig {
    pub n_agents: usize,
    pub er_prob: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Weight of the altitude term (`0` gives the convexified variant).
    pub gamma_alt: f64,
    pub n_crevasses: usize,
    pub a1: f64,
    pub rho: f64,
    /// Side of the square arena `[0, L]²`.
    pub arena: f64,
    pub max_crevasse_depth: f64,
    pub crevasse_spread: [f64; 2],
    /// Range of the unicycle gains `k_i`.
    pub unicycle_gain: [f64; 2],
    pub plant: PlantKind,
    pub seed: u64,
    pub intruders: Option<Vec<[f64; 2]>>,
    pub betas: Option<Vec<f64>>,
    pub crevasses: Option<Vec<Crevasse>>,
    pub gains_k: Option<Vec<f64>>,
}

impl Default for SurveillanceConfig {
    fn default() -> Self {
        Self {
            n_agents: 6,
            er_prob: 0.4,
            gamma1: 1.0,
            gamma2: 0.3,
            gamma_alt: 1.0,
            n_crevasses: 5,
            a1: 10.0,
            rho: 0.02,
            arena: 100.0,
            max_crevasse_depth: 5.0,
            crevasse_spread: [5.0, 10.0],
            unicycle_gain: [3.0, 6.0],
            plant: PlantKind::SingleIntegrator,
            seed: 0,
            intruders: None,
            betas: None,
            crevasses: None,
            gains_k: None,
        }
    }
}

/// Fully materialized scenario.
#[derive(Debug, Clone)]
pub struct Surveillance {
    pub config: SurveillanceConfig,
    pub terrain: Arc<Terrain>,
    pub intruders: Vec<[f64; 2]>,
    pub betas: Vec<f64>,
    pub gains_k: Vec<f64>,
    pub graph: NetworkGraph,
}

fn uniform_open(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

impl SurveillanceConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return fail("surveillance needs at least one agent".into());
        }
        if !(self.er_prob > 0.0 && self.er_prob <= 1.0) {
            return fail(format!("er_prob must be in (0, 1], got {}", self.er_prob));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0 && self.gamma_alt >= 0.0) {
            return fail("gamma1, gamma2, gamma_alt must be nonnegative".into());
        }
        if !(self.a1 >= 0.0 && self.rho >= 0.0 && self.arena > 0.0 && self.max_crevasse_depth >= 0.0) {
            return fail("a1, rho, max_crevasse_depth must be >= 0 and arena > 0".into());
        }
        let [s0, s1] = self.crevasse_spread;
        if !(s0 > 0.0 && s1 > s0) {
            return fail(format!("crevasse_spread must satisfy 0 < lo < hi, got {:?}", self.crevasse_spread));
        }
        let [k0, k1] = self.unicycle_gain;
        if !(k0 > 0.0 && k1 >= k0) {
            return fail(format!("unicycle_gain must satisfy 0 < lo <= hi, got {:?}", self.unicycle_gain));
        }
        let n = self.n_agents;
        let check_len = |what: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(Error::Config(format!("{what} lists {l} entries for {n} agents"))),
            _ => Ok(()),
        };
        check_len("intruders", self.intruders.as_ref().map(Vec::len))?;
        check_len("betas", self.betas.as_ref().map(Vec::len))?;
        check_len("gains_k", self.gains_k.as_ref().map(Vec::len))?;
        if let Some(b) = &self.betas {
            if b.iter().any(|v| !(*v > 0.0)) {
                return fail("betas must be positive".into());
            }
        }
        if let Some(k) = &self.gains_k {
            if k.iter().any(|v| !(*v > 0.0)) {
                return fail("gains_k must be positive".into());
            }
        }
        if let Some(c) = &self.crevasses {
            if c.iter().any(|c| !(c.depth >= 0.0 && c.spread > 0.0)) {
                return fail("crevasses need depth >= 0 and spread > 0".into());
            }
        }
        Ok(())
    }

    /// Draws every unspecified quantity and builds the communication graph.
    pub fn resolve(&self) -> Result<Surveillance> {
        self.validate()?;
        let n = self.n_agents;
        let graph = if n == 1 {
            NetworkGraph::from_adjacency(DMatrix::zeros(1, 1))?
        } else {
            generate_er_balanced(n, self.er_prob, self.seed)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let side = self.arena;
        // Fixed draw order keeps every quantity reproducible whether or not
        // the others were overridden.
        let drawn_crevasses: Vec<Crevasse> = (0..self.n_crevasses)
            .map(|_| Crevasse {
                depth: rng.random_range(0.0..=self.max_crevasse_depth),
                spread: uniform_open(&mut rng, self.crevasse_spread[0], self.crevasse_spread[1]),
                center: [rng.random_range(0.0..=side), rng.random_range(0.0..=side)],
            })
            .collect();
        let drawn_intruders: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..=side), rng.random_range(0.0..=side)])
            .collect();
        let drawn_betas: Vec<f64> = (0..n).map(|_| uniform_open(&mut rng, 0.0, 1.0)).collect();
        let drawn_k: Vec<f64> = (0..n)
            .map(|_| rng.random_range(self.unicycle_gain[0]..=self.unicycle_gain[1]))
            .collect();

        let terrain = Arc::new(Terrain {
            a1: self.a1,
            rho: self.rho,
            crevasses: self.crevasses.clone().unwrap_or(drawn_crevasses),
        });
        let resolved = Surveillance {
            config: self.clone(),
            terrain,
            intruders: self.intruders.clone().unwrap_or(drawn_intruders),
            betas: self.betas.clone().unwrap_or(drawn_betas),
            gains_k: self.gains_k.clone().unwrap_or(drawn_k),
            graph,
        };
        Ok(resolved)
    }
}

impl Surveillance {
    pub fn agents(&self) -> Vec<SurveillanceAgent> {
        (0..self.config.n_agents)
            .map(|i| SurveillanceAgent {
                intruder: self.intruders[i],
                beta: self.betas[i],
                gamma1: self.config.gamma1,
                gamma2: self.config.gamma2,
                gamma_alt: self.config.gamma_alt,
                terrain: Arc::clone(&self.terrain),
                plant: self.config.plant,
                k: self.gains_k[i],
            })
            .collect()
    }

    pub fn model(&self) -> Result<NetworkModel> {
        let agents = self
            .agents()
            .into_iter()
            .map(|a| Arc::new(a) as Arc<dyn AgentModel>)
            .collect();
        NetworkModel::new(agents, self.graph.clone())
    }

    /// Random `x(0)`, `u(0)` in the arena (headings in `[−π, π]`), `w = z = 0`.
    pub fn initial_state(&self, model: &NetworkModel) -> Result<NetworkState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2);
        let side = self.config.arena;
        let mut x = Vec::with_capacity(model.state_dim());
        let mut u = Vec::with_capacity(model.input_dim());
        for _ in 0..self.config.n_agents {
            x.push(rng.random_range(0.0..=side));
            x.push(rng.random_range(0.0..=side));
            if self.config.plant == PlantKind::Unicycle {
                x.push(rng.random_range(-PI..=PI));
            }
            u.push(rng.random_range(0.0..=side));
            u.push(rng.random_range(0.0..=side));
        }
        NetworkState::with_zero_compensators(model, DVector::from_vec(x), DVector::from_vec(u))
    }
}

/// Convenience: resolve, build the model and the initial state.
pub fn surveillance_model(cfg: &SurveillanceConfig) -> Result<(Surveillance, NetworkModel)> {
    let resolved = cfg.resolve()?;
    let model = resolved.model()?;
    Ok((resolved, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fd_gradient, finite_diff_check, relative_error, FdCheckOptions};

    fn flat_terrain() -> Arc<Terrain> {
        Arc::new(Terrain {
            a1: 0.0,
            rho: 0.02,
            crevasses: vec![],
        })
    }

    #[test]
    fn altitude_examples() {
        let t = Terrain {
            a1: 10.0,
            rho: 0.02,
            crevasses: vec![],
        };
        assert_eq!(t.altitude([0.0, 0.0]), 0.0);
        let t = Terrain {
            a1: 0.0,
            rho: 0.02,
            crevasses: vec![Crevasse {
                depth: 3.5,
                spread: 7.0,
                center: [40.0, 60.0],
            }],
        };
        assert_eq!(t.altitude([40.0, 60.0]), -3.5);
    }

    #[test]
    fn altitude_gradient_matches_fd() {
        for seed in 0..10 {
            let s = SurveillanceConfig {
                seed,
                ..Default::default()
            }
            .resolve()
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                // near the crevasses, where the gradient is largest
                let c = s.terrain.crevasses[rng.random_range(0..5)].center;
                let l = DVector::from_vec(vec![c[0] + rng.random_range(-4.0..4.0), c[1] + rng.random_range(-4.0..4.0)]);
                let g = s.terrain.altitude_grad([l[0], l[1]]);
                let fd = fd_gradient(|v| s.terrain.altitude([v[0], v[1]]), &l);
                assert!(relative_error(&DVector::from_vec(g.to_vec()), &fd) < 1e-7);
            }
        }
    }

    #[test]
    fn single_agent_minimizer_is_its_intruder() {
        let a = SurveillanceAgent {
            intruder: [30.0, 70.0],
            beta: 1.0,
            gamma1: 1.0,
            gamma2: 0.3,
            gamma_alt: 0.0,
            terrain: flat_terrain(),
            plant: PlantKind::SingleIntegrator,
            k: 1.0,
        };
        let model = NetworkModel::new(
            vec![Arc::new(a)],
            NetworkGraph::from_adjacency(DMatrix::zeros(1, 1)).unwrap(),
        )
        .unwrap();
        let u = DVector::from_vec(vec![30.0, 70.0]);
        assert_eq!(model.grad_reduced(&u).unwrap().amax(), 0.0);
    }

    #[test]
    fn grad2_sums_vanish_with_unit_weights() {
        let mut cfg = SurveillanceConfig::default();
        cfg.betas = Some(vec![1.0; 6]);
        let (_, model) = surveillance_model(&cfg).unwrap();
        let x = DVector::from_fn(12, |i, _| (i as f64 * 13.0) % 100.0);
        let s = model.sigma(&x).unwrap();
        let mut total = DVector::zeros(2);
        for i in 0..6 {
            total += model.agent(i).grad2_cost(&model.x_block(&x, i), &s);
        }
        assert!(total.amax() < 1e-12);
    }

    #[test]
    fn surveillance_oracles_pass_fd_check() {
        for plant in [PlantKind::SingleIntegrator, PlantKind::Unicycle] {
            for seed in 0..10 {
                let cfg = SurveillanceConfig {
                    seed,
                    plant,
                    ..Default::default()
                };
                let (_, model) = surveillance_model(&cfg).unwrap();
                let report = finite_diff_check(
                    &model,
                    &FdCheckOptions {
                        samples: 5,
                        seed,
                        lo: 0.0,
                        hi: 100.0,
                        tolerance: 1e-6,
                    },
                );
                assert!(report.passed(), "{plant:?} seed {seed}: {report:?}");
            }
        }
    }

    #[test]
    fn draws_respect_ranges_and_are_reproducible() {
        for seed in 0..10 {
            let cfg = SurveillanceConfig {
                seed,
                ..Default::default()
            };
            let a = cfg.resolve().unwrap();
            let b = cfg.resolve().unwrap();
            assert_eq!(a.intruders, b.intruders);
            assert_eq!(a.betas, b.betas);
            assert_eq!(a.graph, b.graph);
            assert_eq!(*a.terrain, *b.terrain);
            a.graph.validate().unwrap();
            assert!(a.betas.iter().all(|&v| v > 0.0 && v < 1.0));
            for c in &a.terrain.crevasses {
                assert!((0.0..=5.0).contains(&c.depth));
                assert!(c.spread > 5.0 && c.spread < 10.0);
                assert!(c.center.iter().all(|v| (0.0..=100.0).contains(v)));
            }
            assert!(a.intruders.iter().flatten().all(|v| (0.0..=100.0).contains(v)));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SurveillanceConfig::default();
        cfg.betas = Some(vec![0.5; 3]);
        assert!(cfg.resolve().is_err());
        let cfg = SurveillanceConfig {
            er_prob: 0.0,
            ..Default::default()
        };
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn unicycle_examples() {
        let at = UnicycleState {
            position: [2.0, 3.0],
            heading: 0.7,
        };
        assert_eq!(unicycle_closed_loop(1.5, &at, [2.0, 3.0]), ([0.0, 0.0], 0.0));

        let origin = UnicycleState {
            position: [0.0, 0.0],
            heading: 0.0,
        };
        let (v, w) = unicycle_closed_loop(2.0, &origin, [1.0, 0.0]);
        assert_eq!((v, w), ([2.0, 0.0], 0.0));

        let (v, w) = unicycle_closed_loop(2.0, &origin, [-3.0, 0.0]);
        // bearing π: drives backward, sin π ≈ 1e-16 leaves ω at rounding level
        assert!((v[0] + 6.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        assert!(w.abs() < 1e-14);
    }

    #[test]
    fn unicycle_plant_equilibrium() {
        let a = SurveillanceAgent {
            intruder: [0.0, 0.0],
            beta: 0.5,
            gamma1: 1.0,
            gamma2: 0.3,
            gamma_alt: 1.0,
            terrain: flat_terrain(),
            plant: PlantKind::Unicycle,
            k: 1.0,
        };
        let u = DVector::from_vec(vec![10.0, 20.0]);
        assert_eq!(a.plant(&a.steady_state(&u), &u), DVector::zeros(3));
        let si = SurveillanceAgent {
            plant: PlantKind::SingleIntegrator,
            ..a
        };
        assert_eq!(si.plant(&si.steady_state(&u), &u), DVector::zeros(2));
    }
}
