//! Closed-loop simulation: integration, sample-and-hold disturbances and
//! trajectory logging on a fixed sampling grid.

pub mod ode;

use std::io::Write;

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{metrics, network_rhs, Gains, Metrics, NetworkState};
use crate::error::{Error, Result};
use crate::model::NetworkModel;
use ode::{integrate_dopri, integrate_rk4, AdaptiveOptions, OdeSystem, StepStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    /// Dormand–Prince 4(5), adaptive.
    #[default]
    Rk45,
    /// Classical RK4, fixed step.
    Rk4,
}

impl std::str::FromStr for IntegratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk45" => Ok(Self::Rk45),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Config(format!("unknown integrator {other:?} (rk45 | rk4)"))),
        }
    }
}

/// Piecewise-constant plant disturbance: every `hold_period` seconds each
/// component of `d` is redrawn uniformly from `[−amplitude, amplitude]` and
/// added to `ẋ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub amplitude: f64,
    #[serde(default = "default_hold")]
    pub hold_period: f64,
}

fn default_hold() -> f64 {
    0.1
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "disturbance amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        if !(self.hold_period > 0.0 && self.hold_period.is_finite()) {
            return Err(Error::Config(format!(
                "disturbance hold period must be > 0, got {}",
                self.hold_period
            )));
        }
        Ok(())
    }

    /// A zero-amplitude disturbance injects nothing and is treated as absent.
    pub fn is_active(&self) -> bool {
        self.amplitude > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub gains: Gains,
    pub horizon: f64,
    pub integrator: IntegratorKind,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub step_size: f64,
    pub sample_period: f64,
    pub seed: u64,
    pub disturbance: Option<DisturbanceSpec>,
    pub divergence_bound: f64,
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gains: Gains::default(),
            horizon: 200.0,
            integrator: IntegratorKind::Rk45,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            step_size: 5e-3,
            sample_period: 0.5,
            seed: 0,
            disturbance: None,
            divergence_bound: 1e8,
            max_steps: 20_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} out of range: {v}")));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon", self.horizon);
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return bad("rel_tol", self.rel_tol);
        }
        if !(self.abs_tol > 0.0 && self.abs_tol < 1.0) {
            return bad("abs_tol", self.abs_tol);
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size", self.step_size);
        }
        if !(self.sample_period > 0.0 && self.sample_period <= self.horizon) {
            return bad("sample_period", self.sample_period);
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound", self.divergence_bound);
        }
        if let Some(d) = &self.disturbance {
            d.validate()?;
        }
        Ok(())
    }

    /// `0, P, 2P, …` up to the horizon, plus the horizon itself.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        let mut k = 0usize;
        loop {
            let t = k as f64 * self.sample_period;
            if t > self.horizon * (1.0 - 1e-12) {
                break;
            }
            times.push(t);
            k += 1;
        }
        times.push(self.horizon);
        times
    }

    fn adaptive_options(&self) -> AdaptiveOptions {
        AdaptiveOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_steps: self.max_steps,
            divergence_bound: self.divergence_bound,
        }
    }

    fn active_disturbance(&self) -> Option<DisturbanceSpec> {
        self.disturbance.filter(DisturbanceSpec::is_active)
    }
}

/// Sampled closed-loop trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub metrics: Vec<Metrics>,
    /// `(‖𝟏ᵀw‖, ‖𝟏ᵀz‖)` per sample.
    pub conservation: Vec<(f64, f64)>,
    pub stats: StepStats,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_metrics(&self) -> Option<&Metrics> {
        self.metrics.first()
    }

    pub fn last_metrics(&self) -> Option<&Metrics> {
        self.metrics.last()
    }

    pub fn final_state(&self) -> Option<&NetworkState> {
        self.states.last()
    }

    pub fn max_conservation(&self) -> (f64, f64) {
        self.conservation
            .iter()
            .fold((0.0, 0.0), |(a, b), &(w, z)| (f64::max(a, w), f64::max(b, z)))
    }

    fn push(&mut self, model: &NetworkModel, t: f64, flat: &[f64]) -> Result<()> {
        let state = NetworkState::from_flat(model, flat)?;
        let met = metrics(model, &state)?;
        let (sw, sz) = state.compensator_sums(model.agg_dim());
        self.times.push(t);
        self.metrics.push(met);
        self.conservation.push((sw.norm(), sz.norm()));
        self.states.push(state);
        Ok(())
    }

    /// Column names of [`Self::write_csv`] for `model`.
    pub fn csv_header(model: &NetworkModel) -> Vec<String> {
        let nd = model.n_agents() * model.agg_dim();
        let mut cols = vec!["t".to_string()];
        cols.extend((0..model.state_dim()).map(|k| format!("x_{k}")));
        cols.extend((0..model.input_dim()).map(|k| format!("u_{k}")));
        cols.extend((0..nd).map(|k| format!("w_{k}")));
        cols.extend((0..nd).map(|k| format!("z_{k}")));
        cols.extend(
            ["e_opt", "e_wz", "cost", "stationarity", "cons_w", "cons_z"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols
    }

    /// Writes one row per sample with 17 significant digits. `extra` appends
    /// named columns (one value per sample).
    pub fn write_csv<W: Write>(
        &self,
        model: &NetworkModel,
        extra: &[(&str, Vec<f64>)],
        mut out: W,
    ) -> std::io::Result<()> {
        let mut header = Self::csv_header(model);
        header.extend(extra.iter().map(|(name, _)| name.to_string()));
        writeln!(out, "{}", header.join(","))?;
        let mut row = Vec::with_capacity(header.len());
        for (k, t) in self.times.iter().enumerate() {
            row.clear();
            row.push(*t);
            let s = &self.states[k];
            row.extend(s.x.iter().chain(s.u.iter()).chain(s.w.iter()).chain(s.z.iter()));
            let m = &self.metrics[k];
            row.extend([m.e_opt, m.e_wz, m.cost, m.stationarity]);
            let (cw, cz) = self.conservation[k];
            row.extend([cw, cz]);
            row.extend(extra.iter().map(|(_, col)| col[k]));
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Closed loop as a first-order system over `col(x, u, w, z)`.
struct ClosedLoop<'a> {
    model: &'a NetworkModel,
    gains: Gains,
    disturbance: Option<&'a DVector<f64>>,
}

impl OdeSystem for ClosedLoop<'_> {
    fn dim(&self) -> usize {
        let nd = self.model.n_agents() * self.model.agg_dim();
        self.model.state_dim() + self.model.input_dim() + 2 * nd
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let state = NetworkState::from_flat(self.model, y)?;
        let der = network_rhs(self.model, &state, &self.gains)?;
        der.write_flat(dy);
        if let Some(d) = self.disturbance {
            for (a, b) in dy.iter_mut().zip(d.iter()) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Result of a run that may have stopped early.
#[derive(Debug)]
pub struct SimOutcome {
    /// Samples recorded up to the failure (all of them on success).
    pub log: TrajectoryLog,
    pub error: Option<Error>,
}

/// Integrates the closed loop over `[0, T]`; fails on the first integration error.
pub fn integrate(model: &NetworkModel, initial: &NetworkState, config: &SimConfig) -> Result<TrajectoryLog> {
    let outcome = integrate_outcome(model, initial, config)?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.log),
    }
}

/// Integrates the closed loop, keeping the partial log if integration fails.
/// Configuration and dimension errors are returned as `Err`.
pub fn integrate_outcome(model: &NetworkModel, initial: &NetworkState, config: &SimConfig) -> Result<SimOutcome> {
    config.validate()?;
    initial.check(model)?;
    if !initial.has_zero_compensators() {
        warn!("w(0), z(0) are not zero: the compensator averages will not stay at zero and convergence is not guaranteed");
    }
    let samples = config.sample_times();
    let mut log = TrajectoryLog::default();
    let mut y = initial.to_flat();
    log.push(model, 0.0, y.as_slice())?;

    let disturbance = config.active_disturbance();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0xD1);

    // Segment boundaries: hold instants when disturbed, otherwise the whole horizon.
    let mut breaks = vec![0.0];
    if let Some(d) = &disturbance {
        let mut k = 1usize;
        loop {
            let t = k as f64 * d.hold_period;
            if t >= config.horizon * (1.0 - 1e-12) {
                break;
            }
            breaks.push(t);
            k += 1;
        }
    }
    breaks.push(config.horizon);

    let mut stats = StepStats::default();
    let mut h_hint = None;
    let mut error = None;
    let mut d_value = DVector::zeros(y.len());
    let n = model.state_dim();
    for seg in breaks.windows(2) {
        let (t0, t1) = (seg[0], seg[1]);
        if let Some(d) = &disturbance {
            for k in 0..n {
                d_value[k] = d.amplitude * rng.random_range(-1.0..=1.0);
            }
        }
        let sys = ClosedLoop {
            model,
            gains: config.gains,
            disturbance: disturbance.as_ref().map(|_| &d_value),
        };
        let mut on_sample = |t: f64, v: &[f64]| log.push(model, t, v);
        let res = match config.integrator {
            IntegratorKind::Rk45 => integrate_dopri(
                &sys,
                t0,
                t1,
                y.as_mut_slice(),
                &samples,
                &mut h_hint,
                &config.adaptive_options(),
                &mut stats,
                &mut on_sample,
            ),
            IntegratorKind::Rk4 => integrate_rk4(
                &sys,
                t0,
                t1,
                y.as_mut_slice(),
                config.step_size,
                &samples,
                config.divergence_bound,
                &mut stats,
                &mut on_sample,
            ),
        };
        if let Err(e) = res {
            error = Some(e);
            break;
        }
    }
    log.stats = stats;
    Ok(SimOutcome { log, error })
}

/// Trajectory of the idealized centralized gradient flow `u̇ = −∇F_{σ,h}(u)`.
#[derive(Debug, Clone, Default)]
pub struct CentralizedTrajectory {
    pub times: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    /// `F_{σ,h}(u(t))`.
    pub cost: Vec<f64>,
}

struct CentralizedFlow<'a> {
    model: &'a NetworkModel,
}

impl OdeSystem for CentralizedFlow<'_> {
    fn dim(&self) -> usize {
        self.model.input_dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let g = self.model.grad_reduced(&DVector::from_column_slice(y))?;
        for (a, b) in dy.iter_mut().zip(g.iter()) {
            *a = -b;
        }
        Ok(())
    }
}

/// Integrates the centralized reference flow with exact `σ` and exact steady
/// states, using the integrator settings of `config` (gains and disturbance
/// are ignored).
pub fn run_centralized_oracle(
    model: &NetworkModel,
    u0: &DVector<f64>,
    config: &SimConfig,
) -> Result<CentralizedTrajectory> {
    config.validate()?;
    model.check_input(u0)?;
    let samples = config.sample_times();
    let mut out = CentralizedTrajectory::default();
    let mut record = |t: f64, v: &[f64]| -> Result<()> {
        let u = DVector::from_column_slice(v);
        out.cost.push(model.reduced_cost(&u)?);
        out.times.push(t);
        out.u.push(u);
        Ok(())
    };
    record(0.0, u0.as_slice())?;
    let sys = CentralizedFlow { model };
    let mut y = u0.clone();
    let mut stats = StepStats::default();
    match config.integrator {
        IntegratorKind::Rk45 => integrate_dopri(
            &sys,
            0.0,
            config.horizon,
            y.as_mut_slice(),
            &samples,
            &mut None,
            &config.adaptive_options(),
            &mut stats,
            &mut record,
        )?,
        IntegratorKind::Rk4 => integrate_rk4(
            &sys,
            0.0,
            config.horizon,
            y.as_mut_slice(),
            config.step_size,
            &samples,
            config.divergence_bound,
            &mut stats,
            &mut record,
        )?,
    }
    Ok(out)
}
