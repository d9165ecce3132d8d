//! Offline analysis of closed-loop trajectories.
//!
//! The compensators are split into disagreement and average coordinates with
//! `T = [R  𝟏/N]ᵀ`. The disagreement part `ψ = col(Rᵀw, Rᵀz)` is compared with
//! its quasi-steady state `ψ̄(x) = −blkdiag(Rᵀ, Rᵀ) col(φ(x), G₂(x, 𝟏σ(x)))`,
//! and the error `ξ = ψ − ψ̄(x)` is measured with a quadratic Lyapunov
//! function `U(ξ) = ξᵀ blkdiag(P₁, P₂) ξ` certified from the graph.

use nalgebra::{DMatrix, DVector};

use crate::controller::NetworkState;
use crate::error::{Error, Result};
use crate::graph::{build_consensus_basis, ConsensusBasis, NetworkGraph};
use crate::linalg::{min_real_eigenvalue, solve_lyapunov, symmetric_eigen_range};
use crate::model::NetworkModel;
use crate::sim::TrajectoryLog;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedState {
    pub eta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub eta_avg: DVector<f64>,
    pub zeta_avg: DVector<f64>,
    pub xi: DVector<f64>,
}

impl TransformedState {
    /// Inverts the change of coordinates: `w = R η + 𝟏 η_avg`, `z = R ζ + 𝟏 ζ_avg`.
    pub fn reconstruct(&self, basis: &ConsensusBasis) -> (DVector<f64>, DVector<f64>) {
        let ones = basis.ones();
        (
            &basis.r_matrix * &self.eta + &ones * &self.eta_avg,
            &basis.r_matrix * &self.zeta + &ones * &self.zeta_avg,
        )
    }
}

fn check_basis(model: &NetworkModel, basis: &ConsensusBasis) -> Result<()> {
    if basis.n_agents != model.n_agents() || basis.block_dim != model.agg_dim() {
        return Err(Error::Dimension(format!(
            "basis built for N = {}, d = {} but model has N = {}, d = {}",
            basis.n_agents,
            basis.block_dim,
            model.n_agents(),
            model.agg_dim()
        )));
    }
    Ok(())
}

/// `ψ̄(x)`.
pub fn psi_bar(model: &NetworkModel, x: &DVector<f64>, basis: &ConsensusBasis) -> Result<DVector<f64>> {
    check_basis(model, basis)?;
    let s = model.sigma(x)?;
    let d = model.agg_dim();
    let consensus = DVector::from_fn(model.n_agents() * d, |r, _| s[r % d]);
    let rt = basis.r_matrix.transpose();
    let top = &rt * model.phi_stacked(x);
    let bottom = &rt * model.grad2_stacked(x, &consensus);
    let k = top.len();
    let mut out = DVector::zeros(2 * k);
    out.rows_mut(0, k).copy_from(&(-top));
    out.rows_mut(k, k).copy_from(&(-bottom));
    Ok(out)
}

pub fn transform(model: &NetworkModel, state: &NetworkState, basis: &ConsensusBasis) -> Result<TransformedState> {
    check_basis(model, basis)?;
    state.check(model)?;
    let rt = basis.r_matrix.transpose();
    let avg = basis.ones().transpose() / model.n_agents() as f64;
    let eta = &rt * &state.w;
    let zeta = &rt * &state.z;
    let k = eta.len();
    let mut psi = DVector::zeros(2 * k);
    psi.rows_mut(0, k).copy_from(&eta);
    psi.rows_mut(k, k).copy_from(&zeta);
    let xi = psi - psi_bar(model, &state.x, basis)?;
    Ok(TransformedState {
        eta_avg: &avg * &state.w,
        zeta_avg: &avg * &state.z,
        eta,
        zeta,
        xi,
    })
}

#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub basis: ConsensusBasis,
    /// `RᵀLR`.
    pub reduced_laplacian: DMatrix<f64>,
    pub q1: f64,
    pub q2: f64,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
}

impl LyapunovCertificate {
    /// `P = blkdiag(P₁, P₂)`.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        let k = self.p1.nrows();
        let mut p = DMatrix::zeros(2 * k, 2 * k);
        p.view_mut((0, 0), (k, k)).copy_from(&self.p1);
        p.view_mut((k, k), (k, k)).copy_from(&self.p2);
        p
    }

    /// `U(ξ) = ξᵀ P ξ`.
    pub fn u_value(&self, xi: &DVector<f64>) -> f64 {
        let k = self.p1.nrows();
        let (a, b) = (xi.rows(0, k), xi.rows(k, k));
        a.dot(&(&self.p1 * a)) + b.dot(&(&self.p2 * b))
    }

    /// `max‖−P_k A − Aᵀ P_k + q_k I‖` over `k = 1, 2` with `A = RᵀLR`.
    pub fn residual(&self) -> f64 {
        let a = &self.reduced_laplacian;
        let k = a.nrows();
        let res = |p: &DMatrix<f64>, q: f64| {
            (-(p * a) - a.transpose() * p + DMatrix::identity(k, k) * q).amax()
        };
        res(&self.p1, self.q1).max(res(&self.p2, self.q2))
    }

    /// `(λ_min, λ_max)` of `P`.
    pub fn eigen_range(&self) -> (f64, f64) {
        let (a0, a1) = symmetric_eigen_range(&self.p1);
        let (b0, b1) = symmetric_eigen_range(&self.p2);
        (a0.min(b0), a1.max(b1))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigen_range().0 > 0.0
            && (&self.p1 - self.p1.transpose()).amax() == 0.0
            && (&self.p2 - self.p2.transpose()).amax() == 0.0
    }
}

/// Smallest real part of the spectrum of `RᵀLR`; positive iff `−RᵀLR` is Hurwitz.
pub fn reduced_laplacian_margin(graph: &NetworkGraph, block_dim: usize) -> Result<f64> {
    let basis = build_consensus_basis(graph.n_agents(), block_dim)?;
    let lap = graph.laplacian(block_dim).laplacian_big;
    let a = basis.r_matrix.transpose() * lap * &basis.r_matrix;
    Ok(min_real_eigenvalue(&a))
}

/// Solves `−P_k RᵀLR − (RᵀLR)ᵀ P_k = −q_k I` for `k = 1, 2`.
pub fn lyapunov_certificate(graph: &NetworkGraph, block_dim: usize, q1: f64, q2: f64) -> Result<LyapunovCertificate> {
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(Error::Config(format!("q1, q2 must be positive, got {q1}, {q2}")));
    }
    graph.validate()?;
    let basis = build_consensus_basis(graph.n_agents(), block_dim)?;
    let lap = graph.laplacian(block_dim).laplacian_big;
    let a = basis.r_matrix.transpose() * lap * &basis.r_matrix;
    let margin = min_real_eigenvalue(&a);
    if !(margin > 1e-10 * a.amax().max(1.0)) {
        return Err(Error::NotHurwitz {
            min_real_part: margin,
        });
    }
    let k = a.nrows();
    let p1 = solve_lyapunov(&a, &(DMatrix::identity(k, k) * q1))?;
    let p2 = solve_lyapunov(&a, &(DMatrix::identity(k, k) * q2))?;
    Ok(LyapunovCertificate {
        basis,
        reduced_laplacian: a,
        q1,
        q2,
        p1,
        p2,
    })
}

/// `‖∇F_{σ,h}(u)‖`.
pub fn stationarity_residual(model: &NetworkModel, u: &DVector<f64>) -> Result<f64> {
    Ok(model.grad_reduced(u)?.norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSample {
    pub t: f64,
    /// `S(u) = F_{σ,h}(u)`.
    pub s_u: f64,
    /// `U(ξ)`.
    pub u_xi: f64,
    pub norm_xi: f64,
    pub norm_x_minus_hu: f64,
    pub stationarity: f64,
    /// `‖η_avg‖ + ‖ζ_avg‖`.
    pub avg_drift: f64,
}

impl MonitorSample {
    /// `U(ξ) + S(u)`.
    pub fn composite(&self) -> f64 {
        self.u_xi + self.s_u
    }
}

/// Evaluates the monitor series on every sample of `log`.
pub fn monitor(model: &NetworkModel, log: &TrajectoryLog, cert: &LyapunovCertificate) -> Result<Vec<MonitorSample>> {
    log.times
        .iter()
        .zip(&log.states)
        .map(|(&t, state)| {
            let tr = transform(model, state, &cert.basis)?;
            Ok(MonitorSample {
                t,
                s_u: model.reduced_cost(&state.u)?,
                u_xi: cert.u_value(&tr.xi),
                norm_xi: tr.xi.norm(),
                norm_x_minus_hu: model.settling_error(&state.x, &state.u)?.norm(),
                stationarity: stationarity_residual(model, &state.u)?,
                avg_drift: tr.eta_avg.norm() + tr.zeta_avg.norm(),
            })
        })
        .collect()
}

/// Monitor columns in the order they are appended to the trajectory CSV.
pub fn monitor_columns(samples: &[MonitorSample]) -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("S_u", samples.iter().map(|s| s.s_u).collect()),
        ("U_xi", samples.iter().map(|s| s.u_xi).collect()),
        ("norm_xi", samples.iter().map(|s| s.norm_xi).collect()),
        ("norm_x_minus_hu", samples.iter().map(|s| s.norm_x_minus_hu).collect()),
    ]
}

/// Sample-to-sample increases of `U(ξ) + S(u)` after `transient` seconds
/// that exceed `tolerance · (1 + |value|)`; returns `(t, increase)` pairs.
pub fn composite_increases(samples: &[MonitorSample], transient: f64, tolerance: f64) -> Vec<(f64, f64)> {
    samples
        .windows(2)
        .filter(|w| w[0].t >= transient)
        .filter_map(|w| {
            let (a, b) = (w[0].composite(), w[1].composite());
            (b - a > tolerance * (1.0 + a.abs())).then_some((w[1].t, b - a))
        })
        .collect()
}
