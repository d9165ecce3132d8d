//! Distributed aggregative feedback optimization.
//!
//! A network of `N` agents, each with a stable plant `ẋᵢ = pᵢ(xᵢ, uᵢ)`, jointly
//! minimizes `Σᵢ fᵢ(xᵢ, σ(x))` where `σ(x) = (1/N) Σᵢ φᵢ(xᵢ)` is an aggregate
//! that no agent can observe directly. Every agent runs a gradient-flow
//! controller on its input `uᵢ` together with two dynamic-average-consensus
//! compensators `wᵢ`, `zᵢ` that reconstruct `σ(x)` and the network sum of
//! `∇₂fⱼ` from neighbour messages over a weight-balanced digraph.
//!
//! Modules:
//!
//! - [`graph`]: communication graphs, Laplacians, consensus basis.
//! - [`model`]: agent oracles, aggregate cost and gradients, finite-difference checks.
//! - [`controller`]: closed-loop right-hand side, steady-state maps, error metrics.
//! - [`sim`]: Runge–Kutta integration, disturbances, trajectory logs.
//! - [`analysis`]: average/disagreement coordinates, Lyapunov certificates, monitors.
//! - [`scenarios`]: multi-robot surveillance and a quadratic benchmark.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod scenarios;
pub mod sim;

pub use analysis::{LyapunovCertificate, MonitorSample, TransformedState};
pub use controller::{Gains, Metrics, NetworkState};
pub use error::{Error, Result};
pub use graph::{ConsensusBasis, LaplacianPair, NetworkGraph};
pub use model::{AgentModel, NetworkModel};
pub use sim::{DisturbanceSpec, IntegratorKind, SimConfig, TrajectoryLog};

pub use nalgebra::{DMatrix, DVector};
