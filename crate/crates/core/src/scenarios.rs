//! Concrete problem instances.

pub mod quadratic;
pub mod surveillance;

pub use quadratic::{quadratic_benchmark, solve_quadratic, QuadraticAgent, QuadraticBenchmark, QuadraticConfig};
pub use surveillance::{
    surveillance_model, unicycle_closed_loop, Crevasse, PlantKind, Surveillance, SurveillanceAgent,
    SurveillanceConfig, Terrain, UnicycleState, UNICYCLE_EPS,
};
