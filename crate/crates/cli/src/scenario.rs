//! Builds the model and initial state selected by a [`RunConfig`].

use aggrefeed::controller::NetworkState;
use aggrefeed::graph::NetworkGraph;
use aggrefeed::scenarios::Surveillance;
use aggrefeed::{DVector, NetworkModel};
use anyhow::{bail, Context, Result};

use crate::config::{RunConfig, ScenarioKind};

pub struct Built {
    pub model: NetworkModel,
    pub initial: NetworkState,
    /// Present for the surveillance scenario (terrain and intruders for plots).
    pub surveillance: Option<Surveillance>,
    /// Exact minimizer, known for the quadratic benchmark.
    pub minimizer: Option<DVector<f64>>,
}

fn load_graph(cfg: &RunConfig, n_agents: usize) -> Result<Option<NetworkGraph>> {
    let Some(path) = &cfg.graph.file else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading graph {}", path.display()))?;
    let graph = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        NetworkGraph::from_json_str(&text)
    } else {
        NetworkGraph::from_csv_str(&text)
    }
    .with_context(|| format!("parsing graph {}", path.display()))?;
    if graph.n_agents() != n_agents {
        bail!(
            "graph {} has {} nodes but the scenario has {n_agents} agents",
            path.display(),
            graph.n_agents()
        );
    }
    Ok(Some(graph))
}

/// Builds the scenario without checking the graph's structural assumptions
/// (so `check` can report them).
pub fn build(cfg: &RunConfig) -> Result<Built> {
    match cfg.scenario {
        ScenarioKind::Surveillance => {
            let mut s = cfg.surveillance.resolve()?;
            if let Some(g) = load_graph(cfg, s.config.n_agents)? {
                s.graph = g;
            }
            let model = s.model()?;
            let initial = s.initial_state(&model)?;
            Ok(Built {
                model,
                initial,
                surveillance: Some(s),
                minimizer: None,
            })
        }
        ScenarioKind::Quadratic => {
            let mut bench = cfg.quadratic.build()?;
            if let Some(g) = load_graph(cfg, cfg.quadratic.n_agents)? {
                bench.graph = g;
            }
            let model = bench.model()?;
            let initial = bench.initial_state(&model, cfg.seed)?;
            Ok(Built {
                model,
                initial,
                surveillance: None,
                minimizer: Some(bench.minimizer),
            })
        }
    }
}
