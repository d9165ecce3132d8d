//! Run configuration: TOML (or JSON) file plus `--set path=value` overrides.

use std::path::{Path, PathBuf};

use aggrefeed::scenarios::{QuadraticConfig, SurveillanceConfig};
use aggrefeed::sim::{DisturbanceSpec, IntegratorKind, SimConfig};
use aggrefeed::controller::Gains;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Version of the config and manifest layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[default]
    Surveillance,
    Quadratic,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Surveillance => "surveillance",
            Self::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub integrator: IntegratorKind,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub step_size: f64,
    pub sample_period: f64,
    pub divergence_bound: f64,
    pub max_steps: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            horizon: d.horizon,
            integrator: d.integrator,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            step_size: d.step_size,
            sample_period: d.sample_period,
            divergence_bound: d.divergence_bound,
            max_steps: d.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Graph replacing the generated one: `.csv` holds the `N×N` adjacency
    /// matrix, `.json` holds `{"n": N, "edges": [[from, to, weight], ...]}`.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Build a Lyapunov certificate and append the monitor columns.
    pub certificate: bool,
    pub q1: f64,
    pub q2: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            certificate: false,
            q1: 1.0,
            q2: 1.0,
        }
    }
}

/// Everything a run needs. Serializing it yields the fully materialized
/// config stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    /// Seeds the graph, the scenario draws, the initial state and the
    /// disturbance; overrides any seed inside the scenario sections.
    pub seed: u64,
    pub gains: Gains,
    pub sim: SimSection,
    pub disturbance: Option<DisturbanceSpec>,
    pub surveillance: SurveillanceConfig,
    pub quadratic: QuadraticConfig,
    pub graph: GraphSection,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            gains: self.gains,
            horizon: s.horizon,
            integrator: s.integrator,
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            step_size: s.step_size,
            sample_period: s.sample_period,
            seed: self.seed,
            disturbance: self.disturbance,
            divergence_bound: s.divergence_bound,
            max_steps: s.max_steps,
        }
    }

    /// Pushes the top-level seed into the scenario sections and makes the
    /// graph path absolute relative to `base`.
    fn normalize(&mut self, base: &Path) {
        self.surveillance.seed = self.seed;
        self.quadratic.seed = self.seed;
        if let Some(file) = &self.graph.file {
            if file.is_relative() {
                self.graph.file = Some(base.join(file));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        match self.scenario {
            ScenarioKind::Surveillance => self.surveillance.validate()?,
            ScenarioKind::Quadratic => self.quadratic.validate()?,
        }
        if !(self.analysis.q1 > 0.0 && self.analysis.q2 > 0.0) {
            bail!("analysis.q1 and analysis.q2 must be positive");
        }
        Ok(())
    }
}

/// Parses a config file into a JSON tree. A manifest written by `run` is
/// accepted too: its `config` entry is used.
pub fn read_tree(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let tree: Value = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(t)?
    };
    match tree {
        Value::Object(mut map) if map.contains_key("schema_version") && map.contains_key("config") => {
            Ok(map.remove("config").expect("checked"))
        }
        Value::Object(_) => Ok(tree),
        _ => bail!("{}: top level must be a table", path.display()),
    }
}

/// Interprets the right-hand side of `--set`: a TOML literal when it parses
/// as one (numbers, booleans, arrays, quoted strings), a bare string otherwise.
pub fn parse_literal(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).unwrap_or(Value::Null),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `path=value` with a dotted path, creating intermediate tables.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not of the form path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override path {path:?} has an empty component");
    }
    let mut node = tree;
    for key in &keys[..keys.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override {path:?}: {key:?} is not inside a table"))?;
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| anyhow!("override {path:?} does not address a table entry"))?;
    map.insert(keys[keys.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}

/// Command-line adjustments shared by all verbs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub integrator: Option<IntegratorKind>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut tree = read_tree(path)?;
    for s in &overrides.sets {
        apply_override(&mut tree, s)?;
    }
    from_tree(tree, path, overrides)
}

pub fn from_tree(tree: Value, path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg: RunConfig =
        serde_json::from_value(tree).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = overrides.integrator {
        cfg.sim.integrator = kind;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.normalize(&base);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals() {
        assert_eq!(parse_literal("7"), Value::from(7));
        assert_eq!(parse_literal("0.5"), Value::from(0.5));
        assert_eq!(parse_literal("true"), Value::from(true));
        assert_eq!(parse_literal("unicycle"), Value::from("unicycle"));
        assert_eq!(parse_literal("[1, 2]"), serde_json::json!([1, 2]));
    }

    #[test]
    fn overrides_create_tables() {
        let mut tree = serde_json::json!({"scenario": "quadratic"});
        apply_override(&mut tree, "gains.alpha1=7").unwrap();
        apply_override(&mut tree, "disturbance.amplitude=0.5").unwrap();
        let cfg: RunConfig = serde_json::from_value(tree).unwrap();
        assert_eq!(cfg.gains.alpha1, 7.0);
        assert_eq!(cfg.gains.alpha2, 0.01);
        assert_eq!(cfg.disturbance.unwrap().hold_period, 0.1);
        assert!(apply_override(&mut serde_json::json!({}), "noequals").is_err());
        assert!(apply_override(&mut serde_json::json!({"a": 1}), "a.b=2").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let tree = serde_json::json!({"gains": {"alpha3": 1.0}});
        assert!(from_tree(tree, Path::new("x.toml"), &Overrides::default()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = from_tree(serde_json::json!({"seed": 4}), Path::new("x.toml"), &Overrides::default()).unwrap();
        assert_eq!(cfg.surveillance.seed, 4);
        let back: RunConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
