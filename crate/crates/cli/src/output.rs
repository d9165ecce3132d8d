//! Files written by a run: trajectory CSV, scene CSV and manifest JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aggrefeed::scenarios::{Crevasse, Surveillance, Terrain};
use aggrefeed::Metrics;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SCHEMA_VERSION};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SCENE_FILE: &str = "scene.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut out = BufWriter::new(file);
        write(&mut out).with_context(|| format!("writing {}", tmp.display()))?;
        out.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub status: RunStatus,
    pub error: Option<String>,
    pub final_time: f64,
    pub initial: Option<Metrics>,
    #[serde(rename = "final")]
    pub last: Option<Metrics>,
    /// `e_opt(T) / e_opt(0)`.
    pub e_opt_ratio: Option<f64>,
    /// `e_wz(T) / e_wz(0)`.
    pub e_wz_ratio: Option<f64>,
    /// Euclidean distance of `u(T)` to the analytic minimizer, when known.
    pub distance_to_minimizer: Option<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_cons_w: f64,
    pub max_cons_z: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    NotConverged,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::NotConverged => "not_converged",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub summary: Summary,
}

impl Manifest {
    pub fn new(config: &RunConfig, outputs: Vec<PathBuf>, wall: f64, summary: Summary) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: config.scenario.name().to_string(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            outputs,
            wall_clock_seconds: wall,
            summary,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |out| {
            serde_json::to_writer_pretty(&mut *out, self)?;
            writeln!(out)
        })
    }
}

/// Everything the configuration plot needs besides the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub n_agents: usize,
    /// Plant state length per agent (2 single integrator, 3 unicycle).
    pub state_dim: usize,
    pub arena: f64,
    pub terrain: Terrain,
    pub intruders: Vec<[f64; 2]>,
}

impl Scene {
    pub fn of(s: &Surveillance) -> Self {
        Self {
            n_agents: s.config.n_agents,
            state_dim: match s.config.plant {
                aggrefeed::scenarios::PlantKind::SingleIntegrator => 2,
                aggrefeed::scenarios::PlantKind::Unicycle => 3,
            },
            arena: s.config.arena,
            terrain: (*s.terrain).clone(),
            intruders: s.intruders.clone(),
        }
    }

    /// Rows `kind,index,x,y,a,b`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "index", "x", "y", "a", "b"])?;
        let num = |v: f64| format!("{v:.16e}");
        w.write_record(["layout", "0", "", "", &self.n_agents.to_string(), &self.state_dim.to_string()])?;
        w.write_record(["arena", "0", "", "", &num(self.arena), ""])?;
        w.write_record(["terrain", "0", "", "", &num(self.terrain.a1), &num(self.terrain.rho)])?;
        for (g, c) in self.terrain.crevasses.iter().enumerate() {
            w.write_record([
                "crevasse",
                &g.to_string(),
                &num(c.center[0]),
                &num(c.center[1]),
                &num(c.depth),
                &num(c.spread),
            ])?;
        }
        for (i, s) in self.intruders.iter().enumerate() {
            w.write_record(["intruder", &i.to_string(), &num(s[0]), &num(s[1]), "", ""])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        write_atomic(path, |out| out.write_all(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let mut scene = Scene {
            n_agents: 0,
            state_dim: 2,
            arena: 100.0,
            terrain: Terrain {
                a1: 0.0,
                rho: 0.0,
                crevasses: Vec::new(),
            },
            intruders: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec?;
            let f = |k: usize| -> Result<f64> {
                rec.get(k)
                    .unwrap_or("")
                    .parse::<f64>()
                    .with_context(|| format!("{}: bad number in row {:?}", path.display(), rec))
            };
            match rec.get(0).unwrap_or("") {
                "layout" => {
                    scene.n_agents = f(4)? as usize;
                    scene.state_dim = f(5)? as usize;
                }
                "arena" => scene.arena = f(4)?,
                "terrain" => {
                    scene.terrain.a1 = f(4)?;
                    scene.terrain.rho = f(5)?;
                }
                "crevasse" => scene.terrain.crevasses.push(Crevasse {
                    center: [f(2)?, f(3)?],
                    depth: f(4)?,
                    spread: f(5)?,
                }),
                "intruder" => scene.intruders.push([f(2)?, f(3)?]),
                other => bail!("{}: unknown row kind {other:?}", path.display()),
            }
        }
        Ok(scene)
    }
}
