//! Implementation of the `run`, `check`, `sweep` and `plot` verbs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aggrefeed::analysis::{lyapunov_certificate, monitor, monitor_columns};
use aggrefeed::controller::{network_rhs, pi_w, pi_z, NetworkState};
use aggrefeed::graph::build_consensus_basis;
use aggrefeed::model::{finite_diff_check, FdCheckOptions};
use aggrefeed::sim::integrate_outcome;
use aggrefeed::DVector;
use anyhow::{Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{self, Overrides, RunConfig, ScenarioKind};
use crate::output::{write_atomic, Manifest, RunStatus, Scene, Summary, MANIFEST_FILE, SCENE_FILE, TRAJECTORY_FILE};
use crate::plot;
use crate::scenario::{build, Built};

/// A run counts as converged when `e_opt` shrank by this factor.
pub const CONVERGENCE_FACTOR: f64 = 1e-3;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Invalid = 1,
    IntegrationFailed = 2,
    NotConverged = 3,
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait OrExit<T> {
    fn or_exit(self, exit: Exit) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for std::result::Result<T, E> {
    fn or_exit(self, exit: Exit) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { exit, error: e.into() })
    }
}

pub type Outcome = std::result::Result<Exit, Failure>;

/// Output directory of a run: `--out` if given, otherwise
/// `<root>/<config stem>-seed<seed>` with root `$AGGREFEED_OUT` or `runs`.
pub fn run_dir(out: Option<&Path>, config_path: &Path, seed: u64) -> PathBuf {
    if let Some(dir) = out {
        return dir.to_path_buf();
    }
    let root = std::env::var_os("AGGREFEED_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    root.join(format!("{stem}-seed{seed}"))
}

pub struct RunReport {
    pub summary: Summary,
    pub dir: PathBuf,
}

fn summarize(
    built: &Built,
    log: &aggrefeed::TrajectoryLog,
    error: Option<&aggrefeed::Error>,
) -> Summary {
    let initial = log.first_metrics().copied();
    let last = log.last_metrics().copied();
    let ratio = |f: fn(&aggrefeed::Metrics) -> f64| match (initial, last) {
        (Some(a), Some(b)) if f(&a) > 0.0 => Some(f(&b) / f(&a)),
        _ => None,
    };
    let e_opt_ratio = ratio(|m| m.e_opt);
    let distance_to_minimizer = match (&built.minimizer, log.final_state()) {
        (Some(m), Some(s)) if error.is_none() => Some((&s.u - m).norm()),
        _ => None,
    };
    let status = if error.is_some() {
        RunStatus::Failed
    } else if e_opt_ratio.is_some_and(|r| r < CONVERGENCE_FACTOR) || last.is_some_and(|m| m.e_opt == 0.0) {
        RunStatus::Converged
    } else {
        RunStatus::NotConverged
    };
    let (max_cons_w, max_cons_z) = log.max_conservation();
    Summary {
        status,
        error: error.map(|e| e.to_string()),
        final_time: log.times.last().copied().unwrap_or(0.0),
        initial,
        last,
        e_opt_ratio,
        e_wz_ratio: ratio(|m| m.e_wz),
        distance_to_minimizer,
        accepted_steps: log.stats.accepted,
        rejected_steps: log.stats.rejected,
        max_cons_w,
        max_cons_z,
    }
}

/// Builds, integrates and writes all outputs of one run into `dir`.
pub fn execute(cfg: &RunConfig, dir: &Path, plots: bool) -> std::result::Result<RunReport, Failure> {
    let start = Instant::now();
    let built = build(cfg).or_exit(Exit::Invalid)?;
    built
        .model
        .graph()
        .validate()
        .context("communication graph violates the standing assumptions")
        .or_exit(Exit::Invalid)?;
    let certificate = if cfg.analysis.certificate {
        Some(
            lyapunov_certificate(built.model.graph(), built.model.agg_dim(), cfg.analysis.q1, cfg.analysis.q2)
                .context("building the Lyapunov certificate")
                .or_exit(Exit::Invalid)?,
        )
    } else {
        None
    };
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .or_exit(Exit::Invalid)?;

    let outcome = integrate_outcome(&built.model, &built.initial, &cfg.sim_config()).or_exit(Exit::Invalid)?;
    let log = &outcome.log;

    let extra = match &certificate {
        Some(cert) => monitor_columns(&monitor(&built.model, log, cert).or_exit(Exit::IntegrationFailed)?),
        None => Vec::new(),
    };
    let io = Exit::Invalid;
    let mut outputs = vec![dir.join(TRAJECTORY_FILE)];
    write_atomic(&outputs[0], |out| log.write_csv(&built.model, &extra, out)).or_exit(io)?;
    if let Some(s) = &built.surveillance {
        let path = dir.join(SCENE_FILE);
        Scene::of(s).write(&path).or_exit(io)?;
        outputs.push(path);
    }
    if plots && !log.is_empty() {
        outputs.extend(plot::render_dir(dir).or_exit(io)?);
    }
    let summary = summarize(&built, log, outcome.error.as_ref());
    let manifest_path = dir.join(MANIFEST_FILE);
    outputs.push(manifest_path.clone());
    Manifest::new(cfg, outputs, start.elapsed().as_secs_f64(), summary.clone())
        .write(&manifest_path)
        .or_exit(io)?;
    Ok(RunReport {
        summary,
        dir: dir.to_path_buf(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"))
}

fn print_summary(cfg: &RunConfig, report: &RunReport) {
    let s = &report.summary;
    println!("scenario        {} (seed {})", cfg.scenario.name(), cfg.seed);
    println!("output          {}", report.dir.display());
    println!("status          {}", s.status.as_str());
    if let Some(e) = &s.error {
        println!("error           {e}");
    }
    println!("final time      {}", s.final_time);
    if let (Some(a), Some(b)) = (s.initial, s.last) {
        println!("e_opt           {:.3e} -> {:.3e} (ratio {})", a.e_opt, b.e_opt, fmt_opt(s.e_opt_ratio));
        println!("e_wz            {:.3e} -> {:.3e} (ratio {})", a.e_wz, b.e_wz, fmt_opt(s.e_wz_ratio));
        println!("cost            {:.6e}", b.cost);
    }
    if let Some(d) = s.distance_to_minimizer {
        println!("dist. to u*     {d:.3e}");
    }
    println!("max |1'w|,|1'z| {:.2e}, {:.2e}", s.max_cons_w, s.max_cons_z);
    println!("steps           {} accepted, {} rejected", s.accepted_steps, s.rejected_steps);
}

pub fn cmd_run(config_path: &Path, overrides: &Overrides, out: Option<&Path>, require_convergence: bool) -> Outcome {
    let cfg = config::load(config_path, overrides).or_exit(Exit::Invalid)?;
    let dir = run_dir(out, config_path, cfg.seed);
    info!("writing run outputs to {}", dir.display());
    let report = execute(&cfg, &dir, true)?;
    print_summary(&cfg, &report);
    Ok(match report.summary.status {
        RunStatus::Failed => Exit::IntegrationFailed,
        RunStatus::NotConverged if require_convergence => Exit::NotConverged,
        _ => Exit::Success,
    })
}

struct CheckRow {
    name: String,
    pass: bool,
    detail: String,
}

fn row(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> CheckRow {
    CheckRow {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

/// At `(h(u), u, π^w, π^z)` the plant and compensators are at rest and the
/// controller follows the exact reduced gradient, for any `u`.
fn equilibrium_rows(cfg: &RunConfig, built: &Built, lo: f64, hi: f64) -> Result<Vec<CheckRow>> {
    let model = &built.model;
    let mut rows = Vec::new();
    let gains = cfg.gains;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut worst_rest = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let u = DVector::from_fn(model.input_dim(), |_, _| rng.random_range(lo..hi));
        let x = model.steady_state(&u)?;
        let state = NetworkState {
            w: pi_w(model, &x)?,
            z: pi_z(model, &x)?,
            x,
            u: u.clone(),
        };
        let der = network_rhs(model, &state, &gains)?;
        let scale = 1.0 + state.to_flat().amax();
        let rest = der.x.amax().max(der.w.amax()).max(der.z.amax());
        worst_rest = worst_rest.max(rest / scale);
        let target = model.grad_reduced(&u)? * (-gains.alpha1);
        worst_grad = worst_grad.max((&der.u - &target).amax() / (1.0 + target.amax()));
    }
    rows.push(row(
        "equilibrium structure",
        worst_rest <= 1e-9 && worst_grad <= 1e-9,
        format!("max rel. |x', w', z'| = {worst_rest:.2e}, |u' + a1 grad F| = {worst_grad:.2e}"),
    ));
    if let Some(m) = &built.minimizer {
        let x = model.steady_state(m)?;
        let state = NetworkState {
            w: pi_w(model, &x)?,
            z: pi_z(model, &x)?,
            x,
            u: m.clone(),
        };
        let res = network_rhs(model, &state, &gains)?.to_flat().norm();
        rows.push(row("equilibrium residual at u*", res <= 1e-9, format!("|rhs| = {res:.2e}")));
    }
    Ok(rows)
}

/// Runs the structural and numerical checks; the returned rows are printed
/// as a table.
fn check_rows(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let built = build(cfg)?;
    let model = &built.model;
    let graph = model.graph();
    let mut rows = Vec::new();

    let (balanced, imbalance) = graph.check_weight_balanced();
    rows.push(row("graph weight-balanced", balanced, format!("max |in - out| = {imbalance:.2e}")));
    let connected = graph.check_strongly_connected();
    rows.push(row("graph strongly connected", connected, ""));
    let n = model.n_agents();
    let d = model.agg_dim();
    rows.push(match build_consensus_basis(n, d) {
        Ok(_) => row("consensus basis", true, format!("N = {n}, d = {d}")),
        Err(e) => row("consensus basis", false, e.to_string()),
    });

    let (lo, hi) = match cfg.scenario {
        ScenarioKind::Surveillance => (0.0, cfg.surveillance.arena),
        ScenarioKind::Quadratic => (-5.0, 5.0),
    };
    let report = finite_diff_check(
        model,
        &FdCheckOptions {
            samples: 100,
            seed: cfg.seed,
            lo,
            hi,
            tolerance: 1e-6,
        },
    );
    for e in &report.entries {
        rows.push(row(
            format!("derivative {}", e.oracle),
            e.max_rel_error <= report.tolerance,
            format!("max rel. error {:.2e}", e.max_rel_error),
        ));
    }
    rows.push(row(
        "steady state is an equilibrium",
        report.steady_state_residual <= 1e-9,
        format!("max |p(h(u), u)| = {:.2e}", report.steady_state_residual),
    ));
    rows.push(row("oracles deterministic", report.deterministic, ""));

    match equilibrium_rows(cfg, &built, lo, hi) {
        Ok(mut r) => rows.append(&mut r),
        Err(e) => rows.push(row("equilibrium structure", false, format!("{e:#}"))),
    }

    rows.push(if !(balanced && connected) || n < 2 {
        row("Lyapunov certificate", false, "requires a valid graph with N >= 2")
    } else {
        match lyapunov_certificate(graph, d, cfg.analysis.q1, cfg.analysis.q2) {
            Ok(cert) => {
                let res = cert.residual();
                let spd = cert.is_positive_definite();
                let (lmin, lmax) = cert.eigen_range();
                row(
                    "Lyapunov certificate",
                    res <= 1e-9 && spd,
                    format!("residual {res:.2e}, eig(P) in [{lmin:.3e}, {lmax:.3e}]"),
                )
            }
            Err(e) => row("Lyapunov certificate", false, e.to_string()),
        }
    });
    Ok(rows)
}

pub fn cmd_check(config_path: &Path, overrides: &Overrides) -> Outcome {
    let cfg = config::load(config_path, overrides).or_exit(Exit::Invalid)?;
    let rows = check_rows(&cfg).or_exit(Exit::Invalid)?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &rows {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<width$}  {}", r.name, r.detail);
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", rows.len());
        Ok(Exit::Success)
    } else {
        println!("{} of {} checks failed: {}", failed.len(), rows.len(), failed.join(", "));
        Ok(Exit::Invalid)
    }
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

pub fn cmd_sweep(
    config_path: &Path,
    param: &str,
    values: &[String],
    overrides: &Overrides,
    out: Option<&Path>,
) -> Outcome {
    // Resolve every configuration up front so a typo fails before any run.
    let base_tree = {
        let mut tree = config::read_tree(config_path).or_exit(Exit::Invalid)?;
        for s in &overrides.sets {
            config::apply_override(&mut tree, s).or_exit(Exit::Invalid)?;
        }
        tree
    };
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|v| {
            let mut tree = base_tree.clone();
            config::apply_override(&mut tree, &format!("{param}={v}"))?;
            let mut ov = overrides.clone();
            if param == "seed" {
                ov.seed = None;
            }
            config::from_tree(tree, config_path, &ov).with_context(|| format!("{param} = {v}"))
        })
        .collect::<Result<_>>()
        .or_exit(Exit::Invalid)?;

    let root = match out {
        Some(dir) => dir.to_path_buf(),
        None => {
            let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
            let root = std::env::var_os("AGGREFEED_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(format!("{stem}-sweep-{}", sanitize(param)))
        }
    };
    std::fs::create_dir_all(&root)
        .with_context(|| format!("creating {}", root.display()))
        .or_exit(Exit::Invalid)?;

    let results: Vec<(String, std::result::Result<RunReport, Failure>)> = values
        .par_iter()
        .zip(configs.par_iter())
        .enumerate()
        .map(|(k, (v, cfg))| {
            let dir = root.join(format!("run{k:03}-{}", sanitize(v)));
            (v.clone(), execute(cfg, &dir, false))
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "param", "value", "status", "e_opt_0", "e_opt_T", "e_wz_0", "e_wz_T", "cost_T", "final_time", "dir", "error",
    ];
    w.write_record(header).or_exit(Exit::Invalid)?;
    let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.16e}"));
    for (value, res) in &results {
        let record: Vec<String> = match res {
            Ok(r) => {
                let s = &r.summary;
                vec![
                    param.to_string(),
                    value.clone(),
                    s.status.as_str().to_string(),
                    num(s.initial.map(|m| m.e_opt)),
                    num(s.last.map(|m| m.e_opt)),
                    num(s.initial.map(|m| m.e_wz)),
                    num(s.last.map(|m| m.e_wz)),
                    num(s.last.map(|m| m.cost)),
                    num(Some(s.final_time)),
                    r.dir.display().to_string(),
                    s.error.clone().unwrap_or_default(),
                ]
            }
            Err(f) => vec![
                param.to_string(),
                value.clone(),
                RunStatus::Failed.as_str().to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                f.to_string(),
            ],
        };
        w.write_record(&record).or_exit(Exit::Invalid)?;
        println!(
            "{param} = {value:<12} {}",
            match res {
                Ok(r) => format!(
                    "{:<13} e_opt(T) = {}, e_wz(T) = {}",
                    r.summary.status.as_str(),
                    fmt_opt(r.summary.last.map(|m| m.e_opt)),
                    fmt_opt(r.summary.last.map(|m| m.e_wz))
                ),
                Err(f) => format!("failed: {f}"),
            }
        );
    }
    let bytes = w.into_inner().map_err(|e| e.into_error()).or_exit(Exit::Invalid)?;
    let summary_path = root.join("sweep_summary.csv");
    write_atomic(&summary_path, |out| std::io::Write::write_all(out, &bytes)).or_exit(Exit::Invalid)?;
    println!("summary written to {}", summary_path.display());
    Ok(Exit::Success)
}

pub fn cmd_plot(dir: &Path) -> Outcome {
    let written = plot::render_dir(dir).or_exit(Exit::Invalid)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(Exit::Success)
}
