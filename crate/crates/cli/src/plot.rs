//! Static SVG figures rendered from the CSV files of a run directory.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

use crate::output::{Scene, SCENE_FILE, TRAJECTORY_FILE};

pub const ERRORS_SVG: &str = "errors.svg";
pub const CONFIGURATION_SVG: &str = "configuration.svg";
pub const MONITOR_SVG: &str = "monitor.svg";

/// Column-major view of a CSV file with a header row.
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                bail!("{}: row {} has {} cells, expected {}", path.display(), line + 2, rec.len(), names.len());
            }
            for (col, cell) in columns.iter_mut().zip(rec.iter()) {
                col.push(
                    cell.trim()
                        .parse()
                        .with_context(|| format!("{}: row {}: bad number {cell:?}", path.display(), line + 2))?,
                );
            }
        }
        Ok(Self { names, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name).ok_or_else(|| anyhow!("trajectory has no column {name:?}"))
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

/// Log-scale range covering the positive values of `series`.
fn log_range<'a>(series: impl IntoIterator<Item = &'a [f64]>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in series {
        for &v in s.iter().filter(|v| **v > 0.0 && v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi > 0.0) {
        return (1e-16, 1.0);
    }
    let lo = 10f64.powf(lo.log10().floor());
    let hi = 10f64.powf(hi.log10().ceil());
    if hi <= lo { (lo, lo * 10.0) } else { (lo, hi) }
}

const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

fn log_lines(path: &Path, title: &str, t: &[f64], series: &[(&str, &[f64])]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (lo, hi) = log_range(series.iter().map(|(_, s)| *s));
    let t_end = t.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(45)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..t_end, (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_label_formatter(&|v| format!("{v:.0e}"))
        .draw()
        .map_err(plot_err)?;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points = t
            .iter()
            .zip(values.iter())
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(a, b)| (*a, b.max(lo)));
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Optimality and compensator errors on a log scale.
pub fn errors(table: &Table, path: &Path) -> Result<()> {
    let t = table.require("t")?;
    log_lines(
        path,
        "Optimality and compensator errors",
        t,
        &[("e_opt", table.require("e_opt")?), ("e_wz", table.require("e_wz")?)],
    )
}

/// Monitor series: `U(ξ)`, `‖ξ‖`, `‖x − h(u)‖` (log scale) and `S(u)`.
pub fn monitor(table: &Table, path: &Path) -> Result<()> {
    let t = table.require("t")?;
    let s_u = table.require("S_u")?;
    let root = SVGBackend::new(path, (900, 800)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(400);
    let t_end = t.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let (smin, smax) = s_u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let pad = ((smax - smin) * 0.05).max(1e-9);
    let mut chart = ChartBuilder::on(&top)
        .caption("Reduced cost S(u) = F(h(u))", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..t_end, (smin - pad)..(smax + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("t [s]").draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            t.iter().copied().zip(s_u.iter().copied()),
            PALETTE[0].stroke_width(2),
        ))
        .map_err(plot_err)?;

    let names = ["U_xi", "norm_xi", "norm_x_minus_hu"];
    let series: Vec<(&str, &[f64])> = names
        .iter()
        .map(|n| table.require(n).map(|s| (*n, s)))
        .collect::<Result<_>>()?;
    let (lo, hi) = log_range(series.iter().map(|(_, s)| *s));
    let mut chart = ChartBuilder::on(&bottom)
        .caption("Consensus Lyapunov function and settling error", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..t_end, (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_label_formatter(&|v| format!("{v:.0e}"))
        .draw()
        .map_err(plot_err)?;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[(k + 1) % PALETTE.len()];
        let points = t
            .iter()
            .zip(values.iter())
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(a, b)| (*a, *b));
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Blue (low) to brown (high) terrain colors.
fn terrain_color(level: f64) -> RGBColor {
    let stops = [(40.0, 70.0, 140.0), (90.0, 160.0, 110.0), (230.0, 220.0, 150.0), (140.0, 90.0, 50.0)];
    let x = level.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let k = (x.floor() as usize).min(stops.len() - 2);
    let f = x - k as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    RGBColor(
        mix(stops[k].0, stops[k + 1].0),
        mix(stops[k].1, stops[k + 1].1),
        mix(stops[k].2, stops[k + 1].2),
    )
}

/// Robots at `t = 0` and `t = T` and the intruders over the altitude map.
pub fn configuration(table: &Table, scene: &Scene, path: &Path) -> Result<()> {
    let rows = table.rows();
    if rows == 0 {
        bail!("trajectory is empty");
    }
    let side = scene.arena;
    let position = |row: usize, i: usize| -> Result<(f64, f64)> {
        let base = i * scene.state_dim;
        Ok((
            table.require(&format!("x_{base}"))?[row],
            table.require(&format!("x_{}", base + 1))?[row],
        ))
    };
    let start: Vec<(f64, f64)> = (0..scene.n_agents).map(|i| position(0, i)).collect::<Result<_>>()?;
    let end: Vec<(f64, f64)> = (0..scene.n_agents).map(|i| position(rows - 1, i)).collect::<Result<_>>()?;

    let mut lo = (0.0f64, 0.0f64);
    let mut hi = (side, side);
    for p in start.iter().chain(&end).copied().chain(scene.intruders.iter().map(|s| (s[0], s[1]))) {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }

    let root = SVGBackend::new(path, (760, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Team configuration over the altitude map", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo.0..hi.0, lo.1..hi.1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("x1 [m]").y_desc("x2 [m]").draw().map_err(plot_err)?;

    let cells = 80usize;
    let (dx, dy) = ((hi.0 - lo.0) / cells as f64, (hi.1 - lo.1) / cells as f64);
    let mut grid = Vec::with_capacity(cells * cells);
    for a in 0..cells {
        for b in 0..cells {
            let x = lo.0 + (a as f64 + 0.5) * dx;
            let y = lo.1 + (b as f64 + 0.5) * dy;
            grid.push((a, b, scene.terrain.altitude([x, y])));
        }
    }
    let (zmin, zmax) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(m, n), g| (m.min(g.2), n.max(g.2)));
    let span = (zmax - zmin).max(1e-12);
    chart
        .draw_series(grid.iter().map(|&(a, b, z)| {
            let x0 = lo.0 + a as f64 * dx;
            let y0 = lo.1 + b as f64 * dy;
            Rectangle::new([(x0, y0), (x0 + dx, y0 + dy)], terrain_color((z - zmin) / span).filled())
        }))
        .map_err(plot_err)?;

    chart
        .draw_series(
            scene
                .intruders
                .iter()
                .map(|s| Cross::new((s[0], s[1]), 7, RGBColor(200, 0, 0).stroke_width(3))),
        )
        .map_err(plot_err)?
        .label("intruders")
        .legend(|(x, y)| Cross::new((x + 10, y), 5, RGBColor(200, 0, 0).stroke_width(3)));
    chart
        .draw_series(start.iter().map(|p| Circle::new(*p, 6, BLACK.stroke_width(2))))
        .map_err(plot_err)?
        .label("robots, t = 0")
        .legend(|(x, y)| Circle::new((x + 10, y), 5, BLACK.stroke_width(2)));
    chart
        .draw_series(end.iter().map(|p| Circle::new(*p, 6, BLACK.filled())))
        .map_err(plot_err)?
        .label("robots, t = T")
        .legend(|(x, y)| Circle::new((x + 10, y), 5, BLACK.filled()));
    for (a, b) in start.iter().zip(&end) {
        chart
            .draw_series(LineSeries::new([*a, *b], BLACK.mix(0.4)))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Renders every figure the files in `dir` support; returns the SVG paths.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let table = Table::read(&dir.join(TRAJECTORY_FILE))?;
    let mut written = Vec::new();
    let target = dir.join(ERRORS_SVG);
    errors(&table, &target)?;
    written.push(target);
    let scene_path = dir.join(SCENE_FILE);
    if scene_path.exists() {
        let scene = Scene::read(&scene_path)?;
        let target = dir.join(CONFIGURATION_SVG);
        configuration(&table, &scene, &target)?;
        written.push(target);
    }
    if table.column("U_xi").is_some() {
        let target = dir.join(MONITOR_SVG);
        monitor(&table, &target)?;
        written.push(target);
    }
    Ok(written)
}
