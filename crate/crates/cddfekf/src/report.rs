//! Experiment configuration files, dataset files, and report emission:
//! CSV data, markdown accuracy tables mirroring the benchmark layout, and
//! static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::harness::{ExperimentConfig, FilterVariant, ScenarioStatus, SweepRow, SweepTable};
use crate::sde::Scheme;

/// Error raised for malformed configuration files or flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        message: message.into(),
    }
}

/// The on-disk configuration schema; every key optional, unknown keys
/// rejected. Missing keys fall back to the benchmark defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserConfig {
    gamma_list: Option<Vec<f64>>,
    mc_runs: Option<usize>,
    horizon: Option<f64>,
    sample_period: Option<f64>,
    l_em: Option<usize>,
    l_it: Option<usize>,
    alpha: Option<f64>,
    truth_step: Option<f64>,
    master_seed: Option<u64>,
    filters: Option<Vec<String>>,
}

fn apply_user_config(base: ExperimentConfig, user: UserConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = base;
    if let Some(v) = user.gamma_list {
        cfg.gamma_list = v;
    }
    if let Some(v) = user.mc_runs {
        cfg.mc_runs = v;
    }
    if let Some(v) = user.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = user.sample_period {
        cfg.sample_period = v;
    }
    if let Some(v) = user.l_em {
        cfg.l_em = v;
    }
    if let Some(v) = user.l_it {
        cfg.l_it = v;
    }
    if let Some(v) = user.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = user.truth_step {
        cfg.truth_step = v;
    }
    if let Some(v) = user.master_seed {
        cfg.master_seed = v;
    }
    if let Some(names) = user.filters {
        let mut filters = Vec::with_capacity(names.len());
        for name in &names {
            filters.push(FilterVariant::parse(name).map_err(config_err)?);
        }
        cfg.filters = filters;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Parse a TOML experiment configuration. Keys left out keep the benchmark
/// defaults; unknown keys are an error, with the offending key and line
/// reported.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let user: UserConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
    apply_user_config(ExperimentConfig::default(), user)
}

/// ARMSE rendering used everywhere: scientific notation with four
/// significant digits, e.g. `4.375e2`.
pub fn format_armse(v: f64) -> String {
    format!("{v:.3e}")
}

fn format_gamma(gamma: f64) -> String {
    format!("{gamma:.0e}")
}

/// Paths of all emitted report files.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub sweep_csv: PathBuf,
    pub accuracy_markdown: PathBuf,
    pub timing_csv: PathBuf,
    pub svg_paths: Vec<PathBuf>,
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("gamma,filter,status,armse,cpu_seconds\n");
    for row in &table.rows {
        let status = match row.status {
            ScenarioStatus::Completed => "completed",
            ScenarioStatus::Failed => "fail",
        };
        let armse = row.armse.map(format_armse).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6e}",
            format_gamma(row.gamma),
            row.filter,
            status,
            armse,
            row.cpu_seconds
        );
    }
    out
}

pub fn timing_csv(table: &SweepTable) -> String {
    let mut out = String::from("gamma,filter,cpu_seconds\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{:.6e}",
            format_gamma(row.gamma),
            row.filter,
            row.cpu_seconds
        );
    }
    out
}

fn scheme_rows(table: &SweepTable, scheme: Scheme) -> Vec<&SweepRow> {
    table
        .rows
        .iter()
        .filter(|r| r.filter.scheme == scheme)
        .collect()
}

fn markdown_cell(row: Option<&SweepRow>) -> String {
    match row {
        Some(r) => match (r.status, r.armse) {
            (ScenarioStatus::Completed, Some(a)) => format_armse(a),
            _ => "fail".to_string(),
        },
        None => String::new(),
    }
}

/// One markdown table per scheme: filters as columns, γ as rows, failed
/// cells rendered as `fail`.
pub fn accuracy_markdown(table: &SweepTable) -> String {
    let mut out = String::new();
    for (scheme, title) in [
        (Scheme::EulerMaruyama, "Euler-Maruyama filters (L = l_em)"),
        (Scheme::ItoTaylor15, "Ito-Taylor filters (L = l_it)"),
    ] {
        let rows = scheme_rows(table, scheme);
        if rows.is_empty() {
            continue;
        }
        let mut filters: Vec<FilterVariant> = Vec::new();
        for r in &rows {
            if !filters.contains(&r.filter) {
                filters.push(r.filter);
            }
        }
        let mut gammas: Vec<f64> = Vec::new();
        for r in &rows {
            if !gammas.contains(&r.gamma) {
                gammas.push(r.gamma);
            }
        }

        let _ = writeln!(out, "## {title}\n");
        let header: Vec<String> = filters.iter().map(|f| f.id()).collect();
        let _ = writeln!(out, "| gamma | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(filters.len()));
        for &gamma in &gammas {
            let cells: Vec<String> = filters
                .iter()
                .map(|f| {
                    let row = rows
                        .iter()
                        .find(|r| r.filter == *f && r.gamma == gamma)
                        .copied();
                    markdown_cell(row)
                })
                .collect();
            let _ = writeln!(out, "| {} | {} |", format_gamma(gamma), cells.join(" | "));
        }
        out.push('\n');
    }
    out
}

const SVG_W: f64 = 760.0;
const SVG_H: f64 = 460.0;
const SVG_MARGIN: f64 = 60.0;

fn svg_palette(i: usize) -> &'static str {
    const COLORS: [&str; 8] = [
        "#1b6ca8", "#d1495b", "#66a182", "#edae49", "#574ae2", "#8d5a97", "#2e4057", "#9fb1bc",
    ];
    COLORS[i % COLORS.len()]
}

/// ARMSE against γ for one scheme: log-scale γ axis, log-scale ARMSE axis,
/// one polyline per filter truncated at its breakdown point.
pub fn armse_svg(table: &SweepTable, scheme: Scheme) -> String {
    let rows = scheme_rows(table, scheme);
    let mut filters: Vec<FilterVariant> = Vec::new();
    for r in &rows {
        if !filters.contains(&r.filter) {
            filters.push(r.filter);
        }
    }
    let completed: Vec<&&SweepRow> = rows
        .iter()
        .filter(|r| r.status == ScenarioStatus::Completed)
        .collect();
    let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &rows {
        gmin = gmin.min(r.gamma);
        gmax = gmax.max(r.gamma);
    }
    for r in &completed {
        if let Some(a) = r.armse {
            amin = amin.min(a);
            amax = amax.max(a);
        }
    }
    if !gmin.is_finite() || !amin.is_finite() {
        return String::from("<svg xmlns=\"http://www.w3.org/2000/svg\"/>");
    }
    let (lgmin, lgmax) = (gmin.log10(), gmax.log10());
    let (lamin, lamax) = ((amin / 2.0).log10(), (amax * 2.0).log10());
    let x_of = |g: f64| {
        SVG_MARGIN + (g.log10() - lgmin) / (lgmax - lgmin).max(1e-12) * (SVG_W - 2.0 * SVG_MARGIN)
    };
    let y_of = |a: f64| {
        SVG_H - SVG_MARGIN
            - (a.log10() - lamin) / (lamax - lamin).max(1e-12) * (SVG_H - 2.0 * SVG_MARGIN)
    };

    let scheme_name = match scheme {
        Scheme::EulerMaruyama => "Euler-Maruyama",
        Scheme::ItoTaylor15 => "Ito-Taylor 1.5",
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">ARMSE degradation under ill-conditioning ({scheme_name})</text>\n",
        SVG_W / 2.0
    );
    // Axes.
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = SVG_MARGIN,
        b = SVG_H - SVG_MARGIN,
        r = SVG_W - SVG_MARGIN,
        t = SVG_MARGIN,
    );
    let mut gamma_ticks: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gamma_ticks.dedup();
    for g in &gamma_ticks {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            x_of(*g),
            SVG_H - SVG_MARGIN + 16.0,
            format_gamma(*g)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">gamma (log scale)</text>",
        SVG_W / 2.0,
        SVG_H - 12.0
    );

    for (i, f) in filters.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.filter == *f && r.status == ScenarioStatus::Completed)
            .filter_map(|r| r.armse.map(|a| format!("{:.1},{:.1}", x_of(r.gamma), y_of(a))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = svg_palette(i);
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            SVG_W - SVG_MARGIN + 4.0,
            SVG_MARGIN + 14.0 * i as f64,
            f.id()
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Mean runtime bars at the best-conditioned γ of the sweep.
pub fn timing_svg(table: &SweepTable) -> String {
    if table.rows.is_empty() {
        return String::from("<svg xmlns=\"http://www.w3.org/2000/svg\"/>");
    }
    let gamma = table.rows.iter().map(|r| r.gamma).fold(0.0f64, f64::max);
    let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.gamma == gamma).collect();
    let tmax = rows.iter().map(|r| r.cpu_seconds).fold(0.0f64, f64::max);
    let bar_w = (SVG_W - 2.0 * SVG_MARGIN) / rows.len() as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">Mean filter run time (s) at gamma = {}</text>\n",
        SVG_W / 2.0,
        format_gamma(gamma)
    );
    for (i, r) in rows.iter().enumerate() {
        let h = if tmax > 0.0 {
            r.cpu_seconds / tmax * (SVG_H - 2.0 * SVG_MARGIN)
        } else {
            0.0
        };
        let x = SVG_MARGIN + i as f64 * bar_w;
        let y = SVG_H - SVG_MARGIN - h;
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            x + 2.0,
            y,
            bar_w - 4.0,
            h,
            svg_palette(i)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"start\" transform=\"rotate(45 {:.1} {:.1})\">{}</text>",
            x + bar_w / 2.0,
            SVG_H - SVG_MARGIN + 10.0,
            x + bar_w / 2.0,
            SVG_H - SVG_MARGIN + 10.0,
            r.filter.id()
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"middle\">{:.3}</text>",
            x + bar_w / 2.0,
            y - 4.0,
            r.cpu_seconds
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Write the full report bundle. Output bytes are a pure function of the
/// table contents.
pub fn emit_reports(table: &SweepTable, out_dir: &Path) -> io::Result<ReportBundle> {
    assert!(!table.rows.is_empty(), "nothing to report");
    fs::create_dir_all(out_dir)?;
    let sweep_path = out_dir.join("sweep.csv");
    fs::write(&sweep_path, sweep_csv(table))?;
    let md_path = out_dir.join("accuracy.md");
    fs::write(&md_path, accuracy_markdown(table))?;
    let timing_path = out_dir.join("timing.csv");
    fs::write(&timing_path, timing_csv(table))?;

    let mut svg_paths = Vec::new();
    for (scheme, name) in [
        (Scheme::EulerMaruyama, "armse_em.svg"),
        (Scheme::ItoTaylor15, "armse_it.svg"),
    ] {
        if scheme_rows(table, scheme).is_empty() {
            continue;
        }
        let p = out_dir.join(name);
        fs::write(&p, armse_svg(table, scheme))?;
        svg_paths.push(p);
    }
    let p = out_dir.join("timing.svg");
    fs::write(&p, timing_svg(table))?;
    svg_paths.push(p);

    Ok(ReportBundle {
        sweep_csv: sweep_path,
        accuracy_markdown: md_path,
        timing_csv: timing_path,
        svg_paths,
    })
}

/// A simulated dataset: the truth at measurement times and the noisy
/// measurements of one Monte Carlo run, in a self-describing text format.
/// Floats are written with 17 significant digits, so the file round-trips
/// binary64 exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model_id: String,
    pub gamma: f64,
    pub master_seed: u64,
    pub run: u64,
    pub sample_period: f64,
    pub horizon: f64,
    pub truth_at_tk: Vec<(f64, DVector<f64>)>,
    pub measurements: Vec<(f64, DVector<f64>)>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Dataset {
    pub fn write_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cddfekf dataset v1");
        let _ = writeln!(out, "model = {}", self.model_id);
        let _ = writeln!(out, "gamma = {}", fmt_f64(self.gamma));
        let _ = writeln!(out, "seed = {}", self.master_seed);
        let _ = writeln!(out, "run = {}", self.run);
        let _ = writeln!(out, "sample_period = {}", fmt_f64(self.sample_period));
        let _ = writeln!(out, "horizon = {}", fmt_f64(self.horizon));
        let _ = writeln!(out, "records = {}", self.truth_at_tk.len());
        let _ = writeln!(out, "# t_k  x_true[n]  z[m]");
        for ((t, x), (_, z)) in self.truth_at_tk.iter().zip(&self.measurements) {
            let mut fields = vec![fmt_f64(*t)];
            fields.extend(x.iter().map(|v| fmt_f64(*v)));
            fields.extend(z.iter().map(|v| fmt_f64(*v)));
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.write_text())
    }

    pub fn parse_text(text: &str, n: usize, m: usize) -> Result<Dataset, ConfigError> {
        let mut model_id = String::new();
        let mut gamma = None;
        let mut master_seed = None;
        let mut run = 0u64;
        let mut sample_period = None;
        let mut horizon = None;
        let mut truth_at_tk = Vec::new();
        let mut measurements = Vec::new();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let key = key.trim();
                let value = value.trim();
                let parse_f = |v: &str| {
                    v.parse::<f64>().map_err(|e| {
                        config_err(format!("line {}: bad float '{v}': {e}", lineno + 1))
                    })
                };
                match key {
                    "model" => model_id = value.to_string(),
                    "gamma" => gamma = Some(parse_f(value)?),
                    "seed" => {
                        master_seed = Some(value.parse::<u64>().map_err(|e| {
                            config_err(format!("line {}: bad seed: {e}", lineno + 1))
                        })?)
                    }
                    "run" => {
                        run = value.parse::<u64>().map_err(|e| {
                            config_err(format!("line {}: bad run index: {e}", lineno + 1))
                        })?
                    }
                    "sample_period" => sample_period = Some(parse_f(value)?),
                    "horizon" => horizon = Some(parse_f(value)?),
                    "records" => {}
                    other => {
                        return Err(config_err(format!(
                            "line {}: unknown key '{other}'",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| {
                        config_err(format!("line {}: bad float '{v}': {e}", lineno + 1))
                    })
                })
                .collect::<Result<_, _>>()?;
            if fields.len() != 1 + n + m {
                return Err(config_err(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    1 + n + m,
                    fields.len()
                )));
            }
            let t = fields[0];
            truth_at_tk.push((t, DVector::from_column_slice(&fields[1..1 + n])));
            measurements.push((t, DVector::from_column_slice(&fields[1 + n..])));
        }

        Ok(Dataset {
            model_id,
            gamma: gamma.ok_or_else(|| config_err("missing 'gamma'"))?,
            master_seed: master_seed.ok_or_else(|| config_err("missing 'seed'"))?,
            run,
            sample_period: sample_period.ok_or_else(|| config_err("missing 'sample_period'"))?,
            horizon: horizon.ok_or_else(|| config_err("missing 'horizon'"))?,
            truth_at_tk,
            measurements,
        })
    }

    pub fn read_from(path: &Path, n: usize, m: usize) -> Result<Dataset, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Dataset::parse_text(&text, n, m)
    }
}
