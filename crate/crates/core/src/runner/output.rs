//! Result files: events.jsonl, results.csv, aggregate.csv and the heatmap.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ConfigError, ExperimentConfig};
use super::execute::{execute, run_unit, EventLine, ExperimentResult, ResultRow, RowStatus, RunOptions};
use crate::metrics::{best_matrix, BestCell, CellCandidate, Metric};
use crate::model::ALL_FUNCTIONS;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const HEATMAP_SVG: &str = "heatmap.svg";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const CONFIG_FILE: &str = "experiment.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeatmapFormat {
    #[default]
    Svg,
    Csv,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svg" => Ok(HeatmapFormat::Svg),
            "csv" => Ok(HeatmapFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected svg|csv)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("no row {0} in results")]
    NoSuchRow(u64),
}

impl RunnerError {
    /// Errors caused by the user's input rather than by the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, RunnerError::Config(_) | RunnerError::NoSuchRow(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

fn fmt_err(path: &Path, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Format { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_events(path: &Path, events: &[EventLine]) -> Result<(), RunnerError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Raw lines of events.jsonl belonging to `run_id`.
pub fn read_event_lines(path: &Path, run_id: u64) -> Result<Vec<String>, RunnerError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        let ev: EventLine = serde_json::from_str(&line).map_err(|e| fmt_err(path, e))?;
        if ev.run_id == run_id {
            out.push(line);
        }
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| fmt_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), RunnerError> {
    write_csv(path, rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, RunnerError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| fmt_err(path, e))).collect()
}

/// Aggregate over the repetitions of one grid point and benchmark. All
/// numbers carry two decimals; undefined metrics print as 0.00 with 0.00
/// spread, and spread columns are empty when only one value exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub profile: String,
    pub benchmark: String,
    pub grid_index: usize,
    pub rate_limiter: u32,
    pub finalization: String,
    pub block_param: f64,
    pub grouping: String,
    pub node_count: u32,
    pub latency_mu: String,
    pub latency_sigma: String,
    pub repetitions: usize,
    pub defined: usize,
    pub failed: usize,
    pub mtps: String,
    pub mtps_sd: String,
    pub mtps_sem: String,
    pub mtps_ci95: String,
    pub mfls: String,
    pub mfls_sd: String,
    pub mfls_sem: String,
    pub mfls_ci95: String,
    pub duration: String,
    pub duration_sd: String,
    pub duration_sem: String,
    pub duration_ci95: String,
    pub expected: String,
    pub received: String,
    pub lost: String,
}

pub fn f2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

fn stats_columns(values: &[Option<f64>]) -> [String; 4] {
    let metrics: Vec<Metric> =
        values.iter().map(|v| v.map_or(Metric::Undefined, Metric::Value)).collect();
    match crate::metrics::aggregate_metrics(&metrics) {
        None => ["0.00".into(), "0.00".into(), "0.00".into(), "0.00".into()],
        Some(s) => [
            f2(s.mean),
            s.sd.map(f2).unwrap_or_default(),
            s.sem.map(f2).unwrap_or_default(),
            s.ci95.map(f2).unwrap_or_default(),
        ],
    }
}

/// Rows grouped by (grid point, benchmark) in order of first appearance.
fn groups(rows: &[ResultRow]) -> Vec<Vec<&ResultRow>> {
    let mut index: HashMap<(usize, &str), usize> = HashMap::new();
    let mut out: Vec<Vec<&ResultRow>> = Vec::new();
    for r in rows {
        let i = *index.entry((r.grid_index, r.benchmark.as_str())).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[i].push(r);
    }
    out
}

pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    groups(rows)
        .into_iter()
        .map(|g| {
            let first = g[0];
            let mean = |f: fn(&ResultRow) -> u64| {
                f2(g.iter().map(|r| f(r) as f64).sum::<f64>() / g.len() as f64)
            };
            let [mtps, mtps_sd, mtps_sem, mtps_ci95] =
                stats_columns(&g.iter().map(|r| r.mtps).collect::<Vec<_>>());
            let [mfls, mfls_sd, mfls_sem, mfls_ci95] =
                stats_columns(&g.iter().map(|r| r.mfls).collect::<Vec<_>>());
            let [duration, duration_sd, duration_sem, duration_ci95] =
                stats_columns(&g.iter().map(|r| r.duration).collect::<Vec<_>>());
            AggregateRow {
                profile: first.profile.clone(),
                benchmark: first.benchmark.clone(),
                grid_index: first.grid_index,
                rate_limiter: first.rate_limiter,
                finalization: first.finalization.clone(),
                block_param: first.block_param,
                grouping: first.grouping.clone(),
                node_count: first.node_count,
                latency_mu: first.latency_mu.map(|v| v.to_string()).unwrap_or_default(),
                latency_sigma: first.latency_sigma.map(|v| v.to_string()).unwrap_or_default(),
                repetitions: g.len(),
                defined: g.iter().filter(|r| r.mtps.is_some()).count(),
                failed: g.iter().filter(|r| r.status == RowStatus::Failed).count(),
                mtps,
                mtps_sd,
                mtps_sem,
                mtps_ci95,
                mfls,
                mfls_sd,
                mfls_sem,
                mfls_ci95,
                duration,
                duration_sd,
                duration_sem,
                duration_ci95,
                expected: mean(|r| r.expected),
                received: mean(|r| r.received),
                lost: mean(|r| r.lost),
            }
        })
        .collect()
}

fn mean_metric(values: impl Iterator<Item = Option<f64>>) -> Metric {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        Metric::Undefined
    } else {
        Metric::Value(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn params_label(r: &ResultRow) -> String {
    format!(
        "{} {} rl={} {} n={} lat={}",
        r.finalization,
        r.block_param,
        r.rate_limiter,
        r.grouping,
        r.node_count,
        if r.latency_mu.is_some() { "on" } else { "off" }
    )
}

/// Best cell per (profile, benchmark) with row and column order.
pub struct Heatmap {
    pub profiles: Vec<String>,
    pub benchmarks: Vec<String>,
    pub cells: std::collections::BTreeMap<(String, String), BestCell>,
}

pub fn heatmap(rows: &[ResultRow]) -> Heatmap {
    let candidates: Vec<CellCandidate> = groups(rows)
        .into_iter()
        .map(|g| CellCandidate {
            profile: g[0].profile.clone(),
            benchmark: g[0].benchmark.clone(),
            params: params_label(g[0]),
            mtps: mean_metric(g.iter().map(|r| r.mtps)),
            mfls: mean_metric(g.iter().map(|r| r.mfls)),
            duration: mean_metric(g.iter().map(|r| r.duration)),
        })
        .collect();
    let mut profiles: Vec<String> = Vec::new();
    for c in &candidates {
        if !profiles.contains(&c.profile) {
            profiles.push(c.profile.clone());
        }
    }
    let benchmarks = ALL_FUNCTIONS
        .iter()
        .map(|f| f.benchmark_name().to_string())
        .filter(|b| candidates.iter().any(|c| &c.benchmark == b))
        .collect();
    Heatmap { profiles, benchmarks, cells: best_matrix(&candidates) }
}

#[derive(Serialize)]
struct HeatmapCsvRow<'a> {
    profile: &'a str,
    benchmark: &'a str,
    status: &'a str,
    mtps: String,
    mfls: String,
    duration: String,
    params: &'a str,
}

pub fn heatmap_csv(map: &Heatmap) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &map.profiles {
        for b in &map.benchmarks {
            let row = match map.cells.get(&(p.clone(), b.clone())) {
                Some(BestCell::Best { params, mtps, mfls, duration }) => HeatmapCsvRow {
                    profile: p,
                    benchmark: b,
                    status: "ok",
                    mtps: f2(*mtps),
                    mfls: mfls.to_string(),
                    duration: duration.to_string(),
                    params,
                },
                Some(BestCell::Failed) => HeatmapCsvRow {
                    profile: p,
                    benchmark: b,
                    status: "failed",
                    mtps: String::new(),
                    mfls: String::new(),
                    duration: String::new(),
                    params: "",
                },
                None => continue,
            };
            w.serialize(row).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn heatmap_svg(map: &Heatmap) -> String {
    const LEFT: usize = 120;
    const TOP: usize = 60;
    const W: usize = 190;
    const H: usize = 78;
    let width = LEFT + W * map.benchmarks.len().max(1) + 10;
    let height = TOP + H * map.profiles.len().max(1) + 30;
    let max = map
        .cells
        .values()
        .filter_map(|c| match c {
            BestCell::Best { mtps, .. } => Some(*mtps),
            BestCell::Failed => None,
        })
        .fold(0.0f64, f64::max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22" font-size="14" font-weight="bold">Best MTPS (tx/s), MFLS (s), Duration (s)</text>"#
    );
    for (j, b) in map.benchmarks.iter().enumerate() {
        let x = LEFT + j * W + W / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            TOP - 8,
            escape(b)
        );
    }
    for (i, p) in map.profiles.iter().enumerate() {
        let y = TOP + i * H;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 8,
            y + H / 2 + 4,
            escape(p)
        );
        for (j, b) in map.benchmarks.iter().enumerate() {
            let x = LEFT + j * W;
            let cell = map.cells.get(&(p.clone(), b.clone()));
            let (fill, lines) = match cell {
                Some(BestCell::Best { params, mtps, mfls, duration }) => {
                    let t = if max > 0.0 { (1.0 + mtps).ln() / (1.0 + max).ln() } else { 0.0 };
                    let r = (255.0 - 190.0 * t).round() as u8;
                    let g = (255.0 - 110.0 * t).round() as u8;
                    (
                        format!("#{r:02x}{g:02x}ff"),
                        vec![
                            format!("{} tx/s", f2(*mtps)),
                            format!("{mfls} s / {duration} s"),
                            params.clone(),
                        ],
                    )
                }
                Some(BestCell::Failed) => ("#d0d0d0".to_string(), vec!["failed".to_string()]),
                None => ("#f4f4f4".to_string(), vec![]),
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{W}" height="{H}" fill="{fill}" stroke="#808080"/>"##
            );
            for (k, line) in lines.iter().enumerate() {
                let size = if k == 2 { 9 } else { 12 };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="{size}" text-anchor="middle">{}</text>"#,
                    x + W / 2,
                    y + 22 + k * 20,
                    escape(line)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes results.csv, aggregate.csv and the heatmap.
pub fn emit_reports(rows: &[ResultRow], dir: &Path, format: HeatmapFormat) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_results(&dir.join(RESULTS_FILE), rows)?;
    write_derived(rows, dir, format)
}

fn write_derived(rows: &[ResultRow], dir: &Path, format: HeatmapFormat) -> Result<(), RunnerError> {
    write_csv(&dir.join(AGGREGATE_FILE), &aggregate_rows(rows))?;
    let map = heatmap(rows);
    let (name, body) = match format {
        HeatmapFormat::Svg => (HEATMAP_SVG, heatmap_svg(&map)),
        HeatmapFormat::Csv => (HEATMAP_CSV, heatmap_csv(&map)),
    };
    let path = dir.join(name);
    fs::write(&path, body).map_err(io_err(&path))
}

/// Regenerates aggregate.csv and the heatmap from an existing results.csv.
pub fn report(dir: &Path, format: HeatmapFormat) -> Result<Vec<ResultRow>, RunnerError> {
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    write_derived(&rows, dir, format)?;
    Ok(rows)
}

/// Executes the configuration and writes every output file into the
/// configured directory.
pub fn run_experiment(
    config: &ExperimentConfig,
    full: bool,
    format: HeatmapFormat,
) -> Result<ExperimentResult, RunnerError> {
    let result = execute(config, full)?;
    let dir = &config.experiment.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut recorded = config.clone();
    if !full {
        recorded.sweep = Default::default();
    }
    let path = dir.join(CONFIG_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(recorded.to_toml().as_bytes()).map_err(io_err(&path))?;
    write_events(&dir.join(EVENTS_FILE), &result.events)?;
    emit_reports(&result.rows, dir, format)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub row_id: u64,
    pub identical: bool,
    pub replayed: Vec<String>,
    pub original: Vec<String>,
}

/// Re-runs the unit that produced `row_id` and compares its event lines
/// with the recorded ones.
pub fn replay(dir: &Path, row_id: u64) -> Result<ReplayOutcome, RunnerError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let config = ExperimentConfig::from_toml(&text)?;
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    let row = rows.iter().find(|r| r.row_id == row_id).ok_or(RunnerError::NoSuchRow(row_id))?;
    let grid = config.grid(true)?;
    let point = grid
        .get(row.grid_index)
        .ok_or_else(|| fmt_err(&cfg_path, format!("grid has no point {}", row.grid_index)))?;
    let opts = RunOptions::from_config(&config);
    let unit = run_unit(point, row.repetition, config.experiment.seed, &opts);
    let step = unit
        .steps
        .into_iter()
        .find(|s| s.row.benchmark == row.benchmark)
        .ok_or_else(|| fmt_err(&cfg_path, format!("unit has no step {}", row.benchmark)))?;
    let replayed: Vec<String> = super::execute::event_lines(row_id, &step.logs)
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes"))
        .collect();
    let original = read_event_lines(&dir.join(EVENTS_FILE), row_id)?;
    Ok(ReplayOutcome { row_id, identical: replayed == original, replayed, original })
}
