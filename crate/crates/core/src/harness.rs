//! Experiment cells, spuriosity sweeps and report rendering.
//!
//! A cell is one `(rho, seed)` pair: build data, train one ERM model on the
//! training split, then post-process that same model with every requested
//! method, choosing hyperparameters on the validation split and scoring on the
//! test split. A sweep is the cartesian product of rho values and seeds.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspec::{self, BenchmarkLayout, DataError, GroupId, GroupedDataset, SplitFractions, SplitSet, SpuriosityConfig};
use crate::embio::{self, FormatError};
use crate::evalmetrics::{self, GridSpec, GroupMetrics, Method, MetricsError};
use crate::nnopt::{self, Model, NnError, TrainConfig, Trainable};
use crate::seeding;

pub const REPORT_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "SPURBENCH_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown report format {0:?} (expected csv, json or markdown)")]
    UnknownFormat(String),
    #[error("report is empty")]
    EmptyReport,
    #[error("unsupported report version {0}")]
    ReportVersion(u32),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Emb,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        config: SpuriosityConfig,
        #[serde(default)]
        layout: BenchmarkLayout,
    },
    File {
        path: PathBuf,
        format: FileFormat,
        /// Only read for CSV; EMB carries its own flag.
        #[serde(default = "default_true")]
        has_groups: bool,
        #[serde(default)]
        fractions: SplitFractions,
        #[serde(default = "default_cap")]
        llr_rho_cap: f64,
    },
}

fn default_true() -> bool {
    true
}

fn default_cap() -> f64 {
    0.95
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { config: SpuriosityConfig::default(), layout: BenchmarkLayout::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Ignored for file sources.
    pub spuriosity_list: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Hidden widths of the ERM network.
    pub hidden: Vec<usize>,
    pub erm: TrainConfig,
    pub retrain_grid: GridSpec,
    pub afr_gammas: Vec<f64>,
    /// Adds per-row wall time to the report. Off by default so reports are
    /// byte-reproducible.
    pub record_timing: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            spuriosity_list: vec![0.7, 0.8, 0.9, 0.95, 0.99, 1.0],
            methods: vec![
                Method::Erm,
                Method::Lfr,
                Method::Cfr,
                Method::CrMl,
                Method::ClMr,
                Method::DfrOracle,
                Method::Afr,
            ],
            seeds: vec![0, 1, 2, 3, 4],
            hidden: vec![32, 16],
            erm: TrainConfig { epochs: 10, ..TrainConfig::default() },
            retrain_grid: GridSpec::default(),
            afr_gammas: GridSpec::default().gammas,
            record_timing: false,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if matches!(self.data, DataSource::Synthetic { .. }) {
            if self.spuriosity_list.is_empty() {
                return bad("spuriosity_list must be nonempty");
            }
            if self.spuriosity_list.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad("spuriosity values must lie in [0, 1]");
            }
        }
        if self.retrain_grid.learning_rates.is_empty() || self.retrain_grid.weight_decays.is_empty() {
            return bad("retrain grid needs learning rates and weight decays");
        }
        if self.methods.iter().any(|m| m.strategy().is_some()) && self.retrain_grid.s_values.is_empty() {
            return bad("retrain grid needs s values");
        }
        if self.methods.contains(&Method::Afr) && self.afr_gammas.is_empty() {
            return bad("afr_gammas must be nonempty");
        }
        if let DataSource::Synthetic { config, .. } = &self.data {
            config.validate()?;
        }
        self.erm.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid points searched for `method`, with the configured gamma list.
    pub fn grid(&self, method: Method) -> Vec<evalmetrics::HyperParams> {
        let grid = GridSpec { gammas: self.afr_gammas.clone(), ..self.retrain_grid.clone() };
        grid.points(method)
    }

    /// The rho values a sweep visits; `None` for file sources.
    pub fn cells_rho(&self) -> Vec<Option<f64>> {
        match self.data {
            DataSource::Synthetic { .. } => self.spuriosity_list.iter().map(|&r| Some(r)).collect(),
            DataSource::File { .. } => vec![None],
        }
    }
}

/// Hyperparameters chosen on validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub s: Option<usize>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub rho: Option<f64>,
    pub seed: u64,
    pub chosen: Option<Chosen>,
    pub test: Option<GroupMetrics>,
    pub val_wga: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn wga(&self) -> Option<f64> {
        self.test.as_ref().map(|m| m.wga)
    }

    pub fn mean_group(&self) -> Option<f64> {
        self.test.as_ref().map(|m| m.mean_group)
    }

    fn failed(method: Method, rho: Option<f64>, seed: u64, error: String) -> Self {
        Self { method, rho, seed, chosen: None, test: None, val_wga: None, wall_time_ms: None, error: Some(error) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub rho: Option<f64>,
    pub runs: usize,
    pub wga_mean: f64,
    pub wga_std: f64,
    pub mean_group_mean: f64,
    pub mean_group_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    /// Sorts rows by (method, rho, seed) and recomputes the summary.
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.rho.unwrap_or(-1.0).total_cmp(&b.rho.unwrap_or(-1.0)))
                .then(a.seed.cmp(&b.seed))
        });
        let summary = summarize(&rows);
        Self { report_version: REPORT_VERSION, rows, summary }
    }

    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn summary_for(&self, method: Method, rho: Option<f64>) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.rho == rho)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let report: Report = serde_json::from_str(text)?;
        if report.report_version != REPORT_VERSION {
            return Err(HarnessError::ReportVersion(report.report_version));
        }
        Ok(report)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(Method, Option<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for row in rows {
        let (Some(wga), Some(mg)) = (row.wga(), row.mean_group()) else { continue };
        match cells.iter_mut().find(|c| c.0 == row.method && c.1 == row.rho) {
            Some(cell) => {
                cell.2.push(wga);
                cell.3.push(mg);
            }
            None => cells.push((row.method, row.rho, vec![wga], vec![mg])),
        }
    }
    cells
        .into_iter()
        .map(|(method, rho, wga, mg)| {
            let (wga_mean, wga_std) = mean_std(&wga);
            let (mean_group_mean, mean_group_std) = mean_std(&mg);
            SummaryRow { method, rho, runs: wga.len(), wga_mean, wga_std, mean_group_mean, mean_group_std }
        })
        .collect()
}

/// Data and splits for one cell.
pub fn cell_data(config: &ExperimentConfig, rho: Option<f64>, seed: u64) -> Result<(GroupedDataset, SplitSet), HarnessError> {
    let data_seed = seeding::cell_seed(seed, rho.unwrap_or(f64::NAN), "data");
    match &config.data {
        DataSource::Synthetic { config: spur, layout } => {
            let rho = rho.ok_or_else(|| HarnessError::Config("synthetic cells need a rho".into()))?;
            Ok(dataspec::build_benchmark(spur, rho, layout, data_seed)?)
        }
        DataSource::File { path, format, has_groups, fractions, llr_rho_cap } => {
            let dataset = match format {
                FileFormat::Emb => embio::read_emb(path)?,
                FileFormat::Csv => embio::read_csv(path, *has_groups)?,
            };
            let split = dataspec::make_splits(&dataset, *fractions, *llr_rho_cap, data_seed)?;
            Ok((dataset, split))
        }
    }
}

/// Trains the shared ERM model of a cell on its training split.
pub fn train_erm(
    config: &ExperimentConfig,
    dataset: &GroupedDataset,
    split: &SplitSet,
    rho: Option<f64>,
    seed: u64,
) -> Result<Model, HarnessError> {
    let rho_bits = rho.unwrap_or(f64::NAN);
    let init = Model::mlp(
        dataset.samples().dim(),
        &config.hidden,
        dataset.num_classes(),
        seeding::cell_seed(seed, rho_bits, "init"),
    )?;
    let erm = TrainConfig { seed: seeding::cell_seed(seed, rho_bits, "erm"), ..config.erm.clone() };
    Ok(nnopt::train(&init, dataset.samples(), &split.tr, &erm, Trainable::All, None)?)
}

fn method_row(
    config: &ExperimentConfig,
    method: Method,
    model: &Model,
    dataset: &GroupedDataset,
    split: &SplitSet,
    rho: Option<f64>,
    seed: u64,
) -> Result<ReportRow, HarnessError> {
    let start = Instant::now();
    let mut row = ReportRow {
        method,
        rho,
        seed,
        chosen: None,
        test: None,
        val_wga: None,
        wall_time_ms: None,
        error: None,
    };
    if method == Method::Erm {
        row.val_wga = Some(evalmetrics::group_accuracies(model, dataset, &split.val)?.wga);
        row.test = Some(evalmetrics::group_accuracies(model, dataset, &split.te)?);
    } else {
        let method_seed = seeding::cell_seed(seed, rho.unwrap_or(f64::NAN), method.name());
        let grid = config.grid(method);
        let hp = evalmetrics::select_hp(model, dataset, &split.llr, &split.val, method, &grid, method_seed)?;
        row.chosen = Some(Chosen {
            learning_rate: hp.best.learning_rate,
            weight_decay: hp.best.weight_decay,
            s: hp.retrained.provenance.resolved_s,
            gamma: hp.retrained.provenance.gamma,
        });
        row.val_wga = Some(hp.val_metrics.wga);
        row.test = Some(evalmetrics::group_accuracies(&hp.retrained.model, dataset, &split.te)?);
    }
    if config.record_timing {
        row.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(row)
}

/// One `(rho, seed)` cell: one row per requested method. A method that fails
/// yields an error row; data or ERM failures fail the whole cell.
pub fn run_cell(config: &ExperimentConfig, rho: Option<f64>, seed: u64) -> Result<Vec<ReportRow>, HarnessError> {
    let (dataset, split) = cell_data(config, rho, seed)?;
    let model = train_erm(config, &dataset, &split, rho, seed)?;
    Ok(config
        .methods
        .iter()
        .map(|&method| {
            method_row(config, method, &model, &dataset, &split, rho, seed)
                .unwrap_or_else(|e| ReportRow::failed(method, rho, seed, e.to_string()))
        })
        .collect())
}

/// Worker count from `SPURBENCH_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Runs every `(rho, seed)` cell. Cells run on a worker pool; the report is
/// sorted, so it does not depend on completion order.
pub fn sweep(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let cells: Vec<(Option<f64>, u64)> = config
        .cells_rho()
        .into_iter()
        .flat_map(|rho| config.seeds.iter().map(move |&seed| (rho, seed)))
        .collect();
    let run = || -> Vec<ReportRow> {
        cells
            .par_iter()
            .flat_map_iter(|&(rho, seed)| {
                run_cell(config, rho, seed).unwrap_or_else(|e| {
                    config.methods.iter().map(|&m| ReportRow::failed(m, rho, seed, e.to_string())).collect()
                })
            })
            .collect()
    };
    let rows = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(Report::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(HarnessError::UnknownFormat(other.to_string())),
        }
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "method",
    "rho",
    "seed",
    "wga",
    "mean_group",
    "acc_y0_maj",
    "acc_y0_min",
    "acc_y1_maj",
    "acc_y1_min",
    "s",
    "lr",
    "wd",
    "gamma",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_csv(report: &Report) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for row in &report.rows {
        let acc = |class, alignment| row.test.as_ref().and_then(|m| m.accuracy(GroupId::new(class, alignment)));
        use crate::dataspec::Alignment::{Majority, Minority};
        let chosen = row.chosen.as_ref();
        let fields = [
            row.method.name().to_string(),
            opt(row.rho),
            row.seed.to_string(),
            opt(row.wga()),
            opt(row.mean_group()),
            opt(acc(0, Majority)),
            opt(acc(0, Minority)),
            opt(acc(1, Majority)),
            opt(acc(1, Minority)),
            opt(chosen.and_then(|c| c.s)),
            opt(chosen.map(|c| c.learning_rate)),
            opt(chosen.map(|c| c.weight_decay)),
            opt(chosen.and_then(|c| c.gamma)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn rho_label(rho: Option<f64>) -> String {
    match rho {
        Some(r) => format!("{}%", (r * 1000.0).round() / 10.0),
        None => "file".to_string(),
    }
}

/// Methods × rho grid of `wga mean ± std (mean-group mean)`, in percent.
fn render_markdown(report: &Report) -> String {
    let mut rhos: Vec<Option<f64>> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for s in &report.summary {
        if !rhos.contains(&s.rho) {
            rhos.push(s.rho);
        }
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    rhos.sort_by(|a, b| a.unwrap_or(-1.0).total_cmp(&b.unwrap_or(-1.0)));
    methods.sort();
    let mut out = String::from("| method |");
    for r in &rhos {
        out.push_str(&format!(" {} |", rho_label(*r)));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(rhos.len()));
    out.push('\n');
    for m in &methods {
        out.push_str(&format!("| {} |", m.name()));
        for r in &rhos {
            let cell = report.summary_for(*m, *r).map_or_else(
                || "n/a".to_string(),
                |s| format!("{:.2} ± {:.2} ({:.2})", 100.0 * s.wga_mean, 100.0 * s.wga_std, 100.0 * s.mean_group_mean),
            );
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String, HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
        ReportFormat::Markdown => render_markdown(report),
    })
}

/// Mean test WGA per method over the rows of one rho.
pub fn mean_wga_by_method(report: &Report, rho: Option<f64>) -> BTreeMap<Method, f64> {
    report.summary.iter().filter(|s| s.rho == rho).map(|s| (s.method, s.wga_mean)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, rho: f64, seed: u64, wga: f64) -> ReportRow {
        let stats = GroupId::all(2)
            .into_iter()
            .map(|g| (g, evalmetrics::GroupStat { accuracy: if g.slot() == 1 { wga } else { 0.75 }, size: 10 }));
        ReportRow {
            method,
            rho: Some(rho),
            seed,
            chosen: Some(Chosen { learning_rate: 0.01, weight_decay: 1e-4, s: Some(5), gamma: None }),
            test: Some(GroupMetrics::from_stats(stats).unwrap()),
            val_wga: Some(wga),
            wall_time_ms: None,
            error: None,
        }
    }

    #[test]
    fn single_row_csv_has_two_lines() {
        let r = Report::from_rows(vec![row(Method::Lfr, 0.9, 0, 0.5)]);
        let csv = render_report(&r, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines[1], "lfr,0.9,0,0.5,0.6875,0.75,0.5,0.75,0.75,5,0.01,0.0001,");
    }

    #[test]
    fn json_round_trip() {
        let r = Report::from_rows(vec![row(Method::Lfr, 0.9, 0, 0.5), row(Method::Erm, 0.9, 1, 0.3)]);
        let json = render_report(&r, ReportFormat::Json).unwrap();
        assert!(json.contains("\"report_version\": 1"));
        assert_eq!(Report::from_json(&json).unwrap(), r);
    }

    #[test]
    fn markdown_grid_shape() {
        let mut rows = Vec::new();
        for m in [Method::Erm, Method::Lfr] {
            for rho in [0.7, 0.9, 0.99] {
                rows.push(row(m, rho, 0, 0.25));
            }
        }
        let md = render_report(&Report::from_rows(rows), ReportFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        for data in &lines[2..] {
            assert_eq!(data.matches('|').count(), 5);
        }
        assert!(lines[0].contains("99%"));
        assert!(lines[2].starts_with("| erm | 25.00 ± 0.00 (62.50) |"));
    }

    #[test]
    fn unknown_format_and_empty_report() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(HarnessError::UnknownFormat(_))));
        let empty = Report::from_rows(vec![]);
        assert!(matches!(render_report(&empty, ReportFormat::Csv), Err(HarnessError::EmptyReport)));
    }

    #[test]
    fn rows_sorted_and_summarized() {
        let r = Report::from_rows(vec![
            row(Method::Lfr, 0.9, 1, 0.6),
            row(Method::Erm, 0.9, 0, 0.2),
            row(Method::Lfr, 0.9, 0, 0.4),
        ]);
        assert_eq!(r.rows[0].method, Method::Erm);
        assert_eq!(r.rows[1].seed, 0);
        let s = r.summary_for(Method::Lfr, Some(0.9)).unwrap();
        assert_eq!(s.runs, 2);
        assert!((s.wga_mean - 0.5).abs() < 1e-12);
        assert!((s.wga_std - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let no_methods = ExperimentConfig { methods: vec![], ..Default::default() };
        assert!(matches!(no_methods.validate(), Err(HarnessError::Config(_))));
        let bad_rho = ExperimentConfig { spuriosity_list: vec![1.5], ..Default::default() };
        assert!(bad_rho.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds": [3], "unknown": 1}"#).is_err());
        let parsed = ExperimentConfig::from_json(r#"{"seeds": [3], "methods": ["erm", "lfr"]}"#).unwrap();
        assert_eq!(parsed.seeds, vec![3]);
        assert_eq!(parsed.methods, vec![Method::Erm, Method::Lfr]);
    }
}
