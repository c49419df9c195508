//! Experiment runner behind the `gea` command line.
//!
//! A [`RunConfig`] is assembled from a flat TOML key/value file and `key=value`
//! overrides (later settings win). From it, [`Environment`] builds the fitness
//! source and the proxy, and the `cmd_*` functions run searches, sweeps and reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchError, NoisyProxy, OracleProxy, SyntheticLandscape, TabularStore};
use crate::evolution::{BudgetMode, EvolutionConfig, FitnessSource, MethodRegistry, SearchError, SearchResult};
use crate::network::{NetworkError, SkeletonConfig};
use crate::proxy::{make_batch, BatchError, BatchSource, JacobianProxy, Proxy, ProxyConfig};
use crate::stats::{mean, sample_std};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{path}: not a search result file: {source}")]
    Schema { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    /// Jacobian-correlation score on a micro network.
    Proxy,
    /// Noisy proxy with calibrated Spearman correlation to fitness.
    Mock,
    /// Proxy equal to validation fitness.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessKind {
    Synthetic,
    Bench,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { base, count } => (*base..base + count).collect(),
        }
    }
}

/// Every knob of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    pub mode: ProxyMode,
    pub rho: f64,
    pub mock_seed: u64,
    pub fitness: FitnessKind,
    pub synthetic_seed: u64,
    pub bench_path: Option<PathBuf>,
    pub dataset: String,
    pub population_size: usize,
    pub sample_size: usize,
    pub history_budget: usize,
    pub budget_mode: BudgetMode,
    pub seeds: SeedSpec,
    pub skeleton: SkeletonConfig,
    pub proxy: ProxyConfig,
    pub batch_seed: u64,
    pub c_values: Vec<usize>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: "gea".into(),
            mode: ProxyMode::Proxy,
            rho: 0.9,
            mock_seed: 0,
            fitness: FitnessKind::Synthetic,
            synthetic_seed: 0,
            bench_path: None,
            dataset: "cifar10".into(),
            population_size: 5,
            sample_size: 2,
            history_budget: 150,
            budget_mode: BudgetMode::TrainedModels,
            seeds: SeedSpec::Range { base: 0, count: 10 },
            skeleton: SkeletonConfig::default(),
            proxy: ProxyConfig::default(),
            batch_seed: 0,
            c_values: vec![25, 50, 100, 150],
            output: None,
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "method",
    "mode",
    "rho",
    "mock_seed",
    "fitness",
    "synthetic_seed",
    "bench_path",
    "dataset",
    "P",
    "S",
    "C",
    "budget_mode",
    "seeds",
    "seed_count",
    "seed_base",
    "input_channels",
    "input_height",
    "input_width",
    "stem_channels",
    "cells_per_stage",
    "stages",
    "num_classes",
    "init_seed",
    "t",
    "tau",
    "batch_size",
    "batch_classes",
    "batch_file",
    "batch_seed",
    "c_values",
    "output",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ExperimentError> {
    value
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Apply a single `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        let v = value.trim();
        match key {
            "method" => self.method = v.to_string(),
            "mode" => {
                self.mode = match v {
                    "proxy" => ProxyMode::Proxy,
                    "mock" => ProxyMode::Mock,
                    "oracle" => ProxyMode::Oracle,
                    _ => return Err(config_err(format!("mode must be proxy, mock or oracle, got `{v}`"))),
                }
            }
            "rho" => self.rho = parse(key, v)?,
            "mock_seed" => self.mock_seed = parse(key, v)?,
            "fitness" => {
                self.fitness = match v {
                    "synthetic" => FitnessKind::Synthetic,
                    "bench" => FitnessKind::Bench,
                    _ => return Err(config_err(format!("fitness must be synthetic or bench, got `{v}`"))),
                }
            }
            "synthetic_seed" => self.synthetic_seed = parse(key, v)?,
            "bench_path" => self.bench_path = Some(PathBuf::from(v)),
            "dataset" => self.dataset = v.to_string(),
            "P" => self.population_size = parse(key, v)?,
            "S" => self.sample_size = parse(key, v)?,
            "C" => self.history_budget = parse(key, v)?,
            "budget_mode" => {
                self.budget_mode = match v {
                    "trained_models" => BudgetMode::TrainedModels,
                    "cycles" => BudgetMode::Cycles,
                    _ => return Err(config_err(format!("budget_mode must be trained_models or cycles, got `{v}`"))),
                }
            }
            "seeds" => self.seeds = SeedSpec::List(parse_list(key, v)?),
            "seed_count" | "seed_base" => {
                let (mut base, mut count) = match self.seeds {
                    SeedSpec::Range { base, count } => (base, count),
                    SeedSpec::List(_) => (0, 10),
                };
                if key == "seed_count" {
                    count = parse(key, v)?;
                } else {
                    base = parse(key, v)?;
                }
                self.seeds = SeedSpec::Range { base, count };
            }
            "input_channels" => self.skeleton.input_channels = parse(key, v)?,
            "input_height" => self.skeleton.input_height = parse(key, v)?,
            "input_width" => self.skeleton.input_width = parse(key, v)?,
            "stem_channels" => self.skeleton.stem_channels = parse(key, v)?,
            "cells_per_stage" => self.skeleton.cells_per_stage = parse(key, v)?,
            "stages" => self.skeleton.stages = parse(key, v)?,
            "num_classes" => self.skeleton.num_classes = parse(key, v)?,
            "init_seed" => self.skeleton.init_seed = parse(key, v)?,
            "t" => self.proxy.t = parse(key, v)?,
            "tau" => self.proxy.tau = parse(key, v)?,
            "batch_size" => self.proxy.batch_size = parse(key, v)?,
            "batch_classes" => self.proxy.batch_classes = parse(key, v)?,
            "batch_file" => self.proxy.source = BatchSource::File(PathBuf::from(v)),
            "batch_seed" => self.batch_seed = parse(key, v)?,
            "c_values" => self.c_values = parse_list(key, v)?,
            "output" => self.output = Some(PathBuf::from(v)),
            _ => return Err(config_err(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ExperimentError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_err(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    /// Apply every key of a flat TOML document (no tables).
    pub fn apply_toml(&mut self, text: &str) -> Result<(), ExperimentError> {
        let table: toml::Table = text.parse().map_err(|e| config_err(format!("{e}")))?;
        for (key, value) in table {
            let rendered = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .iter()
                    .map(|item| match item {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                toml::Value::Table(_) | toml::Value::Datetime(_) => {
                    return Err(config_err(format!("`{key}` must be a plain value")))
                }
            };
            self.set(&key, &rendered)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let mut config = Self::default();
        config.apply_toml(&fs::read_to_string(path)?)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.seeds().is_empty() {
            return Err(config_err("no seeds"));
        }
        match (self.fitness, &self.bench_path) {
            (FitnessKind::Bench, None) => return Err(config_err("fitness = bench needs bench_path")),
            (FitnessKind::Synthetic, Some(_)) => {
                return Err(config_err("bench_path given but fitness = synthetic; pick one fitness source"))
            }
            _ => {}
        }
        if self.mode == ProxyMode::Mock && !(0.0..=1.0).contains(&self.rho) {
            return Err(config_err("rho must lie in [0, 1]"));
        }
        if self.proxy.t <= 0.0 {
            return Err(config_err("t must be positive"));
        }
        if self.proxy.tau == 0 {
            return Err(config_err("tau must be at least 1"));
        }
        self.skeleton.validate()?;
        self.evolution(0).validate()?;
        Ok(())
    }

    pub fn evolution(&self, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            history_budget: self.history_budget,
            population_size: self.population_size,
            sample_size: self.sample_size,
            seed,
            dataset: self.dataset.clone(),
            budget_mode: self.budget_mode,
        }
    }

    fn mode_label(&self) -> String {
        match self.mode {
            ProxyMode::Proxy => "proxy".into(),
            ProxyMode::Mock => format!("mock(rho={})", self.rho),
            ProxyMode::Oracle => "oracle".into(),
        }
    }
}

/// Fitness source and proxy built from a config.
pub struct Environment {
    pub fitness: Arc<dyn FitnessSource>,
    pub proxy: Option<Arc<dyn Proxy>>,
}

impl Environment {
    /// `with_proxy = false` skips proxy construction (baselines never read it).
    pub fn build(config: &RunConfig, with_proxy: bool) -> Result<Self, ExperimentError> {
        config.validate()?;
        let (fitness, fitness_values): (Arc<dyn FitnessSource>, Option<Vec<f64>>) = match config.fitness {
            FitnessKind::Synthetic => {
                let land = SyntheticLandscape::new(config.synthetic_seed);
                let values = land.values().to_vec();
                (Arc::new(land), Some(values))
            }
            FitnessKind::Bench => {
                let path = config.bench_path.as_ref().expect("validated");
                let store = TabularStore::load_jsonl(path)?;
                if store.datasets().all(|d| d != config.dataset) {
                    return Err(config_err(format!(
                        "{} has no records for dataset `{}`",
                        path.display(),
                        config.dataset
                    )));
                }
                let values = if config.mode == ProxyMode::Mock && with_proxy {
                    Some(store.fitness_vector(&config.dataset)?)
                } else {
                    None
                };
                (Arc::new(store), values)
            }
        };
        let proxy: Option<Arc<dyn Proxy>> = if !with_proxy {
            None
        } else {
            Some(match config.mode {
                ProxyMode::Oracle => Arc::new(OracleProxy::new(fitness.clone(), config.dataset.clone())),
                ProxyMode::Mock => {
                    let values = fitness_values.expect("complete fitness vector");
                    Arc::new(NoisyProxy::calibrate(&values, config.rho, config.mock_seed)?)
                }
                ProxyMode::Proxy => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.batch_seed);
                    let batch = make_batch(&config.proxy, &config.skeleton, &mut rng)?;
                    Arc::new(JacobianProxy::new(batch, config.skeleton.clone(), config.proxy.clone())?)
                }
            })
        };
        Ok(Self { fitness, proxy })
    }
}

/// Per-seed summary line of an aggregate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub sim_time: f64,
    pub fitness_evaluations: usize,
    pub proxy_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: String,
    pub label: String,
    pub dataset: String,
    pub rows: Vec<SeedRow>,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub sim_time_mean: f64,
}

/// Display name used in report tables.
pub fn method_label(method: &str) -> String {
    match method {
        "gea" => "G-EA".into(),
        "rea" => "REA".into(),
        "rs" => "RS".into(),
        other => other.to_string(),
    }
}

impl AggregateReport {
    /// Statistics over the best-by-validation model of each run; std uses N−1.
    pub fn from_runs(method: &str, dataset: &str, runs: &[SearchResult]) -> Self {
        let rows: Vec<SeedRow> = runs
            .iter()
            .map(|r| SeedRow {
                seed: r.config.seed,
                val_acc: r.best.fitness,
                test_acc: r.best.test_acc,
                sim_time: r.timing.simulated_search_seconds,
                fitness_evaluations: r.fitness_evaluations,
                proxy_evaluations: r.proxy_evaluations,
            })
            .collect();
        let val: Vec<f64> = rows.iter().map(|r| r.val_acc).collect();
        let test: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
        let time: Vec<f64> = rows.iter().map(|r| r.sim_time).collect();
        Self {
            method: method.to_string(),
            label: method_label(method),
            dataset: dataset.to_string(),
            val_mean: mean(&val),
            val_std: sample_std(&val),
            test_mean: mean(&test),
            test_std: sample_std(&test),
            sim_time_mean: mean(&time),
            rows,
        }
    }
}

/// Contents of a `search` result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub method: String,
    pub mode: String,
    pub dataset: String,
    pub config: RunConfig,
    pub runs: Vec<SearchResult>,
    pub aggregate: AggregateReport,
}

/// Keys holding measured wall-clock values.
const TIMING_KEYS: &[&str] = &["timing", "sim_time", "sim_time_mean"];

fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(*key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

impl ResultDocument {
    /// JSON with every measured-time field removed; identical across reruns of one config.
    pub fn deterministic_body(&self) -> Result<String, ExperimentError> {
        let mut value = serde_json::to_value(self)?;
        strip_timing(&mut value);
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Schema {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn run_seeds(
    method_name: &str,
    config: &RunConfig,
    env: &Environment,
    registry: &MethodRegistry,
    seeds: &[u64],
    history_budget: usize,
) -> Result<Vec<SearchResult>, ExperimentError> {
    let method = registry.get(method_name)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let evo = EvolutionConfig {
                history_budget,
                ..config.evolution(seed)
            };
            Ok(method.run(&evo, env.proxy.as_deref(), env.fitness.as_ref())?)
        })
        .collect()
}

/// Run the configured method once per seed.
pub fn cmd_search(config: &RunConfig, registry: &MethodRegistry) -> Result<ResultDocument, ExperimentError> {
    let method = registry.get(&config.method)?;
    let env = Environment::build(config, method.uses_proxy())?;
    let seeds = config.seeds.seeds();
    let runs = run_seeds(&config.method, config, &env, registry, &seeds, config.history_budget)?;
    let aggregate = AggregateReport::from_runs(&config.method, &config.dataset, &runs);
    let doc = ResultDocument {
        method: config.method.clone(),
        mode: if method.uses_proxy() {
            config.mode_label()
        } else {
            "none".into()
        },
        dataset: config.dataset.clone(),
        config: config.clone(),
        runs,
        aggregate,
    };
    if let Some(path) = &config.output {
        doc.write(path)?;
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    #[serde(rename = "C")]
    pub c: usize,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub sim_time: f64,
}

/// G-EA and REA at every budget in `c_values`, for every seed.
pub fn cmd_sweep(
    config: &RunConfig,
    c_values: &[usize],
    registry: &MethodRegistry,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if c_values.len() < 2 {
        return Err(config_err("sweep needs at least two C values"));
    }
    for &c in c_values {
        EvolutionConfig {
            history_budget: c,
            ..config.evolution(0)
        }
        .validate()?;
    }
    let env = Environment::build(config, true)?;
    let seeds = config.seeds.seeds();
    let mut rows = Vec::new();
    for method in ["gea", "rea"] {
        for &c in c_values {
            for run in run_seeds(method, config, &env, registry, &seeds, c)? {
                rows.push(SweepRow {
                    method: method.to_string(),
                    c,
                    seed: run.config.seed,
                    val_acc: run.best.fitness,
                    test_acc: run.best.test_acc,
                    sim_time: run.timing.simulated_search_seconds,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with header `method,C,seed,val_acc,test_acc,sim_time`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: sample_std(xs),
        }
    }

    pub fn render(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCell {
    pub runs: usize,
    pub val: MeanStd,
    pub test: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub search_time: f64,
    pub cells: BTreeMap<String, DatasetCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub datasets: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Recompute method × dataset statistics from the raw runs of every document.
///
/// Rows appear in first-seen order; documents sharing a method label and dataset are pooled.
pub fn build_report(docs: &[ResultDocument]) -> ReportTable {
    let mut order: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut pooled: BTreeMap<(String, String), Vec<&SearchResult>> = BTreeMap::new();
    for doc in docs {
        let label = method_label(&doc.method);
        if !order.contains(&label) {
            order.push(label.clone());
        }
        if !datasets.contains(&doc.dataset) {
            datasets.push(doc.dataset.clone());
        }
        pooled
            .entry((label, doc.dataset.clone()))
            .or_default()
            .extend(doc.runs.iter());
    }
    let rows = order
        .into_iter()
        .map(|label| {
            let mut cells = BTreeMap::new();
            let mut times = Vec::new();
            for ds in &datasets {
                if let Some(runs) = pooled.get(&(label.clone(), ds.clone())) {
                    let val: Vec<f64> = runs.iter().map(|r| r.best.fitness).collect();
                    let test: Vec<f64> = runs.iter().map(|r| r.best.test_acc).collect();
                    times.extend(runs.iter().map(|r| r.timing.simulated_search_seconds));
                    cells.insert(
                        ds.clone(),
                        DatasetCell {
                            runs: runs.len(),
                            val: MeanStd::of(&val),
                            test: MeanStd::of(&test),
                        },
                    );
                }
            }
            ReportRow {
                method: label,
                search_time: mean(&times),
                cells,
            }
        })
        .collect();
    ReportTable { datasets, rows }
}

impl ReportTable {
    pub fn render_text(&self) -> String {
        let mut header = vec!["Method".to_string(), "Search Time (s)".to_string()];
        for ds in &self.datasets {
            header.push(format!("{ds} validation"));
            header.push(format!("{ds} test"));
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![row.method.clone(), format!("{:.2}", row.search_time)];
            for ds in &self.datasets {
                match row.cells.get(ds) {
                    Some(cell) => {
                        line.push(cell.val.render());
                        line.push(cell.test.render());
                    }
                    None => {
                        line.push("-".into());
                        line.push("-".into());
                    }
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string(), "search_time".to_string()];
        for ds in &self.datasets {
            for stat in ["val_mean", "val_std", "test_mean", "test_std"] {
                header.push(format!("{ds}_{stat}"));
            }
        }
        writer.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.method.clone(), format!("{:.2}", row.search_time)];
            for ds in &self.datasets {
                match row.cells.get(ds) {
                    Some(c) => {
                        for v in [c.val.mean, c.val.std, c.test.mean, c.test.std] {
                            record.push(format!("{v:.2}"));
                        }
                    }
                    None => record.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn cmd_report(paths: &[PathBuf]) -> Result<ReportTable, ExperimentError> {
    if paths.is_empty() {
        return Err(config_err("report needs at least one result file"));
    }
    let docs = paths
        .iter()
        .map(|p| ResultDocument::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_report(&docs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{EvaluatedModel, Timing};
    use crate::ArchEncoding;

    fn oracle_config(seeds: u64) -> RunConfig {
        let mut c = RunConfig::default();
        c.set("mode", "oracle").unwrap();
        c.set("seed_count", &seeds.to_string()).unwrap();
        c.set("C", "40").unwrap();
        c
    }

    #[test]
    fn toml_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_toml(
            r#"
            method = "rea"
            P = 10
            S = 3
            C = 100
            rho = 0.5
            seeds = [1, 2, 3]
            batch_file = "/tmp/batch.bin"
            "#,
        )
        .unwrap();
        c.set_pair("C=200").unwrap();
        assert_eq!(c.method, "rea");
        assert_eq!((c.population_size, c.sample_size, c.history_budget), (10, 3, 200));
        assert_eq!(c.seeds.seeds(), [1, 2, 3]);
        assert_eq!(c.proxy.source, BatchSource::File("/tmp/batch.bin".into()));
        assert!(c.set("nonsense", "1").is_err());
        assert!(c.set("P", "many").is_err());
        assert!(c.apply_toml("[section]\nP = 3").is_err());
        assert!(c.set_pair("novalue").is_err());
        c.set("seed_base", "5").unwrap();
        c.set("seed_count", "2").unwrap();
        assert_eq!(c.seeds.seeds(), [5, 6]);
    }

    #[test]
    fn conflicting_sources_rejected() {
        let mut c = RunConfig::default();
        c.set("bench_path", "x.jsonl").unwrap();
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
        let mut c = RunConfig::default();
        c.set("fitness", "bench").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig {
            seeds: SeedSpec::List(vec![]),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("P", "200").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_bench_file_is_an_error() {
        let mut c = RunConfig::default();
        c.set("fitness", "bench").unwrap();
        c.set("bench_path", "/definitely/not/here.jsonl").unwrap();
        assert!(matches!(
            cmd_search(&c, &MethodRegistry::default()),
            Err(ExperimentError::Bench(BenchError::Io(_)))
        ));
    }

    #[test]
    fn incomplete_store_rejected_for_mock_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        fs::write(
            &path,
            r#"{"arch":"|none~0|+|none~0|none~1|+|none~0|none~1|none~2|","dataset":"cifar10","val_acc":10.0,"test_acc":10.0,"train_seconds":100.0}"#,
        )
        .unwrap();
        let mut c = RunConfig::default();
        c.set("fitness", "bench").unwrap();
        c.set("bench_path", path.to_str().unwrap()).unwrap();
        c.set("mode", "mock").unwrap();
        assert!(matches!(
            cmd_search(&c, &MethodRegistry::default()),
            Err(ExperimentError::Bench(BenchError::Incomplete { .. }))
        ));
        c.set("dataset", "cifar100").unwrap();
        assert!(matches!(cmd_search(&c, &MethodRegistry::default()), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn search_report_aggregates_per_seed_bests() {
        let c = oracle_config(10);
        let doc = cmd_search(&c, &MethodRegistry::default()).unwrap();
        assert_eq!(doc.runs.len(), 10);
        assert_eq!(doc.aggregate.rows.len(), 10);
        let bests: Vec<f64> = doc.runs.iter().map(|r| r.best.fitness).collect();
        assert!((doc.aggregate.val_mean - bests.iter().sum::<f64>() / 10.0).abs() < 1e-12);
        assert_eq!(doc.aggregate.label, "G-EA");
    }

    #[test]
    fn rerun_is_byte_identical_without_timing() {
        let c = oracle_config(3);
        let reg = MethodRegistry::default();
        let a = cmd_search(&c, &reg).unwrap().deterministic_body().unwrap();
        let b = cmd_search(&c, &reg).unwrap().deterministic_body().unwrap();
        assert_eq!(a, b);
        assert!(!a.contains("proxy_wall_seconds"));
    }

    #[test]
    fn rea_and_gea_budget_parity() {
        let reg = MethodRegistry::default();
        let mut c = oracle_config(3);
        let gea = cmd_search(&c, &reg).unwrap();
        c.set("method", "rea").unwrap();
        let rea = cmd_search(&c, &reg).unwrap();
        for (g, r) in gea.aggregate.rows.iter().zip(&rea.aggregate.rows) {
            assert_eq!(g.fitness_evaluations, 40);
            assert_eq!(r.fitness_evaluations, 40);
            assert_eq!(r.proxy_evaluations, 0);
            assert_eq!(g.proxy_evaluations, 40 + 35 * 5);
        }
        assert_eq!(rea.mode, "none");
    }

    #[test]
    fn sweep_rows_and_header() {
        let mut c = oracle_config(10);
        c.set("C", "150").unwrap();
        let rows = cmd_sweep(&c, &[25, 50, 100, 150], &MethodRegistry::default()).unwrap();
        assert_eq!(rows.len(), 80);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,C,seed,val_acc,test_acc,sim_time");
        assert_eq!(text.lines().count(), 81);
        assert!(cmd_sweep(&c, &[50], &MethodRegistry::default()).is_err());
        assert!(cmd_sweep(&c, &[3, 50], &MethodRegistry::default()).is_err());
    }

    fn fake_run(method: &str, dataset: &str, seed: u64, val: f64, test: f64) -> SearchResult {
        let best = EvaluatedModel {
            arch: ArchEncoding::from_index(0).unwrap(),
            proxy: None,
            fitness: val,
            test_acc: test,
            birth: 0,
            train_seconds: 10.0,
        };
        SearchResult {
            method: method.into(),
            config: EvolutionConfig {
                seed,
                dataset: dataset.into(),
                ..EvolutionConfig::default()
            },
            best: best.clone(),
            history: vec![best],
            cycles: vec![],
            fitness_evaluations: 1,
            proxy_evaluations: 0,
            timing: Timing {
                train_seconds: 10.0,
                proxy_wall_seconds: 0.0,
                simulated_search_seconds: 10.0,
            },
        }
    }

    fn fake_doc(method: &str, dataset: &str, vals: &[f64]) -> ResultDocument {
        let runs: Vec<SearchResult> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| fake_run(method, dataset, i as u64, v, v))
            .collect();
        ResultDocument {
            method: method.into(),
            mode: "oracle".into(),
            dataset: dataset.into(),
            config: RunConfig::default(),
            aggregate: AggregateReport::from_runs(method, dataset, &runs),
            runs,
        }
    }

    #[test]
    fn two_point_report_cell() {
        let table = build_report(&[fake_doc("gea", "cifar10", &[93.9, 94.1])]);
        let cell = &table.rows[0].cells["cifar10"];
        assert_eq!(cell.val.render(), "94.00±0.14");
        assert!(table.render_text().contains("94.00±0.14"));
    }

    #[test]
    fn report_groups_datasets_and_methods() {
        let docs = [
            fake_doc("rea", "cifar10", &[93.0, 94.0]),
            fake_doc("gea", "cifar10", &[94.0, 94.2]),
            fake_doc("gea", "cifar100", &[72.0, 72.2]),
        ];
        let table = build_report(&docs);
        assert_eq!(table.datasets, ["cifar10", "cifar100"]);
        assert_eq!(table.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["REA", "G-EA"]);
        assert!(!table.rows[0].cells.contains_key("cifar100"));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,search_time,cifar10_val_mean,cifar10_val_std,cifar10_test_mean,cifar10_test_std,\
             cifar100_val_mean,cifar100_val_std,cifar100_test_mean,cifar100_test_std"
        );
        assert_eq!(lines.next().unwrap(), "REA,10.00,93.50,0.71,93.50,0.71,,,,");
    }

    #[test]
    fn report_rejects_foreign_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        fs::write(&path, r#"{"hello":"world"}"#).unwrap();
        assert!(matches!(cmd_report(&[path]), Err(ExperimentError::Schema { .. })));
        assert!(cmd_report(&[]).is_err());
    }

    #[test]
    fn result_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut c = oracle_config(2);
        c.output = Some(path.clone());
        let doc = cmd_search(&c, &MethodRegistry::default()).unwrap();
        let back = ResultDocument::read(&path).unwrap();
        assert_eq!(back, doc);
        let table = cmd_report(&[path]).unwrap();
        assert_eq!(table.rows[0].cells["cifar10"].runs, 2);
    }
}
