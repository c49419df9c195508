//! Fitness sources and mock proxies.
//!
//! - [`TabularStore`]: NAS-Bench-201-style records ingested from JSONL.
//! - [`SyntheticLandscape`]: a seeded, fully enumerable fitness function with pairwise
//!   edge interactions, used as a test oracle.
//! - [`NoisyProxy`] and [`OracleProxy`]: proxies with a controlled rank correlation to fitness.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchEncoding, ParseArchError, NUM_EDGES, NUM_OPS, SPACE_SIZE};
use crate::evolution::{FitnessError, FitnessRecord, FitnessSource};
use crate::proxy::{Proxy, ProxyScore};
use crate::stats;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: malformed JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Arch { line: usize, source: ParseArchError },
    #[error("line {line}: duplicate record for {arch} on {dataset}")]
    Duplicate { line: usize, arch: String, dataset: String },
    #[error("line {line}: {field} = {value} is out of range")]
    OutOfRange { line: usize, field: &'static str, value: f64 },
    #[error("dataset {dataset} has {count} of 15625 architectures")]
    Incomplete { dataset: String, count: usize },
    #[error("could not calibrate a noisy proxy to spearman {target} (reached {achieved})")]
    Calibration { target: f64, achieved: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRecord {
    pub arch: String,
    pub dataset: String,
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_seconds: f64,
}

/// Immutable after loading, so shareable across threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularStore {
    records: HashMap<(usize, String), BenchRecord>,
    counts: BTreeMap<String, usize>,
}

impl TabularStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, BenchError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, BenchError> {
        let mut store = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: BenchRecord =
                serde_json::from_str(&line).map_err(|source| BenchError::Json { line: line_no, source })?;
            store.insert_at(record, line_no)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, record: BenchRecord) -> Result<(), BenchError> {
        let line = self.len() + 1;
        self.insert_at(record, line)
    }

    fn insert_at(&mut self, record: BenchRecord, line: usize) -> Result<(), BenchError> {
        let arch = ArchEncoding::parse_str(&record.arch).map_err(|source| BenchError::Arch { line, source })?;
        for (field, value) in [("val_acc", record.val_acc), ("test_acc", record.test_acc)] {
            if !(0.0..=100.0).contains(&value) {
                return Err(BenchError::OutOfRange { line, field, value });
            }
        }
        if !(record.train_seconds >= 0.0 && record.train_seconds.is_finite()) {
            return Err(BenchError::OutOfRange {
                line,
                field: "train_seconds",
                value: record.train_seconds,
            });
        }
        let key = (arch.index(), record.dataset.clone());
        if self.records.contains_key(&key) {
            return Err(BenchError::Duplicate {
                line,
                arch: record.arch,
                dataset: record.dataset,
            });
        }
        *self.counts.entry(record.dataset.clone()).or_default() += 1;
        self.records.insert(key, record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Whether every one of the 15625 cells has a record for `dataset`.
    pub fn is_complete(&self, dataset: &str) -> bool {
        self.counts.get(dataset) == Some(&SPACE_SIZE)
    }

    pub fn record(&self, arch: &ArchEncoding, dataset: &str) -> Option<&BenchRecord> {
        self.records.get(&(arch.index(), dataset.to_string()))
    }

    pub fn lookup(&self, arch: &ArchEncoding, dataset: &str) -> Result<FitnessRecord, FitnessError> {
        self.record(arch, dataset)
            .map(|r| FitnessRecord {
                val_acc: r.val_acc,
                test_acc: r.test_acc,
                train_seconds: r.train_seconds,
            })
            .ok_or_else(|| FitnessError::NotFound {
                arch: arch.encode_str(),
                dataset: dataset.to_string(),
            })
    }

    /// Validation accuracy of every cell in enumeration order.
    pub fn fitness_vector(&self, dataset: &str) -> Result<Vec<f64>, BenchError> {
        if !self.is_complete(dataset) {
            return Err(BenchError::Incomplete {
                dataset: dataset.to_string(),
                count: self.counts.get(dataset).copied().unwrap_or(0),
            });
        }
        Ok((0..SPACE_SIZE)
            .map(|i| self.records[&(i, dataset.to_string())].val_acc)
            .collect())
    }

    /// Records sorted by dataset, then cell index.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut keys: Vec<&(usize, String)> = self.records.keys().collect();
        keys.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        for key in keys {
            serde_json::to_writer(&mut out, &self.records[key])?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl FitnessSource for TabularStore {
    fn evaluate(&self, arch: &ArchEncoding, dataset: &str) -> Result<FitnessRecord, FitnessError> {
        self.lookup(arch, dataset)
    }
}

/// Train-time charge for every synthetic evaluation.
pub const SYNTHETIC_TRAIN_SECONDS: f64 = 120.0;

/// Relative scale of the pairwise edge-interaction terms.
const INTERACTION_SCALE: f64 = 0.5;

/// Seeded fitness over the full cell space, rescaled to `[0, 100]`.
///
/// `raw(a) = Σ_e u[e][a_e] + Σ_{e<f} w[e,f][a_e][a_f]` with Gaussian utilities and interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandscape {
    seed: u64,
    fitness: Vec<f64>,
}

impl SyntheticLandscape {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let inter = Normal::new(0.0, INTERACTION_SCALE).expect("valid normal");
        let utilities: Vec<[f64; NUM_OPS]> = (0..NUM_EDGES)
            .map(|_| std::array::from_fn(|_| unit.sample(&mut rng)))
            .collect();
        let mut pairs = Vec::new();
        for e in 0..NUM_EDGES {
            for f in e + 1..NUM_EDGES {
                let table: [[f64; NUM_OPS]; NUM_OPS] =
                    std::array::from_fn(|_| std::array::from_fn(|_| inter.sample(&mut rng)));
                pairs.push((e, f, table));
            }
        }
        let raw: Vec<f64> = crate::arch::enumerate_all()
            .map(|arch| {
                let ops = arch.ops().map(|op| op.index());
                let additive: f64 = ops.iter().enumerate().map(|(e, &o)| utilities[e][o]).sum();
                let pairwise: f64 = pairs.iter().map(|(e, f, t)| t[ops[*e]][ops[*f]]).sum();
                additive + pairwise
            })
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fitness = raw.iter().map(|r| 100.0 * (r - lo) / (hi - lo)).collect();
        Self { seed, fitness }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fitness in enumeration order.
    pub fn values(&self) -> &[f64] {
        &self.fitness
    }

    pub fn fitness(&self, arch: &ArchEncoding) -> f64 {
        self.fitness[arch.index()]
    }

    /// Cell indices sorted best first; ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..SPACE_SIZE).collect();
        idx.sort_by(|&a, &b| self.fitness[b].total_cmp(&self.fitness[a]).then(a.cmp(&b)));
        idx
    }

    /// 0-based rank of `arch` (0 = global optimum).
    pub fn rank_of(&self, arch: &ArchEncoding) -> usize {
        let f = self.fitness(arch);
        self.fitness.iter().filter(|&&v| v > f).count()
    }
}

impl FitnessSource for SyntheticLandscape {
    fn evaluate(&self, arch: &ArchEncoding, _dataset: &str) -> Result<FitnessRecord, FitnessError> {
        let f = self.fitness(arch);
        Ok(FitnessRecord {
            val_acc: f,
            test_acc: f,
            train_seconds: SYNTHETIC_TRAIN_SECONDS,
        })
    }
}

/// Proxy equal to the fitness source's validation accuracy.
#[derive(Clone)]
pub struct OracleProxy {
    fitness: Arc<dyn FitnessSource>,
    dataset: String,
}

impl OracleProxy {
    pub fn new(fitness: Arc<dyn FitnessSource>, dataset: impl Into<String>) -> Self {
        Self {
            fitness,
            dataset: dataset.into(),
        }
    }
}

impl Proxy for OracleProxy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score(&self, arch: &ArchEncoding, _rng: &mut dyn RngCore) -> ProxyScore {
        match self.fitness.evaluate(arch, &self.dataset) {
            Ok(r) => ProxyScore::valid(r.val_acc),
            Err(_) => ProxyScore::invalid(),
        }
    }
}

/// Mock proxy whose Spearman correlation with fitness over the whole space is calibrated.
///
/// `score = a · Φ⁻¹(rank) + sqrt(1 − a²) · noise`, with `a` found by bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyProxy {
    scores: Vec<f64>,
    target: f64,
    achieved: f64,
    mix: f64,
}

const CALIBRATION_TOLERANCE: f64 = 0.05;
const CALIBRATION_STEPS: usize = 40;

impl NoisyProxy {
    /// `fitness` must hold one value per cell in enumeration order.
    pub fn calibrate(fitness: &[f64], rho: f64, seed: u64) -> Result<Self, BenchError> {
        assert_eq!(fitness.len(), SPACE_SIZE, "fitness must cover the whole space");
        if !(0.0..=1.0).contains(&rho) {
            return Err(BenchError::Calibration {
                target: rho,
                achieved: f64::NAN,
            });
        }
        let n = fitness.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
        let mut normal_score = vec![0.0; n];
        for (r, &i) in order.iter().enumerate() {
            normal_score[i] = stats::normal_quantile((r as f64 + 0.5) / n as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let noise: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();

        let mixed = |a: f64| -> Vec<f64> {
            let b = (1.0 - a * a).max(0.0).sqrt();
            normal_score.iter().zip(&noise).map(|(s, e)| a * s + b * e).collect()
        };
        let corr = |scores: &[f64]| stats::spearman(scores, fitness);

        let mix = if rho >= 1.0 {
            1.0
        } else if rho <= 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..CALIBRATION_STEPS {
                let mid = 0.5 * (lo + hi);
                if corr(&mixed(mid)) < rho {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let scores = mixed(mix);
        let achieved = corr(&scores);
        if (achieved - rho).abs() > CALIBRATION_TOLERANCE {
            return Err(BenchError::Calibration { target: rho, achieved });
        }
        Ok(Self {
            scores,
            target: rho,
            achieved,
            mix,
        })
    }

    pub fn for_landscape(landscape: &SyntheticLandscape, rho: f64, seed: u64) -> Result<Self, BenchError> {
        Self::calibrate(landscape.values(), rho, seed)
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Spearman correlation with fitness over all cells.
    pub fn achieved(&self) -> f64 {
        self.achieved
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl Proxy for NoisyProxy {
    fn name(&self) -> &str {
        "mock"
    }

    fn score(&self, arch: &ArchEncoding, _rng: &mut dyn RngCore) -> ProxyScore {
        ProxyScore::valid(self.scores[arch.index()])
    }
}

/// Random fitness in `[0, 100)` for every cell, for order-statistics tests.
pub fn uniform_landscape_values<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    (0..SPACE_SIZE).map(|_| rng.random::<f64>() * 100.0).collect()
}
