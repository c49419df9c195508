//! Training-free architecture scoring from input-Jacobian correlations.
//!
//! The Jacobian of each sample's summed logits with respect to its input is
//! collected into an `N × D` matrix, rows are grouped by class, and each
//! group's row-correlation matrix is summarized by a sum of `log(|Σ_ij| + t)`.
//! Per-class summaries are combined into a single score `z`; higher is better.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchEncoding;
use crate::autodiff::{CompGraph, GraphError, Tensor};
use crate::network::{MicroNetwork, SkeletonConfig};

/// Small constant inside the log.
pub const DEFAULT_T: f64 = 1e-5;
/// Class-count threshold between the summed and the normalized regimes.
pub const DEFAULT_TAU: usize = 100;

/// Sentinel `z` for invalid scores. Ranking always goes through [`ProxyScore::rank_cmp`].
pub const INVALID_Z: f64 = f64::MIN;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("batch needs at least as many samples as classes (N={n}, K={k})")]
    TooFewSamples { n: usize, k: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("malformed batch file: {0}")]
    Malformed(String),
    #[error("batch shape {got:?} does not match network input {expected:?}")]
    ShapeMismatch { got: Vec<usize>, expected: Vec<usize> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "lowercase")]
pub enum BatchSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub t: f64,
    pub tau: usize,
    pub batch_size: usize,
    /// Class count of synthetic batches.
    pub batch_classes: usize,
    pub source: BatchSource,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_T,
            tau: DEFAULT_TAU,
            batch_size: 32,
            batch_classes: 10,
            source: BatchSource::Synthetic,
        }
    }
}

/// Labeled images used to probe an untrained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Batch {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self, BatchError> {
        let n = images.batch();
        if labels.len() != n || images.dims4().is_none() {
            return Err(BatchError::Malformed(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if n < 2 {
            return Err(BatchError::Malformed("batch needs at least two samples".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(BatchError::LabelOutOfRange { label, k: num_classes });
        }
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c < 2) {
            return Err(BatchError::Malformed("no class has two or more samples".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same batch with samples reordered so that new sample `i` is old sample `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Batch {
        let per = self.images.features();
        let mut data = Vec::with_capacity(self.images.len());
        for &i in order {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Batch {
            images: Tensor::new(self.images.shape().to_vec(), data),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Stratified synthetic batch: Gaussian class means in `ℝ^D` plus `N(0, 0.5²)` noise.
///
/// Labels are assigned round-robin, so every class receives `⌊N/K⌋` or `⌈N/K⌉` samples.
pub fn make_synthetic_batch<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    input_shape: [usize; 3],
    rng: &mut R,
) -> Result<Batch, BatchError> {
    if n < k || k == 0 {
        return Err(BatchError::TooFewSamples { n, k });
    }
    let d: usize = input_shape.iter().product();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let means: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| unit.sample(rng)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut data = Vec::with_capacity(n * d);
    for &label in &labels {
        data.extend(means[label].iter().map(|m| m + noise.sample(rng)));
    }
    let [c, h, w] = input_shape;
    Batch::new(Tensor::new(vec![n, c, h, w], data), labels, k)
}

/// Batch according to `config.source`.
pub fn make_batch<R: Rng + ?Sized>(
    config: &ProxyConfig,
    skeleton: &SkeletonConfig,
    rng: &mut R,
) -> Result<Batch, BatchError> {
    let batch = match &config.source {
        BatchSource::Synthetic => {
            make_synthetic_batch(config.batch_size, config.batch_classes, skeleton.input_shape(), rng)?
        }
        BatchSource::File(path) => read_batch_file(path)?,
    };
    let expected = skeleton.input_shape().to_vec();
    if batch.images.shape()[1..] != expected[..] {
        return Err(BatchError::ShapeMismatch {
            got: batch.images.shape()[1..].to_vec(),
            expected,
        });
    }
    Ok(batch)
}

/// Raw batch file: `N, C, H, W, K` as little-endian `i32`, then `N·C·H·W` little-endian
/// `f32` pixels in `(N, C, H, W)` order, then `N` little-endian `i32` labels.
pub fn write_batch<W: Write>(batch: &Batch, mut out: W) -> io::Result<()> {
    let (n, c, h, w) = batch.images.dims4().expect("batch images are 4-d");
    for v in [n, c, h, w, batch.num_classes] {
        out.write_all(&(v as i32).to_le_bytes())?;
    }
    for &v in batch.images.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    for &l in &batch.labels {
        out.write_all(&(l as i32).to_le_bytes())?;
    }
    out.flush()
}

pub fn read_batch<R: Read>(mut input: R) -> Result<Batch, BatchError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let word = |i: usize| -> Result<[u8; 4], BatchError> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| b.try_into().expect("four bytes"))
            .ok_or_else(|| BatchError::Malformed(format!("truncated at word {i}")))
    };
    let mut header = [0usize; 5];
    for (i, slot) in header.iter_mut().enumerate() {
        let v = i32::from_le_bytes(word(i)?);
        if v <= 0 {
            return Err(BatchError::Malformed(format!("header field {i} is {v}")));
        }
        *slot = v as usize;
    }
    let [n, c, h, w, k] = header;
    let pixels = n * c * h * w;
    let expected_len = (5 + pixels + n) * 4;
    if bytes.len() != expected_len {
        return Err(BatchError::Malformed(format!(
            "expected {expected_len} bytes for header {header:?}, found {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(pixels);
    for i in 0..pixels {
        let v = f32::from_le_bytes(word(5 + i)?) as f64;
        if !v.is_finite() {
            return Err(BatchError::Malformed(format!("non-finite pixel at {i}")));
        }
        data.push(v);
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let v = i32::from_le_bytes(word(5 + pixels + i)?);
        if v < 0 {
            return Err(BatchError::Malformed(format!("negative label at {i}")));
        }
        labels.push(v as usize);
    }
    Batch::new(Tensor::new(vec![n, c, h, w], data), labels, k)
}

pub fn write_batch_file(path: &Path, batch: &Batch) -> io::Result<()> {
    write_batch(batch, BufWriter::new(File::create(path)?))
}

pub fn read_batch_file(path: &Path) -> Result<Batch, BatchError> {
    read_batch(BufReader::new(File::open(path)?))
}

/// `N × D` matrix; row `i` is the gradient of sample `i`'s summed logits.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Set when any entry is non-finite or the whole matrix is zero.
    pub degenerate: bool,
}

impl JacobianMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// One forward and one summed-logit backward pass over the whole batch.
pub fn compute_jacobian(graph: &mut CompGraph, batch: &Batch) -> Result<JacobianMatrix, GraphError> {
    graph.forward(&batch.images)?;
    let grad = graph.backward_to_input()?;
    let rows = grad.batch();
    let cols = grad.features();
    let data = grad.into_data();
    let degenerate = data.iter().any(|v| !v.is_finite()) || data.iter().all(|&v| v == 0.0);
    Ok(JacobianMatrix {
        rows,
        cols,
        data,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGroup {
    pub class: usize,
    /// Original row indices, ascending.
    pub indices: Vec<usize>,
    /// `N_k × D`, row-major.
    pub rows: Vec<f64>,
    pub cols: usize,
}

impl ClassGroup {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("{labels} labels for a Jacobian with {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("class {class} has a zero-variance Jacobian row")]
    DegenerateGroup { class: usize },
}

/// Stable partition of the rows by label; groups ordered by class id, empty classes omitted.
pub fn split_by_class(jacobian: &JacobianMatrix, labels: &[usize], k: usize) -> Result<Vec<ClassGroup>, ScoreError> {
    if labels.len() != jacobian.rows {
        return Err(ScoreError::LabelCount {
            labels: labels.len(),
            rows: jacobian.rows,
        });
    }
    let mut groups: Vec<ClassGroup> = (0..k)
        .map(|class| ClassGroup {
            class,
            indices: Vec::new(),
            rows: Vec::new(),
            cols: jacobian.cols,
        })
        .collect();
    for (i, &label) in labels.iter().enumerate() {
        let group = groups.get_mut(label).ok_or(ScoreError::LabelOutOfRange { label, k })?;
        group.indices.push(i);
        group.rows.extend_from_slice(jacobian.row(i));
    }
    groups.retain(|g| !g.is_empty());
    Ok(groups)
}

/// Symmetric `n × n` Pearson correlation matrix between Jacobian rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Each row is centered over its `D` entries and scaled to unit norm; entry `(i, j)` is
/// the inner product of normalized rows `i` and `j`.
pub fn correlation_matrix(group: &ClassGroup) -> Result<CorrelationMatrix, ScoreError> {
    let n = group.len();
    let d = group.cols;
    let mut normalized = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = group.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let centered: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() || norm <= 1e-12 * scale || norm == 0.0 {
            return Err(ScoreError::DegenerateGroup { class: group.class });
        }
        normalized.extend(centered.iter().map(|v| v / norm));
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let ri = &normalized[i * d..(i + 1) * d];
        for j in i..n {
            let rj = &normalized[j * d..(j + 1) * d];
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            data[i * n + j] = dot;
            data[j * n + i] = dot;
        }
    }
    Ok(CorrelationMatrix { n, data })
}

/// Per-class summary `E_k`.
///
/// `Σ_ij log(|Σ_ij| + t)`, divided by the entry count `N_k²` when `K > τ`.
pub fn class_score(corr: &CorrelationMatrix, num_classes: usize, config: &ProxyConfig) -> f64 {
    let total: f64 = corr.data.iter().map(|v| (v.abs() + config.t).ln()).sum();
    if num_classes <= config.tau {
        total
    } else {
        total / corr.data.len() as f64
    }
}

/// Architecture score `z` from per-class summaries.
///
/// `K ≤ τ`: `Σ |e_w|`. Otherwise the sum of pairwise `|e_i − e_j|` over `i < j`, divided by `K`.
pub fn aggregate(per_class: &[f64], config: &ProxyConfig) -> f64 {
    let k = per_class.len();
    if k <= config.tau {
        per_class.iter().map(|e| e.abs()).sum()
    } else {
        let mut acc = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                acc += (per_class[i] - per_class[j]).abs();
            }
        }
        acc / k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub z: f64,
    pub valid: bool,
    /// One entry per class present in the batch, ordered by class id. Empty when invalid.
    pub per_class: Vec<f64>,
}

impl ProxyScore {
    pub fn valid(z: f64) -> Self {
        Self {
            z,
            valid: true,
            per_class: Vec::new(),
        }
    }

    pub fn invalid() -> Self {
        Self {
            z: INVALID_Z,
            valid: false,
            per_class: Vec::new(),
        }
    }

    /// Total order for ranking: any valid score beats any invalid one, then larger `z` wins.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        match (self.valid, other.valid) {
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            (false, false) => Ordering::Equal,
            (true, true) => self.z.total_cmp(&other.z),
        }
    }
}

/// Score an already-built graph against a batch. Degenerate stages yield an invalid score.
pub fn score_graph(graph: &mut CompGraph, batch: &Batch, config: &ProxyConfig) -> ProxyScore {
    let Ok(jacobian) = compute_jacobian(graph, batch) else {
        return ProxyScore::invalid();
    };
    if jacobian.degenerate {
        return ProxyScore::invalid();
    }
    let Ok(groups) = split_by_class(&jacobian, &batch.labels, batch.num_classes) else {
        return ProxyScore::invalid();
    };
    let k = groups.len();
    let mut per_class = Vec::with_capacity(k);
    for group in &groups {
        match correlation_matrix(group) {
            Ok(corr) => per_class.push(class_score(&corr, k, config)),
            Err(_) => return ProxyScore::invalid(),
        }
    }
    let z = aggregate(&per_class, config);
    if !z.is_finite() {
        return ProxyScore::invalid();
    }
    ProxyScore {
        z,
        valid: true,
        per_class,
    }
}

/// Build the network for `arch` with weights from `rng`, then score it.
pub fn score_architecture<R: Rng + ?Sized>(
    arch: &ArchEncoding,
    batch: &Batch,
    skeleton: &SkeletonConfig,
    config: &ProxyConfig,
    rng: &mut R,
) -> ProxyScore {
    match MicroNetwork::build(arch, skeleton, rng) {
        Ok(mut net) => score_graph(net.graph_mut(), batch, config),
        Err(_) => ProxyScore::invalid(),
    }
}

/// Anything that can rank untrained architectures.
///
/// Implementations must be pure functions of `(arch, rng stream)` so that children
/// can be scored concurrently with independently derived streams.
pub trait Proxy: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, arch: &ArchEncoding, rng: &mut dyn RngCore) -> ProxyScore;
}

/// The Jacobian-correlation score on a fixed batch.
#[derive(Debug, Clone)]
pub struct JacobianProxy {
    batch: Batch,
    skeleton: SkeletonConfig,
    config: ProxyConfig,
}

impl JacobianProxy {
    pub fn new(batch: Batch, skeleton: SkeletonConfig, config: ProxyConfig) -> Result<Self, BatchError> {
        let expected = skeleton.input_shape().to_vec();
        if batch.images.shape()[1..] != expected[..] {
            return Err(BatchError::ShapeMismatch {
                got: batch.images.shape()[1..].to_vec(),
                expected,
            });
        }
        Ok(Self {
            batch,
            skeleton,
            config,
        })
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }
}

impl Proxy for JacobianProxy {
    fn name(&self) -> &str {
        "jacobian"
    }

    fn score(&self, arch: &ArchEncoding, rng: &mut dyn RngCore) -> ProxyScore {
        score_architecture(arch, &self.batch, &self.skeleton, &self.config, rng)
    }
}
