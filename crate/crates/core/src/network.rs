//! Instantiate a cell as a small concrete network for scoring.
//!
//! Layout: `stem (3×3 conv + BN) → cells → head (BN → ReLU → GAP → linear)`.
//! Every cell keeps the stem channel count; there are no reduction blocks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchEncoding, Operation, EDGE_NODES};
use crate::autodiff::{CompGraph, GraphError, NodeId, Op, Tensor};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub cells_per_stage: usize,
    pub stages: usize,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_height: 8,
            input_width: 8,
            stem_channels: 8,
            cells_per_stage: 1,
            stages: 1,
            num_classes: 10,
            init_seed: 0,
        }
    }
}

impl SkeletonConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(NetworkError::InvalidSkeleton("input dimensions must be positive"));
        }
        if self.stem_channels == 0 {
            return Err(NetworkError::InvalidSkeleton("stem_channels must be at least 1"));
        }
        if self.cells_per_stage == 0 || self.stages == 0 {
            return Err(NetworkError::InvalidSkeleton("need at least one cell"));
        }
        if self.num_classes < 2 {
            return Err(NetworkError::InvalidSkeleton("num_classes must be at least 2"));
        }
        Ok(())
    }

    pub fn total_cells(&self) -> usize {
        self.cells_per_stage * self.stages
    }

    /// Input shape per sample, `(C, H, W)`.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.input_height, self.input_width]
    }
}

/// Flattened per-sample input dimension `C·H·W`.
pub fn jacobian_input_dim(skeleton: &SkeletonConfig) -> usize {
    skeleton.input_shape().iter().product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamScope {
    Stem,
    Cell { cell: usize, edge: usize },
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub scope: ParamScope,
    pub name: &'static str,
}

#[derive(Debug, Clone)]
pub struct MicroNetwork {
    graph: CompGraph,
    params: BTreeMap<ParamKey, NodeId>,
    skeleton: SkeletonConfig,
}

fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

impl MicroNetwork {
    /// Weights are He-normal and drawn from `rng` in a fixed order
    /// (stem, then cells and edges in order, then the head); biases are zero.
    pub fn build<R: Rng + ?Sized>(
        arch: &ArchEncoding,
        skeleton: &SkeletonConfig,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        skeleton.validate()?;
        let cs = skeleton.stem_channels;
        let c0 = skeleton.input_channels;
        let mut graph = CompGraph::new();
        let mut params = BTreeMap::new();

        let stem_w = he_normal(&[cs, c0, 3, 3], c0 * 9, rng);
        let stem = graph.conv2d(graph.input(), stem_w)?;
        params.insert(ParamKey { scope: ParamScope::Stem, name: "conv" }, stem);
        let mut x = graph.batch_norm(stem)?;

        for cell in 0..skeleton.total_cells() {
            x = build_cell(&mut graph, &mut params, arch, x, cell, cs, rng)?;
        }

        let bn = graph.batch_norm(x)?;
        let act = graph.relu(bn)?;
        let pooled = graph.global_avg_pool(act)?;
        let head_w = he_normal(&[cs, skeleton.num_classes], cs, rng);
        let logits = graph.linear(pooled, head_w, Tensor::zeros(&[skeleton.num_classes]))?;
        params.insert(ParamKey { scope: ParamScope::Head, name: "linear" }, logits);
        graph.set_output(logits);

        Ok(Self {
            graph,
            params,
            skeleton: skeleton.clone(),
        })
    }

    /// Build with weights drawn from `skeleton.init_seed`.
    pub fn build_seeded(arch: &ArchEncoding, skeleton: &SkeletonConfig) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(skeleton.init_seed);
        Self::build(arch, skeleton, &mut rng)
    }

    pub fn graph(&self) -> &CompGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut CompGraph {
        &mut self.graph
    }

    pub fn skeleton(&self) -> &SkeletonConfig {
        &self.skeleton
    }

    pub fn param_keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }

    /// Weight tensor stored under `key` (conv kernels or the head matrix).
    pub fn weight(&self, key: &ParamKey) -> Option<&Tensor> {
        match self.graph.op(*self.params.get(key)?) {
            Op::Conv2d { weight } | Op::Linear { weight, .. } => Some(weight),
            _ => None,
        }
    }

    /// Count of scalar parameters, including the zero-initialized head bias.
    pub fn param_count(&self) -> usize {
        self.params
            .values()
            .map(|&id| match self.graph.op(id) {
                Op::Conv2d { weight } => weight.len(),
                Op::Linear { weight, bias } => weight.len() + bias.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn forward(&mut self, images: &Tensor) -> Result<Tensor, GraphError> {
        self.graph.forward(images)
    }

    pub fn backward_to_input(&self) -> Result<Tensor, GraphError> {
        self.graph.backward_to_input()
    }
}

fn build_cell<R: Rng + ?Sized>(
    graph: &mut CompGraph,
    params: &mut BTreeMap<ParamKey, NodeId>,
    arch: &ArchEncoding,
    input: NodeId,
    cell: usize,
    channels: usize,
    rng: &mut R,
) -> Result<NodeId, NetworkError> {
    let mut nodes = vec![input];
    for target in 1..=3 {
        let mut terms = Vec::new();
        for (edge, &(source, to)) in EDGE_NODES.iter().enumerate() {
            if to != target {
                continue;
            }
            let src = nodes[source];
            let term = match arch.op(edge) {
                Operation::None => continue,
                Operation::SkipConnect => src,
                Operation::AvgPool3x3 => graph.avg_pool3x3(src)?,
                op @ (Operation::Conv1x1 | Operation::Conv3x3) => {
                    let k = if op == Operation::Conv1x1 { 1 } else { 3 };
                    let w = he_normal(&[channels, channels, k, k], channels * k * k, rng);
                    let pre = graph.relu(src)?;
                    let conv = graph.conv2d(pre, w)?;
                    params.insert(
                        ParamKey {
                            scope: ParamScope::Cell { cell, edge },
                            name: "conv",
                        },
                        conv,
                    );
                    graph.batch_norm(conv)?
                }
            };
            terms.push(term);
        }
        let node = if terms.is_empty() {
            graph.zeros_like(input)?
        } else {
            graph.sum(&terms)?
        };
        nodes.push(node);
    }
    Ok(nodes[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{enumerate_all, Operation::*};

    fn skeleton() -> SkeletonConfig {
        SkeletonConfig::default()
    }

    fn images(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[n, 3, 8, 8], 1.0, &mut rng)
    }

    #[test]
    fn input_dims() {
        let mut s = skeleton();
        assert_eq!(jacobian_input_dim(&s), 192);
        (s.input_height, s.input_width) = (32, 32);
        assert_eq!(jacobian_input_dim(&s), 3072);
        (s.input_height, s.input_width) = (16, 16);
        assert_eq!(jacobian_input_dim(&s), 768);
    }

    #[test]
    fn all_none_gives_constant_logits() {
        let mut net = MicroNetwork::build_seeded(&ArchEncoding::uniform(None), &skeleton()).unwrap();
        let a = net.forward(&images(4, 1)).unwrap();
        let b = net.forward(&images(4, 2)).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn all_skip_cell_quadruples_its_input() {
        let mut graph = CompGraph::new();
        let mut params = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = graph.input();
        let out = build_cell(
            &mut graph,
            &mut params,
            &ArchEncoding::uniform(SkipConnect),
            input,
            0,
            3,
            &mut rng,
        )
        .unwrap();
        graph.set_output(out);
        let x = images(2, 3);
        let y = graph.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 4.0 * b);
        }
    }

    #[test]
    fn param_count_matches_layer_bookkeeping() {
        let s = SkeletonConfig {
            stem_channels: 8,
            cells_per_stage: 1,
            stages: 1,
            num_classes: 10,
            ..skeleton()
        };
        let net = MicroNetwork::build_seeded(&ArchEncoding::uniform(Conv3x3), &s).unwrap();
        let stem = 8 * 3 * 3 * 3;
        let edges = 6 * (8 * 8 * 3 * 3);
        let head = 8 * 10 + 10;
        assert_eq!(net.param_count(), stem + edges + head);
        assert_eq!(net.param_count(), 3762);
    }

    #[test]
    fn build_is_deterministic() {
        let arch = ArchEncoding::new([Conv3x3, Conv1x1, AvgPool3x3, SkipConnect, Conv3x3, None]);
        let mut a = MicroNetwork::build_seeded(&arch, &skeleton()).unwrap();
        let mut b = MicroNetwork::build_seeded(&arch, &skeleton()).unwrap();
        for key in a.param_keys().copied().collect::<Vec<_>>() {
            assert_eq!(a.weight(&key), b.weight(&key));
        }
        let x = images(3, 9);
        assert_eq!(a.forward(&x).unwrap().data(), b.forward(&x).unwrap().data());
    }

    #[test]
    fn he_init_scale() {
        let s = SkeletonConfig {
            stem_channels: 32,
            ..skeleton()
        };
        let net = MicroNetwork::build_seeded(&ArchEncoding::uniform(Conv3x3), &s).unwrap();
        let w = net
            .weight(&ParamKey {
                scope: ParamScope::Cell { cell: 0, edge: 0 },
                name: "conv",
            })
            .unwrap();
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / (32.0 * 9.0);
        assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
    }

    #[test]
    fn none_edge_only_removes_its_branch() {
        // edge 4 (1→3) switches between none and conv; node 3 keeps edge 3 (0→3) as an input.
        let with = ArchEncoding::new([Conv1x1, SkipConnect, AvgPool3x3, SkipConnect, Conv3x3, None]);
        let without = with.with_op(4, None);
        let a = MicroNetwork::build_seeded(&with, &skeleton()).unwrap();
        let b = MicroNetwork::build_seeded(&without, &skeleton()).unwrap();
        // a ReLU→conv→BN triplet
        assert_eq!(a.graph().len(), b.graph().len() + 3);
        assert_eq!(a.param_keys().count(), b.param_keys().count() + 1);
    }

    #[test]
    fn every_logit_finite() {
        let x = images(4, 5);
        for arch in enumerate_all().step_by(611) {
            let mut net = MicroNetwork::build_seeded(&arch, &skeleton()).unwrap();
            assert!(net.forward(&x).unwrap().all_finite(), "{arch}");
        }
    }

    #[test]
    fn rejects_bad_skeleton() {
        for s in [
            SkeletonConfig { stem_channels: 0, ..skeleton() },
            SkeletonConfig { num_classes: 1, ..skeleton() },
            SkeletonConfig { cells_per_stage: 0, ..skeleton() },
        ] {
            assert!(MicroNetwork::build_seeded(&ArchEncoding::uniform(Conv3x3), &s).is_err());
        }
    }
}
