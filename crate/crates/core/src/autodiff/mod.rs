//! A minimal tape of dense tensor ops with reverse-mode gradients back to the graph input.
//!
//! Weights are constants of the graph; only input gradients are ever produced.

mod kernels;
mod tensor;

pub use kernels::{
    avg_pool3x3, batch_norm, batch_norm_backward, conv2d, conv2d_backward_input, global_avg_pool,
    global_avg_pool_backward, linear, linear_backward_input, relu, relu_backward, BN_EPS,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requested before forward")]
    NotForwarded,
    #[error("graph has no output node")]
    NoOutput,
    #[error("operand {0} does not precede its consumer")]
    BadOperand(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv2d { weight: Tensor },
    BatchNorm,
    Relu,
    AvgPool3x3,
    GlobalAvgPool,
    Linear { weight: Tensor, bias: Tensor },
    /// Elementwise sum of all operands.
    Sum,
    /// Zeros shaped like the operand; no gradient flows back.
    ZerosLike,
}

#[derive(Debug, Clone)]
struct Record {
    op: Op,
    inputs: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct Cache {
    values: Vec<Tensor>,
    bn_inv_std: Vec<Vec<f64>>,
}

/// Topologically ordered op records. Node 0 is the graph input.
#[derive(Debug, Clone)]
pub struct CompGraph {
    records: Vec<Record>,
    output: Option<NodeId>,
    cache: Option<Cache>,
}

impl Default for CompGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl CompGraph {
    pub fn new() -> Self {
        Self {
            records: vec![Record {
                op: Op::Input,
                inputs: Vec::new(),
            }],
            output: None,
            cache: None,
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.records[id.0].op
    }

    pub fn operands(&self, id: NodeId) -> &[NodeId] {
        &self.records[id.0].inputs
    }

    /// Append a record. Operands must already exist.
    pub fn push(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.records.len()) {
            return Err(GraphError::BadOperand(bad.0));
        }
        let arity_ok = match op {
            Op::Input => false,
            Op::Sum => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(GraphError::Shape(format!("wrong operand count {} for {op:?}", inputs.len())));
        }
        self.records.push(Record {
            op,
            inputs: inputs.to_vec(),
        });
        self.cache = None;
        Ok(NodeId(self.records.len() - 1))
    }

    pub fn conv2d(&mut self, x: NodeId, weight: Tensor) -> Result<NodeId, GraphError> {
        self.push(Op::Conv2d { weight }, &[x])
    }

    pub fn batch_norm(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::BatchNorm, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Relu, &[x])
    }

    pub fn avg_pool3x3(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::AvgPool3x3, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::GlobalAvgPool, &[x])
    }

    pub fn linear(&mut self, x: NodeId, weight: Tensor, bias: Tensor) -> Result<NodeId, GraphError> {
        self.push(Op::Linear { weight, bias }, &[x])
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push(Op::Sum, xs)
    }

    pub fn zeros_like(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::ZerosLike, &[x])
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    /// Run every record in order, caching activations for [`CompGraph::backward_to_input`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor, GraphError> {
        let output = self.output.ok_or(GraphError::NoOutput)?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.records.len());
        let mut bn_inv_std = vec![Vec::new(); self.records.len()];
        for (i, record) in self.records.iter().enumerate() {
            let arg = |k: usize| &values[record.inputs[k].0];
            let value = match &record.op {
                Op::Input => x.clone(),
                Op::Conv2d { weight } => conv2d(arg(0), weight)?,
                Op::BatchNorm => {
                    let (y, inv) = batch_norm(arg(0))?;
                    bn_inv_std[i] = inv;
                    y
                }
                Op::Relu => relu(arg(0)),
                Op::AvgPool3x3 => avg_pool3x3(arg(0))?,
                Op::GlobalAvgPool => global_avg_pool(arg(0))?,
                Op::Linear { weight, bias } => linear(arg(0), weight, bias)?,
                Op::Sum => {
                    let mut acc = arg(0).clone();
                    for k in 1..record.inputs.len() {
                        let other = arg(k);
                        if other.shape() != acc.shape() {
                            return Err(GraphError::Shape(format!(
                                "sum operands {:?} and {:?}",
                                acc.shape(),
                                other.shape()
                            )));
                        }
                        for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
                            *a += b;
                        }
                    }
                    acc
                }
                Op::ZerosLike => Tensor::zeros(arg(0).shape()),
            };
            values.push(value);
        }
        let out = values[output.0].clone();
        self.cache = Some(Cache { values, bn_inv_std });
        Ok(out)
    }

    /// Gradient of the sum of all output entries with respect to the input.
    ///
    /// For a logits output this is `∇_x Σ_i Σ_k logit[i, k]`; without batch
    /// statistics each row depends only on its own sample.
    pub fn backward_to_input(&self) -> Result<Tensor, GraphError> {
        let output = self.output.ok_or(GraphError::NoOutput)?;
        let cache = self.cache.as_ref().ok_or(GraphError::NotForwarded)?;
        let seed = Tensor::filled(cache.values[output.0].shape(), 1.0);
        self.backward_with_seed(seed)
    }

    pub fn backward_with_seed(&self, seed: Tensor) -> Result<Tensor, GraphError> {
        let output = self.output.ok_or(GraphError::NoOutput)?;
        let cache = self.cache.as_ref().ok_or(GraphError::NotForwarded)?;
        if seed.shape() != cache.values[output.0].shape() {
            return Err(GraphError::Shape("seed does not match output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        grads[output.0] = Some(seed);
        for i in (1..self.records.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let record = &self.records[i];
            let input_value = |k: usize| &cache.values[record.inputs[k].0];
            let contributions: Vec<(NodeId, Tensor)> = match &record.op {
                Op::Input => unreachable!("input is node 0"),
                Op::Conv2d { weight } => {
                    vec![(record.inputs[0], conv2d_backward_input(&g, weight, input_value(0).shape()))]
                }
                Op::BatchNorm => vec![(
                    record.inputs[0],
                    batch_norm_backward(&g, &cache.values[i], &cache.bn_inv_std[i]),
                )],
                Op::Relu => vec![(record.inputs[0], relu_backward(&g, input_value(0)))],
                Op::AvgPool3x3 => vec![(record.inputs[0], avg_pool3x3(&g)?)],
                Op::GlobalAvgPool => {
                    vec![(record.inputs[0], global_avg_pool_backward(&g, input_value(0).shape()))]
                }
                Op::Linear { weight, .. } => {
                    vec![(record.inputs[0], linear_backward_input(&g, weight, input_value(0).shape()))]
                }
                Op::Sum => record.inputs.iter().map(|&id| (id, g.clone())).collect(),
                Op::ZerosLike => Vec::new(),
            };
            for (id, contribution) in contributions {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.values[0].shape())))
    }

    /// Activation pattern of every ReLU input from the last forward pass (`true` = active).
    pub fn relu_pattern(&self) -> Option<Vec<bool>> {
        let cache = self.cache.as_ref()?;
        let mut pattern = Vec::new();
        for record in &self.records {
            if let Op::Relu = record.op {
                pattern.extend(cache.values[record.inputs[0].0].data().iter().map(|&v| v > 0.0));
            }
        }
        Some(pattern)
    }
}

/// Outcome of comparing the analytic input gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped some ReLU.
    pub skipped: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max element-wise relative error between `backward_to_input` and central differences
/// of the summed output with the given step.
pub fn grad_check(graph: &mut CompGraph, x: &Tensor, step: f64) -> Result<f64, GraphError> {
    Ok(grad_check_impl(graph, x, step, false)?.max_rel_error)
}

/// Same as [`grad_check`], but skips coordinates whose `±step` perturbation changes any
/// ReLU activation, so only points where the network is locally smooth are compared.
pub fn grad_check_kink_filtered(graph: &mut CompGraph, x: &Tensor, step: f64) -> Result<GradCheck, GraphError> {
    grad_check_impl(graph, x, step, true)
}

fn grad_check_impl(graph: &mut CompGraph, x: &Tensor, step: f64, filter: bool) -> Result<GradCheck, GraphError> {
    graph.forward(x)?;
    let analytic = graph.backward_to_input()?;
    let base_pattern = graph.relu_pattern().unwrap_or_default();
    let mut probe = x.clone();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = graph.forward(&probe)?.sum();
        let flipped_plus = filter && graph.relu_pattern().unwrap_or_default() != base_pattern;
        probe.data_mut()[i] = orig - step;
        let minus = graph.forward(&probe)?.sum();
        let flipped_minus = filter && graph.relu_pattern().unwrap_or_default() != base_pattern;
        probe.data_mut()[i] = orig;
        if flipped_plus || flipped_minus {
            result.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        result.max_rel_error = result.max_rel_error.max(rel_error(analytic.data()[i], numeric));
        result.checked += 1;
    }
    // leave the cache consistent with x
    graph.forward(x)?;
    Ok(result)
}
