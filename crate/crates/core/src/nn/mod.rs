//! Dense feed-forward networks trained from scratch by backpropagation.
//!
//! One architecture covers both classifier families: a stack of shared
//! ReLU layers feeds per-task ReLU layers, each ending in a one-unit
//! sigmoid head. A single-task network is the degenerate case of exactly
//! one task; the multi-task network keys one task per subject so the trunk
//! learns population structure while the heads absorb individual response
//! differences.

mod train;

pub use train::{train, Optimizer, TrainConfig, TrainItem, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("task {0:?} has no {1} samples after the validation split")]
    EmptyTask(String, &'static str),
    #[error("non-finite loss at epoch {epoch}: training diverged")]
    NonFiniteLoss { epoch: usize },
    #[error("batch must not be empty")]
    EmptyBatch,
}

/// Architecture description: layer widths and the task roster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Hidden widths of the trunk shared by every task.
    pub shared_widths: Vec<usize>,
    /// Hidden widths of each task's private stack (before its head).
    pub task_widths: Vec<usize>,
    pub task_ids: Vec<String>,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        shared_widths: Vec<usize>,
        task_widths: Vec<usize>,
        task_ids: Vec<String>,
    ) -> Result<Self, NnError> {
        if input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be positive".into()));
        }
        if task_ids.is_empty() {
            return Err(NnError::InvalidSpec("at least one task required".into()));
        }
        let mut sorted = task_ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != task_ids.len() {
            return Err(NnError::InvalidSpec("duplicate task ids".into()));
        }
        if shared_widths.iter().chain(&task_widths).any(|&w| w == 0) {
            return Err(NnError::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(Self {
            input_dim,
            shared_widths,
            task_widths,
            task_ids,
        })
    }

    /// Single-task spec with one pooled head.
    pub fn single_task(
        input_dim: usize,
        shared_widths: Vec<usize>,
        task_widths: Vec<usize>,
    ) -> Result<Self, NnError> {
        Self::new(input_dim, shared_widths, task_widths, vec!["pooled".into()])
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.task_ids.iter().position(|t| t == task_id)
    }

    /// Width of the last shared activation (the input of every task stack).
    fn trunk_out_dim(&self) -> usize {
        self.shared_widths.last().copied().unwrap_or(self.input_dim)
    }

    fn task_in_out(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut d = self.trunk_out_dim();
        for &w in &self.task_widths {
            dims.push((d, w));
            d = w;
        }
        dims
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        let mut d = self.input_dim;
        for &w in &self.shared_widths {
            n += w * d + w;
            d = w;
        }
        let per_task: usize = self
            .task_in_out()
            .iter()
            .map(|&(i, o)| o * i + o)
            .sum::<usize>()
            + (self.task_widths.last().copied().unwrap_or(d) + 1);
        n + per_task * self.task_ids.len()
    }
}

/// One dense layer: row-major `out_dim x in_dim` weights plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut impl rand::Rng) -> Self {
        // scaled-uniform fan-in init, biases zero
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            biases: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// `out = W x + b`
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.biases.clone();
        for (u, o) in out.iter_mut().enumerate() {
            let row = &self.weights[u * self.in_dim..(u + 1) * self.in_dim];
            *o += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        out
    }

    /// Rescales any unit whose incoming weight row exceeds `max_norm`.
    /// Idempotent: a row already at the bound (up to rounding) stays put.
    pub fn project_max_norm(&mut self, max_norm: f64) {
        for u in 0..self.out_dim {
            let row = &mut self.weights[u * self.in_dim..(u + 1) * self.in_dim];
            let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > max_norm * (1.0 + 1e-12) {
                let scale = max_norm / norm;
                for w in row {
                    *w *= scale;
                }
            }
        }
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.out_dim)
            .map(|u| {
                self.weights[u * self.in_dim..(u + 1) * self.in_dim]
                    .iter()
                    .map(|w| w * w)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// One task's private stack and sigmoid head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub hidden: Vec<LayerParams>,
    pub head: LayerParams,
}

/// Concrete weights for a [`NetworkSpec`]; `per_task` is index-aligned with
/// `spec.task_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub shared: Vec<LayerParams>,
    pub per_task: Vec<TaskParams>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self::build(spec, &mut |i, o| LayerParams::zeros(i, o))
    }

    /// Seeded scaled-uniform initialization.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, &mut |i, o| LayerParams::init(i, o, &mut rng))
    }

    fn build(spec: &NetworkSpec, make: &mut impl FnMut(usize, usize) -> LayerParams) -> Self {
        let mut shared = Vec::new();
        let mut d = spec.input_dim;
        for &w in &spec.shared_widths {
            shared.push(make(d, w));
            d = w;
        }
        let task_dims = spec.task_in_out();
        let head_in = spec.task_widths.last().copied().unwrap_or(d);
        let per_task = spec
            .task_ids
            .iter()
            .map(|_| TaskParams {
                hidden: task_dims.iter().map(|&(i, o)| make(i, o)).collect(),
                head: make(head_in, 1),
            })
            .collect();
        Self { shared, per_task }
    }

    /// All parameter tensors (weights then biases, shared layers first,
    /// then each task's stack and head) in a fixed traversal order.
    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        fn split(l: &mut LayerParams) -> [&mut Vec<f64>; 2] {
            let LayerParams {
                weights, biases, ..
            } = l;
            [weights, biases]
        }
        self.shared
            .iter_mut()
            .flat_map(|l| split(l).into_iter())
            .chain(self.per_task.iter_mut().flat_map(|t| {
                t.hidden
                    .iter_mut()
                    .chain(std::iter::once(&mut t.head))
                    .flat_map(|l| split(l).into_iter())
            }))
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.shared
            .iter()
            .flat_map(|l| [&l.weights, &l.biases].into_iter())
            .chain(self.per_task.iter().flat_map(|t| {
                t.hidden
                    .iter()
                    .chain(std::iter::once(&t.head))
                    .flat_map(|l| [&l.weights, &l.biases].into_iter())
            }))
    }

    /// Projects every layer's rows onto the max-norm ball.
    pub fn project_max_norm(&mut self, max_norm: f64) {
        for layer in self.shared.iter_mut() {
            layer.project_max_norm(max_norm);
        }
        for task in self.per_task.iter_mut() {
            for layer in task.hidden.iter_mut() {
                layer.project_max_norm(max_norm);
            }
            task.head.project_max_norm(max_norm);
        }
    }

    pub fn max_row_norm(&self) -> f64 {
        let shared = self.shared.iter().map(|l| l.max_row_norm());
        let tasks = self.per_task.iter().flat_map(|t| {
            t.hidden
                .iter()
                .map(|l| l.max_row_norm())
                .chain(std::iter::once(t.head.max_row_norm()))
        });
        shared.chain(tasks).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.shared
            .iter()
            .chain(self.per_task.iter().flat_map(|t| {
                t.hidden.iter().chain(std::iter::once(&t.head))
            }))
            .all(|l| {
                l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
            })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability clip bound for the cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

/// Binary cross-entropy with the probability clipped away from 0 and 1.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Per-sample inverted-dropout scale factors for every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub shared: Vec<Vec<f64>>,
    pub task: Vec<Vec<f64>>,
}

/// Activations cached by the training-mode forward pass.
pub(crate) struct ForwardTrace {
    /// Pre-activations of shared layers.
    shared_z: Vec<Vec<f64>>,
    /// Post-ReLU, post-dropout shared activations.
    shared_a: Vec<Vec<f64>>,
    task_z: Vec<Vec<f64>>,
    task_a: Vec<Vec<f64>>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub logit: f64,
    pub p: f64,
}

fn apply_stack(
    layers: &[LayerParams],
    masks: Option<&[Vec<f64>]>,
    mut a: Vec<f64>,
    z_out: &mut Vec<Vec<f64>>,
    a_out: &mut Vec<Vec<f64>>,
) -> Vec<f64> {
    for (l, layer) in layers.iter().enumerate() {
        let z = layer.affine(&a);
        let mut act: Vec<f64> = z.iter().map(|&v| relu(v)).collect();
        if let Some(masks) = masks {
            for (v, &m) in act.iter_mut().zip(&masks[l]) {
                *v *= m;
            }
        }
        z_out.push(z);
        a_out.push(act.clone());
        a = act;
    }
    a
}

pub(crate) fn forward_trace(
    params: &NetworkParams,
    task: usize,
    x: &[f64],
    masks: Option<&DropoutMasks>,
) -> ForwardTrace {
    let mut shared_z = Vec::with_capacity(params.shared.len());
    let mut shared_a = Vec::with_capacity(params.shared.len());
    let trunk = apply_stack(
        &params.shared,
        masks.map(|m| m.shared.as_slice()),
        x.to_vec(),
        &mut shared_z,
        &mut shared_a,
    );

    let tp = &params.per_task[task];
    let mut task_z = Vec::with_capacity(tp.hidden.len());
    let mut task_a = Vec::with_capacity(tp.hidden.len());
    let last = apply_stack(
        &tp.hidden,
        masks.map(|m| m.task.as_slice()),
        trunk,
        &mut task_z,
        &mut task_a,
    );

    let logit = tp.head.affine(&last)[0];
    ForwardTrace {
        shared_z,
        shared_a,
        task_z,
        task_a,
        logit,
        p: sigmoid(logit),
    }
}

/// Inference: probability that the sample belongs to the positive class.
/// Deterministic; dropout is never applied here.
pub fn forward(
    params: &NetworkParams,
    spec: &NetworkSpec,
    x: &[f64],
    task_id: &str,
) -> Result<f64, NnError> {
    let task = spec
        .task_index(task_id)
        .ok_or_else(|| NnError::UnknownTask(task_id.to_string()))?;
    if x.len() != spec.input_dim {
        return Err(NnError::DimensionMismatch {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    Ok(forward_trace(params, task, x, None).p)
}

/// Gradient of the batch-mean cross-entropy with respect to every
/// parameter, plus the loss itself. Batch items carry `(features, label,
/// task index into spec.task_ids)`. Tasks absent from the batch receive
/// exactly zero gradient; shared layers accumulate contributions from
/// every item.
///
/// `masks`, when given, must hold one mask set per batch item and is used
/// both for the forward replay and the backward pass.
pub fn backward(
    params: &NetworkParams,
    spec: &NetworkSpec,
    batch: &[(Vec<f64>, f64, usize)],
    masks: Option<&[DropoutMasks]>,
) -> Result<(NetworkParams, f64), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut grads = NetworkParams::zeros(spec);
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;

    for (i, (x, y, task)) in batch.iter().enumerate() {
        if x.len() != spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: spec.input_dim,
                got: x.len(),
            });
        }
        if *task >= spec.task_ids.len() {
            return Err(NnError::UnknownTask(format!("#{task}")));
        }
        let item_masks = masks.map(|m| &m[i]);
        let trace = forward_trace(params, *task, x, item_masks);
        loss += bce_loss(trace.p, *y) * inv_batch;

        // dL/dlogit of the batch-mean BCE
        let delta = (trace.p - y) * inv_batch;

        let tp = &params.per_task[*task];
        let tg = &mut grads.per_task[*task];

        // head input is the deepest activation on the item's path
        let head_input: &[f64] = trace
            .task_a
            .last()
            .or_else(|| trace.shared_a.last())
            .map(|a| a.as_slice())
            .unwrap_or(x);
        for (g, v) in tg.head.weights.iter_mut().zip(head_input) {
            *g += delta * v;
        }
        tg.head.biases[0] += delta;

        // gradient flowing into the head input
        let mut d_act: Vec<f64> = tp.head.weights.iter().map(|w| w * delta).collect();

        // back through the task stack
        for l in (0..tp.hidden.len()).rev() {
            let layer = &tp.hidden[l];
            let z = &trace.task_z[l];
            let mask = item_masks.map(|m| m.task[l].as_slice());
            let below: Vec<f64> = if l == 0 {
                if let Some(a) = trace.shared_a.last() {
                    a.clone()
                } else {
                    x.clone()
                }
            } else {
                trace.task_a[l - 1].clone()
            };
            d_act = backprop_layer(layer, z, mask, &below, &d_act, &mut tg.hidden[l]);
        }

        // back through the shared stack
        for l in (0..params.shared.len()).rev() {
            let layer = &params.shared[l];
            let z = &trace.shared_z[l];
            let mask = item_masks.map(|m| m.shared[l].as_slice());
            let below: Vec<f64> = if l == 0 {
                x.clone()
            } else {
                trace.shared_a[l - 1].clone()
            };
            d_act = backprop_layer(layer, z, mask, &below, &d_act, &mut grads.shared[l]);
        }
    }
    Ok((grads, loss))
}

/// Backprop through one ReLU(+dropout) layer: given dL/da for the layer's
/// output, accumulate dW and db and return dL/da for the layer below.
fn backprop_layer(
    layer: &LayerParams,
    z: &[f64],
    mask: Option<&[f64]>,
    input: &[f64],
    d_act: &[f64],
    grad: &mut LayerParams,
) -> Vec<f64> {
    let mut d_below = vec![0.0; layer.in_dim];
    for u in 0..layer.out_dim {
        // a = mask * relu(z): da/dz = mask * [z > 0]
        let gate = if z[u] > 0.0 { 1.0 } else { 0.0 };
        let scale = mask.map(|m| m[u]).unwrap_or(1.0);
        let dz = d_act[u] * gate * scale;
        if dz == 0.0 {
            continue;
        }
        grad.biases[u] += dz;
        let row = &layer.weights[u * layer.in_dim..(u + 1) * layer.in_dim];
        let grow = &mut grad.weights[u * layer.in_dim..(u + 1) * layer.in_dim];
        for j in 0..layer.in_dim {
            grow[j] += dz * input[j];
            d_below[j] += dz * row[j];
        }
    }
    d_below
}

/// Fraction of test samples classified correctly under the `p >= 0.5`
/// decision rule (ties predict the positive class).
pub fn predict_accuracy(
    params: &NetworkParams,
    spec: &NetworkSpec,
    test: &[TrainItem],
) -> Result<f64, NnError> {
    if test.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut correct = 0usize;
    for item in test {
        let p = forward(params, spec, &item.x, &item.task_id)?;
        let predicted = if p >= 0.5 { 1.0 } else { 0.0 };
        if predicted == item.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mt_spec(input: usize, tasks: usize) -> NetworkSpec {
        NetworkSpec::new(
            input,
            vec![4],
            vec![3],
            (0..tasks).map(|t| format!("t{t}")).collect(),
        )
        .unwrap()
    }

    fn random_params(spec: &NetworkSpec, seed: u64) -> NetworkParams {
        NetworkParams::init(spec, seed)
    }

    #[test]
    fn zero_network_outputs_half() {
        let spec = mt_spec(5, 2);
        let params = NetworkParams::zeros(&spec);
        let x = vec![0.3, -1.0, 2.0, 0.0, 4.5];
        assert_eq!(forward(&params, &spec, &x, "t0").unwrap(), 0.5);
        assert_eq!(forward(&params, &spec, &x, "t1").unwrap(), 0.5);
    }

    #[test]
    fn bare_sigmoid_identity() {
        // one input, no hidden layers, head weight 1 bias 0
        let spec = NetworkSpec::new(1, vec![], vec![], vec!["only".into()]).unwrap();
        let mut params = NetworkParams::zeros(&spec);
        params.per_task[0].head.weights[0] = 1.0;
        assert_eq!(forward(&params, &spec, &[0.0], "only").unwrap(), 0.5);
        let big = forward(&params, &spec, &[30.0], "only").unwrap();
        assert!(big > 0.999999999);
    }

    #[test]
    fn unknown_task_and_bad_dimension_error() {
        let spec = mt_spec(3, 1);
        let params = NetworkParams::zeros(&spec);
        assert!(matches!(
            forward(&params, &spec, &[0.0; 3], "nope"),
            Err(NnError::UnknownTask(_))
        ));
        assert!(matches!(
            forward(&params, &spec, &[0.0; 2], "t0"),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    /// A deliberately naive forward pass written straight from the layer
    /// transform definition, used as the oracle for the real one.
    fn naive_forward(params: &NetworkParams, task: usize, x: &[f64]) -> f64 {
        fn dense(l: &LayerParams, x: &[f64], relu: bool) -> Vec<f64> {
            let mut out = Vec::with_capacity(l.out_dim);
            for u in 0..l.out_dim {
                let mut acc = l.biases[u];
                let row = &l.weights[u * l.in_dim..(u + 1) * l.in_dim];
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                out.push(if relu && acc < 0.0 { 0.0 } else { acc });
            }
            out
        }
        let mut a = x.to_vec();
        for l in &params.shared {
            a = dense(l, &a, true);
        }
        let tp = &params.per_task[task];
        for l in &tp.hidden {
            a = dense(l, &a, true);
        }
        let logit = dense(&tp.head, &a, false)[0];
        1.0 / (1.0 + (-logit).exp())
    }

    #[test]
    fn forward_matches_naive_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let spec = mt_spec(6, 3);
            let params = random_params(&spec, 100 + trial);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let task = trial as usize % 3;
            let got = forward(&params, &spec, &x, &spec.task_ids[task]).unwrap();
            let want = naive_forward(&params, task, &x);
            assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn bce_hand_values() {
        assert_relative_eq!(bce_loss(0.5, 1.0), std::f64::consts::LN_2, max_relative = 1e-12);
        assert!(bce_loss(1.0 - BCE_EPSILON, 1.0) <= 1.1e-7);
        assert_relative_eq!(
            bce_loss(BCE_EPSILON, 1.0),
            -(BCE_EPSILON.ln()),
            max_relative = 1e-12
        );
        assert!((bce_loss(BCE_EPSILON, 1.0) - 16.118).abs() < 1e-3);
    }

    #[test]
    fn saturated_correct_prediction_has_zero_head_gradient() {
        let spec = NetworkSpec::new(2, vec![], vec![], vec!["a".into()]).unwrap();
        let mut params = NetworkParams::zeros(&spec);
        params.per_task[0].head.biases[0] = 40.0; // sigmoid(40) == 1.0 in f64
        let batch = vec![(vec![0.5, -0.5], 1.0, 0usize)];
        let (grads, _) = backward(&params, &spec, &batch, None).unwrap();
        assert!(grads.per_task[0].head.weights.iter().all(|&g| g == 0.0));
        assert_eq!(grads.per_task[0].head.biases[0], 0.0);
    }

    #[test]
    fn absent_task_gets_exactly_zero_gradient() {
        let spec = mt_spec(4, 3);
        let params = random_params(&spec, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<(Vec<f64>, f64, usize)> = (0..6)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, (i % 2) as f64, 0usize) // only task 0
            })
            .collect();
        let (grads, _) = backward(&params, &spec, &batch, None).unwrap();
        for t in [1usize, 2] {
            let tg = &grads.per_task[t];
            assert!(tg.head.weights.iter().all(|&g| g == 0.0));
            assert!(tg
                .hidden
                .iter()
                .all(|l| l.weights.iter().all(|&g| g == 0.0)));
        }
        // shared layers did receive gradient
        assert!(grads.shared[0].weights.iter().any(|&g| g != 0.0));
    }

    /// Central finite differences over every parameter of the network.
    fn finite_difference_check(spec: &NetworkSpec, params: &NetworkParams, batch: &[(Vec<f64>, f64, usize)]) {
        let loss_of = |p: &NetworkParams| -> f64 {
            batch
                .iter()
                .map(|(x, y, task)| bce_loss(forward_trace(p, *task, x, None).p, *y))
                .sum::<f64>()
                / batch.len() as f64
        };
        let (grads, _) = backward(params, spec, batch, None).unwrap();

        let mut p_plus = params.clone();
        let mut p_minus = params.clone();
        let step = 1e-5;

        let n_tensors = params.tensors().count();
        for ti in 0..n_tensors {
            let len = params.tensors().nth(ti).unwrap().len();
            for i in 0..len {
                let orig = params.tensors().nth(ti).unwrap()[i];
                p_plus.tensors_mut().nth(ti).unwrap()[i] = orig + step;
                p_minus.tensors_mut().nth(ti).unwrap()[i] = orig - step;
                let numeric = (loss_of(&p_plus) - loss_of(&p_minus)) / (2.0 * step);
                p_plus.tensors_mut().nth(ti).unwrap()[i] = orig;
                p_minus.tensors_mut().nth(ti).unwrap()[i] = orig;
                let analytic = grads.tensors().nth(ti).unwrap()[i];
                let diff = (analytic - numeric).abs();
                let rel = diff / analytic.abs().max(numeric.abs()).max(1e-300);
                assert!(
                    rel <= 1e-5 || diff <= 1e-8,
                    "tensor {ti} param {i}: analytic {analytic}, numeric {numeric}"
                );
            }
        }
    }

    /// Keeps finite differences well posed: no pre-activation near the ReLU
    /// kink and no saturated head.
    fn batch_is_fd_safe(params: &NetworkParams, batch: &[(Vec<f64>, f64, usize)]) -> bool {
        let margin = 1e-3;
        batch.iter().all(|(x, _, task)| {
            let trace = forward_trace(params, *task, x, None);
            let zs = trace
                .shared_z
                .iter()
                .chain(trace.task_z.iter())
                .flat_map(|z| z.iter());
            zs.clone().all(|&z| z.abs() > margin) && trace.logit.abs() < 10.0
        })
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        let mut attempt = 0u64;
        while checked < 5 {
            attempt += 1;
            let spec = mt_spec(5, 3);
            let params = random_params(&spec, 1000 + attempt);
            let batch: Vec<(Vec<f64>, f64, usize)> = (0..9)
                .map(|i| {
                    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
                    (x, (i % 2) as f64, i % 3)
                })
                .collect();
            if !batch_is_fd_safe(&params, &batch) {
                continue;
            }
            finite_difference_check(&spec, &params, &batch);
            checked += 1;
        }
    }

    #[test]
    fn private_perturbation_isolates_tasks_shared_does_not() {
        let spec = mt_spec(4, 2);
        let params = random_params(&spec, 3);
        let x = vec![0.7, -0.3, 1.1, 0.2];
        let p_b_before = forward(&params, &spec, &x, "t1").unwrap();

        // head bias always reaches the logit, so task 0 must move
        let mut poked = params.clone();
        poked.per_task[0].head.biases[0] += 0.5;
        poked.per_task[0].hidden[0].weights[2] -= 0.7;
        assert_eq!(forward(&poked, &spec, &x, "t1").unwrap(), p_b_before);
        assert_ne!(
            forward(&poked, &spec, &x, "t0").unwrap(),
            forward(&params, &spec, &x, "t0").unwrap()
        );

        // a generic shared perturbation moves both tasks; perturb every
        // shared weight so no single ReLU-dead unit can hide it
        let mut shared_poked = params.clone();
        for w in shared_poked.shared[0].weights.iter_mut() {
            *w += 0.3;
        }
        assert_ne!(
            forward(&shared_poked, &spec, &x, "t0").unwrap(),
            forward(&params, &spec, &x, "t0").unwrap()
        );
        assert_ne!(forward(&shared_poked, &spec, &x, "t1").unwrap(), p_b_before);
    }

    #[test]
    fn max_norm_projection_is_idempotent_and_binds() {
        let spec = mt_spec(6, 2);
        let mut params = random_params(&spec, 9);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v *= 10.0; // push rows well past the bound
            }
        }
        params.project_max_norm(1.5);
        let once = params.clone();
        params.project_max_norm(1.5);
        assert_eq!(params, once);
        assert!(params.max_row_norm() <= 1.5 + 1e-12);
    }

    #[test]
    fn dropout_mask_expectation_preserves_activation() {
        // Mean over many inverted-dropout draws of a hidden activation must
        // approach the dropout-free activation.
        let spec = NetworkSpec::new(3, vec![4], vec![], vec!["a".into()]).unwrap();
        let params = random_params(&spec, 21);
        let x = vec![0.9, -0.4, 1.3];
        let clean = forward_trace(&params, 0, &x, None).shared_a[0].clone();

        let rate = 0.2;
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 10_000usize;
        let mut sums = vec![0.0; clean.len()];
        for _ in 0..draws {
            let masks = DropoutMasks {
                shared: vec![(0..4)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()],
                task: vec![],
            };
            let a = forward_trace(&params, 0, &x, Some(&masks)).shared_a[0].clone();
            for (s, v) in sums.iter_mut().zip(a) {
                *s += v;
            }
        }
        for (u, (&sum, &a)) in sums.iter().zip(&clean).enumerate() {
            let mean = sum / draws as f64;
            // Bernoulli(keep) scaled by a/keep: sd = a * sqrt((1-keep)/keep)
            let se = a * ((1.0 - keep) / keep).sqrt() / (draws as f64).sqrt();
            assert!(
                (mean - a).abs() <= 3.0 * se + 1e-12,
                "unit {u}: mean {mean} vs activation {a} (se {se})"
            );
        }
    }

    #[test]
    fn predict_accuracy_tie_rule_and_replay() {
        let spec = NetworkSpec::new(1, vec![], vec![], vec!["a".into()]).unwrap();
        let zero = NetworkParams::zeros(&spec);
        // zero network predicts p = 0.5 everywhere -> class 1 by the tie rule
        let balanced: Vec<TrainItem> = (0..10)
            .map(|i| TrainItem {
                x: vec![i as f64],
                y: (i % 2) as f64,
                task_id: "a".into(),
            })
            .collect();
        assert_eq!(predict_accuracy(&zero, &spec, &balanced).unwrap(), 0.5);

        // a perfectly separating stump replayed on its training data
        let mut fitted = NetworkParams::zeros(&spec);
        fitted.per_task[0].head.weights[0] = 5.0;
        fitted.per_task[0].head.biases[0] = -2.5;
        let separable: Vec<TrainItem> = (0..10)
            .map(|i| TrainItem {
                x: vec![if i % 2 == 0 { 0.0 } else { 1.0 }],
                y: (i % 2) as f64,
                task_id: "a".into(),
            })
            .collect();
        assert_eq!(predict_accuracy(&fitted, &spec, &separable).unwrap(), 1.0);
    }

    #[test]
    fn full_roster_network_stays_small() {
        // 87 per-subject heads at the default widths must stay desk-sized
        let spec = NetworkSpec::new(
            17,
            vec![32],
            vec![8],
            (0..87).map(|s| format!("s{s:03}")).collect(),
        )
        .unwrap();
        assert!(spec.n_params() < 100_000, "{} params", spec.n_params());
    }

    #[test]
    fn random_labels_hover_near_chance() {
        let spec = mt_spec(4, 1);
        let params = random_params(&spec, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let test: Vec<TrainItem> = (0..10_000)
            .map(|_| TrainItem {
                x: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                y: if rng.gen::<bool>() { 1.0 } else { 0.0 },
                task_id: "t0".into(),
            })
            .collect();
        let acc = predict_accuracy(&params, &spec, &test).unwrap();
        assert!((0.45..=0.55).contains(&acc), "accuracy {acc}");
    }
}
