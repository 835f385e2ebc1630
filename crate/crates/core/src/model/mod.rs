//! Layer graphs: a DAG of layer nodes in topological order, a registry of
//! trainable parameter arrays, and a recorded forward pass ("tape") that the
//! backward pass walks in reverse.

mod build;
mod io;

pub use build::{
    Architecture, BlockSpec, DenseNetSpec, GraphBuilder, ModelSpec, Preset, ResNetSpec,
};

use rand::Rng;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossKind};
use crate::nn::{self, BatchNormCache, BatchNormState, DropoutMask, Mode};
use crate::scalar::Scalar;
use crate::tensor::{self, ConvSpec, Shape4, Tensor4};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Conv {
        weight: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        state: usize,
    },
    Relu,
    AvgPool,
    GlobalAvgPool,
    Dropout {
        rate: f64,
    },
    Dense {
        weight: ParamId,
        bias: ParamId,
        units: usize,
    },
    Softmax,
    /// Channel concatenation of all inputs, in order.
    Concat,
    /// Element-wise sum of two inputs.
    Add,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { .. } => "conv",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Relu => "relu",
            Op::AvgPool => "avgpool",
            Op::GlobalAvgPool => "gap",
            Op::Dropout { .. } => "dropout",
            Op::Dense { .. } => "dense",
            Op::Softmax => "softmax",
            Op::Concat => "concat",
            Op::Add => "add",
        }
    }

    fn params(&self) -> Vec<ParamId> {
        match *self {
            Op::Conv { weight, bias, .. } => std::iter::once(weight).chain(bias).collect(),
            Op::Dense { weight, bias, .. } => vec![weight, bias],
            Op::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output shape for a single sample (n = 1).
    pub shape: Shape4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
    /// Fan-in used for weight initialization.
    pub fan_in: usize,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Which layers use training behaviour during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase {
    /// Batch normalization uses batch statistics (and updates running moments).
    pub batch_stats: bool,
    /// Dropout masks are sampled.
    pub dropout: bool,
}

impl Phase {
    pub const TRAIN: Phase = Phase {
        batch_stats: true,
        dropout: true,
    };
    pub const EVAL: Phase = Phase {
        batch_stats: false,
        dropout: false,
    };
    /// Batch statistics without dropout: a deterministic function of the
    /// parameters, used by gradient checks.
    pub const DETERMINISTIC_TRAIN: Phase = Phase {
        batch_stats: true,
        dropout: false,
    };
}

#[derive(Clone, Debug)]
enum Cache<T> {
    None,
    Dropout(DropoutMask<T>),
    BatchNorm(BatchNormCache<T>),
}

#[derive(Clone, Debug)]
struct Tape<T> {
    acts: Vec<Tensor4<T>>,
    caches: Vec<Cache<T>>,
}

/// One row of [`ModelGraph::summary_rows`].
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: &'static str,
    pub output: Shape4,
    pub params: usize,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    spec: Option<ModelSpec>,
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    bn_states: Vec<BatchNormState<T>>,
    tape: Option<Tape<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds the architecture described by `spec` with zeroed parameters.
    /// Call [`ModelGraph::init_params`] before training.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        build::build(spec)
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn batchnorm_states(&self) -> &[BatchNormState<T>] {
        &self.bn_states
    }

    pub fn input_shape(&self) -> Shape4 {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> Shape4 {
        self.nodes.last().expect("graph has an input node").shape
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Fills weights uniformly in `±√(6 / fan_in)`, zeroes biases and betas
    /// and sets gammas to one. Running batchnorm moments are reset.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for p in &mut self.params {
            match p.role {
                ParamRole::Weight => {
                    let bound = (6.0 / p.fan_in as f64).sqrt();
                    p.value
                        .iter_mut()
                        .for_each(|v| *v = T::lit(rng.gen_range(-bound..=bound)));
                }
                ParamRole::Bias | ParamRole::Beta => {
                    p.value.iter_mut().for_each(|v| *v = T::zero())
                }
                ParamRole::Gamma => p.value.iter_mut().for_each(|v| *v = T::one()),
            }
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
        for st in &mut self.bn_states {
            *st = BatchNormState::new(st.channels());
        }
        self.tape = None;
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "flat parameters",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Maps a flat parameter index to (parameter name, offset within it).
    pub fn locate(&self, mut index: usize) -> Option<(&str, usize)> {
        for p in &self.params {
            if index < p.len() {
                return Some((&p.name, index));
            }
            index -= p.len();
        }
        None
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let want = self.input_shape();
        let got = x.shape();
        if (got.c, got.h, got.w) != (want.c, want.h, want.w) {
            return Err(Error::ShapeMismatch {
                left: want.with_batch(got.n),
                right: got,
            });
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &Tensor4<T>,
        phase: Phase,
        rng: &mut R,
        bn_states: &mut [BatchNormState<T>],
    ) -> Result<Tape<T>> {
        self.check_input(x)?;
        let mut acts: Vec<Tensor4<T>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let input = |k: usize| &acts[node.inputs[k]];
            let (out, cache) = match &node.op {
                Op::Input => (x.clone(), Cache::None),
                Op::Conv { weight, bias, spec } => {
                    let w = &self.params[*weight];
                    let kernels = Tensor4::from_vec(dims4(&w.dims), w.value.clone())?;
                    let zeros;
                    let b = match bias {
                        Some(b) => &self.params[*b].value,
                        None => {
                            zeros = vec![T::zero(); kernels.shape().n];
                            &zeros
                        }
                    };
                    let y = tensor::conv2d(input(0), &kernels, b, spec)?;
                    (y, Cache::None)
                }
                Op::BatchNorm { gamma, beta, state } => {
                    let mode = if phase.batch_stats {
                        Mode::Train
                    } else {
                        Mode::Eval
                    };
                    let (y, c) = nn::batchnorm2d(
                        input(0),
                        &self.params[*gamma].value,
                        &self.params[*beta].value,
                        &mut bn_states[*state],
                        mode,
                    )?;
                    (y, Cache::BatchNorm(c))
                }
                Op::Relu => (nn::relu(input(0)), Cache::None),
                Op::AvgPool => (tensor::avg_pool2d(input(0)), Cache::None),
                Op::GlobalAvgPool => (tensor::global_avg_pool(input(0)), Cache::None),
                Op::Dropout { rate } => {
                    let mode = if phase.dropout {
                        Mode::Train
                    } else {
                        Mode::Eval
                    };
                    let (y, m) = nn::dropout(input(0), *rate, mode, rng)?;
                    (y, Cache::Dropout(m))
                }
                Op::Dense {
                    weight,
                    bias,
                    units,
                } => {
                    let x = input(0);
                    let y = nn::dense_forward_raw(
                        x,
                        x.shape().sample_len(),
                        *units,
                        &self.params[*weight].value,
                        &self.params[*bias].value,
                    )?;
                    (y, Cache::None)
                }
                Op::Softmax => (nn::softmax_rows(input(0)), Cache::None),
                Op::Concat => {
                    let parts: Vec<&Tensor4<T>> = node.inputs.iter().map(|&i| &acts[i]).collect();
                    (tensor::concat_many(&parts)?, Cache::None)
                }
                Op::Add => (tensor::add(input(0), input(1))?, Cache::None),
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Tape { acts, caches })
    }

    /// Forward pass that records activations for [`ModelGraph::backward`].
    /// With `phase.batch_stats` the running batchnorm moments are updated.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor4<T>,
        phase: Phase,
        rng: &mut R,
    ) -> Result<Tensor4<T>> {
        let mut states = std::mem::take(&mut self.bn_states);
        let tape = self.run(x, phase, rng, &mut states);
        self.bn_states = states;
        let tape = tape?;
        let out = tape.acts.last().expect("non-empty graph").clone();
        self.tape = Some(tape);
        Ok(out)
    }

    /// Inference-mode forward pass. Takes `&self`, so parameters and running
    /// moments are untouched.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut states = self.bn_states.clone();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let tape = self.run(x, Phase::EVAL, &mut rng, &mut states)?;
        Ok(tape.acts.into_iter().last().expect("non-empty graph"))
    }

    /// Sign pattern (`> 0`) of every ReLU input in the last recorded forward
    /// pass. Two passes with equal patterns lie on the same linear piece of
    /// every ReLU.
    pub fn relu_signs(&self) -> Option<Vec<bool>> {
        let tape = self.tape.as_ref()?;
        Some(
            self.nodes
                .iter()
                .filter(|n| matches!(n.op, Op::Relu))
                .flat_map(|n| tape.acts[n.inputs[0]].data().iter().map(|&v| v > T::zero()))
                .collect(),
        )
    }

    /// Backpropagates `grad_out` through the last recorded forward pass,
    /// overwriting every parameter gradient. Returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let tape = self.tape.take().ok_or_else(|| {
            Error::InvalidArgument("backward called without a recorded forward pass".into())
        })?;
        let result = self.backward_with(&tape, grad_out);
        self.tape = Some(tape);
        result
    }

    fn backward_with(&mut self, tape: &Tape<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let last = self.nodes.len() - 1;
        if grad_out.shape() != tape.acts[last].shape() {
            return Err(Error::ShapeMismatch {
                left: tape.acts[last].shape(),
                right: grad_out.shape(),
            });
        }
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        grads[last] = Some(grad_out.clone());

        for id in (1..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let x0 = || &tape.acts[node.inputs[0]];
            let mut input_grads: Vec<Tensor4<T>> = Vec::with_capacity(node.inputs.len());
            match &node.op {
                Op::Input => unreachable!("input is node 0"),
                Op::Conv { weight, bias, spec } => {
                    let w = &self.params[*weight];
                    let kernels = Tensor4::from_vec(dims4(&w.dims), w.value.clone())?;
                    let cg = tensor::conv2d_backward(x0(), &kernels, &g, spec)?;
                    accumulate(&mut self.params[*weight].grad, cg.kernels.data());
                    if let Some(b) = bias {
                        accumulate(&mut self.params[*b].grad, &cg.bias);
                    }
                    input_grads.push(cg.input);
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let Cache::BatchNorm(cache) = &tape.caches[id] else {
                        unreachable!("batchnorm node records a batchnorm cache")
                    };
                    let bg = nn::batchnorm2d_backward(cache, &self.params[*gamma].value, &g)?;
                    accumulate(&mut self.params[*gamma].grad, &bg.gamma);
                    accumulate(&mut self.params[*beta].grad, &bg.beta);
                    input_grads.push(bg.input);
                }
                Op::Relu => input_grads.push(nn::relu_backward(x0(), &g)?),
                Op::AvgPool => input_grads.push(tensor::avg_pool2d_backward(x0().shape(), &g)?),
                Op::GlobalAvgPool => {
                    input_grads.push(tensor::global_avg_pool_backward(x0().shape(), &g)?)
                }
                Op::Dropout { .. } => {
                    let Cache::Dropout(mask) = &tape.caches[id] else {
                        unreachable!("dropout node records a mask")
                    };
                    input_grads.push(nn::dropout_backward(mask, &g)?);
                }
                Op::Dense {
                    weight,
                    bias,
                    units,
                } => {
                    let x = x0();
                    let dg = nn::dense_backward_raw(
                        x,
                        x.shape().sample_len(),
                        *units,
                        &self.params[*weight].value,
                        &g,
                    )?;
                    accumulate(&mut self.params[*weight].grad, &dg.weights);
                    accumulate(&mut self.params[*bias].grad, &dg.bias);
                    input_grads.push(dg.input.reshape(x.shape())?);
                }
                Op::Softmax => input_grads.push(nn::softmax_rows_backward(&tape.acts[id], &g)?),
                Op::Concat => {
                    let counts: Vec<usize> = node
                        .inputs
                        .iter()
                        .map(|&i| tape.acts[i].shape().c)
                        .collect();
                    input_grads = tensor::split_channels(&g, &counts)?;
                }
                Op::Add => {
                    input_grads.push(g.clone());
                    input_grads.push(g);
                }
            }
            for (&src, gi) in node.inputs.iter().zip(input_grads) {
                match &mut grads[src] {
                    Some(acc) => accumulate(acc.data_mut(), gi.data()),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        grads[0]
            .take()
            .map_or_else(|| Tensor4::zeros(tape.acts[0].shape()), Ok)
    }

    /// Forward, loss against encoded `targets`, and backward in one call.
    /// Returns the mean batch loss and the predictions.
    pub fn forward_backward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor4<T>,
        targets: &[Vec<T>],
        loss: LossKind,
        phase: Phase,
        rng: &mut R,
    ) -> Result<(T, Tensor4<T>)> {
        let preds = self.forward(x, phase, rng)?;
        let (value, grad) = batch_loss(loss, targets, &preds)?;
        self.backward(&grad)?;
        Ok((value, preds))
    }

    /// One Adam update using the gradients left by the last backward pass.
    pub fn apply_adam(&mut self, state: &mut AdamState<T>) -> Result<()> {
        let (mut values, grads): (Vec<&mut [T]>, Vec<&[T]>) = self
            .params
            .iter_mut()
            .map(|p| (p.value.as_mut_slice(), p.grad.as_slice()))
            .unzip();
        state.apply(&mut values, &grads)
    }

    pub fn param_lengths(&self) -> Vec<usize> {
        self.params.iter().map(Param::len).collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.nodes
            .iter()
            .map(|n| SummaryRow {
                name: n.name.clone(),
                kind: n.op.kind(),
                output: n.shape,
                params: n.op.params().iter().map(|&p| self.params[p].len()).sum(),
            })
            .collect()
    }

    /// Text table with one row per layer and a trainable-parameter footer.
    pub fn summary(&self) -> String {
        let rows = self.summary_rows();
        let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let header = format!(
            "{:<name_w$}  {:<10}  {:<16}  {:>10}",
            "layer", "type", "output shape", "params"
        );
        let rule = "-".repeat(header.len());
        out.push_str(&header);
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for r in &rows {
            let shape = format!("({}, {}, {})", r.output.c, r.output.h, r.output.w);
            out.push_str(&format!(
                "{:<name_w$}  {:<10}  {:<16}  {:>10}\n",
                r.name, r.kind, shape, r.params
            ));
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&format!("Total trainable params: {}\n", self.param_count()));
        out
    }
}

fn dims4(dims: &[usize]) -> Shape4 {
    Shape4::new(dims[0], dims[1], dims[2], dims[3])
}

fn accumulate<T: Scalar>(acc: &mut [T], add: &[T]) {
    for (a, &b) in acc.iter_mut().zip(add) {
        *a += b;
    }
}
