//! Reference trainers the proxy method is measured against.
//!
//! Three baselines share the proxy trainer's optimizer, initialization, and
//! epoch loop: plain backpropagation on the ReLU network ([`train_ann`]),
//! post-hoc conversion of a trained ReLU network into a spiking one by
//! activation-percentile weight normalization ([`convert`]), and direct
//! surrogate-gradient training that backpropagates through the unrolled
//! spike simulation with an arc-tangent pseudo-derivative
//! ([`train_surrogate`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::ann_forward;
use crate::arch::{Architecture, Step};
use crate::autodiff::{GradBuffer, ModelParams, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ops;
use crate::snn::{snn_softmax, ResetMode};
use crate::tensor::{Precision, Scalar, Tensor};
use crate::trainer::{
    adam_update, divergence_check, evaluate, evaluate_ann, run_training, StepStats, TrainConfig,
    TrainOutcome,
};

const CHUNK: usize = 8;

// ===== plain backpropagation =====

/// One batch of standard softmax-cross-entropy gradients for the ReLU
/// network, plus the L2 term — the proxy step with the substitution undone.
pub fn ann_batch_grads<S: Scalar>(
    batch: &[usize],
    data: &Dataset,
    params: &ModelParams<S>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(GradBuffer<S>, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot step on an empty batch".into()));
    }
    let b = S::from_f64(batch.len() as f64);
    let chunks: Vec<(GradBuffer<S>, f64, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(GradBuffer<S>, f64, usize)> {
            let mut buf = GradBuffer::zeros_like(params);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let image = data.image::<S>(i);
                let target = data.one_hot::<S>(i);
                let mut tape = Tape::new();
                let readout = ann_forward(params, arch, &image, Some(&mut tape), None)?;
                let (loss, grad) = ops::softmax_xent(readout.as_slice(), &target)?;
                let seed = Tensor::new(
                    vec![arch.classes],
                    grad.into_iter().map(|g| g / b).collect(),
                )?;
                tape.backward(params, seed, &mut buf)?;
                loss_sum += loss.to_f64();
                if readout.argmax() == data.label(i) {
                    correct += 1;
                }
            }
            Ok((buf, loss_sum, correct))
        })
        .collect::<Result<_>>()?;

    let mut total = GradBuffer::zeros_like(params);
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (buf, l, c) in &chunks {
        total.merge(buf);
        loss_sum += l;
        correct += c;
    }
    let lambda = S::from_f64(cfg.lambda);
    for i in 0..params.len() {
        total.grads[i].add_scaled(params.value(i), lambda);
    }
    let n = batch.len() as f64;
    Ok((total, StepStats { loss: loss_sum / n, accuracy: correct as f64 / n }))
}

/// Train the ReLU network alone with the shared optimizer settings.
pub fn train_ann(
    cfg: &TrainConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_ann_typed::<f32>(cfg, arch, train_set, test_set),
        Precision::F64 => train_ann_typed::<f64>(cfg, arch, train_set, test_set),
    }
}

fn train_ann_typed<S: Scalar>(
    cfg: &TrainConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    run_training::<S>(
        cfg,
        arch,
        train_set,
        test_set,
        &mut |batch, params, state, epoch, batch_no| {
            let (grads, stats) = ann_batch_grads(batch, train_set, params, arch, cfg)?;
            divergence_check(stats.loss, epoch, batch_no)?;
            adam_update(params, &grads, state, cfg);
            Ok(stats)
        },
        &|split, params, epoch| evaluate_ann(split, params, arch, cfg, epoch),
    )
}

// ===== conversion =====

/// What a conversion did: the chosen percentile, one activation scale per
/// weighted layer, and (filled in by the evaluation harness) accuracy of
/// the converted network at each simulation length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversionReport {
    pub percentile: f64,
    pub scales: Vec<f64>,
    pub calibration_samples: usize,
    pub accuracy_per_t: Vec<(usize, f64)>,
}

/// Nearest-rank percentile of an unordered sample.
fn percentile_nearest_rank(values: &mut [f64], p: f64) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Indices of the weighted steps, paired with their parameter slots.
fn weighted_steps(arch: &Architecture) -> Vec<(usize, usize)> {
    arch.steps
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match *s {
            Step::Conv { param, .. } | Step::Dense { param } => Some((i, param)),
            _ => None,
        })
        .collect()
}

/// Rescale a trained ReLU network for spiking inference: record the p-th
/// percentile λ_l of every weighted layer's activations over the
/// calibration split, then scale `W_l ← W_l·λ_{l−1}/λ_l` (with λ for the
/// input fixed at 1) so each layer's near-maximal activation maps to the
/// firing-rate ceiling. The converted model is meant to run with θ = 1 and
/// subtract reset.
pub fn convert<S: Scalar>(
    params: &ModelParams<S>,
    arch: &Architecture,
    calibration: &Dataset,
    percentile: f64,
) -> Result<(ModelParams<S>, ConversionReport)> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!("percentile must lie in (0, 100], got {percentile}")));
    }
    if calibration.is_empty() {
        return Err(Error::Data("conversion needs a non-empty calibration split".into()));
    }
    params.check_shapes(arch)?;

    let weighted = weighted_steps(arch);
    let mut acts: Vec<Vec<f64>> = vec![Vec::new(); weighted.len()];
    for i in 0..calibration.len() {
        let mut rec = Vec::new();
        ann_forward(params, arch, &calibration.image::<S>(i), None, Some(&mut rec))?;
        for (slot, &(step, _)) in weighted.iter().enumerate() {
            acts[slot].extend(rec[step].as_slice().iter().map(|v| v.to_f64()));
        }
    }

    let mut scales = Vec::with_capacity(weighted.len());
    for (slot, &(step, _)) in weighted.iter().enumerate() {
        let lambda = percentile_nearest_rank(&mut acts[slot], percentile);
        if lambda <= 0.0 {
            return Err(Error::Config(format!(
                "dead layer: step {step} has no positive activation at percentile {percentile}"
            )));
        }
        scales.push(lambda);
    }

    let mut tensors: Vec<Tensor<S>> = (0..params.len()).map(|i| params.value(i).clone()).collect();
    for (slot, &(_, param)) in weighted.iter().enumerate() {
        let prev = if slot == 0 { 1.0 } else { scales[slot - 1] };
        tensors[param].scale(S::from_f64(prev / scales[slot]));
    }
    let report = ConversionReport {
        percentile,
        scales,
        calibration_samples: calibration.len(),
        accuracy_per_t: Vec::new(),
    };
    Ok((ModelParams::from_tensors(tensors), report))
}

// ===== surrogate-gradient BPTT =====

/// Surrogate training settings: the arc-tangent width α on top of the
/// shared optimizer configuration. Backpropagation through time needs the
/// subtract reset; the default configuration selects it.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateConfig {
    pub alpha: f64,
    pub train: TrainConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            alpha: 2.0,
            train: TrainConfig { reset: ResetMode::Subtract, ..TrainConfig::default() },
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.train.reset != ResetMode::Subtract {
            return Err(Error::Config(
                "the surrogate trainer backpropagates through the subtract reset only".into(),
            ));
        }
        self.train.validate()
    }
}

/// Arc-tangent pseudo-derivative of the spike function:
/// `dσ/du = (α/π) / (1 + (α·(u − θ))²)`, maximal at the threshold.
pub fn surrogate_deriv<S: Scalar>(u: S, theta: S, alpha: S) -> S {
    let pi = S::from_f64(std::f64::consts::PI);
    let x = alpha * (u - theta);
    (alpha / pi) / (S::ONE + x * x)
}

/// Per-weighted-layer trace of one unrolled forward pass.
struct LayerTrace<S: Scalar> {
    /// Pre-reset membrane u(t), one tensor per step.
    u_pre: Vec<Tensor<S>>,
    /// Spikes entering the layer at each step (empty for the first weighted
    /// layer, whose input is the constant image-derived current).
    inputs: Vec<Tensor<S>>,
}

/// Gradients of one sample by backpropagation through time. The forward
/// pass mirrors the inference engine exactly (integrate, fire at u ≥ θ,
/// subtract reset); the backward pass substitutes the arc-tangent
/// derivative for the spike nonlinearity and follows the membrane carry:
/// with `g_s` the spike adjoint and `g_u⁺` the next step's membrane
/// adjoint, `g_u = g_s·σ′ + g_u⁺·(1 − θ·σ′)`. Returns the sample's loss
/// and readout counts.
fn surrogate_sample_grads<S: Scalar>(
    image: &Tensor<S>,
    target: &[S],
    batch_len: usize,
    params: &ModelParams<S>,
    arch: &Architecture,
    scfg: &SurrogateConfig,
    buf: &mut GradBuffer<S>,
) -> Result<(S, Tensor<S>)> {
    let theta = S::from_f64(scfg.train.theta);
    let alpha = S::from_f64(scfg.alpha);
    let t_max = scfg.train.t_max;
    let steps = &arch.steps;

    // Resolve the prefix once: direct input coding gives the first weighted
    // layer a constant current.
    let mut first = steps.len();
    let mut first_current = image.clone();
    for (i, step) in steps.iter().enumerate() {
        match *step {
            Step::Conv { param, pad } => {
                first_current = ops::conv2d(&first_current, params.value(param), 1, pad)?;
                first = i;
                break;
            }
            Step::Dense { param } => {
                first_current = ops::dense(&first_current, params.value(param))?;
                first = i;
                break;
            }
            Step::Flatten => {
                let len = first_current.len();
                first_current = first_current.reshape(vec![len])?;
            }
            Step::Pool { .. } => unreachable!("validation rejects pooling before weights"),
        }
    }
    let flat_image = {
        let len = image.len();
        image.clone().reshape(vec![len])?
    };

    let mut traces: Vec<Option<LayerTrace<S>>> = steps
        .iter()
        .map(|s| match s {
            Step::Conv { .. } | Step::Dense { .. } => {
                Some(LayerTrace { u_pre: Vec::with_capacity(t_max), inputs: Vec::new() })
            }
            _ => None,
        })
        .collect();
    let mut pool_indices: Vec<Vec<Vec<u32>>> = vec![Vec::new(); steps.len()];
    let mut membranes: Vec<Option<Tensor<S>>> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Step::Conv { .. } | Step::Dense { .. } if i >= first => {
                Some(Tensor::zeros(&arch.shapes[i]))
            }
            _ => None,
        })
        .collect();

    // Forward: record membranes, layer inputs, and pooling routes per step.
    let mut counts = Tensor::zeros(&[arch.classes]);
    for _ in 0..t_max {
        let mut value = {
            let trace = traces[first].as_mut().expect("first weighted layer has a trace");
            let u = membranes[first].as_mut().expect("first weighted layer has a membrane");
            u.add_scaled(&first_current, S::ONE);
            trace.u_pre.push(u.clone());
            let spikes = u.map(|m| if m >= theta { S::ONE } else { S::ZERO });
            u.add_scaled(&spikes, S::ZERO - theta);
            spikes
        };
        for i in first + 1..steps.len() {
            value = match steps[i] {
                Step::Conv { param, pad } => {
                    let current = ops::conv2d(&value, params.value(param), 1, pad)?;
                    let trace = traces[i].as_mut().expect("weighted step has a trace");
                    trace.inputs.push(value);
                    let u = membranes[i].as_mut().expect("weighted step has a membrane");
                    u.add_scaled(&current, S::ONE);
                    trace.u_pre.push(u.clone());
                    let spikes = u.map(|m| if m >= theta { S::ONE } else { S::ZERO });
                    u.add_scaled(&spikes, S::ZERO - theta);
                    spikes
                }
                Step::Dense { param } => {
                    let current = ops::dense(&value, params.value(param))?;
                    let trace = traces[i].as_mut().expect("weighted step has a trace");
                    trace.inputs.push(value);
                    let u = membranes[i].as_mut().expect("weighted step has a membrane");
                    u.add_scaled(&current, S::ONE);
                    trace.u_pre.push(u.clone());
                    let spikes = u.map(|m| if m >= theta { S::ONE } else { S::ZERO });
                    u.add_scaled(&spikes, S::ZERO - theta);
                    spikes
                }
                Step::Pool { kernel } => {
                    let (out, idx) = ops::maxpool2d(&value, kernel)?;
                    pool_indices[i].push(idx);
                    out
                }
                Step::Flatten => {
                    let len = value.len();
                    value.reshape(vec![len])?
                }
            };
        }
        counts.add_scaled(&value, S::ONE);
    }

    let (loss, _) = ops::softmax_xent(counts.as_slice(), target)?;
    let o_s = snn_softmax(&counts);
    let b = S::from_f64(batch_len as f64);
    let seed: Vec<S> = o_s.iter().zip(target).map(|(&o, &y)| (o - y) / b).collect();

    // Backward through time, top-down within each step.
    let mut gu_next: Vec<Option<Tensor<S>>> = vec![None; steps.len()];
    for t in (0..t_max).rev() {
        let mut g_spike = Tensor::new(vec![arch.classes], seed.clone())?;
        for i in (first..steps.len()).rev() {
            match steps[i] {
                Step::Conv { param, pad } => {
                    let gu = membrane_adjoint(&traces[i], t, &g_spike, &gu_next[i], theta, alpha);
                    let input: &Tensor<S> =
                        if i == first { image } else { &traces[i].as_ref().unwrap().inputs[t] };
                    let (gw, gin) =
                        ops::conv2d_grads(input, params.value(param), &gu, 1, pad, i != first)?;
                    buf.add(param, &gw);
                    gu_next[i] = Some(gu);
                    match gin {
                        Some(g) => g_spike = g,
                        None => break,
                    }
                }
                Step::Dense { param } => {
                    let gu = membrane_adjoint(&traces[i], t, &g_spike, &gu_next[i], theta, alpha);
                    let input: &Tensor<S> =
                        if i == first { &flat_image } else { &traces[i].as_ref().unwrap().inputs[t] };
                    let (gw, gin) =
                        ops::dense_grads(input, params.value(param), &gu, i != first)?;
                    buf.add(param, &gw);
                    gu_next[i] = Some(gu);
                    match gin {
                        Some(g) => g_spike = g,
                        None => break,
                    }
                }
                Step::Pool { kernel: _ } => {
                    g_spike =
                        ops::maxpool2d_backward(&g_spike, &pool_indices[i][t], &arch.shapes[i - 1])?;
                }
                Step::Flatten => {
                    g_spike = g_spike.reshape(arch.shapes[i - 1].clone())?;
                }
            }
        }
    }
    Ok((loss, counts))
}

/// `g_u = g_s·σ′ + g_u⁺·(1 − θ·σ′)`: the spike adjoint enters through the
/// surrogate derivative, the next step's membrane adjoint through the
/// carry minus the subtract-reset path.
fn membrane_adjoint<S: Scalar>(
    trace: &Option<LayerTrace<S>>,
    t: usize,
    g_spike: &Tensor<S>,
    gu_next: &Option<Tensor<S>>,
    theta: S,
    alpha: S,
) -> Tensor<S> {
    let u_pre = &trace.as_ref().expect("weighted step has a trace").u_pre[t];
    let sigma = u_pre.map(|u| surrogate_deriv(u, theta, alpha));
    let mut gu = Tensor::zeros(sigma.shape());
    let gu_s = gu.as_mut_slice();
    let gs = g_spike.as_slice();
    let sg = sigma.as_slice();
    match gu_next {
        Some(next) => {
            let nx = next.as_slice();
            for (j, g) in gu_s.iter_mut().enumerate() {
                *g = gs[j] * sg[j] + nx[j] * (S::ONE - theta * sg[j]);
            }
        }
        None => {
            for (j, g) in gu_s.iter_mut().enumerate() {
                *g = gs[j] * sg[j];
            }
        }
    }
    gu
}

/// One batch of surrogate-gradient BPTT updates: loss and seed are the
/// same count-softmax cross-entropy the proxy uses, but the gradient flows
/// through the spike simulation itself.
pub fn surrogate_batch_grads<S: Scalar>(
    batch: &[usize],
    data: &Dataset,
    params: &ModelParams<S>,
    arch: &Architecture,
    scfg: &SurrogateConfig,
) -> Result<(GradBuffer<S>, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot step on an empty batch".into()));
    }
    let chunks: Vec<(GradBuffer<S>, f64, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(GradBuffer<S>, f64, usize)> {
            let mut buf = GradBuffer::zeros_like(params);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let image = data.image::<S>(i);
                let target = data.one_hot::<S>(i);
                let (loss, counts) =
                    surrogate_sample_grads(&image, &target, batch.len(), params, arch, scfg, &mut buf)?;
                loss_sum += loss.to_f64();
                if counts.argmax() == data.label(i) {
                    correct += 1;
                }
            }
            Ok((buf, loss_sum, correct))
        })
        .collect::<Result<_>>()?;

    let mut total = GradBuffer::zeros_like(params);
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (buf, l, c) in &chunks {
        total.merge(buf);
        loss_sum += l;
        correct += c;
    }
    let lambda = S::from_f64(scfg.train.lambda);
    for i in 0..params.len() {
        total.grads[i].add_scaled(params.value(i), lambda);
    }
    for g in &total.grads {
        g.check_finite("surrogate gradients")?;
    }
    let n = batch.len() as f64;
    Ok((total, StepStats { loss: loss_sum / n, accuracy: correct as f64 / n }))
}

/// Train a spiking network directly with surrogate-gradient BPTT.
pub fn train_surrogate(
    scfg: &SurrogateConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    scfg.validate()?;
    match scfg.train.precision {
        Precision::F32 => train_surrogate_typed::<f32>(scfg, arch, train_set, test_set),
        Precision::F64 => train_surrogate_typed::<f64>(scfg, arch, train_set, test_set),
    }
}

fn train_surrogate_typed<S: Scalar>(
    scfg: &SurrogateConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    let cfg = &scfg.train;
    run_training::<S>(
        cfg,
        arch,
        train_set,
        test_set,
        &mut |batch, params, state, epoch, batch_no| {
            let (grads, stats) = surrogate_batch_grads(batch, train_set, params, arch, scfg)?;
            divergence_check(stats.loss, epoch, batch_no)?;
            adam_update(params, &grads, state, cfg);
            Ok(stats)
        },
        &|split, params, epoch| evaluate(split, params, arch, cfg, epoch),
    )
}
