//! Proxy training: spiking outputs steering ReLU backpropagation.
//!
//! The two engines share one parameter store. Each step runs the spiking
//! network forward to obtain readout spike counts, runs the ReLU network
//! forward recording a tape, seeds the readout gradient with
//! `(O^S − Y) / batch_size` — the softmax-cross-entropy gradient evaluated
//! at the spiking network's softmax instead of the ReLU network's own — and
//! backpropagates through the tape. Adam with an L2 term applies the update,
//! so the spiking network's error shapes weights it could not differentiate
//! itself.
//!
//! Determinism contract: with a fixed seed (and `timing` off) two runs
//! produce bit-identical metrics and weights. Batches reduce over fixed
//! 8-sample chunks — samples sum within a chunk, chunks sum in order — so
//! the float summation tree is independent of thread count.

use std::time::Instant;

use rayon::prelude::*;

use crate::ann::ann_forward;
use crate::arch::Architecture;
use crate::autodiff::{GradBuffer, ModelParams, Tape};
use crate::checkpoint::Checkpoint;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::ops;
use crate::snn::{snn_forward, snn_softmax, IfConfig, ResetMode};
use crate::tensor::{Precision, Scalar, Tensor};

/// Samples per reduction chunk; fixed so gradient and metric sums do not
/// depend on how many threads happen to run.
const CHUNK: usize = 8;

/// Everything a training run needs beyond the architecture and data.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Firing threshold θ shared by every spiking layer.
    pub theta: f64,
    /// Simulation steps T per forward pass.
    pub t_max: usize,
    /// Adam learning rate η.
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient λ, applied once per batch.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reset: ResetMode,
    pub precision: Precision,
    /// Cap on samples per split in per-epoch evaluations (None = full split).
    pub eval_max: Option<usize>,
    /// Record wall-clock seconds in metrics rows. Off by default so seeded
    /// histories are bit-identical across runs.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            theta: 2.0,
            t_max: 50,
            eta: 1e-3,
            beta1: 0.8,
            beta2: 0.99,
            epsilon: 1e-7,
            lambda: 1e-5,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            reset: ResetMode::ToZero,
            precision: Precision::F32,
            eval_max: None,
            timing: false,
        }
    }
}

impl TrainConfig {
    /// Reject configurations the optimizer or simulator cannot honor.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.eta)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.if_config().map(|_| ())
    }

    /// The spiking configuration this training run simulates under.
    pub fn if_config(&self) -> Result<IfConfig> {
        IfConfig::new(self.theta, self.t_max, self.reset)
    }
}

/// First/second-moment accumulators for Adam, aligned with the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros: Vec<Tensor<S>> =
            (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update:
/// `m←β₁m+(1−β₁)g`, `v←β₂v+(1−β₂)g²`, `w←w−η·m̂/(√v̂+ε)`.
pub fn adam_update<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &GradBuffer<S>,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (S::from_f64(cfg.beta1), S::from_f64(cfg.beta2));
    let eta = S::from_f64(cfg.eta);
    let eps = S::from_f64(cfg.epsilon);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powf(t));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powf(t));
    for (i, p) in params.params.iter_mut().enumerate() {
        let g = grads.grads[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        let w = p.value.as_mut_slice();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (S::ONE - b1) * g[j];
            v[j] = b2 * v[j] + (S::ONE - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] = w[j] - eta * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Mean loss and accuracy of one batch, measured on the spiking outputs.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// The readout gradient seed `(O^S − Y) / batch_size`.
fn readout_seed<S: Scalar>(output: &[S], target: &[S], batch_size: usize) -> Tensor<S> {
    let b = S::from_f64(batch_size as f64);
    let data = output.iter().zip(target).map(|(&o, &y)| (o - y) / b).collect();
    Tensor::new(vec![output.len()], data).expect("seed length equals its shape")
}

/// Abort with a state dump when a batch loss stops being a number.
pub(crate) fn divergence_check(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, batch, loss })
    }
}

/// Accumulate one batch's shared-weight gradients under the proxy rule,
/// without applying them: spiking forward for `O^S`, ReLU forward for the
/// tape, seed `(O^S − Y)/B`, backpropagate, then add the L2 term `λ·w`
/// once for the whole batch.
pub fn proxy_batch_grads<S: Scalar>(
    batch: &[usize],
    data: &Dataset,
    params: &ModelParams<S>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(GradBuffer<S>, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot step on an empty batch".into()));
    }
    let if_cfg = cfg.if_config()?;
    let chunks: Vec<(GradBuffer<S>, f64, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(GradBuffer<S>, f64, usize)> {
            let mut buf = GradBuffer::zeros_like(params);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let image = data.image::<S>(i);
                let target = data.one_hot::<S>(i);
                let out = snn_forward(params, arch, &image, &if_cfg, false)?;
                let o_s = snn_softmax(&out.counts);
                let (loss, _) = ops::softmax_xent(out.counts.as_slice(), &target)?;
                let mut tape = Tape::new();
                ann_forward(params, arch, &image, Some(&mut tape), None)?;
                tape.backward(params, readout_seed(&o_s, &target, batch.len()), &mut buf)?;
                loss_sum += loss.to_f64();
                if out.counts.argmax() == data.label(i) {
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

/// One full proxy update on a mini-batch: gradients, divergence guard, Adam.
#[allow(clippy::too_many_arguments)]
pub fn proxy_step<S: Scalar>(
    batch: &[usize],
    data: &Dataset,
    params: &mut ModelParams<S>,
    arch: &Architecture,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
    epoch: usize,
    batch_no: usize,
) -> Result<StepStats> {
    let (grads, stats) = proxy_batch_grads(batch, data, params, arch, cfg)?;
    divergence_check(stats.loss, epoch, batch_no)?;
    adam_update(params, &grads, state, cfg);
    Ok(stats)
}

/// Summed squared error of one output vector against its one-hot target.
fn msse_one<S: Scalar>(output: &[S], target: &[S]) -> f64 {
    output
        .iter()
        .zip(target)
        .map(|(&o, &y)| {
            let d = o.to_f64() - y.to_f64();
            d * d
        })
        .sum()
}

fn finish_row(
    epoch: usize,
    split: &str,
    n: usize,
    correct: usize,
    xent_sum: f64,
    msse_sum: f64,
    start: Instant,
    timing: bool,
) -> Result<MetricsRow> {
    let seconds = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
    MetricsRow::new(
        epoch,
        split,
        correct as f64 / n as f64,
        xent_sum / n as f64,
        msse_sum / n as f64,
        seconds,
    )
}

/// Score a split with the spiking network: accuracy by argmax of spike
/// counts (ties to the lowest class), cross-entropy of `O^S`, and MSSE —
/// the mean over samples of `Σ_k (O^S_k − Y_k)²`.
pub fn evaluate<S: Scalar>(
    data: &Dataset,
    params: &ModelParams<S>,
    arch: &Architecture,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<MetricsRow> {
    if data.is_empty() {
        return Err(Error::Data(format!("cannot evaluate empty split {:?}", data.split())));
    }
    let start = Instant::now();
    let if_cfg = cfg.if_config()?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<(usize, f64, f64)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(usize, f64, f64)> {
            let (mut correct, mut xent, mut msse) = (0usize, 0.0, 0.0);
            for &i in chunk {
                let image = data.image::<S>(i);
                let target = data.one_hot::<S>(i);
                let out = snn_forward(params, arch, &image, &if_cfg, false)?;
                let (loss, _) = ops::softmax_xent(out.counts.as_slice(), &target)?;
                xent += loss.to_f64();
                msse += msse_one(&snn_softmax(&out.counts), &target);
                if out.counts.argmax() == data.label(i) {
                    correct += 1;
                }
            }
            Ok((correct, xent, msse))
        })
        .collect::<Result<_>>()?;
    let (mut correct, mut xent, mut msse) = (0usize, 0.0, 0.0);
    for (c, x, m) in chunks {
        correct += c;
        xent += x;
        msse += m;
    }
    finish_row(epoch, data.split(), data.len(), correct, xent, msse, start, cfg.timing)
}

/// Score a split with the ReLU network alone (used by the conversion
/// baseline): accuracy by argmax of the readout, cross-entropy and MSSE of
/// its own softmax.
pub fn evaluate_ann<S: Scalar>(
    data: &Dataset,
    params: &ModelParams<S>,
    arch: &Architecture,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<MetricsRow> {
    if data.is_empty() {
        return Err(Error::Data(format!("cannot evaluate empty split {:?}", data.split())));
    }
    let start = Instant::now();
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<(usize, f64, f64)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(usize, f64, f64)> {
            let (mut correct, mut xent, mut msse) = (0usize, 0.0, 0.0);
            for &i in chunk {
                let image = data.image::<S>(i);
                let target = data.one_hot::<S>(i);
                let readout = ann_forward(params, arch, &image, None, None)?;
                let (loss, _) = ops::softmax_xent(readout.as_slice(), &target)?;
                xent += loss.to_f64();
                msse += msse_one(&ops::softmax(readout.as_slice()), &target);
                if readout.argmax() == data.label(i) {
                    correct += 1;
                }
            }
            Ok((correct, xent, msse))
        })
        .collect::<Result<_>>()?;
    let (mut correct, mut xent, mut msse) = (0usize, 0.0, 0.0);
    for (c, x, m) in chunks {
        correct += c;
        xent += x;
        msse += m;
    }
    finish_row(epoch, data.split(), data.len(), correct, xent, msse, start, cfg.timing)
}

/// A finished training run: the best checkpoint by test accuracy (earliest
/// epoch wins ties) and the full metrics history, two rows per epoch.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<MetricsRow>,
    pub best_epoch: usize,
}

/// Run the proxy trainer end to end at the configured precision.
pub fn train(
    cfg: &TrainConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, arch, train_set, test_set),
        Precision::F64 => train_typed::<f64>(cfg, arch, train_set, test_set),
    }
}

fn check_dataset(data: &Dataset, arch: &Architecture, what: &str) -> Result<()> {
    if data.dims() != arch.input || data.classes() != arch.classes {
        return Err(Error::Config(format!(
            "{what} split is {:?} with {} classes, architecture expects {:?} with {}",
            data.dims(),
            data.classes(),
            arch.input,
            arch.classes
        )));
    }
    Ok(())
}

/// The epoch loop shared by every trainer: shuffled mini-batches, per-epoch
/// evaluation of both splits, best-checkpoint retention by test accuracy
/// (earliest epoch keeps ties), and the zero-epoch shortcut. `step` applies
/// one mini-batch update; `eval` scores a split.
pub(crate) fn run_training<S: Scalar>(
    cfg: &TrainConfig,
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
    step: &mut dyn FnMut(&[usize], &mut ModelParams<S>, &mut AdamState<S>, usize, usize) -> Result<StepStats>,
    eval: &dyn Fn(&Dataset, &ModelParams<S>, usize) -> Result<MetricsRow>,
) -> Result<TrainOutcome> {
    check_dataset(train_set, arch, "train")?;
    check_dataset(test_set, arch, "test")?;
    let mut params = ModelParams::<S>::init(arch, cfg.seed);
    let mut state = AdamState::new(&params);

    let capped_train;
    let train_eval: &Dataset = match cfg.eval_max {
        Some(n) if n < train_set.len() => {
            capped_train = train_set.take(n);
            &capped_train
        }
        _ => train_set,
    };
    let capped_test;
    let test_eval: &Dataset = match cfg.eval_max {
        Some(n) if n < test_set.len() => {
            capped_test = test_set.take(n);
            &capped_test
        }
        _ => test_set,
    };

    let mut history = Vec::with_capacity(2 * cfg.epochs.max(1));
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let plan = batches(train_set.len(), cfg.batch_size, cfg.seed.wrapping_add(epoch as u64), true);
        for (batch_no, batch) in plan.iter().enumerate() {
            step(batch, &mut params, &mut state, epoch, batch_no)?;
        }
        let train_row = eval(train_eval, &params, epoch)?;
        let test_row = eval(test_eval, &params, epoch)?;
        let test_acc = test_row.accuracy;
        history.push(train_row);
        history.push(test_row);
        if best.as_ref().is_none_or(|(acc, _, _)| test_acc > *acc) {
            best = Some((test_acc, epoch, params.cast::<f32>()));
        }
    }
    if cfg.epochs == 0 {
        history.push(eval(train_eval, &params, 0)?);
        let test_row = eval(test_eval, &params, 0)?;
        best = Some((test_row.accuracy, 0, params.cast::<f32>()));
        history.push(test_row);
    }
    let (_, best_epoch, best_params) = best.expect("at least one evaluation ran");
    let checkpoint = Checkpoint {
        arch: arch.clone(),
        theta: cfg.theta,
        t_max: cfg.t_max,
        reset: cfg.reset,
        precision: cfg.precision.as_str().to_string(),
        params: best_params,
    };
    Ok(TrainOutcome { checkpoint, history, best_epoch })
}

fn train_typed<S: Scalar>(
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
            proxy_step(batch, train_set, params, arch, state, cfg, epoch, batch_no)
        },
        &|split, params, epoch| evaluate(split, params, arch, cfg, epoch),
    )
}
