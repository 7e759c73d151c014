//! Time-stepped forward pass of the spiking network.
//!
//! Integrate-and-fire neurons accumulate input current each step, fire when
//! the membrane potential reaches the threshold, and reset — either hard
//! (to zero, the default) or by subtracting the threshold. The input image
//! is coded as a constant per-step current through the first weighted
//! layer; pooling layers emit a spike when any input in their window spikes
//! that step; the class with the most readout spikes wins.
//!
//! The membrane has no leak, no refractory period, and no lower clamp:
//! inhibitory weights may drive it negative.

use std::fmt;
use std::str::FromStr;

use crate::arch::{Architecture, Step};
use crate::autodiff::ModelParams;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// What happens to the membrane potential when a neuron fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Hard reset to zero (discards any charge above the threshold).
    ToZero,
    /// Subtract the threshold (keeps the residual charge).
    Subtract,
}

impl FromStr for ResetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_zero" => Ok(ResetMode::ToZero),
            "subtract" => Ok(ResetMode::Subtract),
            other => Err(Error::Config(format!(
                "unknown reset mode {other:?} (expected \"to_zero\" or \"subtract\")"
            ))),
        }
    }
}

impl fmt::Display for ResetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetMode::ToZero => "to_zero",
            ResetMode::Subtract => "subtract",
        })
    }
}

/// Integrate-and-fire configuration shared by every spiking layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfConfig {
    /// Firing threshold θ, one global value for all weighted layers.
    pub theta: f64,
    /// Membrane resistance; fixed at 1.
    pub r: f64,
    /// Number of simulation steps T.
    pub t_max: usize,
    pub reset: ResetMode,
}

impl IfConfig {
    pub fn new(theta: f64, t_max: usize, reset: ResetMode) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {theta}")));
        }
        if t_max == 0 {
            return Err(Error::Config("simulation needs at least one step".into()));
        }
        Ok(IfConfig { theta, r: 1.0, t_max, reset })
    }
}

/// Result of a spiking forward pass on one sample.
#[derive(Debug, Clone)]
pub struct SnnOutput<S: Scalar> {
    /// Readout spike counts `c^L`, one per class.
    pub counts: Tensor<S>,
    /// Per-step-output spike counts divided by T, aligned with
    /// `arch.steps`; only filled when rates were requested.
    pub rates: Option<Vec<Tensor<S>>>,
}

/// Constant per-step current injected by the analog image into a first
/// convolutional layer (direct input coding).
pub fn input_current<S: Scalar>(
    image: &Tensor<S>,
    weight: &Tensor<S>,
    pad: usize,
) -> Result<Tensor<S>> {
    ops::conv2d(image, weight, 1, pad)
}

/// Advance every neuron of one layer by a step: integrate the current,
/// fire where the membrane reaches the threshold, reset. Returns the 0/1
/// spike map.
pub fn if_step<S: Scalar>(
    u: &mut Tensor<S>,
    current: &Tensor<S>,
    theta: S,
    reset: ResetMode,
) -> Result<Tensor<S>> {
    if u.shape() != current.shape() {
        return Err(Error::shape(
            "if_step",
            format!("{:?}", u.shape()),
            format!("{:?}", current.shape()),
        ));
    }
    let mut spikes = Tensor::zeros(u.shape());
    let s = spikes.as_mut_slice();
    for (i, (m, &inj)) in u.as_mut_slice().iter_mut().zip(current.as_slice()).enumerate() {
        *m += inj;
        if *m >= theta {
            s[i] = S::ONE;
            match reset {
                ResetMode::ToZero => *m = S::ZERO,
                ResetMode::Subtract => *m -= theta,
            }
        }
    }
    Ok(spikes)
}

/// Spike-pooling: emit 1 where any input in the k-by-k window spiked this
/// step. On 0/1 maps this is exactly the window maximum.
pub fn spike_pool<S: Scalar>(spikes: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
    Ok(ops::maxpool2d(spikes, k)?.0)
}

/// Max-shifted softmax over readout spike counts.
pub fn snn_softmax<S: Scalar>(counts: &Tensor<S>) -> Vec<S> {
    ops::softmax(counts.as_slice())
}

/// Run the spiking network for `cfg.t_max` steps on one sample. Membrane
/// state starts at zero. With `record_rates`, per-layer spike counts
/// divided by T are returned alongside the readout counts.
pub fn snn_forward<S: Scalar>(
    params: &ModelParams<S>,
    arch: &Architecture,
    image: &Tensor<S>,
    cfg: &IfConfig,
    record_rates: bool,
) -> Result<SnnOutput<S>> {
    if image.shape() != arch.input {
        return Err(Error::shape(
            "snn_forward input",
            format!("{:?}", arch.input),
            format!("{:?}", image.shape()),
        ));
    }
    params.check_shapes(arch)?;
    let theta = S::from_f64(cfg.theta);
    let r = S::from_f64(cfg.r);

    // Direct input coding: the first weighted layer sees a constant current
    // derived from the analog image — through a convolution, or through a
    // dense product of the flattened image. Everything up to and including
    // that layer is resolved once, outside the time loop.
    let mut first_current = image.clone();
    let mut first_weighted = None;
    for (i, step) in arch.steps.iter().enumerate() {
        match *step {
            Step::Conv { param, pad } => {
                first_current = input_current(&first_current, params.value(param), pad)?;
                first_weighted = Some(i);
                break;
            }
            Step::Dense { param } => {
                first_current = ops::dense(&first_current, params.value(param))?;
                first_weighted = Some(i);
                break;
            }
            Step::Flatten => {
                let n = first_current.len();
                first_current = first_current.reshape(vec![n])?;
            }
            Step::Pool { .. } => unreachable!("validation rejects pooling before weights"),
        }
    }
    let first_weighted = first_weighted.expect("validated architectures end in a dense layer");
    if cfg.r != 1.0 {
        first_current.scale(r);
    }

    // Membrane state per weighted step, zeroed for this sample.
    let mut membranes: Vec<Option<Tensor<S>>> = arch
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| match step {
            Step::Conv { .. } | Step::Dense { .. } => Some(Tensor::zeros(&arch.shapes[i])),
            _ => None,
        })
        .collect();

    let mut counts = Tensor::<S>::zeros(&arch.shapes[arch.steps.len() - 1]);
    let mut rate_counts: Option<Vec<Tensor<S>>> = record_rates
        .then(|| arch.shapes.iter().map(|s| Tensor::<S>::zeros(s)).collect());

    for _t in 0..cfg.t_max {
        let mut spikes: Option<Tensor<S>> = None;
        for (i, step) in arch.steps.iter().enumerate().skip(first_weighted) {
            let out = match *step {
                Step::Conv { param, pad } => {
                    let u = membranes[i].as_mut().expect("conv step has a membrane");
                    if i == first_weighted {
                        if_step(u, &first_current, theta, cfg.reset)?
                    } else {
                        let mut cur = ops::conv2d(
                            spikes.as_ref().expect("spikes flow from the previous layer"),
                            params.value(param),
                            1,
                            pad,
                        )?;
                        if cfg.r != 1.0 {
                            cur.scale(r);
                        }
                        if_step(u, &cur, theta, cfg.reset)?
                    }
                }
                Step::Dense { param } => {
                    let u = membranes[i].as_mut().expect("dense step has a membrane");
                    if i == first_weighted {
                        if_step(u, &first_current, theta, cfg.reset)?
                    } else {
                        let mut cur = ops::dense(
                            spikes.as_ref().expect("spikes flow from the previous layer"),
                            params.value(param),
                        )?;
                        if cfg.r != 1.0 {
                            cur.scale(r);
                        }
                        if_step(u, &cur, theta, cfg.reset)?
                    }
                }
                Step::Pool { kernel } => {
                    spike_pool(spikes.as_ref().expect("pooling needs spikes"), kernel)?
                }
                Step::Flatten => {
                    let s = spikes.take().expect("flatten needs spikes");
                    let n = s.len();
                    s.reshape(vec![n])?
                }
            };
            if let Some(rc) = rate_counts.as_mut() {
                rc[i].add_scaled(&out, S::ONE);
            }
            spikes = Some(out);
        }
        counts.add_scaled(spikes.as_ref().expect("readout emits spikes"), S::ONE);
    }

    let rates = rate_counts.map(|rc| {
        let inv_t = S::from_f64(1.0 / cfg.t_max as f64);
        rc.into_iter()
            .map(|mut c| {
                c.scale(inv_t);
                c
            })
            .collect()
    });
    Ok(SnnOutput { counts, rates })
}
