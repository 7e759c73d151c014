//! Forward pass of the analog (ReLU) network.
//!
//! The analog network is the proxy through which gradients flow: it shares
//! its weights with the spiking network and applies ReLU after every hidden
//! convolutional and fully connected layer. The readout is special: the
//! returned vector and the tape carry its raw pre-activations — the logits
//! that the output softmax and the readout gradient seed act on — while the
//! recorded activation map keeps the rectified value, which stays
//! non-negative like the spike counts it is compared to and calibrated
//! against. Rectifying the gradient path as well would permanently strand
//! any class whose readout row starts negative on the data's non-negative
//! activations (the mask would zero its gradient forever); the readout
//! weight gradient is the plain outer product of the seed with the last
//! hidden activation.

use crate::arch::{Architecture, Step};
use crate::autodiff::{ModelParams, Tape};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Run the analog network on one sample, returning the readout logits (the
/// final dense layer's pre-activations). When `tape` is given every
/// operation is recorded for a backward pass; when `record` is given the
/// post-ReLU activation after every architecture step — the readout
/// rectified like the rest — is appended to it (aligned with `arch.steps`).
pub fn ann_forward<S: Scalar>(
    params: &ModelParams<S>,
    arch: &Architecture,
    image: &Tensor<S>,
    mut tape: Option<&mut Tape<S>>,
    mut record: Option<&mut Vec<Tensor<S>>>,
) -> Result<Tensor<S>> {
    if image.shape() != arch.input {
        return Err(Error::shape(
            "ann_forward input",
            format!("{:?}", arch.input),
            format!("{:?}", image.shape()),
        ));
    }
    params.check_shapes(arch)?;

    let mut cur = image.clone();
    let last = arch.steps.len() - 1;
    for (si, step) in arch.steps.iter().enumerate() {
        match *step {
            Step::Conv { param, pad } => {
                let pre = ops::conv2d(&cur, params.value(param), 1, pad)?;
                let post = ops::relu(&pre);
                if let Some(t) = tape.as_deref_mut() {
                    t.push_conv(param, cur, 1, pad);
                    t.push_relu(pre);
                }
                cur = post;
            }
            Step::Pool { kernel } => {
                let (pooled, indices) = ops::maxpool2d(&cur, kernel)?;
                if let Some(t) = tape.as_deref_mut() {
                    t.push_pool(indices, cur.shape().to_vec());
                }
                cur = pooled;
            }
            Step::Flatten => {
                let shape = cur.shape().to_vec();
                let n = cur.len();
                cur = cur.reshape(vec![n])?;
                if let Some(t) = tape.as_deref_mut() {
                    t.push_flatten(shape);
                }
            }
            Step::Dense { param } => {
                let pre = ops::dense(&cur, params.value(param))?;
                if si == last {
                    // Readout: logits flow onward, unrectified.
                    if let Some(t) = tape.as_deref_mut() {
                        t.push_dense(param, cur);
                    }
                    cur = pre;
                } else {
                    let post = ops::relu(&pre);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push_dense(param, cur);
                        t.push_relu(pre);
                    }
                    cur = post;
                }
            }
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(if si == last { ops::relu(&cur) } else { cur.clone() });
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradBuffer;
    use crate::ops::{conv2d, dense, maxpool2d, relu};

    fn setup() -> (Architecture, ModelParams<f64>, Tensor<f64>) {
        let arch = Architecture::from_text("3C3-P2-5F", [1, 4, 4], 5).unwrap();
        let params = ModelParams::init(&arch, 42);
        let image = Tensor::from_fn(&[1, 4, 4], |i| (i as f64 * 0.31).cos().abs());
        (arch, params, image)
    }

    #[test]
    fn matches_hand_composed_ops() {
        let (arch, params, image) = setup();
        let want = {
            let a = relu(&conv2d(&image, params.value(0), 1, 1).unwrap());
            let (p, _) = maxpool2d(&a, 2).unwrap();
            let n = p.len();
            let flat = p.reshape(vec![n]).unwrap();
            dense(&flat, params.value(1)).unwrap()
        };
        let got = ann_forward(&params, &arch, &image, None, None).unwrap();
        assert_eq!(got.as_slice(), want.as_slice());
    }

    #[test]
    fn readout_logits_flow_but_its_record_is_rectified() {
        let arch = Architecture::from_text("2F", [1, 1, 2], 2).unwrap();
        // Both rows produce negative pre-activations on a positive input.
        let w = Tensor::new(vec![2, 2], vec![-1.0, -2.0, -0.5, -0.1]).unwrap();
        let params = ModelParams::from_tensors(vec![w]);
        let image = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let mut rec = Vec::new();
        let out = ann_forward(&params, &arch, &image, None, Some(&mut rec)).unwrap();
        assert_eq!(out.as_slice(), &[-3.0, -0.6]);
        assert_eq!(rec.last().unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn readout_weight_rows_get_gradient_even_when_logits_are_negative() {
        let arch = Architecture::from_text("2F", [1, 1, 2], 2).unwrap();
        let w = Tensor::new(vec![2, 2], vec![-1.0, -2.0, -0.5, -0.1]).unwrap();
        let params = ModelParams::from_tensors(vec![w]);
        let image = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        ann_forward(&params, &arch, &image, Some(&mut tape), None).unwrap();
        let mut buf = GradBuffer::zeros_like(&params);
        let seed = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        tape.backward(&params, seed, &mut buf).unwrap();
        // grad = outer(seed, x) with x = [1, 1]; no rectification mask.
        assert_eq!(buf.grads[0].as_slice(), &[0.5, 0.5, -0.5, -0.5]);
    }

    #[test]
    fn tape_records_two_entries_per_hidden_layer_one_for_readout() {
        let (arch, params, image) = setup();
        let mut tape = Tape::new();
        ann_forward(&params, &arch, &image, Some(&mut tape), None).unwrap();
        // conv(+relu), pool, flatten, readout dense (logits, no relu)
        assert_eq!(tape.len(), 2 + 1 + 1 + 1);
    }

    #[test]
    fn recorded_activations_follow_the_shape_chain() {
        let (arch, params, image) = setup();
        let mut rec = Vec::new();
        ann_forward(&params, &arch, &image, None, Some(&mut rec)).unwrap();
        assert_eq!(rec.len(), arch.steps.len());
        for (a, want) in rec.iter().zip(&arch.shapes) {
            assert_eq!(a.shape(), want.as_slice());
            assert!(a.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn taped_forward_backward_runs_end_to_end() {
        let (arch, params, image) = setup();
        let mut tape = Tape::new();
        let out = ann_forward(&params, &arch, &image, Some(&mut tape), None).unwrap();
        let mut buf = GradBuffer::zeros_like(&params);
        tape.backward(&params, Tensor::filled(out.shape(), 1.0), &mut buf).unwrap();
        // Some gradient must reach the first layer through pool + flatten.
        assert!(buf.grads[0].as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let (arch, params, _) = setup();
        let bad = Tensor::<f64>::zeros(&[1, 5, 5]);
        assert!(ann_forward(&params, &arch, &bad, None, None).is_err());
    }
}
