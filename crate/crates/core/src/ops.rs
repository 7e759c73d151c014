//! Tensor operations shared by the spiking and analog engines.
//!
//! Exactly five differentiable primitives exist — [`conv2d`], [`maxpool2d`],
//! [`dense`], [`relu`] and [`softmax_xent`] — plus the flatten reshape that
//! `Tensor::reshape` already covers. Convolutions lower to im2col followed
//! by a strided GEMM, so one code path serves both f32 and f64. Each forward
//! op has a matching backward helper; the tape in [`crate::autodiff`] wires
//! them together.
//!
//! All ops work on a single sample: feature maps are `[C, H, W]`, dense
//! vectors are `[N]`. Batching happens above this layer so that gradient
//! reduction order stays under the trainer's control.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Spatial output extent of a convolution along one axis.
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "convolution needs kernel >= 1 and stride >= 1, got k={k} stride={stride}"
        )));
    }
    let padded = extent + 2 * pad;
    if padded < k {
        return Err(Error::shape(
            "conv2d",
            format!("spatial extent >= kernel {k} after padding"),
            format!("{extent} (pad {pad})"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// Padding that keeps the spatial extent unchanged at stride 1 (odd kernels).
pub fn same_pad(k: usize) -> usize {
    (k - 1) / 2
}

fn check_conv_args<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (ci, h, w) = input.dims3("conv2d input")?;
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::shape(
            "conv2d weight",
            "[out_ch, in_ch, k, k]",
            format!("{ws:?}"),
        ));
    }
    if ws[1] != ci {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels to match weight {ws:?}", ws[1]),
            format!("{:?}", input.shape()),
        ));
    }
    Ok((ci, h, w, ws[0], ws[2]))
}

/// Gather convolution patches into a `[ci*k*k, ho*wo]` matrix (zero padded).
fn im2col<S: Scalar>(
    input: &Tensor<S>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<S> {
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let x = input.as_slice();
    let cols_n = ho * wo;
    let mut cols = vec![S::ZERO; ci * k * k * cols_n];
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out_row[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a `[ci*k*k, ho*wo]` patch matrix back onto an image (the
/// adjoint of [`im2col`]).
fn col2im<S: Scalar>(
    cols: &[S],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<S> {
    let cols_n = ho * wo;
    let mut img = vec![S::ZERO; ci * h * w];
    for c in 0..ci {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let col_row = &cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += col_row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

/// 2-D convolution of a `[ci, h, w]` input with `[co, ci, k, k]` weights.
/// No bias term; padding is symmetric zero padding.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (ci, h, w, co, k) = check_conv_args(input, weight)?;
    let ho = conv_out_extent(h, k, stride, pad)?;
    let wo = conv_out_extent(w, k, stride, pad)?;
    let cols = im2col(input, k, stride, pad, ho, wo);
    let (kk, n) = (ci * k * k, ho * wo);
    let mut out = vec![S::ZERO; co * n];
    S::gemm_acc(
        co,
        kk,
        n,
        S::ONE,
        weight.as_slice(),
        kk as isize,
        1,
        &cols,
        n as isize,
        1,
        &mut out,
        n as isize,
        1,
    );
    Tensor::new(vec![co, ho, wo], out)
}

/// Gradients of [`conv2d`] given the output gradient. Returns the weight
/// gradient and, when `need_input_grad`, the input gradient.
pub fn conv2d_grads<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    let (ci, h, w, co, k) = check_conv_args(input, weight)?;
    let ho = conv_out_extent(h, k, stride, pad)?;
    let wo = conv_out_extent(w, k, stride, pad)?;
    if grad_out.shape() != [co, ho, wo] {
        return Err(Error::shape(
            "conv2d_grads",
            format!("[{co}, {ho}, {wo}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (kk, n) = (ci * k * k, ho * wo);
    let cols = im2col(input, k, stride, pad, ho, wo);

    // dL/dW = dL/dY . cols^T
    let mut gw = vec![S::ZERO; co * kk];
    S::gemm_acc(
        co,
        n,
        kk,
        S::ONE,
        grad_out.as_slice(),
        n as isize,
        1,
        &cols,
        1,
        n as isize,
        &mut gw,
        kk as isize,
        1,
    );
    let grad_w = Tensor::new(weight.shape().to_vec(), gw)?;

    let grad_in = if need_input_grad {
        // dL/dcols = W^T . dL/dY, then scatter back onto the image.
        let mut gcols = vec![S::ZERO; kk * n];
        S::gemm_acc(
            kk,
            co,
            n,
            S::ONE,
            weight.as_slice(),
            1,
            kk as isize,
            grad_out.as_slice(),
            n as isize,
            1,
            &mut gcols,
            n as isize,
            1,
        );
        let img = col2im(&gcols, ci, h, w, k, stride, pad, ho, wo);
        Some(Tensor::new(vec![ci, h, w], img)?)
    } else {
        None
    };
    Ok((grad_w, grad_in))
}

/// Non-overlapping k-by-k max pooling. Returns the pooled map and, per
/// output element, the flat input index of its maximum (ties resolve to the
/// lowest index). The extents must be divisible by `k`.
pub fn maxpool2d<S: Scalar>(input: &Tensor<S>, k: usize) -> Result<(Tensor<S>, Vec<u32>)> {
    let (c, h, w) = input.dims3("maxpool2d input")?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial extents divisible by window {k}"),
            format!("[{c}, {h}, {w}]"),
        ));
    }
    let (ho, wo) = (h / k, w / k);
    let x = input.as_slice();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = ch * h * w + (oy * k) * w + ox * k;
                let mut best_v = x[best];
                for ky in 0..k {
                    for kx in 0..k {
                        let at = ch * h * w + (oy * k + ky) * w + (ox * k + kx);
                        if x[at] > best_v {
                            best_v = x[at];
                            best = at;
                        }
                    }
                }
                out.push(best_v);
                idx.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, idx))
}

/// Route pooled gradients back to the positions that won the max.
pub fn maxpool2d_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    indices: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    if grad_out.len() != indices.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} routing indices", grad_out.len()),
            format!("{}", indices.len()),
        ));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_out.as_slice();
    let out = grad_in.as_mut_slice();
    for (i, &at) in indices.iter().enumerate() {
        out[at as usize] += g[i];
    }
    Ok(grad_in)
}

/// Fully connected layer: `y = W x` with `W: [m, n]`, `x: [n]`. No bias.
pub fn dense<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::shape("dense weight", "[out, in]", format!("{ws:?}")));
    }
    let (m, n) = (ws[0], ws[1]);
    if input.shape() != [n] {
        return Err(Error::shape(
            "dense",
            format!("input [{n}] to match weight {ws:?}"),
            format!("{:?}", input.shape()),
        ));
    }
    let mut out = vec![S::ZERO; m];
    S::gemm_acc(
        m,
        n,
        1,
        S::ONE,
        weight.as_slice(),
        n as isize,
        1,
        input.as_slice(),
        1,
        1,
        &mut out,
        1,
        1,
    );
    Tensor::new(vec![m], out)
}

/// Gradients of [`dense`]: weight gradient is the outer product
/// `grad_out ⊗ input`; input gradient is `W^T grad_out`.
pub fn dense_grads<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
    need_input_grad: bool,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    let ws = weight.shape();
    let (m, n) = (ws[0], ws[1]);
    if grad_out.shape() != [m] {
        return Err(Error::shape(
            "dense_grads",
            format!("[{m}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut gw = vec![S::ZERO; m * n];
    S::gemm_acc(
        m,
        1,
        n,
        S::ONE,
        grad_out.as_slice(),
        1,
        1,
        input.as_slice(),
        n as isize,
        1,
        &mut gw,
        n as isize,
        1,
    );
    let grad_w = Tensor::new(vec![m, n], gw)?;
    let grad_in = if need_input_grad {
        let mut gx = vec![S::ZERO; n];
        S::gemm_acc(
            n,
            m,
            1,
            S::ONE,
            weight.as_slice(),
            1,
            n as isize,
            grad_out.as_slice(),
            1,
            1,
            &mut gx,
            1,
            1,
        );
        Some(Tensor::new(vec![n], gx)?)
    } else {
        None
    };
    Ok((grad_w, grad_in))
}

/// Elementwise rectifier, `max(0, x)`.
pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| v.max_val(S::ZERO))
}

/// Backward of [`relu`]: passes the gradient where the *input* was strictly
/// positive, zero elsewhere (the derivative at exactly zero is taken as 0).
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?}", input.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > S::ZERO { g } else { S::ZERO })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Max-shifted softmax over a vector. Finite for any finite input.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(x[0], S::max_val);
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = exps.iter().copied().fold(S::ZERO, |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of the max-shifted softmax against a one-hot target.
///
/// The loss is evaluated in log space (`lse - logit[target]`), so it stays
/// finite however far apart the logits are. Returns `(loss, dL/dlogits)`.
/// The target must contain exactly one `1` and zeros elsewhere.
pub fn softmax_xent<S: Scalar>(logits: &[S], target: &[S]) -> Result<(S, Vec<S>)> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::shape(
            "softmax_xent",
            format!("target of length {}", logits.len()),
            format!("{}", target.len()),
        ));
    }
    let mut hot = None;
    for (i, &t) in target.iter().enumerate() {
        if t == S::ONE && hot.is_none() {
            hot = Some(i);
        } else if t != S::ZERO {
            return Err(Error::Data(format!(
                "softmax_xent target must be one-hot, got value {} at class {i}",
                t.to_f64()
            )));
        }
    }
    let hot = hot.ok_or_else(|| {
        Error::Data("softmax_xent target must be one-hot, got no positive entry".into())
    })?;

    let max = logits.iter().copied().fold(logits[0], S::max_val);
    let mut sum = S::ZERO;
    for &v in logits {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    let loss = lse - logits[hot];

    let mut grad = softmax(logits);
    grad[hot] -= S::ONE;
    Ok((loss, grad))
}
