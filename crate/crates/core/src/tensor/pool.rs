//! Square-window max pooling without padding.

use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Output length along one axis: `floor((len - window) / stride) + 1`.
pub fn pooled_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return shape_err("pool stride must be positive");
    }
    if len < window {
        return shape_err(format!("pool window {window} exceeds input length {len}"));
    }
    Ok((len - window) / stride + 1)
}

/// Pools one `[C,H,W]` sample. `argmax` receives, per output cell, the flat
/// index into `input` of the winning element; ties go to the lowest index.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool_forward_slice<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_v = input[best];
                for u in 0..window {
                    let row = base + (oy * stride + u) * w + ox * stride;
                    for v in 0..window {
                        let i = row + v;
                        // Row-major scan visits indices in increasing order, so a
                        // strict comparison keeps the lowest index on ties.
                        if input[i] > best_v {
                            best_v = input[i];
                            best = i;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best_v;
                argmax[o] = best;
            }
        }
    }
}

pub(crate) fn maxpool_backward_slice<T: Scalar>(
    grad_out: &[T],
    argmax: &[usize],
    grad_in: &mut [T],
) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] = grad_in[i] + g;
    }
}

/// Max pooling over `window`×`window` patches of a `[C,H,W]` tensor.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [c, h, w] = match input.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => {
            return shape_err(format!(
                "pool input must be [C,H,W], got {:?}",
                input.shape()
            ))
        }
    };
    let oh = pooled_len(h, window, stride)?;
    let ow = pooled_len(w, window, stride)?;
    let mut out = vec![T::zero(); c * oh * ow];
    let mut argmax = vec![0; c * oh * ow];
    maxpool_forward_slice(input.data(), c, h, w, window, stride, &mut out, &mut argmax);
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

/// Routes `grad_out` back to the argmax positions of an input of `input_shape`.
pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return shape_err("argmax map does not match grad_out");
    }
    let mut grad_in = Tensor::zeros(input_shape)?;
    if argmax.iter().any(|&i| i >= grad_in.len()) {
        return shape_err("argmax index outside input");
    }
    maxpool_backward_slice(grad_out.data(), argmax, grad_in.data_mut());
    Ok(grad_in)
}
