//! Valid (unpadded) stride-1 2-D convolution via im2col + GEMM.

use super::{gemm_acc, transpose_into, Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, cout: usize, kh: usize, kw: usize) -> Result<Self> {
        if h < kh || w < kw {
            return shape_err(format!(
                "{h}x{w} input is smaller than the {kh}x{kw} kernel"
            ));
        }
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
        })
    }

    pub fn oh(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn ow(&self) -> usize {
        self.w - self.kw + 1
    }

    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.oh() * self.ow()
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
}

/// Batched im2col: `col[(c,u,v), (s,y,x)] = input[s, c, y+u, x+v]`, so one
/// GEMM covers the whole batch.
fn im2col<T: Scalar>(g: &ConvGeom, batch: usize, input: &[T], col: &mut Vec<T>) {
    let (oh, ow) = (g.oh(), g.ow());
    let p = oh * ow;
    let bp = batch * p;
    col.clear();
    col.resize(g.patch() * bp, T::zero());
    for s in 0..batch {
        let sample = &input[s * g.in_len()..(s + 1) * g.in_len()];
        let mut row = 0;
        for c in 0..g.cin {
            let plane = &sample[c * g.h * g.w..(c + 1) * g.h * g.w];
            for u in 0..g.kh {
                for v in 0..g.kw {
                    let dst = &mut col[row * bp + s * p..row * bp + (s + 1) * p];
                    for y in 0..oh {
                        let src = &plane[(y + u) * g.w + v..(y + u) * g.w + v + ow];
                        dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, batch: usize, col: &[T], grad_in: &mut [T]) {
    let (oh, ow) = (g.oh(), g.ow());
    let p = oh * ow;
    let bp = batch * p;
    for s in 0..batch {
        let sample = &mut grad_in[s * g.in_len()..(s + 1) * g.in_len()];
        let mut row = 0;
        for c in 0..g.cin {
            let plane = &mut sample[c * g.h * g.w..(c + 1) * g.h * g.w];
            for u in 0..g.kh {
                for v in 0..g.kw {
                    let src = &col[row * bp + s * p..row * bp + (s + 1) * p];
                    for y in 0..oh {
                        let dst = &mut plane[(y + u) * g.w + v..(y + u) * g.w + v + ow];
                        for (d, &sv) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                            *d = *d + sv;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `[cout, B, P]` ↔ `[B, cout, P]`
fn swap_leading<T: Scalar>(src: &[T], a: usize, b: usize, p: usize, dst: &mut [T]) {
    for i in 0..a {
        for j in 0..b {
            dst[(j * a + i) * p..(j * a + i + 1) * p]
                .copy_from_slice(&src[(i * b + j) * p..(i * b + j + 1) * p]);
        }
    }
}

/// Convolves `batch` samples laid out `[B, cin, h, w]` into `out`
/// (`[B, cout, oh, ow]`, overwritten).
pub(crate) fn conv_forward_slice<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    kernels: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let (il, ol) = (g.in_len(), g.out_len());
    for s in 0..batch {
        im2col(g, 1, &input[s * il..(s + 1) * il], scratch);
        let o = &mut out[s * ol..(s + 1) * ol];
        o.fill(T::zero());
        gemm_acc(kernels, scratch, o, g.cout, g.patch(), g.oh() * g.ow());
    }
}

/// Accumulates kernel gradients into `grad_k` and, when requested, input
/// gradients into `grad_in`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_slice<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    kernels: &[T],
    grad_out: &[T],
    grad_k: &mut [T],
    grad_in: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let p = g.oh() * g.ow();
    let bp = batch * p;
    let r = g.patch();
    im2col(g, batch, input, scratch);
    // grad_out as [cout, B·P]
    let mut go = vec![T::zero(); g.cout * bp];
    swap_leading(grad_out, batch, g.cout, p, &mut go);
    // grad_kᵀ[r, cout] = col[r, BP] · goᵀ[BP, cout]
    let mut go_t = vec![T::zero(); bp * g.cout];
    transpose_into(&go, g.cout, bp, &mut go_t);
    let mut gk_t = vec![T::zero(); r * g.cout];
    gemm_acc(scratch, &go_t, &mut gk_t, r, bp, g.cout);
    for o in 0..g.cout {
        for i in 0..r {
            grad_k[o * r + i] = grad_k[o * r + i] + gk_t[i * g.cout + o];
        }
    }

    if let Some(grad_in) = grad_in {
        let mut k_t = vec![T::zero(); r * g.cout];
        transpose_into(kernels, g.cout, r, &mut k_t);
        let (il, ol) = (g.in_len(), g.out_len());
        let mut dcol = vec![T::zero(); r * p];
        for s in 0..batch {
            dcol.fill(T::zero());
            gemm_acc(
                &k_t,
                &grad_out[s * ol..(s + 1) * ol],
                &mut dcol,
                r,
                g.cout,
                p,
            );
            col2im_add(g, 1, &dcol, &mut grad_in[s * il..(s + 1) * il]);
        }
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<ConvGeom> {
    let [cin, h, w] = match input.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => {
            return shape_err(format!(
                "conv input must be [C,H,W], got {:?}",
                input.shape()
            ))
        }
    };
    let [cout, kc, kh, kw] = match kernels.shape()[..] {
        [o, c, kh, kw] => [o, c, kh, kw],
        _ => {
            return shape_err(format!(
                "conv kernels must be [Cout,Cin,KH,KW], got {:?}",
                kernels.shape()
            ))
        }
    };
    if kc != cin {
        return shape_err(format!(
            "kernel expects {kc} input channels, input has {cin}"
        ));
    }
    ConvGeom::new(cin, h, w, cout, kh, kw)
}

/// `out[o,y,x] = Σ_{c,u,v} input[c,y+u,x+v] · kernels[o,c,u,v]`
pub fn conv2d_valid<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, kernels)?;
    let mut out = vec![T::zero(); g.out_len()];
    let mut scratch = Vec::new();
    conv_forward_slice(&g, 1, input.data(), kernels.data(), &mut out, &mut scratch);
    Tensor::from_vec(&[g.cout, g.oh(), g.ow()], out)
}

/// Returns `(grad_input, grad_kernels)` for upstream gradient `grad_out`.
pub fn conv2d_valid_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = geometry(input, kernels)?;
    if grad_out.shape() != [g.cout, g.oh(), g.ow()] {
        return shape_err(format!(
            "grad_out {:?} does not match conv output [{}, {}, {}]",
            grad_out.shape(),
            g.cout,
            g.oh(),
            g.ow()
        ));
    }
    let mut grad_in = Tensor::zeros_like(input);
    let mut grad_k = Tensor::zeros_like(kernels);
    let mut scratch = Vec::new();
    conv_backward_slice(
        &g,
        1,
        input.data(),
        kernels.data(),
        grad_out.data(),
        grad_k.data_mut(),
        Some(grad_in.data_mut()),
        &mut scratch,
    );
    Ok((grad_in, grad_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, SeededRng};

    fn gaussian(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        Tensor::create(
            shape,
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                rng,
            },
        )
        .unwrap()
    }

    fn direct(input: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let cout = k.shape()[0];
        let (oh, ow) = (h - 2, w - 2);
        let mut out = Tensor::zeros(&[cout, oh, ow]).unwrap();
        for o in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = 0.0;
                    for c in 0..cin {
                        for u in 0..3 {
                            for v in 0..3 {
                                s += input.at(&[c, y + u, x + v]) * k.at(&[o, c, u, v]);
                            }
                        }
                    }
                    let i = out.flat_index(&[o, y, x]);
                    out.data_mut()[i] = s;
                }
            }
        }
        out
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::<f32>::create(&[1, 3, 3], Init::Constant(1.0)).unwrap();
        let k = Tensor::<f32>::create(&[1, 1, 3, 3], Init::Constant(1.0)).unwrap();
        let y = conv2d_valid(&x, &k).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn delta_kernel_extracts_interior() {
        let mut rng = SeededRng::new(3);
        let x = gaussian(&[1, 6, 8], &mut rng);
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]).unwrap();
        k.data_mut()[4] = 1.0;
        let y = conv2d_valid(&x, &k).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                assert_eq!(y.at(&[0, r, c]), x.at(&[0, r + 1, c + 1]));
            }
        }
    }

    #[test]
    fn matches_direct_loop() {
        let mut rng = SeededRng::new(11);
        let x = gaussian(&[2, 5, 5], &mut rng);
        let k = gaussian(&[3, 2, 3, 3], &mut rng);
        let (y, want) = (conv2d_valid(&x, &k).unwrap(), direct(&x, &k));
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn too_small_input() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5]).unwrap();
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3]).unwrap();
        assert!(conv2d_valid(&x, &k).is_err());
        let k2 = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
        let x2 = Tensor::<f32>::zeros(&[1, 5, 5]).unwrap();
        assert!(conv2d_valid(&x2, &k2).is_err());
    }

    #[test]
    fn linear_in_input() {
        let mut rng = SeededRng::new(5);
        let x = gaussian(&[2, 6, 7], &mut rng);
        let y = gaussian(&[2, 6, 7], &mut rng);
        let k = gaussian(&[2, 2, 3, 3], &mut rng);
        let (a, b) = (1.7, -0.4);
        let lhs = conv2d_valid(&x.scale(a).add(&y.scale(b)).unwrap(), &k).unwrap();
        let rhs = conv2d_valid(&x, &k)
            .unwrap()
            .scale(a)
            .add(&conv2d_valid(&y, &k).unwrap().scale(b))
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(21);
        let x = gaussian(&[2, 5, 6], &mut rng);
        let k = gaussian(&[3, 2, 3, 3], &mut rng);
        let w = gaussian(&[3, 3, 4], &mut rng);
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>| -> f64 {
            conv2d_valid(x, k)
                .unwrap()
                .data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, gk) = conv2d_valid_backward(&x, &k, &w).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (loss(&xp, &k) - loss(&xm, &k)) / (2.0 * h);
            assert!((num - gx.data()[i]).abs() <= 1e-4 * (1.0 + num.abs()));
        }
        for i in 0..k.len() {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let num = (loss(&x, &kp) - loss(&x, &km)) / (2.0 * h);
            assert!((num - gk.data()[i]).abs() <= 1e-4 * (1.0 + num.abs()));
        }
    }
}
