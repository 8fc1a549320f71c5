//! Dense row-major tensors and the numeric kernels every layer is built on.
//!
//! Kernels are single-threaded with a fixed accumulation order, so identical
//! inputs always produce bitwise-identical outputs.

mod conv;
mod pool;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{shape_err, Error, Result};

pub use conv::{conv2d_valid, conv2d_valid_backward};
pub(crate) use conv::{conv_backward_slice, conv_forward_slice, ConvGeom};
pub use pool::{maxpool2d, maxpool2d_backward, pooled_len};
pub(crate) use pool::{maxpool_backward_slice, maxpool_forward_slice};
pub use rng::SeededRng;

/// Real scalar usable by every kernel. Implemented for `f32` (training) and
/// `f64` (gradient verification).
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    /// Tag written into binary containers: the scalar width in bytes.
    const DTYPE_TAG: u8;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c += a · b` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
    fn gemm_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize);

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    fn gemm_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the bounds above cover every element the kernel touches.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 1.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn gemm_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the bounds above cover every element the kernel touches.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 1.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// Initialisation rule for [`Tensor::create`].
pub enum Init<'a> {
    Zeros,
    Constant(f64),
    Gaussian {
        mean: f64,
        std: f64,
        rng: &'a mut SeededRng,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("empty shape list");
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return shape_err(format!("dimension {axis} of {shape:?} is zero"));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn create(shape: &[usize], init: Init<'_>) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Constant(c) => vec![T::of(c); len],
            Init::Gaussian { mean, std, rng } => {
                (0..len).map(|_| T::of(rng.gaussian(mean, std))).collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {len} scalars, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.flat_index(index)]
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("add {:?} + {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("add {:?} + {:?}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reports a numeric fault naming `what` when any scalar is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let [m, n] = self.dims2()?;
        let mut data = vec![T::zero(); m * n];
        transpose_into(&self.data, m, n, &mut data);
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    pub(crate) fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [m, n] => Ok([m, n]),
            _ => shape_err(format!("expected a matrix, got shape {:?}", self.shape)),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::of(x.to_f64().unwrap()))
                .collect(),
        }
    }
}

pub(crate) fn transpose_into<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}


/// `c[m,n] += a[m,k] · b[k,n]`, all row-major. Blocked over `k` and `n` for
/// cache reuse; every output element still accumulates its `k` terms in
/// increasing order, so results do not depend on the blocking.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_acc(a, b, c, m, k, n);
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return shape_err(format!(
            "matmul inner dimensions differ: {:?} · {:?}",
            a.shape, b.shape
        ));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Tensor::from_vec(&[m, n], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Reduces `input` over `axes`. Reduced axes are removed from the shape; a
/// full reduction yields shape `[1]`.
pub fn reduce<T: Scalar>(input: &Tensor<T>, op: ReduceOp, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = input.shape.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return shape_err(format!("axis {a} out of range for rank {rank}"));
        }
        if reduced[a] {
            return shape_err(format!("axis {a} listed twice"));
        }
        reduced[a] = true;
    }
    let out_shape: Vec<usize> = input
        .shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let out_len: usize = out_shape.iter().product();
    let count: usize = input
        .shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();

    let init = match op {
        ReduceOp::Sum | ReduceOp::Mean => T::zero(),
        ReduceOp::Max => T::neg_infinity(),
    };
    let mut acc = vec![init; out_len.max(1)];
    let mut index = vec![0usize; rank];
    for &x in &input.data {
        let mut o = 0;
        for ax in 0..rank {
            if !reduced[ax] {
                o = o * input.shape[ax] + index[ax];
            }
        }
        acc[o] = match op {
            ReduceOp::Sum | ReduceOp::Mean => acc[o] + x,
            ReduceOp::Max => acc[o].max(x),
        };
        for ax in (0..rank).rev() {
            index[ax] += 1;
            if index[ax] < input.shape[ax] {
                break;
            }
            index[ax] = 0;
        }
    }
    if op == ReduceOp::Mean {
        let n = T::of(count as f64);
        for v in &mut acc {
            *v = *v / n;
        }
    }
    let shape = if out_shape.is_empty() {
        vec![1]
    } else {
        out_shape
    };
    Tensor::from_vec(&shape, acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_variants() {
        let z = Tensor::<f32>::create(&[2, 3], Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 6]);
        let c = Tensor::<f32>::create(&[1], Init::Constant(7.5)).unwrap();
        assert_eq!(c.data(), &[7.5]);

        let draw = || {
            let mut rng = SeededRng::new(42);
            Tensor::<f64>::create(
                &[4],
                Init::Gaussian {
                    mean: 0.0,
                    std: 1.0,
                    rng: &mut rng,
                },
            )
            .unwrap()
        };
        let (a, b) = (draw(), draw());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn create_rejects_bad_shapes() {
        assert!(matches!(Tensor::<f32>::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::<f32>::zeros(&[3, 0]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_ones() {
        let id = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![3.0, -1.5, 2.25, 8.0]).unwrap();
        assert_eq!(matmul(&id, &b).unwrap(), b);

        let row = Tensor::<f32>::create(&[1, 3], Init::Constant(1.0)).unwrap();
        let col = Tensor::<f32>::create(&[3, 1], Init::Constant(1.0)).unwrap();
        let p = matmul(&row, &col).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.data(), &[3.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn reduce_basics() {
        let t = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(reduce(&t, ReduceOp::Sum, &[0]).unwrap().data(), &[6.0]);

        let c = Tensor::<f64>::create(&[2, 3, 4], Init::Constant(2.5)).unwrap();
        let m = reduce(&c, ReduceOp::Mean, &[0, 1, 2]).unwrap();
        assert_eq!(m.shape(), &[1]);
        assert_eq!(m.data(), &[2.5]);

        let m = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap();
        assert_eq!(reduce(&m, ReduceOp::Max, &[1]).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(
            reduce(&m, ReduceOp::Sum, &[0]).unwrap().data(),
            &[8.0, 5.0, 5.0]
        );
        assert!(matches!(
            reduce(&m, ReduceOp::Sum, &[2]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reduce_max_matches_linear_scan() {
        let mut rng = SeededRng::new(9);
        for _ in 0..20 {
            let t = Tensor::<f64>::create(
                &[3, 4, 5],
                Init::Gaussian {
                    mean: 0.0,
                    std: 3.0,
                    rng: &mut rng,
                },
            )
            .unwrap();
            let mut best = f64::NEG_INFINITY;
            for &x in t.data() {
                if x > best {
                    best = x;
                }
            }
            assert_eq!(
                reduce(&t, ReduceOp::Max, &[0, 1, 2]).unwrap().data(),
                &[best]
            );
        }
    }

    #[test]
    fn finite_check_names_the_fault() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        let err = t.check_finite("activations").unwrap_err();
        assert!(err.to_string().contains("activations"));
    }
}
