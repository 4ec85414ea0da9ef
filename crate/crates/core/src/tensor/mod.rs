//! Dense tensors and the forward/backward kernels the network is built from.
//!
//! Every kernel is generic over [`Scalar`] so the same code runs at 32-bit
//! (training, checkpoints) and 64-bit (finite-difference gradient checks).
//! Batch-parallel kernels split work per sample and reduce parameter
//! gradients in sample order, so results do not depend on the worker count.

mod activation;
mod conv;
mod linear;
mod loss;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, Index, IndexMut};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward};
pub use conv::{conv3d_backward, conv3d_forward, Conv3dGrads, Conv3dSpec};
pub use linear::{linear_backward, linear_forward, Linear, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_batch};
pub use pool::{avgpool3d_backward, avgpool3d_forward, Pool3dSpec};

pub const AXES: [&str; 3] = ["height", "width", "depth"];

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + AddAssign + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Output extent of a sliding window: `floor((in + 2p - k) / s) + 1`.
pub fn out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    out_dim_on_axis(input, kernel, stride, padding, "depth")
}

pub(crate) fn out_dim_on_axis(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    axis: &'static str,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::ZeroStride { axis });
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape {
            axis,
            extent: input,
            kernel,
            padding,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output positions `o` whose input tap `o*stride + offset - padding`
/// falls inside `[0, input)`.
pub(crate) fn valid_outputs(
    output: usize,
    input: usize,
    offset: usize,
    stride: usize,
    padding: usize,
) -> std::ops::Range<usize> {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + padding > offset {
        ((input + padding - offset - 1) / stride + 1).min(output)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Dense (batch, channels, height, width, depth) array, row-major in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5<T = f32> {
    dims: [usize; 5],
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 5], value: T) -> Self {
        Tensor5 {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) || data.len() != expected {
            return Err(Error::DimMismatch {
                context: "tensor construction",
                expected: vec![expected],
                actual: vec![data.len()],
            });
        }
        Ok(Tensor5 { dims, data })
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// Spatial/spectral extents (h, w, d).
    pub fn volume_dims(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, idx: [usize; 5]) -> usize {
        let [_, c, h, w, d] = self.dims;
        (((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]) * d + idx[4]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack tensors of identical per-sample shape along the batch axis.
    pub fn concat_batch(parts: &[Tensor5<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::DimMismatch {
            context: "batch concatenation",
            expected: vec![1],
            actual: vec![0],
        })?;
        let mut dims = first.dims;
        dims[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(Error::DimMismatch {
                    context: "batch concatenation",
                    expected: first.dims.to_vec(),
                    actual: p.dims.to_vec(),
                });
            }
            dims[0] += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor5 { dims, data })
    }

    pub(crate) fn expect_dims(&self, expected: [usize; 5], context: &'static str) -> Result<()> {
        if self.dims != expected {
            return Err(Error::DimMismatch {
                context,
                expected: expected.to_vec(),
                actual: self.dims.to_vec(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Index<[usize; 5]> for Tensor5<T> {
    type Output = T;

    fn index(&self, idx: [usize; 5]) -> &T {
        &self.data[self.offset(idx)]
    }
}

impl<T: Scalar> IndexMut<[usize; 5]> for Tensor5<T> {
    fn index_mut(&mut self, idx: [usize; 5]) -> &mut T {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}

/// Row-major 2-D array; rows are batch entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "matrix construction",
                expected: vec![rows, cols],
                actual: vec![data.len()],
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Index of the largest entry in row `r`; ties go to the lowest index.
    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dim_examples() {
        assert_eq!(out_dim(102, 3, 1, 0).unwrap(), 100);
        assert_eq!(out_dim(100, 3, 2, 1).unwrap(), 50);
        assert_eq!(out_dim(5, 1, 1, 0).unwrap(), 5);
    }

    #[test]
    fn out_dim_rejects_small_axis() {
        let err = out_dim_on_axis(1, 3, 1, 0, "width").unwrap_err();
        assert!(matches!(err, Error::Shape { axis: "width", .. }));
        assert!(matches!(
            out_dim(4, 1, 0, 0),
            Err(Error::ZeroStride { .. })
        ));
    }

    #[test]
    fn valid_outputs_matches_scan() {
        for input in 1..9 {
            for k in 1..4 {
                for s in 1..4 {
                    for p in 0..k {
                        let Ok(out) = out_dim(input, k, s, p) else { continue };
                        for off in 0..k {
                            let expected: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let i = (o * s + off) as isize - p as isize;
                                    i >= 0 && (i as usize) < input
                                })
                                .collect();
                            let got: Vec<usize> = valid_outputs(out, input, off, s, p).collect();
                            assert_eq!(got, expected, "in={input} k={k} s={s} p={p} off={off}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let m = Matrix::from_vec(1, 4, vec![1.0f32, 3.0, 3.0, 0.0]).unwrap();
        assert_eq!(m.argmax_row(0), 1);
        let flat = Matrix::from_vec(1, 3, vec![0.5f32; 3]).unwrap();
        assert_eq!(flat.argmax_row(0), 0);
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor5::<f32>::from_vec([1, 1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor5::<f32>::from_vec([0, 1, 1, 1, 1], vec![]).is_err());
    }
}
