use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Fully connected layer; `weights` is `out_features x in_features` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<T = f32> {
    pub input: Matrix<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            in_features: self.in_features,
            out_features: self.out_features,
            weights: self.weights.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.in_features
            || self.weights.len() != self.in_features * self.out_features
            || self.bias.len() != self.out_features
        {
            return Err(Error::DimMismatch {
                context: "linear layer",
                expected: vec![self.in_features, self.out_features],
                actual: vec![cols, self.bias.len()],
            });
        }
        Ok(())
    }
}

pub fn linear_forward<T: Scalar>(x: &Matrix<T>, layer: &Linear<T>) -> Result<Matrix<T>> {
    layer.check(x.cols())?;
    let mut out = Matrix::zeros(x.rows(), layer.out_features);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            let w = &layer.weights[c * layer.in_features..(c + 1) * layer.in_features];
            let mut acc = layer.bias[c];
            for (&a, &b) in w.iter().zip(xr) {
                acc += a * b;
            }
            *o = acc;
        }
    }
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    layer: &Linear<T>,
    upstream: &Matrix<T>,
) -> Result<LinearGrads<T>> {
    layer.check(x.cols())?;
    if upstream.rows() != x.rows() || upstream.cols() != layer.out_features {
        return Err(Error::DimMismatch {
            context: "linear backward upstream",
            expected: vec![x.rows(), layer.out_features],
            actual: vec![upstream.rows(), upstream.cols()],
        });
    }
    let f = layer.in_features;
    let mut input = Matrix::zeros(x.rows(), f);
    let mut weights = vec![T::zero(); layer.weights.len()];
    let mut bias = vec![T::zero(); layer.out_features];
    for r in 0..x.rows() {
        let xr = x.row(r);
        let ur = upstream.row(r);
        let gx = input.row_mut(r);
        for (c, &u) in ur.iter().enumerate() {
            bias[c] += u;
            let w = &layer.weights[c * f..(c + 1) * f];
            let gw = &mut weights[c * f..(c + 1) * f];
            for i in 0..f {
                gw[i] += u * xr[i];
                gx[i] += u * w[i];
            }
        }
    }
    Ok(LinearGrads {
        input,
        weights,
        bias,
    })
}
