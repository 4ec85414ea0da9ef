use super::{Scalar, Tensor5};
use crate::error::Result;

pub fn relu<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor5<T>, upstream: &Tensor5<T>) -> Result<Tensor5<T>> {
    upstream.expect_dims(x.dims(), "relu backward upstream")?;
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &u)| if v > T::zero() { u } else { T::zero() })
        .collect();
    Tensor5::from_vec(x.dims(), data)
}
