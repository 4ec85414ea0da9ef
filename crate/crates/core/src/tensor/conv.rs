use rayon::prelude::*;

use super::{out_dim_on_axis, valid_outputs, Scalar, Tensor5, AXES};
use crate::error::{Error, Result};

/// A 3D convolution layer: geometry plus its parameters.
///
/// Weights are laid out `(out_channels, in_channels, kh, kw, kd)` row-major.
/// The kernel is applied as a cross-correlation (no flip).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dSpec<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dGrads<T = f32> {
    pub input: Tensor5<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3dSpec<T> {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        let kvol: usize = kernel.iter().product();
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: vec![T::zero(); out_channels * in_channels * kvol],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kh, kw, kd] = self.kernel;
        [self.out_channels, self.in_channels, kh, kw, kd]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * (self.fan_in() + 1)
    }

    pub fn output_volume(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.kernel[a] == 0 {
                return Err(Error::InvalidConfig {
                    stage: "conv3d".into(),
                    reason: format!("zero kernel extent on {} axis", AXES[a]),
                });
            }
            out[a] = out_dim_on_axis(input[a], self.kernel[a], self.stride[a], self.padding[a], AXES[a])?;
        }
        Ok(out)
    }

    pub fn output_dims(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        if input[1] != self.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels,
                actual: input[1],
            });
        }
        let [h, w, d] = self.output_volume([input[2], input[3], input[4]])?;
        Ok([input[0], self.out_channels, h, w, d])
    }

    pub fn cast<U: Scalar>(&self) -> Conv3dSpec<U> {
        Conv3dSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weights: self.weights.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    fn check_params(&self) -> Result<()> {
        let expected = self.weight_shape().iter().product::<usize>();
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::DimMismatch {
                context: "conv3d parameters",
                expected: vec![expected, self.out_channels],
                actual: vec![self.weights.len(), self.bias.len()],
            });
        }
        Ok(())
    }
}

/// Precomputed geometry shared by the forward and backward loops.
struct Geometry {
    in_vol: [usize; 3],
    out_vol: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    in_channels: usize,
    out_channels: usize,
}

impl Geometry {
    fn new<T: Scalar>(spec: &Conv3dSpec<T>, input: [usize; 5]) -> Result<Self> {
        let out = spec.output_dims(input)?;
        Ok(Geometry {
            in_vol: [input[2], input[3], input[4]],
            out_vol: [out[2], out[3], out[4]],
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
        })
    }

    fn in_plane(&self) -> usize {
        self.in_vol.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.out_vol.iter().product()
    }

    /// Visit every (weight index, input offset, output offset, run length)
    /// triple for one input/output channel pair. Runs are contiguous along
    /// depth in the output and strided by `stride[2]` in the input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [ih, iw, id] = self.in_vol;
        let [oh, ow, od] = self.out_vol;
        let [kh, kw, kd] = self.kernel;
        let [sh, sw, sd] = self.stride;
        let [ph, pw, pd] = self.padding;
        for a in 0..kh {
            let rows = valid_outputs(oh, ih, a, sh, ph);
            for b in 0..kw {
                let cols = valid_outputs(ow, iw, b, sw, pw);
                for c in 0..kd {
                    let deps = valid_outputs(od, id, c, sd, pd);
                    if deps.is_empty() {
                        continue;
                    }
                    let k = (a * kw + b) * kd + c;
                    let run = deps.end - deps.start;
                    for y in rows.clone() {
                        let iy = y * sh + a - ph;
                        for x in cols.clone() {
                            let ix = x * sw + b - pw;
                            let iz = deps.start * sd + c - pd;
                            f(k, (iy * iw + ix) * id + iz, (y * ow + x) * od + deps.start, run);
                        }
                    }
                }
            }
        }
    }
}

/// Samples unfolded together. Fixed, so gradient accumulation order never
/// depends on the worker count.
const CHUNK: usize = 16;

/// Unfold `samples` (each `in_channels * in_plane` long) into
/// `col[(ic * kvol + k) * len + n * out_plane + p]`, zero where a tap falls
/// in the padding.
fn im2col<T: Scalar>(g: &Geometry, kvol: usize, samples: &[T], col: &mut [T]) {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let n_samples = samples.len() / (g.in_channels * in_plane);
    let len = n_samples * out_plane;
    let sd = g.stride[2];
    col.fill(T::zero());
    col.par_chunks_mut(kvol * len).enumerate().for_each(|(ic, rows)| {
        for n in 0..n_samples {
            let x_c = &samples[(n * g.in_channels + ic) * in_plane..][..in_plane];
            g.for_each_tap(|k, i0, o0, run| {
                let dst = &mut rows[k * len + n * out_plane + o0..][..run];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = x_c[i0 + j * sd];
                }
            });
        }
    });
}

/// Inverse of [`im2col`]: scatter-add `col` back onto per-sample input grads.
fn col2im<T: Scalar>(g: &Geometry, kvol: usize, col: &[T], grads: &mut [T]) {
    let in_plane = g.in_plane();
    let out_plane = g.out_plane();
    let sample_len = g.in_channels * in_plane;
    let len = grads.len() / sample_len * out_plane;
    let sd = g.stride[2];
    grads.par_chunks_mut(sample_len).enumerate().for_each(|(n, gx)| {
        for ic in 0..g.in_channels {
            let gx_c = &mut gx[ic * in_plane..][..in_plane];
            let rows = &col[ic * kvol * len..][..kvol * len];
            g.for_each_tap(|k, i0, o0, run| {
                let src = &rows[k * len + n * out_plane + o0..][..run];
                for (j, &v) in src.iter().enumerate() {
                    gx_c[i0 + j * sd] += v;
                }
            });
        }
    });
}

fn axpy<T: Scalar>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed order.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    for (l, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        lanes[l] += x * y;
    }
    let [a0, a1, a2, a3, a4, a5, a6, a7] = lanes;
    ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
}

pub fn conv3d_forward<T: Scalar>(x: &Tensor5<T>, spec: &Conv3dSpec<T>) -> Result<Tensor5<T>> {
    spec.check_params()?;
    let out_dims = spec.output_dims(x.dims())?;
    let g = Geometry::new(spec, x.dims())?;
    let kvol = spec.kernel_volume();
    let k_total = g.in_channels * kvol;
    let out_plane = g.out_plane();
    let mut out = Tensor5::zeros(out_dims);
    let in_len = x.sample_len();
    let out_len = out.sample_len();
    let mut col = Vec::new();
    let mut rows = Vec::new();
    for (xs, os) in x.data().chunks(CHUNK * in_len).zip(out.data_mut().chunks_mut(CHUNK * out_len)) {
        let n = xs.len() / in_len;
        let len = n * out_plane;
        col.resize(k_total * len, T::zero());
        rows.resize(g.out_channels * len, T::zero());
        im2col(&g, kvol, xs, &mut col);
        rows.par_chunks_mut(len).enumerate().for_each(|(oc, row)| {
            row.fill(spec.bias[oc]);
            let w = &spec.weights[oc * k_total..][..k_total];
            for (k, &wk) in w.iter().enumerate() {
                axpy(row, wk, &col[k * len..][..len]);
            }
        });
        for (i, o) in os.chunks_mut(out_plane).enumerate() {
            // i = n * out_channels + oc
            let (sample, oc) = (i / g.out_channels, i % g.out_channels);
            o.copy_from_slice(&rows[oc * len + sample * out_plane..][..out_plane]);
        }
    }
    Ok(out)
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor5<T>,
    spec: &Conv3dSpec<T>,
    upstream: &Tensor5<T>,
) -> Result<Conv3dGrads<T>> {
    spec.check_params()?;
    let out_dims = spec.output_dims(x.dims())?;
    upstream.expect_dims(out_dims, "conv3d backward upstream")?;
    let g = Geometry::new(spec, x.dims())?;
    let kvol = spec.kernel_volume();
    let k_total = g.in_channels * kvol;
    let out_plane = g.out_plane();
    let oc_n = g.out_channels;
    let mut grad_x = Tensor5::zeros(x.dims());
    let mut weights = vec![T::zero(); spec.weights.len()];
    let mut bias = vec![T::zero(); oc_n];
    let in_len = x.sample_len();
    let out_len = upstream.sample_len();
    let mut col = Vec::new();
    let mut up = Vec::new();
    let mut grad_col = Vec::new();
    let chunks = x
        .data()
        .chunks(CHUNK * in_len)
        .zip(upstream.data().chunks(CHUNK * out_len))
        .zip(grad_x.data_mut().chunks_mut(CHUNK * in_len));
    for ((xs, us), gxs) in chunks {
        let n = xs.len() / in_len;
        let len = n * out_plane;
        col.resize(k_total * len, T::zero());
        up.resize(oc_n * len, T::zero());
        grad_col.resize(k_total * len, T::zero());
        im2col(&g, kvol, xs, &mut col);
        for (i, u) in us.chunks(out_plane).enumerate() {
            let (sample, oc) = (i / oc_n, i % oc_n);
            up[oc * len + sample * out_plane..][..out_plane].copy_from_slice(u);
        }
        let partial: Vec<(Vec<T>, T)> = up
            .par_chunks(len)
            .map(|u| {
                let gw = (0..k_total)
                    .map(|k| dot(u, &col[k * len..][..len]))
                    .collect();
                (gw, u.iter().copied().sum())
            })
            .collect();
        for (oc, (gw, gb)) in partial.into_iter().enumerate() {
            for (a, b) in weights[oc * k_total..][..k_total].iter_mut().zip(gw) {
                *a += b;
            }
            bias[oc] += gb;
        }
        grad_col.par_chunks_mut(len).enumerate().for_each(|(k, row)| {
            row.fill(T::zero());
            for oc in 0..oc_n {
                axpy(row, spec.weights[oc * k_total + k], &up[oc * len..][..len]);
            }
        });
        col2im(&g, kvol, &grad_col, gxs);
    }
    Ok(Conv3dGrads {
        input: grad_x,
        weights,
        bias,
    })
}
