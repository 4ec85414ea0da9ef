use rayon::prelude::*;

use super::{out_dim_on_axis, valid_outputs, Scalar, Tensor5, AXES};
use crate::error::{Error, Result};

/// 3D average pooling. Padded positions count as zeros in both the window
/// sum and the divisor, which is always the full kernel volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool3dSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Pool3dSpec {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.kernel[a] == 0 || self.padding[a] >= self.kernel[a] {
                return Err(Error::InvalidConfig {
                    stage: "avgpool3d".into(),
                    reason: format!(
                        "kernel {} with padding {} on {} axis",
                        self.kernel[a], self.padding[a], AXES[a]
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn output_volume(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = out_dim_on_axis(input[a], self.kernel[a], self.stride[a], self.padding[a], AXES[a])?;
        }
        Ok(out)
    }

    pub fn output_dims(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        let [h, w, d] = self.output_volume([input[2], input[3], input[4]])?;
        Ok([input[0], input[1], h, w, d])
    }
}

/// Calls `f(input_offset, output_offset)` for every in-image tap of every
/// window of one channel plane.
fn for_each_tap(spec: &Pool3dSpec, in_vol: [usize; 3], out_vol: [usize; 3], mut f: impl FnMut(usize, usize)) {
    let [ih, iw, id] = in_vol;
    let [oh, ow, od] = out_vol;
    let [kh, kw, kd] = spec.kernel;
    let [sh, sw, sd] = spec.stride;
    let [ph, pw, pd] = spec.padding;
    for a in 0..kh {
        for y in valid_outputs(oh, ih, a, sh, ph) {
            let iy = y * sh + a - ph;
            for b in 0..kw {
                for x in valid_outputs(ow, iw, b, sw, pw) {
                    let ix = x * sw + b - pw;
                    for c in 0..kd {
                        for z in valid_outputs(od, id, c, sd, pd) {
                            let iz = z * sd + c - pd;
                            f((iy * iw + ix) * id + iz, (y * ow + x) * od + z);
                        }
                    }
                }
            }
        }
    }
}

pub fn avgpool3d_forward<T: Scalar>(x: &Tensor5<T>, spec: &Pool3dSpec) -> Result<Tensor5<T>> {
    let out_dims = spec.output_dims(x.dims())?;
    let in_vol = x.volume_dims();
    let out_vol = [out_dims[2], out_dims[3], out_dims[4]];
    let in_plane: usize = in_vol.iter().product();
    let out_plane: usize = out_vol.iter().product();
    let scale = T::one() / T::from_usize(spec.kernel_volume()).expect("small integer");
    let mut out = Tensor5::zeros(out_dims);
    out.data_mut()
        .par_chunks_mut(out_plane)
        .zip(x.data().par_chunks(in_plane))
        .for_each(|(o, xs)| {
            for_each_tap(spec, in_vol, out_vol, |i, j| o[j] += xs[i]);
            o.iter_mut().for_each(|v| *v = *v * scale);
        });
    Ok(out)
}

pub fn avgpool3d_backward<T: Scalar>(
    x_dims: [usize; 5],
    spec: &Pool3dSpec,
    upstream: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    let out_dims = spec.output_dims(x_dims)?;
    upstream.expect_dims(out_dims, "avgpool3d backward upstream")?;
    let in_vol = [x_dims[2], x_dims[3], x_dims[4]];
    let out_vol = [out_dims[2], out_dims[3], out_dims[4]];
    let in_plane: usize = in_vol.iter().product();
    let out_plane: usize = out_vol.iter().product();
    let scale = T::one() / T::from_usize(spec.kernel_volume()).expect("small integer");
    let mut grad = Tensor5::zeros(x_dims);
    grad.data_mut()
        .par_chunks_mut(in_plane)
        .zip(upstream.data().par_chunks(out_plane))
        .for_each(|(g, up)| {
            for_each_tap(spec, in_vol, out_vol, |i, j| g[i] += up[j] * scale);
        });
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEPTH_POOL: Pool3dSpec = Pool3dSpec {
        kernel: [1, 1, 3],
        stride: [1, 1, 2],
        padding: [0, 0, 1],
    };

    #[test]
    fn depth_vector_with_padding() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = avgpool3d_forward(&x, &DEPTH_POOL).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1, 2]);
        // windows over [0,1,2,3,4,0]: (0+1+2)/3, (2+3+4)/3
        assert_eq!(y.data(), &[1.0, 3.0]);
    }

    #[test]
    fn constant_field_is_preserved() {
        let spec = Pool3dSpec {
            kernel: [2, 2, 3],
            stride: [1, 2, 2],
            padding: [0, 0, 0],
        };
        let x = Tensor5::full([2, 3, 4, 4, 7], 2.5f64);
        let y = avgpool3d_forward(&x, &spec).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn unit_window_is_identity() {
        let spec = Pool3dSpec {
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        };
        let x = Tensor5::from_vec([1, 2, 2, 1, 3], (0..12).map(|v| v as f32 * 0.5).collect()).unwrap();
        assert_eq!(avgpool3d_forward(&x, &spec).unwrap(), x);
    }

    #[test]
    fn non_overlapping_backward_spreads_evenly() {
        let spec = Pool3dSpec {
            kernel: [2, 1, 2],
            stride: [2, 1, 2],
            padding: [0, 0, 0],
        };
        let dims = [1, 2, 4, 3, 6];
        let up = Tensor5::full(spec.output_dims(dims).unwrap(), 1.0f64);
        let g = avgpool3d_backward(dims, &spec, &up).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.25));
        let zero = Tensor5::<f64>::zeros(up.dims());
        assert!(avgpool3d_backward(dims, &spec, &zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_must_be_smaller_than_kernel() {
        let spec = Pool3dSpec {
            kernel: [1, 1, 2],
            stride: [1, 1, 1],
            padding: [0, 0, 2],
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig { .. })));
    }
}
