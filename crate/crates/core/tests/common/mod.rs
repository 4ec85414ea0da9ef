//! Test-only oracles and synthetic fixtures.
//!
//! The oracles here deliberately avoid the library's kernels: the direct
//! convolution is a plain nested loop and gradients come from central
//! finite differences in f64.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specnet3d::data_io::{HsiCube, LabelGrid};
use specnet3d::tensor::{Conv3dSpec, Tensor5};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 5]) -> Tensor5<f64> {
    Tensor5::from_vec(dims, random_vec(rng, dims.iter().product())).unwrap()
}

pub fn random_conv(
    rng: &mut ChaCha8Rng,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Conv3dSpec<f64> {
    let mut spec = Conv3dSpec::new(in_channels, out_channels, kernel, stride, padding);
    spec.weights = random_vec(rng, spec.weights.len());
    spec.bias = random_vec(rng, out_channels);
    spec
}

/// Direct-summation 3D cross-correlation with explicit zero padding.
pub fn conv_oracle(x: &Tensor5<f64>, spec: &Conv3dSpec<f64>) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w, d] = x.dims();
    let [kh, kw, kd] = spec.kernel;
    let [sh, sw, sd] = spec.stride;
    let [ph, pw, pd] = spec.padding;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let od = (d + 2 * pd - kd) / sd + 1;
    let at = |b: usize, ch: usize, i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= h as isize || j >= w as isize || k >= d as isize {
            0.0
        } else {
            x.data()[(((b * c + ch) * h + i as usize) * w + j as usize) * d + k as usize]
        }
    };
    let mut out = Vec::with_capacity(n * spec.out_channels * oh * ow * od);
    for b in 0..n {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                for xx in 0..ow {
                    for z in 0..od {
                        let mut acc = spec.bias[o];
                        for ch in 0..c {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    for cc in 0..kd {
                                        let wgt = spec.weights[(((o * c + ch) * kh + a) * kw + bb) * kd + cc];
                                        let i = (y * sh + a) as isize - ph as isize;
                                        let j = (xx * sw + bb) as isize - pw as isize;
                                        let k = (z * sd + cc) as isize - pd as isize;
                                        acc += wgt * at(b, ch, i, j, k);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    (vec![n, spec.out_channels, oh, ow, od], out)
}

pub fn fd_step(value: f64) -> f64 {
    1e-4 * value.abs().max(1.0)
}

/// Central difference of `f` with respect to `params[idx]`.
pub fn central_difference(params: &mut [f64], idx: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[idx];
    let h = fd_step(orig);
    params[idx] = orig + h;
    let plus = f(params);
    params[idx] = orig - h;
    let minus = f(params);
    params[idx] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse random spectra: 32 labeled pixels on an 8x8 scene, 9 classes,
/// each class a distinct random signature plus small noise.
pub fn overfit_fixture(bands: usize) -> (HsiCube, LabelGrid) {
    let mut r = rng(0xF1);
    let (h, w, classes) = (8, 8, 9);
    let signatures: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..bands).map(|_| r.gen_range(0.0..1.0)).collect())
        .collect();
    let mut positions: Vec<usize> = (0..h * w).collect();
    for i in (1..positions.len()).rev() {
        positions.swap(i, r.gen_range(0..=i));
    }
    let mut labels = vec![0u8; h * w];
    for (i, &p) in positions.iter().take(32).enumerate() {
        labels[p] = (i % classes + 1) as u8;
    }
    let mut values = Vec::with_capacity(h * w * bands);
    for &l in &labels {
        for b in 0..bands {
            let v = match l {
                0 => r.gen_range(0.0..1.0),
                c => signatures[c as usize - 1][b] + r.gen_range(-0.05..0.05),
            };
            values.push(v);
        }
    }
    (
        HsiCube::from_pixels(h, w, bands, values).unwrap(),
        LabelGrid::new(h, w, classes, labels).unwrap(),
    )
}

/// Standard normal draw (Box-Muller).
pub fn gaussian(r: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

/// Fully labeled scene of 3x3 class blocks, 28x25 = 700 pixels per class.
/// Each class draws its spectra from a Gaussian around a smooth signature.
pub fn separable_scene(bands: usize, seed: u64) -> (HsiCube, LabelGrid) {
    let mut r = rng(seed);
    let (bh, bw) = (28, 25);
    let (h, w) = (3 * bh, 3 * bw);
    let means: Vec<Vec<f32>> = (0..9)
        .map(|k| {
            let freq = 1.0 + (k % 3) as f32;
            let phase = k as f32 * 0.7;
            let level = 0.3 + 0.05 * k as f32;
            (0..bands)
                .map(|b| level + 0.2 * (std::f32::consts::TAU * freq * b as f32 / bands as f32 + phase).sin())
                .collect()
        })
        .collect();
    let mut labels = vec![0u8; h * w];
    let mut values = Vec::with_capacity(h * w * bands);
    for row in 0..h {
        for col in 0..w {
            let class = (row / bh) * 3 + col / bw;
            labels[row * w + col] = class as u8 + 1;
            values.extend(means[class].iter().map(|&m| m + 0.05 * gaussian(&mut r)));
        }
    }
    (
        HsiCube::from_pixels(h, w, bands, values).unwrap(),
        LabelGrid::new(h, w, 9, labels).unwrap(),
    )
}

/// Reference PaviaU confusion matrix (rows = truth).
pub const PAVIA_U_MATRIX: [[u64; 9]; 9] = [
    [6041, 7, 15, 0, 1, 0, 21, 70, 0],
    [0, 16457, 0, 6, 0, 20, 0, 0, 0],
    [9, 2, 1660, 0, 0, 0, 0, 260, 0],
    [0, 70, 0, 2800, 0, 16, 0, 0, 0],
    [0, 0, 0, 0, 1286, 0, 0, 0, 0],
    [6, 32, 0, 0, 0, 4770, 0, 0, 0],
    [64, 0, 0, 0, 0, 0, 1202, 2, 3],
    [26, 19, 59, 0, 0, 3, 0, 3413, 0],
    [8, 5, 0, 0, 0, 1, 0, 0, 891],
];

pub fn pavia_u_rows() -> Vec<Vec<u64>> {
    PAVIA_U_MATRIX.iter().map(|r| r.to_vec()).collect()
}

/// Kappa evaluated cell by cell from the raw table, sharing no code with
/// the library.
pub fn kappa_oracle(rows: &[Vec<u64>]) -> f64 {
    let c = rows.len();
    let mut n = 0.0;
    let mut diag = 0.0;
    let mut row_sums = vec![0.0; c];
    let mut col_sums = vec![0.0; c];
    for i in 0..c {
        for j in 0..c {
            let v = rows[i][j] as f64;
            n += v;
            row_sums[i] += v;
            col_sums[j] += v;
            if i == j {
                diag += v;
            }
        }
    }
    let p_o = diag / n;
    let mut p_e = 0.0;
    for i in 0..c {
        p_e += (row_sums[i] / n) * (col_sums[i] / n);
    }
    (p_o - p_e) / (1.0 - p_e)
}

pub mod checks;
