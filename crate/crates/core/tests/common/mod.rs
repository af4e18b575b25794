//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rawfe::ivector::IVectorModel;

pub fn random_model(rng: &mut ChaCha8Rng, c: usize, d: usize, r: usize) -> (IVectorModel, Vec<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
    let means = Array2::from_shape_fn((c, d), |_| rng.gen_range(-2.0..2.0));
    let vars = Array2::from_shape_fn((c, d), |_| rng.gen_range(0.3..3.0));
    let t = Array2::from_shape_fn((c * d, r), |_| rng.gen_range(-1.0..1.0));
    let model = IVectorModel::new(
        Array1::from(weights.clone()),
        means.clone(),
        vars.clone(),
        t.clone(),
        Array2::eye(d),
    )
    .unwrap();
    (model, weights, means, vars, t)
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Builds the full supervector system `(I + Tᵀ Σ⁻¹ N T) w = Tᵀ Σ⁻¹ F` with
/// explicit `(C·D)`-sized matrices and posteriors from direct densities.
pub fn oracle_ivector(feats: &Array2<f64>, weights: &[f64], means: &Array2<f64>, vars: &Array2<f64>, t: &Array2<f64>) -> Vec<f64> {
    let (c, d) = means.dim();
    let r = t.ncols();
    let cd = c * d;
    let mut n_sup = vec![0.0; cd];
    let mut f_sup = vec![0.0; cd];
    for x in feats.rows() {
        let dens: Vec<f64> = (0..c)
            .map(|k| {
                let mut p = weights[k];
                for j in 0..d {
                    let v = vars[[k, j]];
                    let z = x[j] - means[[k, j]];
                    p *= (-0.5 * z * z / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                }
                p
            })
            .collect();
        let total: f64 = dens.iter().sum();
        for k in 0..c {
            let g = dens[k] / total;
            for j in 0..d {
                n_sup[k * d + j] += g;
                f_sup[k * d + j] += g * (x[j] - means[[k, j]]);
            }
        }
    }
    let mut a = vec![vec![0.0; r]; r];
    let mut b = vec![0.0; r];
    for i in 0..r {
        a[i][i] = 1.0;
        for row in 0..cd {
            let sinv = 1.0 / vars[[row / d, row % d]];
            b[i] += t[[row, i]] * sinv * f_sup[row];
            for j in 0..r {
                a[i][j] += t[[row, i]] * sinv * n_sup[row] * t[[row, j]];
            }
        }
    }
    dense_solve(a, b)
}

/// Textbook strided cross-correlation with explicit zero padding.
/// `same` pads to `ceil(L / stride)` outputs, putting the odd sample on the right.
pub fn naive_conv(signal: &[Vec<f64>], kernels: &[Vec<Vec<f64>>], stride: usize, same: bool) -> Vec<Vec<f64>> {
    let len = signal[0].len() as isize;
    let k = kernels[0][0].len() as isize;
    let s = stride as isize;
    let (out_len, left) = if same {
        let out = (len + s - 1) / s;
        let total = ((out - 1) * s + k - len).max(0);
        (out, total / 2)
    } else {
        ((len - k) / s + 1, 0)
    };
    kernels
        .iter()
        .map(|kc| {
            (0..out_len)
                .map(|t| {
                    let mut acc = 0.0;
                    for (i, row) in kc.iter().enumerate() {
                        for (j, w) in row.iter().enumerate() {
                            let pos = t * s + j as isize - left;
                            if pos >= 0 && pos < len {
                                acc += w * signal[i][pos as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II straight from the cosine sum.
pub fn direct_dct(x: &[f64], num_coeffs: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..num_coeffs)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale * s
        })
        .collect()
}

