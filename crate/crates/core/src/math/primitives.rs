//! Value-level forward rules. The tape calls into these so that recorded and
//! unrecorded evaluation share one code path.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::math::matrix::{dot, Matrix};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Norm below which a vector is treated as zero by [`cosine_distance`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("softmax_rows input")?;
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Per-row statistics kept by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Standardized rows before the affine transform.
    pub normalized: Matrix,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(m: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<Matrix> {
    layer_norm_with_cache(m, gain, bias, eps).map(|(out, _)| out)
}

pub fn layer_norm_with_cache(
    m: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    if gain.shape() != (1, m.cols()) || bias.shape() != (1, m.cols()) {
        return Err(Error::Shape {
            op: "layer_norm",
            left: m.shape(),
            right: gain.shape(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let cols = m.cols() as f64;
    let mut normalized = Matrix::zeros(m.rows(), m.cols());
    let mut out = Matrix::zeros(m.rows(), m.cols());
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..m.cols() {
            let z = (row[c] - mean) * inv;
            normalized.set(r, c, z);
            out.set(r, c, z * gain.data()[c] + bias.data()[c]);
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn gelu(m: &Matrix) -> Matrix {
    m.map(gelu_scalar)
}

/// Logistic function, branch-stabilized so neither tail overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

/// Outcome of a cosine distance; `degenerate` is set when either input had
/// (near) zero norm and the neutral distance 1 was returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineDistance {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> CosineDistance {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return CosineDistance {
            value: 1.0,
            degenerate: true,
        };
    }
    CosineDistance {
        value: 1.0 - dot(a, b) / (na * nb),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let s = softmax_rows(&Matrix::from_rows(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        for c in [-3.0, 0.0, 7.5, 1e3] {
            let s = softmax_rows(&Matrix::from_rows(&[&[c, c, c]])).unwrap();
            for v in s.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_large_logit_no_overflow() {
        let s = softmax_rows(&Matrix::from_rows(&[&[1000.0, 0.0]])).unwrap();
        // by hand: subtract 1000 -> [e^0, e^-1000] = [1, 0 (underflow)]
        let tail = (-1000.0f64).exp();
        let expected = [1.0 / (1.0 + tail), tail / (1.0 + tail)];
        assert_eq!(s.data(), &expected);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax_rows(&Matrix::from_rows(&[&[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let m = Matrix::from_rows(&[&[3.0, 3.0, 3.0, 3.0]]);
        let out = layer_norm(
            &m,
            &Matrix::filled(1, 4, 1.0),
            &Matrix::zeros(1, 4),
            LAYER_NORM_EPS,
        )
        .unwrap();
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_standardized_row_is_fixed_point() {
        let m = Matrix::from_rows(&[&[-1.0, 1.0]]);
        let out = layer_norm(&m, &Matrix::filled(1, 2, 1.0), &Matrix::zeros(1, 2), 1e-15).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() < 1e-12);
        assert!((out.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rejects_bad_affine_shape() {
        let m = Matrix::zeros(2, 3);
        assert!(layer_norm(&m, &Matrix::zeros(1, 2), &Matrix::zeros(1, 3), 1e-5).is_err());
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-50.0) > 0.0);
        // e^-50 / (1 + e^-50) evaluated directly
        let e = (-50.0f64).exp();
        assert_eq!(sigmoid_scalar(-50.0), e / (1.0 + e));
        for x in [0.3, 2.0, 11.0, 30.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_distance_cases() {
        let a = [1.0, 2.0, -0.5];
        assert!(cosine_distance(&a, &a).value.abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).value - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cosine_distance(&a, &neg).value - 2.0).abs() < 1e-15);
        let d = cosine_distance(&[0.0, 0.0], &a);
        assert_eq!(
            d,
            CosineDistance {
                value: 1.0,
                degenerate: true
            }
        );
    }
}
