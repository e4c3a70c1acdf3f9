//! Numerically stable scalar and vector primitives.
//!
//! Everything in the loss and preference code that sums exponentials goes
//! through [`log_sum_exp`] or [`softmax`]; nothing exponentiates raw scores.

use crate::{Error, Result};

/// Default step for [`finite_difference_gradient`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A vector whose entries are all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl AsRef<[f64]> for RealVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `log Σ exp(xs_i)`, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    let max = xs
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyVector)?;
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = -log(1 + exp(-x))`, evaluated on the branch that never
/// exponentiates a large positive number.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(xs)?;
    Ok(xs.iter().map(|&x| (x - lse).exp()).collect())
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteEvaluation { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error used by the gradient checks: `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true gradient is ~0 from turning
/// rounding noise into huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over two aligned vectors and the coordinate where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0.0, 0), |(best, at), (i, e)| if e > best { (e, i) } else { (best, at) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[5.0]).unwrap(), 5.0);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        let shifted = log_sum_exp(&[0.0, 0.0]).unwrap() + 1000.0;
        assert!((big - shifted).abs() < 1e-12);
        assert!((big - (1000.0 + LN_2)).abs() < 1e-12);
        assert!(log_sum_exp(&[700.0, -700.0]).unwrap().is_finite());
    }

    #[test]
    fn log_sum_exp_rejects_empty() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyVector)));
        assert_eq!(Error::EmptyVector.to_string(), "empty vector");
    }

    #[test]
    fn log_sigmoid_examples() {
        assert!((log_sigmoid(0.0) + LN_2).abs() < 1e-15);
        // -log1p(exp(-50)), 50-digit evaluation: -1.9287498479639178e-22
        let v = log_sigmoid(50.0);
        assert!((v + 1.928_749_847_963_917_8e-22).abs() < 1e-36);
        assert!((log_sigmoid(-50.0) + 50.0).abs() < 1e-12);
        assert!(log_sigmoid(-700.0).is_finite());
        assert_eq!(log_sigmoid(-700.0), -700.0);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = softmax(&[LN_2, 0.0, 0.0]).unwrap();
        for (a, b) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        for c in [-400.0, 0.0, 3.5, 650.0] {
            let p = softmax(&[c, c + 3f64.ln()]).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12, "c={c}");
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn real_vector_rejects_nan() {
        assert!(matches!(
            RealVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(RealVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert_eq!(RealVector::new(vec![1.0, 2.0]).unwrap().len(), 2);
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference_gradient(|x| x.iter().sum(), &[0.3, -2.0, 7.0], DEFAULT_FD_STEP).unwrap();
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_difference_gradient(|x| log_sum_exp(x).unwrap(), &[0.0, 0.0], DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-9 && (g[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_names_bad_coordinate() {
        let err = finite_difference_gradient(
            |x| if x[1] > 1.0 { f64::NAN } else { x[0] },
            &[0.0, 1.0],
            DEFAULT_FD_STEP,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation { coordinate: 1 }));
        assert!(finite_difference_gradient(|x| x[0], &[0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn lse_shift_invariance(xs in prop::collection::vec(-50.0f64..50.0, 1..12), c in -600.0f64..600.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&xs).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-12, "diff {}", (lhs - rhs).abs());
        }

        #[test]
        fn softmax_on_simplex(xs in prop::collection::vec(-30.0f64..30.0, 1..16)) {
            let p = softmax(&xs).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn log_sigmoid_complement(x in -30.0f64..30.0) {
            let s = log_sigmoid(x).exp() + log_sigmoid(-x).exp();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!((log_sigmoid(x).exp() - sigmoid(x)).abs() <= 1e-15);
        }

        #[test]
        fn fd_of_lse_is_softmax(xs in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let fd = finite_difference_gradient(|x| log_sum_exp(x).unwrap(), &xs, DEFAULT_FD_STEP).unwrap();
            let p = softmax(&xs).unwrap();
            let (err, _) = max_relative_error(&p, &fd, 0.0);
            prop_assert!(err <= 1e-6, "err {}", err);
        }
    }
}
