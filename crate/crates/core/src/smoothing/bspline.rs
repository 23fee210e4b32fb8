//! Cubic B-splines on equally spaced knots and their difference penalty.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Cubic B-spline basis with `size` functions on `[lower, upper]`.
///
/// Knots are equally spaced with spacing `(upper - lower) / (size - 3)` and
/// extend three intervals past each end, so every point of the domain has
/// exactly four non-zero basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicBSplineBasis {
    lower: f64,
    upper: f64,
    size: usize,
    spacing: f64,
}

impl CubicBSplineBasis {
    pub fn new(lower: f64, upper: f64, size: usize) -> Result<Self> {
        if size < 4 {
            return Err(Error::InvalidArgument(format!(
                "cubic B-spline basis needs at least 4 functions, got {size}"
            )));
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid spline domain [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            lower,
            upper,
            size,
            spacing: (upper - lower) / (size - 3) as f64,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Index of the first non-zero basis function at `x` and the four
    /// non-zero values. `x` is clamped into the domain.
    pub fn evaluate(&self, x: f64) -> (usize, [f64; 4]) {
        let intervals = self.size - 3;
        let pos = ((x.clamp(self.lower, self.upper)) - self.lower) / self.spacing;
        let k = (pos.floor() as usize).min(intervals - 1);
        let u = pos - k as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let om = 1.0 - u;
        (
            k,
            [
                om * om * om / 6.0,
                (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
                (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
                u3 / 6.0,
            ],
        )
    }

    /// Dense `points.len() x size` design matrix.
    pub fn design(&self, points: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(points.len(), self.size);
        for (r, &x) in points.iter().enumerate() {
            let (k, vals) = self.evaluate(x);
            for (j, v) in vals.iter().enumerate() {
                b[(r, k + j)] = *v;
            }
        }
        b
    }
}

/// `D^T D` for the second-order difference operator `D` on `size` coefficients.
pub fn second_difference_penalty(size: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(size.saturating_sub(2), size);
    for r in 0..size.saturating_sub(2) {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Isotropic penalty `P ⊗ I + I ⊗ P` for a `size x size` tensor product basis
/// whose coefficient `(j, k)` sits at index `j * size + k`.
pub fn tensor_penalty(size: usize) -> DMatrix<f64> {
    let p = second_difference_penalty(size);
    let eye = DMatrix::<f64>::identity(size, size);
    p.kronecker(&eye) + eye.kronecker(&p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let basis = CubicBSplineBasis::new(0.0, 1.0, 12).unwrap();
        for i in 0..=100 {
            let (_, v) = basis.evaluate(i as f64 / 100.0);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn reproduces_linear_functions_with_linear_coefficients() {
        // coefficients c_j = j reproduce an affine function of x
        let basis = CubicBSplineBasis::new(0.0, 1.0, 8).unwrap();
        let coef: Vec<f64> = (0..8).map(|j| j as f64).collect();
        let eval = |x: f64| {
            let (k, v) = basis.evaluate(x);
            (0..4).map(|j| coef[k + j] * v[j]).sum::<f64>()
        };
        let slope = eval(1.0) - eval(0.0);
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((eval(x) - (eval(0.0) + slope * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_basis_is_rejected() {
        assert!(CubicBSplineBasis::new(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn penalty_annihilates_linear_coefficients() {
        let p = second_difference_penalty(6);
        let lin = nalgebra::DVector::from_iterator(6, (0..6).map(|j| 2.0 + 3.0 * j as f64));
        assert!((p * lin).amax() < 1e-12);
    }

    #[test]
    fn tensor_penalty_null_space() {
        let n = 5;
        let p = tensor_penalty(n);
        let bilinear = nalgebra::DVector::from_iterator(
            n * n,
            (0..n * n).map(|idx| {
                let (j, k) = ((idx / n) as f64, (idx % n) as f64);
                1.0 + 2.0 * j - k + 0.5 * j * k
            }),
        );
        assert!((p * bilinear).amax() < 1e-12);
    }
}
