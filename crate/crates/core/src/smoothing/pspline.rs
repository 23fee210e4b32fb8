//! Penalized least squares with generalized cross-validation.
//!
//! Fits minimise `|y - X b|^2 + lambda * b' P b`. The normal equations are
//! accumulated row by row, so designs with a few non-zeros per row (B-spline
//! bases) never need to be materialised.
//!
//! For GCV the system is diagonalised once (Demmler-Reinsch): with
//! `X'X = L L'` and `L^-1 P L^-T = U diag(s) U'`, both the residual sum of
//! squares and the trace of the hat matrix are closed-form in `lambda`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

use super::bspline::{second_difference_penalty, tensor_penalty};

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum SmoothingParameter {
    /// Minimise the GCV score.
    #[default]
    Gcv,
    /// Use this value of lambda as-is.
    Fixed(f64),
}


/// A penalty matrix together with a basis of its null space.
#[derive(Debug, Clone)]
pub struct Penalty {
    matrix: DMatrix<f64>,
    null_basis: DMatrix<f64>,
}

impl Penalty {
    pub fn second_difference(size: usize) -> Self {
        let mut null_basis = DMatrix::zeros(size, 2);
        for j in 0..size {
            null_basis[(j, 0)] = 1.0;
            null_basis[(j, 1)] = j as f64;
        }
        Self {
            matrix: second_difference_penalty(size),
            null_basis,
        }
    }

    /// Isotropic tensor-product penalty; null space spanned by `1, j, k, jk`.
    pub fn tensor(size: usize) -> Self {
        let mut null_basis = DMatrix::zeros(size * size, 4);
        for j in 0..size {
            for k in 0..size {
                let r = j * size + k;
                null_basis[(r, 0)] = 1.0;
                null_basis[(r, 1)] = j as f64;
                null_basis[(r, 2)] = k as f64;
                null_basis[(r, 3)] = (j * k) as f64;
            }
        }
        Self {
            matrix: tensor_penalty(size),
            null_basis,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Running `X'X`, `X'y`, `y'y` for a design with sparse rows.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    dim: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    count: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            xtx: vec![0.0; dim * dim],
            xty: vec![0.0; dim],
            yty: 0.0,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one observation whose design row is non-zero only at `indices`.
    pub fn add(&mut self, indices: &[usize], values: &[f64], y: f64) {
        debug_assert_eq!(indices.len(), values.len());
        for (&a, &va) in indices.iter().zip(values) {
            let row = a * self.dim;
            for (&b, &vb) in indices.iter().zip(values) {
                self.xtx[row + b] += va * vb;
            }
            self.xty[a] += va * y;
        }
        self.yty += y * y;
        self.count += 1;
    }

    pub fn solve(&self, penalty: &Penalty, parameter: SmoothingParameter) -> Result<PenalizedSolution> {
        let p = self.dim;
        if penalty.matrix.nrows() != p {
            return Err(Error::ShapeMismatch(format!(
                "penalty of size {} for {p} coefficients",
                penalty.matrix.nrows()
            )));
        }
        if self.count == 0 {
            return Err(Error::RankDeficient("no observations".into()));
        }
        let a = DMatrix::from_row_slice(p, p, &self.xtx);
        let b = DVector::from_column_slice(&self.xty);
        check_identifiable(&a, &penalty.null_basis)?;

        let m = self.count as f64;
        let dr = Diagonalized::new(&a, &b, &penalty.matrix)?;
        let lambda = match parameter {
            SmoothingParameter::Fixed(lambda) => {
                if !(lambda >= 0.0) || !lambda.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "smoothing parameter must be finite and non-negative, got {lambda}"
                    )));
                }
                lambda
            }
            SmoothingParameter::Gcv => {
                let scale = a.trace() / penalty.matrix.trace().max(f64::MIN_POSITIVE);
                dr.minimise_gcv(self.yty, m, scale)
            }
        };

        let system = &a + &penalty.matrix * lambda;
        let coefficients = match system.clone().cholesky() {
            Some(chol) => chol.solve(&b),
            None => {
                let ridge = 1e-10 * (a.trace() / p as f64).max(1e-300);
                (system + DMatrix::identity(p, p) * ridge)
                    .cholesky()
                    .ok_or_else(|| {
                        Error::RankDeficient(format!("penalized system singular at lambda = {lambda}"))
                    })?
                    .solve(&b)
            }
        };
        let edf = dr.edf(lambda);
        let rss = (self.yty - 2.0 * coefficients.dot(&b) + coefficients.dot(&(&a * &coefficients))).max(0.0);
        let gcv = if m > edf { m * rss / (m - edf).powi(2) } else { f64::INFINITY };
        Ok(PenalizedSolution {
            coefficients,
            lambda,
            edf,
            gcv,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    /// Effective degrees of freedom, the trace of the hat matrix.
    pub edf: f64,
    pub gcv: f64,
}

/// The penalty null space must be estimable from the data, otherwise
/// `X'X + lambda P` is singular for every lambda.
fn check_identifiable(a: &DMatrix<f64>, null_basis: &DMatrix<f64>) -> Result<()> {
    let mut n = null_basis.clone();
    for mut col in n.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let g = n.transpose() * a * &n;
    let eig = SymmetricEigen::new(g).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min <= 1e-11 * max {
        return Err(Error::RankDeficient(
            "data do not determine the unpenalized (polynomial) part of the smoother".into(),
        ));
    }
    Ok(())
}

struct Diagonalized {
    s: DVector<f64>,
    c: DVector<f64>,
}

impl Diagonalized {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>, penalty: &DMatrix<f64>) -> Result<Self> {
        let p = a.nrows();
        let base = (a.trace() / p as f64).max(1e-300);
        let mut ridge = 1e-9 * base;
        let chol = loop {
            if let Some(c) = (a + DMatrix::identity(p, p) * ridge).cholesky() {
                break c;
            }
            ridge *= 100.0;
            if ridge > base {
                return Err(Error::RankDeficient("cross-product matrix is not positive semi-definite".into()));
            }
        };
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::RankDeficient("triangular factor is singular".into()))?;
        let m = &l_inv * penalty * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let c = eig.eigenvectors.transpose() * (&l_inv * b);
        let s = eig.eigenvalues.map(|v| v.max(0.0));
        Ok(Self { s, c })
    }

    fn edf(&self, lambda: f64) -> f64 {
        self.s.iter().map(|&s| 1.0 / (1.0 + lambda * s)).sum()
    }

    fn rss(&self, yty: f64, lambda: f64) -> f64 {
        let mut fitted = 0.0;
        for (&s, &c) in self.s.iter().zip(self.c.iter()) {
            let r = 1.0 / (1.0 + lambda * s);
            fitted += c * c * (2.0 * r - r * r);
        }
        (yty - fitted).max(0.0)
    }

    fn gcv(&self, yty: f64, m: f64, lambda: f64) -> f64 {
        let edf = self.edf(lambda);
        if m - edf <= 1e-9 {
            return f64::INFINITY;
        }
        m * self.rss(yty, lambda) / (m - edf).powi(2)
    }

    /// Coarse search over log10(lambda / scale) in [-10, 6], then golden
    /// section refinement around the best grid value.
    fn minimise_gcv(&self, yty: f64, m: f64, scale: f64) -> f64 {
        let score = |t: f64| self.gcv(yty, m, scale * 10f64.powf(t));
        let step = 0.25;
        let mut best_t = -10.0;
        let mut best = f64::INFINITY;
        let mut t = -10.0;
        while t <= 6.0 + 1e-12 {
            let v = score(t);
            if v < best {
                best = v;
                best_t = t;
            }
            t += step;
        }
        let (mut lo, mut hi) = (best_t - step, best_t + step);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (score(x1), score(x2));
        for _ in 0..30 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = score(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = score(x2);
            }
        }
        let refined = 0.5 * (lo + hi);
        let t = if score(refined) <= best { refined } else { best_t };
        scale * 10f64.powf(t)
    }
}
