//! Functional principal components from a smoothed covariance surface, and
//! conditional-expectation (BLUP) reconstruction of sparsely observed curves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{EvaluationGrid, Subject};
use crate::error::{Error, Result};
use crate::smoothing::{CovarianceEstimate, MeanEstimate};

/// Default share of the positive spectrum that the retained components explain.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

/// Eigenvalues this far below the leading one are treated as zero.
const EIGENVALUE_RELATIVE_FLOOR: f64 = 1e-12;

/// Leading eigenpairs of a covariance surface under trapezoidal quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenbasis {
    pub grid: EvaluationGrid,
    /// `K` rows, each an eigenfunction on the grid with unit L2 norm.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Sum of all positive eigenvalues, retained or not.
    pub total_positive: f64,
}

impl Eigenbasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Discretised eigenproblem `∫ C(s,t) φ(t) dt = λ φ(s)` with trapezoidal
/// weights `w`: diagonalise `W^½ C W^½` and map eigenvectors back by `W^-½`.
///
/// Components are kept until their cumulative sum reaches
/// `variance_threshold` of the positive total. Each eigenfunction is signed
/// so that its integral over the first half of the domain is non-negative.
pub fn eigendecompose(surface: &[f64], grid: &EvaluationGrid, variance_threshold: f64) -> Result<Eigenbasis> {
    let m = grid.len();
    if surface.len() != m * m {
        return Err(Error::ShapeMismatch(format!(
            "surface has {} entries, grid has {m} points",
            surface.len()
        )));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must lie in (0, 1], got {variance_threshold}"
        )));
    }
    let w = grid.trapezoid_weights();
    let root_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let weighted = DMatrix::from_fn(m, m, |g, h| {
        let sym = 0.5 * (surface[g * m + h] + surface[h * m + g]);
        root_w[g] * sym * root_w[h]
    });
    let eig = SymmetricEigen::new(weighted);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let leading = eig.eigenvalues[order[0]];
    if !(leading > 0.0) {
        return Err(Error::NoPositiveEigenvalues);
    }
    let floor = leading * EIGENVALUE_RELATIVE_FLOOR;
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > floor)
        .collect();
    let total_positive: f64 = positive.iter().map(|&i| eig.eigenvalues[i]).sum();

    let target = variance_threshold * total_positive * (1.0 - 1e-12);
    let mut cumulative = 0.0;
    let mut k = 0;
    for &i in &positive {
        cumulative += eig.eigenvalues[i];
        k += 1;
        if cumulative >= target {
            break;
        }
    }

    let mid = 0.5 * (grid.lower() + grid.upper());
    let mut eigenfunctions = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &i in &positive[..k] {
        let v = eig.eigenvectors.column(i);
        let mut phi: Vec<f64> = (0..m).map(|g| v[g] / root_w[g]).collect();
        let first_half: f64 = grid
            .points()
            .iter()
            .zip(&phi)
            .zip(&w)
            .filter(|((s, _), _)| **s <= mid)
            .map(|((_, f), wg)| f * wg)
            .sum();
        if first_half < 0.0 {
            phi.iter_mut().for_each(|f| *f = -*f);
        }
        eigenfunctions.push(phi);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(Eigenbasis {
        grid: grid.clone(),
        eigenfunctions,
        eigenvalues,
        total_positive,
    })
}

/// The fitted decomposition `{mean, eigenfunctions, eigenvalues, sigma2, K}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcModel {
    pub grid: EvaluationGrid,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub sigma2: f64,
    pub k: usize,
    pub variance_threshold: f64,
}

impl FpcModel {
    pub fn from_estimates(
        mean: &MeanEstimate,
        covariance: &CovarianceEstimate,
        variance_threshold: f64,
    ) -> Result<Self> {
        if mean.grid != covariance.grid {
            return Err(Error::ShapeMismatch(
                "mean and covariance are on different grids".into(),
            ));
        }
        let basis = eigendecompose(&covariance.smoothed_surface, &covariance.grid, variance_threshold)?;
        Self::new(mean.values.clone(), basis, covariance.sigma2_hat, variance_threshold)
    }

    pub fn new(mean: Vec<f64>, basis: Eigenbasis, sigma2: f64, variance_threshold: f64) -> Result<Self> {
        if mean.len() != basis.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean has {} values, grid has {}",
                mean.len(),
                basis.grid.len()
            )));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        Ok(Self {
            k: basis.k(),
            grid: basis.grid,
            mean,
            eigenfunctions: basis.eigenfunctions,
            eigenvalues: basis.eigenvalues,
            sigma2,
            variance_threshold,
        })
    }

    /// `J x K` matrix of eigenfunctions interpolated at `points`.
    fn basis_at(&self, points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.k, |j, k| {
            self.grid.interpolate(&self.eigenfunctions[k], points[j])
        })
    }

    /// `(Φ'Φ + σ² Λ⁻¹)⁻¹ Φ' (y - μ)` at the subject's observation points.
    pub fn blup_scores(&self, subject: &Subject) -> Result<Vec<f64>> {
        let singular = |reason: &str| Error::SingularSystem {
            subject: subject.id.clone(),
            reason: reason.to_string(),
        };
        if subject.points.is_empty() {
            return Err(singular("no observations"));
        }
        if self.sigma2 == 0.0 && subject.points.len() < self.k {
            return Err(singular(&format!(
                "noise variance is zero and only {} observations for {} components",
                subject.points.len(),
                self.k
            )));
        }
        let phi = self.basis_at(&subject.points);
        let residual = DVector::from_iterator(
            subject.points.len(),
            subject
                .points
                .iter()
                .zip(&subject.values)
                .map(|(&s, &y)| y - self.grid.interpolate(&self.mean, s)),
        );
        let mut system = phi.transpose() * &phi;
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            system[(k, k)] += self.sigma2 / lambda;
        }
        let rhs = phi.transpose() * residual;
        let chol = system
            .cholesky()
            .ok_or_else(|| singular("score system is not positive definite"))?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// `μ + Φ ξ` on the model grid.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} components",
                scores.len(),
                self.k
            )));
        }
        let mut out = self.mean.clone();
        for (phi, xi) in self.eigenfunctions.iter().zip(scores) {
            for (o, f) in out.iter_mut().zip(phi) {
                *o += xi * f;
            }
        }
        Ok(out)
    }

    /// Diagonal of `Φ_g (Φ_i'Φ_i / σ² + Λ⁻¹)⁻¹ Φ_g'`: the pointwise variance of
    /// the reconstruction error given this decomposition.
    pub fn conditional_variance(&self, points: &[f64]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "conditional variance needs at least one observation".into(),
            ));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument(
                "conditional variance requires a positive noise variance".into(),
            ));
        }
        let phi = self.basis_at(points);
        let mut inner = phi.transpose() * &phi / self.sigma2;
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            inner[(k, k)] += 1.0 / lambda;
        }
        let cov = inner
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("conditional covariance is singular".into()))?
            .inverse();
        let m = self.grid.len();
        let mut var = vec![0.0; m];
        let mut f = vec![0.0; self.k];
        for (g, v) in var.iter_mut().enumerate() {
            for (k, fk) in f.iter_mut().enumerate() {
                *fk = self.eigenfunctions[k][g];
            }
            let mut acc = 0.0;
            for a in 0..self.k {
                let mut row = 0.0;
                for b in 0..self.k {
                    row += cov[(a, b)] * f[b];
                }
                acc += f[a] * row;
            }
            *v = acc.max(0.0);
        }
        Ok(var)
    }

    /// Single-fit reconstruction with its pointwise interval.
    pub fn reconstruction(&self, subject: &Subject, alpha: f64) -> Result<CurveReconstruction> {
        let scores = self.blup_scores(subject)?;
        let estimate = self.reconstruct(&scores)?;
        let variance_diag = self.conditional_variance(&subject.points)?;
        CurveReconstruction::new(self.grid.clone(), estimate, variance_diag, alpha)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `Φ⁻¹(1 - α/2)`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(1.0 - alpha / 2.0))
}

/// `estimate ∓ Φ⁻¹(1 - α/2) √variance`.
pub fn pointwise_ci(estimate: &[f64], variance_diag: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if estimate.len() != variance_diag.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates, {} variances",
            estimate.len(),
            variance_diag.len()
        )));
    }
    if let Some(v) = variance_diag.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative variance {v}")));
    }
    let z = normal_quantile(alpha)?;
    Ok(estimate
        .iter()
        .zip(variance_diag)
        .map(|(e, v)| {
            let half = z * v.sqrt();
            (e - half, e + half)
        })
        .unzip())
}

/// A curve estimate on a grid with its pointwise `100(1-α)%` interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveReconstruction {
    pub grid: EvaluationGrid,
    pub estimate: Vec<f64>,
    pub variance_diag: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
}

impl CurveReconstruction {
    pub fn new(grid: EvaluationGrid, estimate: Vec<f64>, variance_diag: Vec<f64>, alpha: f64) -> Result<Self> {
        if estimate.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} estimates on a grid of {}",
                estimate.len(),
                grid.len()
            )));
        }
        let (lower, upper) = pointwise_ci(&estimate, &variance_diag, alpha)?;
        Ok(Self {
            grid,
            estimate,
            variance_diag,
            lower,
            upper,
            alpha,
        })
    }

    /// Clamps estimate and both bounds at zero.
    pub fn clamp_nonnegative(&mut self) {
        for v in self
            .estimate
            .iter_mut()
            .chain(self.lower.iter_mut())
            .chain(self.upper.iter_mut())
        {
            *v = v.max(0.0);
        }
    }

    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }
}
