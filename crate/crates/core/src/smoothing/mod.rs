//! Mean and covariance estimation from pooled sparse observations.
//!
//! The mean is a penalized cubic regression spline fitted to every
//! `(s, value)` pair under working independence. Residual cross-products
//! `(s_ij, s_il)` with `j != l` feed a tensor-product penalized spline for the
//! covariance surface; the squared residuals on the diagonal are kept apart
//! because they also carry the measurement-error variance.

pub mod bspline;
pub mod pspline;

use crate::dataset::{EvaluationGrid, SparseFunctionalDataset};
use crate::error::{Error, Result};

use bspline::CubicBSplineBasis;
pub use pspline::{NormalEquations, PenalizedSolution, Penalty, SmoothingParameter};

/// Fewest off-diagonal raw covariance points accepted by [`smooth_covariance`].
pub const MIN_COVARIANCE_POINTS: usize = 10;

/// Fraction of the domain trimmed from each end when averaging the
/// diagonal gap for the noise variance.
const SIGMA2_TRIM: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothingConfig {
    pub mean_basis: usize,
    pub mean_smoothing: SmoothingParameter,
    /// Marginal basis size of the tensor-product covariance smoother.
    pub covariance_basis: usize,
    pub covariance_smoothing: SmoothingParameter,
    /// Basis size for the one-dimensional fit to the raw diagonal.
    pub diagonal_basis: usize,
    pub diagonal_smoothing: SmoothingParameter,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            mean_basis: 15,
            mean_smoothing: SmoothingParameter::Gcv,
            covariance_basis: 10,
            covariance_smoothing: SmoothingParameter::Gcv,
            diagonal_basis: 15,
            diagonal_smoothing: SmoothingParameter::Gcv,
        }
    }
}

/// A fitted one-dimensional penalized spline.
#[derive(Debug, Clone)]
pub struct SplineFit {
    basis: CubicBSplineBasis,
    coefficients: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

impl SplineFit {
    pub fn fit(
        domain: (f64, f64),
        basis_size: usize,
        smoothing: SmoothingParameter,
        points: impl Iterator<Item = (f64, f64)>,
    ) -> Result<Self> {
        let basis = CubicBSplineBasis::new(domain.0, domain.1, basis_size)?;
        let mut ne = NormalEquations::new(basis_size);
        for (s, y) in points {
            let (k, v) = basis.evaluate(s);
            ne.add(&[k, k + 1, k + 2, k + 3], &v, y);
        }
        if ne.count() < basis_size {
            return Err(Error::InvalidArgument(format!(
                "{} observations cannot support {basis_size} basis functions",
                ne.count()
            )));
        }
        let sol = ne.solve(&Penalty::second_difference(basis_size), smoothing)?;
        Ok(Self {
            basis,
            coefficients: sol.coefficients.iter().copied().collect(),
            lambda: sol.lambda,
            edf: sol.edf,
        })
    }

    pub fn at(&self, s: f64) -> f64 {
        let (k, v) = self.basis.evaluate(s);
        (0..4).map(|j| self.coefficients[k + j] * v[j]).sum()
    }
}

/// Smoothed mean on the evaluation grid.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub grid: EvaluationGrid,
    pub values: Vec<f64>,
    pub smoother_dof: f64,
    spline: SplineFit,
}

impl MeanEstimate {
    /// The fitted mean at an arbitrary point of the domain.
    pub fn at(&self, s: f64) -> f64 {
        self.spline.at(s)
    }

    pub fn lambda(&self) -> f64 {
        self.spline.lambda
    }
}

fn spline_domain(dataset: &SparseFunctionalDataset, grid: &EvaluationGrid) -> (f64, f64) {
    let (a, b) = dataset.domain();
    (a.min(grid.lower()), b.max(grid.upper()))
}

pub fn estimate_mean(
    dataset: &SparseFunctionalDataset,
    grid: &EvaluationGrid,
    basis_size: usize,
    smoothing: SmoothingParameter,
) -> Result<MeanEstimate> {
    if basis_size < 4 {
        return Err(Error::InvalidArgument(format!(
            "mean basis needs at least 4 functions, got {basis_size}"
        )));
    }
    let pooled = dataset
        .subjects()
        .iter()
        .flat_map(|s| s.points.iter().copied().zip(s.values.iter().copied()));
    let spline = SplineFit::fit(spline_domain(dataset, grid), basis_size, smoothing, pooled)?;
    let values = grid.points().iter().map(|&s| spline.at(s)).collect();
    Ok(MeanEstimate {
        grid: grid.clone(),
        values,
        smoother_dof: spline.edf,
        spline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCovariancePoint {
    pub s: f64,
    pub t: f64,
    pub value: f64,
}

/// Residual cross-products pooled over subjects.
#[derive(Debug, Clone, Default)]
pub struct RawCovariance {
    /// Ordered pairs `(s_ij, s_il)`, `j != l`.
    pub off_diagonal: Vec<RawCovariancePoint>,
    /// Squared residuals `(s_ij, r_ij^2)`.
    pub diagonal: Vec<(f64, f64)>,
    /// Domain spanned by the contributing observations.
    pub domain: (f64, f64),
}

pub fn estimate_raw_covariance(dataset: &SparseFunctionalDataset, mean: &MeanEstimate) -> RawCovariance {
    let off_count: usize = dataset
        .subjects()
        .iter()
        .map(|s| s.num_observations() * (s.num_observations() - 1))
        .sum();
    let mut raw = RawCovariance {
        off_diagonal: Vec::with_capacity(off_count),
        diagonal: Vec::with_capacity(dataset.total_observations()),
        domain: dataset.domain(),
    };
    let mut residuals = Vec::new();
    for subject in dataset.subjects() {
        residuals.clear();
        residuals.extend(
            subject
                .points
                .iter()
                .zip(&subject.values)
                .map(|(&s, &y)| y - mean.at(s)),
        );
        for (j, (&s, &rj)) in subject.points.iter().zip(&residuals).enumerate() {
            raw.diagonal.push((s, rj * rj));
            for (l, (&t, &rl)) in subject.points.iter().zip(&residuals).enumerate() {
                if l != j {
                    raw.off_diagonal.push(RawCovariancePoint { s, t, value: rj * rl });
                }
            }
        }
    }
    raw
}

/// Smoothed covariance surface and noise variance on a grid.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub grid: EvaluationGrid,
    /// Cell averages of raw products (diagonal included) at the nearest grid
    /// points, row-major `G x G`; `NaN` where no raw point falls.
    pub raw_surface: Vec<f64>,
    /// Symmetrized smoother output, row-major `G x G`.
    pub smoothed_surface: Vec<f64>,
    pub sigma2_hat: f64,
    pub lambda: f64,
    pub edf: f64,
    /// Smoothing parameter of the raw-diagonal fit used for `sigma2_hat`.
    pub diagonal_lambda: f64,
}

impl CovarianceEstimate {
    pub fn smoothed(&self, g: usize, h: usize) -> f64 {
        self.smoothed_surface[g * self.grid.len() + h]
    }
}

fn nearest_index(grid: &EvaluationGrid, s: f64) -> usize {
    let (g, t) = grid.locate(s);
    if t > 0.5 {
        g + 1
    } else {
        g
    }
}

fn raw_cell_means(raw: &RawCovariance, grid: &EvaluationGrid) -> Vec<f64> {
    let m = grid.len();
    let mut sum = vec![0.0; m * m];
    let mut count = vec![0usize; m * m];
    for p in &raw.off_diagonal {
        let idx = nearest_index(grid, p.s) * m + nearest_index(grid, p.t);
        sum[idx] += p.value;
        count[idx] += 1;
    }
    for &(s, v) in &raw.diagonal {
        let g = nearest_index(grid, s);
        sum[g * m + g] += v;
        count[g * m + g] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

/// Fits the tensor-product smoother to the off-diagonal raw points, evaluates
/// it on `grid x grid`, symmetrizes, and estimates the noise variance.
pub fn smooth_covariance(
    raw: &RawCovariance,
    grid: &EvaluationGrid,
    config: &SmoothingConfig,
) -> Result<CovarianceEstimate> {
    if raw.off_diagonal.len() < MIN_COVARIANCE_POINTS {
        return Err(Error::TooFewCovariancePoints {
            found: raw.off_diagonal.len(),
            required: MIN_COVARIANCE_POINTS,
        });
    }
    let q = config.covariance_basis;
    let domain = (raw.domain.0.min(grid.lower()), raw.domain.1.max(grid.upper()));
    let basis = CubicBSplineBasis::new(domain.0, domain.1, q)?;
    let mut ne = NormalEquations::new(q * q);
    let mut idx = [0usize; 16];
    let mut val = [0f64; 16];
    for p in &raw.off_diagonal {
        let (ks, vs) = basis.evaluate(p.s);
        let (kt, vt) = basis.evaluate(p.t);
        for a in 0..4 {
            for b in 0..4 {
                idx[a * 4 + b] = (ks + a) * q + kt + b;
                val[a * 4 + b] = vs[a] * vt[b];
            }
        }
        ne.add(&idx, &val, p.value);
    }
    let sol = ne.solve(&Penalty::tensor(q), config.covariance_smoothing)?;

    let m = grid.len();
    let design = basis.design(grid.points());
    let coef = nalgebra::DMatrix::from_row_slice(q, q, sol.coefficients.as_slice());
    let surface = &design * coef * design.transpose();
    let mut smoothed_surface = vec![0.0; m * m];
    for g in 0..m {
        for h in 0..m {
            smoothed_surface[g * m + h] = 0.5 * (surface[(g, h)] + surface[(h, g)]);
        }
    }

    let (sigma2_hat, diagonal_lambda) = sigma2_and_lambda(
        &raw.diagonal,
        &smoothed_surface,
        grid,
        domain,
        config.diagonal_basis,
        config.diagonal_smoothing,
    )?;

    Ok(CovarianceEstimate {
        grid: grid.clone(),
        raw_surface: raw_cell_means(raw, grid),
        smoothed_surface,
        sigma2_hat,
        lambda: sol.lambda,
        edf: sol.edf,
        diagonal_lambda,
    })
}

/// Noise variance: the mean gap between a smooth of the raw diagonal and the
/// smoothed surface's diagonal, over grid points in the middle 60% of the
/// domain, floored at zero.
pub fn estimate_sigma2(
    raw_diagonal: &[(f64, f64)],
    smoothed_surface: &[f64],
    grid: &EvaluationGrid,
    domain: (f64, f64),
    basis_size: usize,
    smoothing: SmoothingParameter,
) -> Result<f64> {
    sigma2_and_lambda(raw_diagonal, smoothed_surface, grid, domain, basis_size, smoothing).map(|r| r.0)
}

fn sigma2_and_lambda(
    raw_diagonal: &[(f64, f64)],
    smoothed_surface: &[f64],
    grid: &EvaluationGrid,
    domain: (f64, f64),
    basis_size: usize,
    smoothing: SmoothingParameter,
) -> Result<(f64, f64)> {
    let m = grid.len();
    if smoothed_surface.len() != m * m {
        return Err(Error::ShapeMismatch(format!(
            "surface has {} entries for a grid of {m}",
            smoothed_surface.len()
        )));
    }
    let diag_fit = SplineFit::fit(domain, basis_size, smoothing, raw_diagonal.iter().copied())?;
    let (a, b) = (grid.lower(), grid.upper());
    let lo = a + SIGMA2_TRIM * (b - a);
    let hi = b - SIGMA2_TRIM * (b - a);
    let gaps: Vec<f64> = grid
        .points()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo - 1e-12 && s <= hi + 1e-12)
        .map(|(g, &s)| diag_fit.at(s) - smoothed_surface[g * m + g])
        .collect();
    if gaps.is_empty() {
        return Err(Error::InvalidGrid(
            "no grid points in the middle of the domain".into(),
        ));
    }
    let sigma2 = (gaps.iter().sum::<f64>() / gaps.len() as f64).max(0.0);
    Ok((sigma2, diag_fit.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Subject;

    fn dataset_from(rows: Vec<(Vec<f64>, Vec<f64>)>) -> SparseFunctionalDataset {
        let subjects = rows
            .into_iter()
            .enumerate()
            .map(|(i, (points, values))| Subject {
                id: i.to_string(),
                points,
                values,
            })
            .collect();
        SparseFunctionalDataset::new(subjects, Some((0.0, 1.0))).unwrap()
    }

    fn grid(m: usize) -> EvaluationGrid {
        EvaluationGrid::equidistant(0.0, 1.0, m).unwrap()
    }

    #[test]
    fn mean_reproduces_constant() {
        let rows = (0..20)
            .map(|i| {
                let pts: Vec<f64> = (0..4).map(|j| ((i * 4 + j) as f64 * 0.0123).fract()).collect();
                let mut pts = pts;
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                let vals = vec![2.5; pts.len()];
                (pts, vals)
            })
            .collect();
        let mean = estimate_mean(&dataset_from(rows), &grid(31), 15, SmoothingParameter::Gcv).unwrap();
        for v in &mean.values {
            assert!((v - 2.5).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn mean_reproduces_line() {
        let g = grid(21);
        let rows = (0..5)
            .map(|_| (g.points().to_vec(), g.points().iter().map(|s| 2.0 * s).collect()))
            .collect();
        let mean = estimate_mean(&dataset_from(rows), &g, 15, SmoothingParameter::Gcv).unwrap();
        for (s, v) in g.points().iter().zip(&mean.values) {
            assert!((v - 2.0 * s).abs() < 1e-6);
        }
    }

    #[test]
    fn basis_below_four_is_rejected() {
        let g = grid(5);
        let rows = vec![(g.points().to_vec(), vec![1.0; 5])];
        assert!(estimate_mean(&dataset_from(rows), &g, 3, SmoothingParameter::Gcv).is_err());
    }

    #[test]
    fn raw_products_vanish_for_zero_residuals() {
        let g = grid(11);
        let rows = vec![(vec![0.1, 0.4, 0.8], vec![1.0, 1.0, 1.0]); 6];
        let ds = dataset_from(rows);
        let mean = estimate_mean(&ds, &g, 6, SmoothingParameter::Gcv).unwrap();
        let raw = estimate_raw_covariance(&ds, &mean);
        assert!(raw.off_diagonal.iter().all(|p| p.value.abs() < 1e-12));
        assert!(raw.diagonal.iter().all(|d| d.1.abs() < 1e-12));
    }

    #[test]
    fn raw_products_match_hand_computation() {
        // the mean of {1,2,3} and {3,2,1} pointwise is 2 everywhere, so residuals
        // are (-1,0,1) and (1,0,-1); a constant fit recovers it exactly
        let g = grid(3);
        let rows = vec![
            (g.points().to_vec(), vec![1.0, 2.0, 3.0]),
            (g.points().to_vec(), vec![3.0, 2.0, 1.0]),
        ];
        let ds = dataset_from(rows);
        let mean = estimate_mean(&ds, &g, 4, SmoothingParameter::Fixed(1e8)).unwrap();
        for v in &mean.values {
            assert!((v - 2.0).abs() < 1e-6);
        }
        let raw = estimate_raw_covariance(&ds, &mean);
        assert_eq!(raw.off_diagonal.len(), 12);
        let find = |subject: usize, s: f64, t: f64| {
            raw.off_diagonal[subject * 6..(subject + 1) * 6]
                .iter()
                .find(|p| p.s == s && p.t == t)
                .unwrap()
                .value
        };
        assert!((find(0, 0.0, 1.0) - (-1.0)).abs() < 1e-6);
        assert!((find(0, 0.0, 0.5)).abs() < 1e-6);
        assert!((find(1, 1.0, 0.0) - (-1.0)).abs() < 1e-6);
        assert!((find(1, 0.5, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn single_observation_subjects_add_no_off_diagonal_points() {
        let g = grid(11);
        let mut rows: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
            .map(|i| (vec![i as f64 / 8.0], vec![i as f64]))
            .collect();
        rows.push((vec![0.2, 0.6], vec![1.0, 2.0]));
        let ds = dataset_from(rows);
        let mean = estimate_mean(&ds, &g, 4, SmoothingParameter::Gcv).unwrap();
        let raw = estimate_raw_covariance(&ds, &mean);
        assert_eq!(raw.off_diagonal.len(), 2);
        assert_eq!(raw.diagonal.len(), 10);
    }

    #[test]
    fn constant_surface_is_reproduced() {
        let g = grid(21);
        let c = 0.7;
        let mut raw = RawCovariance {
            domain: (0.0, 1.0),
            ..Default::default()
        };
        for i in 0..21 {
            for j in 0..21 {
                if i != j {
                    raw.off_diagonal.push(RawCovariancePoint {
                        s: g.points()[i],
                        t: g.points()[j],
                        value: c,
                    });
                }
            }
            raw.diagonal.push((g.points()[i], c + 0.1));
        }
        let est = smooth_covariance(&raw, &g, &SmoothingConfig::default()).unwrap();
        for v in &est.smoothed_surface {
            assert!((v - c).abs() < 0.05 * c);
        }
        assert!((est.sigma2_hat - 0.1).abs() < 1e-6);
        let m = g.len();
        for a in 0..m {
            for b in 0..m {
                assert_eq!(est.smoothed(a, b), est.smoothed(b, a));
            }
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let raw = RawCovariance {
            off_diagonal: vec![RawCovariancePoint { s: 0.1, t: 0.2, value: 1.0 }; 9],
            diagonal: vec![],
            domain: (0.0, 1.0),
        };
        assert!(matches!(
            smooth_covariance(&raw, &grid(5), &SmoothingConfig::default()),
            Err(Error::TooFewCovariancePoints { found: 9, .. })
        ));
    }

    #[test]
    fn negative_noise_estimate_is_floored() {
        let g = grid(11);
        let surface = vec![1.0; 121];
        let diag: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 / 49.0, 0.5)).collect();
        let s2 = estimate_sigma2(&diag, &surface, &g, (0.0, 1.0), 8, SmoothingParameter::Gcv).unwrap();
        assert_eq!(s2, 0.0);
    }
}
