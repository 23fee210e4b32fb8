//! Iterated expectation and variance: bootstrap-corrected reconstructions.
//!
//! Each bootstrap replicate resamples subjects with replacement, refits the
//! whole smoothing + FPCA pipeline, and predicts every subject of the
//! original data under that fit. Estimates are averaged over replicates; the
//! total variance adds the spread of the replicate estimates to the mean
//! within-fit variance.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DenseCurveMatrix, EvaluationGrid, SparseFunctionalDataset, Subject};
use crate::error::{Error, Result};
use crate::fpca::{normal_quantile, CurveReconstruction, FpcModel, DEFAULT_VARIANCE_THRESHOLD};
use crate::seeding::{derive_seed, stream_rng};
use crate::smoothing::{estimate_mean, estimate_raw_covariance, smooth_covariance, SmoothingConfig, SmoothingParameter};

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP: usize = 100;

/// Refit attempts per replicate after the first failure.
pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub smoothing: SmoothingConfig,
    pub variance_threshold: f64,
    /// Lower bound for the noise variance as a fraction of the average
    /// pointwise variance of the retained components. A near-zero estimate
    /// makes the scores of subjects with fewer points than components
    /// interpolate their noise.
    pub relative_sigma2_floor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            relative_sigma2_floor: 0.01,
        }
    }
}

/// Mean, covariance, noise variance and eigendecomposition for one dataset.
pub fn fit_model(dataset: &SparseFunctionalDataset, grid: &EvaluationGrid, config: &PipelineConfig) -> Result<FpcModel> {
    fit_model_with_smoothing(dataset, grid, config).map(|r| r.0)
}

/// As [`fit_model`], also returning the smoothing configuration with every
/// smoothing parameter fixed at the value the fit used.
pub fn fit_model_with_smoothing(
    dataset: &SparseFunctionalDataset,
    grid: &EvaluationGrid,
    config: &PipelineConfig,
) -> Result<(FpcModel, SmoothingConfig)> {
    let s = &config.smoothing;
    let mean = estimate_mean(dataset, grid, s.mean_basis, s.mean_smoothing)?;
    let raw = estimate_raw_covariance(dataset, &mean);
    let cov = smooth_covariance(&raw, grid, s)?;
    let mut model = FpcModel::from_estimates(&mean, &cov, config.variance_threshold)?;
    let floor = config.relative_sigma2_floor * model.eigenvalues.iter().sum::<f64>() / (grid.upper() - grid.lower());
    model.sigma2 = model.sigma2.max(floor);
    let used = SmoothingConfig {
        mean_smoothing: SmoothingParameter::Fixed(mean.lambda()),
        covariance_smoothing: SmoothingParameter::Fixed(cov.lambda),
        diagonal_smoothing: SmoothingParameter::Fixed(cov.diagonal_lambda),
        ..*s
    };
    Ok((model, used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IevConfig {
    pub bootstrap: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub clamp_nonnegative: bool,
    pub pipeline: PipelineConfig,
    /// Reselect smoothing parameters on every resample instead of reusing
    /// those chosen on the original data. Resamples repeat subjects, and
    /// GCV reads the repeats as noise-free replicates and undersmooths.
    #[serde(default)]
    pub reselect_smoothing: bool,
}

impl Default for IevConfig {
    fn default() -> Self {
        Self {
            bootstrap: DEFAULT_BOOTSTRAP,
            alphas: vec![0.05],
            seed: 0,
            clamp_nonnegative: false,
            pipeline: PipelineConfig::default(),
            reselect_smoothing: false,
        }
    }
}

/// The resample used by replicate `replicate` on attempt `attempt`.
pub fn bootstrap_resample(dataset: &SparseFunctionalDataset, seed: u64, replicate: usize, attempt: usize) -> SparseFunctionalDataset {
    let mut rng = stream_rng(derive_seed(seed, replicate as u64), attempt as u64);
    let n = dataset.len();
    let subjects: Vec<Subject> = (0..n)
        .map(|_| dataset.subjects()[rng.random_range(0..n)].clone())
        .collect();
    SparseFunctionalDataset::from_parts_unchecked(subjects, dataset.domain())
}

struct Draw {
    /// `n x G` row-major.
    estimates: Vec<f64>,
    variances: Vec<f64>,
    components: usize,
}

fn predict_all(model: &FpcModel, dataset: &SparseFunctionalDataset) -> Result<Draw> {
    let m = model.grid.len();
    let n = dataset.len();
    let mut estimates = Vec::with_capacity(n * m);
    let mut variances = Vec::with_capacity(n * m);
    for subject in dataset.subjects() {
        let scores = model.blup_scores(subject)?;
        estimates.extend(model.reconstruct(&scores)?);
        variances.extend(model.conditional_variance(&subject.points)?);
    }
    Ok(Draw {
        estimates,
        variances,
        components: model.k,
    })
}

fn run_replicate(
    dataset: &SparseFunctionalDataset,
    grid: &EvaluationGrid,
    config: &IevConfig,
    pipeline: &PipelineConfig,
    replicate: usize,
) -> Result<Draw> {
    let mut last_error = None;
    for attempt in 0..=MAX_RETRIES {
        let sample = bootstrap_resample(dataset, config.seed, replicate, attempt);
        match fit_model(&sample, grid, pipeline).and_then(|m| predict_all(&m, dataset)) {
            Ok(draw) => return Ok(draw),
            Err(e) => last_error = Some(e),
        }
    }
    Err(Error::BootstrapFailed {
        replicate,
        attempts: MAX_RETRIES + 1,
        last_error: last_error.map(|e| e.to_string()).unwrap_or_default(),
    })
}

/// Bootstrap-aggregated reconstructions for every subject of a dataset.
#[derive(Debug, Clone)]
pub struct IevFit {
    pub grid: EvaluationGrid,
    pub subject_ids: Vec<String>,
    pub observation_counts: Vec<usize>,
    /// Mean of the replicate reconstructions (unclamped).
    pub estimates: DenseCurveMatrix,
    /// Mean of the within-fit conditional variances.
    pub within_variance: DenseCurveMatrix,
    /// Sample variance (denominator `B - 1`) of the replicate reconstructions;
    /// zero when `B = 1`.
    pub between_variance: DenseCurveMatrix,
    pub total_variance: DenseCurveMatrix,
    /// Number of components retained by each replicate's fit.
    pub components: Vec<usize>,
    pub config: IevConfig,
}

pub fn iev_fit(dataset: &SparseFunctionalDataset, grid: &EvaluationGrid, config: &IevConfig) -> Result<IevFit> {
    if dataset.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "bootstrap needs at least 2 subjects, got {}",
            dataset.len()
        )));
    }
    if config.bootstrap == 0 {
        return Err(Error::InvalidArgument("bootstrap count must be at least 1".into()));
    }
    for &alpha in &config.alphas {
        normal_quantile(alpha)?;
    }

    let pipeline = if config.reselect_smoothing {
        config.pipeline
    } else {
        PipelineConfig {
            smoothing: fit_model_with_smoothing(dataset, grid, &config.pipeline)?.1,
            ..config.pipeline
        }
    };
    let draws: Vec<Draw> = (0..config.bootstrap)
        .into_par_iter()
        .map(|b| run_replicate(dataset, grid, config, &pipeline, b))
        .collect::<Result<_>>()?;

    let cells = dataset.len() * grid.len();
    let count = draws.len() as f64;
    let mut mean = vec![0.0; cells];
    let mut within = vec![0.0; cells];
    for draw in &draws {
        for c in 0..cells {
            mean[c] += draw.estimates[c];
            within[c] += draw.variances[c];
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    within.iter_mut().for_each(|v| *v /= count);
    let mut between = vec![0.0; cells];
    if draws.len() > 1 {
        for draw in &draws {
            for c in 0..cells {
                let d = draw.estimates[c] - mean[c];
                between[c] += d * d;
            }
        }
        between.iter_mut().for_each(|v| *v /= count - 1.0);
    }
    let total: Vec<f64> = within.iter().zip(&between).map(|(w, b)| w + b).collect();

    Ok(IevFit {
        grid: grid.clone(),
        subject_ids: dataset.subject_ids(),
        observation_counts: dataset.observation_counts(),
        estimates: DenseCurveMatrix::new(grid.clone(), mean)?,
        within_variance: DenseCurveMatrix::new(grid.clone(), within)?,
        between_variance: DenseCurveMatrix::new(grid.clone(), between)?,
        total_variance: DenseCurveMatrix::new(grid.clone(), total)?,
        components: draws.iter().map(|d| d.components).collect(),
        config: config.clone(),
    })
}

/// Estimates and interval bounds at one level, as dense matrices.
#[derive(Debug, Clone)]
pub struct IntervalBands {
    pub alpha: f64,
    pub estimates: DenseCurveMatrix,
    pub lower: DenseCurveMatrix,
    pub upper: DenseCurveMatrix,
}

impl IevFit {
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    /// Subject `i`'s reconstruction at level `alpha`, clamped if configured.
    pub fn reconstruction(&self, i: usize, alpha: f64) -> Result<CurveReconstruction> {
        let mut rec = CurveReconstruction::new(
            self.grid.clone(),
            self.estimates.row(i).to_vec(),
            self.total_variance.row(i).to_vec(),
            alpha,
        )?;
        if self.config.clamp_nonnegative {
            rec.clamp_nonnegative();
        }
        Ok(rec)
    }

    /// Point estimates used for depth, clamped if configured.
    pub fn point_estimates(&self) -> DenseCurveMatrix {
        if !self.config.clamp_nonnegative {
            return self.estimates.clone();
        }
        let clamped = self.estimates.as_slice().iter().map(|v| v.max(0.0)).collect();
        DenseCurveMatrix::new(self.grid.clone(), clamped).expect("same shape")
    }

    pub fn bands(&self, alpha: f64) -> Result<IntervalBands> {
        let z = normal_quantile(alpha)?;
        let clamp = self.config.clamp_nonnegative;
        let fix = |v: f64| if clamp { v.max(0.0) } else { v };
        let est = self.estimates.as_slice();
        let var = self.total_variance.as_slice();
        let lower = est.iter().zip(var).map(|(e, v)| fix(e - z * v.sqrt())).collect();
        let upper = est.iter().zip(var).map(|(e, v)| fix(e + z * v.sqrt())).collect();
        Ok(IntervalBands {
            alpha,
            estimates: self.point_estimates(),
            lower: DenseCurveMatrix::new(self.grid.clone(), lower)?,
            upper: DenseCurveMatrix::new(self.grid.clone(), upper)?,
        })
    }

    /// Long CSV `subject_id,s,estimate,variance,alpha,lower,upper` with one
    /// block per configured level.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["subject_id", "s", "estimate", "variance", "alpha", "lower", "upper"])?;
        for &alpha in &self.config.alphas {
            for i in 0..self.len() {
                let rec = self.reconstruction(i, alpha)?;
                for g in 0..self.grid.len() {
                    wtr.write_record([
                        self.subject_ids[i].clone(),
                        self.grid.points()[g].to_string(),
                        rec.estimate[g].to_string(),
                        rec.variance_diag[g].to_string(),
                        alpha.to_string(),
                        rec.lower[g].to_string(),
                        rec.upper[g].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}
