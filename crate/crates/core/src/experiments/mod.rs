//! Monte Carlo comparison of plain and uncertainty-aware depth.
//!
//! Every replicate produces a benchmark depth, fits the bootstrap pipeline to
//! a sparse version of the sample, and records the Spearman correlation of
//! the benchmark with plain depth (`rho0`) and, when a level is selected,
//! with the uncertainty-aware depth (`rho_u`).

mod output;

pub use output::{emit_outputs, read_report, render_scatter_svg, OutputFiles};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DenseCurveMatrix, EvaluationGrid, SparseFunctionalDataset};
use crate::depth::{alpha_grid, mbd_fast_weighted, select_alpha_star, spearman, DepthVector, GridWeighting, DEFAULT_RHO_THRESHOLD};
use crate::error::{Error, Result};
use crate::iev::{iev_fit, IevConfig, PipelineConfig};
use crate::seeding::derive_seed;
use crate::sim::{generate, sparsify_with_ids, ModelId, ModelSpec, SparsityScheme, SparsitySpec};

/// Fraction of failed replicates above which a cell is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

const GENERATION_STREAM: u64 = 0;
const SPARSIFY_STREAM: u64 = 1;
const BOOTSTRAP_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub n: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub rho_threshold: f64,
    pub clamp_nonnegative: bool,
    pub weighting: GridWeighting,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub reselect_smoothing: bool,
}

impl ExperimentConfig {
    /// 50 replicates of 100 subjects with 50 bootstrap draws.
    pub fn desk() -> Self {
        Self {
            replicates: 50,
            n: 100,
            bootstrap: 50,
            seed: 0,
            rho_threshold: DEFAULT_RHO_THRESHOLD,
            clamp_nonnegative: false,
            weighting: GridWeighting::Uniform,
            pipeline: PipelineConfig::default(),
            reselect_smoothing: false,
        }
    }

    /// 100 replicates of 200 subjects with 100 bootstrap draws.
    pub fn full_scale() -> Self {
        Self {
            replicates: 100,
            n: 200,
            bootstrap: 100,
            ..Self::desk()
        }
    }

    fn iev(&self, seed: u64) -> IevConfig {
        IevConfig {
            bootstrap: self.bootstrap,
            alphas: vec![0.05],
            seed,
            clamp_nonnegative: self.clamp_nonnegative,
            pipeline: self.pipeline,
            reselect_smoothing: self.reselect_smoothing,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    /// Absent for induced-sparsity runs on user data.
    pub model: Option<ModelId>,
    pub scheme: SparsityScheme,
    pub replicate: usize,
    pub rho0: f64,
    pub rho_u: Option<f64>,
    pub delta_rho_pct: Option<f64>,
    pub alpha_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model: Option<ModelId>,
    pub scheme: SparsityScheme,
    pub replicates: usize,
    pub completed: usize,
    pub alpha_star_found: usize,
    pub failures: Vec<FailureRecord>,
    pub median_rho0: Option<f64>,
    pub median_rho_u: Option<f64>,
    pub median_delta_rho_pct: Option<f64>,
    pub median_alpha_star: Option<f64>,
}

impl CellReport {
    pub fn label(&self) -> String {
        match self.model {
            Some(m) => format!("model{m}_{}", self.scheme),
            None => self.scheme.to_string(),
        }
    }

    fn from_records(model: Option<ModelId>, scheme: SparsityScheme, replicates: usize, records: &[ReplicateRecord], failures: Vec<FailureRecord>) -> Self {
        let present = |f: fn(&ReplicateRecord) -> Option<f64>| records.iter().filter_map(f).collect::<Vec<_>>();
        Self {
            model,
            scheme,
            replicates,
            completed: records.len(),
            alpha_star_found: records.iter().filter(|r| r.alpha_star.is_some()).count(),
            failures,
            median_rho0: median(&present(|r| Some(r.rho0))),
            median_rho_u: median(&present(|r| r.rho_u)),
            median_delta_rho_pct: median(&present(|r| r.delta_rho_pct)),
            median_alpha_star: median(&present(|r| r.alpha_star)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ReplicateRecord>,
    pub report: ExperimentReport,
}

/// Median of the values; the midpoint of the two central values for an even
/// count; `None` for no values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { (v[h - 1] + v[h]) / 2.0 })
}

/// Correlations of one sparse fit with a benchmark depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rho0: f64,
    pub rho_u: Option<f64>,
    pub alpha_star: Option<f64>,
    pub plain: DepthVector,
    pub selected: Option<DepthVector>,
}

impl Comparison {
    pub fn delta_rho_pct(&self) -> Option<f64> {
        self.rho_u.map(|u| (u - self.rho0) / self.rho0 * 100.0)
    }
}

/// Fits the bootstrap pipeline to `sparse`, ranks the reconstructions, and
/// compares both depths with `benchmark`.
pub fn compare_with_benchmark(
    benchmark: &DepthVector,
    sparse: &SparseFunctionalDataset,
    grid: &EvaluationGrid,
    iev: &IevConfig,
    rho_threshold: f64,
    weighting: GridWeighting,
) -> Result<Comparison> {
    let fit = iev_fit(sparse, grid, iev)?;
    let estimates = fit.point_estimates();
    let plain = mbd_fast_weighted(&estimates, weighting)?;
    let rho0 = spearman(&benchmark.values, &plain.values)?;
    let selection = select_alpha_star(&plain, &alpha_grid(), rho_threshold, weighting, |alpha| {
        let b = fit.bands(alpha)?;
        Ok((b.estimates, b.lower, b.upper))
    })?;
    let alpha_star = selection.alpha_star();
    let rho_u = match &selection.selected {
        Some(d) => Some(spearman(&benchmark.values, &d.values)?),
        None => None,
    };
    Ok(Comparison {
        rho0,
        rho_u,
        alpha_star,
        plain,
        selected: selection.selected,
    })
}

fn record(model: Option<ModelId>, scheme: SparsityScheme, replicate: usize, c: &Comparison) -> ReplicateRecord {
    ReplicateRecord {
        model,
        scheme,
        replicate,
        rho0: c.rho0,
        rho_u: c.rho_u,
        delta_rho_pct: c.delta_rho_pct(),
        alpha_star: c.alpha_star,
    }
}

fn scheme_stream(scheme: SparsityScheme) -> u64 {
    scheme as u64
}

/// One replicate of a simulation cell. The generated sample depends only on
/// `(seed, replicate)`, so all schemes of a replicate share it.
pub fn simulation_replicate(model: ModelId, scheme: SparsityScheme, replicate: usize, config: &ExperimentConfig) -> Result<ReplicateRecord> {
    let rep_seed = derive_seed(config.seed, replicate as u64);
    let spec = ModelSpec::new(model, config.n, derive_seed(rep_seed, GENERATION_STREAM));
    let sample = generate(&spec)?;
    let benchmark = mbd_fast_weighted(&sample.truth, config.weighting)?;
    let scheme_seed = derive_seed(rep_seed, 16 + scheme_stream(scheme));
    let ids: Vec<String> = (1..=config.n).map(|i| i.to_string()).collect();
    let sparse = sparsify_with_ids(
        &sample.noisy,
        &ids,
        &SparsitySpec {
            scheme,
            seed: derive_seed(scheme_seed, SPARSIFY_STREAM),
        },
    )?;
    let iev = config.iev(derive_seed(scheme_seed, BOOTSTRAP_STREAM));
    let c = compare_with_benchmark(&benchmark, &sparse, sample.truth.grid(), &iev, config.rho_threshold, config.weighting)?;
    Ok(record(Some(model), scheme, replicate, &c))
}

fn collect_cell(
    model: Option<ModelId>,
    scheme: SparsityScheme,
    replicates: usize,
    outcomes: Vec<Result<ReplicateRecord>>,
) -> Result<(Vec<ReplicateRecord>, CellReport)> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (replicate, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(FailureRecord {
                replicate,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: replicates,
            first_error: failures[0].message.clone(),
        });
    }
    let report = CellReport::from_records(model, scheme, replicates, &records, failures);
    Ok((records, report))
}

pub fn run_simulation_cell(model: ModelId, scheme: SparsityScheme, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_simulation(model, &[scheme], config)
}

/// Runs every scheme on the same generated samples. Replicates run in
/// parallel; records are ordered by scheme, then replicate.
pub fn run_simulation(model: ModelId, schemes: &[SparsityScheme], config: &ExperimentConfig) -> Result<ExperimentOutput> {
    if config.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    if schemes.is_empty() {
        return Err(Error::InvalidArgument("no sparsity schemes given".into()));
    }
    let tasks: Vec<(SparsityScheme, usize)> = schemes
        .iter()
        .flat_map(|&s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let mut outcomes: Vec<Result<ReplicateRecord>> = tasks
        .par_iter()
        .map(|&(scheme, r)| simulation_replicate(model, scheme, r, config))
        .collect();

    let mut records = Vec::new();
    let mut cells = Vec::new();
    for &scheme in schemes {
        let rest = outcomes.split_off(config.replicates);
        let (recs, cell) = collect_cell(Some(model), scheme, config.replicates, outcomes)?;
        outcomes = rest;
        records.extend(recs);
        cells.push(cell);
    }
    Ok(ExperimentOutput {
        records,
        report: ExperimentReport {
            cells,
            config: config.clone(),
        },
    })
}

/// Induces sparsity in densely observed data and compares both depths with
/// the depth of the dense observations. `config.n` is ignored.
pub fn run_induced_sparsity(dataset: &SparseFunctionalDataset, protocol: SparsityScheme, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    if config.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    let dense: DenseCurveMatrix = dataset.to_dense()?;
    let ids = dataset.subject_ids();
    let benchmark = mbd_fast_weighted(&dense, config.weighting)?;
    let outcomes: Vec<Result<ReplicateRecord>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(config.seed, r as u64);
            let scheme_seed = derive_seed(rep_seed, 16 + scheme_stream(protocol));
            let sparse = sparsify_with_ids(
                &dense,
                &ids,
                &SparsitySpec {
                    scheme: protocol,
                    seed: derive_seed(scheme_seed, SPARSIFY_STREAM),
                },
            )?;
            let iev = config.iev(derive_seed(scheme_seed, BOOTSTRAP_STREAM));
            let c = compare_with_benchmark(&benchmark, &sparse, dense.grid(), &iev, config.rho_threshold, config.weighting)?;
            Ok(record(None, protocol, r, &c))
        })
        .collect();
    let (records, cell) = collect_cell(None, protocol, config.replicates, outcomes)?;
    Ok(ExperimentOutput {
        records,
        report: ExperimentReport {
            cells: vec![cell],
            config: config.clone(),
        },
    })
}
