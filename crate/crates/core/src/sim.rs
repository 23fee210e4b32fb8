//! Simulation models and sparsification schemes.
//!
//! Curves are `Y_i = mu + sum_k xi_ik phi_k` on an equidistant grid with four
//! Fourier eigenfunctions; the observed curves add i.i.d. Gaussian noise.
//! Sparsification keeps a random subset of grid points per subject.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DenseCurveMatrix, EvaluationGrid, SparseFunctionalDataset, Subject};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, stream_rng};

pub const DEFAULT_GRID_POINTS: usize = 75;
pub const NUM_COMPONENTS: usize = 4;

const SCORE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ModelId {
    /// Quadratically decaying eigenvalues, Gaussian scores, noise variance 0.01.
    M1,
    /// As `M1` with bimodal mixture scores.
    M2,
    /// Eigenvalues `1/(k+1)`.
    M3,
    /// As `M1` with noise variance 0.02.
    M4,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4];

    pub fn number(self) -> u8 {
        match self {
            ModelId::M1 => 1,
            ModelId::M2 => 2,
            ModelId::M3 => 3,
            ModelId::M4 => 4,
        }
    }

    /// `lambda_k` for `k = 1..=4`.
    pub fn eigenvalues(self) -> [f64; NUM_COMPONENTS] {
        let mut out = [0.0; NUM_COMPONENTS];
        for (k, v) in out.iter_mut().enumerate() {
            let d = (k + 2) as f64;
            *v = match self {
                ModelId::M3 => 1.0 / d,
                _ => 1.0 / (d * d),
            };
        }
        out
    }

    pub fn noise_variance(self) -> f64 {
        match self {
            ModelId::M4 => 0.02,
            _ => 0.01,
        }
    }
}

impl TryFrom<u8> for ModelId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelId::M1),
            2 => Ok(ModelId::M2),
            3 => Ok(ModelId::M3),
            4 => Ok(ModelId::M4),
            _ => Err(Error::InvalidArgument(format!("model must be 1..=4, got {v}"))),
        }
    }
}

impl From<ModelId> for u8 {
    fn from(m: ModelId) -> u8 {
        m.number()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

pub fn mean_function(s: f64) -> f64 {
    1.5 * (3.0 * PI * (s + 0.5)).sin() + 2.0 * s.powi(3)
}

/// `phi_k(s)` for `k = 1..=4`.
pub fn eigenfunction(k: usize, s: f64) -> f64 {
    match k {
        1 => SQRT_2 * (2.0 * PI * s).cos(),
        2 => SQRT_2 * (2.0 * PI * s).sin(),
        3 => SQRT_2 * (4.0 * PI * s).cos(),
        4 => SQRT_2 * (4.0 * PI * s).sin(),
        _ => panic!("eigenfunction index {k} out of range 1..=4"),
    }
}

/// True covariance `Sigma(s, t) = sum_k lambda_k phi_k(s) phi_k(t)`.
pub fn covariance_function(model: ModelId, s: f64, t: f64) -> f64 {
    model
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, l)| l * eigenfunction(k + 1, s) * eigenfunction(k + 1, t))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelId,
    pub n: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(model: ModelId, n: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            grid_points: DEFAULT_GRID_POINTS,
            seed,
        }
    }

    pub fn grid(&self) -> Result<EvaluationGrid> {
        EvaluationGrid::equidistant(0.0, 1.0, self.grid_points)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub truth: DenseCurveMatrix,
    pub noisy: DenseCurveMatrix,
    /// `n x 4` scores, row-major.
    pub scores: Vec<[f64; NUM_COMPONENTS]>,
}

/// Draws one score per component.
pub fn draw_scores(model: ModelId, rng: &mut ChaCha8Rng) -> [f64; NUM_COMPONENTS] {
    let lambdas = model.eigenvalues();
    let mut out = [0.0; NUM_COMPONENTS];
    for (k, xi) in out.iter_mut().enumerate() {
        let l = lambdas[k];
        *xi = match model {
            ModelId::M2 => {
                let shift = (l / 2.0).sqrt();
                let centre = if rng.random_bool(0.5) { shift } else { -shift };
                centre + (l / 2.0).sqrt() * standard_normal(rng)
            }
            _ => l.sqrt() * standard_normal(rng),
        };
    }
    out
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Scores and noise use separate streams of `spec.seed`, so changing the
/// noise level leaves the scores unchanged.
pub fn generate(spec: &ModelSpec) -> Result<GeneratedSample> {
    if spec.n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 subjects, got {}", spec.n)));
    }
    let grid = spec.grid()?;
    let m = grid.len();
    let mu: Vec<f64> = grid.points().iter().map(|&s| mean_function(s)).collect();
    let phi: Vec<Vec<f64>> = (1..=NUM_COMPONENTS)
        .map(|k| grid.points().iter().map(|&s| eigenfunction(k, s)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.model.noise_variance().sqrt()).expect("positive sd");

    let mut score_rng = stream_rng(spec.seed, SCORE_STREAM);
    let mut noise_rng = stream_rng(spec.seed, NOISE_STREAM);
    let mut truth = Vec::with_capacity(spec.n * m);
    let mut noisy = Vec::with_capacity(spec.n * m);
    let mut scores = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let xi = draw_scores(spec.model, &mut score_rng);
        for g in 0..m {
            let y = mu[g] + (0..NUM_COMPONENTS).map(|k| xi[k] * phi[k][g]).sum::<f64>();
            truth.push(y);
            noisy.push(y + noise.sample(&mut noise_rng));
        }
        scores.push(xi);
    }
    Ok(GeneratedSample {
        truth: DenseCurveMatrix::new(grid.clone(), truth)?,
        noisy: DenseCurveMatrix::new(grid, noisy)?,
        scores,
    })
}

/// How many points each subject keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityScheme {
    /// Uniform on `{floor(n/8), ..., floor(3n/8)}`.
    Setting1,
    /// `n/4` or uniform on `{2..5}`, each with probability one half.
    Setting2,
    /// `n/4` with probability `n^(-1/4)`, otherwise uniform on `{2..5}`.
    Setting3,
    /// Uniform on `{2..5}`.
    Setting4,
    /// Exactly 5.
    #[serde(rename = "j5")]
    FixedJ5,
    /// Uniform on `{2..5}`.
    J2to5,
    /// Exactly 2.
    #[serde(rename = "j2")]
    FixedJ2,
}

impl SparsityScheme {
    pub const SETTINGS: [SparsityScheme; 4] = [
        SparsityScheme::Setting1,
        SparsityScheme::Setting2,
        SparsityScheme::Setting3,
        SparsityScheme::Setting4,
    ];
    pub const PROTOCOLS: [SparsityScheme; 3] = [SparsityScheme::FixedJ5, SparsityScheme::J2to5, SparsityScheme::FixedJ2];

    pub fn setting(id: u8) -> Result<Self> {
        match id {
            1 => Ok(SparsityScheme::Setting1),
            2 => Ok(SparsityScheme::Setting2),
            3 => Ok(SparsityScheme::Setting3),
            4 => Ok(SparsityScheme::Setting4),
            _ => Err(Error::InvalidArgument(format!("setting must be 1..=4, got {id}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SparsityScheme::Setting1 => "setting1",
            SparsityScheme::Setting2 => "setting2",
            SparsityScheme::Setting3 => "setting3",
            SparsityScheme::Setting4 => "setting4",
            SparsityScheme::FixedJ5 => "j5",
            SparsityScheme::J2to5 => "j2to5",
            SparsityScheme::FixedJ2 => "j2",
        }
    }

    /// Largest count the scheme can draw for a sample of `n` subjects.
    pub fn max_count(self, n: usize) -> usize {
        match self {
            SparsityScheme::Setting1 => 3 * n / 8,
            SparsityScheme::Setting2 | SparsityScheme::Setting3 => quarter(n).max(5),
            _ => 5,
        }
    }

    /// Draws one subject's number of retained points.
    pub fn draw_count<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> usize {
        match self {
            SparsityScheme::Setting1 => rng.random_range(n / 8..=3 * n / 8),
            SparsityScheme::Setting2 => {
                if rng.random_bool(0.5) {
                    quarter(n)
                } else {
                    rng.random_range(2..=5)
                }
            }
            SparsityScheme::Setting3 => {
                if rng.random_bool((n as f64).powf(-0.25).min(1.0)) {
                    quarter(n)
                } else {
                    rng.random_range(2..=5)
                }
            }
            SparsityScheme::Setting4 | SparsityScheme::J2to5 => rng.random_range(2..=5),
            SparsityScheme::FixedJ5 => 5,
            SparsityScheme::FixedJ2 => 2,
        }
    }
}

impl fmt::Display for SparsityScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SparsityScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = Self::SETTINGS.iter().chain(Self::PROTOCOLS.iter());
        all.copied()
            .find(|scheme| scheme.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sparsity scheme '{s}'")))
    }
}

/// `n/4` rounded to the nearest integer (halves away from zero).
fn quarter(n: usize) -> usize {
    (n as f64 / 4.0).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsitySpec {
    pub scheme: SparsityScheme,
    pub seed: u64,
}

/// Keeps a random subset of each curve's grid points. Subject ids are the
/// 1-based row numbers.
pub fn sparsify(curves: &DenseCurveMatrix, spec: &SparsitySpec) -> Result<SparseFunctionalDataset> {
    let ids: Vec<String> = (1..=curves.nrows()).map(|i| i.to_string()).collect();
    sparsify_with_ids(curves, &ids, spec)
}

pub fn sparsify_with_ids(curves: &DenseCurveMatrix, ids: &[String], spec: &SparsitySpec) -> Result<SparseFunctionalDataset> {
    let n = curves.nrows();
    let m = curves.ncols();
    if ids.len() != n {
        return Err(Error::ShapeMismatch(format!("{} ids for {n} curves", ids.len())));
    }
    let mut rng = stream_rng(derive_seed(spec.seed, 0x5ba5), 0);
    let grid = curves.grid().points();
    let mut subjects = Vec::with_capacity(n);
    for (i, id) in ids.iter().enumerate() {
        let j = spec.scheme.draw_count(n, &mut rng);
        if j > m {
            return Err(Error::InvalidArgument(format!(
                "{} drew {j} points for subject {id} but the grid has only {m}",
                spec.scheme
            )));
        }
        let mut keep = sample(&mut rng, m, j).into_vec();
        keep.sort_unstable();
        let row = curves.row(i);
        subjects.push(Subject {
            id: id.clone(),
            points: keep.iter().map(|&g| grid[g]).collect(),
            values: keep.iter().map(|&g| row[g]).collect(),
        });
    }
    SparseFunctionalDataset::new(subjects, Some((curves.grid().lower(), curves.grid().upper())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_endpoints() {
        assert!((mean_function(0.0) + 1.5).abs() < 1e-12);
        assert!((mean_function(1.0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_per_model() {
        assert_eq!(ModelId::M1.eigenvalues(), [0.25, 1.0 / 9.0, 1.0 / 16.0, 1.0 / 25.0]);
        assert_eq!(ModelId::M3.eigenvalues(), [0.5, 1.0 / 3.0, 0.25, 0.2]);
        assert_eq!(ModelId::M4.noise_variance(), 0.02);
    }

    #[test]
    fn generation_is_deterministic_and_noise_is_separate() {
        let a = generate(&ModelSpec::new(ModelId::M1, 5, 9)).unwrap();
        let b = generate(&ModelSpec::new(ModelId::M1, 5, 9)).unwrap();
        let c = generate(&ModelSpec::new(ModelId::M4, 5, 9)).unwrap();
        assert_eq!(a.noisy.as_slice(), b.noisy.as_slice());
        assert_eq!(a.scores, c.scores);
        assert_eq!(a.truth.as_slice(), c.truth.as_slice());
        assert_ne!(a.noisy.as_slice(), c.noisy.as_slice());
    }

    #[test]
    fn sparsified_values_are_exact_copies() {
        let sample = generate(&ModelSpec::new(ModelId::M1, 20, 1)).unwrap();
        let spec = SparsitySpec {
            scheme: SparsityScheme::Setting4,
            seed: 3,
        };
        let ds = sparsify(&sample.noisy, &spec).unwrap();
        let grid = sample.noisy.grid();
        for (i, subj) in ds.subjects().iter().enumerate() {
            assert!((2..=5).contains(&subj.num_observations()));
            for (s, v) in subj.points.iter().zip(&subj.values) {
                let g = grid.points().iter().position(|p| p == s).unwrap();
                assert_eq!(*v, sample.noisy.get(i, g));
            }
        }
    }

    #[test]
    fn too_many_points_is_an_error() {
        let grid = EvaluationGrid::equidistant(0.0, 1.0, 4).unwrap();
        let curves = DenseCurveMatrix::from_rows(grid, &vec![vec![0.0; 4]; 3]).unwrap();
        let spec = SparsitySpec {
            scheme: SparsityScheme::FixedJ5,
            seed: 0,
        };
        assert!(sparsify(&curves, &spec).is_err());
    }

    #[test]
    fn quarter_rounds() {
        assert_eq!(quarter(200), 50);
        assert_eq!(quarter(102), 26);
        assert_eq!(quarter(101), 25);
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in SparsityScheme::SETTINGS.iter().chain(&SparsityScheme::PROTOCOLS) {
            assert_eq!(s.label().parse::<SparsityScheme>().unwrap(), *s);
        }
    }
}
