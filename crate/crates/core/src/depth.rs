//! Modified band depth, its uncertainty-aware variant, and the data-driven
//! choice of interval level.
//!
//! The fast path sorts the sample at every grid point. A curve with `a`
//! sample values strictly above and `b` strictly below it lies outside
//! exactly the `C(a,2) + C(b,2)` pairs that are entirely on one side, so it
//! is covered by `C(n,2) - C(a,2) - C(b,2)` pairs. Ties count as covered.

use serde::{Deserialize, Serialize};

use crate::dataset::DenseCurveMatrix;
use crate::error::{Error, Result};

/// Default Spearman threshold: the selected level is the largest with
/// `rho(alpha) <= 0.95`.
pub const DEFAULT_RHO_THRESHOLD: f64 = 0.95;

/// `{0.05, 0.06, ..., 0.99}`.
pub fn alpha_grid() -> Vec<f64> {
    (5..=99).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMethod {
    Mbd,
    MbdU,
}

impl DepthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthMethod::Mbd => "mbd",
            DepthMethod::MbdU => "mbdu",
        }
    }
}

/// How grid points are weighted when averaging over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridWeighting {
    /// Equal weight per grid point.
    #[default]
    Uniform,
    /// Trapezoidal weights, for non-uniform grids.
    Trapezoid,
}

fn normalized_weights(curves: &DenseCurveMatrix, weighting: GridWeighting) -> Vec<f64> {
    let m = curves.ncols();
    match weighting {
        GridWeighting::Uniform => vec![1.0 / m as f64; m],
        GridWeighting::Trapezoid => {
            let w = curves.grid().trapezoid_weights();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthVector {
    pub values: Vec<f64>,
    pub method: DepthMethod,
    pub alpha: Option<f64>,
}

impl DepthVector {
    /// 1-based ranks, deepest first; ties keep index order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; self.values.len()];
        for (r, i) in order.into_iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }
}

fn check_sample(curves: &DenseCurveMatrix) -> Result<()> {
    if curves.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "depth needs at least 2 curves, got {}",
            curves.nrows()
        )));
    }
    Ok(())
}

fn choose2(k: usize) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

/// Depth of curve `i` by enumerating all `C(n,2)` pairs.
pub fn mbd_brute(curves: &DenseCurveMatrix, i: usize) -> Result<f64> {
    mbd_brute_weighted(curves, i, GridWeighting::Uniform)
}

pub fn mbd_brute_weighted(curves: &DenseCurveMatrix, i: usize, weighting: GridWeighting) -> Result<f64> {
    check_sample(curves)?;
    let n = curves.nrows();
    if i >= n {
        return Err(Error::InvalidArgument(format!("curve index {i} out of range for {n} curves")));
    }
    let w = normalized_weights(curves, weighting);
    let y = curves.row(i);
    let mut total = 0.0;
    for i1 in 0..n {
        for i2 in i1 + 1..n {
            let (a, b) = (curves.row(i1), curves.row(i2));
            let covered: f64 = (0..y.len())
                .filter(|&g| a[g].min(b[g]) <= y[g] && y[g] <= a[g].max(b[g]))
                .map(|g| w[g])
                .sum();
            total += covered;
        }
    }
    Ok(total / choose2(n))
}

/// Depths of all curves via pointwise ranks, `O(G n log n)`.
pub fn mbd_fast(curves: &DenseCurveMatrix) -> Result<DepthVector> {
    mbd_fast_weighted(curves, GridWeighting::Uniform)
}

pub fn mbd_fast_weighted(curves: &DenseCurveMatrix, weighting: GridWeighting) -> Result<DepthVector> {
    check_sample(curves)?;
    let n = curves.nrows();
    let m = curves.ncols();
    let w = normalized_weights(curves, weighting);
    let pairs = choose2(n);
    let mut depth = vec![0.0; n];
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(n);
    for g in 0..m {
        column.clear();
        column.extend((0..n).map(|i| (curves.get(i, g), i)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && column[end].0 == column[start].0 {
                end += 1;
            }
            let below = start;
            let above = n - end;
            let covered = (pairs - choose2(above) - choose2(below)) / pairs;
            for &(_, i) in &column[start..end] {
                depth[i] += w[g] * covered;
            }
            start = end;
        }
    }
    Ok(DepthVector {
        values: depth,
        method: DepthMethod::Mbd,
        alpha: None,
    })
}

/// Depth under uncertainty: the mean depth of a curve's upper bound,
/// estimate and lower bound within the `3n` sample of all three.
pub fn mbd_u(
    estimates: &DenseCurveMatrix,
    lower: &DenseCurveMatrix,
    upper: &DenseCurveMatrix,
) -> Result<DepthVector> {
    mbd_u_weighted(estimates, lower, upper, GridWeighting::Uniform)
}

pub fn mbd_u_weighted(
    estimates: &DenseCurveMatrix,
    lower: &DenseCurveMatrix,
    upper: &DenseCurveMatrix,
    weighting: GridWeighting,
) -> Result<DepthVector> {
    let n = estimates.nrows();
    if lower.nrows() != n || upper.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} estimates, {} lower and {} upper bounds",
            lower.nrows(),
            upper.nrows()
        )));
    }
    let enlarged = DenseCurveMatrix::vstack(&[upper, estimates, lower])?;
    let all = mbd_fast_weighted(&enlarged, weighting)?.values;
    Ok(DepthVector {
        values: (0..n)
            .map(|i| (all[i] + all[n + i] + all[2 * n + i]) / 3.0)
            .collect(),
        method: DepthMethod::MbdU,
        alpha: None,
    })
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 pairs".into()));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput("one of the inputs is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between plain and uncertainty-aware depth at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPoint {
    pub alpha: f64,
    /// `None` when the correlation was undefined and the level was skipped.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub profile: Vec<RhoPoint>,
    /// The largest qualifying level and its depth, if any level qualified.
    pub selected: Option<DepthVector>,
}

impl AlphaSelection {
    pub fn alpha_star(&self) -> Option<f64> {
        self.selected.as_ref().and_then(|d| d.alpha)
    }
}

/// Scans `alphas`, computing `rho(alpha) = spearman(MBD(Ŷ), MBD_U,alpha(Ŷ))`
/// and keeping the largest `alpha` with `rho <= threshold`.
///
/// `bounds(alpha)` must return `(estimates, lower, upper)` at that level; the
/// estimates are the ones whose plain depth is `plain`.
pub fn select_alpha_star<F>(
    plain: &DepthVector,
    alphas: &[f64],
    threshold: f64,
    weighting: GridWeighting,
    mut bounds: F,
) -> Result<AlphaSelection>
where
    F: FnMut(f64) -> Result<(DenseCurveMatrix, DenseCurveMatrix, DenseCurveMatrix)>,
{
    let mut profile = Vec::with_capacity(alphas.len());
    let mut selected: Option<DepthVector> = None;
    for &alpha in alphas {
        let (est, lower, upper) = bounds(alpha)?;
        let mut depth = mbd_u_weighted(&est, &lower, &upper, weighting)?;
        depth.alpha = Some(alpha);
        let rho = spearman(&plain.values, &depth.values).ok();
        profile.push(RhoPoint { alpha, rho });
        if let Some(r) = rho {
            let better = selected.as_ref().and_then(|d| d.alpha).is_none_or(|a| alpha > a);
            if r <= threshold && better {
                selected = Some(depth);
            }
        }
    }
    Ok(AlphaSelection { profile, selected })
}

/// CSV with columns `subject_id,method,alpha,depth,rank`; `alpha` is empty
/// for plain depth and rank 1 is the deepest curve.
pub fn write_depth_csv<W: std::io::Write>(ids: &[String], depth: &DepthVector, writer: W) -> Result<()> {
    if ids.len() != depth.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} depth values",
            ids.len(),
            depth.values.len()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["subject_id", "method", "alpha", "depth", "rank"])?;
    let alpha = depth.alpha.map(|a| a.to_string()).unwrap_or_default();
    for ((id, d), rank) in ids.iter().zip(&depth.values).zip(depth.ranks()) {
        wtr.write_record([id.as_str(), depth.method.as_str(), &alpha, &d.to_string(), &rank.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
