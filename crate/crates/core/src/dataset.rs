//! Sparse and dense functional samples, the common evaluation grid, and
//! long/wide CSV I/O.
//!
//! Sparse data is stored per subject: each subject carries its own strictly
//! increasing observation points and the values observed there. Dense data
//! is a row-major `n x G` matrix of curves evaluated on one shared grid.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default cap on the number of points in a union grid.
pub const DEFAULT_MAX_GRID_POINTS: usize = 101;

/// Ordered abscissae on which curves, means and eigenfunctions are evaluated.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EvaluationGrid {
    points: Vec<f64>,
}

impl EvaluationGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite point {bad}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    /// `count` equidistant points spanning `[lower, upper]`, endpoints included.
    pub fn equidistant(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count < 2 || !(upper > lower) {
            return Err(Error::InvalidGrid(format!(
                "cannot build {count} equidistant points on [{lower}, {upper}]"
            )));
        }
        let step = (upper - lower) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|g| lower + step * g as f64).collect();
        points[count - 1] = upper;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.points[0]
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Trapezoidal quadrature weights; they sum to `upper - lower`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let p = &self.points;
        let m = p.len();
        let mut w = vec![0.0; m];
        for g in 0..m - 1 {
            let half = 0.5 * (p[g + 1] - p[g]);
            w[g] += half;
            w[g + 1] += half;
        }
        w
    }

    /// Position of `s` as `(left index, fraction towards the right neighbour)`.
    /// Points outside the grid are clamped to the nearest end.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let p = &self.points;
        let m = p.len();
        if s <= p[0] {
            return (0, 0.0);
        }
        if s >= p[m - 1] {
            return (m - 2, 1.0);
        }
        let right = p.partition_point(|&x| x <= s);
        let left = right - 1;
        (left, (s - p[left]) / (p[right] - p[left]))
    }

    /// Linear interpolation of grid values at `s`.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let (g, t) = self.locate(s);
        if t == 0.0 {
            values[g]
        } else {
            values[g] + t * (values[g + 1] - values[g])
        }
    }
}

impl TryFrom<Vec<f64>> for EvaluationGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<EvaluationGrid> for Vec<f64> {
    fn from(grid: EvaluationGrid) -> Self {
        grid.points
    }
}

/// One subject's sparse observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
}

impl Subject {
    pub fn num_observations(&self) -> usize {
        self.points.len()
    }
}

/// Subjects observed on their own, possibly sparse, grids within a common domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFunctionalDataset {
    subjects: Vec<Subject>,
    domain: (f64, f64),
}

impl SparseFunctionalDataset {
    /// Validates the subjects. The domain defaults to the observed range of `s`.
    pub fn new(subjects: Vec<Subject>, domain: Option<(f64, f64)>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = HashMap::with_capacity(subjects.len());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for subject in &subjects {
            if seen.insert(subject.id.as_str(), ()).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate subject id '{}'",
                    subject.id
                )));
            }
            if subject.points.is_empty() || subject.points.len() != subject.values.len() {
                return Err(Error::InvalidDataset(format!(
                    "subject '{}' has {} points and {} values",
                    subject.id,
                    subject.points.len(),
                    subject.values.len()
                )));
            }
            if subject
                .points
                .iter()
                .chain(&subject.values)
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidDataset(format!(
                    "subject '{}' has non-finite entries",
                    subject.id
                )));
            }
            if let Some(w) = subject.points.windows(2).find(|w| w[1] <= w[0]) {
                if w[1] == w[0] {
                    return Err(Error::DuplicateObservation {
                        subject: subject.id.clone(),
                        s: w[0],
                    });
                }
                return Err(Error::InvalidDataset(format!(
                    "subject '{}' has unsorted observation points",
                    subject.id
                )));
            }
            lo = lo.min(subject.points[0]);
            hi = hi.max(subject.points[subject.points.len() - 1]);
        }
        let domain = domain.unwrap_or((lo, hi));
        if !(domain.0 <= lo && hi <= domain.1) {
            return Err(Error::InvalidDataset(format!(
                "observations span [{lo}, {hi}], outside domain [{}, {}]",
                domain.0, domain.1
            )));
        }
        Ok(Self { subjects, domain })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(Subject::num_observations).sum()
    }

    pub fn observation_counts(&self) -> Vec<usize> {
        self.subjects.iter().map(Subject::num_observations).collect()
    }

    /// Dataset assembled from arbitrary subjects (e.g. a bootstrap resample),
    /// skipping the id-uniqueness check.
    pub(crate) fn from_parts_unchecked(subjects: Vec<Subject>, domain: (f64, f64)) -> Self {
        Self { subjects, domain }
    }

    /// If every subject is observed on the same points, returns them as a
    /// dense matrix.
    pub fn to_dense(&self) -> Result<DenseCurveMatrix> {
        let reference = &self.subjects[0].points;
        if let Some(other) = self.subjects.iter().find(|s| &s.points != reference) {
            return Err(Error::InvalidDataset(format!(
                "subject '{}' is not observed on the common grid; regularize the data first",
                other.id
            )));
        }
        let grid = EvaluationGrid::new(reference.clone())?;
        let rows: Vec<Vec<f64>> = self.subjects.iter().map(|s| s.values.clone()).collect();
        DenseCurveMatrix::from_rows(grid, &rows)
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }
}

/// Curves evaluated on a shared grid, stored row-major (one row per curve).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCurveMatrix {
    grid: EvaluationGrid,
    values: Vec<f64>,
    rows: usize,
}

impl DenseCurveMatrix {
    pub fn new(grid: EvaluationGrid, values: Vec<f64>) -> Result<Self> {
        let cols = grid.len();
        if !values.len().is_multiple_of(cols) {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill rows of length {cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "curve matrix has non-finite entries".into(),
            ));
        }
        let rows = values.len() / cols;
        Ok(Self { grid, values, rows })
    }

    pub fn from_rows(grid: EvaluationGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let cols = grid.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} values, grid has {cols}",
                r.len()
            )));
        }
        Self::new(grid, rows.concat())
    }

    pub fn grid(&self) -> &EvaluationGrid {
        &self.grid
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.ncols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, g: usize) -> f64 {
        self.values[i * self.ncols() + g]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.ncols())
    }

    /// Stacks matrices sharing a grid, in order.
    pub fn vstack(parts: &[&DenseCurveMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
        if let Some(p) = parts.iter().find(|p| p.grid != first.grid) {
            return Err(Error::ShapeMismatch(format!(
                "grid of length {} differs from grid of length {}",
                p.grid.len(),
                first.grid.len()
            )));
        }
        let values = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
        Self::new(first.grid.clone(), values)
    }

    /// Each row as a fully observed subject, with ids `1..=n` unless given.
    pub fn to_sparse(&self, ids: Option<&[String]>) -> Result<SparseFunctionalDataset> {
        let subjects = self
            .rows()
            .enumerate()
            .map(|(i, row)| Subject {
                id: ids.map_or_else(|| (i + 1).to_string(), |ids| ids[i].clone()),
                points: self.grid.points().to_vec(),
                values: row.to_vec(),
            })
            .collect();
        SparseFunctionalDataset::new(subjects, Some((self.grid.lower(), self.grid.upper())))
    }
}

/// Layout for dense CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    /// `subject_id,s,value`, one row per grid point.
    Long,
    /// `subject_id,v1..vG`, one row per curve.
    Wide,
}

/// Smallest grid covering every observation point; replaced by
/// `max_points` equidistant points over the domain when the union is larger.
pub fn union_grid(dataset: &SparseFunctionalDataset, max_points: usize) -> Result<EvaluationGrid> {
    if max_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_points must be at least 2, got {max_points}"
        )));
    }
    let mut all: Vec<f64> = dataset
        .subjects()
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let (a, b) = dataset.domain();
    if all.len() > max_points {
        return EvaluationGrid::equidistant(a, b, max_points);
    }
    if all.len() == 1 {
        // a single distinct point cannot form a grid; span the domain around it
        let p = all[0];
        let mut pts = vec![a, p, b];
        pts.dedup();
        if pts.len() < 2 {
            return Err(Error::InvalidGrid(
                "domain collapses to a single point".into(),
            ));
        }
        return EvaluationGrid::new(pts);
    }
    EvaluationGrid::new(all)
}

fn parse_field(field: Option<&str>, name: &str, line: u64) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {name} column"),
    })?;
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("invalid {name} '{raw}': {e}"),
    })
}

/// Reads `subject_id,s,value` rows. Subjects keep first-appearance order and
/// are sorted by `s` internally.
pub fn read_long_csv<R: Read>(reader: R, domain: Option<(f64, f64)>) -> Result<SparseFunctionalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["subject_id", "s", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header 'subject_id,s,value', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty subject_id".into(),
            });
        }
        let s = parse_field(record.get(1), "s", line)?;
        let value = parse_field(record.get(2), "value", line)?;
        if !s.is_finite() || !value.is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite number".into(),
            });
        }
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((s, value));
    }
    if order.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut obs = groups.remove(&id).unwrap_or_default();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateObservation { subject: id, s: w[0].0 });
        }
        let (points, values) = obs.into_iter().unzip();
        subjects.push(Subject { id, points, values });
    }
    SparseFunctionalDataset::new(subjects, domain)
}

pub fn load_long_csv(path: impl AsRef<Path>, domain: Option<(f64, f64)>) -> Result<SparseFunctionalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_csv(file, domain)
}

pub fn write_long_csv<W: Write>(dataset: &SparseFunctionalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["subject_id", "s", "value"])?;
    for subject in dataset.subjects() {
        for (s, v) in subject.points.iter().zip(&subject.values) {
            wtr.write_record([subject.id.as_str(), &s.to_string(), &v.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn save_long_csv(dataset: &SparseFunctionalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_long_csv(dataset, file)
}

/// Writes a dense matrix. Rows are labelled with `ids`, or `1..=n` if absent.
pub fn write_dense_csv<W: Write>(
    curves: &DenseCurveMatrix,
    ids: Option<&[String]>,
    layout: CsvLayout,
    writer: W,
) -> Result<()> {
    if let Some(ids) = ids {
        if ids.len() != curves.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} curves",
                ids.len(),
                curves.nrows()
            )));
        }
    }
    let label = |i: usize| ids.map_or_else(|| (i + 1).to_string(), |ids| ids[i].clone());
    let mut wtr = csv::Writer::from_writer(writer);
    match layout {
        CsvLayout::Long => {
            wtr.write_record(["subject_id", "s", "value"])?;
            for (i, row) in curves.rows().enumerate() {
                let id = label(i);
                for (s, v) in curves.grid().points().iter().zip(row) {
                    wtr.write_record([id.as_str(), &s.to_string(), &v.to_string()])?;
                }
            }
        }
        CsvLayout::Wide => {
            let mut header = vec!["subject_id".to_string()];
            header.extend((1..=curves.ncols()).map(|g| format!("v{g}")));
            wtr.write_record(&header)?;
            for (i, row) in curves.rows().enumerate() {
                let mut rec = vec![label(i)];
                rec.extend(row.iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
