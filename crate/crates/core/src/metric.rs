//! Finite metric spaces, tuples of points and the distance submatrices
//! the determinant engines consume.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default metric-validation tolerance, relative to the largest distance.
pub const DEFAULT_METRIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("distance matrix is empty")]
    Empty,
    #[error("distance matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("tolerance must be finite and nonnegative, got {0}")]
    BadTolerance(f64),
    #[error("nonzero diagonal entry at ({0}, {0})")]
    NonzeroDiagonal(usize),
    #[error("negative distance at ({0}, {1})")]
    NegativeDistance(usize, usize),
    #[error("asymmetric entries at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("distinct points {0} and {1} are at distance zero")]
    CoincidentPoints(usize, usize),
    #[error("triangle inequality fails: d({0},{1}) > d({0},{2}) + d({2},{1})")]
    TriangleViolation(usize, usize, usize),
    #[error("scale factor must be positive and finite, got {0}")]
    NonpositiveScale(f64),
    #[error("index {index} out of range for a space with {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("tuple needs at least 2 entries, got {0}")]
    TupleTooShort(usize),
    #[error("{0} labels given for {1} points")]
    LabelCount(usize, usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

/// A square symmetric matrix with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl DistMatrix {
    /// Builds a matrix from a symmetric function of the index pair; the
    /// diagonal is forced to zero.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; order * order];
        for i in 0..order {
            for j in (i + 1)..order {
                let v = f(i, j);
                entries[i * order + j] = v;
                entries[j * order + i] = v;
            }
        }
        Self { order, entries }
    }

    /// Builds from rows; only the strict upper triangle is read.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self::from_fn(rows.len(), |i, j| rows[i][j])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.order + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.order.max(1)).map(<[f64]>::to_vec).take(self.order).collect()
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { order: self.order, entries: self.entries.iter().map(|v| v * factor).collect() }
    }
}

/// Ordered point indices `(x_0, ..., x_k)`; repeats are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tuple(Vec<usize>);

impl Tuple {
    pub fn new(indices: Vec<usize>) -> Result<Self, MetricError> {
        if indices.len() < 2 {
            return Err(MetricError::TupleTooShort(indices.len()));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Simplex order `k` for a tuple of `k + 1` points.
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }
}

impl fmt::Display for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

/// A labeled point set with a validated distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: DistMatrix,
    tol: f64,
}

impl FiniteMetricSpace {
    pub fn len(&self) -> usize {
        self.dist.order()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist.get(i, j)
    }

    pub fn distances(&self) -> &DistMatrix {
        &self.dist
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, MetricError> {
        if labels.len() != self.len() {
            return Err(MetricError::LabelCount(labels.len(), self.len()));
        }
        self.labels = labels;
        Ok(self)
    }

    fn check_index(&self, index: usize) -> Result<(), MetricError> {
        if index >= self.len() {
            return Err(MetricError::IndexOutOfRange { index, len: self.len() });
        }
        Ok(())
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Validates a raw square matrix against the metric axioms.
///
/// `tol` is relative to the largest absolute entry. Axioms are checked in
/// the order diagonal, sign, symmetry, distinctness, triangle inequality;
/// within the first failing axiom the worst offender is reported.
pub fn validate_metric(raw: &[Vec<f64>], tol: f64) -> Result<FiniteMetricSpace, MetricError> {
    let n = raw.len();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(MetricError::BadTolerance(tol));
    }
    for (row, r) in raw.iter().enumerate() {
        if r.len() != n {
            return Err(MetricError::NotSquare { row, len: r.len(), expected: n });
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite(row, j));
        }
    }
    let scale = raw.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eps = tol * scale;

    // Worst offender among (excess, indices) candidates.
    fn worst<I>(it: I) -> Option<I::Item>
    where
        I: Iterator<Item = (f64, (usize, usize, usize))>,
    {
        it.fold(None, |best: Option<(f64, _)>, c| match best {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
    }

    if let Some((_, (i, _, _))) =
        worst((0..n).filter(|&i| raw[i][i] != 0.0).map(|i| (raw[i][i].abs(), (i, i, i))))
    {
        return Err(MetricError::NonzeroDiagonal(i));
    }
    let pairs = || (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)));
    if let Some((_, (i, j, _))) = worst(
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| raw[i][j] < -eps)
            .map(|(i, j)| (-raw[i][j], (i, j, 0))),
    ) {
        return Err(MetricError::NegativeDistance(i, j));
    }
    if let Some((_, (i, j, _))) = worst(
        pairs()
            .map(|(i, j)| ((raw[i][j] - raw[j][i]).abs(), (i, j, 0)))
            .filter(|&(gap, _)| gap > eps),
    ) {
        return Err(MetricError::Asymmetric(i, j));
    }
    let dist = DistMatrix::from_fn(n, |i, j| 0.5 * (raw[i][j] + raw[j][i]).max(0.0));
    if let Some((i, j)) = pairs().find(|&(i, j)| dist.get(i, j) <= 0.0) {
        return Err(MetricError::CoincidentPoints(i, j));
    }
    let triangle = pairs().flat_map(|(i, j)| {
        let dist = &dist;
        (0..n)
            .filter(move |&k| k != i && k != j)
            .map(move |k| (dist.get(i, j) - dist.get(i, k) - dist.get(k, j), (i, j, k)))
    });
    if let Some((_, (i, j, k))) = worst(triangle.filter(|&(excess, _)| excess > eps)) {
        return Err(MetricError::TriangleViolation(i, j, k));
    }
    Ok(FiniteMetricSpace { labels: default_labels(n), dist, tol })
}

/// The distance matrix `m(x_{t_0}, ..., x_{t_k})` of a tuple.
pub fn submatrix(space: &FiniteMetricSpace, t: &Tuple) -> Result<DistMatrix, MetricError> {
    for &i in t.indices() {
        space.check_index(i)?;
    }
    let idx = t.indices();
    Ok(DistMatrix::from_fn(idx.len(), |a, b| space.d(idx[a], idx[b])))
}

pub fn scale_metric(space: &FiniteMetricSpace, lambda: f64) -> Result<FiniteMetricSpace, MetricError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(MetricError::NonpositiveScale(lambda));
    }
    Ok(FiniteMetricSpace {
        labels: space.labels.clone(),
        dist: space.dist.scaled(lambda),
        tol: space.tol,
    })
}

#[derive(Deserialize)]
struct SpaceFile {
    #[serde(default)]
    labels: Option<Vec<String>>,
    distances: Vec<Vec<f64>>,
}

/// Parses `{"labels": [...], "distances": [[...]]}`.
pub fn parse_json_space(text: &str, tol: f64) -> Result<FiniteMetricSpace, MetricError> {
    let file: SpaceFile = serde_json::from_str(text).map_err(|e| MetricError::Parse(e.to_string()))?;
    let space = validate_metric(&file.distances, tol)?;
    match file.labels {
        Some(labels) => space.with_labels(labels),
        None => Ok(space),
    }
}

/// Parses a square numeric CSV matrix with an optional header row of labels.
pub fn parse_csv_space(text: &str, tol: f64) -> Result<FiniteMetricSpace, MetricError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = None;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| MetricError::Parse(e.to_string()))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => labels = Some(record.iter().map(str::to_owned).collect()),
            Err(e) => return Err(MetricError::Parse(format!("row {line}: {e}"))),
        }
    }
    let space = validate_metric(&rows, tol)?;
    match labels {
        Some(labels) => space.with_labels(labels),
        None => Ok(space),
    }
}

/// Reads a space file, choosing the format by extension (`.csv` or JSON).
pub fn read_space_file(path: &Path, tol: f64) -> Result<FiniteMetricSpace, MetricError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricError::Io(e.to_string()))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_csv_space(&text, tol)
    } else {
        parse_json_space(&text, tol)
    }
}

/// Distances between coordinate vectors; handy for building test spaces.
pub fn euclidean_space(points: &[Vec<f64>]) -> Result<FiniteMetricSpace, MetricError> {
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| euclidean_distance(a, b)).collect())
        .collect();
    validate_metric(&rows, DEFAULT_METRIC_TOL)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
