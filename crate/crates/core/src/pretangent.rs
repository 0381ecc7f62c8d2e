//! The infinitesimal layer around a marked point `p`.
//!
//! Sequences converging to `p` are compared through the rescaled distances
//! `d(x_m, y_m) / r_m` for a normalizing sequence `r_m -> 0`. Families of
//! mutually stable sequences give a pseudometric whose metric identification
//! is a pretangent space.
//!
//! For tuples near `p` the normalized functionals
//!
//! ```text
//! Theta_{k+1}(x_0..x_k) = (-1)^(k+1) D_k(x_0..x_k) / delta^(2k)
//! S_{k+1}(x_0..x_k)     = Sch(x_0..x_k) / delta^(2k),   delta = max_i d(x_i, p)
//! ```
//!
//! decide whether every pretangent space at `p` embeds in `E^n`: the
//! liminf of `Theta_{k+1}` must be nonnegative for `k <= n` and `Theta_{k+1}`
//! must tend to zero for `k = n + 1, n + 2` (likewise for `S`). Those limits
//! quantify over all tuples, so [`liminf_scan`] and [`transfer_check`]
//! estimate them from seeded samples on a ladder of shrinking scales. A scan
//! can support or refute a condition; it never proves one.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::determinants::{cm_from_matrix, sch_from_matrix, DetError, DEFAULT_TOL_DET};
use crate::metric::{validate_metric, DistMatrix, FiniteMetricSpace, MetricError};
use crate::spaces::{MarkedMetric, MarkedSpace, SpaceError, TupleSampler};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PretangentError {
    #[error("tuple needs at least 2 points, got {0}")]
    TupleTooShort(usize),
    #[error("exponent must be positive, got {0}")]
    NonpositiveExponent(f64),
    #[error("functional expects {expected} points, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("depth must be at least 16, got {0}")]
    DepthTooSmall(usize),
    #[error("normalizing sequence degenerates at index {0}")]
    DegenerateNormalizer(usize),
    #[error("pseudodistance between {0} and {1} is not stable")]
    UnstableInput(usize, usize),
    #[error("merged class joins {0} and {1} at pseudodistance {2}")]
    MergeInconsistency(usize, usize, f64),
    #[error("scan needs at least one sample per scale")]
    EmptySample,
    #[error("sampled tuple has delta {delta} at requested scale {scale}")]
    SamplerScaleMismatch { scale: f64, delta: f64 },
    #[error("sequence {0} does not converge to the marked point")]
    NonconvergentSequence(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Det(#[from] DetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

// ---------------------------------------------------------------------------
// Sequences

/// Geometric normalizing sequence `r_m = r0 * q^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizingSequence {
    pub r0: f64,
    pub q: f64,
}

impl NormalizingSequence {
    pub fn geometric(r0: f64, q: f64) -> Result<Self, PretangentError> {
        if !(r0 > 0.0 && r0.is_finite() && q > 0.0 && q < 1.0) {
            return Err(PretangentError::InvalidParams(format!("need r0 > 0 and 0 < q < 1, got r0={r0}, q={q}")));
        }
        Ok(Self { r0, q })
    }

    pub fn at(&self, m: usize) -> f64 {
        self.r0 * self.q.powi(m as i32)
    }
}

/// A sequence `m -> x_m` of points of a marked space.
pub struct PointSequence<P> {
    f: Arc<dyn Fn(usize) -> P + Send + Sync>,
}

impl<P> Clone for PointSequence<P> {
    fn clone(&self) -> Self {
        Self { f: Arc::clone(&self.f) }
    }
}

impl<P> fmt::Debug for PointSequence<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PointSequence")
    }
}

impl<P: Clone + Send + Sync + 'static> PointSequence<P> {
    pub fn from_fn(f: impl Fn(usize) -> P + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    pub fn constant(p: P) -> Self {
        Self::from_fn(move |_| p.clone())
    }

    pub fn at(&self, m: usize) -> P {
        (self.f)(m)
    }
}

// ---------------------------------------------------------------------------
// Mutual stability

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub depth: usize,
    /// Oscillation allowed for a stable verdict, relative to `max(1, |limit|)`.
    pub tol: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self { depth: 64, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum Stability {
    Stable { limit: f64 },
    Unstable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub status: Stability,
    pub depth_used: usize,
    /// Max minus min of the tail ratios.
    pub oscillation: f64,
}

impl StabilityVerdict {
    pub fn limit(&self) -> Option<f64> {
        match self.status {
            Stability::Stable { limit } => Some(limit),
            _ => None,
        }
    }
}

fn check_normalizer(r: &NormalizingSequence, depth: usize) -> Result<(), PretangentError> {
    let mut prev = f64::INFINITY;
    for m in 0..depth {
        let v = r.at(m);
        if !(v.is_finite() && v >= f64::MIN_POSITIVE && v < prev) {
            return Err(PretangentError::DegenerateNormalizer(m));
        }
        prev = v;
    }
    Ok(())
}

/// Decides whether `d(x_m, y_m) / r_m` converges, looking at the ratios over
/// the second half of `0..depth`. The verdict is unstable when the last
/// quarter of that window still spreads by more than ten times the tolerance
/// and by more than half the spread of its first quarter; a spread that is
/// still shrinking is undetermined.
pub fn mutual_stability<S: MarkedMetric>(
    space: &S,
    x: &PointSequence<S::Point>,
    y: &PointSequence<S::Point>,
    r: &NormalizingSequence,
    params: &StabilityParams,
) -> Result<StabilityVerdict, PretangentError>
where
    S::Point: Clone + Send + Sync + 'static,
{
    let depth = params.depth;
    if depth < 16 {
        return Err(PretangentError::DepthTooSmall(depth));
    }
    check_normalizer(r, depth)?;
    let window: Vec<f64> = (depth / 2..depth).map(|m| space.distance(&x.at(m), &y.at(m)) / r.at(m)).collect();
    let spread = |w: &[f64]| {
        let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo
    };
    let oscillation = spread(&window);
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let scale = mean.abs().max(1.0);
    let status = if oscillation <= params.tol * scale {
        Stability::Stable { limit: mean }
    } else if !oscillation.is_finite() || {
        let q = window.len() / 4;
        let late = spread(&window[window.len() - q..]);
        late > 10.0 * params.tol * scale && late > 0.5 * spread(&window[..q])
    } {
        Stability::Unstable
    } else {
        Stability::Undetermined
    };
    Ok(StabilityVerdict { status, depth_used: depth, oscillation })
}

/// A family of sequences converging to `p`, with the constant sequence at
/// `p` always at index 0.
pub struct SequenceFamily<P> {
    members: Vec<PointSequence<P>>,
}

impl<P: Clone + Send + Sync + 'static> SequenceFamily<P> {
    pub fn new<S: MarkedMetric<Point = P>>(space: &S) -> Self {
        Self { members: vec![PointSequence::constant(space.marked_point())] }
    }

    pub fn push(&mut self, seq: PointSequence<P>) -> &mut Self {
        self.members.push(seq);
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[PointSequence<P>] {
        &self.members
    }
}

/// Pairwise stability verdicts of a sequence family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudometricMatrix {
    pub verdicts: Vec<Vec<StabilityVerdict>>,
}

impl PseudometricMatrix {
    /// Wraps exact limits as stable verdicts.
    pub fn from_limits(rows: &[Vec<f64>]) -> Self {
        let verdicts = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&limit| StabilityVerdict {
                        status: Stability::Stable { limit },
                        depth_used: 0,
                        oscillation: 0.0,
                    })
                    .collect()
            })
            .collect();
        Self { verdicts }
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    /// True when every pair is stable at the depth examined.
    pub fn self_stable(&self) -> bool {
        self.verdicts.iter().flatten().all(|v| v.limit().is_some())
    }

    pub fn limits(&self) -> Option<Vec<Vec<f64>>> {
        self.verdicts.iter().map(|row| row.iter().map(StabilityVerdict::limit).collect()).collect()
    }
}

pub fn pseudometric_matrix<S: MarkedMetric>(
    space: &S,
    family: &SequenceFamily<S::Point>,
    r: &NormalizingSequence,
    params: &StabilityParams,
) -> Result<PseudometricMatrix, PretangentError>
where
    S::Point: Clone + Send + Sync + 'static,
{
    let n = family.len();
    let members = family.members();
    let mut verdicts = vec![Vec::with_capacity(n); n];
    for (i, row) in verdicts.iter_mut().enumerate() {
        for j in 0..n {
            row.push(mutual_stability(space, &members[i], &members[j], r, params)?);
        }
    }
    Ok(PseudometricMatrix { verdicts })
}

/// A metric identification: classes of family indices and the metric
/// between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientSpace {
    pub classes: Vec<Vec<usize>>,
    pub rho: FiniteMetricSpace,
}

/// Merges indices whose pseudodistance is at most `merge_tol` (transitively)
/// and measures classes by their smallest members.
pub fn metric_identification(pm: &PseudometricMatrix, merge_tol: f64) -> Result<QuotientSpace, PretangentError> {
    let n = pm.len();
    let mut limits = vec![vec![0.0; n]; n];
    for (i, row) in pm.verdicts.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            limits[i][j] = v.limit().ok_or(PretangentError::UnstableInput(i, j))?;
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if limits[i][j].abs() <= merge_tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut class_of = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if class_of[root] == usize::MAX {
            class_of[root] = classes.len();
            classes.push(Vec::new());
        }
        classes[class_of[root]].push(i);
    }
    for class in &classes {
        let bound = class.len() as f64 * merge_tol;
        for &i in class {
            for &j in class {
                if limits[i][j] > bound {
                    return Err(PretangentError::MergeInconsistency(i, j, limits[i][j]));
                }
            }
        }
    }
    let rows: Vec<Vec<f64>> =
        classes.iter().map(|a| classes.iter().map(|b| limits[a[0]][b[0]]).collect()).collect();
    let rho = validate_metric(&rows, 1e-9)?;
    Ok(QuotientSpace { classes, rho })
}

// ---------------------------------------------------------------------------
// Normalized functionals

/// A continuous function of a distance matrix, homogeneous of degree
/// `degree > 0`.
#[derive(Clone)]
pub struct HomogeneousFunctional {
    pub name: String,
    pub arity: usize,
    pub degree: f64,
    eval: Arc<dyn Fn(&DistMatrix) -> f64 + Send + Sync>,
}

impl fmt::Debug for HomogeneousFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousFunctional")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("degree", &self.degree)
            .finish()
    }
}

impl HomogeneousFunctional {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        degree: f64,
        eval: impl Fn(&DistMatrix) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), arity, degree, eval: Arc::new(eval) }
    }

    pub fn evaluate(&self, m: &DistMatrix) -> Result<f64, PretangentError> {
        if m.order() != self.arity {
            return Err(PretangentError::ArityMismatch { expected: self.arity, got: m.order() });
        }
        Ok((self.eval)(m))
    }

    /// `(-1)^(k+1) D_k` on `k + 1` points; degree `2k`.
    pub fn cayley_menger(k: usize) -> Self {
        Self::new(format!("signed D_{k}"), k + 1, 2.0 * k as f64, |m| {
            cm_from_matrix(m).map_or(f64::NAN, |v| v.signed_value)
        })
    }

    /// `Sch` on `k + 1` points; degree `2k`.
    pub fn schoenberg(k: usize) -> Self {
        Self::new(format!("Sch_{k}"), k + 1, 2.0 * k as f64, |m| sch_from_matrix(m).unwrap_or(f64::NAN))
    }

    /// `(t_13 max t_32) - t_12`; nonnegative on all triples exactly for ultrametrics.
    pub fn ultra_triangle() -> Self {
        Self::new("ultra-triangle", 3, 1.0, |m| m.get(0, 2).max(m.get(2, 1)) - m.get(0, 1))
    }

    /// The functional multiplied by a constant.
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self::new(format!("{factor} * {}", self.name), self.arity, self.degree, move |m| factor * inner(m))
    }
}

fn tuple_matrix<S: MarkedMetric>(space: &S, pts: &[S::Point]) -> DistMatrix {
    DistMatrix::from_fn(pts.len(), |a, b| space.distance(&pts[a], &pts[b]))
}

/// `max_i d(x_i, p)`.
pub fn delta_scale<S: MarkedMetric>(space: &S, pts: &[S::Point]) -> f64 {
    let p = space.marked_point();
    pts.iter().map(|x| space.distance(x, &p)).fold(0.0, f64::max)
}

/// `(sum_i d(x_i, p)^s)^(1/s)`.
pub fn epsilon_scale<S: MarkedMetric>(space: &S, pts: &[S::Point], s: f64) -> Result<f64, PretangentError> {
    if !(s > 0.0) {
        return Err(PretangentError::NonpositiveExponent(s));
    }
    let p = space.marked_point();
    let dists: Vec<f64> = pts.iter().map(|x| space.distance(x, &p)).collect();
    let top = dists.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0.0);
    }
    // Factor out the maximum so large exponents do not overflow.
    Ok(top * dists.iter().map(|d| (d / top).powf(s)).sum::<f64>().powf(1.0 / s))
}

/// The tuple's distance matrix divided by its `delta`, or `None` at `(p, ..., p)`.
pub fn normalized_matrix<S: MarkedMetric>(space: &S, pts: &[S::Point]) -> Option<DistMatrix> {
    let delta = delta_scale(space, pts);
    if delta == 0.0 {
        return None;
    }
    Some(tuple_matrix(space, pts).scaled(1.0 / delta))
}

/// `f(m(x) / delta(x))`, and 0 at `(p, ..., p)`.
pub fn star_transform<S: MarkedMetric>(
    f: &HomogeneousFunctional,
    space: &S,
    pts: &[S::Point],
) -> Result<f64, PretangentError> {
    if pts.len() != f.arity {
        return Err(PretangentError::ArityMismatch { expected: f.arity, got: pts.len() });
    }
    match normalized_matrix(space, pts) {
        None => Ok(0.0),
        Some(m) => f.evaluate(&m),
    }
}

/// `Theta_{k+1}` for a tuple of `k + 1` points.
pub fn theta<S: MarkedMetric>(space: &S, pts: &[S::Point]) -> Result<f64, PretangentError> {
    if pts.len() < 2 {
        return Err(PretangentError::TupleTooShort(pts.len()));
    }
    match normalized_matrix(space, pts) {
        None => Ok(0.0),
        Some(m) => Ok(cm_from_matrix(&m)?.signed_value),
    }
}

/// `S_{k+1}` for a tuple of `k + 1` points.
pub fn s_functional<S: MarkedMetric>(space: &S, pts: &[S::Point]) -> Result<f64, PretangentError> {
    if pts.len() < 2 {
        return Err(PretangentError::TupleTooShort(pts.len()));
    }
    match normalized_matrix(space, pts) {
        None => Ok(0.0),
        Some(m) => Ok(sch_from_matrix(&m)?),
    }
}

// ---------------------------------------------------------------------------
// Scans

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalMode {
    Theta,
    S,
}

/// Which limit condition a scan estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanCondition {
    /// `liminf >= 0` (orders `k <= n`).
    Sign,
    /// `lim = 0` (orders `n + 1` and `n + 2`).
    Vanishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanVerdict {
    Supports,
    Refutes,
    Inconclusive,
}

/// Scales `s0 * q^j` for `j = 0..rungs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub s0: f64,
    pub q: f64,
    pub rungs: usize,
}

impl Default for ScaleLadder {
    fn default() -> Self {
        Self { s0: 0.5, q: 0.5, rungs: 12 }
    }
}

impl ScaleLadder {
    pub fn scales(&self) -> Vec<f64> {
        (0..self.rungs).map(|j| self.s0 * self.q.powi(j as i32)).collect()
    }

    fn validate(&self) -> Result<(), PretangentError> {
        if !(self.s0 > 0.0 && self.s0.is_finite() && self.q > 0.0 && self.q < 1.0 && self.rungs >= 2) {
            return Err(PretangentError::InvalidParams(format!(
                "scale ladder needs s0 > 0, 0 < q < 1 and at least 2 rungs, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub ladder: ScaleLadder,
    pub samples_per_scale: usize,
    pub seed: u64,
    /// Values within `10 * tol_det` of zero count as zero.
    pub tol_det: f64,
    /// A decaying estimate (fitted exponent above 0.5) must end below this
    /// magnitude to count as tending to zero.
    pub vanish_tol: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self { ladder: ScaleLadder::default(), samples_per_scale: 256, seed: 0, tol_det: DEFAULT_TOL_DET, vanish_tol: 1e-3 }
    }
}

/// Minimal exponent of a decaying power law.
pub const DECAY_EXPONENT: f64 = 0.5;

/// The sample behind an extreme value of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanWitness {
    pub rung: usize,
    pub scale: f64,
    pub sample: usize,
    pub value: f64,
    /// Distances of the tuple points to `p`.
    pub to_marked: Vec<f64>,
    /// Pairwise distances of the tuple.
    pub distances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub k: usize,
    pub mode: FunctionalMode,
    pub condition: ScanCondition,
    pub scales: Vec<f64>,
    pub per_scale_inf: Vec<f64>,
    pub per_scale_sup: Vec<f64>,
    /// Minimum of the per-scale infima over the second half of the ladder.
    pub running_liminf: f64,
    /// Maximum of the per-scale suprema over the second half of the ladder.
    pub running_limsup: f64,
    /// Power-law exponent of `max(|inf|, |sup|)` against scale.
    pub trend: Option<f64>,
    pub inf_trend: Option<f64>,
    pub sup_trend: Option<f64>,
    pub verdict: ScanVerdict,
    /// Most negative sample (sign scans) or largest magnitude (vanishing
    /// scans) at the smallest scale.
    pub witness: Option<ScanWitness>,
}

/// Least-squares slope of `ln|v|` against `ln s`, over positive magnitudes.
pub fn fit_exponent(scales: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > 0.0 && v.is_finite())
        .map(|(s, v)| (s.ln(), v.abs().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Per-sample seed shared by every rung, so the same tuple shapes are
/// compared across scales.
fn sample_seed(base: u64, k: usize, sample: usize) -> u64 {
    let mut z = base ^ ((k as u64) << 48) ^ (sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn evaluate(mode: FunctionalMode, m: &DistMatrix) -> Result<f64, DetError> {
    match mode {
        FunctionalMode::Theta => Ok(cm_from_matrix(m)?.signed_value),
        FunctionalMode::S => sch_from_matrix(m),
    }
}

struct Sample {
    value: f64,
    to_marked: Vec<f64>,
    distances: DistMatrix,
}

fn draw<S>(space: &S, k: usize, scale: f64, seed: u64, mode: FunctionalMode) -> Result<Sample, PretangentError>
where
    S: TupleSampler,
{
    let pts = space.sample_tuple(scale, k + 1, seed)?;
    let p = space.marked_point();
    let to_marked: Vec<f64> = pts.iter().map(|x| space.distance(x, &p)).collect();
    let delta = to_marked.iter().copied().fold(0.0, f64::max);
    let distances = tuple_matrix(space, &pts);
    if delta == 0.0 {
        return Ok(Sample { value: 0.0, to_marked, distances });
    }
    if delta < 0.5 * scale * (1.0 - 1e-9) || delta > 2.0 * scale {
        return Err(PretangentError::SamplerScaleMismatch { scale, delta });
    }
    let value = evaluate(mode, &distances.scaled(1.0 / delta))?;
    Ok(Sample { value, to_marked, distances })
}

/// Estimates the liminf (sign condition) or limit (vanishing condition) of
/// `Theta_{k+1}` or `S_{k+1}` as the tuple shrinks to `p`.
///
/// At each rung the functional is evaluated on `samples_per_scale` sampled
/// tuples; sample `i` uses the same seed on every rung.
pub fn liminf_scan<S>(
    space: &S,
    k: usize,
    condition: ScanCondition,
    mode: FunctionalMode,
    params: &ScanParams,
) -> Result<ScanReport, PretangentError>
where
    S: TupleSampler + Sync,
{
    if k < 1 {
        return Err(PretangentError::TupleTooShort(k + 1));
    }
    if params.samples_per_scale == 0 {
        return Err(PretangentError::EmptySample);
    }
    params.ladder.validate()?;
    let scales = params.ladder.scales();
    let mut per_scale_inf = Vec::with_capacity(scales.len());
    let mut per_scale_sup = Vec::with_capacity(scales.len());
    let mut last: Vec<Sample> = Vec::new();
    for &scale in &scales {
        let samples: Vec<Sample> = (0..params.samples_per_scale)
            .into_par_iter()
            .map(|i| draw(space, k, scale, sample_seed(params.seed, k, i), mode))
            .collect::<Result<_, _>>()?;
        per_scale_inf.push(samples.iter().map(|s| s.value).fold(f64::INFINITY, f64::min));
        per_scale_sup.push(samples.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max));
        last = samples;
    }
    let tail = scales.len() / 2;
    let running_liminf = per_scale_inf[tail..].iter().copied().fold(f64::INFINITY, f64::min);
    let running_limsup = per_scale_sup[tail..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let envelope: Vec<f64> = per_scale_inf.iter().zip(&per_scale_sup).map(|(a, b)| a.abs().max(b.abs())).collect();
    let trend = fit_exponent(&scales, &envelope);
    let inf_trend = fit_exponent(&scales, &per_scale_inf);
    let sup_trend = fit_exponent(&scales, &per_scale_sup);

    let floor = 10.0 * params.tol_det;
    let decays = |t: Option<f64>| t.is_some_and(|e| e > DECAY_EXPONENT);
    let last_two = |v: &[f64]| v[v.len() - 2..].iter().map(|x| x.abs()).fold(0.0, f64::max);
    let verdict = match condition {
        ScanCondition::Sign => {
            let negatives: Vec<f64> = per_scale_inf.iter().map(|v| v.min(0.0)).collect();
            if running_liminf >= -floor || (decays(inf_trend) && last_two(&negatives) <= params.vanish_tol) {
                ScanVerdict::Supports
            } else if per_scale_inf[tail..].iter().all(|&v| v < -floor) && !decays(inf_trend) {
                ScanVerdict::Refutes
            } else {
                ScanVerdict::Inconclusive
            }
        }
        ScanCondition::Vanishing => {
            let end = last_two(&envelope);
            if end <= floor || (decays(trend) && end <= params.vanish_tol) {
                ScanVerdict::Supports
            } else if !decays(trend) && envelope[tail..].iter().all(|&v| v > params.vanish_tol) {
                ScanVerdict::Refutes
            } else {
                ScanVerdict::Inconclusive
            }
        }
    };
    let rung = scales.len() - 1;
    let key = |s: &Sample| match condition {
        ScanCondition::Sign => -s.value,
        ScanCondition::Vanishing => s.value.abs(),
    };
    let witness = last
        .iter()
        .enumerate()
        .fold(None::<(usize, &Sample)>, |best, (i, s)| match best {
            Some((_, b)) if key(b) >= key(s) => best,
            _ => Some((i, s)),
        })
        .map(|(i, s)| ScanWitness {
            rung,
            scale: scales[rung],
            sample: i,
            value: s.value,
            to_marked: s.to_marked.clone(),
            distances: s.distances.rows(),
        });
    Ok(ScanReport {
        k,
        mode,
        condition,
        scales,
        per_scale_inf,
        per_scale_sup,
        running_liminf,
        running_limsup,
        trend,
        inf_trend,
        sup_trend,
        verdict,
        witness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferVerdict {
    ConsistentWithEmbeddable,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub n: usize,
    pub verdict: TransferVerdict,
    /// Index into `reports` of the first refuting scan.
    pub refuting_scan: Option<usize>,
    pub reports: Vec<ScanReport>,
}

/// Scans the sign conditions for `k = 1..=n` and the vanishing conditions
/// for `k = n + 1, n + 2`, each with both `Theta` and `S`. Any refuting
/// scan refutes; all supporting scans make the space consistent with every
/// pretangent space at `p` embedding in `E^n`.
pub fn transfer_check<S>(space: &S, n: usize, params: &ScanParams) -> Result<TransferReport, PretangentError>
where
    S: TupleSampler + Sync,
{
    if n < 1 {
        return Err(PretangentError::InvalidParams("n must be at least 1".into()));
    }
    let mut reports = Vec::with_capacity(2 * (n + 2));
    for k in 1..=n + 2 {
        let condition = if k <= n { ScanCondition::Sign } else { ScanCondition::Vanishing };
        for mode in [FunctionalMode::Theta, FunctionalMode::S] {
            reports.push(liminf_scan(space, k, condition, mode, params)?);
        }
    }
    let refuting_scan = reports.iter().position(|r| r.verdict == ScanVerdict::Refutes);
    let verdict = if refuting_scan.is_some() {
        TransferVerdict::Refuted
    } else if reports.iter().all(|r| r.verdict == ScanVerdict::Supports) {
        TransferVerdict::ConsistentWithEmbeddable
    } else {
        TransferVerdict::Inconclusive
    };
    Ok(TransferReport { n, verdict, refuting_scan, reports })
}

// ---------------------------------------------------------------------------
// Blumenthal sequences

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScanParams {
    pub depth: usize,
    pub tol_det: f64,
    pub vanish_tol: f64,
}

impl Default for SequenceScanParams {
    fn default() -> Self {
        Self { depth: 64, tol_det: DEFAULT_TOL_DET, vanish_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTail {
    pub probe: usize,
    /// Largest `|Theta_{n+2}(x^0_m, .., x^n_m, y_m)|` over the tail.
    pub one_extra: f64,
    /// Largest `|Theta_{n+3}(x^0_m, .., x^n_m, y_m, u_m)|` over the tail.
    pub two_extra: f64,
    pub vanishes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlumenthalScanReport {
    pub n: usize,
    /// Tail infimum of `Theta_{k+1}(x^0_m, .., x^k_m)` for `k = 1..=n`.
    pub strict_tails: Vec<f64>,
    pub strict_min: f64,
    pub probes: Vec<ProbeTail>,
    pub verdict: ScanVerdict,
}

fn converges<S: MarkedMetric>(space: &S, seq: &PointSequence<S::Point>, depth: usize) -> bool
where
    S::Point: Clone + Send + Sync + 'static,
{
    let mid = space.distance_to_marked(&seq.at(depth / 2));
    let end = space.distance_to_marked(&seq.at(depth - 1));
    end == 0.0 || end <= 0.5 * mid
}

/// Default probes: rays along every canonical direction of the space at
/// radius `r_m`, plus a slow ray at radius `sqrt(r_m)` (so that
/// `d(y_m, p) / r_m -> infinity`). Pairs are consecutive directions, and the
/// slow ray with the first direction.
pub fn default_probe_battery(
    space: &MarkedSpace,
    r: &NormalizingSequence,
) -> Vec<(PointSequence<crate::spaces::Point>, PointSequence<crate::spaces::Point>)> {
    let dirs = space.num_directions();
    let ray = |dir: usize, slow: bool| {
        let space = space.clone();
        let r = *r;
        PointSequence::from_fn(move |m| {
            let radius = if slow { r.at(m).sqrt() } else { r.at(m) };
            space.ray_point(dir, radius).unwrap_or_else(|| space.marked_point())
        })
    };
    let mut probes: Vec<_> = (0..dirs).map(|d| (ray(d, false), ray((d + 1) % dirs, false))).collect();
    probes.push((ray(0, true), ray(0, false)));
    probes.push((ray(0, true), ray(dirs.saturating_sub(1), true)));
    probes
}

/// The constant sequence at `p` followed by rays at radius `r_m` along the
/// first `n` independent directions, or `None` when the space has fewer.
pub fn canonical_sequences(
    space: &MarkedSpace,
    n: usize,
    r: &NormalizingSequence,
) -> Option<Vec<PointSequence<crate::spaces::Point>>> {
    if n > space.independent_directions() {
        return None;
    }
    let mut xs = vec![PointSequence::constant(space.marked_point())];
    for dir in 0..n {
        let space = space.clone();
        let r = *r;
        xs.push(PointSequence::from_fn(move |m| {
            space.ray_point(dir, r.at(m)).unwrap_or_else(|| space.marked_point())
        }));
    }
    Some(xs)
}

/// Checks whether sequences `x^0..x^n` converging to `p` keep every
/// `Theta_{k+1}(x^0_m..x^k_m)`, `k = 1..=n`, bounded away from zero while
/// `Theta_{n+2}` and `Theta_{n+3}` with any probe sequences tend to zero,
/// which points to a pretangent space embeddable in `E^n` but not in a
/// lower dimension.
pub fn blumenthal_sequence_scan<S: MarkedMetric>(
    space: &S,
    xs: &[PointSequence<S::Point>],
    probes: &[(PointSequence<S::Point>, PointSequence<S::Point>)],
    params: &SequenceScanParams,
) -> Result<BlumenthalScanReport, PretangentError>
where
    S::Point: Clone + Send + Sync + 'static,
{
    let depth = params.depth;
    if depth < 16 {
        return Err(PretangentError::DepthTooSmall(depth));
    }
    if xs.len() < 2 {
        return Err(PretangentError::TupleTooShort(xs.len()));
    }
    let n = xs.len() - 1;
    for (i, seq) in xs.iter().chain(probes.iter().flat_map(|(y, u)| [y, u])).enumerate() {
        if !converges(space, seq, depth) {
            return Err(PretangentError::NonconvergentSequence(i));
        }
    }
    let window = depth / 2..depth;
    let floor = 10.0 * params.tol_det;
    let points_at = |m: usize, extra: &[&PointSequence<S::Point>]| -> Vec<S::Point> {
        xs.iter().chain(extra.iter().copied()).map(|s| s.at(m)).collect()
    };

    let mut strict_tails = Vec::with_capacity(n);
    for k in 1..=n {
        let mut tail = f64::INFINITY;
        for m in window.clone() {
            let pts: Vec<S::Point> = xs[..=k].iter().map(|s| s.at(m)).collect();
            tail = tail.min(theta(space, &pts)?);
        }
        strict_tails.push(tail);
    }
    let strict_min = strict_tails.iter().copied().fold(f64::INFINITY, f64::min);

    let mut probe_tails = Vec::with_capacity(probes.len());
    for (i, (y, u)) in probes.iter().enumerate() {
        let mut series = Vec::with_capacity(window.len());
        for m in window.clone() {
            let one = theta(space, &points_at(m, &[y]))?.abs();
            let two = theta(space, &points_at(m, &[y, u]))?.abs();
            series.push(one.max(two));
        }
        let quarter = series.len() / 2;
        let early = series[..quarter].iter().copied().fold(0.0, f64::max);
        let late = series[quarter..].iter().copied().fold(0.0, f64::max);
        let max_all = early.max(late);
        let vanishes = max_all <= floor || (late <= params.vanish_tol && late < early);
        let (mut one_extra, mut two_extra) = (0.0_f64, 0.0_f64);
        for m in window.clone() {
            one_extra = one_extra.max(theta(space, &points_at(m, &[y]))?.abs());
            two_extra = two_extra.max(theta(space, &points_at(m, &[y, u]))?.abs());
        }
        probe_tails.push(ProbeTail { probe: i, one_extra, two_extra, vanishes });
    }
    let verdict = if strict_min <= floor {
        ScanVerdict::Refutes
    } else if probe_tails.iter().all(|p| p.vanishes) {
        ScanVerdict::Supports
    } else if probe_tails.iter().any(|p| !p.vanishes && p.one_extra.max(p.two_extra) > params.vanish_tol) {
        ScanVerdict::Refutes
    } else {
        ScanVerdict::Inconclusive
    };
    Ok(BlumenthalScanReport { n, strict_tails, strict_min, probes: probe_tails, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::euclidean_space;
    use crate::spaces::{make_euclidean_subset, MarkedFinite, Point, Region};

    fn line() -> MarkedSpace {
        make_euclidean_subset(1, Region::Cube { lo: -1.0, hi: 1.0 }, vec![0.0]).unwrap()
    }

    fn plane() -> MarkedSpace {
        make_euclidean_subset(2, Region::Cube { lo: -1.0, hi: 1.0 }, vec![0.0, 0.0]).unwrap()
    }

    fn c(v: &[f64]) -> Point {
        Point::Coords(v.to_vec())
    }

    fn halving() -> NormalizingSequence {
        NormalizingSequence::geometric(1.0, 0.5).unwrap()
    }

    #[test]
    fn scale_examples() {
        let s = line();
        assert_eq!(delta_scale(&s, &[c(&[0.]), c(&[0.])]), 0.0);
        assert_eq!(delta_scale(&s, &[c(&[2.]), c(&[0.]), c(&[0.])]), 2.0);
        assert_eq!(delta_scale(&s, &[c(&[1.]), c(&[-3.]), c(&[2.])]), 3.0);
        assert_eq!(epsilon_scale(&s, &[c(&[0.]), c(&[0.])], 2.0).unwrap(), 0.0);
        assert!((epsilon_scale(&s, &[c(&[3.]), c(&[-4.])], 2.0).unwrap() - 5.0).abs() < 1e-15);
        assert!((epsilon_scale(&s, &[c(&[1.]), c(&[-1.]), c(&[1.])], 1.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(epsilon_scale(&s, &[c(&[1.])], 0.0), Err(PretangentError::NonpositiveExponent(0.0)));
    }

    #[test]
    fn star_transform_examples() {
        let s = plane();
        let d1 = HomogeneousFunctional::cayley_menger(1);
        assert_eq!(star_transform(&d1, &s, &[c(&[0., 0.]), c(&[0., 0.])]).unwrap(), 0.0);
        // Both points at distance 1 from p and from each other.
        let x0 = c(&[1.0, 0.0]);
        let x1 = c(&[0.5, 3f64.sqrt() / 2.0]);
        let v = star_transform(&d1, &s, &[x0.clone(), x1.clone()]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let twice = star_transform(&d1.scaled(2.0), &s, &[x0.clone(), x1.clone()]).unwrap();
        assert!((twice - 2.0 * v).abs() < 1e-12);
        assert_eq!(
            star_transform(&d1, &s, &[x0]),
            Err(PretangentError::ArityMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn theta_and_s_examples() {
        let s = line();
        let diametral = [c(&[1.0]), c(&[-1.0])];
        assert!((theta(&s, &diametral).unwrap() - 8.0).abs() < 1e-12);
        assert!((s_functional(&s, &diametral).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(theta(&s, &[c(&[0.]), c(&[0.])]).unwrap(), 0.0);
        assert_eq!(s_functional(&s, &[c(&[0.]), c(&[0.]), c(&[0.])]).unwrap(), 0.0);
        assert_eq!(theta(&s, &[c(&[0.])]), Err(PretangentError::TupleTooShort(1)));

        let p = plane();
        for eps in [1.0, 0.1, 1e-3, 1e-7] {
            let t = [c(&[eps, 0.]), c(&[0., eps]), c(&[eps, eps])];
            assert!((theta(&p, &t).unwrap() - 1.0).abs() < 1e-12, "eps={eps}");
            assert!((s_functional(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_examples() {
        let s = line();
        let r = halving();
        let params = StabilityParams::default();
        let x = PointSequence::from_fn(|m| c(&[3.0 * 0.5f64.powi(m as i32)]));
        let p = PointSequence::constant(s.marked_point());
        let v = mutual_stability(&s, &x, &x, &r, &params).unwrap();
        assert_eq!(v.status, Stability::Stable { limit: 0.0 });
        let v = mutual_stability(&s, &x, &p, &r, &params).unwrap();
        assert_eq!(v.status, Stability::Stable { limit: 3.0 });
        let osc = PointSequence::from_fn(|m| c(&[if m % 2 == 0 { 1.0 } else { 2.0 } * 0.5f64.powi(m as i32)]));
        let v = mutual_stability(&s, &osc, &p, &r, &params).unwrap();
        assert_eq!(v.status, Stability::Unstable);
        assert!((v.oscillation - 1.0).abs() < 1e-12);
        // Slowly converging ratios: 3 + 1/m.
        let slow = PointSequence::from_fn(|m| c(&[(3.0 + 1.0 / (m as f64 + 1.0)) * 0.5f64.powi(m as i32)]));
        let v = mutual_stability(&s, &slow, &p, &r, &params).unwrap();
        assert_eq!(v.status, Stability::Undetermined);

        assert_eq!(
            mutual_stability(&s, &x, &p, &r, &StabilityParams { depth: 8, tol: 1e-6 }),
            Err(PretangentError::DepthTooSmall(8))
        );
        let tiny = NormalizingSequence::geometric(1e-300, 1e-3).unwrap();
        assert!(matches!(
            mutual_stability(&s, &x, &p, &tiny, &params),
            Err(PretangentError::DegenerateNormalizer(_))
        ));
    }

    fn axes_family(s: &MarkedSpace) -> SequenceFamily<Point> {
        let mut fam = SequenceFamily::new(s);
        fam.push(PointSequence::from_fn(|m| c(&[0.5f64.powi(m as i32), 0.0])));
        fam.push(PointSequence::from_fn(|m| c(&[0.0, 0.5f64.powi(m as i32)])));
        fam
    }

    #[test]
    fn pseudometric_examples() {
        let s = plane();
        let r = halving();
        let params = StabilityParams::default();
        let only_p = pseudometric_matrix(&s, &SequenceFamily::new(&s), &r, &params).unwrap();
        assert_eq!(only_p.limits(), Some(vec![vec![0.0]]));

        let pm = pseudometric_matrix(&s, &axes_family(&s), &r, &params).unwrap();
        assert!(pm.self_stable());
        let l = pm.limits().unwrap();
        let want = [[0.0, 1.0, 1.0], [1.0, 0.0, 2f64.sqrt()], [1.0, 2f64.sqrt(), 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((l[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
        let mut fam = axes_family(&s);
        fam.push(PointSequence::from_fn(|m| c(&[if m % 2 == 0 { 1.0 } else { 2.0 } * 0.5f64.powi(m as i32), 0.0])));
        let pm = pseudometric_matrix(&s, &fam, &r, &params).unwrap();
        assert!(!pm.self_stable());
        assert!(matches!(metric_identification(&pm, 1e-9), Err(PretangentError::UnstableInput(..))));
    }

    #[test]
    fn identification_examples() {
        let q = metric_identification(&PseudometricMatrix::from_limits(&[vec![0., 0.], vec![0., 0.]]), 1e-9).unwrap();
        assert_eq!(q.classes, vec![vec![0, 1]]);
        assert_eq!(q.rho.len(), 1);

        let s = plane();
        let pm = pseudometric_matrix(&s, &axes_family(&s), &halving(), &StabilityParams::default()).unwrap();
        let q = metric_identification(&pm, 1e-9).unwrap();
        assert_eq!(q.classes.len(), 3);
        assert!((q.rho.d(1, 2) - 2f64.sqrt()).abs() < 1e-12);
        assert!((q.rho.d(0, 1) - 1.0).abs() < 1e-12);

        let q = metric_identification(
            &PseudometricMatrix::from_limits(&[vec![0., 1e-15], vec![1e-15, 0.]]),
            1e-9,
        )
        .unwrap();
        assert_eq!(q.classes.len(), 1);

        // 0 ~ 1 ~ 2 by near-zero links while d(0, 2) is large.
        let bad = PseudometricMatrix::from_limits(&[vec![0., 0., 1.], vec![0., 0., 0.], vec![1., 0., 0.]]);
        assert!(matches!(metric_identification(&bad, 1e-9), Err(PretangentError::MergeInconsistency(0, 2, _))));
    }

    #[test]
    fn functionals_are_homogeneous() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for k in 1..=4 {
            for f in [HomogeneousFunctional::cayley_menger(k), HomogeneousFunctional::schoenberg(k)] {
                for _ in 0..50 {
                    let m = DistMatrix::from_fn(k + 1, |_, _| rng.random_range(0.1..2.0));
                    let lambda: f64 = rng.random_range(0.1..10.0);
                    let a = f.evaluate(&m.scaled(lambda)).unwrap();
                    let b = lambda.powf(f.degree) * f.evaluate(&m).unwrap();
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300) + 1e-12 * lambda.powf(f.degree));
                }
            }
        }
        let u = HomogeneousFunctional::ultra_triangle();
        let m = DistMatrix::from_rows(&[vec![0., 1., 3.], vec![1., 0., 2.], vec![3., 2., 0.]]);
        assert_eq!(u.evaluate(&m).unwrap(), 2.0);
        assert_eq!(u.evaluate(&m.scaled(2.0)).unwrap(), 4.0);
    }

    #[test]
    fn epsilon_delta_comparability() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = plane();
        for _ in 0..2000 {
            let len = rng.random_range(1..=6);
            let pts: Vec<Point> =
                (0..len).map(|_| c(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])).collect();
            let exp: f64 = rng.random_range(0.05..8.0);
            let ratio = epsilon_scale(&s, &pts, exp).unwrap() / delta_scale(&s, &pts);
            assert!(ratio >= 1.0 - 1e-12 && ratio <= (len as f64).powf(1.0 / exp) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn normalized_entries_bounded_and_theta_within_hadamard() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = crate::spaces::MarkedFinite::new(euclidean_space(&pts).unwrap(), 0).unwrap();
        for _ in 0..500 {
            let k = rng.random_range(1..=5);
            let t: Vec<usize> = (0..=k).map(|_| rng.random_range(0..7)).collect();
            if let Some(m) = normalized_matrix(&s, &t) {
                for a in 0..m.order() {
                    for b in 0..m.order() {
                        assert!(m.get(a, b) >= 0.0 && m.get(a, b) <= 2.0 + 1e-12);
                    }
                }
            }
            // Hadamard bound of the bordered matrix with squared entries <= 4.
            let first = ((k + 1) as f64).sqrt();
            let other = (1.0 + 16.0 * k as f64).sqrt();
            let bound = first * other.powi(k as i32 + 1);
            assert!(theta(&s, &t).unwrap().abs() <= bound);
        }
    }

    #[test]
    fn fit_exponent_recovers_power_laws() {
        let scales: Vec<f64> = (0..10).map(|j| 0.5f64.powi(j)).collect();
        let vals: Vec<f64> = scales.iter().map(|s| 3.0 * s * s).collect();
        assert!((fit_exponent(&scales, &vals).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_exponent(&scales, &vec![0.0; 10]), None);
    }

    #[test]
    fn scan_examples() {
        let params = ScanParams { samples_per_scale: 64, ..ScanParams::default() };
        let seg = make_euclidean_subset(1, Region::Cube { lo: 0.0, hi: 1.0 }, vec![0.0]).unwrap();
        let r = liminf_scan(&seg, 2, ScanCondition::Vanishing, FunctionalMode::Theta, &params).unwrap();
        assert!(r.per_scale_inf.iter().chain(&r.per_scale_sup).all(|v| v.abs() <= 1e-12));
        assert_eq!(r.verdict, ScanVerdict::Supports);
        for space in [seg.clone(), plane(), crate::spaces::make_snowflake(0.5, 1, vec![0.0]).unwrap()] {
            let r = liminf_scan(&space, 1, ScanCondition::Sign, FunctionalMode::Theta, &params).unwrap();
            assert!(r.per_scale_inf.iter().all(|&v| v >= 0.0));
            assert_eq!(r.verdict, ScanVerdict::Supports);
        }
        assert_eq!(
            liminf_scan(&seg, 1, ScanCondition::Sign, FunctionalMode::Theta, &ScanParams { samples_per_scale: 0, ..params }),
            Err(PretangentError::EmptySample)
        );
    }

    /// A sampler that ignores the requested scale.
    struct Liar(MarkedSpace);

    impl MarkedMetric for Liar {
        type Point = Point;
        fn distance(&self, a: &Point, b: &Point) -> f64 {
            self.0.distance(a, b)
        }
        fn marked_point(&self) -> Point {
            self.0.marked_point()
        }
    }

    impl TupleSampler for Liar {
        fn sample_tuple(&self, _scale: f64, len: usize, seed: u64) -> Result<Vec<Point>, SpaceError> {
            self.0.sample_tuple(0.5, len, seed)
        }
    }

    #[test]
    fn scale_mismatch_detected() {
        let r = liminf_scan(&Liar(plane()), 2, ScanCondition::Sign, FunctionalMode::Theta, &ScanParams::default());
        assert!(matches!(r, Err(PretangentError::SamplerScaleMismatch { .. })));
    }

    #[test]
    fn one_point_space_is_consistent() {
        let one = make_euclidean_subset(2, Region::Point, vec![0.3, 0.3]).unwrap();
        for n in 1..=3 {
            let t = transfer_check(&one, n, &ScanParams { samples_per_scale: 8, ..ScanParams::default() }).unwrap();
            assert_eq!(t.verdict, TransferVerdict::ConsistentWithEmbeddable);
            assert!(t.reports.iter().all(|r| r.per_scale_inf.iter().chain(&r.per_scale_sup).all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn finite_marked_space_scans_are_trivial_below_its_resolution() {
        let s = MarkedFinite::new(euclidean_space(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap(), 0).unwrap();
        let t = transfer_check(&s, 1, &ScanParams { samples_per_scale: 8, ..ScanParams::default() }).unwrap();
        assert_eq!(t.verdict, TransferVerdict::ConsistentWithEmbeddable);
    }

    #[test]
    fn blumenthal_scan_examples() {
        let s = plane();
        let r = halving();
        let x0 = PointSequence::constant(s.marked_point());
        let x1 = PointSequence::from_fn(move |m| c(&[r.at(m), 0.0]));
        let x2 = PointSequence::from_fn(move |m| c(&[0.0, r.at(m)]));
        let probes = default_probe_battery(&s, &r);
        let rep = blumenthal_sequence_scan(&s, &[x0.clone(), x1.clone(), x2.clone()], &probes, &SequenceScanParams::default())
            .unwrap();
        assert!((rep.strict_tails[0] - 2.0).abs() < 1e-9);
        assert!((rep.strict_tails[1] - 4.0).abs() < 1e-9);
        assert_eq!(rep.verdict, ScanVerdict::Supports);

        let l = line();
        let y1 = PointSequence::from_fn(move |m| c(&[r.at(m)]));
        let rep = blumenthal_sequence_scan(
            &l,
            &[PointSequence::constant(l.marked_point()), y1],
            &default_probe_battery(&l, &r),
            &SequenceScanParams::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, ScanVerdict::Supports);

        let rep = blumenthal_sequence_scan(&s, &[x0.clone(), x1.clone(), x1.clone()], &probes, &SequenceScanParams::default())
            .unwrap();
        assert!(rep.strict_tails[1].abs() < 1e-12);
        assert_eq!(rep.verdict, ScanVerdict::Refutes);

        let circle = make_euclidean_subset(2, Region::SphereSurface, vec![0.0, 1.0]).unwrap();
        let xs = canonical_sequences(&circle, 1, &r).unwrap();
        let rep = blumenthal_sequence_scan(&circle, &xs, &default_probe_battery(&circle, &r), &SequenceScanParams::default())
            .unwrap();
        assert!((rep.strict_tails[0] - 2.0).abs() < 1e-9);
        assert_eq!(rep.verdict, ScanVerdict::Supports);
        assert!(canonical_sequences(&circle, 2, &r).is_none());

        let stuck = PointSequence::constant(c(&[0.5, 0.5]));
        assert_eq!(
            blumenthal_sequence_scan(&s, &[x0, stuck], &[], &SequenceScanParams::default()),
            Err(PretangentError::NonconvergentSequence(1))
        );
    }
}
