//! Decision procedures for isometric embeddability of a finite metric space
//! in `E^n`: the Cayley–Menger sign/vanishing criterion, the Schoenberg
//! determinant criterion, and a Blumenthal basis search. Also the minimal
//! dimension via the rank of the tau (Gram) matrix and coordinate realization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::determinants::{
    cm_from_matrix, psd_check, sch_from_matrix, zero_band, DetError, PsdMode, PsdWitness, DEFAULT_TOL_DET,
    DEFAULT_TOL_PSD,
};
use crate::metric::{euclidean_distance, DistMatrix, FiniteMetricSpace, MetricError, Tuple};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("target dimension must be at least 1, got {0}")]
    DimensionOutOfRange(usize),
    #[error("space is not embeddable in any Euclidean space: {0:?}")]
    NotEmbeddable(PsdWitness),
    #[error("space needs dimension {rank}, requested {requested}")]
    RankExceedsRequested { rank: usize, requested: usize },
    #[error("criteria disagree: {0}")]
    CriteriaDisagree(String),
    #[error(transparent)]
    Det(#[from] DetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Menger,
    Schoenberg,
    Blumenthal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embeddable {
    Yes,
    No,
    Undetermined,
}

/// Which determinant condition a tuple was tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Sign-corrected determinant must be nonnegative (order `k <= n`).
    Sign,
    /// Determinant must vanish (orders `n + 1` and `n + 2`).
    Vanishing,
    /// Blumenthal basis: sign-corrected determinant must be strictly positive.
    StrictSign,
}

/// Tuning knobs shared by the decision procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedOptions {
    /// Relative zero band for determinants (see [`zero_band`]).
    pub tol_det: f64,
    /// Values outside the zero band but within `gray_factor` times it, on the
    /// violating side, make a verdict undetermined instead of negative.
    pub gray_factor: f64,
    /// Relative eigenvalue tolerance for rank and PSD decisions.
    pub tol_psd: f64,
    /// Above this many tuples the check switches to seeded sampling.
    pub max_exhaustive: u64,
    /// Tuples drawn per tuple size in sampling mode.
    pub samples_per_size: usize,
    pub seed: u64,
}

/// Number of tuples enumerated for 24 points at dimension 4.
pub const DEFAULT_MAX_EXHAUSTIVE: u64 = 536_130;

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            tol_det: DEFAULT_TOL_DET,
            gray_factor: 1e4,
            tol_psd: DEFAULT_TOL_PSD,
            max_exhaustive: DEFAULT_MAX_EXHAUSTIVE,
            samples_per_size: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedVerdict {
    pub criterion: Criterion,
    /// Target dimension tested.
    pub n: usize,
    pub verdict: Embeddable,
    /// Violating tuple, gray-band tuple, or Blumenthal basis.
    pub witness_tuple: Option<Vec<usize>>,
    /// Determinant value at the witness tuple.
    pub witness_value: Option<f64>,
    pub witness_condition: Option<Condition>,
    /// Maximal distance error of a realization, when one was computed.
    pub residual: Option<f64>,
    pub exhaustive: bool,
    pub tuples_checked: u64,
    /// Tuples whose value fell in the gray band on the violating side.
    pub gray_tuples: u64,
}

impl EmbedVerdict {
    fn new(criterion: Criterion, n: usize) -> Self {
        Self {
            criterion,
            n,
            verdict: Embeddable::Yes,
            witness_tuple: None,
            witness_value: None,
            witness_condition: None,
            residual: None,
            exhaustive: true,
            tuples_checked: 0,
            gray_tuples: 0,
        }
    }

    fn set_witness(&mut self, tuple: &[usize], value: f64, condition: Condition) {
        self.witness_tuple = Some(tuple.to_vec());
        self.witness_value = Some(value);
        self.witness_condition = Some(condition);
    }
}

/// Coordinates realizing a finite metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub coords: Vec<Vec<f64>>,
    /// Achieved dimension.
    pub m: usize,
    pub max_residual: f64,
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Total tuples of distinct points checked at dimension `n`.
pub fn tuple_count(points: usize, n: usize) -> u64 {
    (2..=(n + 3).min(points)).map(|s| binomial(points as u64, s as u64)).sum()
}

/// Calls `f` on each increasing `size`-subset of `0..n` in lexicographic
/// order until it returns `false`.
pub(crate) fn for_each_subset(n: usize, size: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if !f(&idx) {
            return;
        }
        match (0..size).rev().find(|&i| idx[i] < n - size + i) {
            None => return,
            Some(i) => {
                idx[i] += 1;
                for j in (i + 1)..size {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
    }
}

fn sub(space: &FiniteMetricSpace, ix: &[usize]) -> DistMatrix {
    DistMatrix::from_fn(ix.len(), |a, b| space.d(ix[a], ix[b]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Ok,
    Gray,
    Violation,
}

fn classify(value: f64, band: f64, gray: f64, condition: Condition) -> Class {
    let excess = match condition {
        Condition::Sign => -value,
        Condition::Vanishing => value.abs(),
        Condition::StrictSign => unreachable!("strict sign is only used by the basis search"),
    };
    if excess <= band {
        Class::Ok
    } else if excess <= gray {
        Class::Gray
    } else {
        Class::Violation
    }
}

/// Shared tuple scan for the Menger and Schoenberg criteria. `engine`
/// returns `(raw determinant, sign-corrected value)` for a distance matrix.
fn determinant_scan(
    space: &FiniteMetricSpace,
    n: usize,
    opts: &EmbedOptions,
    criterion: Criterion,
    engine: impl Fn(&DistMatrix) -> Result<(f64, f64), DetError>,
) -> Result<EmbedVerdict, EmbedError> {
    if n < 1 {
        return Err(EmbedError::DimensionOutOfRange(n));
    }
    let points = space.len();
    let mut verdict = EmbedVerdict::new(criterion, n);
    verdict.exhaustive = tuple_count(points, n) <= opts.max_exhaustive;
    let mut gray_witness: Option<(Vec<usize>, f64, Condition)> = None;
    let mut violation: Option<(Vec<usize>, f64, Condition)> = None;
    let mut failure: Option<DetError> = None;

    let mut visit = |ix: &[usize], verdict: &mut EmbedVerdict| -> bool {
        let m = sub(space, ix);
        let k = ix.len() - 1;
        let condition = if k <= n { Condition::Sign } else { Condition::Vanishing };
        let (raw, signed) = match engine(&m) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return false;
            }
        };
        verdict.tuples_checked += 1;
        let band = zero_band(&m, opts.tol_det);
        let tested = if condition == Condition::Sign { signed } else { raw };
        match classify(tested, band, band * opts.gray_factor, condition) {
            Class::Ok => true,
            Class::Gray => {
                verdict.gray_tuples += 1;
                if gray_witness.is_none() {
                    gray_witness = Some((ix.to_vec(), raw, condition));
                }
                true
            }
            Class::Violation => {
                violation = Some((ix.to_vec(), raw, condition));
                false
            }
        }
    };

    'sizes: for size in 2..=(n + 3).min(points) {
        if verdict.exhaustive {
            let mut keep_going = true;
            for_each_subset(points, size, |ix| {
                keep_going = visit(ix, &mut verdict);
                keep_going
            });
            if !keep_going {
                break 'sizes;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for _ in 0..opts.samples_per_size {
                let mut ix = sample(&mut rng, points, size).into_vec();
                ix.sort_unstable();
                if !visit(&ix, &mut verdict) {
                    break 'sizes;
                }
            }
        }
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    if let Some((t, v, c)) = violation {
        verdict.verdict = Embeddable::No;
        verdict.set_witness(&t, v, c);
    } else if let Some((t, v, c)) = gray_witness {
        verdict.verdict = Embeddable::Undetermined;
        verdict.set_witness(&t, v, c);
    }
    Ok(verdict)
}

/// Cayley–Menger criterion: `(-1)^(k+1) D_k >= 0` for every tuple of order
/// `k <= n`, and `D_k = 0` for orders `n + 1` and `n + 2`. Tuples of up to
/// `n + 3` distinct points suffice.
pub fn menger_check(space: &FiniteMetricSpace, n: usize, opts: &EmbedOptions) -> Result<EmbedVerdict, EmbedError> {
    determinant_scan(space, n, opts, Criterion::Menger, |m| {
        let cm = cm_from_matrix(m)?;
        Ok((cm.value, cm.signed_value))
    })
}

/// Schoenberg criterion: `Sch >= 0` for orders `k <= n` and `Sch = 0` for
/// orders `n + 1` and `n + 2`, over the same tuples as [`menger_check`].
pub fn schoenberg_check(space: &FiniteMetricSpace, n: usize, opts: &EmbedOptions) -> Result<EmbedVerdict, EmbedError> {
    determinant_scan(space, n, opts, Criterion::Schoenberg, |m| {
        let s = sch_from_matrix(m)?;
        Ok((s, s))
    })
}

/// Index of the point whose largest distance to the others is smallest.
pub fn center_point(space: &FiniteMetricSpace) -> usize {
    (0..space.len())
        .map(|i| (i, (0..space.len()).map(|j| space.d(i, j)).fold(0.0, f64::max)))
        .fold((0, f64::INFINITY), |best, (i, r)| if r < best.1 { (i, r) } else { best })
        .0
}

/// Full tau matrix with `base` as the origin; rows follow the other points
/// in index order, as returned alongside.
fn full_tau(space: &FiniteMetricSpace, base: usize) -> (DMatrix<f64>, Vec<usize>) {
    let others: Vec<usize> = (0..space.len()).filter(|&i| i != base).collect();
    let k = others.len();
    let tau = DMatrix::from_fn(k, k, |i, j| {
        let (a, b) = (others[i], others[j]);
        space.d(base, a).powi(2) + space.d(base, b).powi(2) - space.d(a, b).powi(2)
    });
    (tau, others)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "result")]
pub enum MinDimension {
    Dimension { m: usize },
    /// The tau matrix is not positive semidefinite; witness indices refer to points.
    Infeasible { witness: PsdWitness },
}

/// Smallest `m` with an isometric embedding in `E^m`: the rank of the tau
/// matrix when it is positive semidefinite. A positive answer is
/// cross-checked with [`schoenberg_check`] at that dimension.
pub fn min_embedding_dimension(space: &FiniteMetricSpace, opts: &EmbedOptions) -> Result<MinDimension, EmbedError> {
    if space.len() == 1 {
        return Ok(MinDimension::Dimension { m: 0 });
    }
    let base = center_point(space);
    let (tau, others) = full_tau(space, base);
    let report = psd_check(&tau, PsdMode::Auto, opts.tol_psd)?;
    if !report.psd {
        let witness = match report.witness {
            PsdWitness::Minor { subset, value } => {
                let mut points = vec![base];
                points.extend(subset.iter().map(|&i| others[i]));
                PsdWitness::Minor { subset: points, value }
            }
            w => w,
        };
        return Ok(MinDimension::Infeasible { witness });
    }
    let m = report.rank;
    if m >= 1 {
        let check = schoenberg_check(space, m, opts)?;
        if check.verdict != Embeddable::Yes {
            return Err(EmbedError::CriteriaDisagree(format!(
                "tau matrix has rank {m} but the determinant check at n = {m} returned {:?} at {:?}",
                check.verdict, check.witness_tuple
            )));
        }
    }
    Ok(MinDimension::Dimension { m })
}

/// Coordinates in `E^m`, `m <= n`, from the spectral factorization of the
/// Gram matrix `tau / 2`. Point 0 is placed at the origin.
pub fn realize_coordinates(space: &FiniteMetricSpace, n: usize, opts: &EmbedOptions) -> Result<Realization, EmbedError> {
    if n < 1 {
        return Err(EmbedError::DimensionOutOfRange(n));
    }
    let count = space.len();
    if count == 1 {
        return Ok(Realization { coords: vec![Vec::new()], m: 0, max_residual: 0.0 });
    }
    let base = center_point(space);
    let (tau, others) = full_tau(space, base);
    let gram = tau * 0.5;
    let norm = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let smallest = order.last().map_or(0.0, |&i| eigen.eigenvalues[i]);
    if smallest < -opts.tol_psd * norm {
        return Err(EmbedError::NotEmbeddable(PsdWitness::Eigenvalue { value: smallest }));
    }
    let kept: Vec<usize> = order.into_iter().filter(|&i| eigen.eigenvalues[i] > opts.tol_psd * norm).collect();
    let m = kept.len();
    if m > n {
        return Err(EmbedError::RankExceedsRequested { rank: m, requested: n });
    }
    let mut coords = vec![vec![0.0; m]; count];
    for (row, &p) in others.iter().enumerate() {
        for (axis, &e) in kept.iter().enumerate() {
            coords[p][axis] = eigen.eigenvalues[e].sqrt() * eigen.eigenvectors[(row, e)];
        }
    }
    let origin = coords[0].clone();
    for c in &mut coords {
        for (x, o) in c.iter_mut().zip(&origin) {
            *x -= o;
        }
    }
    let max_residual = (0..count)
        .flat_map(|i| ((i + 1)..count).map(move |j| (i, j)))
        .map(|(i, j)| (euclidean_distance(&coords[i], &coords[j]) - space.d(i, j)).abs())
        .fold(0.0, f64::max);
    Ok(Realization { coords, m, max_residual })
}

/// Outcome of a Blumenthal basis search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSearch {
    pub basis: Option<Tuple>,
    /// Where the last attempt failed: a tuple, its `D` value and the condition.
    pub failure: Option<(Vec<usize>, f64, Condition)>,
}

fn signed_cm(space: &FiniteMetricSpace, ix: &[usize]) -> Result<(f64, f64), DetError> {
    let cm = cm_from_matrix(&sub(space, ix))?;
    Ok((cm.value, cm.signed_value))
}

/// Checks the order `n + 1` and `n + 2` vanishing conditions for a basis
/// of `n + 1` points against every extra point `y` and pair `y, z`.
fn verify_basis(
    space: &FiniteMetricSpace,
    basis: &[usize],
    tol_det: f64,
) -> Result<Option<(Vec<usize>, f64, Condition)>, DetError> {
    let rest: Vec<usize> = (0..space.len()).filter(|i| !basis.contains(i)).collect();
    let check = |ix: Vec<usize>| -> Result<Option<(Vec<usize>, f64, Condition)>, DetError> {
        let m = sub(space, &ix);
        let v = cm_from_matrix(&m)?.value;
        if v.abs() > zero_band(&m, tol_det) {
            return Ok(Some((ix, v, Condition::Vanishing)));
        }
        Ok(None)
    };
    for (a, &y) in rest.iter().enumerate() {
        let mut ix = basis.to_vec();
        ix.push(y);
        if let Some(f) = check(ix.clone())? {
            return Ok(Some(f));
        }
        for &z in &rest[(a + 1)..] {
            let mut iz = ix.clone();
            iz.push(z);
            if let Some(f) = check(iz)? {
                return Ok(Some(f));
            }
        }
    }
    Ok(None)
}

/// Extends `start` one point at a time, each time by the candidate from
/// `pool` with the largest sign-corrected determinant, until `target` points
/// are chosen. Fails with the best candidate tuple when no candidate is
/// strictly positive.
fn greedy_extend(
    space: &FiniteMetricSpace,
    start: Vec<usize>,
    pool: &[usize],
    target: usize,
    tol_det: f64,
) -> Result<Result<Vec<usize>, (Vec<usize>, f64, Condition)>, DetError> {
    let mut chosen = start;
    while chosen.len() < target {
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for &c in pool.iter().filter(|c| !chosen.contains(c)) {
            let mut ix = chosen.clone();
            ix.push(c);
            let (raw, signed) = signed_cm(space, &ix)?;
            let band = zero_band(&sub(space, &ix), tol_det);
            let rel = signed / band.max(f64::MIN_POSITIVE);
            if best.is_none_or(|b| rel > b.3) {
                best = Some((c, raw, signed, rel));
            }
        }
        match best {
            Some((c, _, _, rel)) if rel > 1.0 => chosen.push(c),
            Some((c, raw, _, _)) => {
                chosen.push(c);
                return Ok(Err((chosen, raw, Condition::StrictSign)));
            }
            None => return Ok(Err((chosen, 0.0, Condition::StrictSign))),
        }
    }
    Ok(Ok(chosen))
}

/// Searches for points `a_0..a_n` with strictly signed `D_1..D_n` whose
/// order `n + 1` and `n + 2` extensions all vanish.
///
/// Greedy first (start from a diametral pair, add the point with the largest
/// sign-corrected determinant); when that fails and the space has at most
/// [`MAX_EXHAUSTIVE_BASIS`] points, every `(n + 1)`-subset is tried.
pub fn blumenthal_basis_search(
    space: &FiniteMetricSpace,
    n: usize,
    opts: &EmbedOptions,
) -> Result<BasisSearch, EmbedError> {
    if n < 1 {
        return Err(EmbedError::DimensionOutOfRange(n));
    }
    let points = space.len();
    if points < n + 1 {
        return Ok(BasisSearch { basis: None, failure: None });
    }
    let all: Vec<usize> = (0..points).collect();
    let (mut a, mut b, mut far) = (0, 1, f64::NEG_INFINITY);
    for i in 0..points {
        for j in (i + 1)..points {
            if space.d(i, j) > far {
                (a, b, far) = (i, j, space.d(i, j));
            }
        }
    }
    let failure = match greedy_extend(space, vec![a, b], &all, n + 1, opts.tol_det)? {
        Ok(basis) => match verify_basis(space, &basis, opts.tol_det)? {
            None => return Ok(BasisSearch { basis: Some(Tuple::new(basis)?), failure: None }),
            Some(f) => Some(f),
        },
        Err(f) => Some(f),
    };
    if points <= MAX_EXHAUSTIVE_BASIS {
        let mut found = None;
        let mut err = None;
        for_each_subset(points, n + 1, |subset| {
            let attempt = (|| -> Result<Option<Vec<usize>>, DetError> {
                let ordered = if strictly_signed_prefixes(space, subset, opts.tol_det)? {
                    subset.to_vec()
                } else {
                    match greedy_extend(space, subset[..2].to_vec(), subset, n + 1, opts.tol_det)? {
                        Ok(o) => o,
                        Err(_) => return Ok(None),
                    }
                };
                Ok(verify_basis(space, &ordered, opts.tol_det)?.is_none().then_some(ordered))
            })();
            match attempt {
                Ok(Some(o)) => {
                    found = Some(o);
                    false
                }
                Ok(None) => true,
                Err(e) => {
                    err = Some(e);
                    false
                }
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        if let Some(basis) = found {
            return Ok(BasisSearch { basis: Some(Tuple::new(basis)?), failure: None });
        }
    }
    Ok(BasisSearch { basis: None, failure })
}

fn strictly_signed_prefixes(space: &FiniteMetricSpace, ix: &[usize], tol_det: f64) -> Result<bool, DetError> {
    for len in 2..=ix.len() {
        let m = sub(space, &ix[..len]);
        let signed = cm_from_matrix(&m)?.signed_value;
        if signed <= zero_band(&m, tol_det) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest space on which a failed greedy basis search falls back to
/// trying every subset.
pub const MAX_EXHAUSTIVE_BASIS: usize = 16;

/// Blumenthal criterion for `E^n`: embeddable when a basis exists at some
/// dimension `m <= n`. A one-point space is always embeddable.
pub fn blumenthal_check(space: &FiniteMetricSpace, n: usize, opts: &EmbedOptions) -> Result<EmbedVerdict, EmbedError> {
    if n < 1 {
        return Err(EmbedError::DimensionOutOfRange(n));
    }
    let mut verdict = EmbedVerdict::new(Criterion::Blumenthal, n);
    if space.len() == 1 {
        return Ok(verdict);
    }
    let mut last_failure = None;
    for m in 1..=n.min(space.len() - 1) {
        let search = blumenthal_basis_search(space, m, opts)?;
        if let Some(basis) = search.basis {
            let (raw, _) = signed_cm(space, basis.indices())?;
            verdict.set_witness(basis.indices(), raw, Condition::StrictSign);
            return Ok(verdict);
        }
        last_failure = search.failure.or(last_failure);
    }
    // Without the subset fallback a failed search proves nothing.
    verdict.exhaustive = space.len() <= MAX_EXHAUSTIVE_BASIS;
    verdict.verdict = if verdict.exhaustive { Embeddable::No } else { Embeddable::Undetermined };
    if let Some((t, v, c)) = last_failure {
        verdict.set_witness(&t, v, c);
    }
    Ok(verdict)
}

/// Runs one criterion by name.
pub fn check(
    space: &FiniteMetricSpace,
    n: usize,
    criterion: Criterion,
    opts: &EmbedOptions,
) -> Result<EmbedVerdict, EmbedError> {
    match criterion {
        Criterion::Menger => menger_check(space, n, opts),
        Criterion::Schoenberg => schoenberg_check(space, n, opts),
        Criterion::Blumenthal => blumenthal_check(space, n, opts),
    }
}
