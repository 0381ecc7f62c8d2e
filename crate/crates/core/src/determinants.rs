//! Cayley–Menger and Schoenberg determinant engines, simplex volume, and
//! positive-semidefiniteness tests.
//!
//! Both engines accept any symmetric zero-diagonal distance data, not only
//! realizable data. For a tuple of `k + 1` points the Schoenberg determinant
//! equals `(-1)^(k+1)` times the Cayley–Menger determinant, and both are
//! homogeneous of degree `2k` in the distances.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{submatrix, DistMatrix, FiniteMetricSpace, MetricError, Tuple};

/// Default relative zero band for determinant sign decisions.
pub const DEFAULT_TOL_DET: f64 = 1e-8;
/// Default relative tolerance for eigenvalue-based rank and PSD decisions.
pub const DEFAULT_TOL_PSD: f64 = 1e-9;
/// Largest order accepted by the exhaustive principal-minor test.
pub const MAX_MINOR_ORDER: usize = 20;
/// Orders up to this use the principal-minor test in [`PsdMode::Auto`].
pub const AUTO_MINOR_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetError {
    #[error("tuple needs at least 2 points, got {0}")]
    TupleTooShort(usize),
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("principal-minor mode supports order <= {MAX_MINOR_ORDER}, got {0}")]
    MinorModeTooLarge(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A Cayley–Menger determinant `D_k` together with its sign-corrected value
/// `(-1)^(k+1) D_k`, which is nonnegative for realizable simplices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CMValue {
    pub k: usize,
    pub value: f64,
    pub signed_value: f64,
}

impl CMValue {
    fn new(k: usize, value: f64) -> Self {
        let signed_value = if k % 2 == 1 { value } else { -value };
        Self { k, value, signed_value }
    }
}

/// The matrix `tau_ij = d²(x0,xi) + d²(x0,xj) - d²(xi,xj)` of a tuple with base `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix {
    pub base: usize,
    pub entries: DMatrix<f64>,
}

fn check_len(m: &DistMatrix) -> Result<usize, DetError> {
    if m.order() < 2 {
        return Err(DetError::TupleTooShort(m.order()));
    }
    Ok(m.order() - 1)
}

pub(crate) fn det(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    // LU with partial pivoting.
    m.lu().determinant()
}

/// The `(k+2) x (k+2)` bordered matrix: zero corner, unit border, squared distances.
pub fn bordered_matrix(m: &DistMatrix) -> DMatrix<f64> {
    let n = m.order();
    DMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        (i, j) => {
            let d = m.get(i - 1, j - 1);
            d * d
        }
    })
}

/// `D_k` of a distance matrix of order `k + 1`.
pub fn cm_from_matrix(m: &DistMatrix) -> Result<CMValue, DetError> {
    let k = check_len(m)?;
    Ok(CMValue::new(k, det(bordered_matrix(m))))
}

pub fn cm_determinant(space: &FiniteMetricSpace, t: &Tuple) -> Result<CMValue, DetError> {
    cm_from_matrix(&submatrix(space, t)?)
}

/// `V² = (-1)^(k+1) D_k / (2^k (k!)²)`; left unclamped so negative values
/// expose non-realizable data.
pub fn volume_sq_from_matrix(m: &DistMatrix) -> Result<f64, DetError> {
    let cm = cm_from_matrix(m)?;
    let k = cm.k as i32;
    let factorial: f64 = (1..=cm.k).map(|i| i as f64).product();
    Ok(cm.signed_value / (2f64.powi(k) * factorial * factorial))
}

pub fn simplex_volume_sq(space: &FiniteMetricSpace, t: &Tuple) -> Result<f64, DetError> {
    volume_sq_from_matrix(&submatrix(space, t)?)
}

/// Tau matrix of a distance matrix whose row 0 is the base point.
pub fn tau_from_matrix(m: &DistMatrix) -> Result<DMatrix<f64>, DetError> {
    let k = check_len(m)?;
    Ok(DMatrix::from_fn(k, k, |i, j| {
        let (a, b, c) = (m.get(0, i + 1), m.get(0, j + 1), m.get(i + 1, j + 1));
        a * a + b * b - c * c
    }))
}

pub fn tau_matrix(space: &FiniteMetricSpace, t: &Tuple) -> Result<TauMatrix, DetError> {
    let entries = tau_from_matrix(&submatrix(space, t)?)?;
    Ok(TauMatrix { base: t.indices()[0], entries })
}

/// Schoenberg determinant `det(tau)` of a distance matrix.
pub fn sch_from_matrix(m: &DistMatrix) -> Result<f64, DetError> {
    Ok(det(tau_from_matrix(m)?))
}

pub fn sch_determinant(space: &FiniteMetricSpace, t: &Tuple) -> Result<f64, DetError> {
    sch_from_matrix(&submatrix(space, t)?)
}

/// Width of the zero band for a determinant of order `k` over `m`:
/// `tol_det * (max d²)^k`, matching the degree-`2k` homogeneity.
pub fn zero_band(m: &DistMatrix, tol_det: f64) -> f64 {
    let k = m.order().saturating_sub(1) as i32;
    let max_sq = m.max_entry().powi(2);
    tol_det * max_sq.powi(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsdMode {
    AllMinors,
    Spectral,
    /// All minors up to [`AUTO_MINOR_ORDER`], spectral above.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PsdWitness {
    None,
    /// The most negative principal minor.
    Minor { subset: Vec<usize>, value: f64 },
    /// The most negative eigenvalue.
    Eigenvalue { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub psd: bool,
    pub rank: usize,
    pub witness: PsdWitness,
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Positive-semidefiniteness and numerical rank of a symmetric matrix.
///
/// In principal-minor mode every minor of size `s` must be at least
/// `-tol * |m|^s` (Frobenius norm). In spectral mode the smallest eigenvalue
/// must be at least `-tol * |m|`. Rank always counts eigenvalues above
/// `tol * |m|`.
pub fn psd_check(m: &DMatrix<f64>, mode: PsdMode, tol: f64) -> Result<PsdReport, DetError> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = m[(i, j)].abs().max(m[(j, i)].abs()).max(1.0);
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(DetError::NotSymmetric(i, j));
            }
        }
    }
    let mode = match mode {
        PsdMode::Auto if n <= AUTO_MINOR_ORDER => PsdMode::AllMinors,
        PsdMode::Auto => PsdMode::Spectral,
        other => other,
    };
    if mode == PsdMode::AllMinors && n > MAX_MINOR_ORDER {
        return Err(DetError::MinorModeTooLarge(n));
    }
    let norm = frobenius(m);
    if n == 0 {
        return Ok(PsdReport { psd: true, rank: 0, witness: PsdWitness::None });
    }
    let eigen = SymmetricEigen::new(m.clone());
    let rank = eigen.eigenvalues.iter().filter(|&&l| l > tol * norm).count();
    let min_eig = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);

    match mode {
        PsdMode::Spectral => {
            let psd = min_eig >= -tol * norm;
            let witness = if psd { PsdWitness::None } else { PsdWitness::Eigenvalue { value: min_eig } };
            Ok(PsdReport { psd, rank, witness })
        }
        _ => {
            let mut worst: Option<(Vec<usize>, f64, f64)> = None;
            for mask in 1u32..(1u32 << n) {
                let subset: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
                let s = subset.len();
                let minor = det(DMatrix::from_fn(s, s, |a, b| m[(subset[a], subset[b])]));
                let band = tol * norm.powi(s as i32);
                if minor < -band {
                    let severity = -minor / norm.powi(s as i32).max(f64::MIN_POSITIVE);
                    if worst.as_ref().is_none_or(|w| severity > w.2) {
                        worst = Some((subset, minor, severity));
                    }
                }
            }
            Ok(match worst {
                None => PsdReport { psd: true, rank, witness: PsdWitness::None },
                Some((subset, value, _)) => {
                    PsdReport { psd: false, rank, witness: PsdWitness::Minor { subset, value } }
                }
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{euclidean_space, scale_metric, validate_metric};
    use proptest::prelude::*;

    /// Cofactor expansion along the first row; independent of LU.
    fn cofactor_det(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return m[0][0];
        }
        (0..n)
            .map(|c| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][c] * cofactor_det(&minor)
            })
            .sum()
    }

    fn space(rows: &[&[f64]]) -> FiniteMetricSpace {
        validate_metric(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 1e-12).unwrap()
    }

    fn tuple(ix: &[usize]) -> Tuple {
        Tuple::new(ix.to_vec()).unwrap()
    }

    fn equilateral() -> FiniteMetricSpace {
        space(&[&[0., 1., 1.], &[1., 0., 1.], &[1., 1., 0.]])
    }

    #[test]
    fn cm_examples() {
        let pair = space(&[&[0., 3.], &[3., 0.]]);
        let v = cm_determinant(&pair, &tuple(&[0, 1])).unwrap();
        assert!((v.value - 18.0).abs() < 1e-12);
        assert!((v.signed_value - 18.0).abs() < 1e-12);
        // Oracle: cofactor expansion of the bordered 3x3 matrix.
        let oracle = cofactor_det(&[vec![0., 1., 1.], vec![1., 0., 9.], vec![1., 9., 0.]]);
        assert_eq!(oracle, 18.0);

        let v = cm_determinant(&equilateral(), &tuple(&[0, 1, 2])).unwrap();
        assert!((v.value + 3.0).abs() < 1e-12);
        assert!((v.signed_value - 3.0).abs() < 1e-12);

        let square = euclidean_space(&[vec![0., 0.], vec![1., 0.], vec![1., 1.], vec![0., 1.]]).unwrap();
        let v = cm_determinant(&square, &tuple(&[0, 1, 2, 3])).unwrap();
        assert!(v.value.abs() < 1e-12, "{}", v.value);
    }

    #[test]
    fn volume_examples() {
        let pair = space(&[&[0., 2.], &[2., 0.]]);
        assert!((simplex_volume_sq(&pair, &tuple(&[0, 1])).unwrap() - 4.0).abs() < 1e-12);
        assert!((simplex_volume_sq(&equilateral(), &tuple(&[0, 1, 2])).unwrap() - 3.0 / 16.0).abs() < 1e-12);
        assert_eq!(simplex_volume_sq(&pair, &tuple(&[1, 1])).unwrap(), 0.0);
        // Unit right tetrahedron: volume 1/6.
        let tet = euclidean_space(&[vec![0., 0., 0.], vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]])
            .unwrap();
        let v2 = simplex_volume_sq(&tet, &tuple(&[0, 1, 2, 3])).unwrap();
        assert!((v2 - 1.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn tau_examples() {
        let pair = space(&[&[0., 1.], &[1., 0.]]);
        assert_eq!(tau_matrix(&pair, &tuple(&[0, 1])).unwrap().entries, DMatrix::from_row_slice(1, 1, &[2.]));
        let t = tau_matrix(&equilateral(), &tuple(&[0, 1, 2])).unwrap();
        assert_eq!(t.base, 0);
        assert_eq!(t.entries, DMatrix::from_row_slice(2, 2, &[2., 1., 1., 2.]));
        let t = tau_matrix(&equilateral(), &tuple(&[0, 0, 2])).unwrap();
        assert_eq!(t.entries.row(0).iter().copied().collect::<Vec<_>>(), vec![0., 0.]);
        assert_eq!(t.entries.column(0).iter().copied().collect::<Vec<_>>(), vec![0., 0.]);
    }

    #[test]
    fn sch_examples() {
        let pair = space(&[&[0., 1.], &[1., 0.]]);
        assert!((sch_determinant(&pair, &tuple(&[0, 1])).unwrap() - 2.0).abs() < 1e-12);
        assert!((sch_determinant(&equilateral(), &tuple(&[0, 1, 2])).unwrap() - 3.0).abs() < 1e-12);
        assert!(sch_determinant(&equilateral(), &tuple(&[0, 2, 2])).unwrap().abs() < 1e-12);
        assert!(sch_determinant(&equilateral(), &tuple(&[0, 1, 2, 1])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn short_tuples_rejected() {
        let m = DistMatrix::from_fn(1, |_, _| 0.0);
        assert_eq!(cm_from_matrix(&m), Err(DetError::TupleTooShort(1)));
        assert_eq!(sch_from_matrix(&m), Err(DetError::TupleTooShort(1)));
        assert_eq!(volume_sq_from_matrix(&m), Err(DetError::TupleTooShort(1)));
    }

    #[test]
    fn psd_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[2., 1., 1., 2.]);
        for mode in [PsdMode::AllMinors, PsdMode::Spectral] {
            let r = psd_check(&a, mode, 1e-9).unwrap();
            assert!(r.psd);
            assert_eq!(r.rank, 2);
        }
        let z = DMatrix::zeros(2, 2);
        let r = psd_check(&z, PsdMode::Auto, 1e-9).unwrap();
        assert!(r.psd);
        assert_eq!(r.rank, 0);

        let b = DMatrix::from_row_slice(2, 2, &[1., 2., 2., 1.]);
        let r = psd_check(&b, PsdMode::Spectral, 1e-9).unwrap();
        assert!(!r.psd);
        match r.witness {
            PsdWitness::Eigenvalue { value } => assert!((value + 1.0).abs() < 1e-12),
            w => panic!("{w:?}"),
        }
        let r = psd_check(&b, PsdMode::AllMinors, 1e-9).unwrap();
        match r.witness {
            PsdWitness::Minor { subset, value } => {
                assert_eq!(subset, vec![0, 1]);
                assert!((value + 3.0).abs() < 1e-12);
            }
            w => panic!("{w:?}"),
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1., 2., 0., 1.]);
        assert_eq!(psd_check(&asym, PsdMode::Auto, 1e-9), Err(DetError::NotSymmetric(0, 1)));
        let big = DMatrix::<f64>::identity(21, 21);
        assert_eq!(psd_check(&big, PsdMode::AllMinors, 1e-9), Err(DetError::MinorModeTooLarge(21)));
        assert!(psd_check(&big, PsdMode::Auto, 1e-9).unwrap().psd);
    }

    #[test]
    fn psd_modes_agree_on_small_integer_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..4000 {
            let n = rng.random_range(1..=6);
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = f64::from(rng.random_range(-2i32..=2));
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            // Bias towards PSD examples: half the time use a Gram matrix.
            if rng.random_bool(0.5) {
                m = &m * m.transpose();
            }
            let a = psd_check(&m, PsdMode::AllMinors, 1e-9).unwrap();
            let b = psd_check(&m, PsdMode::Spectral, 1e-9).unwrap();
            assert_eq!(a.psd, b.psd, "{m}");
            assert_eq!(a.rank, b.rank);
        }
    }

    fn random_space_rows(seed: u64, n: usize) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(1.0..2.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    #[test]
    fn cross_engine_identity_against_cofactor_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let n = rng.random_range(2..=6);
            let m = DistMatrix::from_fn(n, |_, _| rng.random_range(0.0..3.0));
            let bordered = bordered_matrix(&m);
            let rows: Vec<Vec<f64>> = bordered.row_iter().map(|r| r.iter().copied().collect()).collect();
            let oracle_cm = cofactor_det(&rows);
            let cm = cm_from_matrix(&m).unwrap();
            let scale = 1.0 + oracle_cm.abs();
            assert!((cm.value - oracle_cm).abs() <= 1e-9 * scale * 9f64.powi(n as i32));
            let sch = sch_from_matrix(&m).unwrap();
            let mag = m.max_entry().powi(2 * (n as i32 - 1)).max(1.0);
            assert!((sch - cm.signed_value).abs() <= 1e-9 * mag, "n={n} sch={sch} cm={cm:?}");
        }
    }

    proptest! {
        #[test]
        fn homogeneity(seed in any::<u64>(), n in 2usize..=6, lambda in 0.1f64..10.0) {
            let s = validate_metric(&random_space_rows(seed, n), 1e-9).unwrap();
            let t = tuple(&(0..n).collect::<Vec<_>>());
            let k = (n - 1) as i32;
            let base = cm_determinant(&s, &t).unwrap().value;
            let scaled = cm_determinant(&scale_metric(&s, lambda).unwrap(), &t).unwrap().value;
            let expect = lambda.powi(2 * k) * base;
            prop_assert!((scaled - expect).abs() <= 1e-9 * expect.abs().max(1e-300));
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>(), perm in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle()) {
            let s = validate_metric(&random_space_rows(seed, 5), 1e-9).unwrap();
            let a = cm_determinant(&s, &tuple(&[0, 1, 2, 3, 4])).unwrap().value;
            let b = cm_determinant(&s, &Tuple::new(perm).unwrap()).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn duplicates_collapse(seed in any::<u64>(), dup in 0usize..4) {
            let s = validate_metric(&random_space_rows(seed, 4), 1e-9).unwrap();
            let mut ix = vec![0, 1, 2, 3];
            ix.push(ix[dup]);
            let t = Tuple::new(ix).unwrap();
            prop_assert!(cm_determinant(&s, &t).unwrap().value.abs() < 1e-9);
            prop_assert!(sch_determinant(&s, &t).unwrap().abs() < 1e-9);
        }
    }
}
