//! Dense symmetric matrix utilities.
//!
//! Everything here works on small dense matrices (d up to a few hundred).
//! The weighted norm `‖x‖_{A⁻¹}` is extended to singular PSD matrices as the
//! limit of `‖x‖_{(A + λI)⁻¹}` for λ → 0, which is evaluated exactly by
//! spectral truncation: finite on the range of `A`, infinite otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::LinalgError;

/// Default relative cutoff used by [`weighted_inv_norm`].
pub const DEFAULT_RANGE_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
/// Relative singular value cutoff when extracting the span of a vector set.
const SPAN_TOL: f64 = 1e-10;

/// A symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Validates symmetry (relative 1e-12) and numerical PSD-ness
    /// (eigenvalues ≥ −1e-10·λ_max), then symmetrizes exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if !m.is_square() {
            return Err(LinalgError::DimError {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::InvalidMatrix);
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(LinalgError::NotPsd(format!(
                        "asymmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        let sym = symmetrize(m);
        let eig = sym_eigen(&sym)?;
        let top = eig
            .values
            .as_slice()
            .first()
            .copied()
            .unwrap_or(0.0)
            .max(0.0);
        if let Some(&low) = eig.values.as_slice().last() {
            if low < -PSD_TOL * top.max(f64::MIN_POSITIVE) {
                return Err(LinalgError::NotPsd(format!(
                    "eigenvalue {low:e} below tolerance (largest {top:e})"
                )));
            }
        }
        Ok(Self(sym))
    }

    /// Wraps a matrix that is PSD by construction (sums of outer products).
    pub(crate) fn from_gram(m: DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, LinalgError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `self + shift·I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        Self(m)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }
}

impl AsRef<DMatrix<f64>> for PsdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Symmetric eigendecomposition `A = Q diag(λ) Qᵀ` with λ descending.
pub fn eig_sym(a: &DMatrix<f64>) -> Result<SymEigen, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimError {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::InvalidMatrix);
    }
    sym_eigen(a)
}

fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen, LinalgError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Value of the extended matrix-inverse-weighted norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormResult {
    Finite(f64),
    /// The vector has a component outside the range of the matrix.
    Infinite,
}

impl NormResult {
    pub fn in_range(&self) -> bool {
        matches!(self, NormResult::Finite(_))
    }

    /// The norm as a float, `f64::INFINITY` when out of range.
    pub fn value(&self) -> f64 {
        match *self {
            NormResult::Finite(v) => v,
            NormResult::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            NormResult::Finite(v) => Some(v),
            NormResult::Infinite => None,
        }
    }
}

/// `‖x‖_{A⁻¹}` extended to singular `A`.
///
/// Eigenvalues at or below `range_tol·λ_max` are treated as zero. `x` counts
/// as in range when its component orthogonal to the retained eigenspace has
/// norm at most `range_tol·‖x‖`; otherwise the result is `Infinite`.
pub fn weighted_inv_norm(
    a: &PsdMatrix,
    x: &DVector<f64>,
    range_tol: f64,
) -> Result<NormResult, LinalgError> {
    if a.dim() != x.len() {
        return Err(LinalgError::DimError {
            expected: a.dim(),
            got: x.len(),
        });
    }
    let eig = sym_eigen(a.as_matrix())?;
    Ok(norm_from_eigen(&eig, x, range_tol))
}

/// Same as [`weighted_inv_norm`] but reuses a precomputed decomposition.
pub fn norm_from_eigen(eig: &SymEigen, x: &DVector<f64>, range_tol: f64) -> NormResult {
    let top = eig
        .values
        .as_slice()
        .first()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    let cutoff = range_tol * top;
    let mut quad = 0.0;
    let mut outside = 0.0;
    for (k, &lambda) in eig.values.iter().enumerate() {
        let c = eig.vectors.column(k).dot(x);
        if top > 0.0 && lambda > cutoff {
            quad += c * c / lambda;
        } else {
            outside += c * c;
        }
    }
    if outside.sqrt() <= range_tol * x.norm() {
        NormResult::Finite(quad.sqrt())
    } else {
        NormResult::Infinite
    }
}

/// Cholesky solve of `m·y = rhs` for symmetric positive definite `m`.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if m.nrows() != rhs.len() {
        return Err(LinalgError::DimError {
            expected: m.nrows(),
            got: rhs.len(),
        });
    }
    let chol = m.clone().cholesky().ok_or(LinalgError::SingularMatrix)?;
    Ok(chol.solve(rhs))
}

/// Eigenvalues `μ` of the pencil `B v = μ A v` for PD `A`, descending.
pub fn generalized_eigenvalues(a: &PsdMatrix, b: &PsdMatrix) -> Result<DVector<f64>, LinalgError> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimError {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let chol = a
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(LinalgError::SingularMatrix)?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(a.dim(), a.dim()))
        .ok_or(LinalgError::SingularMatrix)?;
    let whitened = symmetrize(&l_inv * b.as_matrix() * l_inv.transpose());
    Ok(sym_eigen(&whitened)?.values)
}

/// True iff `lo·A ⪯ B ⪯ hi·A`, up to 1e-9 slack on the generalized eigenvalues.
pub fn psd_sandwich(a: &PsdMatrix, b: &PsdMatrix, lo: f64, hi: f64) -> Result<bool, LinalgError> {
    let mu = generalized_eigenvalues(a, b)?;
    Ok(mu.iter().all(|&m| m >= lo - 1e-9 && m <= hi + 1e-9))
}

/// True iff `(1/c)·A ⪯ B ⪯ c·A`.
pub fn psd_between(a: &PsdMatrix, b: &PsdMatrix, c: f64) -> Result<bool, LinalgError> {
    psd_sandwich(a, b, 1.0 / c, c)
}

/// Orthonormal basis (as columns) of the span of `vectors`.
///
/// Directions whose singular value is below `1e-10·σ_max` are dropped, so
/// the column count is the numerical rank. Returns a `dim × 0` matrix when
/// every vector is zero.
pub fn span_basis(vectors: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    if vectors.is_empty() {
        return DMatrix::zeros(dim, 0);
    }
    let stacked = DMatrix::from_columns(vectors);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = idx.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    if top <= 0.0 {
        return DMatrix::zeros(dim, 0);
    }
    let keep: Vec<_> = idx
        .into_iter()
        .filter(|&i| svd.singular_values[i] > SPAN_TOL * top)
        .map(|i| u.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&keep)
}

/// Sum of outer products `Σ w_i v_i v_iᵀ`.
pub fn weighted_outer_sum<'a>(
    dim: usize,
    items: impl IntoIterator<Item = (f64, &'a DVector<f64>)>,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (w, v) in items {
        if w != 0.0 {
            m.ger(w, v, v, 1.0);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn eig_identity() {
        let e = eig_sym(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let e = eig_sym(&mat(2, &[1.0, 0.0, 0.0, 4.0])).unwrap();
        assert_relative_eq!(e.values[0], 4.0);
        assert_relative_eq!(e.values[1], 1.0);
        assert_relative_eq!(e.vectors[(1, 0)].abs(), 1.0);
        assert_relative_eq!(e.vectors[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn eig_two_by_two() {
        // det([[2-λ,1],[1,2-λ]]) = (2-λ)² - 1 → λ ∈ {3, 1}
        let a = mat(2, &[2.0, 1.0, 1.0, 2.0]);
        let e = eig_sym(&a).unwrap();
        assert_relative_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[1], 1.0, epsilon = 1e-12);
        let err = (e.reconstruct() - &a).norm() / a.norm();
        assert!(err < 1e-9);
    }

    #[test]
    fn eig_rejects_non_finite() {
        let a = mat(2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert_eq!(eig_sym(&a).unwrap_err(), LinalgError::InvalidMatrix);
    }

    #[test]
    fn psd_constructor_checks() {
        assert!(PsdMatrix::new(mat(2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(PsdMatrix::new(mat(2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(PsdMatrix::new(mat(2, &[1.0, 1.0, 1.0, 1.0])).is_ok());
    }

    #[test]
    fn norm_identity_weighting() {
        let r = weighted_inv_norm(
            &PsdMatrix::identity(2),
            &DVector::from_vec(vec![3.0, 4.0]),
            DEFAULT_RANGE_TOL,
        )
        .unwrap();
        assert!(r.in_range());
        assert_relative_eq!(r.value(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn norm_outside_range_is_infinite() {
        let a = PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let r =
            weighted_inv_norm(&a, &DVector::from_vec(vec![0.0, 1.0]), DEFAULT_RANGE_TOL).unwrap();
        assert_eq!(r, NormResult::Infinite);
        assert!(!r.in_range());
        assert!(r.value().is_infinite());
    }

    #[test]
    fn norm_hand_inverse() {
        // inverse of [[3,-1],[-1,3]]/16 is [[6,2],[2,6]], so ‖e₁‖² = 6
        let a = PsdMatrix::new(mat(2, &[3.0, -1.0, -1.0, 3.0]) / 16.0).unwrap();
        let r =
            weighted_inv_norm(&a, &DVector::from_vec(vec![1.0, 0.0]), DEFAULT_RANGE_TOL).unwrap();
        assert_relative_eq!(r.value(), 6f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn norm_dim_mismatch() {
        let e = weighted_inv_norm(&PsdMatrix::identity(2), &DVector::zeros(3), 1e-8);
        assert!(matches!(e, Err(LinalgError::DimError { .. })));
    }

    #[test]
    fn zero_vector_has_zero_norm() {
        let r = weighted_inv_norm(&PsdMatrix::zeros(3), &DVector::zeros(3), 1e-8).unwrap();
        assert_eq!(r, NormResult::Finite(0.0));
    }

    #[test]
    fn between_examples() {
        let i = PsdMatrix::identity(2);
        assert!(psd_between(&i, &i, 2.0).unwrap());
        assert!(!psd_between(&i, &i.scaled(3.0), 2.0).unwrap());
        let b = PsdMatrix::from_diagonal(&[0.6, 1.5]).unwrap();
        assert!(psd_between(&i, &b, 2.0).unwrap());
    }

    #[test]
    fn between_singular_a() {
        let a = PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let e = psd_between(&a, &PsdMatrix::identity(2), 2.0);
        assert_eq!(e.unwrap_err(), LinalgError::SingularMatrix);
    }

    #[test]
    fn span_of_collinear_vectors_is_one_dimensional() {
        let v = vec![
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
            DVector::from_vec(vec![-2.0, -4.0, 0.0]),
        ];
        assert_eq!(span_basis(&v, 3).ncols(), 1);
        assert_eq!(span_basis(&[DVector::zeros(3)], 3).ncols(), 0);
    }
}
