//! Dense linear-algebra helpers on top of nalgebra: sorted symmetric
//! eigendecompositions, sorted thin SVDs, Cholesky-reduced generalized
//! eigenproblems and orthogonal projectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (m + m.transpose()) * half
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Flips column signs so that the largest-magnitude entry of every column is positive.
/// The first entry wins among exact ties.
pub fn sign_fix_columns<T: Real>(m: &mut DMatrix<T>) {
    for mut col in m.column_iter_mut() {
        let mut best = T::zero();
        let mut sign_negative = false;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign_negative = *v < T::zero();
            }
        }
        if sign_negative {
            col.neg_mut();
        }
    }
}

fn sorted_eigen<T: Real>(m: &DMatrix<T>, descending: bool) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the solver's order
    order.sort_by(|&a, &b| {
        let ord = eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    sign_fix_columns(&mut vectors);
    (values, vectors)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen_desc<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    sorted_eigen(m, true)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen_asc<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    sorted_eigen(m, false)
}

pub fn sym_eigenvalues_asc<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    let mut v: Vec<T> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    DVector::from_vec(v)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm2<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues_asc(m)
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(what))
}

/// Thin SVD `a = U diag(s) Vᵀ` with singular values sorted descending.
pub struct SortedSvd<T: Real> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<T>,
    pub v: DMatrix<T>,
}

pub fn svd_sorted<T: Real>(a: &DMatrix<T>) -> SortedSvd<T> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return SortedSvd {
            u: DMatrix::zeros(a.nrows(), 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(a.ncols(), 0),
        };
    }
    let svd = a.clone().svd(true, true);
    let u_raw = svd.u.expect("requested U");
    let v_raw = svd.v_t.expect("requested Vᵀ").transpose();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| {
        svd.singular_values[y]
            .partial_cmp(&svd.singular_values[x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = DMatrix::zeros(a.nrows(), k);
    let mut v = DMatrix::zeros(a.ncols(), k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &v_raw.column(src));
        s[dst] = svd.singular_values[src];
    }
    // fix signs on U and carry them to V so that U diag(s) Vᵀ is unchanged
    for j in 0..k {
        let col = u.column(j);
        let mut best = T::zero();
        let mut flip = false;
        for val in col.iter() {
            if val.abs() > best {
                best = val.abs();
                flip = *val < T::zero();
            }
        }
        if flip {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    SortedSvd {
        u,
        singular_values: s,
        v,
    }
}

/// Relative cutoff used for rank decisions, floored at the type's precision.
pub fn rank_rtol<T: Real>() -> T {
    T::tol(1e-12)
}

/// Orthonormal basis of the column span of `b`, with numerical rank decided
/// by `σ > rtol · σ_max`.
pub fn range_basis<T: Real>(b: &DMatrix<T>) -> DMatrix<T> {
    let svd = svd_sorted(b);
    let smax = if svd.singular_values.is_empty() {
        T::zero()
    } else {
        svd.singular_values[0]
    };
    if smax <= T::zero() {
        return DMatrix::zeros(b.nrows(), 0);
    }
    let cut = rank_rtol::<T>() * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cut).count();
    svd.u.columns(0, rank).into_owned()
}

/// Orthogonal projector onto the column span of `b` (rank-revealing; the zero
/// matrix maps to the zero projector).
pub fn projector<T: Real>(b: &DMatrix<T>) -> DMatrix<T> {
    let q = range_basis(b);
    &q * q.transpose()
}

/// Result of the Cholesky-reduced symmetric-definite eigenproblem `H g = λ R g`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen<T: Real> {
    /// All generalized eigenvalues, ascending.
    pub eigenvalues: DVector<T>,
    /// R-orthonormal eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<T>,
}

/// Solves `H g = λ R g` for symmetric `H` and SPD `R` by reducing
/// `L⁻¹ H L⁻ᵀ` with `R = L Lᵀ`.
pub fn generalized_eigen<T: Real>(h: &DMatrix<T>, r: &DMatrix<T>) -> Result<GeneralizedEigen<T>> {
    if h.shape() != r.shape() || !h.is_square() {
        return Err(Error::DimensionMismatch {
            what: "pencil",
            expected: r.nrows(),
            found: h.nrows(),
        });
    }
    let chol = cholesky(r, "Gram matrix R")?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(&symmetrize(h))
        .ok_or(Error::NotPositiveDefinite("Gram matrix R"))?;
    // C = L⁻¹ H L⁻ᵀ = (L⁻¹ (L⁻¹ H)ᵀ)ᵀ
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::NotPositiveDefinite("Gram matrix R"))?;
    let (values, w) = sym_eigen_asc(&symmetrize(&c));
    let mut g = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or(Error::NotPositiveDefinite("Gram matrix R"))?;
    sign_fix_columns(&mut g);
    Ok(GeneralizedEigen {
        eigenvalues: values,
        eigenvectors: g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_of_rank_one_pair() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let p = projector(&b);
        let mut e = DMatrix::zeros(3, 3);
        e[(0, 0)] = 1.0;
        assert!(max_abs(&(p - e)) < 1e-14);
    }

    #[test]
    fn projector_of_zero_is_zero() {
        let p = projector(&DMatrix::<f64>::zeros(4, 2));
        assert_eq!(max_abs(&p), 0.0);
    }

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 1.0, 2.0, -2.0, 0.1, 0.4, 0.3],
        );
        let svd = svd_sorted(&a);
        for w in svd.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let rec = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * svd.v.transpose();
        assert!(max_abs(&(rec - a)) < 1e-12);
    }

    #[test]
    fn generalized_eigen_diagonal_pencil() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let r = DMatrix::<f64>::identity(3, 3);
        let ge = generalized_eigen(&h, &r).unwrap();
        assert_eq!(ge.eigenvalues.as_slice(), &[1.0, 2.0, 3.0]);
        assert!((ge.eigenvectors[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generalized_eigen_rejects_indefinite_r() {
        let h = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            generalized_eigen(&h, &r),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
