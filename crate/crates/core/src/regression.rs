//! Gaussian-kernel ridge regression with k-fold cross-validated `(γ, α)`.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::rng_from_seed;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct KrrModel<T: Real> {
    pub train_features: DMatrix<T>,
    pub coeffs: DVector<T>,
    pub gamma: T,
    pub alpha: T,
}

impl<T: Real> KrrModel<T> {
    pub fn predict(&self, z: &DMatrix<T>) -> Result<DVector<T>> {
        krr_predict(self, z)
    }

    pub fn predict_one(&self, z: &[T]) -> Result<T> {
        let zm = DMatrix::from_row_slice(1, z.len(), z);
        Ok(krr_predict(self, &zm)?[0])
    }
}

/// `K_ij = exp(−γ ‖aᵢ − bⱼ‖²)`.
pub fn kernel_matrix<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, gamma: T) -> DMatrix<T> {
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let mut s = T::zero();
            for c in 0..a.ncols() {
                let t = a[(i, c)] - b[(j, c)];
                s += t * t;
            }
            k[(i, j)] = (-gamma * s).exp();
        }
    }
    k
}

fn check_hyper<T: Real>(gamma: T, alpha: T) -> Result<()> {
    let positive = |v: T| v.partial_cmp(&T::zero()) == Some(std::cmp::Ordering::Greater);
    if !positive(gamma) || !positive(alpha) {
        return Err(Error::invalid(format!(
            "kernel ridge needs gamma > 0 and alpha > 0, got {gamma} and {alpha}"
        )));
    }
    Ok(())
}

/// Solves `(K + αI) a = u` by Cholesky.
pub fn krr_fit<T: Real>(z: &DMatrix<T>, u: &DVector<T>, gamma: T, alpha: T) -> Result<KrrModel<T>> {
    check_hyper(gamma, alpha)?;
    if z.nrows() == 0 {
        return Err(Error::invalid(
            "kernel ridge needs at least one training point",
        ));
    }
    if z.nrows() != u.len() {
        return Err(Error::DimensionMismatch {
            what: "training targets",
            expected: z.nrows(),
            found: u.len(),
        });
    }
    let mut k = kernel_matrix(z, z, gamma);
    for i in 0..k.nrows() {
        k[(i, i)] += alpha;
    }
    let chol = linalg::cholesky(&k, "regularized kernel matrix")?;
    Ok(KrrModel {
        train_features: z.clone(),
        coeffs: chol.solve(u),
        gamma,
        alpha,
    })
}

/// `f(z) = Σᵢ aᵢ exp(−γ ‖zᵢ − z‖²)` for every row of `z_new`.
pub fn krr_predict<T: Real>(model: &KrrModel<T>, z_new: &DMatrix<T>) -> Result<DVector<T>> {
    if z_new.ncols() != model.train_features.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: model.train_features.ncols(),
            found: z_new.ncols(),
        });
    }
    Ok(kernel_matrix(z_new, &model.train_features, model.gamma) * &model.coeffs)
}

/// `n` values uniformly spaced in `log₁₀` over `[lo_exp, hi_exp]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub lo_exp: f64,
    pub hi_exp: f64,
    pub n: usize,
}

impl LogGrid {
    pub const GAMMA: LogGrid = LogGrid {
        lo_exp: -6.0,
        hi_exp: -2.0,
        n: 30,
    };

    pub const ALPHA: LogGrid = LogGrid {
        lo_exp: -11.0,
        hi_exp: -5.0,
        n: 40,
    };

    pub fn exponents(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.lo_exp],
            n => (0..n)
                .map(|k| {
                    if k == n - 1 {
                        self.hi_exp
                    } else {
                        self.lo_exp + (self.hi_exp - self.lo_exp) * k as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }

    pub fn values<T: Real>(&self) -> Vec<T> {
        self.exponents()
            .into_iter()
            .map(|e| T::lit(10f64.powf(e)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvRow<T> {
    pub gamma: T,
    pub alpha: T,
    pub fold: usize,
    pub mse: T,
}

#[derive(Debug, Clone)]
pub struct CvResult<T> {
    pub gamma: T,
    pub alpha: T,
    pub score: T,
    /// Mean held-out MSE per grid cell, `scores[(ig, ia)]`.
    pub scores: DMatrix<T>,
    /// One row per `(γ, α, fold)`, ordered by γ, then α, then fold.
    pub table: Vec<CvRow<T>>,
}

/// Shuffles `0..n` with `seed` and cuts it into `folds` contiguous blocks; the
/// last block absorbs the remainder.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    if n < folds {
        return Err(Error::invalid(format!(
            "{n} points cannot fill {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let size = n / folds;
    Ok((0..folds)
        .map(|f| {
            let end = if f == folds - 1 { n } else { (f + 1) * size };
            perm[f * size..end].to_vec()
        })
        .collect())
}

fn select_rows<T: Real>(z: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), z.ncols(), |i, j| z[(idx[i], j)])
}

/// Held-out MSE of every `α` for one `(γ, fold)`, from a single
/// eigendecomposition of the training kernel.
fn fold_errors<T: Real>(
    z: &DMatrix<T>,
    u: &DVector<T>,
    test: &[usize],
    train: &[usize],
    gamma: T,
    alphas: &[T],
) -> Vec<T> {
    let zt = select_rows(z, train);
    let zv = select_rows(z, test);
    let ut = DVector::from_iterator(train.len(), train.iter().map(|&i| u[i]));
    let uv = DVector::from_iterator(test.len(), test.iter().map(|&i| u[i]));
    let (lam, q) = linalg::sym_eigen_asc(&kernel_matrix(&zt, &zt, gamma));
    let qtu = q.tr_mul(&ut);
    let kq = kernel_matrix(&zv, &zt, gamma) * &q;
    alphas
        .iter()
        .map(|&alpha| {
            let c = DVector::from_fn(lam.len(), |i, _| qtu[i] / (lam[i].max(T::zero()) + alpha));
            let r = &kq * c - &uv;
            r.norm_squared() / T::from_usize_lossy(test.len())
        })
        .collect()
}

/// Grid search over `gamma_grid × alpha_grid` scored by the mean of per-fold
/// held-out MSE. Ties go to the smaller `α`, then the smaller `γ`.
pub fn cross_validate<T: Real>(
    z: &DMatrix<T>,
    u: &DVector<T>,
    folds: usize,
    gamma_grid: &[T],
    alpha_grid: &[T],
    seed: u64,
) -> Result<CvResult<T>> {
    if z.nrows() != u.len() {
        return Err(Error::DimensionMismatch {
            what: "training targets",
            expected: z.nrows(),
            found: u.len(),
        });
    }
    if gamma_grid.is_empty() || alpha_grid.is_empty() {
        return Err(Error::invalid("hyperparameter grids must be nonempty"));
    }
    for &g in gamma_grid {
        for &a in alpha_grid {
            check_hyper(g, a)?;
        }
    }
    let assignment = fold_assignment(z.nrows(), folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = assignment
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train = assignment
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            (test.clone(), train)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..gamma_grid.len())
        .flat_map(|ig| (0..folds).map(move |f| (ig, f)))
        .collect();
    let errors: Vec<Vec<T>> = jobs
        .par_iter()
        .map(|&(ig, f)| fold_errors(z, u, &splits[f].0, &splits[f].1, gamma_grid[ig], alpha_grid))
        .collect();
    let n_g = gamma_grid.len();
    let n_a = alpha_grid.len();
    let mut scores = DMatrix::zeros(n_g, n_a);
    let mut table = Vec::with_capacity(n_g * n_a * folds);
    let inv_f = T::one() / T::from_usize_lossy(folds);
    for ig in 0..n_g {
        for ia in 0..n_a {
            let mut s = T::zero();
            for f in 0..folds {
                let mse = errors[ig * folds + f][ia];
                s += mse;
                table.push(CvRow {
                    gamma: gamma_grid[ig],
                    alpha: alpha_grid[ia],
                    fold: f,
                    mse,
                });
            }
            scores[(ig, ia)] = s * inv_f;
        }
    }
    let key = |v: T| {
        if v.is_finite() {
            v
        } else {
            T::lit(f64::INFINITY)
        }
    };
    let mut best = (0, 0);
    for ig in 0..n_g {
        for ia in 0..n_a {
            let (bg, ba) = best;
            let order = key(scores[(ig, ia)])
                .partial_cmp(&key(scores[(bg, ba)]))
                .unwrap_or(Ordering::Equal)
                .then(
                    alpha_grid[ia]
                        .partial_cmp(&alpha_grid[ba])
                        .unwrap_or(Ordering::Equal),
                )
                .then(
                    gamma_grid[ig]
                        .partial_cmp(&gamma_grid[bg])
                        .unwrap_or(Ordering::Equal),
                );
            if order == Ordering::Less {
                best = (ig, ia);
            }
        }
    }
    Ok(CvResult {
        gamma: gamma_grid[best.0],
        alpha: alpha_grid[best.1],
        score: scores[best],
        scores,
        table,
    })
}

/// Cross-validates on the default grids and refits on all the data.
pub fn fit_cross_validated<T: Real>(
    z: &DMatrix<T>,
    u: &DVector<T>,
    folds: usize,
    gamma_grid: &LogGrid,
    alpha_grid: &LogGrid,
    seed: u64,
) -> Result<(KrrModel<T>, CvResult<T>)> {
    let cv = cross_validate(
        z,
        u,
        folds,
        &gamma_grid.values(),
        &alpha_grid.values(),
        seed,
    )?;
    let model = krr_fit(z, u, cv.gamma, cv.alpha)?;
    Ok((model, cv))
}

#[derive(Serialize)]
struct CvCsvRow {
    gamma: f64,
    alpha: f64,
    fold: usize,
    mse: f64,
}

/// Writes the audit table with header `gamma,alpha,fold,mse`.
pub fn write_cv_table<T: Real, W: Write>(writer: W, table: &[CvRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if table.is_empty() {
        w.write_record(["gamma", "alpha", "fold", "mse"])?;
    }
    for r in table {
        w.serialize(CvCsvRow {
            gamma: r.gamma.as_f64(),
            alpha: r.alpha.as_f64(),
            fold: r.fold,
            mse: r.mse.as_f64(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{latin_hypercube, BoxDomain};

    #[test]
    fn single_point_fit() {
        let z = DMatrix::from_row_slice(1, 2, &[0.3f64, -0.1]);
        let u = DVector::from_vec(vec![2.0]);
        let m = krr_fit(&z, &u, 0.5, 0.25).unwrap();
        assert!((m.coeffs[0] - 2.0 / 1.25).abs() < 1e-15);
        assert!((m.predict_one(&[0.3, -0.1]).unwrap() - m.coeffs[0]).abs() < 1e-15);
        let far = m.predict_one(&[100.0, 100.0]).unwrap();
        assert!(far.abs() < 1e-20);
    }

    #[test]
    fn zero_targets_zero_coefficients() {
        let z = latin_hypercube(&BoxDomain::<f64>::symmetric(2), 8, 1).unwrap();
        let m = krr_fit(&z, &DVector::zeros(8), 1.0, 1e-3).unwrap();
        assert_eq!(m.coeffs.amax(), 0.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let z = DMatrix::from_row_slice(1, 1, &[0.0]);
        let u = DVector::from_vec(vec![1.0]);
        assert!(krr_fit(&z, &u, 0.0, 1.0).is_err());
        assert!(krr_fit(&z, &u, 1.0, -1.0).is_err());
        let m = krr_fit(&z, &u, 1.0, 1.0).unwrap();
        assert!(m.predict(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn default_grids() {
        let g = LogGrid::GAMMA.values::<f64>();
        let a = LogGrid::ALPHA.values::<f64>();
        assert_eq!(g.len(), 30);
        assert_eq!(a.len(), 40);
        assert_eq!(g[0], 1e-6);
        assert_eq!(g[29], 1e-2);
        assert_eq!(a[0], 1e-11);
        assert_eq!(a[39], 1e-5);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn folds_partition_indices() {
        let f = fold_assignment(23, 10, 9).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f[9].len(), 5);
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(fold_assignment(5, 10, 0).is_err());
    }

    #[test]
    fn one_by_one_grid_returns_that_pair() {
        let z = latin_hypercube(&BoxDomain::<f64>::symmetric(2), 20, 3).unwrap();
        let u = DVector::from_fn(20, |i, _| z[(i, 0)].sin());
        let cv = cross_validate(&z, &u, 10, &[0.7], &[1e-3], 1).unwrap();
        assert_eq!((cv.gamma, cv.alpha), (0.7, 1e-3));
        assert_eq!(cv.table.len(), 10);
    }

    #[test]
    fn spectral_shortcut_matches_direct_fits() {
        let z = latin_hypercube(&BoxDomain::<f64>::symmetric(2), 30, 4).unwrap();
        let u = DVector::from_fn(30, |i, _| (z[(i, 0)] + 2.0 * z[(i, 1)]).cos());
        let gammas = [0.5, 2.0];
        let alphas = [1e-4, 1e-2];
        let cv = cross_validate(&z, &u, 5, &gammas, &alphas, 8).unwrap();
        let folds = fold_assignment(30, 5, 8).unwrap();
        for row in &cv.table {
            let test = &folds[row.fold];
            let train: Vec<usize> = (0..30).filter(|i| !test.contains(i)).collect();
            let zt = select_rows(&z, &train);
            let ut = DVector::from_iterator(train.len(), train.iter().map(|&i| u[i]));
            let m = krr_fit(&zt, &ut, row.gamma, row.alpha).unwrap();
            let p = m.predict(&select_rows(&z, test)).unwrap();
            let mse = test
                .iter()
                .enumerate()
                .map(|(k, &i)| (p[k] - u[i]).powi(2))
                .sum::<f64>()
                / test.len() as f64;
            assert!(
                (mse - row.mse).abs() <= 1e-8 * mse.max(1e-12),
                "{mse} vs {}",
                row.mse
            );
        }
    }

    #[test]
    fn cv_table_csv() {
        let rows = vec![CvRow {
            gamma: 0.5f64,
            alpha: 0.25,
            fold: 3,
            mse: 1.5,
        }];
        let mut buf = Vec::new();
        write_cv_table(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "gamma,alpha,fold,mse\n0.5,0.25,3,1.5\n"
        );
    }
}
