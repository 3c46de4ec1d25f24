//! Conditional gradient covariance `M(x) = E_Y[∇ₓu ∇ₓuᵀ]`, its principal
//! directions, and the quadratic surrogate pencil `(H, R)` whose smallest
//! generalized eigenvectors give the minimizing feature map.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::GradientOracle;
use crate::polybasis::{BasisDescriptor, FeatureMap, PolynomialBasis};
use crate::sampling::TensorizedSample;
use crate::scalar::Real;

/// Eigenvalues below this fraction of `λ₁` count as zero in rank-sensitive sums.
pub const EIGEN_RTOL: f64 = 1e-12;

/// Per-sample weight in front of `‖Π⊥_{V_m} ∇g‖²_F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `λ₁(M(x))`; gives an upper bound on the truncated loss.
    #[default]
    LambdaMax,
    /// `λ_m(M(x))`; the lower-bound flavoured alternative.
    LambdaM,
}

/// Monte-Carlo estimate of `M(x⁽ⁱ⁾)` and its eigendecomposition at every
/// x-point of a tensorized sample.
#[derive(Debug, Clone)]
pub struct ConditionalSpectrum<T: Real> {
    m: usize,
    covariances: Vec<DMatrix<T>>,
    eigenvalues: Vec<DVector<T>>,
    directions: Vec<DMatrix<T>>,
}

impl<T: Real> ConditionalSpectrum<T> {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_x(&self) -> usize {
        self.covariances.len()
    }

    pub fn dim(&self) -> usize {
        self.covariances.first().map_or(0, |c| c.nrows())
    }

    pub fn covariance(&self, i: usize) -> &DMatrix<T> {
        &self.covariances[i]
    }

    /// Eigenvalues of `M̂ᵢ`, descending.
    pub fn eigenvalues(&self, i: usize) -> &DVector<T> {
        &self.eigenvalues[i]
    }

    /// `V_m(x⁽ⁱ⁾)`: orthonormal eigenvectors of the `m` largest eigenvalues.
    pub fn directions(&self, i: usize) -> &DMatrix<T> {
        &self.directions[i]
    }

    pub fn weight(&self, i: usize, weighting: Weighting) -> T {
        let lam = &self.eigenvalues[i];
        let w = match weighting {
            Weighting::LambdaMax => lam[0],
            Weighting::LambdaM => lam[self.m - 1],
        };
        w.max(T::zero())
    }

    /// `ε̂_k = mean_i Σ_{j>k} λ_j(M̂ᵢ)`, with eigenvalues under
    /// `EIGEN_RTOL · λ₁` dropped.
    pub fn epsilon(&self, k: usize) -> T {
        if self.eigenvalues.is_empty() {
            return T::zero();
        }
        let cut_rel = T::tol(EIGEN_RTOL);
        let total = self.eigenvalues.iter().fold(T::zero(), |acc, lam| {
            let cut = cut_rel * lam[0].max(T::zero());
            acc + lam
                .iter()
                .skip(k)
                .filter(|v| **v > cut)
                .fold(T::zero(), |s, v| s + *v)
        });
        total / T::from_usize_lossy(self.eigenvalues.len())
    }

    /// Numerical rank of `M̂ᵢ` under the same relative cutoff as [`Self::epsilon`].
    pub fn rank(&self, i: usize) -> usize {
        let lam = &self.eigenvalues[i];
        let cut = T::tol(EIGEN_RTOL) * lam[0].max(T::zero());
        lam.iter().filter(|v| **v > cut && **v > T::zero()).count()
    }

    pub(crate) fn check_sample(&self, sample: &TensorizedSample<T>) -> Result<()> {
        if sample.n_x() != self.n_x() {
            return Err(Error::SampleMismatch(format!(
                "spectrum has {} x-points, sample has {}",
                self.n_x(),
                sample.n_x()
            )));
        }
        if sample.dim_x() != self.dim() {
            return Err(Error::SampleMismatch(format!(
                "spectrum dimension {}, sample dimension {}",
                self.dim(),
                sample.dim_x()
            )));
        }
        Ok(())
    }
}

/// `M̂ᵢ = (1/n_Y) Σ_j ∇ₓu(x⁽ⁱ⁾, y⁽ʲ⁾) ∇ₓu(x⁽ⁱ⁾, y⁽ʲ⁾)ᵀ` and its eigenpairs.
pub fn estimate_conditional_spectrum<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    sample: &TensorizedSample<T>,
    m: usize,
) -> Result<ConditionalSpectrum<T>> {
    let d = sample.dim_x();
    if oracle.dim_x() != d {
        return Err(Error::DimensionMismatch {
            what: "oracle x-dimension",
            expected: d,
            found: oracle.dim_x(),
        });
    }
    if oracle.dim_y() != sample.dim_y() {
        return Err(Error::DimensionMismatch {
            what: "oracle y-dimension",
            expected: sample.dim_y(),
            found: oracle.dim_y(),
        });
    }
    if m == 0 || m > d {
        return Err(Error::invalid(format!(
            "need 1 <= m <= d, got m = {m}, d = {d}"
        )));
    }
    let ys: Vec<DVector<T>> = (0..sample.n_y()).map(|j| sample.y_row(j)).collect();
    let inv_ny = T::one() / T::from_usize_lossy(sample.n_y());
    let per_point: Vec<_> = (0..sample.n_x())
        .into_par_iter()
        .map(|i| {
            let x = sample.x_row(i);
            let mut cov = DMatrix::zeros(d, d);
            for y in &ys {
                let g = oracle.gradient_x(x.as_slice(), y.as_slice());
                cov.ger(inv_ny, &g, &g, T::one());
            }
            let (lam, vecs) = linalg::sym_eigen_desc(&cov);
            (cov, lam, vecs.columns(0, m).into_owned())
        })
        .collect();
    let mut spectrum = ConditionalSpectrum {
        m,
        covariances: Vec::with_capacity(per_point.len()),
        eigenvalues: Vec::with_capacity(per_point.len()),
        directions: Vec::with_capacity(per_point.len()),
    };
    for (cov, lam, dirs) in per_point {
        spectrum.covariances.push(cov);
        spectrum.eigenvalues.push(lam);
        spectrum.directions.push(dirs);
    }
    Ok(spectrum)
}

/// `ε̂_m` at the spectrum's own `m`.
pub fn epsilon_m<T: Real>(spectrum: &ConditionalSpectrum<T>) -> T {
    spectrum.epsilon(spectrum.m())
}

/// The pencil `(H, R)` with `H = H₁ − H₂`.
#[derive(Debug, Clone)]
pub struct SurrogatePencil<T: Real> {
    pub basis: Arc<PolynomialBasis<T>>,
    pub h: DMatrix<T>,
    pub h1: DMatrix<T>,
    pub h2: DMatrix<T>,
    pub r: DMatrix<T>,
    pub m: usize,
    pub weighting: Weighting,
}

impl<T: Real> SurrogatePencil<T> {
    /// `trace(Gᵀ H G)`, the surrogate value of `g = GᵀΦ`.
    pub fn quadratic_form(&self, g: &DMatrix<T>) -> T {
        (g.transpose() * &self.h * g).trace()
    }

    pub fn to_file(&self) -> PencilFile {
        let flat = |m: &DMatrix<T>| {
            let mut out = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)].as_f64());
                }
            }
            out
        };
        PencilFile {
            basis: self.basis.descriptor(),
            m: self.m,
            weighting: self.weighting,
            k: self.h.nrows(),
            h: flat(&self.h),
            h1: flat(&self.h1),
            h2: flat(&self.h2),
            r: flat(&self.r),
        }
    }

    pub fn from_file(file: &PencilFile) -> Result<Self> {
        let basis = Arc::new(PolynomialBasis::from_descriptor(&file.basis)?);
        let k = file.k;
        if basis.len() != k {
            return Err(Error::DimensionMismatch {
                what: "pencil size",
                expected: basis.len(),
                found: k,
            });
        }
        let unflat = |v: &[f64]| -> Result<DMatrix<T>> {
            if v.len() != k * k {
                return Err(Error::DimensionMismatch {
                    what: "pencil matrix entries",
                    expected: k * k,
                    found: v.len(),
                });
            }
            Ok(DMatrix::from_row_iterator(
                k,
                k,
                v.iter().map(|x| T::lit(*x)),
            ))
        };
        Ok(Self {
            basis,
            h: unflat(&file.h)?,
            h1: unflat(&file.h1)?,
            h2: unflat(&file.h2)?,
            r: unflat(&file.r)?,
            m: file.m,
            weighting: file.weighting,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }
}

/// JSON dump of a pencil; matrices are row-major `K × K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PencilFile {
    pub basis: BasisDescriptor,
    pub m: usize,
    pub weighting: Weighting,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    #[serde(rename = "H1")]
    pub h1: Vec<f64>,
    #[serde(rename = "H2")]
    pub h2: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
}

/// Estimates the spectrum on `sample` and assembles the `λ₁`-weighted pencil.
pub fn assemble_pencil<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    sample: &TensorizedSample<T>,
    basis: Arc<PolynomialBasis<T>>,
    m: usize,
) -> Result<SurrogatePencil<T>> {
    let spectrum = estimate_conditional_spectrum(oracle, sample, m)?;
    assemble_pencil_from_spectrum(&spectrum, sample, basis, Weighting::LambdaMax)
}

/// `Ĥ₁ = mean_i wᵢ ∇Φᵢᵀ∇Φᵢ`, `Ĥ₂ = mean_i wᵢ ∇Φᵢᵀ VᵢVᵢᵀ ∇Φᵢ`, summed in
/// sample order.
pub fn assemble_pencil_from_spectrum<T: Real>(
    spectrum: &ConditionalSpectrum<T>,
    sample: &TensorizedSample<T>,
    basis: Arc<PolynomialBasis<T>>,
    weighting: Weighting,
) -> Result<SurrogatePencil<T>> {
    spectrum.check_sample(sample)?;
    if basis.dim() != sample.dim_x() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: sample.dim_x(),
            found: basis.dim(),
        });
    }
    let k = basis.len();
    if spectrum.m() > k {
        return Err(Error::invalid(format!(
            "m = {} exceeds K = {k}",
            spectrum.m()
        )));
    }
    let r = basis.gram_matrix()?;
    let parts: Vec<Result<(DMatrix<T>, DMatrix<T>)>> = (0..sample.n_x())
        .into_par_iter()
        .map(|i| {
            let grad = basis.gradient(sample.x_row(i).as_slice())?;
            let w = spectrum.weight(i, weighting);
            let proj = spectrum.directions(i).tr_mul(&grad);
            Ok((grad.tr_mul(&grad) * w, proj.tr_mul(&proj) * w))
        })
        .collect();
    let mut h1 = DMatrix::zeros(k, k);
    let mut h2 = DMatrix::zeros(k, k);
    for part in parts {
        let (a, b) = part?;
        h1 += a;
        h2 += b;
    }
    let inv_n = T::one() / T::from_usize_lossy(sample.n_x());
    h1 = linalg::symmetrize(&(h1 * inv_n));
    h2 = linalg::symmetrize(&(h2 * inv_n));
    let h = &h1 - &h2;
    Ok(SurrogatePencil {
        basis,
        h,
        h1,
        h2,
        r,
        m: spectrum.m(),
        weighting,
    })
}

/// Minimizer of `trace(Gᵀ H G)` subject to `Gᵀ R G = I_m`.
#[derive(Debug, Clone)]
pub struct SurrogateSolution<T: Real> {
    pub feature_map: FeatureMap<T>,
    /// The `m` smallest generalized eigenvalues, ascending.
    pub eigenvalues: DVector<T>,
    /// Their sum, i.e. the minimal surrogate value.
    pub objective: T,
    /// Every generalized eigenvalue of the pencil, ascending.
    pub spectrum: DVector<T>,
}

/// Solves the pencil by Cholesky reduction and keeps the `m` eigenvectors of
/// smallest eigenvalue (columns sign-fixed).
pub fn minimize_surrogate<T: Real>(pencil: &SurrogatePencil<T>) -> Result<SurrogateSolution<T>> {
    let k = pencil.basis.len();
    let m = pencil.m;
    if m == 0 || m > k {
        return Err(Error::invalid(format!(
            "need 1 <= m <= K, got m = {m}, K = {k}"
        )));
    }
    let ge = linalg::generalized_eigen(&pencil.h, &pencil.r)?;
    let g = ge.eigenvectors.columns(0, m).into_owned();
    let eigenvalues = ge.eigenvalues.rows(0, m).into_owned();
    let objective = eigenvalues.sum();
    Ok(SurrogateSolution {
        feature_map: FeatureMap::from_coefficients(pencil.basis.clone(), g)?,
        eigenvalues,
        objective,
        spectrum: ge.eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FnOracle;
    use crate::polybasis::orthonormalize;
    use crate::sampling::{build_tensorized, BoxDomain};

    fn tensorized(xs: &[[f64; 2]], ys: &[f64]) -> TensorizedSample<f64> {
        TensorizedSample {
            x_points: DMatrix::from_row_iterator(xs.len(), 2, xs.iter().flatten().copied()),
            y_points: DMatrix::from_column_slice(ys.len(), 1, ys),
            seed: 0,
        }
    }

    #[test]
    fn single_direction_spectrum() {
        let o = FnOracle::new(
            3,
            1,
            |x: &[f64], _: &[f64]| x[0],
            |_: &[f64], _: &[f64]| DVector::from_vec(vec![1.0, 0.0, 0.0]),
        );
        let s =
            build_tensorized(&BoxDomain::symmetric(3), &BoxDomain::symmetric(1), 5, 3, 1).unwrap();
        let sp = estimate_conditional_spectrum(&o, &s, 1).unwrap();
        for i in 0..5 {
            let mut e = DMatrix::zeros(3, 3);
            e[(0, 0)] = 1.0;
            assert!(linalg::max_abs(&(sp.covariance(i) - e)) < 1e-15);
            assert!((sp.eigenvalues(i)[0] - 1.0).abs() < 1e-14);
            assert!(sp.eigenvalues(i)[1].abs() < 1e-14);
            assert!((sp.directions(i)[(0, 0)].abs() - 1.0).abs() < 1e-14);
        }
        assert_eq!(epsilon_m(&sp), 0.0);
    }

    #[test]
    fn two_term_average_covariance() {
        // u = y x₁ + (1 − y) x₂ with y ∈ {0, 1}
        let o = FnOracle::new(
            2,
            1,
            |x: &[f64], y: &[f64]| y[0] * x[0] + (1.0 - y[0]) * x[1],
            |_: &[f64], y: &[f64]| DVector::from_vec(vec![y[0], 1.0 - y[0]]),
        );
        let s = tensorized(&[[0.1, 0.2], [-0.5, 0.7]], &[0.0, 1.0]);
        let sp = estimate_conditional_spectrum(&o, &s, 1).unwrap();
        let half = DMatrix::identity(2, 2) * 0.5;
        for i in 0..2 {
            assert!(linalg::max_abs(&(sp.covariance(i) - &half)) < 1e-15);
        }
        assert!((sp.epsilon(1) - 0.5).abs() < 1e-14);
        assert_eq!(sp.epsilon(2), 0.0);
    }

    #[test]
    fn spectrum_rejects_bad_m() {
        let o = FnOracle::new(
            2,
            1,
            |_: &[f64], _: &[f64]| 0.0,
            |_: &[f64], _: &[f64]| DVector::zeros(2),
        );
        let s = tensorized(&[[0.1, 0.2]], &[0.0]);
        assert!(estimate_conditional_spectrum(&o, &s, 0).is_err());
        assert!(estimate_conditional_spectrum(&o, &s, 3).is_err());
    }

    #[test]
    fn constant_function_gives_zero_pencil() {
        let o = FnOracle::new(
            2,
            1,
            |_: &[f64], _: &[f64]| 1.0,
            |_: &[f64], _: &[f64]| DVector::zeros(2),
        );
        let s =
            build_tensorized(&BoxDomain::symmetric(2), &BoxDomain::symmetric(1), 7, 2, 3).unwrap();
        let basis = Arc::new(PolynomialBasis::total_degree(BoxDomain::symmetric(2), 2).unwrap());
        let p = assemble_pencil(&o, &s, basis, 1).unwrap();
        assert_eq!(linalg::max_abs(&p.h), 0.0);
    }

    #[test]
    fn identity_pencil_objective_is_m() {
        let basis =
            Arc::new(PolynomialBasis::<f64>::total_degree(BoxDomain::symmetric(3), 2).unwrap());
        let r = basis.gram_matrix().unwrap();
        let k = basis.len();
        let pencil = SurrogatePencil {
            basis,
            h: r.clone(),
            h1: r.clone(),
            h2: DMatrix::zeros(k, k),
            r,
            m: 3,
            weighting: Weighting::LambdaMax,
        };
        let sol = minimize_surrogate(&pencil).unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-8);
        assert!(sol.feature_map.orthonormality_defect(&pencil.r) < 1e-8);
    }

    #[test]
    fn diagonal_pencil_picks_smallest_entry() {
        let basis =
            Arc::new(PolynomialBasis::<f64>::total_degree(BoxDomain::symmetric(2), 2).unwrap());
        let k = basis.len();
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 0.5, 3.0, 1.0]));
        let pencil = SurrogatePencil {
            basis,
            h: h.clone(),
            h1: h,
            h2: DMatrix::zeros(k, k),
            r: DMatrix::identity(k, k),
            m: 1,
            weighting: Weighting::LambdaMax,
        };
        let sol = minimize_surrogate(&pencil).unwrap();
        let g = sol.feature_map.coefficients();
        assert!((g[(2, 0)] - 1.0).abs() < 1e-14);
        assert!((sol.objective - 0.5).abs() < 1e-14);
    }

    /// Generalized eigenvalues of a small pencil, computed independently with a
    /// separate Legendre implementation, brute-force 2-D quadrature for `R`
    /// and a dense `eigh(H, R)`.
    #[test]
    fn small_pencil_matches_independent_eigensolve() {
        let o = FnOracle::new(
            2,
            1,
            |x: &[f64], y: &[f64]| (x[0] + y[0] * x[1] + x[0] * x[1]).powi(2),
            |x: &[f64], y: &[f64]| {
                let s = x[0] + y[0] * x[1] + x[0] * x[1];
                DVector::from_vec(vec![2.0 * s * (1.0 + x[1]), 2.0 * s * (y[0] + x[0])])
            },
        );
        let s = tensorized(
            &[[0.3, -0.5], [-0.7, 0.2], [0.9, 0.6], [-0.1, -0.8]],
            &[-0.4, 0.75],
        );
        let basis = Arc::new(PolynomialBasis::total_degree(BoxDomain::symmetric(2), 2).unwrap());
        let pencil = assemble_pencil(&o, &s, basis, 1).unwrap();
        assert!((pencil.h.trace() - 336.5896678846342).abs() < 1e-9);
        assert!((pencil.h1.trace() - 815.9937889212953).abs() < 1e-9);
        let expected = [
            0.0,
            0.003698309590837808,
            0.08986378488211225,
            2.119030780956775,
            31.342996924867833,
        ];
        let sol = minimize_surrogate(&pencil).unwrap();
        for (got, want) in sol.spectrum.iter().zip(expected) {
            assert!(
                (got - want).abs() <= 1e-9 * want.max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn pencil_json_round_trip() {
        let basis =
            Arc::new(PolynomialBasis::<f64>::total_degree(BoxDomain::symmetric(2), 2).unwrap());
        let r = basis.gram_matrix().unwrap();
        let g = orthonormalize(basis.clone(), &DMatrix::identity(5, 2)).unwrap();
        let pencil = SurrogatePencil {
            basis,
            h: r.clone() * 0.5,
            h1: r.clone(),
            h2: r.clone() * 0.5,
            r,
            m: 2,
            weighting: Weighting::LambdaM,
        };
        let back = SurrogatePencil::<f64>::from_json(&pencil.to_json().unwrap()).unwrap();
        assert_eq!(back.h, pencil.h);
        assert_eq!(back.weighting, Weighting::LambdaM);
        assert_eq!(
            back.quadratic_form(g.coefficients()),
            pencil.quadratic_form(g.coefficients())
        );
    }
}
