//! Monte-Carlo estimators of the Poincaré loss, its truncated form, the
//! surrogate, and the regression error, plus the projector lemma and the
//! polynomial small-deviation bound.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::GradientOracle;
use crate::polybasis::FeatureMap;
use crate::sampling::{sample_uniform, PairSample, TensorizedSample};
use crate::scalar::Real;
use crate::surrogate::{ConditionalSpectrum, Weighting};

/// Orthogonal projector onto the column span of `b`.
pub fn projector<T: Real>(b: &DMatrix<T>) -> DMatrix<T> {
    linalg::projector(b)
}

/// Mean of `f(0..n)`, evaluated in parallel and summed in index order.
pub(crate) fn ordered_mean<T, F>(n: usize, f: F) -> Result<T>
where
    T: Real,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if n == 0 {
        return Err(Error::invalid("empty sample"));
    }
    let parts: Vec<Result<T>> = (0..n).into_par_iter().map(f).collect();
    let mut acc = T::zero();
    for p in parts {
        acc += p?;
    }
    Ok(acc / T::from_usize_lossy(n))
}

/// `‖b − Q Qᵀ b‖²` for orthonormal `Q`.
fn residual_sq<T: Real>(q: &DMatrix<T>, b: &DVector<T>) -> T {
    if q.ncols() == 0 {
        return b.norm_squared();
    }
    (b - q * q.tr_mul(b)).norm_squared()
}

fn check_oracle<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    g: &FeatureMap<T>,
) -> Result<()> {
    let d = g.basis().dim();
    if oracle.dim_x() != d {
        return Err(Error::DimensionMismatch {
            what: "oracle x-dimension",
            expected: d,
            found: oracle.dim_x(),
        });
    }
    Ok(())
}

/// `Ê‖∇ₓu‖²` over the pairs.
pub fn grad_energy<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    pairs: &PairSample<T>,
) -> Result<T> {
    ordered_mean(pairs.len(), |k| {
        Ok(oracle
            .gradient_x(pairs.x_row(k).as_slice(), pairs.y_row(k).as_slice())
            .norm_squared())
    })
}

/// `Ĵ(g) = mean ‖∇ₓu − Π_{∇g(x)} ∇ₓu‖²` over arbitrary pairs.
pub fn loss_j<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    g: &FeatureMap<T>,
    pairs: &PairSample<T>,
) -> Result<T> {
    check_oracle(oracle, g)?;
    ordered_mean(pairs.len(), |k| {
        let x = pairs.x_row(k);
        let q = linalg::range_basis(&g.jacobian(x.as_slice())?);
        let b = oracle.gradient_x(x.as_slice(), pairs.y_row(k).as_slice());
        Ok(residual_sq(&q, &b))
    })
}

/// `Ĵ(g)` over the full product of a tensorized sample; identical to
/// [`loss_j`] on `sample.pairs()` but factors the Jacobian per x-point.
pub fn loss_j_tensorized<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    g: &FeatureMap<T>,
    sample: &TensorizedSample<T>,
) -> Result<T> {
    check_oracle(oracle, g)?;
    let ys: Vec<DVector<T>> = (0..sample.n_y()).map(|j| sample.y_row(j)).collect();
    let inv_ny = T::one() / T::from_usize_lossy(ys.len());
    ordered_mean(sample.n_x(), |i| {
        let x = sample.x_row(i);
        let q = linalg::range_basis(&g.jacobian(x.as_slice())?);
        let s = ys.iter().fold(T::zero(), |acc, y| {
            acc + residual_sq(&q, &oracle.gradient_x(x.as_slice(), y.as_slice()))
        });
        Ok(s * inv_ny)
    })
}

/// `Ĵ_m(g) = mean_{i,j} ‖Π⊥_{∇g(xᵢ)} Π_{Vᵢ} ∇ₓu(xᵢ, yⱼ)‖²`.
pub fn loss_j_truncated<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    g: &FeatureMap<T>,
    sample: &TensorizedSample<T>,
    spectrum: &ConditionalSpectrum<T>,
) -> Result<T> {
    check_oracle(oracle, g)?;
    spectrum.check_sample(sample)?;
    let ys: Vec<DVector<T>> = (0..sample.n_y()).map(|j| sample.y_row(j)).collect();
    let inv_ny = T::one() / T::from_usize_lossy(ys.len());
    ordered_mean(sample.n_x(), |i| {
        let x = sample.x_row(i);
        let q = linalg::range_basis(&g.jacobian(x.as_slice())?);
        let v = spectrum.directions(i);
        let s = ys.iter().fold(T::zero(), |acc, y| {
            let b = oracle.gradient_x(x.as_slice(), y.as_slice());
            acc + residual_sq(&q, &(v * v.tr_mul(&b)))
        });
        Ok(s * inv_ny)
    })
}

/// `L̂_m(g) = mean_i λ₁(M̂ᵢ) ‖Π⊥_{Vᵢ} ∇g(xᵢ)‖²_F`.
pub fn loss_l<T: Real>(
    g: &FeatureMap<T>,
    sample: &TensorizedSample<T>,
    spectrum: &ConditionalSpectrum<T>,
) -> Result<T> {
    loss_l_weighted(g, sample, spectrum, Weighting::LambdaMax)
}

pub fn loss_l_weighted<T: Real>(
    g: &FeatureMap<T>,
    sample: &TensorizedSample<T>,
    spectrum: &ConditionalSpectrum<T>,
    weighting: Weighting,
) -> Result<T> {
    spectrum.check_sample(sample)?;
    ordered_mean(sample.n_x(), |i| {
        let jac = g.jacobian(sample.x_row(i).as_slice())?;
        let v = spectrum.directions(i);
        let perp = &jac - v * v.tr_mul(&jac);
        Ok(spectrum.weight(i, weighting) * perp.norm_squared())
    })
}

fn orthonormality_gap<T: Real>(a: &DMatrix<T>) -> T {
    let k = a.ncols();
    linalg::max_abs(&(a.tr_mul(a) - DMatrix::identity(k, k)))
}

/// Returns `(‖Π⊥_W V‖²_F, ‖Π⊥_V W‖²_F + n − m)`, which agree for any
/// orthonormal `V ∈ ℝ^{d×n}`, `W ∈ ℝ^{d×m}`.
pub fn projection_norm_lemma_check<T: Real>(v: &DMatrix<T>, w: &DMatrix<T>) -> Result<(T, T)> {
    if v.nrows() != w.nrows() {
        return Err(Error::DimensionMismatch {
            what: "lemma operand rows",
            expected: v.nrows(),
            found: w.nrows(),
        });
    }
    let tol = T::tol(1e-10);
    if orthonormality_gap(v) > tol || orthonormality_gap(w) > tol {
        return Err(Error::invalid(
            "projection lemma requires orthonormal columns",
        ));
    }
    let lhs = (v - w * w.tr_mul(v)).norm_squared();
    let rhs = (w - v * v.tr_mul(w)).norm_squared() + T::from_usize_lossy(v.ncols())
        - T::from_usize_lossy(w.ncols());
    Ok((lhs, rhs))
}

/// Both sides of the small-deviation bound on the truncated loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationBound<T> {
    pub j_trunc: T,
    pub l_hat: T,
    /// Empirical median of `det(∇gᵀ∇g)`.
    pub q_median: T,
    pub kappa: T,
    pub bound_rhs: T,
}

impl<T: Real> DeviationBound<T> {
    pub fn holds(&self, slack: T) -> bool {
        self.j_trunc <= self.bound_rhs + slack
    }
}

/// Evaluates `J_m ≤ 2 κ^{2ℓm/(1+2ℓm)} L^{1/(1+2ℓm)}` with
/// `κ = 2⁵ s⁻¹ m^{1/(4ℓ)} q̂^{−1/(2ℓm)}`, `s = 1/d`, and `q̂` the median of
/// `det(∇g(X)ᵀ∇g(X))` over `n_median` fresh uniform draws seeded by `seed`.
///
/// The oracle must already satisfy `‖∇ₓu‖₂ ≤ 1`.
#[allow(clippy::too_many_arguments)]
pub fn deviation_bound_check<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    g: &FeatureMap<T>,
    sample: &TensorizedSample<T>,
    spectrum: &ConditionalSpectrum<T>,
    ell: usize,
    n_median: usize,
    seed: u64,
) -> Result<DeviationBound<T>> {
    let m = g.m();
    if m < 2 {
        return Err(Error::invalid(format!(
            "deviation bound needs m >= 2, got m = {m}"
        )));
    }
    if ell == 0 {
        return Err(Error::invalid("deviation bound needs ell >= 1"));
    }
    if let Some(b) = oracle.sup_grad_bound() {
        if b > T::one() + T::tol(1e-12) {
            return Err(Error::invalid(format!(
                "gradient bound {b} exceeds 1; rescale the oracle first"
            )));
        }
    }
    let j_trunc = loss_j_truncated(oracle, g, sample, spectrum)?;
    let l_hat = loss_l(g, sample, spectrum)?;
    let domain = g.basis().domain();
    let xs = sample_uniform(domain, n_median, seed)?;
    let dets: Vec<Result<T>> = (0..n_median)
        .into_par_iter()
        .map(|k| {
            let row: Vec<T> = xs.row(k).iter().copied().collect();
            let jac = g.jacobian(&row)?;
            Ok(jac.tr_mul(&jac).determinant())
        })
        .collect();
    let mut dets = dets.into_iter().collect::<Result<Vec<T>>>()?;
    dets.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = n_median / 2;
    let q_median = if n_median % 2 == 1 {
        dets[mid]
    } else {
        (dets[mid - 1] + dets[mid]) * T::lit(0.5)
    };
    if q_median <= T::zero() {
        return Err(Error::DegenerateFeatureMap);
    }
    let s = domain.s_concavity();
    let lm = T::from_usize_lossy(ell * m);
    let mf = T::from_usize_lossy(m);
    let ellf = T::from_usize_lossy(ell);
    let one = T::one();
    let two = T::lit(2.0);
    let kappa =
        T::lit(32.0) / s * mf.powf(one / (T::lit(4.0) * ellf)) * q_median.powf(-one / (two * lm));
    let denom = one + two * lm;
    let bound_rhs = if l_hat <= T::zero() {
        T::zero()
    } else {
        two * kappa.powf(two * lm / denom) * l_hat.powf(one / denom)
    };
    Ok(DeviationBound {
        j_trunc,
        l_hat,
        q_median,
        kappa,
        bound_rhs,
    })
}

/// `(mean |u(x,y) − f(g(x), y)|²)^{1/2}` over the pairs.
pub fn regression_error<T, O, F>(
    oracle: &O,
    g: &FeatureMap<T>,
    f: F,
    pairs: &PairSample<T>,
) -> Result<T>
where
    T: Real,
    O: GradientOracle<T> + ?Sized,
    F: Fn(&DVector<T>, &[T]) -> T + Sync + Send,
{
    check_oracle(oracle, g)?;
    let mse = ordered_mean(pairs.len(), |k| {
        let x = pairs.x_row(k);
        let y = pairs.y_row(k);
        let z = g.eval(x.as_slice())?;
        let r = oracle.value(x.as_slice(), y.as_slice()) - f(&z, y.as_slice());
        Ok(r * r)
    })?;
    Ok(mse.sqrt())
}

/// One evaluation of every loss on a shared tensorized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub tag: String,
    pub n_x: usize,
    pub n_y: usize,
    pub j_hat: T,
    pub j_trunc_hat: T,
    pub l_hat: T,
    pub epsilon_hat: T,
    pub grad_energy: T,
    pub e_hat: Option<T>,
}

#[derive(Serialize)]
struct LossRow<'a> {
    tag: &'a str,
    #[serde(rename = "n_X")]
    n_x: usize,
    #[serde(rename = "n_Y")]
    n_y: usize,
    #[serde(rename = "J_hat")]
    j_hat: f64,
    #[serde(rename = "J_trunc_hat")]
    j_trunc_hat: f64,
    #[serde(rename = "L_hat")]
    l_hat: f64,
    epsilon_hat: f64,
    e_hat: Option<f64>,
}

impl<T: Real> LossReport<T> {
    pub fn evaluate<O: GradientOracle<T> + ?Sized>(
        tag: impl Into<String>,
        oracle: &O,
        g: &FeatureMap<T>,
        sample: &TensorizedSample<T>,
        spectrum: &ConditionalSpectrum<T>,
    ) -> Result<Self> {
        Ok(Self {
            tag: tag.into(),
            n_x: sample.n_x(),
            n_y: sample.n_y(),
            j_hat: loss_j_tensorized(oracle, g, sample)?,
            j_trunc_hat: loss_j_truncated(oracle, g, sample, spectrum)?,
            l_hat: loss_l(g, sample, spectrum)?,
            epsilon_hat: spectrum.epsilon(g.m()),
            grad_energy: grad_energy(oracle, &sample.pairs())?,
            e_hat: None,
        })
    }

    pub fn with_e_hat(mut self, e_hat: T) -> Self {
        self.e_hat = Some(e_hat);
        self
    }
}

/// Writes reports as CSV with header
/// `tag,n_X,n_Y,J_hat,J_trunc_hat,L_hat,epsilon_hat,e_hat`.
pub fn write_loss_csv<T: Real, W: Write>(writer: W, reports: &[LossReport<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(LossRow {
            tag: &r.tag,
            n_x: r.n_x,
            n_y: r.n_y,
            j_hat: r.j_hat.as_f64(),
            j_trunc_hat: r.j_trunc_hat.as_f64(),
            l_hat: r.l_hat.as_f64(),
            epsilon_hat: r.epsilon_hat.as_f64(),
            e_hat: r.e_hat.map(|v| v.as_f64()),
        })?;
    }
    if reports.is_empty() {
        w.write_record([
            "tag",
            "n_X",
            "n_Y",
            "J_hat",
            "J_trunc_hat",
            "L_hat",
            "epsilon_hat",
            "e_hat",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::oracle::FnOracle;
    use crate::polybasis::{orthonormalize, PolynomialBasis};
    use crate::sampling::{build_tensorized, BoxDomain};
    use crate::surrogate::estimate_conditional_spectrum;

    fn linear_map(d: usize, coords: &[usize]) -> FeatureMap<f64> {
        let basis = Arc::new(PolynomialBasis::total_degree(BoxDomain::symmetric(d), 2).unwrap());
        let mut g = DMatrix::zeros(basis.len(), coords.len());
        for (c, &k) in coords.iter().enumerate() {
            g[(k, c)] = 1.0;
        }
        orthonormalize(basis, &g).unwrap()
    }

    fn x1_oracle(d: usize) -> impl GradientOracle<f64> {
        FnOracle::new(
            d,
            1,
            |x: &[f64], _: &[f64]| x[0],
            move |_: &[f64], _: &[f64]| {
                let mut g = DVector::zeros(d);
                g[0] = 1.0;
                g
            },
        )
    }

    #[test]
    fn projector_examples() {
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let mut p = DMatrix::zeros(3, 3);
        p[(0, 0)] = 1.0;
        assert!(linalg::max_abs(&(projector(&e1) - &p)) < 1e-15);
        let twice = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(linalg::max_abs(&(projector(&twice) - &p)) < 1e-14);
        assert_eq!(
            linalg::max_abs(&projector(&DMatrix::<f64>::zeros(3, 2))),
            0.0
        );
    }

    #[test]
    fn loss_j_hand_cases() {
        let o = x1_oracle(2);
        let s =
            build_tensorized(&BoxDomain::symmetric(2), &BoxDomain::symmetric(1), 20, 2, 4).unwrap();
        let pairs = s.pairs();
        assert!(loss_j(&o, &linear_map(2, &[0]), &pairs).unwrap() < 1e-20);
        assert!((loss_j(&o, &linear_map(2, &[1]), &pairs).unwrap() - 1.0).abs() < 1e-14);
        assert!(loss_j(&o, &linear_map(2, &[0, 1]), &pairs).unwrap() < 1e-20);
        let tz = loss_j_tensorized(&o, &linear_map(2, &[1]), &s).unwrap();
        assert!((tz - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lemma_trivial_cases() {
        let v = DMatrix::<f64>::identity(4, 4);
        let w = DMatrix::<f64>::identity(4, 2);
        let (l, r) = projection_norm_lemma_check(&v, &w).unwrap();
        assert!((l - 2.0).abs() < 1e-14 && (r - 2.0).abs() < 1e-14);
        let (l, r) = projection_norm_lemma_check(&w, &w).unwrap();
        assert!(l.abs() < 1e-14 && r.abs() < 1e-14);
        assert!(projection_norm_lemma_check(&(w.clone() * 2.0), &w).is_err());
    }

    #[test]
    fn deviation_bound_rejects_single_feature() {
        let o = x1_oracle(2);
        let s =
            build_tensorized(&BoxDomain::symmetric(2), &BoxDomain::symmetric(1), 5, 2, 4).unwrap();
        let sp = estimate_conditional_spectrum(&o, &s, 1).unwrap();
        let err = deviation_bound_check(&o, &linear_map(2, &[0]), &s, &sp, 1, 11, 0);
        assert!(err.is_err());
    }

    #[test]
    fn regression_error_is_root_mean_square() {
        let o = x1_oracle(2);
        let s =
            build_tensorized(&BoxDomain::symmetric(2), &BoxDomain::symmetric(1), 9, 2, 5).unwrap();
        let pairs = s.pairs();
        let g = linear_map(2, &[0]);
        let zero = regression_error(&o, &g, |_, _| 0.0, &pairs).unwrap();
        let rms = (0..pairs.len())
            .map(|k| pairs.x_row(k)[0].powi(2))
            .sum::<f64>()
            / pairs.len() as f64;
        assert!((zero - rms.sqrt()).abs() < 1e-14);
        // g(x) = √3 x₁ for the normalized degree-one Legendre polynomial
        let c = g.coefficients()[(0, 0)];
        let scale = 3f64.sqrt() * c;
        let exact = regression_error(&o, &g, |z, _| z[0] / scale, &pairs).unwrap();
        assert!(exact < 1e-14);
    }

    #[test]
    fn csv_header_and_rows() {
        let rep = LossReport {
            tag: "t".into(),
            n_x: 3,
            n_y: 2,
            j_hat: 0.5,
            j_trunc_hat: 0.25,
            l_hat: 1.0,
            epsilon_hat: 0.125,
            grad_energy: 2.0,
            e_hat: None,
        };
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[rep.clone(), rep.with_e_hat(0.1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "tag,n_X,n_Y,J_hat,J_trunc_hat,L_hat,epsilon_hat,e_hat"
        );
        assert_eq!(lines[1], "t,3,2,0.5,0.25,1.0,0.125,");
        assert_eq!(lines[2], "t,3,2,0.5,0.25,1.0,0.125,0.1");
    }
}
