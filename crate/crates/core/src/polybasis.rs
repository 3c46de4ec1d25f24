//! Tensorized orthonormal Legendre dictionaries, their gradients, the exact
//! gradient Gram matrix `R = E[∇Φ(X)ᵀ ∇Φ(X)]`, and R-orthonormal feature maps
//! `g(x) = Gᵀ Φ(x)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::BoxDomain;
use crate::scalar::Real;

/// Values and first derivatives of the orthonormal Legendre polynomials
/// `√(2n+1) Pₙ(t)`, `n = 0..=max_degree`, orthonormal for the uniform
/// probability measure on `(-1, 1)`.
pub fn legendre_orthonormal<T: Real>(t: T, max_degree: usize) -> (Vec<T>, Vec<T>) {
    let mut p = Vec::with_capacity(max_degree + 1);
    let mut dp = Vec::with_capacity(max_degree + 1);
    p.push(T::one());
    dp.push(T::zero());
    if max_degree >= 1 {
        p.push(t);
        dp.push(T::one());
    }
    for n in 1..max_degree {
        let nf = T::from_usize_lossy(n);
        let two_n1 = T::from_usize_lossy(2 * n + 1);
        let next = (two_n1 * t * p[n] - nf * p[n - 1]) / (nf + T::one());
        // P'ₙ₊₁ = P'ₙ₋₁ + (2n+1) Pₙ
        let dnext = dp[n - 1] + two_n1 * p[n];
        p.push(next);
        dp.push(dnext);
    }
    for (n, (v, dv)) in p.iter_mut().zip(dp.iter_mut()).enumerate() {
        let scale = T::from_usize_lossy(2 * n + 1).sqrt();
        *v *= scale;
        *dv *= scale;
    }
    (p, dp)
}

/// Gauss–Legendre rule with `n` nodes on `(-1, 1)`, weights normalized to sum
/// to one (uniform probability measure). Exact for polynomials of degree `2n-1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            deriv = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / deriv;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Total-degree multi-indices of length `d`, degree-major; within a degree
/// the indices are in descending lexicographic order (`(2,0) < (1,1) < (0,2)`
/// in position).
pub fn total_degree_indices(
    d: usize,
    max_degree: usize,
    include_constant: bool,
) -> Vec<Vec<usize>> {
    fn fill(prefix: &mut Vec<usize>, d: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == d - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            fill(prefix, d, remaining - first, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let start = if include_constant { 0 } else { 1 };
    for degree in start..=max_degree {
        fill(&mut Vec::with_capacity(d), d, degree, &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// A multivariate polynomial dictionary `Φ: ℝᵈ → ℝᴷ` made of products of
/// orthonormal Legendre polynomials over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialBasis<T: Real> {
    domain: BoxDomain<T>,
    degree_bound: usize,
    multi_indices: Vec<Vec<usize>>,
}

impl<T: Real> PolynomialBasis<T> {
    /// All total-degree `≤ degree_bound` products except the constant, so that
    /// `rank ∇Φ(x) = d` everywhere and every coordinate function is in the span.
    pub fn total_degree(domain: BoxDomain<T>, degree_bound: usize) -> Result<Self> {
        Self::build(domain, degree_bound, false)
    }

    /// Same family including the constant function; used as the per-group
    /// spaces `V_α` of the grouped approximations.
    pub fn total_degree_with_constant(domain: BoxDomain<T>, degree_bound: usize) -> Result<Self> {
        Self::build(domain, degree_bound, true)
    }

    fn build(domain: BoxDomain<T>, degree_bound: usize, include_constant: bool) -> Result<Self> {
        if !domain.is_proper() {
            return Err(Error::invalid("polynomial basis needs a box with lo < hi"));
        }
        if degree_bound == 0 && !include_constant {
            return Err(Error::invalid("degree bound must be at least 1"));
        }
        let multi_indices = total_degree_indices(domain.dim(), degree_bound, include_constant);
        Ok(Self {
            domain,
            degree_bound,
            multi_indices,
        })
    }

    /// Builds a basis from an explicit list of multi-indices.
    pub fn from_multi_indices(
        domain: BoxDomain<T>,
        multi_indices: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if !domain.is_proper() {
            return Err(Error::invalid("polynomial basis needs a box with lo < hi"));
        }
        if multi_indices.is_empty() {
            return Err(Error::invalid("empty multi-index set"));
        }
        for a in &multi_indices {
            if a.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    what: "multi-index length",
                    expected: domain.dim(),
                    found: a.len(),
                });
            }
        }
        let degree_bound = multi_indices
            .iter()
            .map(|a| a.iter().sum())
            .max()
            .unwrap_or(0);
        Ok(Self {
            domain,
            degree_bound,
            multi_indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Number of basis functions `K`.
    pub fn len(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multi_indices.is_empty()
    }

    pub fn degree_bound(&self) -> usize {
        self.degree_bound
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.multi_indices
    }

    /// Expected `K` for the full total-degree set without constant: `C(d+p, d) − 1`.
    pub fn full_size(d: usize, degree_bound: usize) -> usize {
        binomial(d + degree_bound, d) - 1
    }

    /// Position of the coordinate function `x ↦ x_k` (multi-index `e_k`).
    pub fn linear_index(&self, k: usize) -> Option<usize> {
        self.multi_indices
            .iter()
            .position(|a| a.iter().enumerate().all(|(i, &e)| e == usize::from(i == k)))
    }

    /// `dt/dx` for coordinate `k` of the affine map from the box onto `(-1,1)`.
    pub fn coordinate_scale(&self, k: usize) -> T {
        T::lit(2.0) / (self.domain.hi()[k] - self.domain.lo()[k])
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn tables(&self, x: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut vals = Vec::with_capacity(self.dim());
        let mut ders = Vec::with_capacity(self.dim());
        for (k, &xk) in x.iter().enumerate() {
            let lo = self.domain.lo()[k];
            let hi = self.domain.hi()[k];
            let t = (xk + xk - lo - hi) / (hi - lo);
            let (v, dv) = legendre_orthonormal(t, self.degree_bound);
            let s = self.coordinate_scale(k);
            vals.push(v);
            ders.push(dv.into_iter().map(|g| g * s).collect());
        }
        (vals, ders)
    }

    /// `Φ(x) ∈ ℝᴷ`.
    pub fn eval(&self, x: &[T]) -> Result<DVector<T>> {
        self.check_point(x)?;
        let (vals, _) = self.tables(x);
        Ok(DVector::from_iterator(
            self.len(),
            self.multi_indices.iter().map(|a| {
                a.iter()
                    .enumerate()
                    .fold(T::one(), |acc, (k, &e)| acc * vals[k][e])
            }),
        ))
    }

    /// `∇Φ(x) ∈ ℝ^{d×K}`: column `j` is the gradient of basis function `j`.
    pub fn gradient(&self, x: &[T]) -> Result<DMatrix<T>> {
        self.check_point(x)?;
        let (vals, ders) = self.tables(x);
        let d = self.dim();
        let mut out = DMatrix::zeros(d, self.len());
        for (j, a) in self.multi_indices.iter().enumerate() {
            for k in 0..d {
                let mut prod = ders[k][a[k]];
                if prod == T::zero() {
                    continue;
                }
                for (i, &e) in a.iter().enumerate() {
                    if i != k {
                        prod *= vals[i][e];
                    }
                }
                out[(k, j)] = prod;
            }
        }
        Ok(out)
    }

    /// Exact `R = E[∇Φ(X)ᵀ ∇Φ(X)]` under the uniform measure.
    ///
    /// The integrand is a sum over coordinates of products of univariate
    /// polynomials, so the tensorized Gauss–Legendre rule factorizes into
    /// one-dimensional rules with `degree_bound + 1` nodes (exact up to degree
    /// `2·degree_bound + 1`).
    pub fn gram_matrix(&self) -> Result<DMatrix<T>> {
        let p = self.degree_bound;
        let (nodes, weights) = gauss_legendre(p + 1);
        let mut mass = DMatrix::<T>::zeros(p + 1, p + 1);
        let mut stiff = DMatrix::<T>::zeros(p + 1, p + 1);
        for (&t, &w) in nodes.iter().zip(&weights) {
            let (v, dv) = legendre_orthonormal(T::lit(t), p);
            let w = T::lit(w);
            for a in 0..=p {
                for b in 0..=p {
                    mass[(a, b)] += w * v[a] * v[b];
                    stiff[(a, b)] += w * dv[a] * dv[b];
                }
            }
        }
        let k_len = self.len();
        let d = self.dim();
        let mut r = DMatrix::zeros(k_len, k_len);
        for (ia, a) in self.multi_indices.iter().enumerate() {
            for (ib, b) in self.multi_indices.iter().enumerate().skip(ia) {
                let mut total = T::zero();
                for k in 0..d {
                    let s = self.coordinate_scale(k);
                    let mut term = stiff[(a[k], b[k])] * s * s;
                    for i in 0..d {
                        if i != k {
                            term *= mass[(a[i], b[i])];
                        }
                    }
                    total += term;
                }
                r[(ia, ib)] = total;
                r[(ib, ia)] = total;
            }
        }
        linalg::cholesky(&r, "gradient Gram matrix")?;
        Ok(r)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            d: self.dim(),
            degree_bound: self.degree_bound,
            multi_indices: self.multi_indices.clone(),
            lo: self.domain.lo().iter().map(|v| v.as_f64()).collect(),
            hi: self.domain.hi().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_descriptor(desc: &BasisDescriptor) -> Result<Self> {
        let lo = desc.lo.iter().map(|v| T::lit(*v)).collect();
        let hi = desc.hi.iter().map(|v| T::lit(*v)).collect();
        let domain = BoxDomain::new(lo, hi)?;
        if domain.dim() != desc.d {
            return Err(Error::DimensionMismatch {
                what: "basis descriptor bounds",
                expected: desc.d,
                found: domain.dim(),
            });
        }
        let mut basis = Self::from_multi_indices(domain, desc.multi_indices.clone())?;
        basis.degree_bound = desc.degree_bound.max(basis.degree_bound);
        Ok(basis)
    }
}

/// Serializable description of a [`PolynomialBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub d: usize,
    pub degree_bound: usize,
    pub multi_indices: Vec<Vec<usize>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Feature map `g(x) = Gᵀ Φ(x)` with `G ∈ ℝ^{K×m}`.
#[derive(Debug, Clone)]
pub struct FeatureMap<T: Real> {
    basis: Arc<PolynomialBasis<T>>,
    coefficients: DMatrix<T>,
}

impl<T: Real> FeatureMap<T> {
    /// Wraps a coefficient matrix without re-orthonormalizing it.
    pub fn from_coefficients(
        basis: Arc<PolynomialBasis<T>>,
        coefficients: DMatrix<T>,
    ) -> Result<Self> {
        if coefficients.nrows() != basis.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient rows",
                expected: basis.len(),
                found: coefficients.nrows(),
            });
        }
        let m = coefficients.ncols();
        if m == 0 || m > basis.len() {
            return Err(Error::invalid(format!(
                "feature count m = {m} must satisfy 1 <= m <= K = {}",
                basis.len()
            )));
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &Arc<PolynomialBasis<T>> {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<T> {
        &self.coefficients
    }

    pub fn m(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn eval(&self, x: &[T]) -> Result<DVector<T>> {
        Ok(self.coefficients.tr_mul(&self.basis.eval(x)?))
    }

    /// `∇g(x) = ∇Φ(x) G ∈ ℝ^{d×m}`.
    pub fn jacobian(&self, x: &[T]) -> Result<DMatrix<T>> {
        Ok(self.basis.gradient(x)? * &self.coefficients)
    }

    /// `max |Gᵀ R G − I|`.
    pub fn orthonormality_defect(&self, gram: &DMatrix<T>) -> T {
        let m = self.m();
        let g = &self.coefficients;
        linalg::max_abs(&(g.transpose() * gram * g - DMatrix::identity(m, m)))
    }

    pub fn to_file(&self) -> FeatureMapFile {
        let desc = self.basis.descriptor();
        let default_box = desc.lo.iter().all(|v| *v == -1.0) && desc.hi.iter().all(|v| *v == 1.0);
        let k = self.coefficients.nrows();
        let m = self.m();
        let mut g = Vec::with_capacity(k * m);
        for i in 0..k {
            for j in 0..m {
                g.push(self.coefficients[(i, j)].as_f64());
            }
        }
        FeatureMapFile {
            d: desc.d,
            degree_bound: desc.degree_bound,
            multi_indices: desc.multi_indices,
            g,
            m,
            lo: (!default_box).then_some(desc.lo),
            hi: (!default_box).then_some(desc.hi),
        }
    }

    pub fn from_file(file: &FeatureMapFile) -> Result<Self> {
        let desc = BasisDescriptor {
            d: file.d,
            degree_bound: file.degree_bound,
            multi_indices: file.multi_indices.clone(),
            lo: file.lo.clone().unwrap_or_else(|| vec![-1.0; file.d]),
            hi: file.hi.clone().unwrap_or_else(|| vec![1.0; file.d]),
        };
        let basis = Arc::new(PolynomialBasis::from_descriptor(&desc)?);
        let k = basis.len();
        if file.g.len() != k * file.m {
            return Err(Error::DimensionMismatch {
                what: "G entries",
                expected: k * file.m,
                found: file.g.len(),
            });
        }
        let g = DMatrix::from_row_iterator(k, file.m, file.g.iter().map(|v| T::lit(*v)));
        Self::from_coefficients(basis, g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }
}

/// On-disk form of a [`FeatureMap`]: `G` is stored row-major (`K` rows of `m`).
/// `lo`/`hi` are omitted for the default box `(-1, 1)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMapFile {
    pub d: usize,
    pub degree_bound: usize,
    pub multi_indices: Vec<Vec<usize>>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

/// Generalized QR: returns `G` with `span(G) = span(G_raw)` and `Gᵀ R G = I_m`.
///
/// With `R = L Lᵀ`, the thin QR of `Lᵀ G_raw = Q S` (diagonal of `S` made
/// positive) gives `G = L⁻ᵀ Q`; an input that is already R-orthonormal comes
/// back unchanged.
pub fn orthonormalize<T: Real>(
    basis: Arc<PolynomialBasis<T>>,
    g_raw: &DMatrix<T>,
) -> Result<FeatureMap<T>> {
    let gram = basis.gram_matrix()?;
    orthonormalize_with_gram(basis, g_raw, &gram)
}

/// [`orthonormalize`] with a precomputed Gram matrix.
pub fn orthonormalize_with_gram<T: Real>(
    basis: Arc<PolynomialBasis<T>>,
    g_raw: &DMatrix<T>,
    gram: &DMatrix<T>,
) -> Result<FeatureMap<T>> {
    let k = basis.len();
    let m = g_raw.ncols();
    if g_raw.nrows() != k || gram.nrows() != k {
        return Err(Error::DimensionMismatch {
            what: "coefficient rows",
            expected: k,
            found: g_raw.nrows(),
        });
    }
    if m == 0 || m > k {
        return Err(Error::invalid(format!(
            "feature count m = {m} must satisfy 1 <= m <= K = {k}"
        )));
    }
    let chol = linalg::cholesky(gram, "gradient Gram matrix")?;
    let l = chol.l();
    let b = l.tr_mul(g_raw);
    let svals = linalg::svd_sorted(&b).singular_values;
    let cut = linalg::rank_rtol::<T>() * svals[0].max(T::zero());
    let rank = svals
        .iter()
        .filter(|s| **s > cut && **s > T::zero())
        .count();
    if rank < m {
        return Err(Error::RankDeficient { rank, expected: m });
    }
    let qr = b.qr();
    let mut q = qr.q();
    let s = qr.r();
    for j in 0..m {
        if s[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    let g = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or(Error::NotPositiveDefinite("gradient Gram matrix"))?;
    FeatureMap::from_coefficients(basis, g)
}
