//! Grouped reductions: coefficient tensors over products of per-group
//! orthonormal bases, two-group SVD truncation, HOSVD, and the block
//! decomposition of the Poincaré loss.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::GradientOracle;
use crate::polybasis::{gauss_legendre, BasisDescriptor, FeatureMap, PolynomialBasis};
use crate::sampling::{latin_hypercube, mix_seed, BoxDomain};
use crate::scalar::Real;

/// Disjoint, covering groups of 0-based coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn new(groups: Vec<Vec<usize>>, d: usize) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::invalid("a partition needs at least two groups"));
        }
        let mut seen = vec![false; d];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::invalid("partition groups must be nonempty"));
            }
            for &k in g {
                if k >= d {
                    return Err(Error::invalid(format!(
                        "coordinate {k} out of range for d = {d}"
                    )));
                }
                if seen[k] {
                    return Err(Error::invalid(format!(
                        "coordinate {k} appears in two groups"
                    )));
                }
                seen[k] = true;
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("coordinate {k} is not covered")));
        }
        Ok(Self { groups })
    }

    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let groups = sizes
            .iter()
            .map(|&s| {
                let g: Vec<usize> = (start..start + s).collect();
                start += s;
                g
            })
            .collect();
        Self::new(groups, start)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    /// Restriction of a box to the coordinates of group `k`.
    pub fn sub_domain<T: Real>(&self, domain: &BoxDomain<T>, k: usize) -> Result<BoxDomain<T>> {
        let g = &self.groups[k];
        BoxDomain::new(
            g.iter().map(|&i| domain.lo()[i]).collect(),
            g.iter().map(|&i| domain.hi()[i]).collect(),
        )
    }
}

/// Dense order-N tensor in row-major layout (last index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor<T: Real> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

impl<T: Real> CoefficientTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::invalid("tensor dimensions must be positive"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor entries",
                expected: n,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![T::zero(); n])
    }

    pub fn from_matrix(a: &DMatrix<T>) -> Self {
        let mut data = Vec::with_capacity(a.len());
        for i in 0..a.nrows() {
            data.extend(a.row(i).iter().copied());
        }
        Self {
            dims: vec![a.nrows(), a.ncols()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, index: &[usize]) -> T {
        let off: usize = strides(&self.dims)
            .iter()
            .zip(index)
            .map(|(s, i)| s * i)
            .sum();
        self.data[off]
    }

    pub fn norm_squared(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc + *v * *v)
    }

    /// Mode-`k` unfolding: `dims[k] × Π_{j≠k} dims[j]`, fibers as columns, the
    /// remaining modes flattened in ascending order with the last fastest.
    pub fn unfold(&self, mode: usize) -> DMatrix<T> {
        let n_k = self.dims[mode];
        let cols = self.data.len() / n_k;
        let st = strides(&self.dims);
        // entry offset = i_k·st[k] + outer·(st[k]·n_k) + inner, with inner < st[k]
        let inner = st[mode];
        let mut out = DMatrix::zeros(n_k, cols);
        for outer in 0..cols / inner {
            for i in 0..n_k {
                let base = outer * inner * n_k + i * inner;
                for r in 0..inner {
                    out[(i, outer * inner + r)] = self.data[base + r];
                }
            }
        }
        out
    }

    /// Inverse of [`Self::unfold`] for a tensor with `dims`.
    pub fn fold(mode: usize, mat: &DMatrix<T>, dims: Vec<usize>) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        if mat.nrows() != t.dims[mode] || mat.len() != t.data.len() {
            return Err(Error::DimensionMismatch {
                what: "folded matrix entries",
                expected: t.data.len(),
                found: mat.len(),
            });
        }
        let n_k = t.dims[mode];
        let inner = strides(&t.dims)[mode];
        let cols = mat.ncols();
        for outer in 0..cols / inner {
            for i in 0..n_k {
                let base = outer * inner * n_k + i * inner;
                for r in 0..inner {
                    t.data[base + r] = mat[(i, outer * inner + r)];
                }
            }
        }
        Ok(t)
    }

    /// `T ×_k A` for `A ∈ ℝ^{r × dims[k]}`.
    pub fn mode_product(&self, mode: usize, a: &DMatrix<T>) -> Result<Self> {
        if a.ncols() != self.dims[mode] {
            return Err(Error::DimensionMismatch {
                what: "mode product operand",
                expected: self.dims[mode],
                found: a.ncols(),
            });
        }
        let mut dims = self.dims.clone();
        dims[mode] = a.nrows();
        Self::fold(mode, &(a * self.unfold(mode)), dims)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::invalid("tensor shapes differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Self {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn to_file(&self) -> CoefficientTensorFile {
        CoefficientTensorFile {
            dims: self.dims.clone(),
            groups: None,
            basis: None,
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_file(file: &CoefficientTensorFile) -> Result<Self> {
        if let Some(g) = &file.groups {
            if g.len() != file.dims.len() {
                return Err(Error::DimensionMismatch {
                    what: "group labels",
                    expected: file.dims.len(),
                    found: g.len(),
                });
            }
        }
        if let Some(b) = &file.basis {
            if b.len() != file.dims.len() {
                return Err(Error::DimensionMismatch {
                    what: "basis descriptors",
                    expected: file.dims.len(),
                    found: b.len(),
                });
            }
        }
        Self::new(
            file.dims.clone(),
            file.data.iter().map(|v| T::lit(*v)).collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

/// JSON form of a coefficient tensor; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientTensorFile {
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<BasisDescriptor>>,
    pub data: Vec<f64>,
}

/// Coefficients `⟨⊗ φ_{iₖ}, u⟩` of `u` in the product of the per-group bases,
/// by a tensorized Gauss–Legendre rule with `nodes` points per coordinate.
pub fn project_coefficients<T, F>(
    f: F,
    partition: &GroupPartition,
    bases: &[PolynomialBasis<T>],
    nodes: usize,
) -> Result<CoefficientTensor<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    if bases.len() != partition.len() {
        return Err(Error::DimensionMismatch {
            what: "per-group bases",
            expected: partition.len(),
            found: bases.len(),
        });
    }
    if nodes == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    let (t1, w1) = gauss_legendre(nodes);
    let mut grids = Vec::with_capacity(bases.len());
    let mut weighted = Vec::with_capacity(bases.len());
    for (k, basis) in bases.iter().enumerate() {
        let group = partition.group(k);
        if basis.dim() != group.len() {
            return Err(Error::DimensionMismatch {
                what: "group basis dimension",
                expected: group.len(),
                found: basis.dim(),
            });
        }
        let dom = basis.domain();
        let n_pts = nodes.pow(group.len() as u32);
        let mut pts = DMatrix::zeros(n_pts, group.len());
        let mut bw = DMatrix::zeros(basis.len(), n_pts);
        for p in 0..n_pts {
            let mut rem = p;
            let mut w = T::one();
            for c in (0..group.len()).rev() {
                let q = rem % nodes;
                rem /= nodes;
                let half = (dom.hi()[c] - dom.lo()[c]) * T::lit(0.5);
                pts[(p, c)] = dom.lo()[c] + half * (T::lit(t1[q]) + T::one());
                w *= T::lit(w1[q]);
            }
            let row: Vec<T> = pts.row(p).iter().copied().collect();
            let phi = basis.eval(&row)?;
            bw.set_column(p, &(phi * w));
        }
        grids.push(pts);
        weighted.push(bw);
    }
    let dims: Vec<usize> = grids.iter().map(|g| g.nrows()).collect();
    let total: usize = dims.iter().product();
    let d = partition.dim();
    let st = strides(&dims);
    let values: Vec<T> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![T::zero(); d];
            for (k, g) in partition.groups().iter().enumerate() {
                let p = (flat / st[k]) % dims[k];
                for (c, &coord) in g.iter().enumerate() {
                    x[coord] = grids[k][(p, c)];
                }
            }
            f(&x)
        })
        .collect();
    let mut t = CoefficientTensor::new(dims, values)?;
    for (k, bw) in weighted.iter().enumerate() {
        t = t.mode_product(k, bw)?;
    }
    Ok(t)
}

/// Truncated SVD of a two-group coefficient matrix.
#[derive(Debug, Clone)]
pub struct SvdReduction<T: Real> {
    pub left_vectors: DMatrix<T>,
    pub right_vectors: DMatrix<T>,
    pub singular_values: DVector<T>,
    pub tail_energy: T,
    /// Every singular value, descending.
    pub all_singular_values: DVector<T>,
}

impl<T: Real> SvdReduction<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.left_vectors
            * DMatrix::from_diagonal(&self.singular_values)
            * self.right_vectors.transpose()
    }
}

pub fn two_group_svd<T: Real>(a: &DMatrix<T>, m: usize) -> Result<SvdReduction<T>> {
    let r = a.nrows().min(a.ncols());
    if m > r {
        return Err(Error::invalid(format!("rank {m} exceeds min(dims) = {r}")));
    }
    let svd = linalg::svd_sorted(a);
    let tail_energy = svd
        .singular_values
        .iter()
        .skip(m)
        .fold(T::zero(), |acc, s| acc + *s * *s);
    Ok(SvdReduction {
        left_vectors: svd.u.columns(0, m).into_owned(),
        right_vectors: svd.v.columns(0, m).into_owned(),
        singular_values: svd.singular_values.rows(0, m).into_owned(),
        tail_energy,
        all_singular_values: svd.singular_values,
    })
}

/// `‖u − 𝒫u‖² + Σ_{k>m} σ_k²`.
pub fn bilinear_error<T: Real>(a: &DMatrix<T>, m: usize, full_projection_residual: T) -> Result<T> {
    if full_projection_residual < T::zero() {
        return Err(Error::invalid("projection residual must be nonnegative"));
    }
    Ok(full_projection_residual + two_group_svd(a, m)?.tail_energy)
}

#[derive(Debug, Clone)]
pub struct Hosvd<T: Real> {
    pub factors: Vec<DMatrix<T>>,
    pub core: CoefficientTensor<T>,
    /// `‖T − core ×ₖ Uₖ‖²_F`.
    pub error_sq: T,
    /// Discarded squared singular values of each unfolding.
    pub mode_tails: Vec<T>,
}

fn check_ranks<T: Real>(t: &CoefficientTensor<T>, ranks: &[usize]) -> Result<()> {
    if ranks.len() != t.order() {
        return Err(Error::DimensionMismatch {
            what: "rank tuple",
            expected: t.order(),
            found: ranks.len(),
        });
    }
    for (k, (&r, &n)) in ranks.iter().zip(t.dims()).enumerate() {
        if r == 0 || r > n {
            return Err(Error::invalid(format!(
                "rank {r} for mode {k} must lie in 1..={n}"
            )));
        }
    }
    Ok(())
}

pub fn hosvd<T: Real>(t: &CoefficientTensor<T>, ranks: &[usize]) -> Result<Hosvd<T>> {
    check_ranks(t, ranks)?;
    let per_mode: Vec<(DMatrix<T>, T)> = (0..t.order())
        .into_par_iter()
        .map(|k| {
            let svd = linalg::svd_sorted(&t.unfold(k));
            let tail = svd
                .singular_values
                .iter()
                .skip(ranks[k])
                .fold(T::zero(), |acc, s| acc + *s * *s);
            (svd.u.columns(0, ranks[k]).into_owned(), tail)
        })
        .collect();
    let (factors, mode_tails): (Vec<_>, Vec<_>) = per_mode.into_iter().unzip();
    let mut core = t.clone();
    for (k, u) in factors.iter().enumerate() {
        core = core.mode_product(k, &u.transpose())?;
    }
    let error_sq = tucker_error_sq(t, &factors)?;
    Ok(Hosvd {
        factors,
        core,
        error_sq,
        mode_tails,
    })
}

/// `‖T − T ×ₖ UₖUₖᵀ‖²_F` for orthonormal factors.
pub fn tucker_error_sq<T: Real>(t: &CoefficientTensor<T>, factors: &[DMatrix<T>]) -> Result<T> {
    if factors.len() != t.order() {
        return Err(Error::DimensionMismatch {
            what: "factor count",
            expected: t.order(),
            found: factors.len(),
        });
    }
    let mut proj = t.clone();
    for (k, u) in factors.iter().enumerate() {
        proj = proj.mode_product(k, &(u * u.transpose()))?;
    }
    Ok(t.sub(&proj)?.norm_squared())
}

#[derive(Debug, Clone)]
pub struct NearOptimalityReport<T> {
    pub hosvd_error_sq: T,
    pub candidate_errors_sq: Vec<T>,
    /// `min_c (N · err²(c) − err²(HOSVD))`; nonnegative when every check passes.
    pub worst_margin: T,
    pub holds: bool,
}

/// Checks `err²(HOSVD) ≤ N · err²(candidate)` for every candidate tuple of
/// orthonormal factors with the given ranks.
pub fn hosvd_near_optimality_check<T: Real>(
    t: &CoefficientTensor<T>,
    ranks: &[usize],
    candidates: &[Vec<DMatrix<T>>],
) -> Result<NearOptimalityReport<T>> {
    let h = hosvd(t, ranks)?;
    let n = T::from_usize_lossy(t.order());
    let tol = T::tol(1e-10);
    let mut errs = Vec::with_capacity(candidates.len());
    let mut worst = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    for cand in candidates {
        if cand.len() != t.order() {
            return Err(Error::DimensionMismatch {
                what: "candidate factor count",
                expected: t.order(),
                found: cand.len(),
            });
        }
        for (k, u) in cand.iter().enumerate() {
            if u.nrows() != t.dims()[k] || u.ncols() != ranks[k] {
                return Err(Error::invalid(format!(
                    "candidate factor {k} has shape {}x{}, expected {}x{}",
                    u.nrows(),
                    u.ncols(),
                    t.dims()[k],
                    ranks[k]
                )));
            }
            let gap = linalg::max_abs(&(u.tr_mul(u) - DMatrix::identity(ranks[k], ranks[k])));
            if gap > tol {
                return Err(Error::invalid(format!(
                    "candidate factor {k} is not orthonormal"
                )));
            }
        }
        let e = tucker_error_sq(t, cand)?;
        worst = worst.min(n * e - h.error_sq);
        errs.push(e);
    }
    let scale = t.norm_squared().max(T::one());
    let holds = candidates.is_empty() || worst >= -T::tol(1e-12) * scale;
    Ok(NearOptimalityReport {
        hosvd_error_sq: h.error_sq,
        candidate_errors_sq: errs,
        worst_margin: if candidates.is_empty() {
            T::zero()
        } else {
            worst
        },
        holds,
    })
}

/// Per-group point sets whose Cartesian product forms the evaluation grid.
#[derive(Debug, Clone)]
pub struct GroupedGrid<T: Real> {
    pub per_group: Vec<DMatrix<T>>,
}

impl<T: Real> GroupedGrid<T> {
    /// Independent Latin hypercube designs of `n_per_group` points per group.
    pub fn latin_hypercube(
        partition: &GroupPartition,
        domain: &BoxDomain<T>,
        n_per_group: usize,
        seed: u64,
    ) -> Result<Self> {
        let per_group = (0..partition.len())
            .map(|k| {
                latin_hypercube(
                    &partition.sub_domain(domain, k)?,
                    n_per_group,
                    mix_seed(seed, k as u64),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_group })
    }

    pub fn total(&self) -> usize {
        self.per_group.iter().map(|g| g.nrows()).product()
    }
}

#[derive(Debug, Clone)]
pub struct GroupedLoss<T> {
    pub total: T,
    pub per_group: Vec<T>,
}

/// `Ĵ` of the block-diagonal map `(g^{α₁}, …, g^{α_N})` on the product grid,
/// together with each group's collective loss (other groups acting as the
/// parameter). Fails if the two disagree beyond `1e-10` relative.
pub fn loss_j_grouped<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    partition: &GroupPartition,
    maps: &[FeatureMap<T>],
    grid: &GroupedGrid<T>,
) -> Result<GroupedLoss<T>> {
    let n = partition.len();
    if maps.len() != n || grid.per_group.len() != n {
        return Err(Error::DimensionMismatch {
            what: "groups",
            expected: n,
            found: maps.len().min(grid.per_group.len()),
        });
    }
    let d = partition.dim();
    if oracle.dim_x() != d {
        return Err(Error::DimensionMismatch {
            what: "oracle x-dimension",
            expected: d,
            found: oracle.dim_x(),
        });
    }
    for (k, g) in partition.groups().iter().enumerate() {
        if maps[k].basis().dim() != g.len() || grid.per_group[k].ncols() != g.len() {
            return Err(Error::invalid(format!(
                "group {k} map or grid does not match its coordinates"
            )));
        }
    }
    let dims: Vec<usize> = grid.per_group.iter().map(|g| g.nrows()).collect();
    let st = strides(&dims);
    let total_pts = grid.total();
    let m_total: usize = maps.iter().map(|g| g.m()).sum();
    let per_point: Vec<Result<(T, Vec<T>)>> = (0..total_pts)
        .into_par_iter()
        .map(|flat| {
            let mut x = vec![T::zero(); d];
            let mut local = Vec::with_capacity(n);
            for (k, g) in partition.groups().iter().enumerate() {
                let p = (flat / st[k]) % dims[k];
                let xk: Vec<T> = grid.per_group[k].row(p).iter().copied().collect();
                for (c, &coord) in g.iter().enumerate() {
                    x[coord] = xk[c];
                }
                local.push(xk);
            }
            let b = oracle.gradient_x(&x, &[]);
            let mut block = DMatrix::zeros(d, m_total);
            let mut col = 0;
            let mut parts = Vec::with_capacity(n);
            for (k, g) in partition.groups().iter().enumerate() {
                let jac = maps[k].jacobian(&local[k])?;
                let bk = DVector::from_iterator(g.len(), g.iter().map(|&i| b[i]));
                let q = linalg::range_basis(&jac);
                let r = if q.ncols() == 0 {
                    bk.clone()
                } else {
                    &bk - &q * q.tr_mul(&bk)
                };
                parts.push(r.norm_squared());
                for (row, &coord) in g.iter().enumerate() {
                    for c in 0..jac.ncols() {
                        block[(coord, col + c)] = jac[(row, c)];
                    }
                }
                col += jac.ncols();
            }
            let q = linalg::range_basis(&block);
            let r = if q.ncols() == 0 {
                b.clone()
            } else {
                &b - &q * q.tr_mul(&b)
            };
            Ok((r.norm_squared(), parts))
        })
        .collect();
    let mut total = T::zero();
    let mut per_group = vec![T::zero(); n];
    let mut energy = T::zero();
    for p in per_point {
        let (t, parts) = p?;
        total += t;
        for (acc, v) in per_group.iter_mut().zip(parts) {
            *acc += v;
            energy += v;
        }
    }
    let inv = T::one() / T::from_usize_lossy(total_pts);
    total *= inv;
    for v in per_group.iter_mut() {
        *v *= inv;
    }
    let sum = energy * inv;
    let scale = total.abs().max(sum.abs());
    if (total - sum).abs() > T::tol(1e-10) * scale {
        return Err(Error::IdentityViolated(format!(
            "grouped loss {total} differs from per-group sum {sum}"
        )));
    }
    Ok(GroupedLoss { total, per_group })
}
