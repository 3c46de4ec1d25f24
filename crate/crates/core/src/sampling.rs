//! Box domains under the uniform measure, seeded random and Latin hypercube
//! designs, and tensorized `(x, y)` samples.
//!
//! All generators use ChaCha8 seeded from a `u64`, so every design is a pure
//! function of `(domain, n, seed)` on every platform.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Offset added to the base seed for the x-stream of a tensorized sample.
pub const X_STREAM_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;
/// Offset added to the base seed for the y-stream of a tensorized sample.
pub const Y_STREAM_OFFSET: u64 = 0xC2B2_AE3D_27D4_EB4F;

/// Interior margin kept by Latin hypercube jitter, as a fraction of a stratum.
const LHS_MARGIN: f64 = 1e-9;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; used to derive independent seeds from structured keys.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Axis-aligned box carrying the uniform probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T: Real> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> BoxDomain<T> {
    /// Box with per-coordinate bounds. Degenerate coordinates (`lo == hi`) are
    /// accepted for sampling; [`BoxDomain::is_proper`] tells them apart.
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::invalid("box dimension must be positive"));
        }
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| a.partial_cmp(b).is_none_or(|o| o.is_gt()))
        {
            return Err(Error::invalid("box bounds must satisfy lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// The symmetric cube `(-1, 1)^d`.
    pub fn symmetric(d: usize) -> Self {
        assert!(d > 0, "box dimension must be positive");
        Self {
            lo: vec![-T::one(); d],
            hi: vec![T::one(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    /// True when every coordinate interval has positive width.
    pub fn is_proper(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| a < b)
    }

    /// s-concavity parameter of the uniform measure on a `d`-dimensional convex body.
    pub fn s_concavity(&self) -> T {
        T::one() / T::from_usize_lossy(self.dim())
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Self) -> Self {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        Self { lo, hi }
    }

    /// Maps a point of the unit cube `[0,1]^d` into the box.
    fn map_unit(&self, k: usize, t: f64) -> T {
        self.lo[k] + (self.hi[k] - self.lo[k]) * T::lit(t)
    }
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("sample size must be at least 1"))
    } else {
        Ok(())
    }
}

/// `n` i.i.d. uniform draws on the box, one per row.
pub fn sample_uniform<T: Real>(domain: &BoxDomain<T>, n: usize, seed: u64) -> Result<DMatrix<T>> {
    check_count(n)?;
    let mut rng = rng_from_seed(seed);
    let d = domain.dim();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            let t: f64 = rng.random();
            out[(i, k)] = domain.map_unit(k, t);
        }
    }
    Ok(out)
}

/// Latin hypercube design: for every coordinate, each of the `n` equal-width
/// strata receives exactly one point (random permutation per coordinate plus
/// uniform jitter inside the stratum).
pub fn latin_hypercube<T: Real>(domain: &BoxDomain<T>, n: usize, seed: u64) -> Result<DMatrix<T>> {
    check_count(n)?;
    let mut rng = rng_from_seed(seed);
    let d = domain.dim();
    let mut out = DMatrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    let nf = n as f64;
    for k in 0..d {
        perm.shuffle(&mut rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            let jitter = LHS_MARGIN + (1.0 - 2.0 * LHS_MARGIN) * u;
            out[(i, k)] = domain.map_unit(k, (stratum as f64 + jitter) / nf);
        }
    }
    Ok(out)
}

/// Aligned list of `(x, y)` pairs, row `k` of `x` paired with row `k` of `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample<T: Real> {
    pub x: DMatrix<T>,
    pub y: DMatrix<T>,
}

impl<T: Real> PairSample<T> {
    pub fn new(x: DMatrix<T>, y: DMatrix<T>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                what: "pair sample rows",
                expected: x.nrows(),
                found: y.nrows(),
            });
        }
        Ok(Self { x, y })
    }

    /// Splits the columns of a joint design into the leading `d` x-coordinates and the rest.
    pub fn split_joint(joint: &DMatrix<T>, d: usize) -> Result<Self> {
        if d > joint.ncols() {
            return Err(Error::DimensionMismatch {
                what: "joint design columns",
                expected: d,
                found: joint.ncols(),
            });
        }
        let x = joint.columns(0, d).into_owned();
        let y = joint.columns(d, joint.ncols() - d).into_owned();
        Self::new(x, y)
    }

    /// A plain Latin hypercube over the product domain, split into pairs.
    pub fn latin_hypercube(
        x_domain: &BoxDomain<T>,
        y_domain: &BoxDomain<T>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let joint = latin_hypercube(&x_domain.product(y_domain), n, seed)?;
        Self::split_joint(&joint, x_domain.dim())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_row(&self, k: usize) -> DVector<T> {
        self.x.row(k).transpose()
    }

    pub fn y_row(&self, k: usize) -> DVector<T> {
        self.y.row(k).transpose()
    }
}

/// Cartesian product of an x-design and a y-design, `(x⁽ⁱ⁾, y⁽ʲ⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorizedSample<T: Real> {
    pub x_points: DMatrix<T>,
    pub y_points: DMatrix<T>,
    pub seed: u64,
}

impl<T: Real> TensorizedSample<T> {
    pub fn n_x(&self) -> usize {
        self.x_points.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.y_points.nrows()
    }

    pub fn dim_x(&self) -> usize {
        self.x_points.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.y_points.ncols()
    }

    /// `n_X · n_Y`, the size of the expanded pair list.
    pub fn total(&self) -> usize {
        self.n_x() * self.n_y()
    }

    pub fn x_row(&self, i: usize) -> DVector<T> {
        self.x_points.row(i).transpose()
    }

    pub fn y_row(&self, j: usize) -> DVector<T> {
        self.y_points.row(j).transpose()
    }

    /// Expands to all `n_X · n_Y` pairs, x-index major.
    pub fn pairs(&self) -> PairSample<T> {
        let n = self.total();
        let mut x = DMatrix::zeros(n, self.dim_x());
        let mut y = DMatrix::zeros(n, self.dim_y());
        for i in 0..self.n_x() {
            for j in 0..self.n_y() {
                let k = i * self.n_y() + j;
                x.set_row(k, &self.x_points.row(i));
                y.set_row(k, &self.y_points.row(j));
            }
        }
        PairSample { x, y }
    }
}

/// Draws the x and y designs independently by Latin hypercube, with sub-seeds
/// `seed + X_STREAM_OFFSET` and `seed + Y_STREAM_OFFSET`.
pub fn build_tensorized<T: Real>(
    x_domain: &BoxDomain<T>,
    y_domain: &BoxDomain<T>,
    n_x: usize,
    n_y: usize,
    seed: u64,
) -> Result<TensorizedSample<T>> {
    let x_points = latin_hypercube(x_domain, n_x, seed.wrapping_add(X_STREAM_OFFSET))?;
    let y_points = latin_hypercube(y_domain, n_y, seed.wrapping_add(Y_STREAM_OFFSET))?;
    Ok(TensorizedSample {
        x_points,
        y_points,
        seed,
    })
}
