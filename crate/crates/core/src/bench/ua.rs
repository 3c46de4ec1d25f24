//! The banded quadratic family `u_a(x, y) = Σ_{k≤a} (xᵀQ_k x)² sin(πk y / (2a))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::GradientOracle;
use crate::scalar::Real;

/// `Q_k = ½(1_{i−j=k−1} + 1_{j−i=k−1})`, so `Q₁ = I` and `Q_k` (`k ≥ 2`) carries
/// `½` on the two bands at offset `k − 1`.
#[derive(Debug, Clone)]
pub struct UaOracle<T: Real> {
    d: usize,
    a: usize,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> UaOracle<T> {
    pub fn new(d: usize, a: usize) -> Result<Self> {
        if d == 0 || a == 0 {
            return Err(Error::invalid("u_a needs d >= 1 and a >= 1"));
        }
        if a > d {
            return Err(Error::invalid(format!(
                "u_a needs a <= d, got a = {a}, d = {d}"
            )));
        }
        Ok(Self {
            d,
            a,
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> usize {
        self.a
    }

    /// Dense `Q_k`, `k` counted from 1.
    pub fn q_matrix(&self, k: usize) -> DMatrix<T> {
        let half = T::lit(0.5);
        DMatrix::from_fn(self.d, self.d, |i, j| {
            let mut v = T::zero();
            if i + 1 == j + k {
                v += half;
            }
            if j + 1 == i + k {
                v += half;
            }
            v
        })
    }

    /// `Q_k x` without forming `Q_k`.
    fn q_apply(&self, k: usize, x: &[T]) -> DVector<T> {
        if k == 1 {
            return DVector::from_column_slice(x);
        }
        let s = k - 1;
        let half = T::lit(0.5);
        DVector::from_fn(self.d, |i, _| {
            let mut v = T::zero();
            if i + s < self.d {
                v += x[i + s];
            }
            if i >= s {
                v += x[i - s];
            }
            v * half
        })
    }

    fn weight(&self, k: usize, y: T) -> T {
        (T::pi() * T::from_usize_lossy(k) * y / T::from_usize_lossy(2 * self.a)).sin()
    }
}

impl<T: Real> GradientOracle<T> for UaOracle<T> {
    fn dim_x(&self) -> usize {
        self.d
    }

    fn dim_y(&self) -> usize {
        1
    }

    fn value(&self, x: &[T], y: &[T]) -> T {
        (1..=self.a).fold(T::zero(), |acc, k| {
            let qx = self.q_apply(k, x);
            let quad = DVector::from_column_slice(x).dot(&qx);
            acc + quad * quad * self.weight(k, y[0])
        })
    }

    fn gradient_x(&self, x: &[T], y: &[T]) -> DVector<T> {
        let xv = DVector::from_column_slice(x);
        let four = T::lit(4.0);
        (1..=self.a).fold(DVector::zeros(self.d), |acc, k| {
            let qx = self.q_apply(k, x);
            let quad = xv.dot(&qx);
            acc + qx * (four * quad * self.weight(k, y[0]))
        })
    }

    /// `4 a d^{3/2}` on `[−1, 1]^d`, from `|xᵀQx| ≤ d` and `‖Qx‖ ≤ √d`.
    fn sup_grad_bound(&self) -> Option<T> {
        let d = T::from_usize_lossy(self.d);
        Some(T::lit(4.0) * T::from_usize_lossy(self.a) * d * d.sqrt())
    }
}
