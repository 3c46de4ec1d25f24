//! Functions `u(x, y)` with an available x-gradient.

use nalgebra::DVector;

use crate::scalar::Real;

/// A parametrized family `u(·, y)` together with `∇ₓu`.
pub trait GradientOracle<T: Real>: Sync {
    fn dim_x(&self) -> usize;

    fn dim_y(&self) -> usize;

    fn value(&self, x: &[T], y: &[T]) -> T;

    fn gradient_x(&self, x: &[T], y: &[T]) -> DVector<T>;

    /// Upper bound on `‖∇ₓu‖₂` over the domain, when one is known.
    fn sup_grad_bound(&self) -> Option<T> {
        None
    }
}

impl<T: Real, O: GradientOracle<T> + ?Sized> GradientOracle<T> for &O {
    fn dim_x(&self) -> usize {
        (**self).dim_x()
    }
    fn dim_y(&self) -> usize {
        (**self).dim_y()
    }
    fn value(&self, x: &[T], y: &[T]) -> T {
        (**self).value(x, y)
    }
    fn gradient_x(&self, x: &[T], y: &[T]) -> DVector<T> {
        (**self).gradient_x(x, y)
    }
    fn sup_grad_bound(&self) -> Option<T> {
        (**self).sup_grad_bound()
    }
}

/// Oracle assembled from a pair of closures.
pub struct FnOracle<V, G> {
    dim_x: usize,
    dim_y: usize,
    value: V,
    gradient: G,
}

impl<V, G> FnOracle<V, G> {
    pub fn new(dim_x: usize, dim_y: usize, value: V, gradient: G) -> Self {
        Self {
            dim_x,
            dim_y,
            value,
            gradient,
        }
    }
}

impl<T, V, G> GradientOracle<T> for FnOracle<V, G>
where
    T: Real,
    V: Fn(&[T], &[T]) -> T + Sync,
    G: Fn(&[T], &[T]) -> DVector<T> + Sync,
{
    fn dim_x(&self) -> usize {
        self.dim_x
    }
    fn dim_y(&self) -> usize {
        self.dim_y
    }
    fn value(&self, x: &[T], y: &[T]) -> T {
        (self.value)(x, y)
    }
    fn gradient_x(&self, x: &[T], y: &[T]) -> DVector<T> {
        (self.gradient)(x, y)
    }
}

/// `c · u`; used to bring `‖∇ₓu‖₂` below one before applying deviation bounds.
pub struct ScaledOracle<O, T> {
    inner: O,
    factor: T,
}

impl<T: Real, O: GradientOracle<T>> ScaledOracle<O, T> {
    pub fn new(inner: O, factor: T) -> Self {
        Self { inner, factor }
    }

    /// Divides by the inner oracle's gradient bound, if it has one.
    pub fn unit_gradient(inner: O) -> Option<Self> {
        let bound = inner.sup_grad_bound()?;
        Some(Self::new(inner, T::one() / bound))
    }
}

impl<T: Real, O: GradientOracle<T>> GradientOracle<T> for ScaledOracle<O, T> {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn value(&self, x: &[T], y: &[T]) -> T {
        self.inner.value(x, y) * self.factor
    }
    fn gradient_x(&self, x: &[T], y: &[T]) -> DVector<T> {
        self.inner.gradient_x(x, y) * self.factor
    }
    fn sup_grad_bound(&self) -> Option<T> {
        self.inner.sup_grad_bound().map(|b| b * self.factor.abs())
    }
}

/// Largest absolute gap between `gradient_x` and central differences of
/// `value` with step `h` at the given points.
pub fn gradient_check<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    points: &[(Vec<T>, Vec<T>)],
    h: T,
) -> T {
    let two_h = h + h;
    let mut worst = T::zero();
    for (x, y) in points {
        let grad = oracle.gradient_x(x, y);
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (oracle.value(&xp, y) - oracle.value(&xm, y)) / two_h;
            worst = worst.max((fd - grad[k]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_oracle_and_scaling() {
        let o = FnOracle::new(
            2,
            1,
            |x: &[f64], y: &[f64]| x[0] * x[1] * y[0],
            |x: &[f64], y: &[f64]| DVector::from_vec(vec![x[1] * y[0], x[0] * y[0]]),
        );
        let pts = vec![(vec![0.3, -0.4], vec![0.7]), (vec![-0.9, 0.1], vec![-0.2])];
        assert!(gradient_check(&o, &pts, 1e-5) < 1e-9);
        let s = ScaledOracle::new(&o, 0.5);
        assert_eq!(s.value(&[1.0, 1.0], &[1.0]), 0.5);
        assert!(s.sup_grad_bound().is_none());
    }
}
