//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar (`f32` or `f64`).
///
/// Everything nalgebra needs comes from [`RealField`]; conversions to and from
/// literals go through `num-traits`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for values the type cannot hold.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// A relative tolerance that is `requested` for `f64` and never tighter than
    /// a few hundred ulps for narrower types.
    #[inline]
    fn tol(requested: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit(requested.max(256.0 * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}
