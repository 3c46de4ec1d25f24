//! Nonlinear polynomial feature maps `g(x) = Gᵀ Φ(x)` for collective
//! dimension reduction of parametrized families `u(·, y)`.
//!
//! The main entry points are [`surrogate::minimize_surrogate`], which solves
//! a generalized eigenproblem for the feature map, and the loss estimators in
//! [`losses`]. Numerical code is generic over [`Real`] (`f32` or `f64`); the
//! benchmark harness in [`bench`] runs in `f64`.
//!
//! ```
//! use std::sync::Arc;
//! use polyfeat::bench::UaOracle;
//! use polyfeat::surrogate::{assemble_pencil, minimize_surrogate};
//! use polyfeat::{build_tensorized, BoxDomain, PolynomialBasis};
//!
//! let oracle = UaOracle::<f64>::new(8, 3)?;
//! let x_dom = BoxDomain::symmetric(8);
//! let y_dom = BoxDomain::symmetric(1);
//! let sample = build_tensorized(&x_dom, &y_dom, 30, 5, 0)?;
//! let basis = Arc::new(PolynomialBasis::total_degree(x_dom, 2)?);
//! let pencil = assemble_pencil(&oracle, &sample, basis, 3)?;
//! let g = minimize_surrogate(&pencil)?.feature_map;
//! assert_eq!(g.m(), 3);
//! # Ok::<(), polyfeat::Error>(())
//! ```

pub mod bench;
pub mod error;
pub mod grouped;
pub mod linalg;
pub mod losses;
pub mod oracle;
pub mod polybasis;
pub mod regression;
pub mod sampling;
pub mod scalar;
pub mod surrogate;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use oracle::{FnOracle, GradientOracle, ScaledOracle};
pub use polybasis::{orthonormalize, FeatureMap, FeatureMapFile, PolynomialBasis};
pub use sampling::{build_tensorized, BoxDomain, PairSample, TensorizedSample};
pub use scalar::Real;
pub use surrogate::{ConditionalSpectrum, SurrogatePencil, Weighting};

pub type BoxDomain64 = BoxDomain<f64>;
pub type BoxDomain32 = BoxDomain<f32>;
pub type PolynomialBasis64 = PolynomialBasis<f64>;
pub type PolynomialBasis32 = PolynomialBasis<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type SurrogatePencil64 = SurrogatePencil<f64>;
pub type SurrogatePencil32 = SurrogatePencil<f32>;
pub type ConditionalSpectrum64 = ConditionalSpectrum<f64>;
pub type CoefficientTensor64 = grouped::CoefficientTensor<f64>;
pub type KrrModel64 = regression::KrrModel<f64>;
