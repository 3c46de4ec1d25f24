//! Three functions of `(x₁, x₂)` with `x₃` as the parameter: `v` has
//! α-feature-rank one, while its two projections do not.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::Result;
use crate::oracle::{FnOracle, GradientOracle};
use crate::sampling::{build_tensorized, BoxDomain};
use crate::surrogate::estimate_conditional_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureRankDemoConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub seed: u64,
}

impl Default for FeatureRankDemoConfig {
    fn default() -> Self {
        Self {
            n_x: 200,
            n_y: 10,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    AtMost,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoEntry {
    pub name: &'static str,
    pub formula: &'static str,
    pub epsilon_1: f64,
    pub expectation: Expectation,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRankReport {
    pub config: FeatureRankDemoConfig,
    pub entries: Vec<DemoEntry>,
}

impl FeatureRankReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// `ε̂₁` of `v` must vanish.
pub const RANK_ONE_TOL: f64 = 1e-8;
/// Lower threshold for `ε̂₁` of both projections.
pub const RANK_TWO_FLOOR: f64 = 0.01;

fn epsilon_1<O: GradientOracle<f64>>(oracle: &O, config: &FeatureRankDemoConfig) -> Result<f64> {
    let sample = build_tensorized(
        &BoxDomain::symmetric(2),
        &BoxDomain::symmetric(1),
        config.n_x,
        config.n_y,
        config.seed,
    )?;
    Ok(estimate_conditional_spectrum(oracle, &sample, 1)?.epsilon(1))
}

pub fn feature_rank_demo(config: &FeatureRankDemoConfig) -> Result<FeatureRankReport> {
    let v = FnOracle::new(
        2,
        1,
        |x: &[f64], y: &[f64]| {
            let s = x[0] + x[1];
            s + s * s * y[0]
        },
        |x: &[f64], y: &[f64]| {
            let c = 1.0 + 2.0 * (x[0] + x[1]) * y[0];
            DVector::from_vec(vec![c, c])
        },
    );
    let p_v = FnOracle::new(
        2,
        1,
        |x: &[f64], y: &[f64]| x[0] + x[1] * x[1] * y[0],
        |x: &[f64], y: &[f64]| DVector::from_vec(vec![1.0, 2.0 * x[1] * y[0]]),
    );
    let p_w = FnOracle::new(
        2,
        1,
        |x: &[f64], y: &[f64]| x[0] + (x[0] * x[0] + x[1] * x[1]) * y[0],
        |x: &[f64], y: &[f64]| DVector::from_vec(vec![1.0 + 2.0 * x[0] * y[0], 2.0 * x[1] * y[0]]),
    );
    let ev = epsilon_1(&v, config)?;
    let e1 = epsilon_1(&p_v, config)?;
    let e2 = epsilon_1(&p_w, config)?;
    let entry = |name, formula, eps: f64, expectation| {
        let (threshold, pass) = match expectation {
            Expectation::AtMost => (RANK_ONE_TOL, eps <= RANK_ONE_TOL),
            Expectation::Above => (RANK_TWO_FLOOR, eps > RANK_TWO_FLOOR),
        };
        DemoEntry {
            name,
            formula,
            epsilon_1: eps,
            expectation,
            threshold,
            pass,
        }
    };
    Ok(FeatureRankReport {
        config: *config,
        entries: vec![
            entry("v", "(x1+x2) + (x1+x2)^2 x3", ev, Expectation::AtMost),
            entry("P_V v", "x1 + x2^2 x3", e1, Expectation::Above),
            entry("P_W v", "x1 + (x1^2+x2^2) x3", e2, Expectation::Above),
        ],
    })
}
