//! Benchmark protocol: SUR and BASELINE pipelines on `u_a`, repeated over
//! realizations and training sizes, with nearest-rank quantile summaries.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::baseline::{minimize_loss_j, DescentOptions, DescentTrace};
use super::ua::UaOracle;
use crate::error::{Error, Result};
use crate::losses::{loss_j, regression_error, LossReport};
use crate::oracle::GradientOracle;
use crate::polybasis::{FeatureMap, PolynomialBasis};
use crate::regression::{fit_cross_validated, krr_predict, CvResult, KrrModel, LogGrid};
use crate::sampling::{build_tensorized, mix_seed, BoxDomain, PairSample};
use crate::surrogate::{
    assemble_pencil_from_spectrum, estimate_conditional_spectrum, minimize_surrogate,
    SurrogatePencil, Weighting,
};

pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;
pub const CV_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SUR")]
    Sur,
    #[serde(rename = "BASELINE")]
    Baseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sur => "SUR",
            Method::Baseline => "BASELINE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub d: usize,
    pub a: usize,
    pub m: usize,
    pub n_y: usize,
    pub n_x: Vec<usize>,
    pub n_test: usize,
    pub realizations: usize,
    pub degree: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub folds: usize,
    pub gamma_grid: LogGrid,
    pub alpha_grid: LogGrid,
    pub weighting: Weighting,
    pub baseline: DescentOptions,
    /// Fill the `wall_ms` column; off by default so reruns are byte-identical.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 8,
            a: 3,
            m: 3,
            n_y: 5,
            n_x: vec![10, 20, 30, 40, 50],
            n_test: 1000,
            realizations: 20,
            degree: 2,
            methods: vec![Method::Sur, Method::Baseline],
            seed: 0,
            folds: 10,
            gamma_grid: LogGrid::GAMMA,
            alpha_grid: LogGrid::ALPHA,
            weighting: Weighting::LambdaMax,
            baseline: DescentOptions::default(),
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d", self.d),
            ("a", self.a),
            ("m", self.m),
            ("n_y", self.n_y),
            ("n_test", self.n_test),
            ("realizations", self.realizations),
            ("degree", self.degree),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.n_x.is_empty() || self.n_x.contains(&0) {
            return Err(Error::invalid("n_x must list positive sizes"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.a > self.d {
            return Err(Error::invalid(format!(
                "a = {} exceeds d = {}",
                self.a, self.d
            )));
        }
        let k = PolynomialBasis::<f64>::full_size(self.d, self.degree);
        if self.m > k {
            return Err(Error::invalid(format!("m = {} exceeds K = {k}", self.m)));
        }
        if self.m > self.d {
            return Err(Error::invalid(format!(
                "m = {} exceeds d = {}",
                self.m, self.d
            )));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        if self.gamma_grid.n == 0 || self.alpha_grid.n == 0 {
            return Err(Error::invalid("hyperparameter grids must be nonempty"));
        }
        for &n in &self.n_x {
            if n * self.n_y < self.folds {
                return Err(Error::invalid(format!(
                    "training size {} is smaller than the fold count {}",
                    n * self.n_y,
                    self.folds
                )));
            }
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<UaOracle<f64>> {
        UaOracle::new(self.d, self.a)
    }

    pub fn x_domain(&self) -> BoxDomain<f64> {
        BoxDomain::symmetric(self.d)
    }

    pub fn y_domain(&self) -> BoxDomain<f64> {
        BoxDomain::symmetric(1)
    }

    pub fn basis(&self) -> Result<Arc<PolynomialBasis<f64>>> {
        Ok(Arc::new(PolynomialBasis::total_degree(
            self.x_domain(),
            self.degree,
        )?))
    }

    /// Seed of realization `r` at training size `n_x`, shared by all methods.
    pub fn realization_seed(&self, realization: usize, n_x: usize) -> u64 {
        mix_seed(mix_seed(self.seed, realization as u64), n_x as u64)
    }
}

/// The four monitored quantities of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub j_hat_train: f64,
    pub j_test: f64,
    pub e_hat_train: f64,
    pub e_test: f64,
    /// `ε̂_m`, available only on tensorized samples.
    pub eps_m: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub feature_map: FeatureMap<f64>,
    pub model: KrrModel<f64>,
    pub cv: CvResult<f64>,
    pub report: LossReport<f64>,
    pub metrics: Metrics,
    /// Descent history, for BASELINE runs.
    pub descent: Option<DescentTrace<f64>>,
    /// Assembled pencil, for SUR runs.
    pub pencil: Option<SurrogatePencil<f64>>,
}

fn features_with_y(g: &FeatureMap<f64>, pairs: &PairSample<f64>) -> Result<DMatrix<f64>> {
    let m = g.m();
    let dy = pairs.y.ncols();
    let mut z = DMatrix::zeros(pairs.len(), m + dy);
    for k in 0..pairs.len() {
        let gx = g.eval(pairs.x_row(k).as_slice())?;
        for c in 0..m {
            z[(k, c)] = gx[c];
        }
        for c in 0..dy {
            z[(k, m + c)] = pairs.y[(k, c)];
        }
    }
    Ok(z)
}

fn targets<O: GradientOracle<f64> + ?Sized>(oracle: &O, pairs: &PairSample<f64>) -> DVector<f64> {
    DVector::from_fn(pairs.len(), |k, _| {
        oracle.value(pairs.x_row(k).as_slice(), pairs.y_row(k).as_slice())
    })
}

/// Fits the profile by cross-validated KRR on `(g(x), y) ↦ u` and evaluates
/// the train/test quantities.
#[allow(clippy::too_many_arguments)]
fn fit_and_evaluate<O: GradientOracle<f64> + ?Sized>(
    oracle: &O,
    config: &ExperimentConfig,
    g: &FeatureMap<f64>,
    train: &PairSample<f64>,
    seed: u64,
    j_hat_train: f64,
) -> Result<(KrrModel<f64>, CvResult<f64>, Metrics)> {
    let z = features_with_y(g, train)?;
    let u = targets(oracle, train);
    let (model, cv) = fit_cross_validated(
        &z,
        &u,
        config.folds,
        &config.gamma_grid,
        &config.alpha_grid,
        mix_seed(seed, CV_STREAM),
    )?;
    let rms = |pred: &DVector<f64>, truth: &DVector<f64>| {
        ((pred - truth).norm_squared() / truth.len() as f64).sqrt()
    };
    let e_hat_train = rms(&krr_predict(&model, &z)?, &u);
    let test = PairSample::latin_hypercube(
        &config.x_domain(),
        &config.y_domain(),
        config.n_test,
        mix_seed(seed, TEST_STREAM),
    )?;
    let j_test = loss_j(oracle, g, &test)?;
    let e_test = regression_error(
        oracle,
        g,
        |gx, y| {
            let mut zz = Vec::with_capacity(gx.len() + y.len());
            zz.extend(gx.iter().copied());
            zz.extend_from_slice(y);
            model.predict_one(&zz).unwrap_or(f64::NAN)
        },
        &test,
    )?;
    Ok((
        model,
        cv,
        Metrics {
            j_hat_train,
            j_test,
            e_hat_train,
            e_test,
            eps_m: None,
        },
    ))
}

/// SUR on an arbitrary oracle over the configured boxes.
pub fn run_sur_with<O: GradientOracle<f64> + ?Sized>(
    oracle: &O,
    config: &ExperimentConfig,
    n_x: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let sample = build_tensorized(
        &config.x_domain(),
        &config.y_domain(),
        n_x,
        config.n_y,
        mix_seed(seed, TRAIN_STREAM),
    )?;
    let spectrum = estimate_conditional_spectrum(oracle, &sample, config.m)?;
    let pencil =
        assemble_pencil_from_spectrum(&spectrum, &sample, config.basis()?, config.weighting)?;
    let g = minimize_surrogate(&pencil)?.feature_map;
    let report = LossReport::evaluate("SUR", oracle, &g, &sample, &spectrum)?;
    let train = sample.pairs();
    let (model, cv, mut metrics) =
        fit_and_evaluate(oracle, config, &g, &train, seed, report.j_hat)?;
    metrics.eps_m = Some(report.epsilon_hat);
    Ok(RunOutcome {
        feature_map: g,
        model,
        cv,
        report: report.with_e_hat(metrics.e_hat_train),
        metrics,
        descent: None,
        pencil: Some(pencil),
    })
}

/// BASELINE on an arbitrary oracle: plain Latin hypercube of `n_x · n_y`
/// pairs, linear initialization, Riemannian descent on `Ĵ`.
pub fn run_baseline_with<O: GradientOracle<f64> + ?Sized>(
    oracle: &O,
    config: &ExperimentConfig,
    n_x: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let n = n_x * config.n_y;
    let train = PairSample::latin_hypercube(
        &config.x_domain(),
        &config.y_domain(),
        n,
        mix_seed(seed, TRAIN_STREAM),
    )?;
    let (g, trace) = minimize_loss_j(oracle, config.basis()?, &train, config.m, &config.baseline)?;
    let j_hat = loss_j(oracle, &g, &train)?;
    let (model, cv, metrics) = fit_and_evaluate(oracle, config, &g, &train, seed, j_hat)?;
    let report = LossReport {
        tag: "BASELINE".into(),
        n_x: n,
        n_y: 1,
        j_hat,
        j_trunc_hat: f64::NAN,
        l_hat: f64::NAN,
        epsilon_hat: f64::NAN,
        grad_energy: crate::losses::grad_energy(oracle, &train)?,
        e_hat: Some(metrics.e_hat_train),
    };
    Ok(RunOutcome {
        feature_map: g,
        model,
        cv,
        report,
        metrics,
        descent: Some(trace),
        pencil: None,
    })
}

pub fn run_sur(config: &ExperimentConfig, n_x: usize, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    run_sur_with(&config.oracle()?, config, n_x, seed)
}

pub fn run_baseline(config: &ExperimentConfig, n_x: usize, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    run_baseline_with(&config.oracle()?, config, n_x, seed)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub a: usize,
    pub m: usize,
    pub n_train: usize,
    pub realization: usize,
    #[serde(rename = "J_hat_train")]
    pub j_hat_train: f64,
    #[serde(rename = "J_test")]
    pub j_test: f64,
    pub e_hat_train: f64,
    pub e_test: f64,
    pub eps_m: Option<f64>,
    pub wall_ms: Option<u64>,
}

pub const METRICS: [&str; 4] = ["J_hat_train", "J_test", "e_hat_train", "e_test"];

impl ResultRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "J_hat_train" => Some(self.j_hat_train),
            "J_test" => Some(self.j_test),
            "e_hat_train" => Some(self.e_hat_train),
            "e_test" => Some(self.e_test),
            _ => None,
        }
    }
}

/// One line of the quantile CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub method: Method,
    pub n_train: usize,
    pub metric: String,
    pub q50: f64,
    pub q90: f64,
    pub q100: f64,
}

/// Nearest-rank quantile: the `⌈q·n⌉`-th smallest value (1-based), `q ∈ (0, 1]`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn sort_values(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile rows for every `(method, n_train)` cell, in config order.
pub fn quantile_table(config: &ExperimentConfig, rows: &[ResultRow]) -> Vec<QuantileRow> {
    let mut out = Vec::new();
    for &method in &config.methods {
        for &n_x in &config.n_x {
            let n_train = n_x * config.n_y;
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && r.n_train == n_train)
                .collect();
            if cell.is_empty() {
                continue;
            }
            for name in METRICS {
                let v = sort_values(cell.iter().filter_map(|r| r.metric(name)).collect());
                out.push(QuantileRow {
                    method,
                    n_train,
                    metric: name.to_string(),
                    q50: nearest_rank(&v, 0.5),
                    q90: nearest_rank(&v, 0.9),
                    q100: nearest_rank(&v, 1.0),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub quantiles: Vec<QuantileRow>,
}

/// Runs every realization × training size × method in a fixed order. When a
/// sink is given, each realization's rows are written and flushed before the
/// next one starts.
pub fn run_experiment<W: Write>(
    config: &ExperimentConfig,
    sink: Option<W>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let oracle = config.oracle()?;
    let mut writer = sink.map(|w| csv::WriterBuilder::new().has_headers(false).from_writer(w));
    if let Some(w) = writer.as_mut() {
        w.write_record(RESULT_HEADER)?;
        w.flush()?;
    }
    let mut rows = Vec::new();
    for realization in 0..config.realizations {
        let mut batch = Vec::new();
        for &n_x in &config.n_x {
            let seed = config.realization_seed(realization, n_x);
            for &method in &config.methods {
                let start = Instant::now();
                let outcome = match method {
                    Method::Sur => run_sur_with(&oracle, config, n_x, seed)?,
                    Method::Baseline => run_baseline_with(&oracle, config, n_x, seed)?,
                };
                let elapsed = start.elapsed().as_millis() as u64;
                batch.push(ResultRow {
                    method,
                    a: config.a,
                    m: config.m,
                    n_train: n_x * config.n_y,
                    realization,
                    j_hat_train: outcome.metrics.j_hat_train,
                    j_test: outcome.metrics.j_test,
                    e_hat_train: outcome.metrics.e_hat_train,
                    e_test: outcome.metrics.e_test,
                    eps_m: outcome.metrics.eps_m,
                    wall_ms: config.record_wall_time.then_some(elapsed),
                });
            }
        }
        if let Some(w) = writer.as_mut() {
            for r in &batch {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        rows.extend(batch);
    }
    let quantiles = quantile_table(config, &rows);
    Ok(ExperimentResult { rows, quantiles })
}

pub const RESULT_HEADER: [&str; 11] = [
    "method",
    "a",
    "m",
    "n_train",
    "realization",
    "J_hat_train",
    "J_test",
    "e_hat_train",
    "e_test",
    "eps_m",
    "wall_ms",
];

pub const QUANTILE_HEADER: [&str; 6] = ["method", "n_train", "metric", "q50", "q90", "q100"];

pub fn write_results_csv<W: Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quantiles_csv<W: Write>(writer: W, rows: &[QuantileRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(QUANTILE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
