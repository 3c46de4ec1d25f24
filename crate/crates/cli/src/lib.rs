//! Command implementations behind the `polyfeat` binary.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use polyfeat::bench::{
    feature_rank_demo, run_experiment, run_sur, write_quantiles_csv, ExperimentConfig,
    FeatureRankDemoConfig, QuantileRow,
};
use polyfeat::grouped::{hosvd, two_group_svd, CoefficientTensor};
use polyfeat::regression::write_cv_table;
use polyfeat::FeatureMap;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "polyfeat",
    version,
    about = "Polynomial feature maps via surrogate eigenproblems"
)]
pub struct Cli {
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the benchmark and write results, quantiles and a manifest.
    Bench(ConfigArgs),
    /// Solve the surrogate once and write the feature map as JSON.
    Features(ConfigArgs),
    /// Print the feature-rank example and write its report as JSON.
    DemoFeatureRank(DemoArgs),
    /// Truncated SVD of a two-group coefficient tensor.
    Svd2(Svd2Args),
    /// HOSVD of a coefficient tensor.
    Hosvd(HosvdArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for `bench`, output file for `features`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value = "feature_rank_demo.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Svd2Args {
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HosvdArgs {
    #[arg(long)]
    pub tensor: PathBuf,
    /// Comma-separated ranks, one per mode.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Output locations; relative file names are resolved against `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub results: String,
    pub quantiles: String,
    pub manifest: String,
    pub feature_map: String,
    /// Optional dumps written by `features`.
    pub pencil: Option<String>,
    pub cv_table: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            results: "results.csv".into(),
            quantiles: "quantiles.csv".into(),
            manifest: "manifest.json".into(),
            feature_map: "feature_map.json".into(),
            pencil: None,
            cv_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.experiment.validate().map_err(config_err)?;
        Ok(cfg)
    }

    fn apply(&mut self, args: &ConfigArgs) -> CliResult<()> {
        if let Some(seed) = args.seed_override {
            self.experiment.seed = seed;
        }
        self.experiment.validate().map_err(config_err)
    }
}

#[derive(Debug, Serialize)]
struct RealizationSeed {
    realization: usize,
    n_x: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    seeds: Vec<RealizationSeed>,
    versions: Versions,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Versions {
    polyfeat: &'static str,
    cli: &'static str,
}

fn versions() -> Versions {
    Versions {
        polyfeat: polyfeat::VERSION,
        cli: env!("CARGO_PKG_VERSION"),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> CliResult<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text + "\n").map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

/// Runs the benchmark and returns the quantile rows it wrote.
pub fn cmd_bench(args: &ConfigArgs) -> CliResult<Vec<QuantileRow>> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let results_path = dir.join(&cfg.output.results);
    let quantiles_path = dir.join(&cfg.output.quantiles);
    let sink = create_file(&results_path)?;
    let result = run_experiment(&cfg.experiment, Some(sink)).map_err(runtime_err)?;
    write_quantiles_csv(create_file(&quantiles_path)?, &result.quantiles).map_err(runtime_err)?;
    let exp = &cfg.experiment;
    let seeds = (0..exp.realizations)
        .flat_map(|r| {
            exp.n_x.iter().map(move |&n| RealizationSeed {
                realization: r,
                n_x: n,
                seed: exp.realization_seed(r, n),
            })
        })
        .collect();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: "bench",
        config: &cfg,
        seeds,
        versions: versions(),
        outputs: vec![cfg.output.results.clone(), cfg.output.quantiles.clone()],
    };
    write_json(&dir.join(&cfg.output.manifest), &manifest)?;
    Ok(result.quantiles)
}

pub fn cmd_features(args: &ConfigArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args)?;
    let exp = &cfg.experiment;
    let n_x = exp.n_x[0];
    let seed = exp.realization_seed(0, n_x);
    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join(&cfg.output.feature_map));
    let outcome = run_sur(exp, n_x, seed).map_err(runtime_err)?;
    let g = &outcome.feature_map;
    let text = g.to_json().map_err(runtime_err)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&out_path, &text).map_err(|e| runtime_err(format!("{}: {e}", out_path.display())))?;
    let reloaded = FeatureMap::<f64>::from_json(
        &fs::read_to_string(&out_path)
            .map_err(|e| runtime_err(format!("{}: {e}", out_path.display())))?,
    )
    .map_err(runtime_err)?;
    let gram = reloaded.basis().gram_matrix().map_err(runtime_err)?;
    let defect = reloaded.orthonormality_defect(&gram);
    if defect > 1e-8 {
        return Err(runtime_err(format!(
            "reloaded feature map violates G^T R G = I by {defect:.3e}"
        )));
    }
    let aux_dir = match &args.out {
        Some(p) => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        None => cfg.output.dir.clone(),
    };
    if let Some(name) = &cfg.output.cv_table {
        let path = aux_dir.join(name);
        write_cv_table(create_file(&path)?, &outcome.cv.table).map_err(runtime_err)?;
    }
    if let (Some(name), Some(pencil)) = (&cfg.output.pencil, &outcome.pencil) {
        write_json(&aux_dir.join(name), &pencil.to_file())?;
    }
    println!(
        "feature map: m={} K={} J_hat={:.3e} J_test={:.3e} e_test={:.3e} defect={:.1e} -> {}",
        g.m(),
        g.basis().len(),
        outcome.metrics.j_hat_train,
        outcome.metrics.j_test,
        outcome.metrics.e_test,
        defect,
        out_path.display()
    );
    Ok(())
}

pub fn cmd_demo_feature_rank(args: &DemoArgs) -> CliResult<()> {
    let mut config = FeatureRankDemoConfig::default();
    if let Some(seed) = args.seed_override {
        config.seed = seed;
    }
    let report = feature_rank_demo(&config).map_err(runtime_err)?;
    println!(
        "feature-rank demo (n_x={}, n_y={}, seed={})",
        config.n_x, config.n_y, config.seed
    );
    for e in &report.entries {
        let rel = match e.expectation {
            polyfeat::bench::demo::Expectation::AtMost => "<=",
            polyfeat::bench::demo::Expectation::Above => ">",
        };
        println!(
            "  {:<6} {:<24} eps_1 = {:.6e}  (want {rel} {:.0e})  {}",
            e.name,
            e.formula,
            e.epsilon_1,
            e.threshold,
            if e.pass { "PASS" } else { "FAIL" }
        );
    }
    write_json(&args.out, &report)?;
    if report.all_pass() {
        Ok(())
    } else {
        Err(runtime_err("feature-rank demo expectations not met"))
    }
}

fn load_tensor(path: &Path) -> CliResult<CoefficientTensor<f64>> {
    CoefficientTensor::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct Svd2Report {
    schema_version: &'static str,
    dims: Vec<usize>,
    m: usize,
    singular_values: Vec<f64>,
    all_singular_values: Vec<f64>,
    tail_energy: f64,
}

pub fn cmd_svd2(args: &Svd2Args) -> CliResult<()> {
    let t = load_tensor(&args.tensor)?;
    if t.order() < 2 {
        return Err(config_err("svd2 needs a tensor of order at least 2"));
    }
    let a = t.unfold(0);
    let limit = a.nrows().min(a.ncols());
    if args.m == 0 || args.m > limit {
        return Err(config_err(format!(
            "m = {} must lie in 1..={limit}",
            args.m
        )));
    }
    let r = two_group_svd(&a, args.m).map_err(runtime_err)?;
    let report = Svd2Report {
        schema_version: SCHEMA_VERSION,
        dims: t.dims().to_vec(),
        m: args.m,
        singular_values: r.singular_values.iter().copied().collect(),
        all_singular_values: r.all_singular_values.iter().copied().collect(),
        tail_energy: r.tail_energy,
    };
    println!(
        "two-group SVD of {:?} (first mode vs the rest), m = {}",
        t.dims(),
        args.m
    );
    println!("  singular values: {:?}", report.singular_values);
    println!("  tail energy: {:.6e}", report.tail_energy);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HosvdReport {
    schema_version: &'static str,
    dims: Vec<usize>,
    ranks: Vec<usize>,
    error_sq: f64,
    mode_tails: Vec<f64>,
    core: polyfeat::grouped::CoefficientTensorFile,
    factors: Vec<Vec<f64>>,
}

pub fn cmd_hosvd(args: &HosvdArgs) -> CliResult<()> {
    let t = load_tensor(&args.tensor)?;
    if args.ranks.len() != t.order() {
        return Err(config_err(format!(
            "expected {} ranks, got {}",
            t.order(),
            args.ranks.len()
        )));
    }
    for (k, (&r, &n)) in args.ranks.iter().zip(t.dims()).enumerate() {
        if r == 0 || r > n {
            return Err(config_err(format!(
                "rank {r} for mode {k} must lie in 1..={n}"
            )));
        }
    }
    let h = hosvd(&t, &args.ranks).map_err(runtime_err)?;
    let factors = h
        .factors
        .iter()
        .map(|u| {
            let mut v = Vec::with_capacity(u.len());
            for i in 0..u.nrows() {
                v.extend(u.row(i).iter().copied());
            }
            v
        })
        .collect();
    let report = HosvdReport {
        schema_version: SCHEMA_VERSION,
        dims: t.dims().to_vec(),
        ranks: args.ranks.clone(),
        error_sq: h.error_sq,
        mode_tails: h.mode_tails.clone(),
        core: h.core.to_file(),
        factors,
    };
    println!("HOSVD of {:?} with ranks {:?}", t.dims(), args.ranks);
    println!("  squared error: {:.6e}", h.error_sq);
    println!("  per-mode tails: {:?}", h.mode_tails);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn print_quantiles(rows: &[QuantileRow]) {
    for q in rows {
        println!(
            "{:<8} n_train={:<5} {:<12} q50={:.3e} q90={:.3e} q100={:.3e}",
            q.method.to_string(),
            q.n_train,
            q.metric,
            q.q50,
            q.q90,
            q.q100
        );
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let outcome = match &cli.command {
        Command::Bench(a) => cmd_bench(a).map(|rows| print_quantiles(&rows)),
        Command::Features(a) => cmd_features(a),
        Command::DemoFeatureRank(a) => cmd_demo_feature_rank(a),
        Command::Svd2(a) => cmd_svd2(a),
        Command::Hosvd(a) => cmd_hosvd(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("polyfeat: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.experiment, ExperimentConfig::default());
        assert_eq!(cfg.output, OutputConfig::default());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig {
            experiment: ExperimentConfig {
                n_x: vec![10, 30],
                seed: 9,
                ..ExperimentConfig::default()
            },
            output: OutputConfig {
                pencil: Some("p.json".into()),
                ..OutputConfig::default()
            },
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_output_field_is_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"output": {"colour": "red"}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 2);
        assert_eq!(
            run([
                "polyfeat",
                "hosvd",
                "--tensor",
                "/nonexistent/t.json",
                "--ranks",
                "1"
            ]),
            1
        );
    }

    #[test]
    fn seed_override_is_applied() {
        let mut cfg: RunConfig = serde_json::from_str("{}").unwrap();
        let args = ConfigArgs {
            config: PathBuf::from("unused"),
            out: None,
            seed_override: Some(42),
        };
        cfg.apply(&args).unwrap();
        assert_eq!(cfg.experiment.seed, 42);
    }
}
