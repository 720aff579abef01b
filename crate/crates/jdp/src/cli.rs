//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | invalid input, configuration or failed computation |
//! | 2 | cohort generation failed |
//! | 3 | every tuning grid value was infeasible |
//! | 4 | the subject is not at risk at the landmark |
//!
//! Configuration layers, lowest precedence first: built-in defaults, the
//! JSON file given by `--config`, the `JDP_SEED` environment variable (seeds
//! only), then command-line flags. Outputs are staged and renamed into
//! `--out` only when the command succeeds.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use jdp_core::dataset::{Cohort, Measurement, Subject};
use jdp_core::dynpred::predict_survival;
use jdp_core::jointfit::{fit_joint, JointModelFit, JointModelSpec};
use jdp_core::scoring::{brier, subject_loss, BrierEstimate, SubjectLoss};
use jdp_core::simgen::{generate_scenario, GeneratorMode, ScenarioConfig};
use jdp_core::tuner::{
    self, fit_seed, fit_subpopulation, prediction_request, prediction_seed, SimilaritySpace, TuningConfig, TuningError,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::io::{self, IoError, OutputSet};
use crate::manifest::RunManifest;
use crate::parallel::RayonExecutor;

pub const SEED_ENV: &str = "JDP_SEED";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("every grid value was infeasible")]
    AllInfeasible,
    #[error("subject {subject_id} is not at risk at t = {t} (observed until {observed_time})")]
    NotAtRisk { subject_id: String, observed_time: f64, t: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Generation(_) => 2,
            CliError::AllInfeasible => 3,
            CliError::NotAtRisk { .. } => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TuningError> for CliError {
    fn from(e: TuningError) -> Self {
        match e {
            TuningError::AllInfeasible(_) => CliError::AllInfeasible,
            e => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jdp", version, about = "Similarity-based dynamic prediction with joint models")]
pub struct Cli {
    /// Worker threads for tuning and validation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Simulate(SimulateArgs),
    /// Fit the joint model to a cohort.
    Fit(FitArgs),
    /// Predict `pi(u | t)` for one subject.
    Predict(PredictArgs),
    /// Tune the subpopulation proportion by repeated K-fold CV.
    Tune(TuneArgs),
    /// Evaluate a fixed proportion on a hold-out cohort.
    Validate(ValidateArgs),
    /// Brier score of precomputed predictions.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Scenario1,
    Scenario2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON scenario configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario whose parameters are the starting point.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed (overrides JDP_SEED and the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Event-time generator.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    /// MCMC iterations per chain, burn-in included.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Burn-in iterations per chain.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Keep every n-th post-burn-in draw.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Number of chains.
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory holding longitudinal.csv and survival.csv.
    #[arg(long)]
    pub cohort: PathBuf,
    /// JSON joint-model specification.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides JDP_SEED and the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// JSON tuning configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Landmark time.
    #[arg(long)]
    pub t: Option<f64>,
    /// Prediction horizon.
    #[arg(long)]
    pub u: Option<f64>,
    /// Master seed (overrides JDP_SEED and the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo samples per prediction.
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Number of CV folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Number of CV repeats.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fitted model from `jdp fit`.
    #[arg(long, conflicts_with = "cohort", required_unless_present = "cohort")]
    pub fit: Option<PathBuf>,
    /// Training cohort directory; a model is fitted on the fly.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// JSON subject file: id, covariates by name, measurements and
    /// optionally the observed time.
    #[arg(long)]
    pub subject: PathBuf,
    /// Fit on this proportion of the most similar training subjects.
    #[arg(long, requires = "cohort")]
    pub mp: Option<f64>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Directory holding longitudinal.csv and survival.csv.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Comma-separated proportions.
    #[arg(long, value_delimiter = ',')]
    pub mp_grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Hold-out cohort directory.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Subpopulation proportion to evaluate.
    #[arg(long)]
    pub mp: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV `subject_id,observed_time,event,pi_u_given_t,pi_u_given_tj`;
    /// the last field may be empty.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Landmark time.
    #[arg(long)]
    pub t: f64,
    /// Prediction horizon.
    #[arg(long)]
    pub u: f64,
}

/// Overlays `patch` onto `base`; keys missing from `base` are rejected
/// unless `base` holds `null` there.
pub fn merge_json(base: &mut Value, patch: Value, path: &str) -> Result<(), String> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot @ Value::Object(_)) if v.is_object() => merge_json(slot, v, &key)?,
                    Some(slot) => *slot = v,
                    None => return Err(format!("unknown configuration key `{key}`")),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn layered<T: Serialize + DeserializeOwned>(defaults: &T, config: Option<&Path>) -> Result<T, CliError> {
    let mut value = serde_json::to_value(defaults).expect("serializable defaults");
    if let Some(path) = config {
        let patch: Value = io::read_json(path)?;
        merge_json(&mut value, patch, "").map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Input(format!("invalid configuration: {e}")))
}

/// Seed from `JDP_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Input(format!("{SEED_ENV}: {e}"))),
    }
}

fn pick_seed(flag: Option<u64>, current: u64) -> Result<u64, CliError> {
    Ok(flag.or(env_seed()?).unwrap_or(current))
}

/// Effective simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub preset: Preset,
    pub seed: u64,
    pub generator_mode: GeneratorMode,
    pub scenario: ScenarioConfig,
}

/// Simulation file: a preset plus field overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationFile {
    #[serde(default)]
    preset: Option<Preset>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    generator_mode: Option<GeneratorMode>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    longitudinal: Option<Value>,
    #[serde(default)]
    event: Option<Value>,
    #[serde(default)]
    t_landmark: Option<f64>,
    #[serde(default)]
    u_horizon: Option<f64>,
}

fn simulation_run(args: &SimulateArgs) -> Result<SimulationRun, CliError> {
    let file: SimulationFile = match &args.config {
        Some(p) => io::read_json(p)?,
        None => SimulationFile::default(),
    };
    let preset = args.preset.or(file.preset).unwrap_or_default();
    let base = match preset {
        Preset::Scenario1 => ScenarioConfig::scenario1(),
        Preset::Scenario2 => ScenarioConfig::scenario2(),
    };
    let mut value = serde_json::to_value(&base).expect("serializable scenario");
    let mut patch = serde_json::Map::new();
    for (k, v) in [("longitudinal", file.longitudinal), ("event", file.event)] {
        if let Some(v) = v {
            patch.insert(k.into(), v);
        }
    }
    if let Some(n) = file.n {
        patch.insert("n".into(), n.into());
    }
    if let Some(t) = file.t_landmark {
        patch.insert("t_landmark".into(), t.into());
    }
    if let Some(u) = file.u_horizon {
        patch.insert("u_horizon".into(), u.into());
    }
    merge_json(&mut value, Value::Object(patch), "").map_err(CliError::Input)?;
    let mut scenario: ScenarioConfig =
        serde_json::from_value(value).map_err(|e| CliError::Input(format!("invalid scenario: {e}")))?;
    if let Some(n) = args.n {
        scenario.n = n;
    }
    let generator_mode = match args.mode {
        Some(ModeArg::ClosedForm) => GeneratorMode::ClosedForm,
        Some(ModeArg::Numeric) => GeneratorMode::Numeric,
        None => file.generator_mode.unwrap_or_default(),
    };
    let seed = pick_seed(args.seed, file.seed.unwrap_or(1))?;
    scenario.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(SimulationRun { preset, seed, generator_mode, scenario })
}

fn apply_mcmc(mcmc: &mut jdp_core::McmcConfig, args: &McmcArgs) {
    if let Some(v) = args.iterations {
        mcmc.n_iterations = v;
    }
    if let Some(v) = args.burnin {
        mcmc.n_burnin = v;
    }
    if let Some(v) = args.thin {
        mcmc.n_thin = v;
    }
    if let Some(v) = args.chains {
        mcmc.n_chains = v;
    }
}

/// Effective tuning configuration for `args`.
pub fn tuning_config(args: &TuningArgs, mp_grid: Option<Vec<f64>>) -> Result<TuningConfig, CliError> {
    let mut config = layered(&TuningConfig::new(1.0, 4.0), args.config.as_deref())?;
    config.master_seed = pick_seed(args.seed, config.master_seed)?;
    if let Some(t) = args.t {
        config.t = t;
    }
    if let Some(u) = args.u {
        config.u = u;
    }
    if let Some(n) = args.n_mc {
        config.n_mc = n;
    }
    if let Some(k) = args.folds {
        config.k_folds = k;
    }
    if let Some(w) = args.repeats {
        config.repeats = w;
    }
    if let Some(g) = mp_grid {
        config.mp_grid = g;
    }
    apply_mcmc(&mut config.mcmc, &args.mcmc);
    Ok(config)
}

fn load_cohort(dir: &Path) -> Result<Cohort, CliError> {
    Ok(io::load_cohort_dir(dir)?)
}

fn executor(workers: usize) -> Result<RayonExecutor, CliError> {
    RayonExecutor::new(workers).map_err(|e| CliError::Input(format!("cannot start {workers} workers: {e}")))
}

fn finish(out: &Path, mut files: OutputSet, mut manifest: RunManifest) -> Result<(), CliError> {
    let mut outputs: Vec<PathBuf> = files.paths().map(Path::to_path_buf).collect();
    let manifest_path = out.join(MANIFEST_FILE);
    outputs.push(manifest_path.clone());
    manifest.finish(outputs);
    files.add(manifest_path, io::json_bytes(&manifest));
    files.commit()?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), CliError> {
    let run = simulation_run(args)?;
    let mut manifest = RunManifest::start("simulate", &run, run.seed);
    let generated = generate_scenario(&run.scenario, run.seed, run.generator_mode)
        .map_err(|e| CliError::Generation(e.to_string()))?;
    manifest.detail("generation", generated.stats);
    let (long, surv) = io::cohort_csv(&generated.cohort);
    let mut files = OutputSet::new();
    files.add(cli.out.join(io::LONGITUDINAL_FILE), long);
    files.add(cli.out.join(io::SURVIVAL_FILE), surv);
    println!(
        "{} subjects, {} events, {} measurements",
        generated.cohort.len(),
        generated.cohort.n_events(),
        generated.cohort.n_measurements()
    );
    finish(&cli.out, files, manifest)
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&args.cohort)?;
    let mut spec = layered(&JointModelSpec::new(cohort.covariate_names().to_vec()), args.config.as_deref())?;
    spec.mcmc.seed = pick_seed(args.seed, spec.mcmc.seed)?;
    apply_mcmc(&mut spec.mcmc, &args.mcmc);
    let manifest = RunManifest::start("fit", &spec, spec.mcmc.seed);
    let fit = fit_joint(&cohort, &spec).map_err(|e| CliError::Input(e.to_string()))?;
    for name in ["alpha", "sigma"] {
        if let (Some(m), Some(sd)) = (fit.posterior_mean(name), fit.posterior_sd(name)) {
            println!("{name}: {m:.4} (sd {sd:.4})");
        }
    }
    let mut files = OutputSet::new();
    files.add(cli.out.join("fit.json"), io::json_bytes(&fit));
    finish(&cli.out, files, manifest)
}

/// Subject file of `jdp predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectFile {
    pub subject_id: String,
    #[serde(default)]
    pub observed_time: Option<f64>,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
    #[serde(default)]
    pub measurements: Vec<Measurement>,
}

impl SubjectFile {
    /// Subject with covariates ordered as `names`, history cut at `t`.
    fn to_subject(&self, names: &[String], t: f64) -> Result<Subject, CliError> {
        let covariates = names
            .iter()
            .map(|n| {
                self.covariates
                    .get(n)
                    .copied()
                    .ok_or_else(|| CliError::Input(format!("subject {} lacks covariate `{n}`", self.subject_id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut measurements: Vec<Measurement> = self.measurements.iter().copied().filter(|m| m.time <= t).collect();
        measurements.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Subject {
            id: self.subject_id.clone(),
            observed_time: self.observed_time.unwrap_or(f64::INFINITY),
            event: false,
            covariates,
            measurements,
        })
    }
}

#[derive(Debug, Serialize)]
struct PredictionRun<'a> {
    tuning: &'a TuningConfig,
    fit: Option<&'a Path>,
    cohort: Option<&'a Path>,
    mp: Option<f64>,
    subject: &'a SubjectFile,
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<(), CliError> {
    let config = tuning_config(&args.tuning, None)?;
    if !(config.u >= config.t && config.t >= 0.0) {
        return Err(CliError::Input(format!("need 0 <= t <= u, got t = {}, u = {}", config.t, config.u)));
    }
    let subject_file: SubjectFile = io::read_json(&args.subject)?;
    if let Some(obs) = subject_file.observed_time {
        if obs < config.t {
            return Err(CliError::NotAtRisk { subject_id: subject_file.subject_id, observed_time: obs, t: config.t });
        }
    }
    let run = PredictionRun {
        tuning: &config,
        fit: args.fit.as_deref(),
        cohort: args.cohort.as_deref(),
        mp: args.mp,
        subject: &subject_file,
    };
    let mut manifest = RunManifest::start("predict", &run, config.master_seed);
    let mp = args.mp.unwrap_or(1.0);
    let (fit, names, subject): (JointModelFit, Vec<String>, Subject) = match (&args.fit, &args.cohort) {
        (Some(path), _) => {
            let fit: JointModelFit = io::read_json(path)?;
            fit.validate_shape().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let names = fit.spec.covariates.clone();
            let subject = subject_file.to_subject(&names, config.t)?;
            (fit, names, subject)
        }
        (None, Some(dir)) => {
            let train = load_cohort(dir)?;
            let names = train.covariate_names().to_vec();
            let subject = subject_file.to_subject(&names, config.t)?;
            let subset: Vec<String> = if mp < 1.0 {
                let space = SimilaritySpace::from_training(&train, &config)?;
                let index = space
                    .index_vector(&subject)
                    .ok_or_else(|| CliError::Input(format!("no similarity features for subject {}", subject.id)))?;
                space
                    .subpopulation(&index, mp)?
                    .ok_or_else(|| CliError::Input(format!("subject {} has zero-norm features", subject.id)))?
            } else {
                train.ids().map(String::from).collect()
            };
            manifest.detail("mp", mp);
            manifest.detail("subpopulation_size", subset.len());
            let seed = fit_seed(config.master_seed, 0, 0, mp, &subset);
            let fit = fit_subpopulation(&train, &subset, &config, seed)?;
            (fit, names, subject)
        }
        (None, None) => return Err(CliError::Input("either --fit or --cohort is required".into())),
    };
    let seed = prediction_seed(config.master_seed, 0, 0, mp, &subject.id);
    let request = prediction_request(&fit, &subject, &names, &config, seed)?;
    let result = predict_survival(&fit, &request).map_err(|e| CliError::Input(e.to_string()))?;
    let output = serde_json::json!({
        "subject_id": result.subject_id,
        "t": result.t,
        "u": result.u,
        "pi_hat": result.pi_hat,
        "mc_std_error": result.mc_std_error,
        "extrapolated": result.extrapolated,
    });
    println!("{}", serde_json::to_string(&output).expect("json"));
    let mut files = OutputSet::new();
    files.add(cli.out.join("prediction.json"), io::json_bytes(&output));
    finish(&cli.out, files, manifest)
}

fn cmd_tune(cli: &Cli, args: &TuneArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&args.cohort)?;
    let config = tuning_config(&args.tuning, args.mp_grid.clone())?;
    let manifest = RunManifest::start("tune", &config, config.master_seed);
    let exec = executor(cli.workers)?;
    let report = tuner::tune(&cohort, &config, &exec)?;
    let Some(selected) = report.selected_mp else { return Err(CliError::AllInfeasible) };
    let entry = report.entry(selected).expect("selected entry");
    match entry.ci {
        Some((lo, hi)) => println!(
            "selected M_p = {selected}: mean Brier {:.4}, 95% CI [{lo:.4}, {hi:.4}]",
            entry.mean.unwrap_or(f64::NAN)
        ),
        None => println!("selected M_p = {selected}: mean Brier {:.4}", entry.mean.unwrap_or(f64::NAN)),
    }
    let mut files = OutputSet::new();
    files.add(cli.out.join("tuning_report.json"), io::json_bytes(&report));
    files.add(cli.out.join("tuning_report.csv"), report.to_csv().into_bytes());
    finish(&cli.out, files, manifest)
}

fn cmd_validate(cli: &Cli, args: &ValidateArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&args.cohort)?;
    let config = tuning_config(&args.tuning, Some(vec![args.mp]))?;
    let manifest = RunManifest::start("validate", &config, config.master_seed);
    let exec = executor(cli.workers)?;
    let summary = tuner::validate(&cohort, args.mp, &config, &exec)?;
    println!("M_p = {}: mean Brier {:.4}", summary.mp, summary.mean.unwrap_or(f64::NAN));
    let mut files = OutputSet::new();
    files.add(cli.out.join("validation.json"), io::json_bytes(&summary));
    finish(&cli.out, files, manifest)
}

#[derive(Debug, Serialize)]
struct ScoreReport {
    estimate: BrierEstimate,
    losses: Vec<SubjectLoss>,
}

/// Reads prediction rows for `jdp score`.
pub fn read_predictions(path: &Path, t: f64, u: f64) -> Result<Vec<SubjectLoss>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = ["subject_id", "observed_time", "event", "pi_u_given_t", "pi_u_given_tj"];
    if header != expected {
        return Err(CliError::Input(format!("{}: header must be {}", path.display(), expected.join(","))));
    }
    let mut losses = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let num = |j: usize| -> Result<f64, CliError> {
            rec[j].trim().parse().map_err(|_| {
                CliError::Input(format!("{}: row {row}, column {}: {:?} is not a number", path.display(), expected[j], &rec[j]))
            })
        };
        let event = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(CliError::Input(format!("{}: row {row}, column event: {other:?}", path.display()))),
        };
        let pi_tj = if rec[4].trim().is_empty() { None } else { Some(num(4)?) };
        let loss = subject_loss(&rec[0], num(1)?, event, num(3)?, pi_tj, t, u)
            .map_err(|e| CliError::Input(format!("{}: row {row}: {e}", path.display())))?;
        losses.push(loss);
    }
    Ok(losses)
}

fn cmd_score(cli: &Cli, args: &ScoreArgs) -> Result<(), CliError> {
    let losses = read_predictions(&args.predictions, args.t, args.u)?;
    let manifest = RunManifest::start("score", &(args.t, args.u, &args.predictions), 0);
    let estimate = brier(&losses, losses.len(), args.t, args.u).map_err(|e| CliError::Input(e.to_string()))?;
    println!("Brier({}, {}) = {:.6} over {} subjects", args.t, args.u, estimate.value, estimate.at_risk_count);
    let mut files = OutputSet::new();
    files.add(cli.out.join("score.json"), io::json_bytes(&ScoreReport { estimate, losses }));
    finish(&cli.out, files, manifest)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Tune(a) => cmd_tune(cli, a),
        Command::Validate(a) => cmd_validate(cli, a),
        Command::Score(a) => cmd_score(cli, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overrides_nested_keys_and_rejects_unknown_ones() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut base, json!({"b": {"d": 4}}), "").unwrap();
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}}));
        let e = merge_json(&mut base, json!({"b": {"x": 1}}), "").unwrap_err();
        assert!(e.contains("b.x"), "{e}");
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 1);
        assert_eq!(CliError::Generation("x".into()).exit_code(), 2);
        assert_eq!(CliError::AllInfeasible.exit_code(), 3);
        assert_eq!(CliError::NotAtRisk { subject_id: "A".into(), observed_time: 0.5, t: 1.0 }.exit_code(), 4);
        assert_eq!(CliError::from(TuningError::AllInfeasible(0.2)).exit_code(), 3);
    }

    #[test]
    fn subject_file_orders_covariates_and_cuts_history() {
        let f = SubjectFile {
            subject_id: "S".into(),
            observed_time: None,
            covariates: [("w2".to_string(), 2.0), ("w1".to_string(), 1.0)].into_iter().collect(),
            measurements: vec![
                Measurement { time: 1.5, value: 3.0 },
                Measurement { time: 0.0, value: 1.0 },
                Measurement { time: 1.0, value: 2.0 },
            ],
        };
        let s = f.to_subject(&["w1".into(), "w2".into()], 1.0).unwrap();
        assert_eq!(s.covariates, vec![1.0, 2.0]);
        assert_eq!(s.measurements.iter().map(|m| m.time).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!(f.to_subject(&["w3".into()], 1.0).is_err());
    }
}
