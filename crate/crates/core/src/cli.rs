//! Command-line front end.
//!
//! Every subcommand writes its artifact plus a JSON manifest recording the
//! resolved options, SHA-256 digests of the inputs, the seed and the tool
//! version. Equal manifests imply byte-identical artifacts.
//!
//! A flat `key = value` file given with `--config FILE` supplies defaults for
//! the subcommand's flags; flags on the command line win.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boundary::{raster_boundary, BoundaryError, BoundaryRule, RasterDomain};
use crate::calibrate::{
    calibrate_bc, calibrate_bcl, calibrate_cc, calibrate_dc, estimate_batch_prior, estimate_cf_prior,
    estimate_random_prior, predict_icl_all, search_strength, CalibrationConfig, CalibrationError, Method,
    Prediction, PriorSpace, RunningPrior, RunningWeighting,
};
use crate::gmm::{fit_pc, predict_pc_all, EmConfig, GmmError, ModelFile};
use crate::io::{
    dataset_to_jsonl, fmt_f64, parse_dataset, parse_predictions, parse_prior_file, predictions_to_jsonl,
    prior_file_to_json, PriorFile,
};
use crate::metrics::{evaluate, MetricsError};
use crate::score::{Dataset, Prior, Provenance, ScoreError};
use crate::synth::{fabricate_priors, generate_dataset, FabricateOptions, PriorKind, SynthError, SynthSpec};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn in_file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {err}", path.display()))
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::DegeneratePrior { .. } | CalibrationError::NonFinitePrior => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GmmError> for CliError {
    fn from(e: GmmError) -> Self {
        match e {
            GmmError::ComponentCollapse { .. }
            | GmmError::NotPositiveDefinite { .. }
            | GmmError::AllRestartsFailed { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BoundaryError> for CliError {
    fn from(e: BoundaryError) -> Self {
        match e {
            BoundaryError::Calibration(c) => c.into(),
            BoundaryError::Gmm(g) => g.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "batchcal", version, about = "Contextual-bias calibration of classifier scores")]
pub struct Cli {
    /// Flat key=value file with defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted bias.
    Synth(SynthArgs),
    /// Apply a calibration method to a score file.
    Calibrate(CalibrateArgs),
    /// Score predictions against labels.
    Evaluate(EvaluateArgs),
    /// Rasterize a binary decision boundary to CSV.
    Boundary(BoundaryArgs),
    /// Accuracy of strength-scaled batch calibration over a grid.
    Sweep(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
            Command::Boundary(_) => "boundary",
            Command::Sweep(_) => "sweep",
        }
    }
}

/// Comma-separated floats given as one flag value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Values(pub Vec<f64>);

fn parse_vector(s: &str) -> Result<Values, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        })
        .collect::<Result<_, _>>()
        .map(Values)
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 8.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Comma-separated additive log-space bias, one value per class.
    #[arg(long, value_parser = parse_vector)]
    pub bias: Option<Values>,
    /// Comma-separated per-class multiplicative distortion.
    #[arg(long, value_parser = parse_vector)]
    pub class_scale: Option<Values>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write a content-free prior file.
    #[arg(long)]
    pub cf_prior: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub cf_count: usize,
    /// Systematic error of the content-free probes.
    #[arg(long, value_parser = parse_vector)]
    pub cf_offset: Option<Values>,
    /// Also write a random-text prior file.
    #[arg(long)]
    pub random_prior: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub random_count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub prior_noise: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Icl,
    Cc,
    Dc,
    Pc,
    Bc,
    Bcl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Icl => Method::Icl,
            MethodArg::Cc => Method::Cc,
            MethodArg::Dc => Method::Dc,
            MethodArg::Pc => Method::Pc,
            MethodArg::Bc => Method::Bc,
            MethodArg::Bcl => Method::Bcl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceArg {
    Log,
    Prob,
}

impl From<SpaceArg> for PriorSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Log => PriorSpace::Log,
            SpaceArg::Prob => PriorSpace::Prob,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 101)]
    pub gamma_steps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmArgs {
    #[arg(long, default_value_t = 100)]
    pub em_iterations: usize,
    #[arg(long, default_value_t = 100)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub em_tolerance: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub covariance_regularizer: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.em_iterations,
            restarts: self.restarts,
            rel_tolerance: self.em_tolerance,
            covariance_regularizer: self.covariance_regularizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Scores to calibrate (JSONL).
    #[arg(long)]
    pub scores: PathBuf,
    /// Prior file for cc (content_free) or dc (random_text).
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Labeled scores for the bcl strength search.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = SpaceArg::Log)]
    pub prior_space: SpaceArg,
    /// Estimate the bc prior as a running mean over mini-batches.
    #[arg(long)]
    pub stream: bool,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// With --stream, predict each batch with the prior available at that batch.
    #[arg(long, conflicts_with = "two_pass")]
    pub online: bool,
    /// With --stream, finish the running prior before predicting (default).
    #[arg(long)]
    pub two_pass: bool,
    #[command(flatten)]
    pub em: EmArgs,
    /// Write the fitted pc mixture as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Predictions output (JSONL); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Labeled scores (JSONL).
    #[arg(long)]
    pub labels: PathBuf,
    /// Report output (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BoundaryArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    /// Prior file for cc or dc.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Scores for the bc batch prior or the pc mixture fit.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SpaceArg::Prob)]
    pub space: SpaceArg,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub log_min: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub log_max: f64,
    #[arg(long, value_enum, default_value_t = SpaceArg::Log)]
    pub prior_space: SpaceArg,
    #[command(flatten)]
    pub em: EmArgs,
    /// Raster output (CSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    /// Labeled scores the accuracy is measured on.
    #[arg(long)]
    pub labeled: PathBuf,
    /// Scores the batch prior is estimated from; defaults to the labeled file.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = SpaceArg::Log)]
    pub prior_space: SpaceArg,
    /// Sweep output (CSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, T: Serialize> {
    pub subcommand: &'a str,
    pub config: &'a T,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: &'a str,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub results: serde_json::Map<String, serde_json::Value>,
}

struct Run {
    subcommand: &'static str,
    inputs: BTreeMap<String, String>,
    results: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            inputs: BTreeMap::new(),
            results: serde_json::Map::new(),
        }
    }

    fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|e| CliError::in_file(path, e))
    }

    fn read_dataset(&mut self, path: &Path) -> Result<Dataset, CliError> {
        let text = self.read(path)?;
        parse_dataset(&text).map_err(|e: ScoreError| CliError::in_file(path, e))
    }

    fn read_prior(&mut self, path: &Path, expected: Provenance) -> Result<Prior, CliError> {
        let text = self.read(path)?;
        let file = parse_prior_file(&text).map_err(|e| CliError::in_file(path, format!("malformed prior: {e}")))?;
        if file.provenance != expected {
            return Err(CliError::in_file(
                path,
                format!(
                    "malformed prior: provenance `{}`, expected `{}`",
                    file.provenance.as_str(),
                    expected.as_str()
                ),
            ));
        }
        let prior = match expected {
            Provenance::ContentFree => estimate_cf_prior(&file.vectors),
            _ => estimate_random_prior(&file.vectors),
        };
        prior.map_err(|e| CliError::in_file(path, format!("malformed prior: {e}")))
    }

    fn result(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    fn finish<T: Serialize>(
        self,
        config: &T,
        seed: Option<u64>,
        manifest: Option<&Path>,
        out: Option<&Path>,
    ) -> Result<(), CliError> {
        let path = match (manifest, out) {
            (Some(m), _) => m.to_path_buf(),
            (None, Some(o)) => sidecar(o, "manifest.json"),
            (None, None) => return Ok(()),
        };
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config,
            inputs: self.inputs,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            results: self.results,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_file(&path, &text)
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut run = Run::new("synth");
    let bias = args.bias.clone().map(|v| v.0).unwrap_or_else(|| vec![0.0; args.classes]);
    if bias.len() != args.classes {
        return Err(CliError::Validation(format!(
            "--bias has {} values but --classes is {}",
            bias.len(),
            args.classes
        )));
    }
    if let Some(Values(scale)) = &args.class_scale {
        if scale.len() != args.classes {
            return Err(CliError::Validation(format!(
                "--class-scale has {} values but --classes is {}",
                scale.len(),
                args.classes
            )));
        }
    }
    let spec = SynthSpec {
        num_classes: args.classes,
        num_samples: args.samples,
        margin: args.margin,
        noise: args.noise,
        bias,
        class_scale: args.class_scale.clone().map(|v| v.0),
        seed: args.seed,
    };
    let (dataset, truth) = generate_dataset(&spec)?;
    write_file(&args.out, &dataset_to_jsonl(dataset.records()))?;
    let truth_path = args.truth.clone().unwrap_or_else(|| sidecar(&args.out, "truth.json"));
    write_file(&truth_path, &truth.to_json())?;
    let mut priors = [
        (&args.cf_prior, PriorKind::ContentFree, args.cf_count, args.cf_offset.clone().map(|v| v.0)),
        (&args.random_prior, PriorKind::RandomText, args.random_count, None),
    ];
    for (path, kind, count, offset) in priors.iter_mut() {
        if let Some(path) = path {
            let options = FabricateOptions {
                noise: args.prior_noise,
                offset: offset.take(),
            };
            let vectors = fabricate_priors(&spec, *kind, *count, &options)?;
            let provenance = match kind {
                PriorKind::ContentFree => Provenance::ContentFree,
                PriorKind::RandomText => Provenance::RandomText,
            };
            write_file(path, &prior_file_to_json(&PriorFile { provenance, vectors }))?;
        }
    }
    run.result("oracle_accuracy", truth.oracle_accuracy);
    run.finish(args, Some(args.seed), args.manifest.as_deref(), Some(&args.out))
}

fn required<'a>(flag: &'a Option<PathBuf>, name: &str, method: Method) -> Result<&'a Path, CliError> {
    flag.as_deref()
        .ok_or_else(|| CliError::Validation(format!("--method {method} requires --{name} FILE")))
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let mut run = Run::new("calibrate");
    let method = Method::from(args.method);
    let config = CalibrationConfig {
        method,
        prior_space: args.prior_space.into(),
        gamma_min: args.grid.gamma_min,
        gamma_max: args.grid.gamma_max,
        gamma_steps: args.grid.gamma_steps,
        seed: args.em.seed,
    };
    config.validate()?;
    if args.stream && args.batch_size == 0 {
        return Err(CliError::Validation("--batch-size must be at least 1".into()));
    }
    let dataset = run.read_dataset(&args.scores)?;
    let records = dataset.records();
    let predictions: Vec<Prediction> = match method {
        Method::Icl => predict_icl_all(records),
        Method::Cc => {
            let prior = run.read_prior(required(&args.prior, "prior", method)?, Provenance::ContentFree)?;
            run.result("prior", &prior.values);
            records
                .iter()
                .map(|r| calibrate_cc(r, &prior))
                .collect::<Result<_, _>>()?
        }
        Method::Dc => {
            let prior = run.read_prior(required(&args.prior, "prior", method)?, Provenance::RandomText)?;
            run.result("prior", &prior.values);
            records
                .iter()
                .map(|r| calibrate_dc(r, &prior))
                .collect::<Result<_, _>>()?
        }
        Method::Pc => {
            let em = args.em.config();
            let fit = fit_pc(records, &em)?;
            run.result("best_restart", fit.best_restart);
            run.result("failed_restarts", fit.failed_restarts);
            run.result("final_log_likelihood", fit.model.final_log_likelihood);
            if let Some(path) = &args.model_out {
                let file = ModelFile {
                    model: fit.model.clone(),
                    config: em,
                };
                let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
                text.push('\n');
                write_file(path, &text)?;
            }
            predict_pc_all(records, &fit.model)?
        }
        Method::Bc => {
            if args.stream {
                stream_bc(records, args, &mut run)?
            } else {
                let prior = estimate_batch_prior(records, config.prior_space)?;
                run.result("prior", &prior.values);
                calibrate_bc(records, &prior)?
            }
        }
        Method::Bcl => {
            let labeled_path = required(&args.labeled, "labeled", method)?;
            let labeled = run.read_dataset(labeled_path)?;
            if labeled.num_classes() != dataset.num_classes() {
                return Err(CliError::Validation(format!(
                    "{}: {} classes, scores have {}",
                    labeled_path.display(),
                    labeled.num_classes(),
                    dataset.num_classes()
                )));
            }
            let prior = estimate_batch_prior(records, config.prior_space)?;
            let search = search_strength(labeled.records(), &prior, &config)?;
            run.result("prior", &prior.values);
            run.result("gamma", search.gamma);
            run.result("search_accuracy", search.metric);
            calibrate_bcl(records, &prior, search.gamma)?
        }
    };
    emit(args.out.as_deref(), &predictions_to_jsonl(&predictions))?;
    run.finish(args, Some(args.em.seed), args.manifest.as_deref(), args.out.as_deref())
}

fn stream_bc(
    records: &[crate::score::ScoreRecord],
    args: &CalibrateArgs,
    run: &mut Run,
) -> Result<Vec<Prediction>, CliError> {
    let mut running = RunningPrior::new(args.prior_space.into(), RunningWeighting::PerSample);
    let mut predictions = Vec::with_capacity(records.len());
    for batch in records.chunks(args.batch_size) {
        let prior = running.update(batch)?;
        if args.online {
            predictions.extend(calibrate_bc(batch, prior)?);
        }
    }
    let prior = running.prior().expect("dataset is non-empty").clone();
    run.result("prior", &prior.values);
    run.result("batches", running.batches_seen());
    if !args.online {
        predictions = calibrate_bc(records, &prior)?;
    }
    Ok(predictions)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut run = Run::new("evaluate");
    let text = run.read(&args.predictions)?;
    let predictions = parse_predictions(&text).map_err(|e| CliError::in_file(&args.predictions, e))?;
    let labels = run.read_dataset(&args.labels)?;
    let report = evaluate(
        predictions.iter().map(|p| (p.id.as_str(), p.predicted_class)),
        labels.records(),
    )?;
    print!("{}", report.table());
    if let Some(out) = &args.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_file(out, &json)?;
    }
    run.finish(args, None, args.manifest.as_deref(), args.out.as_deref())
}

fn cmd_boundary(args: &BoundaryArgs) -> Result<(), CliError> {
    let mut run = Run::new("boundary");
    let method = Method::from(args.method);
    let domain = match args.space {
        SpaceArg::Prob => RasterDomain::Probability,
        SpaceArg::Log => RasterDomain::LogScore {
            min: args.log_min,
            max: args.log_max,
        },
    };
    let raster = match method {
        Method::Icl => raster_boundary(BoundaryRule::Icl, args.resolution, domain)?,
        Method::Cc => {
            let prior = run.read_prior(required(&args.prior, "prior", method)?, Provenance::ContentFree)?;
            raster_boundary(BoundaryRule::Cc(&prior), args.resolution, domain)?
        }
        Method::Dc => {
            let prior = run.read_prior(required(&args.prior, "prior", method)?, Provenance::RandomText)?;
            raster_boundary(BoundaryRule::Dc(&prior), args.resolution, domain)?
        }
        Method::Bc => {
            let data = run.read_dataset(required(&args.scores, "scores", method)?)?;
            let prior = estimate_batch_prior(data.records(), args.prior_space.into())?;
            raster_boundary(BoundaryRule::Bc(&prior), args.resolution, domain)?
        }
        Method::Pc => {
            let data = run.read_dataset(required(&args.scores, "scores", method)?)?;
            let fit = fit_pc(data.records(), &args.em.config())?;
            raster_boundary(BoundaryRule::Pc(&fit.model), args.resolution, domain)?
        }
        Method::Bcl => {
            return Err(CliError::Validation(
                "boundary supports icl, cc, dc, bc and pc".into(),
            ))
        }
    };
    if let Some(line) = &raster.analytic {
        run.result("analytic", line);
    }
    emit(args.out.as_deref(), &raster.to_csv())?;
    let seed = (method == Method::Pc).then_some(args.em.seed);
    run.finish(args, seed, args.manifest.as_deref(), args.out.as_deref())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut run = Run::new("sweep");
    let config = CalibrationConfig {
        method: Method::Bcl,
        prior_space: args.prior_space.into(),
        gamma_min: args.grid.gamma_min,
        gamma_max: args.grid.gamma_max,
        gamma_steps: args.grid.gamma_steps,
        seed: 0,
    };
    config.validate()?;
    let labeled = run.read_dataset(&args.labeled)?;
    let prior_source = match &args.scores {
        Some(path) => run.read_dataset(path)?,
        None => labeled.clone(),
    };
    if prior_source.num_classes() != labeled.num_classes() {
        return Err(CliError::Validation("scores and labeled files differ in class count".into()));
    }
    let prior = estimate_batch_prior(prior_source.records(), config.prior_space)?;
    let search = search_strength(labeled.records(), &prior, &config)?;
    let mut csv = String::from("gamma,accuracy\n");
    for row in &search.table {
        csv.push_str(&format!("{},{}\n", fmt_f64(row.gamma), fmt_f64(row.metric)));
    }
    run.result("gamma", search.gamma);
    run.result("accuracy", search.metric);
    emit(args.out.as_deref(), &csv)?;
    run.finish(args, None, args.manifest.as_deref(), args.out.as_deref())
}

/// Reads `key = value` lines into flag arguments. `true`/`false` toggle
/// boolean flags.
pub fn config_args(text: &str) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Splices config-file flags in front of the command-line flags so that the
/// latter override them.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut config_path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            config_path = args.get(i + 1).cloned();
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
            break;
        }
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
        path: PathBuf::from(&path),
        source,
    })?;
    let injected = config_args(&text)?;
    let subcommands = ["synth", "calibrate", "evaluate", "boundary", "sweep"];
    let Some(pos) = args.iter().position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    log::debug!("running {}", cli.command.name());
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Boundary(a) => cmd_boundary(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}
