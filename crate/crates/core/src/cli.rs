//! The `bayes-fusion` command line.
//!
//! Every command writes its resolved configuration next to its outputs.
//! Exit codes: 0 on success, 1 on invalid input, 2 when inference did not
//! converge (outputs are still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    generate_synthetic, is_matrix_dataset, load_dataset, raw_batches, read_matrix_dataset, write_matrix_dataset,
    LoadError, Manifest, SourceBatch, SynthConfig, SynthError, SynthMode, ACTIVITIES, ROOMS, SOURCES,
};
use crate::eval::{bayes_factor, cross_validate, weighted_brier, EvalError, Evidence};
use crate::features::{FeatureError, FeaturePipeline, PipelineConfig};
use crate::models::{predict, train, Architecture, EngineOptions, Link, ModelError, ModelSpec, Posterior, PriorKind};

pub const POSTERIOR_FILE: &str = "posterior.json";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "bayes-fusion",
    version,
    about = "Bayesian sensor fusion for activity recognition"
)]
pub struct Cli {
    /// Worker threads for instance and fold parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Fit a posterior and save it with its feature pipeline.
    Train(TrainArgs),
    /// Write per-instance class probabilities.
    Predict(PredictArgs),
    /// Score predictions with the weighted Brier score, or cross-validate.
    Evaluate(EvaluateArgs),
    /// Log Bayes factors between trained models.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModeArg {
    Additive,
    Switching,
    Stacked,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Not recorded, so a seed gives the same bytes wherever it is written.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub instances: usize,
    /// Classes, or activities in stacked mode.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature count of each source.
    #[arg(long, value_delimiter = ',', default_value = "3,3,3")]
    pub dims: Vec<usize>,
    /// Indices of the sources that drive the label (default: all).
    #[arg(long, value_delimiter = ',')]
    pub informative: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "additive")]
    pub mode: SynthModeArg,
    /// Stacked mode: number of locations; source 0 carries location.
    #[arg(long, default_value_t = 3)]
    pub locations: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "single_bpm", value_parser = parse_from_str::<Architecture>)]
    pub architecture: Architecture,
    #[arg(long, default_value = "argmax", value_parser = parse_from_str::<Link>)]
    pub link: Link,
    #[arg(long, default_value = "gaussian", value_parser = parse_from_str::<PriorKind>)]
    pub prior: PriorKind,
    /// Sources to use, by name, in model order (default: all).
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
    /// Stacked: sources feeding the location classifier (default: all).
    #[arg(long, value_delimiter = ',')]
    pub location_sources: Option<Vec<String>>,
    /// Stacked: sources feeding the activity classifiers (default: all).
    #[arg(long, value_delimiter = ',')]
    pub activity_sources: Option<Vec<String>>,
    #[arg(long, default_value_t = 1e-6)]
    pub engine_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub engine_max_iters: usize,
    #[arg(long, default_value_t = 0.7)]
    pub damping: f64,
    /// Instances per training batch; batches are learned online.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Sweeps over the training batches.
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    #[arg(long, default_value_t = 1)]
    pub context_radius: usize,
    #[arg(long)]
    pub poly2: bool,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

impl ModelArgs {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            context_radius: self.context_radius,
            standardize: !self.no_standardize,
            poly2: self.poly2,
            bias: !self.no_bias,
        }
    }

    fn engine(&self) -> EngineOptions {
        EngineOptions {
            max_iters: self.engine_max_iters,
            tol: self.engine_tol,
            damping: self.damping,
            passes: self.passes,
            fail_on_elbo_decrease: false,
        }
    }

    fn spec(&self, data: &LoadedData, dims: Vec<usize>) -> Result<ModelSpec> {
        let classes = data.class_names.len();
        let index = |names: &Option<Vec<String>>| -> Result<Vec<usize>> {
            match names {
                None => Ok((0..data.sources.len()).collect()),
                Some(list) => list.iter().map(|n| data.source_index(n)).collect(),
            }
        };
        let spec = if self.architecture == Architecture::Stacked {
            let locations = data.location_names.len();
            if locations == 0 {
                return Err(CliError::Invalid("stacked model needs location targets".into()));
            }
            ModelSpec::stacked(
                locations,
                classes,
                dims,
                index(&self.location_sources)?,
                index(&self.activity_sources)?,
            )
        } else {
            ModelSpec::new(self.architecture, classes, dims)
        };
        let spec = spec.with_link(self.link).with_prior(self.prior);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV written by `predict`.
    #[arg(long, conflicts_with = "folds")]
    pub predictions: Option<PathBuf>,
    /// Cross-validate with this many contiguous folds instead.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Class weights (default: all 1).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Trained model directory whose evidence is added to the report.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Two or more trained model directories.
    #[arg(long, num_args = 2.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// What `train` records next to the posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: PathBuf,
    pub model: ModelArgs,
    pub spec: ModelSpec,
    pub pipeline: PipelineConfig,
    pub engine: EngineOptions,
    pub sources: Vec<String>,
    pub class_names: Vec<String>,
    pub location_names: Vec<String>,
}

struct LoadedData {
    sources: Vec<SourceBatch>,
    class_names: Vec<String>,
    location_names: Vec<String>,
}

impl LoadedData {
    fn source_index(&self, name: &str) -> Result<usize> {
        self.sources
            .iter()
            .position(|s| s.source == name)
            .ok_or_else(|| CliError::Invalid(format!("unknown source `{name}`")))
    }
}

fn load(dir: &Path, wanted: Option<&[String]>) -> Result<LoadedData> {
    let (class_names, location_names, all) = if is_matrix_dataset(dir) {
        let (m, sources) = read_matrix_dataset(dir)?;
        (m.class_names, m.location_names, sources)
    } else {
        let raw = load_dataset(dir)?;
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        (names(&ACTIVITIES), names(&ROOMS), raw_batches(&raw, &SOURCES))
    };
    let sources = match wanted {
        None => all,
        Some(names) => names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|s| &s.source == n)
                    .cloned()
                    .ok_or_else(|| CliError::Invalid(format!("dataset has no source `{n}`")))
            })
            .collect::<Result<_>>()?,
    };
    if sources.is_empty() {
        return Err(CliError::Invalid("no sources selected".into()));
    }
    Ok(LoadedData {
        sources,
        class_names,
        location_names,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Whether every inference run converged.
type Converged = bool;

fn cmd_synth(args: &SynthArgs) -> Result<Converged> {
    let informative = args
        .informative
        .clone()
        .unwrap_or_else(|| (0..args.dims.len()).collect());
    let config = match args.mode {
        SynthModeArg::Additive => SynthConfig::new(args.instances, args.dims.clone(), args.classes),
        SynthModeArg::Switching => {
            SynthConfig::new(args.instances, args.dims.clone(), args.classes).with_mode(SynthMode::Switching)
        }
        SynthModeArg::Stacked => {
            if args.dims.len() < 2 {
                return Err(CliError::Invalid("stacked data needs at least two sources".into()));
            }
            let mut c = SynthConfig::stacked(
                args.instances,
                args.locations,
                args.classes,
                [args.dims[0], args.dims[1]],
            );
            c.source_dims = args.dims.clone();
            c
        }
    };
    let config = match (args.mode, &args.informative) {
        (SynthModeArg::Stacked, None) => config,
        _ => config.with_informative(informative),
    };
    let data = generate_synthetic(args.seed, &config)?;
    let locations = data.truth.locations.as_ref().map_or(0, |_| args.locations);
    let manifest = Manifest::generic(&data.sources, args.classes, locations);
    write_matrix_dataset(&args.out, &manifest, &data.sources)?;
    write_json(&args.out.join("ground_truth.json"), &data.truth)?;
    write_json(&args.out.join(CONFIG_FILE), args)?;
    Ok(true)
}

fn training_batches(sources: Vec<SourceBatch>, batch_size: Option<usize>) -> Vec<Vec<SourceBatch>> {
    let n = sources[0].len();
    match batch_size {
        Some(b) if b > 0 && b < n => (0..n)
            .step_by(b)
            .map(|start| sources.iter().map(|s| s.slice(start..(start + b).min(n))).collect())
            .collect(),
        _ => vec![sources],
    }
}

fn cmd_train(args: &TrainArgs) -> Result<Converged> {
    let data = load(&args.data, args.model.sources.as_deref())?;
    let pipeline = FeaturePipeline::fit(args.model.pipeline(), &data.sources)?;
    let features = pipeline.transform(&data.sources)?;
    let spec = args.model.spec(&data, pipeline.output_dims())?;
    let engine = args.model.engine();
    let posterior = train(&spec, &training_batches(features, args.model.batch_size), &engine)?;
    posterior
        .to_json()
        .map_err(CliError::from)
        .and_then(|text| write_text(&args.out.join(POSTERIOR_FILE), &(text + "\n")))?;
    write_text(&args.out.join(PIPELINE_FILE), &(pipeline.to_json()? + "\n"))?;
    let config = RunConfig {
        command: "train".into(),
        data: args.data.clone(),
        model: args.model.clone(),
        spec,
        pipeline: args.model.pipeline(),
        engine,
        sources: data.sources.iter().map(|s| s.source.clone()).collect(),
        class_names: data.class_names,
        location_names: data.location_names,
    };
    write_json(&args.out.join(CONFIG_FILE), &config)?;
    println!(
        "trained {} on {} instances: log evidence {:.4} ({:?}), converged {}",
        config.spec.architecture,
        posterior.metadata.instances_seen,
        posterior.metadata.log_evidence,
        posterior.metadata.engine,
        posterior.metadata.converged
    );
    Ok(posterior.metadata.converged)
}

struct TrainedModel {
    config: RunConfig,
    pipeline: FeaturePipeline,
    posterior: Posterior,
}

fn load_model(dir: &Path) -> Result<TrainedModel> {
    let config: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let pipeline_path = dir.join(PIPELINE_FILE);
    let text = fs::read_to_string(&pipeline_path).map_err(|source| CliError::Io {
        path: pipeline_path,
        source,
    })?;
    let pipeline = FeaturePipeline::from_json(&text)?;
    let posterior_path = dir.join(POSTERIOR_FILE);
    let text = fs::read_to_string(&posterior_path).map_err(|source| CliError::Io {
        path: posterior_path,
        source,
    })?;
    let posterior = Posterior::from_json(&text)?;
    Ok(TrainedModel {
        config,
        pipeline,
        posterior,
    })
}

fn cmd_predict(args: &PredictArgs) -> Result<Converged> {
    let model = load_model(&args.model)?;
    let data = load(&args.data, Some(&model.config.sources))?;
    let features = model.pipeline.transform(&data.sources)?;
    let predictions = predict(&model.posterior, &features)?;
    let stacked_locations =
        (model.posterior.spec.architecture == Architecture::Stacked).then_some(&model.config.location_names);
    let mut header = vec!["t".to_string()];
    header.extend(model.config.class_names.iter().cloned());
    if let Some(names) = stacked_locations {
        header.extend(names.iter().cloned());
    }
    let mut out = header.join(",") + "\n";
    for (t, p) in features[0].timestamps.iter().zip(&predictions) {
        let mut fields = vec![t.to_string()];
        fields.extend(p.class_probabilities.probabilities().iter().map(f64::to_string));
        if stacked_locations.is_some() {
            let loc = p
                .location_probabilities
                .as_ref()
                .expect("stacked predictions carry locations");
            fields.extend(loc.probabilities().iter().map(f64::to_string));
        }
        out += &(fields.join(",") + "\n");
    }
    write_text(&args.out, &out)?;
    Ok(true)
}

/// Class probability rows of a prediction CSV.
fn read_predictions(path: &Path, classes: usize) -> Result<Vec<crate::dists::Discrete>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LoadError::MalformedCsv {
        file: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let bad = |line: u64, message: String| LoadError::MalformedCsv {
            file: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < classes + 1 {
            return Err(bad(line, format!("expected {} class columns", classes)).into());
        }
        let probs: Vec<f64> = (1..=classes)
            .map(|i| record[i].parse::<f64>().map_err(|e| bad(line, e.to_string())))
            .collect::<std::result::Result<_, _>>()?;
        out.push(crate::dists::Discrete::new(probs).map_err(|e| bad(line, e.to_string()))?);
    }
    Ok(out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<Converged> {
    let data = load(&args.data, args.model_args.sources.as_deref())?;
    let classes = data.class_names.len();
    let weights = args.weights.clone().unwrap_or_else(|| vec![1.0; classes]);
    if weights.len() != classes {
        return Err(CliError::Invalid(format!("--weights needs {classes} values")));
    }
    let targets = data.sources[0]
        .targets
        .clone()
        .ok_or_else(|| CliError::Invalid("dataset has no targets".into()))?;
    match (&args.predictions, args.folds) {
        (Some(path), None) => {
            let preds = read_predictions(path, classes)?;
            let mut report = weighted_brier(&preds, &targets, &weights)?;
            if let Some(dir) = &args.model {
                report = report.with_evidence(Evidence::of(&load_model(dir)?.posterior));
            }
            print!("{}", report.table(&data.class_names));
            write_json(&args.out, &report)?;
            Ok(true)
        }
        (None, Some(k)) => {
            let spec = args
                .model_args
                .spec(&data, data.sources.iter().map(SourceBatch::width).collect())?;
            let cv = cross_validate(
                &spec,
                &data.sources,
                k,
                Some(args.model_args.pipeline()),
                &args.model_args.engine(),
                &weights,
            )?;
            print!("{}", cv.table());
            write_json(&args.out, &cv)?;
            Ok(true)
        }
        _ => Err(CliError::Invalid("give exactly one of --predictions or --folds".into())),
    }
}

#[derive(Debug, Serialize)]
struct Comparison {
    models: Vec<PathBuf>,
    evidence: Vec<Evidence>,
    /// `log_bayes_factors[i][j]` is the log odds of model `i` over model `j`.
    log_bayes_factors: Vec<Vec<f64>>,
}

fn cmd_compare(args: &CompareArgs) -> Result<Converged> {
    let evidence: Vec<Evidence> = args
        .models
        .iter()
        .map(|m| load_model(m).map(|t| Evidence::of(&t.posterior)))
        .collect::<Result<_>>()?;
    let matrix = evidence
        .iter()
        .map(|a| {
            evidence
                .iter()
                .map(|b| bayes_factor(*a, *b, 0.0))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for (i, row) in matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4}")).collect();
        println!("{:>3} {}", i, cells.join(" "));
    }
    write_json(
        &args.out,
        &Comparison {
            models: args.models.clone(),
            evidence,
            log_bayes_factors: matrix,
        },
    )?;
    Ok(true)
}

pub fn run(cli: &Cli) -> Result<Converged> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: inference did not converge; outputs were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
