//! Command-line front end. Every command writes one JSON manifest next to
//! its outputs. Exit codes: 0 ok, 1 validation, 2 I/O, 3 integrity,
//! 4 numeric abort.
//!
//! Relative input paths are resolved against `$GRU4REC_DATA_ROOT` when it is
//! set.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, SessionCorpus};
use crate::datasets::{self, Adapter, DatasetError, LoadOptions, PipelineConfig, DEFAULT_GAP_SECONDS};
use crate::eval::{self, EvalConfig, EvalError, EvalReport, PopularityRanker};
use crate::persist::{self, PersistError};
use crate::training::{self, TrainConfig, TrainError, PARAM_KEYS};
use crate::validation;

pub const DATA_ROOT_ENV: &str = "GRU4REC_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Validation = 1,
    Io = 2,
    Integrity = 3,
    Numeric = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub messages: Vec<String>,
}

impl CliError {
    fn new(code: ExitCode, message: impl Into<String>) -> Self {
        CliError {
            code,
            messages: vec![message.into()],
        }
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::new(ExitCode::Io, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages.join("\n"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Io { .. } | DatasetError::NoInput => ExitCode::Io,
            _ => ExitCode::Validation,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let code = match e {
            CorpusError::Io(_) => ExitCode::Io,
            _ => ExitCode::Validation,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        let code = match e {
            PersistError::Io { .. } => ExitCode::Io,
            _ => ExitCode::Integrity,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Io { .. } => ExitCode::Io,
            EvalError::NonFiniteScore { .. } => ExitCode::Numeric,
            _ => ExitCode::Validation,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(messages) => CliError {
                code: ExitCode::Validation,
                messages,
            },
            TrainError::NonFinite { .. } | TrainError::Optimizer(_) => {
                CliError::new(ExitCode::Numeric, e.to_string())
            }
            other => CliError::new(ExitCode::Validation, other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gru4rec", version, about = "Session-based recommendation with GRU4Rec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Load a raw dataset export, run the preprocessing pipeline and write
    /// train/test TSVs plus a stats JSON.
    Preprocess(PreprocessArgs),
    /// Train a model on a canonical TSV.
    Train(TrainArgs),
    /// Evaluate a saved model on a test TSV.
    Eval(EvalArgs),
    /// Run the correctness suite and print the feature matrix.
    Validate(ValidateArgs),
    /// Evaluate the popularity baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// yoochoose, rees46, coveo, retailrocket, diginetica or generic-tsv.
    #[arg(long)]
    pub dataset: String,
    /// Raw input files (several for multi-file exports).
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Test window in days (default depends on the dataset).
    #[arg(long)]
    pub test_days: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_GAP_SECONDS)]
    pub gap_seconds: f64,
    #[arg(long, default_value_t = 2)]
    pub min_session_len: usize,
    #[arg(long, default_value_t = 5)]
    pub min_item_support: usize,
    /// Fail on the first malformed row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

/// One optional flag per training hyperparameter, named exactly as in
/// parameter files. Flags override the config file.
#[derive(Debug, Args, Default)]
pub struct HyperFlags {
    /// cross-entropy or bpr-max.
    #[arg(long)]
    pub loss: Option<String>,
    /// softmax, linear, relu, elu, elu-<alpha> or selu.
    #[arg(long = "final_act")]
    pub final_act: Option<String>,
    /// Hidden sizes per layer, e.g. 100 or 224/128.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<String>,
    #[arg(long = "dropout_p_embed")]
    pub dropout_p_embed: Option<String>,
    #[arg(long = "dropout_p_hidden")]
    pub dropout_p_hidden: Option<String>,
    #[arg(long = "learning_rate")]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    /// Extra negatives shared by the mini-batch.
    #[arg(long = "n_sample")]
    pub n_sample: Option<String>,
    /// Exponent of item support in the negative sampling distribution.
    #[arg(long = "sample_alpha")]
    pub sample_alpha: Option<String>,
    /// Score regularization weight of BPR-max.
    #[arg(long)]
    pub bpreg: Option<String>,
    /// Strength of the logQ correction for cross-entropy.
    #[arg(long)]
    pub logq: Option<String>,
    /// Tie input and output embeddings.
    #[arg(long = "constrained_embedding")]
    pub constrained_embedding: Option<String>,
    /// Input embedding width; 0 feeds one-hot vectors.
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long = "n_epochs")]
    pub n_epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Shuffle session order every epoch.
    #[arg(long)]
    pub shuffle: Option<String>,
    /// Number of negative samples drawn ahead of time.
    #[arg(long = "sample_cache")]
    pub sample_cache: Option<String>,
}

impl HyperFlags {
    /// `(key, value)` pairs in canonical key order.
    pub fn pairs(&self) -> Vec<(&'static str, &str)> {
        let values = [
            &self.loss,
            &self.final_act,
            &self.layers,
            &self.batch_size,
            &self.dropout_p_embed,
            &self.dropout_p_hidden,
            &self.learning_rate,
            &self.momentum,
            &self.n_sample,
            &self.sample_alpha,
            &self.bpreg,
            &self.logq,
            &self.constrained_embedding,
            &self.embedding,
            &self.n_epochs,
            &self.seed,
            &self.shuffle,
            &self.sample_cache,
        ];
        PARAM_KEYS
            .iter()
            .zip(values)
            .filter_map(|(k, v)| v.as_deref().map(|v| (*k, v)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Canonical training TSV (SessionId, ItemId, Time).
    #[arg(long)]
    pub train: PathBuf,
    /// Where to write the model file.
    #[arg(long)]
    pub output: PathBuf,
    /// Parameter file: `key=value` pairs separated by commas or newlines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct CutoffArgs {
    /// Comma separated, strictly ascending.
    #[arg(long, value_delimiter = ',', default_values_t = eval::DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
    /// Test sessions per parallel work unit.
    #[arg(long = "eval_batch_size", default_value_t = 256)]
    pub eval_batch_size: usize,
}

impl CutoffArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            cutoffs: self.cutoffs.clone(),
            batch_size: self.eval_batch_size,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub cutoffs: CutoffArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub cutoffs: CutoffArgs,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every input and output file.
    pub checksums: BTreeMap<String, String>,
}

fn resolve_input(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_owned(),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(persist::sha256_hex(&bytes))
}

struct Run {
    command: &'static str,
    started_at: String,
    clock: Instant,
}

impl Run {
    fn start(command: &'static str) -> Run {
        Run {
            command,
            started_at: chrono::Utc::now().to_rfc3339(),
            clock: Instant::now(),
        }
    }

    fn finish(
        self,
        manifest_path: &Path,
        config: serde_json::Value,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> Result<RunManifest, CliError> {
        let mut checksums = BTreeMap::new();
        for p in inputs.iter().chain(&outputs) {
            checksums.insert(p.display().to_string(), file_sha256(p)?);
        }
        let manifest = RunManifest {
            command: self.command.to_owned(),
            version: eval::version_string(),
            config,
            inputs,
            outputs,
            seed,
            started_at: self.started_at,
            wall_clock_seconds: self.clock.elapsed().as_secs_f64(),
            checksums,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        fs::write(manifest_path, text).map_err(|e| CliError::io(manifest_path, e))?;
        Ok(manifest)
    }
}

fn partial_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes all files or none: each writer fills a `.partial` name and the
/// renames happen only after every write succeeded.
type Writer<'a> = Box<dyn FnOnce(&Path) -> Result<(), CliError> + 'a>;

fn write_all_or_nothing(files: Vec<(PathBuf, Writer<'_>)>) -> Result<(), CliError> {
    let targets: Vec<PathBuf> = files.iter().map(|(p, _)| p.clone()).collect();
    let cleanup = || {
        for p in &targets {
            let _ = fs::remove_file(partial_path(p));
        }
    };
    for (p, write) in files {
        if let Err(e) = write(&partial_path(&p)) {
            cleanup();
            return Err(e);
        }
    }
    for p in &targets {
        if let Err(e) = fs::rename(partial_path(p), p) {
            cleanup();
            return Err(CliError::io(p, e));
        }
    }
    Ok(())
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<RunManifest, CliError> {
    let run = Run::start("preprocess");
    let adapter: Adapter = args.dataset.parse()?;
    let inputs: Vec<PathBuf> = args.input.iter().map(|p| resolve_input(p)).collect();
    let (loaded, report) = datasets::load_events(&inputs, adapter, LoadOptions { strict: args.strict })?;
    log::info!(
        "loaded {} events ({} rows read, {} filtered, {} malformed)",
        loaded.len(),
        report.rows_read,
        report.rows_filtered,
        report.rows_malformed
    );
    let cfg = PipelineConfig {
        gap_seconds: args.gap_seconds,
        test_days: args.test_days.unwrap_or(adapter.default_test_days()),
        min_session_len: args.min_session_len,
        min_item_support: args.min_item_support,
    };
    let out = datasets::run_pipeline(&loaded, adapter, &cfg);

    create_dir(&args.output_dir)?;
    let train_path = args.output_dir.join("train.tsv");
    let test_path = args.output_dir.join("test.tsv");
    let stats_path = args.output_dir.join("stats.json");
    let stats_json = serde_json::to_string_pretty(&out.stats).expect("stats serialise") + "\n";
    write_all_or_nothing(vec![
        (train_path.clone(), Box::new(|p| Ok(datasets::write_canonical_tsv(&out.train, p)?))),
        (test_path.clone(), Box::new(|p| Ok(datasets::write_canonical_tsv(&out.test, p)?))),
        (
            stats_path.clone(),
            Box::new(|p| fs::write(p, &stats_json).map_err(|e| CliError::io(p, e))),
        ),
    ])?;
    print!("{stats_json}");

    run.finish(
        &args.output_dir.join("preprocess.manifest.json"),
        serde_json::json!({ "dataset": adapter.name(), "pipeline": cfg, "strict": args.strict }),
        inputs,
        vec![train_path, test_path, stats_path],
        None,
    )
}

/// Config file first, then flags; every problem is collected.
pub fn build_train_config(config: Option<&Path>, flags: &HyperFlags) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    let mut errors = Vec::new();
    if let Some(path) = config {
        let path = resolve_input(path);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        if let Err(e) = cfg.apply_kv_str(&text) {
            errors.extend(e.into_iter().map(|m| format!("{}: {m}", path.display())));
        }
    }
    for (key, value) in flags.pairs() {
        if let Err(e) = cfg.set(key, value) {
            errors.push(format!("--{key}: {e}"));
        }
    }
    if errors.is_empty() {
        if let Err(e) = cfg.validate() {
            errors.extend(e);
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError {
            code: ExitCode::Validation,
            messages: errors,
        })
    }
}

fn manifest_path_for(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    model.with_file_name(name)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest, CliError> {
    let run = Run::start("train");
    let config = build_train_config(args.config.as_deref(), &args.hyper)?;
    let train_path = resolve_input(&args.train);
    let log = datasets::read_canonical_tsv(&train_path)?;
    let corpus = SessionCorpus::build(&log)?;
    log::info!(
        "{} sessions, {} events, {} items",
        corpus.n_sessions(),
        corpus.n_events(),
        corpus.n_items()
    );
    let (model, stats) = training::fit(&corpus, &config)?;
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    persist::save_model(&args.output, &model, &config, corpus.item_map())?;
    let item_map = persist::item_map_path(&args.output);
    run.finish(
        &manifest_path_for(&args.output),
        serde_json::json!({ "train": config, "epochs": stats }),
        vec![train_path],
        vec![args.output.clone(), item_map],
        Some(config.seed),
    )
}

fn write_eval(
    run: Run,
    ranker: &str,
    config: EvalConfig,
    result: eval::EvalResult,
    dir: &Path,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
) -> Result<RunManifest, CliError> {
    print!("{}", result.to_tsv());
    create_dir(dir)?;
    let report = EvalReport {
        version: eval::version_string(),
        ranker: ranker.to_owned(),
        config: config.clone(),
        result,
    };
    let stem = run.command;
    eval::write_report(&report, dir, stem)?;
    run.finish(
        &dir.join(format!("{stem}.manifest.json")),
        serde_json::to_value(&config).expect("config serialises"),
        inputs,
        vec![dir.join(format!("{stem}.tsv")), dir.join(format!("{stem}.json"))],
        seed,
    )
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest, CliError> {
    let run = Run::start("eval");
    let config = args.cutoffs.config();
    config.validate()?;
    let model_path = resolve_input(&args.model);
    let saved = persist::load_model(&model_path)?;
    let test_path = resolve_input(&args.test);
    let test = datasets::read_canonical_tsv(&test_path)?;
    let result = eval::evaluate(&saved.model, &test, &saved.item_map, &config)?;
    write_eval(
        run,
        "gru4rec",
        config,
        result,
        &args.output_dir,
        vec![model_path, test_path],
        Some(saved.config.seed),
    )
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<RunManifest, CliError> {
    let run = Run::start("baseline");
    let config = args.cutoffs.config();
    config.validate()?;
    let train_path = resolve_input(&args.train);
    let test_path = resolve_input(&args.test);
    let corpus = SessionCorpus::build(&datasets::read_canonical_tsv(&train_path)?)?;
    let test = datasets::read_canonical_tsv(&test_path)?;
    if test.is_empty() {
        return Err(EvalError::EmptyTest.into());
    }
    let ranker = PopularityRanker::from_corpus(&corpus);
    let sessions = corpus.item_map().map_sessions(&test);
    let result = eval::evaluate_sessions(&ranker, &sessions, &config)?;
    write_eval(run, "popularity", config, result, &args.output_dir, vec![train_path, test_path], None)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<RunManifest, CliError> {
    let run = Run::start("validate");
    let reports = validation::run_all(args.seed);
    let matrix = validation::emit_feature_matrix(&reports);
    let tsv = validation::reports_to_tsv(&reports);
    print!("{tsv}\n{}", matrix.render());
    create_dir(&args.output_dir)?;
    let checks_path = args.output_dir.join("checks.tsv");
    let matrix_path = args.output_dir.join("feature_matrix.txt");
    fs::write(&checks_path, &tsv).map_err(|e| CliError::io(&checks_path, e))?;
    fs::write(&matrix_path, matrix.render()).map_err(|e| CliError::io(&matrix_path, e))?;
    let manifest = run.finish(
        &args.output_dir.join("validate.manifest.json"),
        serde_json::json!({ "checks": reports.len() }),
        vec![],
        vec![checks_path, matrix_path],
        Some(args.seed),
    )?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("check failed: {} (measured {:e}, threshold {:e})", r.name, r.measured, r.threshold))
        .collect();
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError {
            code: ExitCode::Validation,
            messages: failed,
        })
    }
}

pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn help_lists_every_hyperparameter() {
        let help = Cli::command()
            .find_subcommand_mut("train")
            .unwrap()
            .render_long_help()
            .to_string();
        for key in PARAM_KEYS {
            assert!(help.contains(&format!("--{key}")), "missing --{key}");
        }
    }

    #[test]
    fn flags_map_one_to_one_onto_config_keys() {
        let cli = Cli::try_parse_from([
            "gru4rec", "train", "--train", "t.tsv", "--output", "m", "--loss", "bpr-max", "--final_act",
            "elu-0.5", "--n_sample", "2048", "--sample_alpha", "0.5", "--bpreg", "1.0", "--layers",
            "224", "--batch_size", "80", "--dropout_p_embed", "0.1", "--dropout_p_hidden", "0.2",
            "--learning_rate", "0.05", "--momentum", "0.4", "--logq", "0", "--constrained_embedding",
            "false", "--embedding", "32", "--n_epochs", "5", "--seed", "3", "--shuffle", "true",
            "--sample_cache", "1000",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.hyper.pairs().len(), PARAM_KEYS.len());
        let cfg = build_train_config(None, &a.hyper).unwrap();
        assert_eq!(cfg.n_sample, 2048);
        assert_eq!(cfg.batch_size, 80);
        assert_eq!(cfg.embedding, 32);
        assert!(!cfg.constrained_embedding);
    }

    #[test]
    fn every_config_error_is_reported() {
        let flags = HyperFlags {
            loss: Some("cross-entropy".into()),
            final_act: Some("relu".into()),
            ..HyperFlags::default()
        };
        let err = build_train_config(None, &flags).unwrap_err();
        assert_eq!(err.code, ExitCode::Validation);
        assert!(err.messages.iter().any(|m| m.contains("softmax")), "{err}");

        let flags = HyperFlags {
            batch_size: Some("many".into()),
            momentum: Some("x".into()),
            ..HyperFlags::default()
        };
        assert_eq!(build_train_config(None, &flags).unwrap_err().messages.len(), 2);
    }

    #[test]
    fn cutoffs_flag_parses_lists() {
        let cli = Cli::try_parse_from([
            "gru4rec", "eval", "--model", "m", "--test", "t", "--output-dir", "o", "--cutoffs", "20",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.cutoffs.config().cutoffs, vec![20]);
        let cli = Cli::try_parse_from(["gru4rec", "eval", "--model", "m", "--test", "t", "--output-dir", "o"])
            .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.cutoffs.cutoffs, vec![1, 5, 10, 20]);
    }

    #[test]
    fn missing_input_leaves_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let args = PreprocessArgs {
            dataset: "diginetica".into(),
            input: vec![dir.path().join("absent.csv")],
            output_dir: out.clone(),
            test_days: Some(7),
            gap_seconds: DEFAULT_GAP_SECONDS,
            min_session_len: 2,
            min_item_support: 5,
            strict: false,
        };
        let err = cmd_preprocess(&args).unwrap_err();
        assert_eq!(err.code, ExitCode::Io);
        assert!(!out.exists());
    }
}
