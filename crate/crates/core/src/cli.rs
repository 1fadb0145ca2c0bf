//! The `coda` command line: argument parsing, config layering, run manifests
//! and exit codes. `main` is a one-line call to [`run`].
//!
//! Settings are layered as defaults < `--config` file < `--set key=value` <
//! dedicated flags. Every run writes a manifest next to its output holding the
//! effective config, and `coda rerun --manifest M` repeats the run from it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use crate::annotator::{
    detect_codas, read_annotations, write_annotations, AnnotationDocument, AnnotationFormat, RunManifest, Timing,
    ANNOTATION_SCHEMA,
};
use crate::audio::{load_audio, write_wav, WavEncoding};
use crate::config::RunConfig;
use crate::error::{CodaError, Result};
use crate::eval::{evaluate, roc_eval, write_roc_csv};
use crate::exchange::{analyze_exchanges, export_distributions};
use crate::synth::{synth_scene, GroundTruth, SceneScript, SCENE_SCHEMA, TRUTH_SCHEMA};
use crate::temporal::{train_model, CodaDatabase, CodaTypeModel, MODEL_VERSION};

/// Exit status for bad invocations: unknown flags, bad config keys or values.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for unreadable or invalid data, models and scripts.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "coda", about = "Detect, classify and analyse sperm-whale codas")]
pub struct Cli {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find and annotate codas in a recording.
    Detect(DetectArgs),
    /// Fit the rhythm model from a CSV of labelled codas.
    Train(TrainArgs),
    /// Pair codas and compute exchange statistics.
    Analyze(AnalyzeArgs),
    /// Render a scene script to audio and ground truth.
    Simulate(SimulateArgs),
    /// Score detections against ground truth over a ρ_d sweep.
    Eval(EvalArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, clap::Args)]
pub struct DetectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the detections as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Drop the multipulse and resonance constraints.
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    #[arg(long)]
    pub buffer_sec: Option<f64>,
    #[arg(long)]
    pub overlap_sec: Option<f64>,
    #[arg(long)]
    pub band_lo: Option<f64>,
    #[arg(long)]
    pub band_hi: Option<f64>,
    #[arg(long)]
    pub min_peak_dist_ms: Option<f64>,
    #[arg(long)]
    pub snr_min_db: Option<f64>,
    #[arg(long)]
    pub max_peaks: Option<usize>,
    #[arg(long)]
    pub roi_ms: Option<f64>,
    #[arg(long)]
    pub rho_d: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// CSV rows `click_count,type_label,ici_1,...,ici_W`.
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub pair_window_sec: Option<f64>,
    #[arg(long)]
    pub amp_gap_db: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    Pcm16,
    Float32,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    pub encoding: Encoding,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// ROC table: rho_d, pd, far_per_min, true_positives, false_positives.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Tool, annotation, model and scene schema versions.
pub fn version_text() -> String {
    format!(
        "coda {} (annotations {ANNOTATION_SCHEMA}, model v{MODEL_VERSION}, scene {SCENE_SCHEMA}, truth {TRUTH_SCHEMA})",
        env!("CARGO_PKG_VERSION")
    )
}

/// Exit status for an error: usage problems give 1, everything else 2.
pub fn exit_code(err: &CodaError) -> i32 {
    match err.root() {
        CodaError::Argument(_) | CodaError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parse `argv` (program name first), run the command and return the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let command = <Cli as clap::CommandFactory>::command().version(version);
    let cli = match command.try_get_matches_from(&argv).and_then(|m| <Cli as clap::FromArgMatches>::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn parse_set(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CodaError::Config(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect()
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        out.push((key.to_string(), v.to_string()));
    }
}

/// Config overrides carried by dedicated flags.
fn flag_overrides(cli: &Cli) -> Vec<(String, String)> {
    let mut out = Vec::new();
    push(&mut out, "seed", cli.seed);
    match &cli.command {
        Command::Detect(a) => {
            push(&mut out, "buffer_sec", a.buffer_sec);
            push(&mut out, "overlap_sec", a.overlap_sec);
            push(&mut out, "detector.band_lo_hz", a.band_lo);
            push(&mut out, "detector.band_hi_hz", a.band_hi);
            push(&mut out, "detector.min_peak_dist_ms", a.min_peak_dist_ms);
            push(&mut out, "detector.snr_min_db", a.snr_min_db);
            push(&mut out, "detector.max_peaks", a.max_peaks);
            push(&mut out, "detector.roi_ms", a.roi_ms);
            push(&mut out, "cluster.rho_d", a.rho_d);
            if a.unconstrained {
                push(&mut out, "cluster.constrained", Some(false));
            }
        }
        Command::Analyze(a) => {
            push(&mut out, "exchange.pair_window_sec", a.pair_window_sec);
            push(&mut out, "exchange.amp_gap_db", a.amp_gap_db);
        }
        _ => {}
    }
    out
}

/// Effective config for a fresh run: defaults < file < --set < flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&parse_set(&cli.set)?)?;
    cfg.apply(&flag_overrides(cli))?;
    Ok(cfg)
}

/// Where a command's manifest goes.
pub fn manifest_path(command: &Command) -> Option<PathBuf> {
    let beside = |p: &Path| p.with_extension("manifest.json");
    match command {
        Command::Detect(a) => Some(beside(&a.out)),
        Command::Train(a) => Some(beside(&a.out)),
        Command::Analyze(a) => Some(a.out_dir.join("manifest.json")),
        Command::Simulate(a) => Some(beside(&a.out)),
        Command::Eval(a) => Some(beside(&a.out)),
        Command::Rerun(_) => None,
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Detect(_) => "detect",
        Command::Train(_) => "train",
        Command::Analyze(_) => "analyze",
        Command::Simulate(_) => "simulate",
        Command::Eval(_) => "eval",
        Command::Rerun(_) => "rerun",
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let (cli, argv, cfg) = match &cli.command {
        Command::Rerun(r) => {
            let manifest = RunManifest::read(&r.manifest)?;
            let original = Cli::try_parse_from(&manifest.argv)
                .map_err(|e| CodaError::Config(format!("{}: recorded argv does not parse: {e}", r.manifest.display())))?;
            if matches!(original.command, Command::Rerun(_)) {
                return Err(CodaError::Config("a manifest cannot record a rerun".into()));
            }
            let mut cfg = RunConfig::default();
            cfg.apply(&crate::config::parse_config_text(&manifest.config.join("\n"))?)?;
            let threads = cli.threads.or(original.threads);
            (Cli { threads, ..original }, manifest.argv, cfg)
        }
        _ => {
            let cfg = resolve_config(&cli)?;
            (cli, argv, cfg)
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CodaError::arg("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CodaError::arg(format!("thread pool: {e}")))?;

    let started = unix_now();
    let clock = Instant::now();
    let mut manifest = RunManifest::new(command_name(&cli.command), argv, cfg.to_lines()?);
    pool.install(|| dispatch(&cli, &cfg, &mut manifest))?;
    manifest.timing = Some(Timing {
        started_at: started,
        finished_at: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    });
    if let Some(path) = manifest_path(&cli.command) {
        manifest.write(&path)?;
        log::info!("manifest written to {}", path.display());
    }
    Ok(())
}

fn output(manifest: &mut RunManifest, path: &Path) {
    manifest.outputs.push(path.display().to_string());
}

fn dispatch(cli: &Cli, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    match &cli.command {
        Command::Detect(a) => {
            manifest.add_input(&a.input)?;
            manifest.add_input(&a.model)?;
            let model = CodaTypeModel::load(&a.model)?;
            manifest.model_version = Some(model.version);
            let signal = load_audio(&a.input, a.channel)?;
            let detections = detect_codas(&signal, &model, &cfg.pipeline)?;
            log::info!("{} codas in {:.1} s of audio", detections.len(), signal.duration());
            output(manifest, &a.out);
            if let Some(csv) = &a.csv {
                output(manifest, csv);
            }
            let doc = AnnotationDocument::new(detections, Some(manifest.clone()));
            write_annotations(&doc, &a.out, AnnotationFormat::Json)?;
            if let Some(csv) = &a.csv {
                write_annotations(&doc, csv, AnnotationFormat::Csv)?;
            }
        }
        Command::Train(a) => {
            manifest.add_input(&a.db)?;
            let db = CodaDatabase::load_csv(&a.db)?;
            let model = train_model(&db, &cfg.train_config())?;
            manifest.model_version = Some(model.version);
            model.save(&a.out)?;
            output(manifest, &a.out);
            log::info!("trained on {} codas, {} interval counts", db.len(), model.per_width.len());
        }
        Command::Analyze(a) => {
            manifest.add_input(&a.annotations)?;
            let doc = read_annotations(&a.annotations)?;
            let stats = analyze_exchanges(&doc.detections, &cfg.exchange)?;
            for path in export_distributions(&stats, &doc.detections, &a.out_dir)? {
                output(manifest, &path);
            }
            log::info!("{} codas, {} pairs", doc.detections.len(), stats.pairs.len());
        }
        Command::Simulate(a) => {
            manifest.add_input(&a.script)?;
            let mut script = SceneScript::load(&a.script)?;
            if cli.seed.is_some() {
                script.seed = cfg.seed;
            }
            let (signal, truth) = synth_scene(&script)?;
            let encoding = match a.encoding {
                Encoding::Pcm16 => WavEncoding::Pcm16,
                Encoding::Float32 => WavEncoding::Float32,
            };
            write_wav(&signal, &a.out, encoding)?;
            truth.save(&a.truth)?;
            output(manifest, &a.out);
            output(manifest, &a.truth);
        }
        Command::Eval(a) => {
            manifest.add_input(&a.detections)?;
            manifest.add_input(&a.truth)?;
            let doc = read_annotations(&a.detections)?;
            let truth = GroundTruth::load(&a.truth)?;
            let tol = cfg.eval.match_tol_ms / 1000.0;
            let points = roc_eval(&doc.detections, &truth, tol, &cfg.eval.thresholds()?)?;
            write_roc_csv(&points, &a.out)?;
            output(manifest, &a.out);
            let summary = evaluate(&doc.detections, &truth, tol)?;
            log::info!(
                "Pd {:.3}, FAR {:.3}/min over all detections",
                summary.pd(),
                summary.far_per_min()
            );
        }
        Command::Rerun(_) => unreachable!("rerun is resolved before dispatch"),
    }
    Ok(())
}
