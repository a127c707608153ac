//! Command-line front end. The `wildlabel` binary parses [`Cli`] and calls
//! [`run`]; every command returns its result as JSON or rendered text.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::annotate::{self, service, AnnotationBatch, Desk, BATCH_FILE};
use crate::catalog::Catalog;
use crate::config::{env_layer, Layer, WorkspaceConfig};
use crate::dataset::{self, build_datasets};
use crate::error::{Error, Result};
use crate::eval::{compare_scenarios, evaluate, EvalReport, ReportFormat, ReportMeta};
use crate::facegate::{self, CropOptions, ExternalDetector, FaceDetector, FixtureDetector};
use crate::harvest::{self, EngineAdapter, FixtureAdapter};
use crate::noisemodel::{estimate_from_pairs, flip_labels, query_flip_matrix, NoiseMatrix};
use crate::simulate::{self, model_name, FlipSource, SimulationConfig};
use crate::taxonomy::{expand_query_templates, load_keywords, ExpressionLabel};
use crate::trainer::{self, Checkpoint, ModelSpec, Sample, ScenarioKind, TrainConfig};

pub const NOISE_FILE: &str = "noise.txt";

#[derive(Debug, Parser)]
#[command(name = "wildlabel", version, about = "Facial-expression datasets from noisy web queries")]
pub struct Cli {
    /// Workspace root holding the catalog, blobs and wildlabel.conf.
    #[arg(long, global = true, env = "WILDLABEL_WORKSPACE", default_value = ".")]
    pub workspace: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand keywords into queries and store the engines' result URLs.
    Harvest(HarvestArgs),
    /// Fetch every pending image.
    Download(DownloadArgs),
    /// Detect faces and keep images with a landmarked face.
    Gate(GateArgs),
    /// Draw the annotation batch per intended emotion.
    Sample(SampleArgs),
    /// Annotation service.
    Annotate {
        #[command(subcommand)]
        command: AnnotateCommand,
    },
    /// Adjudicate every doubly annotated image.
    Resolve(SeedArgs),
    /// Funnel counts, agreement and query-confusion statistics.
    Stats(FormatArgs),
    /// Noise-matrix tools.
    Noise {
        #[command(subcommand)]
        command: NoiseCommand,
    },
    /// Train one scenario on the workspace's crops.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Run the synthetic three-scenario benchmark.
    Simulate(SimulateArgs),
    /// Compare saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[arg(long)]
    pub keywords: PathBuf,
    /// Comma-separated language codes.
    #[arg(long)]
    pub languages: Option<String>,
    /// Comma-separated engine names; each is served from `<fixtures>/<engine>/`.
    #[arg(long, default_value = "fixture")]
    pub engines: String,
    /// Fixture root; defaults to `<workspace>/fixtures`.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = harvest::DEFAULT_LIMIT)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct DownloadArgs {
    /// Requests per second per host.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    /// `fixture` or `external:<shell command>`.
    #[arg(long, default_value = "fixture")]
    pub detector: String,
    /// Sidecar directory for the fixture detector; defaults to `<workspace>/faces`.
    #[arg(long)]
    pub faces: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 4000)]
    pub per_emotion: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Serve the annotation API over the current batch.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the UI bundle.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FormatArgs {
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Subcommand)]
pub enum NoiseCommand {
    /// Estimate from records with both an expert and a query label.
    Estimate {
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        /// Output file; defaults to `<workspace>/noise.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a saved matrix, or the query-derived flip matrix with `--table`.
    Show {
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        table: bool,
    },
    /// Flip labels through the query-derived matrix and re-estimate it.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `clean`, `mix` or `noisemix`.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `affine` or `mlp:<hidden width>`.
    #[arg(long, default_value = "affine")]
    pub model: String,
    /// Noise matrix for `noisemix`; defaults to `<workspace>/noise.txt`.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `workspace` for the catalog's test split, or a JSON-lines file of samples.
    #[arg(long, default_value = "workspace")]
    pub test: String,
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Fear and Disgust at a quarter of the other classes' clean counts.
    #[arg(long)]
    pub imbalanced: bool,
    /// Leave labels uncorrupted.
    #[arg(long)]
    pub identity: bool,
    #[arg(long, default_value = "affine")]
    pub model: String,
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation reports in JSON, as written by `eval --format json`.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: String,
}

/// A command's result.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Json(Value),
    Text(String),
}

impl Output {
    pub fn render(&self) -> String {
        match self {
            Output::Json(v) => serde_json::to_string_pretty(v).expect("json value"),
            Output::Text(t) => t.clone(),
        }
    }
}

/// Machine-readable error body printed on failure.
pub fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } | Error::Json(_) => "parse",
        Error::Locked(_) => "locked",
        Error::Config(_) | Error::InvalidPolicy(_) => "config",
        Error::NotReady(_) => "not_ready",
        Error::Diverged { .. } => "diverged",
        _ => "invalid",
    };
    json!({ "error": kind, "detail": e.to_string() })
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Output> {
    Ok(Output::Json(serde_json::to_value(v)?))
}

fn config(ws: &Path, flags: Layer) -> Result<WorkspaceConfig> {
    WorkspaceConfig::resolve(ws, &flags, &env_layer(std::env::vars()))
}

fn flag<T: ToString>(layer: &mut Layer, key: &str, value: Option<T>) {
    if let Some(v) = value {
        layer.insert(key.to_string(), v.to_string());
    }
}

fn parse_format(s: &str) -> Result<ReportFormat> {
    s.parse()
}

pub fn parse_model(spec: &str, input_dim: usize) -> Result<ModelSpec> {
    match spec.split_once(':') {
        None if spec == "affine" => Ok(ModelSpec::Affine { input_dim }),
        Some(("mlp", hidden)) => {
            let hidden: usize = hidden.parse().map_err(|_| Error::Config(format!("bad hidden width in `{spec}`")))?;
            if hidden == 0 {
                return Err(Error::Config("hidden width must be positive".into()));
            }
            Ok(ModelSpec::Mlp { input_dim, hidden })
        }
        _ => Err(Error::Config(format!("unknown model `{spec}`; use affine or mlp:<width>"))),
    }
}

fn crop_options(cfg: &WorkspaceConfig) -> CropOptions {
    CropOptions { out_size: cfg.crop_size, ..CropOptions::default() }
}

pub fn run(cli: Cli) -> Result<Output> {
    let ws = cli.workspace.as_path();
    match cli.command {
        Command::Harvest(a) => harvest_cmd(ws, a),
        Command::Download(a) => {
            let mut flags = Layer::new();
            flag(&mut flags, "rate", a.rate);
            flag(&mut flags, "parallel", a.parallel);
            flag(&mut flags, "timeout", a.timeout);
            flag(&mut flags, "retries", a.retries);
            let cfg = config(ws, flags)?;
            let mut catalog = Catalog::open(ws)?;
            let mut report = harvest::download_pending(&mut catalog, &cfg.fetch)?;
            report.request_log.clear();
            to_json(&report)
        }
        Command::Gate(a) => {
            let detector: Box<dyn FaceDetector> = match a.detector.split_once(':') {
                None if a.detector == "fixture" => {
                    Box::new(FixtureDetector::new(a.faces.unwrap_or_else(|| ws.join("faces"))))
                }
                Some(("external", cmd)) if !cmd.trim().is_empty() => Box::new(ExternalDetector::new(cmd)),
                _ => return Err(Error::Config(format!("unknown detector `{}`", a.detector))),
            };
            let mut catalog = Catalog::open(ws)?;
            to_json(&facegate::gate_catalog(&mut catalog, detector.as_ref(), a.threads)?)
        }
        Command::Sample(a) => {
            let mut flags = Layer::new();
            flag(&mut flags, "seed", a.seed);
            let cfg = config(ws, flags)?;
            let catalog = Catalog::open(ws)?;
            let batch = annotate::sample_batch(catalog.records(), a.per_emotion, cfg.seed);
            for w in &batch.warnings {
                log::warn!("{w}");
            }
            batch.save(&ws.join(BATCH_FILE))?;
            Ok(Output::Json(json!({
                "batch_size": batch.len(),
                "strata": batch.strata,
                "warnings": batch.warnings,
                "path": ws.join(BATCH_FILE),
            })))
        }
        Command::Annotate { command: AnnotateCommand::Serve { port, host, static_dir } } => {
            let mut flags = Layer::new();
            flag(&mut flags, "port", port);
            let cfg = config(ws, flags)?;
            let catalog = Catalog::open(ws)?;
            let batch = AnnotationBatch::load(&ws.join(BATCH_FILE))?;
            let desk = Desk::new(catalog, batch)?;
            let options = service::ServiceOptions { static_dir, ..Default::default() };
            let addr = format!("{host}:{}", cfg.port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(ws, e))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::io(ws, e))?;
                log::info!("serving on http://{}", listener.local_addr().map_err(|e| Error::io(ws, e))?);
                service::serve(listener, desk, options).await.map_err(|e| Error::io(ws, e))
            })?;
            Ok(Output::Json(json!({ "stopped": true })))
        }
        Command::Resolve(a) => {
            let mut flags = Layer::new();
            flag(&mut flags, "seed", a.seed);
            let cfg = config(ws, flags)?;
            let mut catalog = Catalog::open(ws)?;
            to_json(&annotate::resolve_catalog(&mut catalog, cfg.seed)?)
        }
        Command::Stats(a) => stats_cmd(ws, &a.format),
        Command::Noise { command } => noise_cmd(ws, command),
        Command::Train(a) => train_cmd(ws, a),
        Command::Eval(a) => eval_cmd(ws, a),
        Command::Simulate(a) => simulate_cmd(ws, a),
        Command::Report(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                    Ok(serde_json::from_slice::<EvalReport>(&bytes)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let cmp = compare_scenarios(&reports)?;
            render(&cmp, parse_format(&a.format)?, |f| cmp.render(f))
        }
    }
}

fn render<T: serde::Serialize>(v: &T, format: ReportFormat, text: impl Fn(ReportFormat) -> Result<String>) -> Result<Output> {
    match format {
        ReportFormat::Json => to_json(v),
        f => Ok(Output::Text(text(f)?)),
    }
}

fn harvest_cmd(ws: &Path, a: HarvestArgs) -> Result<Output> {
    let mut flags = Layer::new();
    flag(&mut flags, "languages", a.languages);
    let cfg = config(ws, flags)?;
    let keywords = load_keywords(&a.keywords)?;
    let expansion = expand_query_templates(&keywords, &cfg.language_refs())?;
    for s in &expansion.skipped {
        log::info!("no {} translation for `{}`", s.language, s.keyword);
    }
    let root = a.fixtures.unwrap_or_else(|| ws.join("fixtures"));
    let adapters: Vec<FixtureAdapter> = a
        .engines
        .split(',')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|e| FixtureAdapter::new(e, &root))
        .collect();
    if adapters.is_empty() {
        return Err(Error::Config("no engines given".into()));
    }
    let refs: Vec<&dyn EngineAdapter> = adapters.iter().map(|a| a as &dyn EngineAdapter).collect();
    let mut catalog = Catalog::open(ws)?;
    let report = harvest::run_harvest(&expansion.queries, &refs, a.limit, &mut catalog)?;
    Ok(Output::Json(json!({
        "queries": expansion.queries.len(),
        "skipped_pairs": expansion.skipped.len(),
        "report": report,
    })))
}

fn stats_cmd(ws: &Path, format: &str) -> Result<Output> {
    let format = parse_format(format)?;
    let catalog = Catalog::snapshot(ws)?;
    let funnel = catalog.funnel_stats();
    let agreement = annotate::agreement_stats(catalog.records());
    let confusion = annotate::query_confusion(catalog.records());
    if format == ReportFormat::Json {
        return Ok(Output::Json(json!({
            "funnel": funnel,
            "agreement": agreement,
            "query_confusion": confusion,
        })));
    }
    let mut out = String::new();
    let f = &funnel;
    for (name, n) in [
        ("distinct urls", f.distinct_urls),
        ("downloaded", f.downloaded),
        ("failed", f.failed),
        ("pending", f.pending),
        ("distinct blobs", f.distinct_blobs),
        ("kept", f.kept),
        ("annotated", f.annotated),
        ("double annotated", f.double_annotated),
        ("resolved", f.resolved),
    ] {
        out.push_str(&format!("{name:<18}{n:>10}\n"));
    }
    if let Some(p) = agreement.agreement_percent {
        out.push_str(&format!("{:<18}{p:>9.2}%\n", "agreement"));
    }
    if let Some(p) = agreement.query_favored_percent {
        out.push_str(&format!("{:<18}{p:>9.2}%\n", "query favored"));
    }
    if let Some(k) = agreement.kappa {
        out.push_str(&format!("{:<18}{k:>10.3}\n", "kappa"));
    }
    out.push('\n');
    out.push_str(&confusion.render());
    Ok(Output::Text(out))
}

fn noise_cmd(ws: &Path, command: NoiseCommand) -> Result<Output> {
    match command {
        NoiseCommand::Estimate { smoothing, out } => {
            let catalog = Catalog::snapshot(ws)?;
            let m = dataset::estimate_noise(catalog.records(), smoothing)?;
            let out = out.unwrap_or_else(|| ws.join(NOISE_FILE));
            m.save(&out)?;
            Ok(Output::Text(m.to_text()))
        }
        NoiseCommand::Show { path, table } => {
            let m = if table { query_flip_matrix() } else { NoiseMatrix::load(&path.unwrap_or_else(|| ws.join(NOISE_FILE)))? };
            Ok(Output::Text(m.to_text()))
        }
        NoiseCommand::Simulate { per_class, smoothing, seed } => {
            use rand::SeedableRng;
            let mut flags = Layer::new();
            flag(&mut flags, "seed", seed);
            let cfg = config(ws, flags)?;
            let flip = query_flip_matrix();
            let truth: Vec<_> = ExpressionLabel::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, per_class)).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let noisy = flip_labels(&truth, &flip, &mut rng);
            let pairs: Vec<_> = truth.into_iter().zip(noisy).collect();
            let est = estimate_from_pairs(&pairs, smoothing)?;
            Ok(Output::Json(json!({
                "seed": cfg.seed,
                "per_class": per_class,
                "flip": flip,
                "estimated": est,
                "max_abs_diff": est.max_abs_diff(&flip),
            })))
        }
    }
}

fn train_cmd(ws: &Path, a: TrainArgs) -> Result<Output> {
    let mut flags = Layer::new();
    flag(&mut flags, "preset", a.preset);
    flag(&mut flags, "seed", a.seed);
    let cfg = config(ws, flags)?;
    let scenario: ScenarioKind = a.scenario.parse()?;
    let mut catalog = Catalog::open(ws)?;
    let split = dataset::assign_splits(&mut catalog, cfg.test_fraction, cfg.seed)?;
    let data = build_datasets(&catalog, &crop_options(&cfg))?;
    if data.clean_train.is_empty() {
        return Err(Error::NotReady("no clean training samples; run resolve first".into()));
    }
    let dim = trainer::feature_dim(&data.clean_train)?;
    let mut train_cfg = TrainConfig::preset(cfg.preset).with_seed(cfg.seed).with_scenario(scenario);
    if let Some(n) = a.max_iterations {
        train_cfg.max_iterations = n;
    }
    let noise = match scenario {
        ScenarioKind::NoiseModeledMix => Some(NoiseMatrix::load(&a.noise.unwrap_or_else(|| ws.join(NOISE_FILE)))?),
        _ => None,
    };
    let mut model = parse_model(&a.model, dim)?.build();
    let outcome = trainer::train(&data.clean_train, &data.noisy_train, noise.as_ref(), &mut model, &train_cfg)?;
    let iterations = outcome.history.entries.len();
    Checkpoint::capture(&model, &train_cfg, iterations).save(&a.out)?;
    Ok(Output::Json(json!({
        "scenario": scenario,
        "checkpoint": a.out,
        "iterations": iterations,
        "split": split,
        "samples": {
            "clean_train": data.clean_train.len(),
            "clean_test": data.clean_test.len(),
            "noisy_train": data.noisy_train.len(),
        },
        "config_hash": train_cfg.hash(),
    })))
}

/// Reads JSON-lines samples.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, detail: e.to_string() }))
        .collect()
}

fn eval_cmd(ws: &Path, a: EvalArgs) -> Result<Output> {
    let format = parse_format(&a.format)?;
    let ckpt = Checkpoint::load(&a.model)?;
    let model = ckpt.restore()?;
    let test = if a.test == "workspace" {
        let cfg = config(ws, Layer::new())?;
        build_datasets(&Catalog::snapshot(ws)?, &crop_options(&cfg))?.clean_test
    } else {
        load_samples(Path::new(&a.test))?
    };
    let meta = ReportMeta { scenario: ckpt.scenario, model: model_name(&ckpt.model), config_hash: ckpt.config_hash.clone() };
    let report = evaluate(&model, &test, meta)?;
    render(&report, format, |f| report.render(f))
}

fn simulate_cmd(ws: &Path, a: SimulateArgs) -> Result<Output> {
    let mut flags = Layer::new();
    flag(&mut flags, "seeds", a.seeds);
    let cfg = config(ws, flags)?;
    let format = parse_format(&a.format)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut sim = if a.imbalanced { SimulationConfig::imbalanced(seed) } else { SimulationConfig::standard(seed) };
        sim.train = TrainConfig::preset(cfg.preset).with_seed(seed);
        sim.model = parse_model(&a.model, sim.dims)?;
        if a.identity {
            sim.flip = FlipSource::Identity;
        }
        runs.push(simulate::simulate(&sim)?);
    }
    if format == ReportFormat::Json {
        let seeds: Vec<Value> = runs
            .iter()
            .map(|r| {
                json!({
                    "seed": r.seed,
                    "accuracy": {
                        "clean": r.accuracy(ScenarioKind::CleanOnly),
                        "mix": r.accuracy(ScenarioKind::NaiveMix),
                        "noisemix": r.accuracy(ScenarioKind::NoiseModeledMix),
                    },
                    "comparison": r.comparison,
                })
            })
            .collect();
        return Ok(Output::Json(json!({ "imbalanced": a.imbalanced, "identity": a.identity, "runs": seeds })));
    }
    let mut out = String::new();
    for r in &runs {
        out.push_str(&format!("seed {}\n", r.seed));
        out.push_str(&r.comparison.render(format)?);
        out.push('\n');
    }
    Ok(Output::Text(out))
}
