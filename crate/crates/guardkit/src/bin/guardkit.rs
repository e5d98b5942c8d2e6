//! Thin command-line front end over the guardkit library. Each subcommand is
//! a direct wrapper around one library entry point; see the crate examples
//! for programmatic use.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use guardkit::client::{
    Backend, BackendConfig, BackendRunner, Decoding, HttpBackend, MockBackend, MockMode,
    RunnerConfig,
};
use guardkit::harness::{render_report, run_eval, score_run, EvalOptions, EvalRun, ReportFormat};
use guardkit::manifest::{
    load_manifest, validate_policy_consistency, DatasetManifest, FindingSeverity,
};
use guardkit::pipeline::{
    manifest_fragment, run_pipeline, MockEditBackend, MockEditMode, PipelineBackends, PipelineJob,
};
use guardkit::policy::PolicyRegistry;
use guardkit::reward::RewardSpec;
use guardkit::verdict::AbstainPolicy;
use guardkit::{Error, Result};

#[derive(Parser)]
#[command(name = "guardkit", version, about = "Policy-aware image guardrail toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset manifest and report cross-policy consistency.
    Validate {
        /// Manifest path, or `builtin` for the bundled benchmark.
        #[arg(long)]
        manifest: String,
    },
    /// Evaluate a backend across samples and policies; persists raw outputs.
    Eval {
        /// Manifest path, or `builtin` for the bundled benchmark.
        #[arg(long)]
        manifest: String,
        /// Comma-separated policy ids (default: all registered).
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        /// Backend spec: `mock:oracle`, `mock:always-safe`,
        /// `mock:always-unsafe`, `mock:refusing`, or `http=<config.toml>`.
        #[arg(long)]
        backend: String,
        /// Output path for the persisted run (JSON).
        #[arg(long)]
        out: PathBuf,
        /// How abstentions score: count-as-unsafe, count-as-safe, count-as-wrong.
        #[arg(long, default_value = "count-as-wrong")]
        abstain: String,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Run id recorded in the artifact (default: output file stem).
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Render a report table from persisted runs.
    Report {
        /// One or more run artifacts produced by `eval`.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Serve rewards and advantages over HTTP.
    RewardServe {
        #[arg(long, default_value = "127.0.0.1:8077")]
        bind: SocketAddr,
        /// Optional reward spec TOML (weights, epsilon, parse rules).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run or resume a two-step recaption job.
    Recaption {
        /// Job definition (TOML).
        #[arg(long)]
        job: PathBuf,
        /// State file; defaults to `<job>.state.json`.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Captioning backend spec (see `eval --backend`).
        #[arg(long)]
        caption_backend: String,
        /// Recaptioning backend spec.
        #[arg(long)]
        recaption_backend: String,
    },
    /// Run or resume a minimal-edit pair-construction job.
    EditPairs {
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        state: Option<PathBuf>,
        /// Edit backend: `echo` (copies the source) or `refuse`.
        #[arg(long, default_value = "echo")]
        edit_backend: String,
    },
}

fn load_manifest_arg(arg: &str) -> Result<DatasetManifest> {
    if arg == "builtin" {
        Ok(guardkit::builtin::benchmark_manifest())
    } else {
        load_manifest(&std::fs::read_to_string(arg)?)
    }
}

fn parse_backend(spec: &str, manifest: Option<&DatasetManifest>) -> Result<Arc<dyn Backend>> {
    match spec {
        "mock:oracle" => {
            let manifest = manifest
                .ok_or_else(|| Error::Input("mock:oracle needs a manifest".into()))?;
            Ok(Arc::new(MockBackend::oracle_for(manifest)))
        }
        "mock:always-safe" => Ok(Arc::new(MockBackend::new("mock-safe", MockMode::AlwaysSafe))),
        "mock:always-unsafe" => {
            Ok(Arc::new(MockBackend::new("mock-unsafe", MockMode::AlwaysUnsafe)))
        }
        "mock:refusing" => Ok(Arc::new(MockBackend::new(
            "mock-refusing",
            MockMode::Refusing("I cannot assist with that request.".into()),
        ))),
        other => {
            if let Some(path) = other.strip_prefix("http=") {
                let config: BackendConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
                Ok(Arc::new(HttpBackend::new(config)?))
            } else {
                Err(Error::Input(format!(
                    "unknown backend spec `{other}`; expected mock:oracle, mock:always-safe, \
                     mock:always-unsafe, mock:refusing, or http=<config.toml>"
                )))
            }
        }
    }
}

fn parse_abstain(arg: &str) -> Result<AbstainPolicy> {
    match arg {
        "count-as-unsafe" => Ok(AbstainPolicy::CountAsUnsafe),
        "count-as-safe" => Ok(AbstainPolicy::CountAsSafe),
        "count-as-wrong" => Ok(AbstainPolicy::CountAsWrong),
        other => Err(Error::Input(format!("unknown abstain policy `{other}`"))),
    }
}

fn cmd_validate(manifest_arg: &str) -> Result<i32> {
    let manifest = load_manifest_arg(manifest_arg)?;
    manifest.validate()?;
    let registry = PolicyRegistry::with_builtins();
    let report = validate_policy_consistency(&manifest, &registry);
    println!(
        "manifest `{}`: {} samples, {} policies",
        manifest.dataset_id,
        manifest.samples.len(),
        manifest.policy_ids.len()
    );
    for finding in &report.findings {
        let tag = match finding.severity {
            FindingSeverity::Hard => "ERROR",
            FindingSeverity::Informational => "note",
        };
        println!("{tag}: {}", finding.message);
    }
    if !report.has_hard_findings() {
        println!("ok");
        Ok(0)
    } else {
        Ok(2)
    }
}

async fn cmd_eval(
    manifest_arg: &str,
    policies: Vec<String>,
    backend_spec: &str,
    out: PathBuf,
    abstain: &str,
    temperature: f64,
    concurrency: usize,
    run_id: Option<String>,
) -> Result<i32> {
    let manifest = load_manifest_arg(manifest_arg)?;
    let registry = PolicyRegistry::with_builtins();
    let backend = parse_backend(backend_spec, Some(&manifest))?;
    let runner = BackendRunner::new(
        backend,
        RunnerConfig { max_concurrency: concurrency, ..Default::default() },
    );
    let mut options = EvalOptions {
        abstain: parse_abstain(abstain)?,
        decoding: Decoding { temperature, ..Default::default() },
        ..Default::default()
    };
    if !policies.is_empty() {
        options.policies = policies;
    }
    let run_id = run_id.unwrap_or_else(|| {
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string()
    });
    let run = run_eval(&run_id, &manifest, &registry, &runner, &options).await?;
    run.persist(&out)?;
    let report = score_run(&run, &options.parse_rules)?;
    print!("{}", render_report(&[report], ReportFormat::Md)?);
    println!("\nrun persisted to {}", out.display());
    Ok(0)
}

fn cmd_report(runs: Vec<PathBuf>, format: &str) -> Result<i32> {
    let format: ReportFormat = format.parse()?;
    let rules = guardkit::verdict::ParseRules::default();
    let mut reports = Vec::new();
    for path in runs {
        let run = EvalRun::load(&path)?;
        reports.push(score_run(&run, &rules)?);
    }
    print!("{}", render_report(&reports, format)?);
    Ok(0)
}

async fn cmd_recaption(
    job_path: PathBuf,
    state: Option<PathBuf>,
    caption_spec: &str,
    recaption_spec: &str,
) -> Result<i32> {
    let job = PipelineJob::from_document(&std::fs::read_to_string(&job_path)?)?;
    let state_path = state.unwrap_or_else(|| job_path.with_extension("state.json"));
    let backends = PipelineBackends {
        caption: Some(Arc::new(BackendRunner::new(
            parse_backend(caption_spec, None)?,
            RunnerConfig::default(),
        ))),
        recaption: Some(Arc::new(BackendRunner::new(
            parse_backend(recaption_spec, None)?,
            RunnerConfig::default(),
        ))),
        edit: None,
    };
    let state = run_pipeline(&job, &backends, &state_path).await?;
    println!(
        "{} of {} items terminal; state at {}",
        state.terminal_count(),
        job.items.len(),
        state_path.display()
    );
    print!("{}", manifest_fragment(&job, &state));
    Ok(0)
}

async fn cmd_edit_pairs(
    job_path: PathBuf,
    state: Option<PathBuf>,
    edit_backend: &str,
) -> Result<i32> {
    let job = PipelineJob::from_document(&std::fs::read_to_string(&job_path)?)?;
    let state_path = state.unwrap_or_else(|| job_path.with_extension("state.json"));
    let edit: Arc<dyn guardkit::pipeline::EditBackend> = match edit_backend {
        "echo" => Arc::new(MockEditBackend::new(MockEditMode::Echo)),
        "refuse" => Arc::new(MockEditBackend::new(MockEditMode::Refusing(
            "editor declined the instruction".into(),
        ))),
        other => return Err(Error::Input(format!("unknown edit backend `{other}`"))),
    };
    let backends = PipelineBackends { caption: None, recaption: None, edit: Some(edit) };
    let state = run_pipeline(&job, &backends, &state_path).await?;
    println!(
        "{} of {} items terminal; state at {}",
        state.terminal_count(),
        job.items.len(),
        state_path.display()
    );
    print!("{}", manifest_fragment(&job, &state));
    Ok(0)
}

async fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::Eval {
            manifest,
            policies,
            backend,
            out,
            abstain,
            temperature,
            concurrency,
            run_id,
        } => {
            cmd_eval(&manifest, policies, &backend, out, &abstain, temperature, concurrency, run_id)
                .await
        }
        Command::Report { runs, format } => cmd_report(runs, &format),
        Command::RewardServe { bind, spec } => {
            let spec = match spec {
                Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
                None => RewardSpec::default(),
            };
            guardkit::service::serve(bind, spec).await?;
            Ok(0)
        }
        Command::Recaption { job, state, caption_backend, recaption_backend } => {
            cmd_recaption(job, state, &caption_backend, &recaption_backend).await
        }
        Command::EditPairs { job, state, edit_backend } => {
            cmd_edit_pairs(job, state, &edit_backend).await
        }
    }
}

#[tokio::main]
async fn main() {
    match run().await {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
