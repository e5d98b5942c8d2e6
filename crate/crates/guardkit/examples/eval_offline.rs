//! Evaluate mock backends across all five policy levels, entirely offline,
//! and print the score table.
//!
//! Run with: cargo run --example eval_offline

use std::sync::Arc;

use guardkit::builtin::benchmark_manifest;
use guardkit::client::{BackendRunner, MockBackend, MockMode, RunnerConfig};
use guardkit::harness::{render_report, run_eval, score_run, EvalOptions, ReportFormat};
use guardkit::policy::PolicyRegistry;

#[tokio::main]
async fn main() {
    let manifest = benchmark_manifest();
    let registry = PolicyRegistry::with_builtins();
    let options = EvalOptions::default();

    let mut reports = Vec::new();
    let backends = [
        ("oracle", MockBackend::oracle_for(&manifest)),
        ("always-safe", MockBackend::new("mock-safe", MockMode::AlwaysSafe)),
        ("always-unsafe", MockBackend::new("mock-unsafe", MockMode::AlwaysUnsafe)),
    ];
    for (run_id, backend) in backends {
        let runner = BackendRunner::new(Arc::new(backend), RunnerConfig::default());
        let run = run_eval(run_id, &manifest, &registry, &runner, &options)
            .await
            .expect("eval succeeds");
        reports.push(score_run(&run, &options.parse_rules).expect("scoring succeeds"));
    }

    print!("{}", render_report(&reports, ReportFormat::Md).unwrap());
}
