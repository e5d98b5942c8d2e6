//! Run a resumable two-step recaption job against scripted mock backends,
//! then resume it to show that terminal items are not re-submitted.
//!
//! Run with: cargo run --example recaption_job

use std::sync::Arc;

use guardkit::client::{BackendRunner, MockBackend, MockMode, RunnerConfig};
use guardkit::pipeline::{
    manifest_fragment, run_pipeline, JobConfig, JobItem, JobKind, PipelineBackends, PipelineJob,
    RecaptionConfig,
};

#[tokio::main]
async fn main() {
    let caption = Arc::new(MockBackend::new(
        "captioner",
        MockMode::Scripted(vec!["a man stands in a dim room".into()]),
    ));
    let recaption = Arc::new(MockBackend::new(
        "recaptioner",
        MockMode::Scripted(vec![
            "a man stands in a dim room holding a bloodied knife".into(),
        ]),
    ));
    let backends = PipelineBackends {
        caption: Some(Arc::new(BackendRunner::new(caption.clone(), RunnerConfig::default()))),
        recaption: Some(Arc::new(BackendRunner::new(recaption.clone(), RunnerConfig::default()))),
        edit: None,
    };

    let mut job = PipelineJob {
        job_id: "demo-recaption".into(),
        kind: JobKind::Recaption,
        items: (0..6)
            .map(|i| JobItem {
                item_id: format!("img_{i:02}"),
                image_ref: format!("images/{i:02}.png"),
                harm_description: None,
            })
            .collect(),
        config: JobConfig {
            max_items_per_run: Some(3),
            recaption: Some(RecaptionConfig::default()),
            ..Default::default()
        },
    };

    let dir = tempfile::tempdir().unwrap();
    let state_path = dir.path().join("recaption.state.json");

    let state = run_pipeline(&job, &backends, &state_path).await.unwrap();
    println!(
        "first run:  {}/{} terminal, {} caption calls",
        state.terminal_count(),
        job.items.len(),
        caption.attempts()
    );

    job.config.max_items_per_run = None;
    let state = run_pipeline(&job, &backends, &state_path).await.unwrap();
    println!(
        "after resume: {}/{} terminal, {} caption calls total",
        state.terminal_count(),
        job.items.len(),
        caption.attempts()
    );

    println!("\nmanifest fragment for accepted items:");
    print!("{}", manifest_fragment(&job, &state));
}
