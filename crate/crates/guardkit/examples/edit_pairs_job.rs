//! Construct safe counterparts for unsafe images with the minimal-edit
//! pipeline (using the echo mock in place of a real image editor).
//!
//! Run with: cargo run --example edit_pairs_job

use std::sync::Arc;

use guardkit::pipeline::{
    manifest_fragment, run_pipeline, JobConfig, JobItem, JobKind, MockEditBackend, MockEditMode,
    PipelineBackends, PipelineJob,
};

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    let sources = dir.path().join("sources");
    std::fs::create_dir_all(&sources).unwrap();
    for name in ["street", "kitchen"] {
        std::fs::write(sources.join(format!("{name}.png")), b"fake image bytes").unwrap();
    }

    let job = PipelineJob {
        job_id: "demo-edits".into(),
        kind: JobKind::EditPairs,
        items: vec![
            JobItem {
                item_id: "street".into(),
                image_ref: sources.join("street.png").display().to_string(),
                harm_description: Some("a drawn handgun".into()),
            },
            JobItem {
                item_id: "kitchen".into(),
                image_ref: sources.join("kitchen.png").display().to_string(),
                harm_description: Some("a bloodied blade".into()),
            },
        ],
        config: JobConfig {
            output_dir: Some(dir.path().join("edited")),
            ..Default::default()
        },
    };

    let backends = PipelineBackends {
        caption: None,
        recaption: None,
        edit: Some(Arc::new(MockEditBackend::new(MockEditMode::Echo))),
    };
    let state_path = dir.path().join("edits.state.json");
    let state = run_pipeline(&job, &backends, &state_path).await.unwrap();

    for (item_id, outcome) in &state.items {
        let record = outcome.edit.as_ref().unwrap();
        println!("{item_id}: {:?} -> {:?}", record.status, record.edited_image_ref);
        println!("  instruction: {}", record.edit_instruction);
    }
    println!("\nmanifest fragment:");
    print!("{}", manifest_fragment(&job, &state));
}
