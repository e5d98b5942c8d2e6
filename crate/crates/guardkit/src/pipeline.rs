//! Data-construction pipelines: the two-step self-recaption procedure and
//! unsafe-to-safe minimal image editing for pair construction. Both run
//! against pluggable backends with per-item state, bounded concurrency, and
//! resume-on-restart.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

use crate::client::{
    BackendRunner, ChatRequest, Decoding, ImageSource, Message, MessagePart, MessageRole,
};
use crate::error::{Error, Result};
use crate::manifest::{ManifestHeader, PairRole, SampleRecord};

/// Placeholder the recaption template must contain.
pub const CAPTION_PLACEHOLDER: &str = "{caption}";

/// Default refusal cues; a completion containing any of them (case
/// insensitive) is treated as a backend refusal.
pub const DEFAULT_REFUSAL_PHRASES: [&str; 7] = [
    "i cannot",
    "i can't",
    "i can not",
    "i am unable",
    "i'm unable",
    "i won't",
    "unable to assist",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecaptionStatus {
    Accepted,
    RejectedStructureDrift,
    BackendRefused,
}

/// Outcome of recaptioning one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecaptionRecord {
    pub image_ref: String,
    pub initial_caption: String,
    pub recaption: String,
    pub structure_similarity: f64,
    pub status: RecaptionStatus,
}

/// Token-level containment: the fraction of `a`'s content tokens present in
/// `b`. The recaption may add detail but should not delete what the initial
/// caption said.
pub fn structure_similarity(a: &str, b: &str) -> f64 {
    let tokens_a = content_tokens(a);
    if tokens_a.is_empty() {
        return 1.0;
    }
    let tokens_b: std::collections::HashSet<String> = content_tokens(b).into_iter().collect();
    let retained = tokens_a.iter().filter(|t| tokens_b.contains(*t)).count();
    retained as f64 / tokens_a.len() as f64
}

fn content_tokens(text: &str) -> Vec<String> {
    let alnum: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    if !alnum.is_empty() {
        return alnum;
    }
    // No alphanumeric content: fall back to raw whitespace tokens so that
    // similarity(a, a) = 1 still holds for symbol-only text.
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn is_refusal(text: &str, phrases: &[String]) -> bool {
    let lower = text.to_lowercase();
    phrases.iter().any(|p| lower.contains(p.as_str()))
}

/// Settings for [`recaption_one`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecaptionConfig {
    /// Prompt sent with the image to obtain the initial caption.
    pub caption_prompt: String,
    /// Recaption prompt template; must contain `{caption}`.
    pub recaption_template: String,
    /// Minimum structure similarity for acceptance.
    pub threshold: f64,
    pub refusal_phrases: Vec<String>,
    pub decoding: Decoding,
}

impl Default for RecaptionConfig {
    fn default() -> Self {
        Self {
            caption_prompt: crate::builtin::CAPTION_PROMPT.trim().to_string(),
            recaption_template: crate::builtin::RECAPTION_PROMPT_TEMPLATE.to_string(),
            threshold: 0.8,
            refusal_phrases: DEFAULT_REFUSAL_PHRASES.iter().map(|s| s.to_string()).collect(),
            decoding: Decoding::default(),
        }
    }
}

fn image_request(prompt: &str, image_ref: &str, decoding: Decoding) -> ChatRequest {
    ChatRequest {
        messages: vec![Message {
            role: MessageRole::User,
            parts: vec![
                MessagePart::Text(prompt.to_string()),
                MessagePart::Image(ImageSource::Path(PathBuf::from(image_ref))),
            ],
        }],
        decoding,
        tag: Some(image_ref.to_string()),
    }
}

/// Two-step self-recaption: caption with the baseline backend, then recover
/// suppressed unsafe detail with the permissive backend, accepting the result
/// only if the initial caption's structure is preserved.
pub async fn recaption_one(
    image_ref: &str,
    caption_backend: &BackendRunner,
    recaption_backend: &BackendRunner,
    config: &RecaptionConfig,
) -> Result<RecaptionRecord> {
    if !config.recaption_template.contains(CAPTION_PLACEHOLDER) {
        return Err(Error::MissingPlaceholder(CAPTION_PLACEHOLDER.into()));
    }
    let caption_response = caption_backend
        .complete(&image_request(&config.caption_prompt, image_ref, config.decoding))
        .await?;
    let initial_caption = caption_response.completions[0].trim().to_string();

    let recaption_prompt = config
        .recaption_template
        .replace(CAPTION_PLACEHOLDER, &initial_caption);
    let recaption_response = recaption_backend
        .complete(&image_request(&recaption_prompt, image_ref, config.decoding))
        .await?;
    let recaption = recaption_response.completions[0].trim().to_string();

    if is_refusal(&recaption, &config.refusal_phrases) {
        return Ok(RecaptionRecord {
            image_ref: image_ref.to_string(),
            initial_caption,
            recaption,
            structure_similarity: 0.0,
            status: RecaptionStatus::BackendRefused,
        });
    }
    let similarity = structure_similarity(&initial_caption, &recaption);
    let status = if !recaption.is_empty() && similarity >= config.threshold {
        RecaptionStatus::Accepted
    } else {
        RecaptionStatus::RejectedStructureDrift
    };
    Ok(RecaptionRecord {
        image_ref: image_ref.to_string(),
        initial_caption,
        recaption,
        structure_similarity: similarity,
        status,
    })
}

// ---------------------------------------------------------------------------
// Image editing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditStatus {
    Generated,
    BackendRefused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPairRecord {
    pub source_image_ref: String,
    pub edited_image_ref: Option<String>,
    pub edit_instruction: String,
    pub status: EditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Result of one image-edit call.
pub enum EditOutcome {
    Image(Vec<u8>),
    Refused(String),
}

/// An image-edit endpoint accepting (image, instruction) and returning an
/// image. Only safe-direction edits are attempted; editors refuse to generate
/// harmful content.
#[async_trait]
pub trait EditBackend: Send + Sync {
    async fn edit(&self, image: &[u8], instruction: &str) -> Result<EditOutcome>;
}

/// Offline edit backend for tests and examples.
pub enum MockEditMode {
    /// Return the input image unchanged.
    Echo,
    Refusing(String),
    FailTransport,
}

pub struct MockEditBackend {
    pub mode: MockEditMode,
    calls: std::sync::atomic::AtomicUsize,
}

impl MockEditBackend {
    pub fn new(mode: MockEditMode) -> Self {
        Self { mode, calls: std::sync::atomic::AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[async_trait]
impl EditBackend for MockEditBackend {
    async fn edit(&self, image: &[u8], _instruction: &str) -> Result<EditOutcome> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        match &self.mode {
            MockEditMode::Echo => Ok(EditOutcome::Image(image.to_vec())),
            MockEditMode::Refusing(text) => Ok(EditOutcome::Refused(text.clone())),
            MockEditMode::FailTransport => Err(Error::Transport {
                attempts: 1,
                message: "scripted edit failure".into(),
            }),
        }
    }
}

/// Build the minimal-edit instruction for a harm description.
pub fn edit_instruction(harm_description: &str) -> String {
    format!(
        "remove or replace only: {harm_description}; keep scene, composition, and all other objects unchanged"
    )
}

/// Apply a minimal safe-direction edit to one unsafe source image, storing
/// the edited image under `output_dir`.
pub async fn edit_pair(
    source_image_ref: &str,
    harm_description: &str,
    backend: &dyn EditBackend,
    output_dir: &Path,
) -> EditPairRecord {
    let instruction = edit_instruction(harm_description);
    let source = match std::fs::read(source_image_ref) {
        Ok(bytes) => bytes,
        Err(e) => {
            return EditPairRecord {
                source_image_ref: source_image_ref.to_string(),
                edited_image_ref: None,
                edit_instruction: instruction,
                status: EditStatus::Failed,
                error: Some(format!("unreadable source image: {e}")),
            }
        }
    };
    match backend.edit(&source, &instruction).await {
        Ok(EditOutcome::Image(bytes)) => {
            let stem = Path::new(source_image_ref)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("edited");
            let out_path = output_dir.join(format!("{stem}_edited.png"));
            if let Err(e) = std::fs::create_dir_all(output_dir)
                .and_then(|_| std::fs::write(&out_path, &bytes))
            {
                return EditPairRecord {
                    source_image_ref: source_image_ref.to_string(),
                    edited_image_ref: None,
                    edit_instruction: instruction,
                    status: EditStatus::Failed,
                    error: Some(format!("cannot store edited image: {e}")),
                };
            }
            EditPairRecord {
                source_image_ref: source_image_ref.to_string(),
                edited_image_ref: Some(out_path.display().to_string()),
                edit_instruction: instruction,
                status: EditStatus::Generated,
                error: None,
            }
        }
        Ok(EditOutcome::Refused(reason)) => EditPairRecord {
            source_image_ref: source_image_ref.to_string(),
            edited_image_ref: None,
            edit_instruction: instruction,
            status: EditStatus::BackendRefused,
            error: Some(reason),
        },
        Err(e) => EditPairRecord {
            source_image_ref: source_image_ref.to_string(),
            edited_image_ref: None,
            edit_instruction: instruction,
            status: EditStatus::Failed,
            error: Some(e.to_string()),
        },
    }
}

// ---------------------------------------------------------------------------
// Resumable job runner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobKind {
    Recaption,
    EditPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobItem {
    pub item_id: String,
    pub image_ref: String,
    /// Required for EditPairs jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harm_description: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobConfig {
    #[serde(default = "default_job_concurrency")]
    pub concurrency: usize,
    /// Stop this run after N newly terminal items; used for checkpoint-style
    /// batching. The job resumes from the state file on the next run.
    #[serde(default)]
    pub max_items_per_run: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub recaption: Option<RecaptionConfig>,
}

fn default_job_concurrency() -> usize {
    2
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            concurrency: default_job_concurrency(),
            max_items_per_run: None,
            output_dir: None,
            recaption: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineJob {
    pub job_id: String,
    pub kind: JobKind,
    pub items: Vec<JobItem>,
    #[serde(default)]
    pub config: JobConfig,
}

impl PipelineJob {
    pub fn from_document(document: &str) -> Result<Self> {
        let job: PipelineJob = toml::from_str(document)?;
        if job.items.is_empty() {
            return Err(Error::Pipeline("job has no items".into()));
        }
        Ok(job)
    }
}

/// Terminal or pending status of one job item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recaption: Option<RecaptionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditPairRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Persistent per-job state: which items are terminal and their outcomes.
/// Re-running a job never re-submits items already terminal.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineState {
    pub job_id: String,
    pub items: BTreeMap<String, ItemOutcome>,
}

impl PipelineState {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_or_new(path: &Path, job_id: &str) -> Result<Self> {
        if path.exists() {
            let state = Self::load(path)?;
            if state.job_id != job_id {
                return Err(Error::Pipeline(format!(
                    "state file belongs to job `{}`, not `{job_id}`",
                    state.job_id
                )));
            }
            Ok(state)
        } else {
            Ok(Self { job_id: job_id.to_string(), items: BTreeMap::new() })
        }
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn terminal_count(&self) -> usize {
        self.items.values().filter(|o| o.terminal).count()
    }

    pub fn is_terminal(&self, item_id: &str) -> bool {
        self.items.get(item_id).map(|o| o.terminal).unwrap_or(false)
    }
}

/// Backends used by a pipeline run; only the ones matching the job kind are
/// required.
pub struct PipelineBackends {
    pub caption: Option<Arc<BackendRunner>>,
    pub recaption: Option<Arc<BackendRunner>>,
    pub edit: Option<Arc<dyn EditBackend>>,
}

/// Run (or resume) a job: processes pending items with bounded concurrency,
/// persists state after each terminal item, and returns the updated state.
pub async fn run_pipeline(
    job: &PipelineJob,
    backends: &PipelineBackends,
    state_path: &Path,
) -> Result<PipelineState> {
    if job.items.is_empty() {
        return Err(Error::Pipeline("job has no items".into()));
    }
    let state = PipelineState::load_or_new(state_path, &job.job_id)?;
    let pending: Vec<JobItem> = job
        .items
        .iter()
        .filter(|item| !state.is_terminal(&item.item_id))
        .cloned()
        .collect();
    let budget = job.config.max_items_per_run.unwrap_or(usize::MAX);
    let pending: Vec<JobItem> = pending.into_iter().take(budget).collect();

    let state = Arc::new(Mutex::new(state));
    let semaphore = Arc::new(Semaphore::new(job.config.concurrency.max(1)));
    let mut handles = Vec::new();

    for item in pending {
        let semaphore = semaphore.clone();
        let state = state.clone();
        let state_path = state_path.to_path_buf();
        let kind = job.kind;
        let recaption_config = job.config.recaption.clone().unwrap_or_default();
        let output_dir = job
            .config
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("edited"));
        let caption = backends.caption.clone();
        let recaption = backends.recaption.clone();
        let edit = backends.edit.clone();

        handles.push(tokio::spawn(async move {
            let _permit = semaphore.acquire().await.expect("semaphore open");
            let outcome = match kind {
                JobKind::Recaption => {
                    let (Some(caption), Some(recaption)) = (caption, recaption) else {
                        return Err(Error::Pipeline(
                            "recaption job requires caption and recaption backends".into(),
                        ));
                    };
                    match recaption_one(&item.image_ref, &caption, &recaption, &recaption_config)
                        .await
                    {
                        Ok(record) => ItemOutcome {
                            terminal: true,
                            recaption: Some(record),
                            edit: None,
                            error: None,
                        },
                        Err(e) => ItemOutcome {
                            terminal: true,
                            recaption: None,
                            edit: None,
                            error: Some(e.to_string()),
                        },
                    }
                }
                JobKind::EditPairs => {
                    let Some(edit) = edit else {
                        return Err(Error::Pipeline("edit job requires an edit backend".into()));
                    };
                    let harm = item.harm_description.clone().unwrap_or_default();
                    let record =
                        edit_pair(&item.image_ref, &harm, edit.as_ref(), &output_dir).await;
                    ItemOutcome { terminal: true, recaption: None, edit: Some(record), error: None }
                }
            };
            let mut guard = state.lock().await;
            guard.items.insert(item.item_id.clone(), outcome);
            guard.persist(&state_path)?;
            Ok(())
        }));
    }

    for handle in handles {
        handle.await.map_err(|e| Error::Pipeline(e.to_string()))??;
    }
    let state = Arc::try_unwrap(state)
        .map_err(|_| Error::Pipeline("state still shared".into()))?
        .into_inner();
    Ok(state)
}

/// Emit a manifest fragment (dataset schema) for Accepted/Generated items.
pub fn manifest_fragment(job: &PipelineJob, state: &PipelineState) -> String {
    let header = ManifestHeader {
        dataset_id: format!("{}-fragment", job.job_id),
        policy_ids: vec![],
        provenance: format!("emitted by pipeline job `{}`", job.job_id),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for item in &job.items {
        let Some(outcome) = state.items.get(&item.item_id) else {
            continue;
        };
        let mut records: Vec<SampleRecord> = Vec::new();
        if let Some(recaption) = &outcome.recaption {
            if recaption.status == RecaptionStatus::Accepted {
                records.push(SampleRecord {
                    sample_id: item.item_id.clone(),
                    image_ref: item.image_ref.clone(),
                    harm_category: None,
                    pair_id: None,
                    pair_role: PairRole::Standalone,
                    labels: BTreeMap::new(),
                });
            }
        }
        if let Some(edit) = &outcome.edit {
            if edit.status == EditStatus::Generated {
                let pair_id = item.item_id.clone();
                records.push(SampleRecord {
                    sample_id: format!("{}_orig", item.item_id),
                    image_ref: edit.source_image_ref.clone(),
                    harm_category: None,
                    pair_id: Some(pair_id.clone()),
                    pair_role: PairRole::OriginalUnsafe,
                    labels: BTreeMap::new(),
                });
                records.push(SampleRecord {
                    sample_id: format!("{}_edit", item.item_id),
                    image_ref: edit.edited_image_ref.clone().unwrap_or_default(),
                    harm_category: None,
                    pair_id: Some(pair_id),
                    pair_role: PairRole::EditedSafe,
                    labels: BTreeMap::new(),
                });
            }
        }
        for record in records {
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
