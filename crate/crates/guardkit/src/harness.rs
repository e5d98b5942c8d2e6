//! Evaluation harness: drives a backend across every (sample, policy) cell,
//! persists raw model outputs, and turns them into scored, reproducible
//! reports. Scoring is a pure function of the persisted run, so any report
//! can be recomputed later without re-querying the backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{
    BackendRunner, ChatRequest, Decoding, ImageSource, Message, MessagePart, MessageRole,
};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SafetyLabel};
use crate::metrics::{aggregate, policy_score, AggregateScore};
use crate::policy::{render_policy_prompt, PolicyRegistry};
use crate::verdict::{parse_verdict, verdict_to_prediction, AbstainPolicy, ParseRules, Prediction};

/// Settings for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Policy ids to evaluate, in report column order.
    pub policies: Vec<String>,
    pub abstain: AbstainPolicy,
    /// Prompt template; must contain the `{policy}` placeholder.
    pub prompt_template: String,
    pub parse_rules: ParseRules,
    pub decoding: Decoding,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            policies: vec!["L1".into(), "L2".into(), "L3".into(), "L4".into(), "L5".into()],
            abstain: AbstainPolicy::CountAsWrong,
            prompt_template: crate::builtin::EVAL_PROMPT_TEMPLATE.to_string(),
            parse_rules: ParseRules::default(),
            decoding: Decoding::default(),
        }
    }
}

/// One raw model output, persisted verbatim for replayable scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutput {
    pub sample_id: String,
    pub policy_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harm_category: Option<String>,
    pub ground_truth: SafetyLabel,
    pub completion: String,
}

/// A completed evaluation run: everything needed to score it offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub backend_id: String,
    pub dataset_id: String,
    pub policies: Vec<String>,
    pub abstain: AbstainPolicy,
    pub outputs: Vec<RawOutput>,
}

impl EvalRun {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A scored run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub backend_id: String,
    pub dataset_id: String,
    pub aggregate: AggregateScore,
}

/// Query `runner` for every (sample, policy) cell. Each request carries the
/// `"sample_id|policy_id"` tag so oracle mocks can route ground truth; HTTP
/// backends ignore the tag.
pub async fn run_eval(
    run_id: &str,
    manifest: &DatasetManifest,
    registry: &PolicyRegistry,
    runner: &BackendRunner,
    options: &EvalOptions,
) -> Result<EvalRun> {
    manifest.validate()?;
    if options.policies.is_empty() {
        return Err(Error::Input("no policies selected".into()));
    }

    let mut prompts = Vec::new();
    for policy_id in &options.policies {
        let policy = registry
            .get(policy_id)
            .ok_or_else(|| Error::UnknownPolicy(policy_id.clone()))?;
        prompts.push((policy_id.clone(), render_policy_prompt(policy, &options.prompt_template)?));
    }

    let mut futures = Vec::new();
    let mut cells = Vec::new();
    for (policy_id, prompt) in &prompts {
        for sample in &manifest.samples {
            let truth = *sample.labels.get(policy_id).ok_or_else(|| Error::MissingLabel {
                sample_id: sample.sample_id.clone(),
                policy_id: policy_id.clone(),
            })?;
            let request = ChatRequest {
                messages: vec![Message {
                    role: MessageRole::User,
                    parts: vec![
                        MessagePart::Text(prompt.clone()),
                        MessagePart::Image(ImageSource::Path(PathBuf::from(&sample.image_ref))),
                    ],
                }],
                decoding: options.decoding,
                tag: Some(format!("{}|{}", sample.sample_id, policy_id)),
            };
            cells.push((
                sample.sample_id.clone(),
                policy_id.clone(),
                sample.harm_category.clone(),
                truth,
            ));
            futures.push(async move { runner.complete(&request).await });
        }
    }

    let responses = futures::future::try_join_all(futures).await?;
    let outputs = cells
        .into_iter()
        .zip(responses)
        .map(|((sample_id, policy_id, harm_category, ground_truth), response)| RawOutput {
            sample_id,
            policy_id,
            harm_category,
            ground_truth,
            completion: response.completions.into_iter().next().unwrap_or_default(),
        })
        .collect();

    Ok(EvalRun {
        run_id: run_id.to_string(),
        backend_id: runner.backend_id().to_string(),
        dataset_id: manifest.dataset_id.clone(),
        policies: options.policies.clone(),
        abstain: options.abstain,
        outputs,
    })
}

/// Score a persisted run: parse every completion, fold abstentions per the
/// run's abstain policy, and aggregate per policy, per harm category, and
/// overall (macro and sample-weighted).
pub fn score_run(run: &EvalRun, rules: &ParseRules) -> Result<EvalReport> {
    let mut by_policy: BTreeMap<&str, (Vec<Prediction>, Vec<SafetyLabel>)> = BTreeMap::new();
    let mut by_category: BTreeMap<&str, (Vec<Prediction>, Vec<SafetyLabel>)> = BTreeMap::new();
    for output in &run.outputs {
        let verdict = parse_verdict(&output.completion, rules);
        let prediction = verdict_to_prediction(&verdict, run.abstain);
        let slot = by_policy.entry(output.policy_id.as_str()).or_default();
        slot.0.push(prediction.clone());
        slot.1.push(output.ground_truth);
        if let Some(category) = &output.harm_category {
            let slot = by_category.entry(category.as_str()).or_default();
            slot.0.push(prediction);
            slot.1.push(output.ground_truth);
        }
    }

    let mut scores = Vec::new();
    let mut weights = Vec::new();
    for policy_id in &run.policies {
        let (predictions, truths) = by_policy
            .get(policy_id.as_str())
            .ok_or_else(|| Error::UnknownPolicy(policy_id.clone()))?;
        scores.push(policy_score(predictions, truths, policy_id)?);
        weights.push(truths.len());
    }
    let mut aggregate = aggregate(&scores, Some(&weights))?;

    let mut per_category = BTreeMap::new();
    for (category, (predictions, truths)) in &by_category {
        per_category.insert(
            category.to_string(),
            policy_score(predictions, truths, category)?,
        );
    }
    if !per_category.is_empty() {
        aggregate.per_category = Some(per_category);
    }

    Ok(EvalReport {
        run_id: run.run_id.clone(),
        backend_id: run.backend_id.clone(),
        dataset_id: run.dataset_id.clone(),
        aggregate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Md,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" => Ok(Self::Md),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Input(format!("unknown report format `{other}`"))),
        }
    }
}

fn pct(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

fn report_columns(reports: &[EvalReport]) -> Vec<String> {
    // Union of policy ids across runs, in first-seen order.
    let mut columns: Vec<String> = Vec::new();
    for report in reports {
        for score in &report.aggregate.per_policy {
            if !columns.contains(&score.policy_id) {
                columns.push(score.policy_id.clone());
            }
        }
    }
    columns
}

fn cell(report: &EvalReport, column: &str) -> String {
    report
        .aggregate
        .per_policy
        .iter()
        .find(|s| s.policy_id == column)
        .map(|s| pct(s.value))
        .unwrap_or_else(|| "-".to_string())
}

/// Runs whose macro and weighted aggregates disagree by more than half a
/// display unit (0.005 after x100 scaling).
fn divergent_runs(reports: &[EvalReport]) -> Vec<&EvalReport> {
    reports
        .iter()
        .filter(|r| {
            r.aggregate
                .weighted
                .map(|w| (w - r.aggregate.macro_mean).abs() * 100.0 > 0.005)
                .unwrap_or(false)
        })
        .collect()
}

/// Render reports as a deterministic table. Rows are keyed by run id; scores
/// print x100 with two decimals. Both macro and weighted overall columns are
/// always emitted, with an annotation when they diverge.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Input("no runs to report".into()));
    }
    let columns = report_columns(reports);
    match format {
        ReportFormat::Md => {
            let mut out = String::new();
            out.push_str("| run |");
            for column in &columns {
                out.push_str(&format!(" {column} |"));
            }
            out.push_str(" macro | weighted |\n|---|");
            for _ in &columns {
                out.push_str("---|");
            }
            out.push_str("---|---|\n");
            for report in reports {
                out.push_str(&format!("| {} |", report.run_id));
                for column in &columns {
                    out.push_str(&format!(" {} |", cell(report, column)));
                }
                out.push_str(&format!(
                    " {} | {} |\n",
                    pct(report.aggregate.macro_mean),
                    report.aggregate.weighted.map(pct).unwrap_or_else(|| "-".into())
                ));
            }
            let divergent = divergent_runs(reports);
            if !divergent.is_empty() {
                let ids: Vec<&str> = divergent.iter().map(|r| r.run_id.as_str()).collect();
                out.push_str(&format!(
                    "\nNote: macro and sample-weighted overall scores differ for: {}. \
                     The macro mean weights every policy equally; the weighted mean \
                     weights policies by sample count.\n",
                    ids.join(", ")
                ));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = String::from("run");
            for column in &columns {
                out.push_str(&format!(",{column}"));
            }
            out.push_str(",macro,weighted\n");
            for report in reports {
                out.push_str(&report.run_id);
                for column in &columns {
                    out.push_str(&format!(",{}", cell(report, column)));
                }
                out.push_str(&format!(
                    ",{},{}\n",
                    pct(report.aggregate.macro_mean),
                    report.aggregate.weighted.map(pct).unwrap_or_else(|| "-".into())
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct JsonReport<'a> {
                reports: &'a [EvalReport],
                divergent_runs: Vec<&'a str>,
            }
            let divergent: Vec<&str> =
                divergent_runs(reports).iter().map(|r| r.run_id.as_str()).collect();
            let mut text = serde_json::to_string_pretty(&JsonReport {
                reports,
                divergent_runs: divergent,
            })?;
            text.push('\n');
            Ok(text)
        }
    }
}
