//! End-to-end acceptance gate. Each test checks one release criterion and
//! prints a single pass line; a failed assertion marks the criterion failed.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use guardkit::builtin::benchmark_manifest;
use guardkit::client::{BackendRunner, MockBackend, MockMode, RunnerConfig};
use guardkit::harness::{render_report, run_eval, score_run, EvalOptions, EvalReport, ReportFormat};
use guardkit::manifest::{PairRole, SafetyLabel};
use guardkit::metrics::{
    accuracy, aggregate, confusion, f1, ConfusionMatrix, MetricKind, PolicyScore,
};
use guardkit::pipeline::{
    run_pipeline, structure_similarity, JobConfig, JobItem, JobKind, PipelineBackends,
    PipelineJob, RecaptionConfig,
};
use guardkit::policy::PolicyRegistry;
use guardkit::reward::{group_advantages, RewardSpec};
use guardkit::verdict::{parse_verdict, ParseRules, ParseStatus, Prediction};

fn pass(n: u32, what: &str) {
    println!("criterion {n}: PASS - {what}");
}

fn runner(backend: MockBackend) -> BackendRunner {
    BackendRunner::new(Arc::new(backend), RunnerConfig::default())
}

async fn eval_builtin(backend: MockBackend) -> EvalReport {
    let manifest = benchmark_manifest();
    let registry = PolicyRegistry::with_builtins();
    let options = EvalOptions::default();
    let run = run_eval("acceptance", &manifest, &registry, &runner(backend), &options)
        .await
        .expect("eval runs");
    score_run(&run, &options.parse_rules).expect("run scores")
}

/// Criterion 1: the F1 and accuracy implementations agree exactly with an
/// independently coded counting oracle on 1000 random vectors.
#[test]
fn criterion_1_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let mut predictions = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            truths.push(if rng.gen_bool(0.5) { SafetyLabel::Unsafe } else { SafetyLabel::Safe });
            predictions.push(match rng.gen_range(0..3) {
                0 => Prediction::Label(SafetyLabel::Safe),
                1 => Prediction::Label(SafetyLabel::Unsafe),
                _ => Prediction::Wrong,
            });
        }
        // Independent oracle: resolve each pair by hand and tally with plain
        // counters (Unsafe is the positive class; Wrong scores as the label
        // opposite to ground truth).
        let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for (p, t) in predictions.iter().zip(&truths) {
            let predicted = match p {
                Prediction::Label(l) => *l,
                Prediction::Wrong => t.opposite(),
            };
            match (predicted, *t) {
                (SafetyLabel::Unsafe, SafetyLabel::Unsafe) => tp += 1,
                (SafetyLabel::Unsafe, SafetyLabel::Safe) => fp += 1,
                (SafetyLabel::Safe, SafetyLabel::Unsafe) => fn_ += 1,
                (SafetyLabel::Safe, SafetyLabel::Safe) => tn += 1,
            }
        }
        let oracle_f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        let oracle_accuracy = (tp + tn) as f64 / n as f64;

        let matrix = confusion(&predictions, &truths).expect("non-empty vectors");
        assert_eq!((matrix.tp, matrix.fp, matrix.fn_, matrix.tn), (tp, fp, fn_, tn));
        assert_eq!(f1(&matrix), oracle_f1);
        assert_eq!(accuracy(&matrix), oracle_accuracy);
    }
    assert!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
    pass(1, "F1/accuracy match an independent counting oracle on 1000 random vectors");
}

/// Criterion 2: an always-safe backend scores 100 on the permissive policy
/// (accuracy) and 0 everywhere else (F1).
#[tokio::test]
async fn criterion_2_always_safe_profile() {
    let start = Instant::now();
    let report = eval_builtin(MockBackend::new("mock", MockMode::AlwaysSafe)).await;
    let per = &report.aggregate.per_policy;
    assert_eq!(per.len(), 5);
    assert_eq!(per[0].policy_id, "L1");
    assert_eq!(per[0].metric_kind, MetricKind::Accuracy);
    assert!((per[0].value - 1.0).abs() < 1e-12);
    for score in &per[1..] {
        assert_eq!(score.metric_kind, MetricKind::F1);
        assert_eq!(score.value, 0.0, "{}", score.policy_id);
    }
    assert!(start.elapsed() < Duration::from_secs(30), "took {:?}", start.elapsed());
    pass(2, "always-safe backend scores (100, 0, 0, 0, 0) across the five policy levels");
}

/// Criterion 3: an always-unsafe backend's F1 equals the closed form
/// 2q/(1+q) where q is the policy's unsafe fraction; the strictest policy's
/// q is within one sample of 0.59.
#[tokio::test]
async fn criterion_3_always_unsafe_closed_form() {
    let manifest = benchmark_manifest();
    let n = manifest.samples.len();
    let report = eval_builtin(MockBackend::new("mock", MockMode::AlwaysUnsafe)).await;
    for score in &report.aggregate.per_policy {
        let unsafe_count = manifest
            .samples
            .iter()
            .filter(|s| s.labels[&score.policy_id] == SafetyLabel::Unsafe)
            .count();
        if unsafe_count == 0 {
            continue; // accuracy policy, closed form does not apply
        }
        let q = unsafe_count as f64 / n as f64;
        assert!(
            (score.value - 2.0 * q / (1.0 + q)).abs() < 1e-9,
            "{}: {} vs closed form",
            score.policy_id,
            score.value
        );
        if score.policy_id == "L5" {
            assert!((q - 0.59).abs() <= 1.0 / n as f64, "L5 unsafe fraction q = {q}");
        }
    }
    pass(3, "always-unsafe F1 equals 2q/(1+q) per policy; strictest q within 1/124 of 0.59");
}

/// Criterion 4: group-relative advantages are mean-zero (or all zero for
/// degenerate groups) and shift/scale invariant over 10,000 random groups.
#[test]
fn criterion_4_advantage_invariants() {
    let mut rng = StdRng::seed_from_u64(23);
    for _ in 0..10_000 {
        let size = rng.gen_range(1..=16);
        let rewards: Vec<f64> = (0..size).map(|_| rng.gen_range(0.0..2.0)).collect();
        let advantages = group_advantages(&rewards, 0.0).expect("non-empty group");
        let degenerate = rewards.iter().all(|r| *r == rewards[0]);
        if degenerate {
            assert!(advantages.iter().all(|a| *a == 0.0));
        } else {
            let sum: f64 = advantages.iter().sum();
            assert!(sum.abs() < 1e-9 * size as f64, "sum {sum}");
        }
        // Shift and positive-scale invariance (exact-representable constants).
        let shifted: Vec<f64> = rewards.iter().map(|r| r + 0.5).collect();
        let scaled: Vec<f64> = rewards.iter().map(|r| r * 2.0).collect();
        for (variant, name) in [(shifted, "shift"), (scaled, "scale")] {
            let other = group_advantages(&variant, 0.0).expect("non-empty group");
            for (a, b) in advantages.iter().zip(&other) {
                assert!((a - b).abs() < 1e-9, "{name} broke invariance: {a} vs {b}");
            }
        }
    }
    // Documented examples.
    let adv = group_advantages(&[1.0, 0.0, 0.0], 0.0).unwrap();
    assert!((adv[0] - 2.0f64.sqrt()).abs() < 1e-9);
    let adv = group_advantages(&[1.1, 0.1], RewardSpec::default().advantage_epsilon).unwrap();
    assert!((adv[0] - 1.0).abs() < 1e-5 && (adv[1] + 1.0).abs() < 1e-5);
    pass(4, "advantages are mean-zero and shift/scale invariant over 10,000 random groups");
}

/// Criterion 5: the verdict parser agrees with the hand-labeled corpus on
/// every fixture and is case-insensitive; unsafe-substring words are never
/// misread.
#[test]
fn criterion_5_verdict_corpus() {
    #[derive(serde::Deserialize)]
    struct Fixture {
        raw: String,
        decision: Option<SafetyLabel>,
        status: String,
        #[serde(default)]
        category: Option<String>,
    }
    let rules = ParseRules::default();
    let corpus = include_str!("data/verdict_corpus.jsonl");
    let mut count = 0;
    for line in corpus.lines().filter(|l| !l.trim().is_empty()) {
        let fixture: Fixture = serde_json::from_str(line).expect("fixture parses");
        let verdict = parse_verdict(&fixture.raw, &rules);
        let expected_status = match fixture.status.as_str() {
            "Parsed" => ParseStatus::Parsed,
            "Ambiguous" => ParseStatus::Ambiguous,
            "Unparseable" => ParseStatus::Unparseable,
            other => panic!("unknown status `{other}`"),
        };
        assert_eq!(verdict.parse_status, expected_status, "status for {:?}", fixture.raw);
        assert_eq!(verdict.decision, fixture.decision, "decision for {:?}", fixture.raw);
        if let Some(category) = fixture.category {
            assert_eq!(verdict.category.as_deref(), Some(category.as_str()));
        }
        // Case-insensitivity: uppercasing the raw text changes nothing.
        let upper = parse_verdict(&fixture.raw.to_uppercase(), &rules);
        assert_eq!(upper.decision, verdict.decision, "case broke {:?}", fixture.raw);
        assert_eq!(upper.parse_status, verdict.parse_status);
        count += 1;
    }
    assert!(count >= 20, "corpus has only {count} fixtures");
    // "unsafe" as a substring of a longer word must never register.
    for word in ["unsafely", "unsafeness", "safety", "safeguard", "failsafe"] {
        let verdict = parse_verdict(word, &rules);
        assert_eq!(verdict.decision, None, "substring misread: {word}");
    }
    pass(5, "parser agrees with all hand-labeled fixtures and is case/substring robust");
}

/// Criterion 6: the bundled benchmark has 62 intact pairs, zero unsafe labels
/// under the permissive policy, and corrupting a pair is rejected with the
/// offending pair id.
#[test]
fn criterion_6_bundled_manifest_integrity() {
    let manifest = benchmark_manifest();
    manifest.validate().expect("bundled manifest valid");
    assert_eq!(manifest.count_role(PairRole::OriginalUnsafe), 62);
    assert_eq!(manifest.count_role(PairRole::EditedSafe), 62);
    assert_eq!(manifest.samples.len(), 124);
    assert!(manifest
        .samples
        .iter()
        .all(|s| s.labels["L1"] == SafetyLabel::Safe));

    let mut corrupted = manifest.clone();
    let victim = corrupted
        .samples
        .iter_mut()
        .find(|s| s.pair_role == PairRole::EditedSafe)
        .unwrap();
    let pair_id = victim.pair_id.clone().unwrap();
    victim.pair_role = PairRole::OriginalUnsafe;
    let err = corrupted.validate().unwrap_err();
    assert!(err.to_string().contains(&pair_id), "error does not name pair: {err}");
    pass(6, "62 intact pairs, no unsafe labels under L1, corruption rejected by pair id");
}

/// Criterion 7: the reward service honors its contract (values, status codes,
/// byte-determinism) under 100 concurrent identical requests.
#[tokio::test]
async fn criterion_7_reward_service_contract() {
    let start = Instant::now();
    let addr = guardkit::service::spawn_ephemeral(RewardSpec::default())
        .await
        .expect("service binds");
    let client = reqwest::Client::new();
    let url = format!("http://{addr}/v1/rewards");
    let payload = serde_json::json!({
        "group_id": "g",
        "policy_id": "L4",
        "ground_truth": "unsafe",
        "completions": ["final answer: unsafe", "final answer: safe"],
    });

    let body: serde_json::Value =
        client.post(&url).json(&payload).send().await.unwrap().json().await.unwrap();
    assert_eq!(body["rewards"], serde_json::json!([1.1, 0.1]));
    assert!((body["advantages"][0].as_f64().unwrap() - 1.0).abs() < 1e-5);
    assert!((body["advantages"][1].as_f64().unwrap() + 1.0).abs() < 1e-5);

    let malformed = client
        .post(&url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(malformed.status(), reqwest::StatusCode::BAD_REQUEST);

    let mut tasks = Vec::new();
    for _ in 0..100 {
        let client = client.clone();
        let url = url.clone();
        let payload = payload.clone();
        tasks.push(tokio::spawn(async move {
            client.post(&url).json(&payload).send().await.unwrap().bytes().await.unwrap()
        }));
    }
    let mut bodies = Vec::new();
    for task in tasks {
        bodies.push(task.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]), "responses not byte-identical");
    assert!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
    pass(7, "reward service contract holds with byte-identical bodies under 100-way concurrency");
}

/// Criterion 8: a 10-item job capped at 4 items per run submits exactly 4
/// then exactly 6 on resume; structure similarity obeys its axioms.
#[tokio::test]
async fn criterion_8_pipeline_resumability() {
    let dir = tempfile::tempdir().unwrap();
    let state_path = dir.path().join("state.json");
    let caption_mock = Arc::new(MockBackend::new(
        "cap",
        MockMode::Scripted(vec!["a man stands in a room".into()]),
    ));
    let recaption_mock = Arc::new(MockBackend::new(
        "recap",
        MockMode::Scripted(vec!["a man stands in a room holding a weapon".into()]),
    ));
    let quick = RunnerConfig { max_retries: 0, retry_backoff_ms: 1, ..Default::default() };
    let backends = PipelineBackends {
        caption: Some(Arc::new(BackendRunner::new(caption_mock.clone(), quick))),
        recaption: Some(Arc::new(BackendRunner::new(recaption_mock.clone(), quick))),
        edit: None,
    };
    let mut job = PipelineJob {
        job_id: "acceptance-job".into(),
        kind: JobKind::Recaption,
        items: (0..10)
            .map(|i| JobItem {
                item_id: format!("item_{i:02}"),
                image_ref: format!("images/{i:02}.png"),
                harm_description: None,
            })
            .collect(),
        config: JobConfig {
            concurrency: 2,
            max_items_per_run: Some(4),
            recaption: Some(RecaptionConfig::default()),
            ..Default::default()
        },
    };

    let state = run_pipeline(&job, &backends, &state_path).await.unwrap();
    assert_eq!(state.terminal_count(), 4);
    assert_eq!(caption_mock.attempts(), 4);
    assert_eq!(recaption_mock.attempts(), 4);

    job.config.max_items_per_run = None;
    let state = run_pipeline(&job, &backends, &state_path).await.unwrap();
    assert_eq!(state.terminal_count(), 10);
    assert_eq!(caption_mock.attempts(), 10, "resume re-submitted terminal items");
    assert_eq!(recaption_mock.attempts(), 10, "resume re-submitted terminal items");

    // Similarity axioms over random token strings.
    let mut rng = StdRng::seed_from_u64(31);
    let vocab = ["man", "room", "red", "knife", "dog", "street", "night", "fire"];
    for _ in 0..500 {
        let pick = |rng: &mut StdRng, n: usize| -> String {
            (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
        };
        let na = rng.gen_range(1..8);
        let a = pick(&mut rng, na);
        let nb = rng.gen_range(0..8);
        let b = pick(&mut rng, nb);
        let sim = structure_similarity(&a, &b);
        assert!((0.0..=1.0).contains(&sim));
        assert_eq!(structure_similarity(&a, &a), 1.0);
        assert_eq!(structure_similarity(&a, ""), 0.0);
        // Appending more of `b` never lowers containment of `a` in `b`.
        let extended = format!("{b} {}", pick(&mut rng, 3));
        assert!(structure_similarity(&a, &extended) >= sim);
    }
    pass(8, "job submits 4 then exactly 6 items across a resume; similarity axioms hold");
}

/// Criterion 9: macro aggregation reproduces the documented five-policy
/// average, and reports annotate macro/weighted divergence.
#[test]
fn criterion_9_macro_aggregation_and_divergence_note() {
    let values = [0.4746, 0.2059, 0.3736, 0.7087, 0.7034];
    let scores: Vec<PolicyScore> = values
        .iter()
        .enumerate()
        .map(|(i, v)| PolicyScore {
            policy_id: format!("L{}", i + 1),
            metric_kind: if i == 0 { MetricKind::Accuracy } else { MetricKind::F1 },
            value: *v,
            matrix: ConfusionMatrix::default(),
        })
        .collect();
    let unweighted = aggregate(&scores, None).unwrap();
    assert!((unweighted.macro_mean * 100.0 - 49.32).abs() < 0.01, "{}", unweighted.macro_mean);

    // Unequal per-policy sample counts force macro != weighted; the rendered
    // report must say so.
    let weighted = aggregate(&scores, Some(&[124, 124, 124, 124, 320])).unwrap();
    let w = weighted.weighted.unwrap();
    assert!((w - weighted.macro_mean).abs() > 1e-3);
    let report = EvalReport {
        run_id: "table-row".into(),
        backend_id: "fixture".into(),
        dataset_id: "fixture".into(),
        aggregate: weighted,
    };
    let md = render_report(&[report], ReportFormat::Md).unwrap();
    assert!(md.contains("49.32"));
    assert!(md.contains("Note: macro and sample-weighted"), "missing divergence note:\n{md}");
    pass(9, "macro mean of the five-policy row is 49.32 and divergence is annotated");
}
