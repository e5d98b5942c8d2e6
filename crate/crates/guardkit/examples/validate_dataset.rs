//! Validate the bundled benchmark manifest and run the cross-policy
//! consistency checks.
//!
//! Run with: cargo run --example validate_dataset

use guardkit::builtin::benchmark_manifest;
use guardkit::manifest::{validate_policy_consistency, PairRole, SafetyLabel};
use guardkit::policy::{policy_label_stats, PolicyRegistry};

fn main() {
    let manifest = benchmark_manifest();
    manifest.validate().expect("bundled manifest is valid");
    println!(
        "dataset `{}`: {} samples ({} pairs)",
        manifest.dataset_id,
        manifest.samples.len(),
        manifest.count_role(PairRole::OriginalUnsafe)
    );

    let registry = PolicyRegistry::with_builtins();
    for policy_id in &manifest.policy_ids {
        let policy = registry.get(policy_id).unwrap();
        let stats = policy_label_stats(policy, &manifest).unwrap();
        println!(
            "{policy_id}: {}/{} unsafe ({:.1}%)",
            stats.n_unsafe,
            stats.n_total,
            100.0 * stats.unsafe_fraction
        );
    }

    let report = validate_policy_consistency(&manifest, &registry);
    println!("consistency findings: {}", report.findings.len());

    // Demonstrate a hard finding: mislabel one sample under the permissive
    // policy and re-check.
    let mut broken = manifest.clone();
    broken.samples[0].labels.insert("L1".into(), SafetyLabel::Unsafe);
    let report = validate_policy_consistency(&broken, &registry);
    for finding in &report.findings {
        println!("{:?}: {}", finding.severity, finding.message);
    }
}
