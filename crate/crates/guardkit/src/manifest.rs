//! Benchmark dataset manifests: safe-unsafe image pairs with per-policy
//! ground-truth labels.
//!
//! File format: UTF-8, line-delimited JSON. The first line is a header object
//! (`dataset_id`, `policy_ids`, `provenance`); every following non-empty line
//! is one [`SampleRecord`]. `image_ref` may be a relative path or an http(s)
//! URI and is never dereferenced at load time.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyRegistry;

/// Binary safety label; the evaluation protocol is binary only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

impl SafetyLabel {
    pub fn opposite(self) -> Self {
        match self {
            SafetyLabel::Safe => SafetyLabel::Unsafe,
            SafetyLabel::Unsafe => SafetyLabel::Safe,
        }
    }
}

impl std::fmt::Display for SafetyLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SafetyLabel::Safe => write!(f, "safe"),
            SafetyLabel::Unsafe => write!(f, "unsafe"),
        }
    }
}

/// Role of a sample within a safe-unsafe pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairRole {
    OriginalUnsafe,
    EditedSafe,
    Standalone,
}

/// The nine harm categories of the source taxonomy.
pub const HARM_CATEGORIES: [&str; 9] = [
    "hate_humiliation_harassment",
    "violence_harm_cruelty",
    "sexual_content",
    "nudity_content",
    "criminal_planning",
    "weapons_substance_abuse",
    "self_harm",
    "animal_cruelty",
    "disasters_emergencies",
];

/// One image with pair linkage, harm category, and per-policy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harm_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    pub pair_role: PairRole,
    pub labels: BTreeMap<String, SafetyLabel>,
}

/// Manifest header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dataset_id: String,
    pub policy_ids: Vec<String>,
    #[serde(default)]
    pub provenance: String,
}

/// The benchmark container: validated samples plus header metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub policy_ids: Vec<String>,
    pub provenance: String,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Check all manifest invariants: non-empty, unique sample ids, complete
    /// labels, and global pair integrity.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::ManifestInvalid("empty dataset".into()));
        }
        let mut ids = HashSet::new();
        for sample in &self.samples {
            if !ids.insert(sample.sample_id.as_str()) {
                return Err(Error::ManifestInvalid(format!(
                    "duplicate sample_id `{}`",
                    sample.sample_id
                )));
            }
            for policy_id in &self.policy_ids {
                if !sample.labels.contains_key(policy_id) {
                    return Err(Error::MissingLabel {
                        sample_id: sample.sample_id.clone(),
                        policy_id: policy_id.clone(),
                    });
                }
            }
            match (&sample.pair_id, sample.pair_role) {
                (None, PairRole::Standalone) => {}
                (Some(_), PairRole::OriginalUnsafe | PairRole::EditedSafe) => {}
                (None, _) => {
                    return Err(Error::ManifestInvalid(format!(
                        "sample `{}` has pair_role without pair_id",
                        sample.sample_id
                    )))
                }
                (Some(pair_id), PairRole::Standalone) => {
                    return Err(Error::PairIntegrity {
                        pair_id: pair_id.clone(),
                        message: format!(
                            "sample `{}` is Standalone but carries a pair_id",
                            sample.sample_id
                        ),
                    })
                }
            }
            if let Some(category) = &sample.harm_category {
                if category.trim().is_empty() {
                    return Err(Error::ManifestInvalid(format!(
                        "sample `{}` has empty harm_category",
                        sample.sample_id
                    )));
                }
            }
        }
        // Each pair_id must link exactly one OriginalUnsafe and one EditedSafe.
        let mut pairs: HashMap<&str, (u32, u32)> = HashMap::new();
        for sample in &self.samples {
            if let Some(pair_id) = &sample.pair_id {
                let entry = pairs.entry(pair_id.as_str()).or_insert((0, 0));
                match sample.pair_role {
                    PairRole::OriginalUnsafe => entry.0 += 1,
                    PairRole::EditedSafe => entry.1 += 1,
                    PairRole::Standalone => unreachable!("checked above"),
                }
            }
        }
        let mut pair_ids: Vec<&str> = pairs.keys().copied().collect();
        pair_ids.sort_unstable();
        for pair_id in pair_ids {
            let (originals, edited) = pairs[pair_id];
            if originals != 1 || edited != 1 {
                return Err(Error::PairIntegrity {
                    pair_id: pair_id.to_string(),
                    message: format!(
                        "expected exactly one OriginalUnsafe and one EditedSafe, found {originals} and {edited}"
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn count_role(&self, role: PairRole) -> usize {
        self.samples.iter().filter(|s| s.pair_role == role).count()
    }
}

/// Parse and validate a manifest from its line-delimited document form.
pub fn load_manifest(document: &str) -> Result<DatasetManifest> {
    let mut lines = document.lines().filter(|line| !line.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::ManifestInvalid("missing header line".into()))?;
    let header: ManifestHeader = serde_json::from_str(header_line)?;
    let mut samples = Vec::new();
    for line in lines {
        samples.push(serde_json::from_str::<SampleRecord>(line)?);
    }
    let manifest = DatasetManifest {
        dataset_id: header.dataset_id,
        policy_ids: header.policy_ids,
        provenance: header.provenance,
        samples,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Serialize a manifest back to its line-delimited document form.
pub fn manifest_to_document(manifest: &DatasetManifest) -> String {
    let header = ManifestHeader {
        dataset_id: manifest.dataset_id.clone(),
        policy_ids: manifest.policy_ids.clone(),
        provenance: manifest.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for sample in &manifest.samples {
        out.push_str(&serde_json::to_string(sample).expect("sample serializes"));
        out.push('\n');
    }
    out
}

/// Severity of a consistency finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FindingSeverity {
    /// Blocks use of the manifest.
    Hard,
    /// Worth a look, does not block.
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFinding {
    pub severity: FindingSeverity,
    pub message: String,
}

/// Report from [`validate_policy_consistency`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub findings: Vec<ConsistencyFinding>,
}

impl ConsistencyReport {
    pub fn has_hard_findings(&self) -> bool {
        self.findings
            .iter()
            .any(|f| f.severity == FindingSeverity::Hard)
    }
}

/// Cross-check a manifest against a policy registry:
/// (a) policy_ids absent from the registry (hard),
/// (b) rank-1 ("all safe") policy samples labeled Unsafe (hard),
/// (c) unsafe-fraction monotonicity anomalies across strictness ranks
///     (informational only).
pub fn validate_policy_consistency(
    manifest: &DatasetManifest,
    registry: &PolicyRegistry,
) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();

    for policy_id in &manifest.policy_ids {
        if !registry.contains(policy_id) {
            report.findings.push(ConsistencyFinding {
                severity: FindingSeverity::Hard,
                message: format!("policy_id `{policy_id}` absent from registry"),
            });
        }
    }

    // Rank-1 policies define everything as safe; Unsafe labels under them are
    // annotation defects.
    for policy_id in &manifest.policy_ids {
        let Some(policy) = registry.get(policy_id) else {
            continue;
        };
        if policy.strictness_rank != Some(1) {
            continue;
        }
        for sample in &manifest.samples {
            if sample.labels.get(policy_id) == Some(&SafetyLabel::Unsafe) {
                report.findings.push(ConsistencyFinding {
                    severity: FindingSeverity::Hard,
                    message: format!(
                        "sample `{}` labeled Unsafe under permissive policy `{policy_id}`",
                        sample.sample_id
                    ),
                });
            }
        }
    }

    // Monotonicity across ranked policies: higher strictness should not show
    // a lower unsafe fraction.
    let mut ranked: Vec<(u8, &str, f64)> = Vec::new();
    for policy_id in &manifest.policy_ids {
        let Some(policy) = registry.get(policy_id) else {
            continue;
        };
        let Some(rank) = policy.strictness_rank else {
            continue;
        };
        if let Ok(stats) = crate::policy::policy_label_stats(policy, manifest) {
            ranked.push((rank, policy_id, stats.unsafe_fraction));
        }
    }
    ranked.sort_by_key(|(rank, _, _)| *rank);
    for window in ranked.windows(2) {
        let (lo_rank, lo_id, lo_frac) = window[0];
        let (hi_rank, hi_id, hi_frac) = window[1];
        if hi_frac < lo_frac {
            report.findings.push(ConsistencyFinding {
                severity: FindingSeverity::Informational,
                message: format!(
                    "unsafe fraction not monotone in strictness: `{hi_id}` (rank {hi_rank}) has {hi_frac:.4} below `{lo_id}` (rank {lo_rank}) at {lo_frac:.4}"
                ),
            });
        }
    }

    report
}

/// Predicate for [`filter_samples`]; absent fields match everything.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleFilter {
    pub policy_id: Option<String>,
    pub harm_category: Option<String>,
    pub pair_role: Option<PairRole>,
}

/// Select samples matching the predicate, preserving manifest order.
pub fn filter_samples<'a>(
    manifest: &'a DatasetManifest,
    filter: &SampleFilter,
) -> Result<Vec<&'a SampleRecord>> {
    if let Some(category) = &filter.harm_category {
        if !HARM_CATEGORIES.contains(&category.as_str()) {
            return Err(Error::UnknownCategory(category.clone()));
        }
    }
    Ok(manifest
        .samples
        .iter()
        .filter(|sample| {
            if let Some(policy_id) = &filter.policy_id {
                if !sample.labels.contains_key(policy_id) {
                    return false;
                }
            }
            if let Some(category) = &filter.harm_category {
                if sample.harm_category.as_deref() != Some(category.as_str()) {
                    return false;
                }
            }
            if let Some(role) = filter.pair_role {
                if sample.pair_role != role {
                    return false;
                }
            }
            true
        })
        .collect())
}
