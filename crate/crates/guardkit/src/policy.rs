//! Safety policies: structured prohibitions with safe/unsafe examples,
//! the five built-in strictness levels L1-L5, and deterministic prompt
//! rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SafetyLabel};

/// One numbered prohibition within a policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySection {
    pub index: u32,
    pub title: String,
    pub prohibition: String,
    #[serde(default)]
    pub safe_examples: Vec<String>,
    #[serde(default)]
    pub unsafe_examples: Vec<String>,
}

/// A renderable safety policy, the unit of policy-conditioning.
///
/// `strictness_rank` is 1 (most permissive) to 5 (most restrictive) for the
/// built-in levels and `None` for user-supplied policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub policy_id: String,
    pub name: String,
    #[serde(default)]
    pub strictness_rank: Option<u8>,
    #[serde(default)]
    pub preamble: String,
    pub sections: Vec<PolicySection>,
}

impl Policy {
    /// Validate all structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.policy_id.is_empty() {
            return Err(Error::PolicySchema {
                field: "policy_id".into(),
                message: "must be non-empty".into(),
            });
        }
        if let Some(rank) = self.strictness_rank {
            if !(1..=5).contains(&rank) {
                return Err(Error::PolicySchema {
                    field: "strictness_rank".into(),
                    message: format!("must be in [1,5], got {rank}"),
                });
            }
        }
        if self.sections.is_empty() {
            return Err(Error::PolicySchema {
                field: "sections".into(),
                message: "at least one section required".into(),
            });
        }
        for (i, section) in self.sections.iter().enumerate() {
            let expected = (i + 1) as u32;
            if section.index != expected {
                return Err(Error::PolicySchema {
                    field: format!("sections[{i}].index"),
                    message: format!(
                        "section indices must be contiguous from 1; expected {expected}, got {}",
                        section.index
                    ),
                });
            }
            if section.prohibition.trim().is_empty() {
                return Err(Error::PolicySchema {
                    field: format!("sections[{i}].prohibition"),
                    message: "must be non-empty".into(),
                });
            }
        }
        Ok(())
    }
}

/// Load and validate a policy from its TOML document form.
pub fn load_policy(document: &str) -> Result<Policy> {
    let policy: Policy = toml::from_str(document)?;
    // Duplicate indices surface as a contiguity failure; name them explicitly.
    let mut seen = std::collections::HashSet::new();
    for section in &policy.sections {
        if !seen.insert(section.index) {
            return Err(Error::PolicySchema {
                field: "sections".into(),
                message: format!("duplicate section index {}", section.index),
            });
        }
    }
    policy.validate()?;
    Ok(policy)
}

/// Serialize a policy back to its TOML document form.
pub fn policy_to_document(policy: &Policy) -> String {
    toml::to_string_pretty(policy).expect("policy serializes")
}

/// Render the policy body: preamble, then each section in order with its
/// prohibition and example lists. Pure function of the policy; empty example
/// lists elide their sub-block.
pub fn render_policy_body(policy: &Policy) -> String {
    let mut out = String::new();
    out.push_str(&format!("Safety Policy {}: {}\n", policy.policy_id, policy.name));
    if !policy.preamble.trim().is_empty() {
        out.push('\n');
        out.push_str(policy.preamble.trim());
        out.push('\n');
    }
    for section in &policy.sections {
        out.push('\n');
        out.push_str(&format!("{}. {}\n", section.index, section.title));
        out.push_str(section.prohibition.trim());
        out.push('\n');
        if !section.safe_examples.is_empty() {
            out.push_str("Safe examples:\n");
            for example in &section.safe_examples {
                out.push_str(&format!("- {}\n", example.trim()));
            }
        }
        if !section.unsafe_examples.is_empty() {
            out.push_str("Unsafe examples:\n");
            for example in &section.unsafe_examples {
                out.push_str(&format!("- {}\n", example.trim()));
            }
        }
    }
    out
}

/// Placeholder that a prompt template must contain.
pub const POLICY_PLACEHOLDER: &str = "{policy}";

/// Substitute the rendered policy body into a prompt template.
/// Identical inputs produce byte-identical output.
pub fn render_policy_prompt(policy: &Policy, template: &str) -> Result<String> {
    if !template.contains(POLICY_PLACEHOLDER) {
        return Err(Error::MissingPlaceholder(POLICY_PLACEHOLDER.into()));
    }
    Ok(template.replace(POLICY_PLACEHOLDER, &render_policy_body(policy)))
}

/// Label statistics for one policy over a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub n_total: usize,
    pub n_unsafe: usize,
    pub unsafe_fraction: f64,
}

/// Count safe/unsafe ground-truth labels for `policy` across the manifest.
pub fn policy_label_stats(policy: &Policy, manifest: &DatasetManifest) -> Result<LabelStats> {
    let mut n_total = 0usize;
    let mut n_unsafe = 0usize;
    for sample in &manifest.samples {
        if let Some(label) = sample.labels.get(&policy.policy_id) {
            n_total += 1;
            if *label == SafetyLabel::Unsafe {
                n_unsafe += 1;
            }
        }
    }
    if n_total == 0 {
        return Err(Error::NoLabeledSamples {
            policy_id: policy.policy_id.clone(),
        });
    }
    Ok(LabelStats {
        n_total,
        n_unsafe,
        unsafe_fraction: n_unsafe as f64 / n_total as f64,
    })
}

/// Immutable registry of policies keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    policies: BTreeMap<String, Policy>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the five built-in levels L1-L5.
    pub fn with_builtins() -> Self {
        let mut registry = Self::new();
        for document in crate::builtin::POLICY_DOCUMENTS {
            let policy = load_policy(document).expect("built-in policy documents are valid");
            registry
                .insert(policy)
                .expect("built-in policy ids are unique");
        }
        registry
    }

    pub fn insert(&mut self, policy: Policy) -> Result<()> {
        policy.validate()?;
        if self.policies.contains_key(&policy.policy_id) {
            return Err(Error::PolicySchema {
                field: "policy_id".into(),
                message: format!("duplicate policy_id `{}` in registry", policy.policy_id),
            });
        }
        self.policies.insert(policy.policy_id.clone(), policy);
        Ok(())
    }

    pub fn get(&self, policy_id: &str) -> Option<&Policy> {
        self.policies.get(policy_id)
    }

    pub fn contains(&self, policy_id: &str) -> bool {
        self.policies.contains_key(policy_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.policies.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn builtin_l1_has_expected_sections() {
        let policy = load_policy(builtin::POLICY_L1).unwrap();
        assert_eq!(policy.policy_id, "L1");
        assert_eq!(policy.strictness_rank, Some(1));
        let titles: Vec<&str> = policy.sections.iter().map(|s| s.title.as_str()).collect();
        assert_eq!(
            titles,
            vec![
                "Infringement on Psychological Sovereignty",
                "Coercion and Violation of Bodily Autonomy",
                "Inauthentic Representation",
                "Protected Speech Categories",
            ]
        );
    }

    #[test]
    fn builtin_l5_first_section_is_blasphemy() {
        let policy = load_policy(builtin::POLICY_L5).unwrap();
        assert_eq!(policy.sections.len(), 5);
        assert_eq!(policy.sections[0].title, "Blasphemy and Heresy");
    }

    #[test]
    fn zero_sections_rejected() {
        let document = r#"
policy_id = "custom"
name = "Empty"
sections = []
"#;
        let err = load_policy(document).unwrap_err();
        assert!(err.to_string().contains("at least one section required"));
    }

    #[test]
    fn duplicate_section_index_rejected() {
        let document = r#"
policy_id = "custom"
name = "Dup"

[[sections]]
index = 1
title = "A"
prohibition = "no a"

[[sections]]
index = 1
title = "B"
prohibition = "no b"
"#;
        let err = load_policy(document).unwrap_err();
        assert!(err.to_string().contains("duplicate section index"));
    }

    #[test]
    fn rendering_is_deterministic_and_contains_titles() {
        let policy = load_policy(builtin::POLICY_L5).unwrap();
        let template = "Judge the image.\n\n{policy}\n\nAnswer safe or unsafe.";
        let a = render_policy_prompt(&policy, template).unwrap();
        let b = render_policy_prompt(&policy, template).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("Blasphemy and Heresy"));
    }

    #[test]
    fn missing_placeholder_errors() {
        let policy = load_policy(builtin::POLICY_L1).unwrap();
        assert!(render_policy_prompt(&policy, "no placeholder here").is_err());
    }

    #[test]
    fn empty_example_sections_elided() {
        let policy = Policy {
            policy_id: "custom".into(),
            name: "Custom".into(),
            strictness_rank: None,
            preamble: String::new(),
            sections: vec![PolicySection {
                index: 1,
                title: "Only Rule".into(),
                prohibition: "Do not do the thing.".into(),
                safe_examples: vec![],
                unsafe_examples: vec![],
            }],
        };
        let body = render_policy_body(&policy);
        assert!(!body.contains("Safe examples"));
        assert!(!body.contains("Unsafe examples"));
    }

    #[test]
    fn each_builtin_section_title_rendered_exactly_once() {
        for document in builtin::POLICY_DOCUMENTS {
            let policy = load_policy(document).unwrap();
            let body = render_policy_body(&policy);
            for section in &policy.sections {
                let count = body.matches(&section.title).count();
                assert_eq!(count, 1, "{} / {}", policy.policy_id, section.title);
            }
        }
    }

    #[test]
    fn registry_contains_five_builtins() {
        let registry = PolicyRegistry::with_builtins();
        assert_eq!(registry.len(), 5);
        for id in ["L1", "L2", "L3", "L4", "L5"] {
            assert!(registry.contains(id));
        }
    }

    #[test]
    fn policy_document_round_trip() {
        for document in builtin::POLICY_DOCUMENTS {
            let policy = load_policy(document).unwrap();
            let serialized = policy_to_document(&policy);
            let reloaded = load_policy(&serialized).unwrap();
            assert_eq!(policy, reloaded);
        }
    }
}
