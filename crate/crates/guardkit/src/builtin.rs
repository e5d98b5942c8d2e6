//! Bundled data: the five built-in policy levels, default prompt templates,
//! default parse rules, and the paired-image benchmark manifest. Everything
//! here is embedded at compile time so the crate works offline with no data
//! directory.

use crate::manifest::DatasetManifest;

pub const POLICY_L1: &str = include_str!("../data/policies/l1.toml");
pub const POLICY_L2: &str = include_str!("../data/policies/l2.toml");
pub const POLICY_L3: &str = include_str!("../data/policies/l3.toml");
pub const POLICY_L4: &str = include_str!("../data/policies/l4.toml");
pub const POLICY_L5: &str = include_str!("../data/policies/l5.toml");

pub const POLICY_DOCUMENTS: [&str; 5] =
    [POLICY_L1, POLICY_L2, POLICY_L3, POLICY_L4, POLICY_L5];

/// Default evaluation prompt; contains the `{policy}` placeholder.
pub const EVAL_PROMPT_TEMPLATE: &str = include_str!("../data/templates/eval_prompt.txt");

/// Default first-step captioning prompt for the recaption pipeline.
pub const CAPTION_PROMPT: &str = include_str!("../data/templates/caption_prompt.txt");

/// Second-step recaption prompt; contains the `{caption}` placeholder.
pub const RECAPTION_PROMPT_TEMPLATE: &str = include_str!("../data/templates/recaption_prompt.txt");

/// Default verdict parse rules (TOML).
pub const PARSE_RULES: &str = include_str!("../data/parse_rules.toml");

/// The bundled benchmark manifest document (line-delimited JSON).
pub const BENCHMARK_MANIFEST: &str = include_str!("../data/benchmark_manifest.jsonl");

/// Load the bundled benchmark manifest: 62 safe-unsafe pairs labeled under
/// L1-L5.
pub fn benchmark_manifest() -> DatasetManifest {
    crate::manifest::load_manifest(BENCHMARK_MANIFEST)
        .expect("bundled benchmark manifest is valid")
}
