//! Render the built-in policy levels into an evaluation prompt.
//!
//! Run with: cargo run --example render_policy

use guardkit::builtin::EVAL_PROMPT_TEMPLATE;
use guardkit::policy::{render_policy_prompt, PolicyRegistry};

fn main() {
    let registry = PolicyRegistry::with_builtins();
    let ids: Vec<String> = registry.ids().map(str::to_string).collect();
    for policy_id in &ids {
        let policy = registry.get(policy_id).unwrap();
        println!(
            "{policy_id} (rank {:?}): {} sections - {}",
            policy.strictness_rank,
            policy.sections.len(),
            policy.name
        );
    }

    let l3 = registry.get("L3").unwrap();
    let prompt = render_policy_prompt(l3, EVAL_PROMPT_TEMPLATE).unwrap();
    println!("\n--- rendered L3 prompt (first 40 lines) ---");
    for line in prompt.lines().take(40) {
        println!("{line}");
    }
}
