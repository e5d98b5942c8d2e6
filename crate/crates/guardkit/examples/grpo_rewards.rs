//! Score a group of sampled completions and compute group-relative
//! advantages, as a training loop would.
//!
//! Run with: cargo run --example grpo_rewards

use guardkit::manifest::SafetyLabel;
use guardkit::reward::{score_batch, CompletionGroup, RewardSpec};

fn main() {
    let group = CompletionGroup {
        group_id: "demo".into(),
        policy_id: "L4".into(),
        ground_truth: SafetyLabel::Unsafe,
        completions: vec![
            "The image shows a weapon in use. Final answer: unsafe".into(),
            "Nothing concerning here. Final answer: safe".into(),
            "{\"rating\": \"unsafe\", \"category\": \"O2: Violence\"}".into(),
            "I am not sure what to make of this.".into(),
        ],
    };
    let batch = score_batch(&group, &RewardSpec::default()).unwrap();
    for (i, completion) in group.completions.iter().enumerate() {
        println!(
            "reward {:>4.2}  advantage {:>6.3}  <- {completion:?}",
            batch.rewards[i], batch.advantages[i]
        );
    }
    let sum: f64 = batch.advantages.iter().sum();
    println!("advantage sum: {sum:.2e}");
}
