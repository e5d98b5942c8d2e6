//! Start the reward service on an ephemeral port and exercise it over HTTP.
//!
//! Run with: cargo run --example reward_service

use guardkit::reward::RewardSpec;
use guardkit::service::spawn_ephemeral;

#[tokio::main]
async fn main() {
    let addr = spawn_ephemeral(RewardSpec::default()).await.unwrap();
    println!("serving on {addr}");

    let client = reqwest::Client::new();
    let health = client
        .get(format!("http://{addr}/healthz"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    println!("healthz: {health}");

    let response: serde_json::Value = client
        .post(format!("http://{addr}/v1/rewards"))
        .json(&serde_json::json!({
            "group_id": "g1",
            "policy_id": "L5",
            "ground_truth": "unsafe",
            "completions": ["final answer: unsafe", "final answer: safe", "no idea"],
        }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    println!("rewards:    {}", response["rewards"]);
    println!("advantages: {}", response["advantages"]);
}
