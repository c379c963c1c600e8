//! Prediction-powered ATE interval from a small unconfounded dataset and a
//! large confounded one, next to the two single-dataset baselines.
//!
//! Run with `cargo run --release --example estimate_obs_obs`.

use ppate::pipeline::{run_observational, EstimateConfig};
use ppate::synthgen::{generate, DgpConfig, Scenario};

fn main() -> ppate::Result<()> {
    let data = generate(&DgpConfig::scenario(Scenario::Heavy, 1))?;
    let estimates = run_observational(&data.d1, &data.d2, &EstimateConfig::default())?;

    println!("oracle ATE: {:.4}", data.oracle_ate);
    for ci in estimates.intervals() {
        println!(
            "{:<12} {:>8.4}  [{:>8.4}, {:>8.4}]  width {:.4}  covers: {}",
            ci.method.as_str(),
            ci.estimate,
            ci.lower,
            ci.upper,
            ci.width,
            ci.contains(data.oracle_ate)
        );
    }
    Ok(())
}
