//! The small dataset is a randomized trial with a known treatment
//! probability, so its scores need no fitted nuisance models.

use ppate::pipeline::{run_rct, EstimateConfig};
use ppate::synthgen::{generate, DgpConfig, Scenario};

fn main() -> ppate::Result<()> {
    let cfg = DgpConfig::scenario(Scenario::Medium, 3).with_rct(0.5);
    let data = generate(&cfg)?;
    assert!(data.d1.known_propensity().is_some());

    let estimates = run_rct(&data.d1, &data.d2, &EstimateConfig::default())?;
    println!("oracle ATE {:.4}", data.oracle_ate);
    for ci in estimates.intervals() {
        println!("{}", ci.to_json());
    }
    Ok(())
}
