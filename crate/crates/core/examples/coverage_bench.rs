//! Small Monte Carlo run: coverage and width of each method per scenario.
//! The `bench` subcommand runs the same thing from a JSON grid.

use ppate::bench::{run_experiment, ExperimentGrid};
use ppate::ppi::Method;
use ppate::synthgen::Scenario;

fn main() -> ppate::Result<()> {
    let grid = ExperimentGrid {
        scenarios: Scenario::ALL.to_vec(),
        n_values: vec![200],
        n_prime_values: vec![10_000],
        alpha: 0.05,
        replications: 20,
        master_seed: 0,
        methods: vec![Method::PpAipw, Method::BaselineD1, Method::BaselineD2],
        rct_propensity: None,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = run_experiment(&grid, workers)?;

    println!("scenario method       coverage  width   rmse");
    for c in &result.cells {
        println!(
            "{:>8} {:<13} {:>7.2} {:>7.3} {:>7.3}",
            c.scenario.number(),
            c.method.as_str(),
            c.coverage,
            c.mean_width,
            c.rmse
        );
    }
    Ok(())
}
