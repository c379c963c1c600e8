//! Covariate shift between the datasets, corrected with known density
//! ratios w(x). Unit weights give back the ordinary interval.

use ppate::cate::evaluate_dataset;
use ppate::pipeline::{d1_scores, fit_predictor, EstimateConfig};
use ppate::ppi::{pp_interval, pp_interval_shifted, rectifier};
use ppate::synthgen::{generate, DgpConfig, Scenario};

fn main() -> ppate::Result<()> {
    let data = generate(&DgpConfig::scenario(Scenario::Little, 5))?;
    let cfg = EstimateConfig::default();

    let predictor = fit_predictor(&data.d2, &cfg)?;
    let scores = d1_scores(&data.d1, &cfg)?;
    let tau_d1 = evaluate_dataset(&predictor.model, &data.d1)?;
    let tau_eval = &predictor.evaluation_predictions;

    // A made-up density ratio that up-weights units with large x.
    let ratio = |x: &[f64]| 1.0 + 0.5 * x[0];
    let w1: Vec<f64> = data.d1.samples().iter().map(|s| ratio(s.covariates())).collect();
    let eval = data.d2.subset(&predictor.model.provenance().evaluation)?;
    let w2: Vec<f64> = eval.samples().iter().map(|s| ratio(s.covariates())).collect();

    let shifted = pp_interval_shifted(&scores, &tau_d1, tau_eval, &w1, &w2, cfg.alpha)?;
    println!("weighted:   {}", shifted.to_json());

    let ones1 = vec![1.0; w1.len()];
    let ones2 = vec![1.0; w2.len()];
    let unit = pp_interval_shifted(&scores, &tau_d1, tau_eval, &ones1, &ones2, cfg.alpha)?;
    let plain = pp_interval(&rectifier(&scores, &tau_d1)?, &predictor.measure, cfg.alpha)?;
    println!("unit:       [{}, {}]", unit.lower, unit.upper);
    println!("unweighted: [{}, {}]", plain.lower, plain.upper);
    Ok(())
}
