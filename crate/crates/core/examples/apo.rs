//! Average potential outcome E[Y(1)]: outcome models for the treated arm
//! fitted on each dataset, combined the same way as for the ATE.

use ppate::nuisance::{cross_fit, fit_linear, DEFAULT_CLIP_EPSILON, DEFAULT_LAMBDA};
use ppate::ppi::pp_interval_apo;
use ppate::synthgen::{generate, DgpConfig, Scenario};

fn main() -> ppate::Result<()> {
    let data = generate(&DgpConfig::scenario(Scenario::Medium, 2))?;
    let (d1, d2) = (&data.d1, &data.d2);

    // f1: cross-fitted treated-arm regression on the small dataset.
    let nuisance = cross_fit(d1, 2, 0, DEFAULT_LAMBDA, DEFAULT_CLIP_EPSILON)?;
    let f1_on_d1: Vec<f64> = d1
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| nuisance.predict(i, s.covariates()).mu1)
        .collect();

    // f2: treated-arm regression on the large dataset.
    let treated: Vec<usize> = (0..d2.len()).filter(|&i| d2.samples()[i].is_treated()).collect();
    let arm = d2.subset(&treated)?;
    let f2 = fit_linear(&arm.covariate_matrix(), &arm.outcomes(), DEFAULT_LAMBDA)?;
    let f2_on_d1: Vec<f64> = d1.samples().iter().map(|s| f2.predict(s.covariates())).collect();
    let f2_on_d2: Vec<f64> = d2.samples().iter().map(|s| f2.predict(s.covariates())).collect();

    let ci = pp_interval_apo(&f1_on_d1, &f2_on_d1, &f2_on_d2, 0.05)?;
    println!("{}", ci.to_json());
    Ok(())
}
