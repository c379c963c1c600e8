//! Non-centered influence scores on the small dataset. Their mean is the
//! AIPW (observational) or IPW (randomized) estimate of the ATE.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nuisance::CrossFitNuisance;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Aipw,
    Ipw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.values)
    }

    pub fn population_variance(&self) -> f64 {
        stats::population_variance(&self.values)
    }
}

fn check_overlap(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::Overlap(pi))
    }
}

/// (a/π − (1−a)/(1−π))·y − (a−π)/(π(1−π)) · ((1−π)μ₁ + πμ₀)
pub fn aipw_score(sample: &Sample, mu0: f64, mu1: f64, pi: f64) -> Result<f64> {
    check_overlap(pi)?;
    let a = f64::from(sample.treatment());
    let y = sample.outcome();
    let weight = a / pi - (1.0 - a) / (1.0 - pi);
    let augmentation = (a - pi) / (pi * (1.0 - pi)) * ((1.0 - pi) * mu1 + pi * mu0);
    Ok(weight * y - augmentation)
}

/// a·y/π − (1−a)·y/(1−π)
pub fn ipw_score(sample: &Sample, pi: f64) -> Result<f64> {
    check_overlap(pi)?;
    let a = f64::from(sample.treatment());
    let y = sample.outcome();
    Ok(a * y / pi - (1.0 - a) * y / (1.0 - pi))
}

/// Where the score's nuisance values come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    /// AIPW scores with cross-fitted nuisances.
    Aipw(&'a CrossFitNuisance),
    /// IPW scores with the dataset's known propensities.
    Ipw,
}

pub fn score_dataset(d1: &Dataset, input: ScoreInput<'_>) -> Result<ScoreVector> {
    match input {
        ScoreInput::Aipw(nuisance) => {
            if nuisance.len() != d1.len() {
                return Err(Error::Config(format!(
                    "nuisance was fitted on {} samples but the dataset has {}",
                    nuisance.len(),
                    d1.len()
                )));
            }
            let values = d1
                .samples()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let nv = nuisance.predict(i, s.covariates());
                    aipw_score(s, nv.mu0, nv.mu1, nv.propensity)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoreVector {
                values,
                kind: ScoreKind::Aipw,
            })
        }
        ScoreInput::Ipw => {
            let propensity = d1.known_propensity().ok_or_else(|| {
                Error::Config("IPW scores require known propensities on the dataset".into())
            })?;
            let values = d1
                .samples()
                .iter()
                .zip(propensity)
                .map(|(s, &p)| ipw_score(s, p))
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoreVector {
                values,
                kind: ScoreKind::Ipw,
            })
        }
    }
}
