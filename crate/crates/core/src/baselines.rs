//! Single-dataset AIPW intervals used as comparison points.

use crate::dataset::{Dataset, Role};
use crate::error::Result;
use crate::nuisance::cross_fit;
use crate::ppi::{check_alpha, IntervalParts, Method, PPInterval};
use crate::scores::{score_dataset, ScoreInput, ScoreVector};
use crate::stats::two_sided_z;

/// Classical cross-fitted AIPW interval on one dataset.
///
/// Tagged `Baseline_D1` or `Baseline_D2` by the dataset's role; the D²
/// interval is flagged `biased_by_assumption` since D² may be confounded.
pub fn aipw_ci(
    ds: &Dataset,
    k: usize,
    seed: u64,
    lambda: f64,
    clip_epsilon: f64,
    alpha: f64,
) -> Result<PPInterval> {
    check_alpha(alpha)?;
    let nuisance = cross_fit(ds, k, seed, lambda, clip_epsilon)?;
    let scores = score_dataset(ds, ScoreInput::Aipw(&nuisance))?;
    Ok(interval_from_scores(&scores, ds.role(), alpha))
}

/// z-interval around the mean score with standard error √(var/n).
pub fn interval_from_scores(scores: &ScoreVector, role: Role, alpha: f64) -> PPInterval {
    let n = scores.len();
    let variance = scores.population_variance();
    let mut ci = IntervalParts {
        method: match role {
            Role::SmallUnconfounded => Method::BaselineD1,
            Role::LargeAuxiliary => Method::BaselineD2,
        },
        estimate: scores.mean(),
        half_width: two_sided_z(alpha) * (variance / n as f64).sqrt(),
        alpha,
        n,
        big_n: 0,
        sigma2_delta: variance,
        sigma2_tau2: 0.0,
    }
    .build();
    ci.biased_by_assumption = role == Role::LargeAuxiliary;
    ci
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::error::Error;

    fn null_effect(role: Role) -> Dataset {
        let samples = (0..80)
            .map(|i| {
                let x = (i as f64 / 80.0) - 0.5;
                let a = u8::from(i % 3 != 0);
                Sample::new(vec![x], a, 3.0).unwrap()
            })
            .collect();
        Dataset::new(samples, role).unwrap()
    }

    #[test]
    fn constant_outcome_gives_zero_effect() {
        let ci = aipw_ci(&null_effect(Role::SmallUnconfounded), 2, 0, 1e-6, 0.01, 0.05).unwrap();
        assert!(ci.estimate.abs() < 1e-9, "estimate {}", ci.estimate);
        assert_eq!(ci.method, Method::BaselineD1);
        assert!(!ci.biased_by_assumption);
    }

    #[test]
    fn d2_baseline_is_flagged() {
        let ci = aipw_ci(&null_effect(Role::LargeAuxiliary), 2, 0, 1e-6, 0.01, 0.05).unwrap();
        assert_eq!(ci.method, Method::BaselineD2);
        assert!(ci.biased_by_assumption);
        assert!(ci.to_json().contains("\"biased_by_assumption\":true"));
    }

    #[test]
    fn single_arm_fails() {
        let samples = (0..10)
            .map(|i| Sample::new(vec![i as f64], 1, 0.0).unwrap())
            .collect();
        let ds = Dataset::new(samples, Role::SmallUnconfounded).unwrap();
        assert!(matches!(
            aipw_ci(&ds, 2, 0, 1e-6, 0.01, 0.05),
            Err(Error::CrossFitDegenerate { .. })
        ));
    }
}
