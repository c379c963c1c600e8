//! End-to-end estimation on a (D¹, D²) pair: the prediction-powered
//! interval plus both single-dataset baselines.

use serde::{Deserialize, Serialize};

use crate::baselines::{aipw_ci, interval_from_scores};
use crate::cate::{evaluate_dataset, fit_dr_learner, CateModel};
use crate::dataset::{split, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{cross_fit, DEFAULT_CLIP_EPSILON, DEFAULT_FOLDS, DEFAULT_LAMBDA};
use crate::ppi::{check_alpha, pp_interval, pp_interval_rct, rectifier, MeasureOfFit, PPInterval, Rectifier};
use crate::scores::{score_dataset, ScoreInput, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub folds: usize,
    pub seed: u64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub alpha: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            alpha: 0.05,
        }
    }
}

impl EstimateConfig {
    pub fn d2_split_seed(&self) -> u64 {
        self.seed
    }

    pub fn d1_cross_fit_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn d2_baseline_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

/// τ̂₂ fitted on one half of D² and its measure of fit on the other half.
#[derive(Debug, Clone)]
pub struct FittedPredictor {
    pub model: CateModel,
    pub measure: MeasureOfFit,
    /// τ̂₂ on the evaluation half, in D² order.
    pub evaluation_predictions: Vec<f64>,
}

pub fn fit_predictor(d2: &Dataset, cfg: &EstimateConfig) -> Result<FittedPredictor> {
    let halves = split(d2, 2, cfg.d2_split_seed())?;
    let model = fit_dr_learner(d2, &halves, cfg.lambda, cfg.clip_epsilon)?;
    let eval = d2.subset(&model.provenance().evaluation)?;
    let evaluation_predictions = evaluate_dataset(&model, &eval)?;
    let measure = MeasureOfFit::from_predictions(&evaluation_predictions);
    Ok(FittedPredictor {
        model,
        measure,
        evaluation_predictions,
    })
}

/// Cross-fitted AIPW scores on D¹.
pub fn d1_scores(d1: &Dataset, cfg: &EstimateConfig) -> Result<ScoreVector> {
    let nuisance = cross_fit(d1, cfg.folds, cfg.d1_cross_fit_seed(), cfg.lambda, cfg.clip_epsilon)?;
    score_dataset(d1, ScoreInput::Aipw(&nuisance))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimates {
    pub prediction_powered: PPInterval,
    pub baseline_d1: PPInterval,
    pub baseline_d2: PPInterval,
}

impl Estimates {
    pub fn intervals(&self) -> [&PPInterval; 3] {
        [&self.prediction_powered, &self.baseline_d1, &self.baseline_d2]
    }
}

/// Observational D¹: AIPW scores with cross-fitted nuisances.
pub fn run_observational(d1: &Dataset, d2: &Dataset, cfg: &EstimateConfig) -> Result<Estimates> {
    check_alpha(cfg.alpha)?;
    check_dims(d1, d2)?;
    let predictor = fit_predictor(d2, cfg)?;
    let scores = d1_scores(d1, cfg)?;
    let (pp, _) = pp_from_scores(&scores, &predictor, d1, cfg.alpha)?;
    let baseline_d1 = interval_from_scores(&scores, d1.role(), cfg.alpha);
    let baseline_d2 = aipw_ci(d2, cfg.folds, cfg.d2_baseline_seed(), cfg.lambda, cfg.clip_epsilon, cfg.alpha)?;
    Ok(Estimates {
        prediction_powered: pp,
        baseline_d1,
        baseline_d2,
    })
}

/// Randomized D¹ with known propensities: IPW scores, no nuisances on D¹.
/// The D¹ baseline is still the cross-fitted AIPW interval.
pub fn run_rct(d1: &Dataset, d2: &Dataset, cfg: &EstimateConfig) -> Result<Estimates> {
    check_alpha(cfg.alpha)?;
    check_dims(d1, d2)?;
    let predictor = fit_predictor(d2, cfg)?;
    let pp = pp_interval_rct(d1, &predictor.model, &predictor.measure, cfg.alpha)?;
    let baseline_d1 = interval_from_scores(&d1_scores(d1, cfg)?, d1.role(), cfg.alpha);
    let baseline_d2 = aipw_ci(d2, cfg.folds, cfg.d2_baseline_seed(), cfg.lambda, cfg.clip_epsilon, cfg.alpha)?;
    Ok(Estimates {
        prediction_powered: pp,
        baseline_d1,
        baseline_d2,
    })
}

/// Rectifier against τ̂₂ on D¹, then the normal interval.
pub fn pp_from_scores(
    scores: &ScoreVector,
    predictor: &FittedPredictor,
    d1: &Dataset,
    alpha: f64,
) -> Result<(PPInterval, Rectifier)> {
    let tau_d1 = evaluate_dataset(&predictor.model, d1)?;
    let r = rectifier(scores, &tau_d1)?;
    Ok((pp_interval(&r, &predictor.measure, alpha)?, r))
}

fn check_dims(d1: &Dataset, d2: &Dataset) -> Result<()> {
    if d1.dim() != d2.dim() {
        return Err(Error::Dimension {
            expected: d1.dim(),
            got: d2.dim(),
        });
    }
    Ok(())
}
