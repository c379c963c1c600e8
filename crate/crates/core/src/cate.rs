//! DR-learner CATE estimator trained on one half of the large dataset.
//!
//! Stage 1 cross-fits outcome and propensity models inside the training
//! half. Stage 2 regresses the resulting non-centered AIPW pseudo-outcomes
//! on the covariates. The other half is reserved for the measure of fit.

use nalgebra::DMatrix;

use crate::dataset::{split_len, Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::nuisance::{cross_fit_with, fit_linear, LinearModel, Logistic, Ridge};
use crate::ppi::MeasureOfFit;
use crate::scores::aipw_score;

/// Anything that maps a covariate vector to a CATE prediction.
pub trait CateFunction: Send + Sync {
    fn cate(&self, x: &[f64]) -> f64;

    /// Expected covariate dimension, if the function knows it.
    fn dim(&self) -> Option<usize> {
        None
    }
}

/// The predictor that always answers 0; collapses the prediction-powered
/// estimate to the small-dataset estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCate;

impl CateFunction for ZeroCate {
    fn cate(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Adapts a closure into a [`CateFunction`].
pub struct FnCate<F>(pub F);

impl<F> CateFunction for FnCate<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn cate(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Index sets (into D²) used at each stage, kept for auditing sample
/// splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CateProvenance {
    /// Per inner fold: the samples the stage-1 nuisances were trained on.
    pub stage1_training: Vec<Vec<usize>>,
    /// Per inner fold: the samples those nuisances produced pseudo-outcomes for.
    pub stage1_scored: Vec<Vec<usize>>,
    pub stage2_training: Vec<usize>,
    pub evaluation: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CateModel {
    second_stage: LinearModel,
    dim: usize,
    pseudo_outcomes: Vec<f64>,
    provenance: CateProvenance,
}

impl CateModel {
    pub fn second_stage(&self) -> &LinearModel {
        &self.second_stage
    }

    /// Stage-2 regression targets, in training-half order.
    pub fn pseudo_outcomes(&self) -> &[f64] {
        &self.pseudo_outcomes
    }

    pub fn provenance(&self) -> &CateProvenance {
        &self.provenance
    }

    /// Mean and population variance of τ̂₂ over the held-out half of `d2`.
    pub fn measure_of_fit(&self, d2: &Dataset) -> Result<MeasureOfFit> {
        let eval = d2.subset(&self.provenance.evaluation)?;
        let values = evaluate(self, &eval.covariate_matrix())?;
        Ok(MeasureOfFit::from_predictions(&values))
    }
}

impl CateFunction for CateModel {
    fn cate(&self, x: &[f64]) -> f64 {
        self.second_stage.predict(x)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

// Seed offset for the inner stage-1 fold assignment.
const INNER_SPLIT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Fits τ̂₂ on fold 0 of `split` (which must have K = 2); fold 1 is left
/// untouched for the measure of fit.
pub fn fit_dr_learner(
    d2: &Dataset,
    split: &SplitAssignment,
    lambda: f64,
    clip_epsilon: f64,
) -> Result<CateModel> {
    if split.k() != 2 {
        return Err(Error::Config(format!(
            "the DR-learner needs a two-way split of D², got K = {}",
            split.k()
        )));
    }
    if split.len() != d2.len() {
        return Err(Error::Dimension {
            expected: d2.len(),
            got: split.len(),
        });
    }
    let training = split.members(0);
    let evaluation = split.members(1);
    let train = d2.subset(&training)?;

    let inner = split_len(train.len(), 2, split.seed() ^ INNER_SPLIT_SALT)?;
    let nuisance = cross_fit_with(&train, inner, &Ridge { lambda }, &Logistic { clip_epsilon })?;

    let pseudo_outcomes = train
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let nv = nuisance.predict(i, s.covariates());
            aipw_score(s, nv.mu0, nv.mu1, nv.propensity)
        })
        .collect::<Result<Vec<_>>>()?;
    let second_stage = fit_linear(&train.covariate_matrix(), &pseudo_outcomes, lambda)?;

    let to_d2 = |local: &[usize]| local.iter().map(|&i| training[i]).collect::<Vec<_>>();
    let k = nuisance.split().k();
    let provenance = CateProvenance {
        stage1_training: (0..k).map(|f| to_d2(&nuisance.fold(f).training)).collect(),
        stage1_scored: (0..k).map(|f| to_d2(&nuisance.split().members(f))).collect(),
        stage2_training: training.clone(),
        evaluation,
    };
    Ok(CateModel {
        second_stage,
        dim: d2.dim(),
        pseudo_outcomes,
        provenance,
    })
}

/// τ̂(x) for every row of `xs`.
pub fn evaluate(model: &dyn CateFunction, xs: &DMatrix<f64>) -> Result<Vec<f64>> {
    if let Some(q) = model.dim() {
        if xs.ncols() != q {
            return Err(Error::Dimension {
                expected: q,
                got: xs.ncols(),
            });
        }
    }
    let mut row = vec![0.0; xs.ncols()];
    Ok((0..xs.nrows())
        .map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = xs[(i, j)];
            }
            model.cate(&row)
        })
        .collect())
}

/// τ̂(x) for every sample of a dataset.
pub fn evaluate_dataset(model: &dyn CateFunction, ds: &Dataset) -> Result<Vec<f64>> {
    evaluate(model, &ds.covariate_matrix())
}
