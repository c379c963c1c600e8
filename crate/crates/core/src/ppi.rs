//! Prediction-powered ATE estimation.
//!
//! The estimate is the measure of fit (mean predicted CATE on the held-out
//! half of the large dataset) plus the rectifier (mean difference between
//! the small dataset's influence scores and the predicted CATE on the same
//! units). The interval is a normal approximation whose variance adds the
//! two components:
//!
//! ```text
//! τ̂ᴾᴾ ± z₁₋α/₂ · √(σ̂²_Δ / n + σ̂²_τ₂ / N)
//! ```
//!
//! Both variances divide by their sample size. Variants cover covariate
//! shift with known density ratios, a Hoeffding bound for finite
//! populations, and average potential outcomes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cate::{evaluate_dataset, CateFunction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scores::{score_dataset, ScoreInput, ScoreKind, ScoreVector};
use crate::stats::{mean, population_variance, two_sided_z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PP_AIPW")]
    PpAipw,
    #[serde(rename = "PP_IPW")]
    PpIpw,
    #[serde(rename = "PP_Shifted")]
    PpShifted,
    #[serde(rename = "PP_FinitePop")]
    PpFinitePop,
    #[serde(rename = "PP_APO")]
    PpApo,
    #[serde(rename = "Baseline_D1")]
    BaselineD1,
    #[serde(rename = "Baseline_D2")]
    BaselineD2,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PpAipw => "PP_AIPW",
            Method::PpIpw => "PP_IPW",
            Method::PpShifted => "PP_Shifted",
            Method::PpFinitePop => "PP_FinitePop",
            Method::PpApo => "PP_APO",
            Method::BaselineD1 => "Baseline_D1",
            Method::BaselineD2 => "Baseline_D2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::PpAipw,
            Method::PpIpw,
            Method::PpShifted,
            Method::PpFinitePop,
            Method::PpApo,
            Method::BaselineD1,
            Method::BaselineD2,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Debiasing term computed on the small dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectifier {
    pub delta_hat: f64,
    pub sigma2_delta: f64,
    pub n: usize,
    pub per_sample_deltas: Vec<f64>,
    pub kind: ScoreKind,
}

impl Rectifier {
    pub fn from_deltas(per_sample_deltas: Vec<f64>, kind: ScoreKind) -> Self {
        let n = per_sample_deltas.len();
        if n == 1 {
            log::warn!("rectifier computed from a single sample; its variance is taken as 0");
        }
        Self {
            delta_hat: mean(&per_sample_deltas),
            sigma2_delta: population_variance(&per_sample_deltas),
            n,
            per_sample_deltas,
            kind,
        }
    }
}

/// Mean and spread of the predicted CATE on the held-out half of D².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureOfFit {
    pub tau2_hat: f64,
    pub sigma2_tau2: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
}

impl MeasureOfFit {
    pub fn from_predictions(values: &[f64]) -> Self {
        if values.len() == 1 {
            log::warn!("measure of fit computed from a single prediction; its variance is taken as 0");
        }
        Self {
            tau2_hat: mean(values),
            sigma2_tau2: population_variance(values),
            big_n: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPInterval {
    pub method: Method,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub alpha: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub sigma2_delta: f64,
    pub sigma2_tau2: f64,
    /// Set on intervals that are not valid under the stated assumptions
    /// (the AIPW interval on the confounded dataset).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub biased_by_assumption: bool,
}

impl PPInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("interval serializes")
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) struct IntervalParts {
    pub method: Method,
    pub estimate: f64,
    pub half_width: f64,
    pub alpha: f64,
    pub n: usize,
    pub big_n: usize,
    pub sigma2_delta: f64,
    pub sigma2_tau2: f64,
}

impl IntervalParts {
    pub fn build(self) -> PPInterval {
        let lower = self.estimate - self.half_width;
        let upper = self.estimate + self.half_width;
        PPInterval {
            method: self.method,
            estimate: self.estimate,
            lower,
            upper,
            width: upper - lower,
            alpha: self.alpha,
            n: self.n,
            big_n: self.big_n,
            sigma2_delta: self.sigma2_delta,
            sigma2_tau2: self.sigma2_tau2,
            biased_by_assumption: false,
        }
    }
}

/// Δ̂ᵢ = scoreᵢ − τ̂₂(xᵢ), aggregated into mean and population variance.
pub fn rectifier(scores: &ScoreVector, tau2_on_d1: &[f64]) -> Result<Rectifier> {
    if scores.len() != tau2_on_d1.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: tau2_on_d1.len(),
        });
    }
    let deltas = scores
        .values
        .iter()
        .zip(tau2_on_d1)
        .map(|(s, t)| s - t)
        .collect();
    Ok(Rectifier::from_deltas(deltas, scores.kind))
}

pub fn pp_estimate(r: &Rectifier, m: &MeasureOfFit) -> f64 {
    r.delta_hat + m.tau2_hat
}

fn pp_method(kind: ScoreKind) -> Method {
    match kind {
        ScoreKind::Aipw => Method::PpAipw,
        ScoreKind::Ipw => Method::PpIpw,
    }
}

fn normal_pp_interval(r: &Rectifier, m: &MeasureOfFit, alpha: f64, method: Method) -> Result<PPInterval> {
    check_alpha(alpha)?;
    if r.n == 0 || m.big_n == 0 {
        return Err(Error::Config("interval needs at least one sample on each side".into()));
    }
    let se = (r.sigma2_delta / r.n as f64 + m.sigma2_tau2 / m.big_n as f64).sqrt();
    Ok(IntervalParts {
        method,
        estimate: pp_estimate(r, m),
        half_width: two_sided_z(alpha) * se,
        alpha,
        n: r.n,
        big_n: m.big_n,
        sigma2_delta: r.sigma2_delta,
        sigma2_tau2: m.sigma2_tau2,
    }
    .build())
}

/// Normal-approximation prediction-powered interval. The method tag follows
/// the rectifier's score kind (PP_AIPW or PP_IPW).
pub fn pp_interval(r: &Rectifier, m: &MeasureOfFit, alpha: f64) -> Result<PPInterval> {
    normal_pp_interval(r, m, alpha, pp_method(r.kind))
}

/// RCT variant: IPW scores from the known propensities of `d1` replace the
/// AIPW scores; no nuisance models are fitted on `d1`.
pub fn pp_interval_rct(
    d1: &Dataset,
    model: &dyn CateFunction,
    measure: &MeasureOfFit,
    alpha: f64,
) -> Result<PPInterval> {
    check_alpha(alpha)?;
    if d1.known_propensity().is_none() {
        return Err(Error::Config(
            "the RCT interval requires known propensities on D¹".into(),
        ));
    }
    let scores = score_dataset(d1, ScoreInput::Ipw)?;
    let tau_d1 = evaluate_dataset(model, d1)?;
    let r = rectifier(&scores, &tau_d1)?;
    pp_interval(&r, measure, alpha)
}

fn check_weights(weights: &[f64], side: &str) -> Result<()> {
    match weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        Some(i) => Err(Error::Config(format!(
            "{side} weight {i} is {} but weights must be finite and nonnegative",
            weights[i]
        ))),
        None => Ok(()),
    }
}

/// Covariate-shift variant with caller-supplied density ratios w(x):
/// every per-sample term on both datasets is multiplied by its weight.
pub fn pp_interval_shifted(
    scores: &ScoreVector,
    tau2_on_d1: &[f64],
    tau2_on_d2_eval: &[f64],
    weights_d1: &[f64],
    weights_d2: &[f64],
    alpha: f64,
) -> Result<PPInterval> {
    check_alpha(alpha)?;
    let n = scores.len();
    for len in [tau2_on_d1.len(), weights_d1.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    if weights_d2.len() != tau2_on_d2_eval.len() {
        return Err(Error::Dimension {
            expected: tau2_on_d2_eval.len(),
            got: weights_d2.len(),
        });
    }
    check_weights(weights_d1, "D¹")?;
    check_weights(weights_d2, "D²")?;

    let deltas = scores
        .values
        .iter()
        .zip(tau2_on_d1)
        .zip(weights_d1)
        .map(|((s, t), w)| s * w - t * w)
        .collect();
    let r = Rectifier::from_deltas(deltas, scores.kind);
    let weighted: Vec<f64> = tau2_on_d2_eval
        .iter()
        .zip(weights_d2)
        .map(|(t, w)| t * w)
        .collect();
    let m = MeasureOfFit::from_predictions(&weighted);
    normal_pp_interval(&r, &m, alpha, Method::PpShifted)
}

/// Finite-population interval: Hoeffding bound for the rectifier using the
/// per-sample ranges [aᵢ, bᵢ], normal approximation for the measure of fit.
pub fn pp_interval_finite_pop(
    r: &Rectifier,
    m: &MeasureOfFit,
    bounds: &[(f64, f64)],
    alpha: f64,
) -> Result<PPInterval> {
    check_alpha(alpha)?;
    if bounds.len() != r.n {
        return Err(Error::Dimension {
            expected: r.n,
            got: bounds.len(),
        });
    }
    if m.big_n == 0 || r.n == 0 {
        return Err(Error::Config("interval needs at least one sample on each side".into()));
    }
    for (index, (&(lower, upper), &value)) in bounds.iter().zip(&r.per_sample_deltas).enumerate() {
        if !(lower <= value && value <= upper) {
            return Err(Error::BoundViolation {
                index,
                value,
                lower,
                upper,
            });
        }
    }
    let n = r.n as f64;
    let range_sq: f64 = bounds.iter().map(|(a, b)| (b - a) * (b - a)).sum();
    let hoeffding = (range_sq / (2.0 * n * n) * (2.0 / alpha).ln()).sqrt();
    let fit = two_sided_z(alpha) * (m.sigma2_tau2 / m.big_n as f64).sqrt();
    Ok(IntervalParts {
        method: Method::PpFinitePop,
        estimate: pp_estimate(r, m),
        half_width: hoeffding + fit,
        alpha,
        n: r.n,
        big_n: m.big_n,
        sigma2_delta: r.sigma2_delta,
        sigma2_tau2: m.sigma2_tau2,
    }
    .build())
}

/// Average potential outcome for one arm: the rectifier is the gap between
/// the small-dataset outcome model f₁ and the large-dataset model f₂ on D¹.
pub fn pp_interval_apo(
    f1_on_d1: &[f64],
    f2_on_d1: &[f64],
    f2_on_d2: &[f64],
    alpha: f64,
) -> Result<PPInterval> {
    check_alpha(alpha)?;
    if f1_on_d1.len() != f2_on_d1.len() {
        return Err(Error::Dimension {
            expected: f1_on_d1.len(),
            got: f2_on_d1.len(),
        });
    }
    if f1_on_d1.is_empty() || f2_on_d2.is_empty() {
        return Err(Error::Config("interval needs at least one sample on each side".into()));
    }
    let deltas = f1_on_d1.iter().zip(f2_on_d1).map(|(a, b)| a - b).collect();
    let r = Rectifier::from_deltas(deltas, ScoreKind::Aipw);
    let m = MeasureOfFit::from_predictions(f2_on_d2);
    normal_pp_interval(&r, &m, alpha, Method::PpApo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(values: &[f64]) -> ScoreVector {
        ScoreVector {
            values: values.to_vec(),
            kind: ScoreKind::Aipw,
        }
    }

    #[test]
    fn rectifier_cases() {
        let s = sv(&[1.0, 2.0, 3.0]);
        let r = rectifier(&s, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.delta_hat, r.sigma2_delta), (0.0, 0.0));

        let r = rectifier(&s, &[0.0; 3]).unwrap();
        assert_eq!(r.delta_hat, 2.0);
        assert!((r.sigma2_delta - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.delta_hat, s.mean());

        assert!(matches!(rectifier(&s, &[0.0; 2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn estimate_is_sum() {
        let m = |t| MeasureOfFit {
            tau2_hat: t,
            sigma2_tau2: 0.0,
            big_n: 10,
        };
        let r = |d| Rectifier::from_deltas(vec![d, d], ScoreKind::Aipw);
        assert_eq!(pp_estimate(&r(0.0), &m(1.5)), 1.5);
        assert_eq!(pp_estimate(&r(2.0), &m(0.0)), 2.0);
        assert!((pp_estimate(&r(-0.3), &m(1.0)) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn interval_half_width() {
        // deltas ±1 give population variance exactly 1
        let deltas: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = Rectifier::from_deltas(deltas, ScoreKind::Aipw);
        assert_eq!(r.sigma2_delta, 1.0);
        let m = MeasureOfFit {
            tau2_hat: 0.0,
            sigma2_tau2: 0.0,
            big_n: 5000,
        };
        let ci = pp_interval(&r, &m, 0.05).unwrap();
        assert!((ci.half_width() - 0.195_996_398_454_005_4).abs() < 1e-12);
        assert_eq!(ci.method, Method::PpAipw);

        let narrow = pp_interval(&r, &m, 0.32).unwrap();
        assert!(narrow.width < ci.width);

        let zero = Rectifier::from_deltas(vec![0.5; 10], ScoreKind::Aipw);
        let ci = pp_interval(&zero, &m, 0.05).unwrap();
        assert_eq!((ci.lower, ci.estimate, ci.upper, ci.width), (0.5, 0.5, 0.5, 0.0));
    }

    #[test]
    fn alpha_is_validated() {
        let r = Rectifier::from_deltas(vec![0.0, 1.0], ScoreKind::Aipw);
        let m = MeasureOfFit::from_predictions(&[0.0, 1.0]);
        for alpha in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(matches!(pp_interval(&r, &m, alpha), Err(Error::Config(_))));
        }
    }

    #[test]
    fn finite_pop_hand_value() {
        let r = Rectifier::from_deltas(vec![0.0; 100], ScoreKind::Aipw);
        let m = MeasureOfFit {
            tau2_hat: 0.0,
            sigma2_tau2: 0.0,
            big_n: 100,
        };
        let ci = pp_interval_finite_pop(&r, &m, &vec![(-1.0, 1.0); 100], 0.05).unwrap();
        assert!((ci.half_width() - 0.27162).abs() < 1e-5);

        let ci = pp_interval_finite_pop(&r, &m, &vec![(0.0, 0.0); 100], 0.05).unwrap();
        assert_eq!(ci.width, 0.0);

        let mut bounds = vec![(-1.0, 1.0); 100];
        bounds[17] = (0.5, 1.0);
        assert!(matches!(
            pp_interval_finite_pop(&r, &m, &bounds, 0.05),
            Err(Error::BoundViolation { index: 17, .. })
        ));
    }

    #[test]
    fn shifted_unit_weights_match_plain() {
        let s = sv(&[0.3, -1.2, 2.5, 0.0, 4.1]);
        let t1 = [0.1, 0.2, 0.3, 0.4, 0.5];
        let t2 = [0.5, 0.7, -0.2, 1.1];
        let plain = pp_interval(
            &rectifier(&s, &t1).unwrap(),
            &MeasureOfFit::from_predictions(&t2),
            0.1,
        )
        .unwrap();
        let shifted = pp_interval_shifted(&s, &t1, &t2, &[1.0; 5], &[1.0; 4], 0.1).unwrap();
        assert_eq!(plain.estimate.to_bits(), shifted.estimate.to_bits());
        assert_eq!(plain.lower.to_bits(), shifted.lower.to_bits());
        assert_eq!(plain.upper.to_bits(), shifted.upper.to_bits());
        assert_eq!(shifted.method, Method::PpShifted);

        let doubled = pp_interval_shifted(&s, &t1, &t2, &[1.0; 5], &[2.0; 4], 0.1).unwrap();
        let base_tau = t2.iter().sum::<f64>() / 4.0;
        let r = rectifier(&s, &t1).unwrap();
        assert!((doubled.estimate - r.delta_hat - 2.0 * base_tau).abs() < 1e-12);

        assert!(pp_interval_shifted(&s, &t1, &t2, &[1.0, 1.0, -1.0, 1.0, 1.0], &[1.0; 4], 0.1).is_err());
    }

    #[test]
    fn apo_cases() {
        let ci = pp_interval_apo(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 5.0], 0.05).unwrap();
        assert_eq!(ci.estimate, 4.0);
        let ci = pp_interval_apo(&[2.5; 3], &[2.5; 3], &[2.5; 7], 0.05).unwrap();
        assert_eq!((ci.estimate, ci.width), (2.5, 0.0));
        assert!(pp_interval_apo(&[1.0], &[1.0, 2.0], &[1.0], 0.05).is_err());
    }

    #[test]
    fn json_shape() {
        let r = Rectifier::from_deltas(vec![0.0, 1.0], ScoreKind::Ipw);
        let m = MeasureOfFit::from_predictions(&[0.0, 1.0, 2.0]);
        let ci = pp_interval(&r, &m, 0.05).unwrap();
        let v: serde_json::Value = serde_json::from_str(&ci.to_json()).unwrap();
        for key in ["method", "estimate", "lower", "upper", "alpha", "n", "N", "sigma2_delta", "sigma2_tau2"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["method"], "PP_IPW");
        assert!(v.get("biased_by_assumption").is_none());
        let back: PPInterval = serde_json::from_value(v).unwrap();
        assert_eq!(back, ci);
    }
}
