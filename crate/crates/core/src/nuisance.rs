//! Outcome regressions and propensity models, fitted with K-fold
//! cross-fitting so that each sample is scored by models that never saw its
//! fold.
//!
//! Linear and logistic learners ship here. Other learners plug in through
//! [`OutcomeRegressor`] and [`PropensityClassifier`].

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{split, Dataset, SplitAssignment};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 2;
pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_CLIP_EPSILON: f64 = 0.01;

/// Ridge strength used when the logistic fit detects separation.
pub const SEPARATION_RIDGE: f64 = 1e-4;

const MAX_NEWTON_ITERS: usize = 100;
const GRADIENT_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 50;
const DECREMENT_FLOOR: f64 = 1e-12;
// |linear predictor| beyond this at termination is treated as separation.
const SEPARATION_ETA: f64 = 20.0;

pub trait FittedOutcome: Send + Sync + fmt::Debug {
    fn predict(&self, x: &[f64]) -> f64;
}

pub trait FittedPropensity: Send + Sync + fmt::Debug {
    /// P(A = 1 | x), already clipped away from 0 and 1.
    fn predict_proba(&self, x: &[f64]) -> f64;
}

pub trait OutcomeRegressor: Send + Sync {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn FittedOutcome>>;
}

pub trait PropensityClassifier: Send + Sync {
    fn fit(&self, x: &DMatrix<f64>, a: &[u8]) -> Result<Box<dyn FittedPropensity>>;
}

/// Column centering and scaling. Constant columns keep scale 1.
#[derive(Debug, Clone)]
struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            means.push(m);
            scales.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { means, scales }
    }

    fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.scales[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.weights, x)
    }
}

impl FittedOutcome for LinearModel {
    fn predict(&self, x: &[f64]) -> f64 {
        LinearModel::predict(self, x)
    }
}

/// Ridge regression minimizing Σ(yᵢ − b − ⟨w, xᵢ⟩)² + λ‖w‖², intercept
/// unpenalized.
///
/// Covariates are standardized internally for conditioning; the penalty is
/// rescaled so the minimizer is the one of the objective above on the
/// original scale.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    let n = x.nrows();
    let q = x.ncols();
    if n == 0 {
        return Err(Error::Config("cannot fit a regression on zero samples".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if q == 0 {
        return Ok(LinearModel {
            weights: vec![],
            intercept: y_mean,
            ridge_lambda: lambda,
        });
    }

    let st = Standardizer::fit(x);
    let z = st.transform(x);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * &z;
    for j in 0..q {
        gram[(j, j)] += lambda / (st.scales[j] * st.scales[j]);
    }
    let rhs = z.transpose() * yc;

    let singular = || {
        Error::Numerical(
            "normal equations are singular; use a ridge penalty lambda > 0".into(),
        )
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let l = chol.l();
    let diag_max = (0..q).map(|j| l[(j, j)]).fold(0.0, f64::max);
    let diag_min = (0..q).map(|j| l[(j, j)]).fold(f64::INFINITY, f64::min);
    if diag_min <= diag_max * 1e-7 {
        return Err(singular());
    }
    let mut v = chol.solve(&rhs);
    // one step of iterative refinement
    let resid = &rhs - &gram * &v;
    v += chol.solve(&resid);

    let weights: Vec<f64> = (0..q).map(|j| v[j] / st.scales[j]).collect();
    let intercept = y_mean - dot(&weights, &st.means);
    Ok(LinearModel {
        weights,
        intercept,
        ridge_lambda: lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub clip_epsilon: f64,
    /// Set when separation was detected and the ridge fallback was used.
    pub separation_fallback: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.weights, x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x)).clamp(self.clip_epsilon, 1.0 - self.clip_epsilon)
    }
}

impl FittedPropensity for LogisticModel {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        LogisticModel::predict_proba(self, x)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^t) without overflow
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Mean log-likelihood of a logistic model, minus (λ/2n)‖β‖² when penalized.
/// Exposed for tests that check optimality from the outside.
pub fn logistic_log_likelihood(
    x: &DMatrix<f64>,
    a: &[u8],
    intercept: f64,
    weights: &[f64],
) -> f64 {
    let n = x.nrows();
    let mut ll = 0.0;
    for i in 0..n {
        let eta = intercept + (0..x.ncols()).map(|j| weights[j] * x[(i, j)]).sum::<f64>();
        ll += f64::from(a[i]) * eta - softplus(eta);
    }
    ll / n as f64
}

struct NewtonOutcome {
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
    max_abs_eta: f64,
}

/// Newton-Raphson with step-halving on the mean penalized log-likelihood
/// over design `z` (first column is the intercept). Records the objective
/// after every accepted step in `trace` when given.
fn newton_logistic(
    z: &DMatrix<f64>,
    a: &[u8],
    penalty: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> NewtonOutcome {
    let n = z.nrows();
    let p = z.ncols();
    let nf = n as f64;
    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = z * beta;
        let ll: f64 = eta
            .iter()
            .zip(a)
            .map(|(&e, &ai)| f64::from(ai) * e - softplus(e))
            .sum::<f64>()
            / nf;
        ll - 0.5 * penalty / nf * beta.rows(1, p - 1).norm_squared()
    };

    let mut beta = DVector::zeros(p);
    let mut current = objective(&beta);
    if let Some(t) = trace.as_deref_mut() {
        t.push(current);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON_ITERS {
        let eta = z * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, probs.iter().zip(a).map(|(&pi, &ai)| f64::from(ai) - pi));
        let mut grad = z.transpose() * resid / nf;
        for j in 1..p {
            grad[j] -= penalty / nf * beta[j];
        }
        if grad.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            if w == 0.0 {
                continue;
            }
            let row = z.row(i);
            for r in 0..p {
                let zr = row[r] * w;
                for c in r..p {
                    info[(r, c)] += zr * row[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                info[(r, c)] = info[(c, r)];
            }
        }
        info /= nf;
        for j in 1..p {
            info[(j, j)] += penalty / nf;
        }
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        if grad.dot(&step) < DECREMENT_FLOOR {
            // the predicted gain is below the objective's rounding noise, so
            // the line search cannot tell ascent apart; take the pure step
            beta += step;
            current = objective(&beta);
            iterations += 1;
            continue;
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let value = objective(&candidate);
            if value >= current {
                beta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(current);
        }
        if !accepted {
            // no ascent possible at machine precision
            converged = grad.amax() < GRADIENT_TOL.sqrt();
            break;
        }
    }
    let max_abs_eta = (z * &beta).amax();
    NewtonOutcome {
        beta,
        iterations,
        converged,
        max_abs_eta,
    }
}

fn logistic_design(x: &DMatrix<f64>, st: &Standardizer) -> DMatrix<f64> {
    let zs = st.transform(x);
    let mut z = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    z.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(&zs);
    z
}

fn check_labels(x: &DMatrix<f64>, a: &[u8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Config("cannot fit a classifier on zero samples".into()));
    }
    if a.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: a.len(),
        });
    }
    if a.iter().any(|&v| v > 1) {
        return Err(Error::Config("labels must be 0 or 1".into()));
    }
    let ones = a.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == a.len() {
        return Err(Error::DegenerateLabels(format!(
            "all {} labels are {}",
            a.len(),
            if ones == 0 { 0 } else { 1 }
        )));
    }
    Ok(())
}

/// Unpenalized logistic regression by Newton-Raphson with step-halving.
///
/// Stops when the sup-norm of the mean log-likelihood gradient falls below
/// 1e-8 or after 100 iterations. If the data are (quasi-)separated the
/// maximum likelihood estimate does not exist; the fit is then redone with
/// ridge penalty 1e-4 on the standardized weights and
/// `separation_fallback` is set.
pub fn fit_logistic(x: &DMatrix<f64>, a: &[u8], clip_epsilon: f64) -> Result<LogisticModel> {
    if !(clip_epsilon > 0.0 && clip_epsilon < 0.5) {
        return Err(Error::Config(format!(
            "clip epsilon must lie in (0, 0.5), got {clip_epsilon}"
        )));
    }
    check_labels(x, a)?;
    let st = Standardizer::fit(x);
    let z = logistic_design(x, &st);

    let mut fit = newton_logistic(&z, a, 0.0, None);
    let mut separation_fallback = false;
    if !fit.converged || fit.max_abs_eta > SEPARATION_ETA {
        fit = newton_logistic(&z, a, SEPARATION_RIDGE, None);
        separation_fallback = true;
        if !fit.converged {
            return Err(Error::Numerical(
                "logistic regression did not converge even with ridge fallback".into(),
            ));
        }
    }
    Ok(to_original_scale(&fit, &st, clip_epsilon, separation_fallback))
}

fn to_original_scale(
    fit: &NewtonOutcome,
    st: &Standardizer,
    clip_epsilon: f64,
    separation_fallback: bool,
) -> LogisticModel {
    let q = st.means.len();
    let weights: Vec<f64> = (0..q).map(|j| fit.beta[j + 1] / st.scales[j]).collect();
    let intercept = fit.beta[0] - dot(&weights, &st.means);
    LogisticModel {
        weights,
        intercept,
        clip_epsilon,
        separation_fallback,
        iterations: fit.iterations,
    }
}

/// Objective values after each accepted Newton step, for monotonicity
/// checks.
pub fn logistic_objective_trace(x: &DMatrix<f64>, a: &[u8]) -> Result<Vec<f64>> {
    check_labels(x, a)?;
    let st = Standardizer::fit(x);
    let z = logistic_design(x, &st);
    let mut trace = Vec::new();
    newton_logistic(&z, a, 0.0, Some(&mut trace));
    Ok(trace)
}

/// Ridge outcome learner.
#[derive(Debug, Clone, Copy)]
pub struct Ridge {
    pub lambda: f64,
}

impl OutcomeRegressor for Ridge {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn FittedOutcome>> {
        Ok(Box::new(fit_linear(x, y, self.lambda)?))
    }
}

/// Logistic propensity learner with output clipping.
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    pub clip_epsilon: f64,
}

impl PropensityClassifier for Logistic {
    fn fit(&self, x: &DMatrix<f64>, a: &[u8]) -> Result<Box<dyn FittedPropensity>> {
        Ok(Box::new(fit_logistic(x, a, self.clip_epsilon)?))
    }
}

/// Nuisance estimates for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceValues {
    pub mu0: f64,
    pub mu1: f64,
    pub propensity: f64,
}

#[derive(Debug)]
pub struct FoldNuisance {
    pub mu0: Box<dyn FittedOutcome>,
    pub mu1: Box<dyn FittedOutcome>,
    pub propensity: Box<dyn FittedPropensity>,
    /// Indices (into the fitted dataset) the three models were trained on.
    pub training: Vec<usize>,
}

impl FoldNuisance {
    pub fn predict(&self, x: &[f64]) -> NuisanceValues {
        NuisanceValues {
            mu0: self.mu0.predict(x),
            mu1: self.mu1.predict(x),
            propensity: self.propensity.predict_proba(x),
        }
    }
}

/// Fold-indexed nuisance models; sample i is always scored by the models of
/// its own fold, which were trained on the other folds.
#[derive(Debug)]
pub struct CrossFitNuisance {
    split: SplitAssignment,
    folds: Vec<FoldNuisance>,
}

impl CrossFitNuisance {
    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn fold(&self, k: usize) -> &FoldNuisance {
        &self.folds[k]
    }

    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    /// Out-of-fold nuisance values for sample `i` with covariates `x`.
    pub fn predict(&self, i: usize, x: &[f64]) -> NuisanceValues {
        self.folds[self.split.fold_of(i)].predict(x)
    }
}

pub fn cross_fit(
    d1: &Dataset,
    k: usize,
    seed: u64,
    lambda: f64,
    clip_epsilon: f64,
) -> Result<CrossFitNuisance> {
    let assignment = split(d1, k, seed)?;
    cross_fit_with(d1, assignment, &Ridge { lambda }, &Logistic { clip_epsilon })
}

/// Cross-fitting with arbitrary learners over a given fold assignment.
pub fn cross_fit_with(
    ds: &Dataset,
    assignment: SplitAssignment,
    outcome: &dyn OutcomeRegressor,
    propensity: &dyn PropensityClassifier,
) -> Result<CrossFitNuisance> {
    if assignment.len() != ds.len() {
        return Err(Error::Dimension {
            expected: ds.len(),
            got: assignment.len(),
        });
    }
    let x = ds.covariate_matrix();
    let y = ds.outcomes();
    let a = ds.treatments();
    let mut folds = Vec::with_capacity(assignment.k());
    for k in 0..assignment.k() {
        let training = assignment.complement(k);
        let (treated, control): (Vec<usize>, Vec<usize>) =
            training.iter().partition(|&&i| a[i] == 1);
        if treated.is_empty() {
            return Err(Error::CrossFitDegenerate {
                fold: k,
                missing: "treated",
            });
        }
        if control.is_empty() {
            return Err(Error::CrossFitDegenerate {
                fold: k,
                missing: "control",
            });
        }
        let rows = |idx: &[usize]| x.select_rows(idx.iter());
        let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
        let mu0 = outcome.fit(&rows(&control), &pick(&control))?;
        let mu1 = outcome.fit(&rows(&treated), &pick(&treated))?;
        let labels: Vec<u8> = training.iter().map(|&i| a[i]).collect();
        let pi = propensity.fit(&rows(&training), &labels)?;
        folds.push(FoldNuisance {
            mu0,
            mu1,
            propensity: pi,
            training,
        });
    }
    Ok(CrossFitNuisance {
        split: assignment,
        folds,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Role, Sample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_interpolation() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let m = fit_linear(&x, &[0.0, 1.0], 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let m = fit_linear(&x, &[4.25; 30], 1e-6).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-10));
        assert!((m.intercept - 4.25).abs() < 1e-10);
    }

    #[test]
    fn singular_without_ridge() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = fit_linear(&x, &[1.0, 2.0, 3.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("lambda > 0")));
        assert!(fit_linear(&x, &[1.0, 2.0, 3.0], 1e-3).is_ok());
    }

    #[test]
    fn symmetric_logistic_has_zero_intercept() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..25 {
            rows.extend([-1.0, 1.0, -1.0, 1.0]);
            labels.extend([0u8, 1, 1, 0]);
        }
        // 3:1 agreement keeps the data non-separable
        for _ in 0..25 {
            rows.extend([-1.0, 1.0]);
            labels.extend([0u8, 1]);
        }
        let x = DMatrix::from_row_slice(labels.len(), 1, &rows);
        let m = fit_logistic(&x, &labels, 0.01).unwrap();
        assert!(!m.separation_fallback);
        assert!(m.intercept.abs() < 1e-10);
        assert!(m.weights[0] > 0.0);
    }

    #[test]
    fn degenerate_labels() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            fit_logistic(&x, &[1, 1, 1], 0.01),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(matches!(
            fit_logistic(&x, &[0, 0, 0], 0.01),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn separation_falls_back_to_ridge() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let m = fit_logistic(&x, &[0, 0, 0, 1, 1, 1], 0.01).unwrap();
        assert!(m.separation_fallback);
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
        assert_eq!(m.predict_proba(&[100.0]), 0.99);
        assert_eq!(m.predict_proba(&[-100.0]), 0.01);
    }

    #[test]
    fn newton_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(150, 2, |_, _| rng.random_range(-2.0..2.0));
        let a: Vec<u8> = (0..150)
            .map(|i| {
                let p = sigmoid(0.3 + 1.2 * x[(i, 0)] - 0.7 * x[(i, 1)]);
                u8::from(rng.random::<f64>() < p)
            })
            .collect();
        let trace = logistic_objective_trace(&x, &a).unwrap();
        assert!(trace.len() > 2);
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }

    fn alternating(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let a = u8::from((i * 7) % 3 == 0);
                Sample::new(vec![x, (i % 5) as f64], a, x + f64::from(a)).unwrap()
            })
            .collect();
        Dataset::new(samples, Role::SmallUnconfounded).unwrap()
    }

    #[test]
    fn out_of_fold_invariant() {
        let ds = alternating(100);
        for k in [2, 5] {
            let cf = cross_fit(&ds, k, 4, DEFAULT_LAMBDA, DEFAULT_CLIP_EPSILON).unwrap();
            for i in 0..ds.len() {
                let fold = cf.split().fold_of(i);
                assert!(!cf.fold(fold).training.contains(&i));
                assert!(cf
                    .fold(fold)
                    .training
                    .iter()
                    .all(|&j| cf.split().fold_of(j) != fold));
            }
        }
    }

    #[test]
    fn treated_in_single_fold_is_degenerate() {
        let base = alternating(40);
        let assignment = crate::dataset::split(&base, 2, 1).unwrap();
        let samples = base
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let a = u8::from(assignment.fold_of(i) == 0 && i % 2 == 0);
                Sample::new(s.covariates().to_vec(), a, s.outcome()).unwrap()
            })
            .collect();
        let ds = Dataset::new(samples, Role::SmallUnconfounded).unwrap();
        let err = cross_fit_with(
            &ds,
            assignment,
            &Ridge { lambda: 1e-6 },
            &Logistic { clip_epsilon: 0.01 },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::CrossFitDegenerate {
                fold: 0,
                missing: "treated"
            }
        ));
        assert!(err.to_string().contains("smaller number of folds"));
    }

    #[test]
    fn cross_fit_is_deterministic() {
        let ds = alternating(60);
        let a = cross_fit(&ds, 3, 9, 1e-6, 0.01).unwrap();
        let b = cross_fit(&ds, 3, 9, 1e-6, 0.01).unwrap();
        for i in 0..ds.len() {
            let x = ds.samples()[i].covariates();
            assert_eq!(a.predict(i, x), b.predict(i, x));
        }
    }
}
