//! Library results against independent scalar-loop reimplementations.

use nalgebra::DMatrix;
use ppate::cate::FnCate;
use ppate::dataset::{split, Dataset, Role, Sample};
use ppate::nuisance::{
    cross_fit_with, fit_linear, fit_logistic, logistic_log_likelihood, FittedOutcome, FittedPropensity,
    OutcomeRegressor, PropensityClassifier,
};
use ppate::ppi::{
    pp_interval, pp_interval_apo, pp_interval_finite_pop, pp_interval_rct, pp_interval_shifted, rectifier,
    MeasureOfFit, Method, Rectifier,
};
use ppate::scores::{score_dataset, ScoreInput, ScoreKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Z975: f64 = 1.959_963_984_540_054;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

// ---------- fixed nuisance learners: known functions, data ignored ----------

#[derive(Debug)]
struct Fixed(fn(&[f64]) -> f64);

impl FittedOutcome for Fixed {
    fn predict(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl FittedPropensity for Fixed {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

struct FixedOutcome(fn(&[f64]) -> f64);

impl OutcomeRegressor for FixedOutcome {
    fn fit(&self, _x: &DMatrix<f64>, _y: &[f64]) -> ppate::Result<Box<dyn FittedOutcome>> {
        Ok(Box::new(Fixed(self.0)))
    }
}

struct FixedPropensity(fn(&[f64]) -> f64);

impl PropensityClassifier for FixedPropensity {
    fn fit(&self, _x: &DMatrix<f64>, _a: &[u8]) -> ppate::Result<Box<dyn FittedPropensity>> {
        Ok(Box::new(Fixed(self.0)))
    }
}

fn mu(x: &[f64]) -> f64 {
    0.3 + 1.1 * x[0]
}

fn pi(x: &[f64]) -> f64 {
    0.35 + 0.2 * x[0]
}

fn tau2(x: &[f64]) -> f64 {
    0.5 - 0.25 * x[0]
}

fn ten_samples() -> Vec<(f64, u8, f64)> {
    vec![
        (0.1, 1, 1.3),
        (-0.4, 0, 0.2),
        (0.9, 1, 2.7),
        (0.0, 0, -0.5),
        (-0.8, 1, 0.4),
        (0.6, 0, 1.1),
        (0.3, 1, 0.9),
        (-0.2, 0, -1.2),
        (0.75, 1, 3.1),
        (-0.55, 0, 0.05),
    ]
}

fn dataset(rows: &[(f64, u8, f64)]) -> Dataset {
    let samples = rows
        .iter()
        .map(|&(x, a, y)| Sample::new(vec![x], a, y).unwrap())
        .collect();
    Dataset::new(samples, Role::SmallUnconfounded).unwrap()
}

#[test]
fn full_pipeline_matches_scalar_loop_on_ten_samples() {
    let rows = ten_samples();
    let d1 = dataset(&rows);
    let nuisance = cross_fit_with(&d1, split(&d1, 2, 3).unwrap(), &FixedOutcome(mu), &FixedPropensity(pi)).unwrap();
    let scores = score_dataset(&d1, ScoreInput::Aipw(&nuisance)).unwrap();
    let tau_d1: Vec<f64> = rows.iter().map(|r| tau2(&[r.0])).collect();
    let r = rectifier(&scores, &tau_d1).unwrap();
    let d2_preds = [0.2, 0.45, 0.61, 0.3, 0.52, 0.48, 0.39];
    let m = MeasureOfFit::from_predictions(&d2_preds);
    let ci = pp_interval(&r, &m, 0.05).unwrap();

    // oracle: expanded AIPW formula, two-pass moments, literal z
    let mut deltas = Vec::new();
    for &(x, a, y) in &rows {
        let p = 0.35 + 0.2 * x;
        let m1 = 0.3 + 1.1 * x;
        let m0 = m1;
        let af = a as f64;
        let score = af * (y - m1) / p - (1.0 - af) * (y - m0) / (1.0 - p) + m1 - m0;
        deltas.push(score - (0.5 - 0.25 * x));
    }
    let mut s = 0.0;
    for d in &deltas {
        s += d;
    }
    let dh = s / 10.0;
    let mut v = 0.0;
    for d in &deltas {
        v += (d - dh) * (d - dh);
    }
    let vd = v / 10.0;
    let mut t = 0.0;
    for p in &d2_preds {
        t += p;
    }
    let th = t / 7.0;
    let mut vt = 0.0;
    for p in &d2_preds {
        vt += (p - th) * (p - th);
    }
    let vt = vt / 7.0;
    let est = dh + th;
    let half = Z975 * (vd / 10.0 + vt / 7.0).sqrt();

    for (got, want) in [
        (ci.estimate, est),
        (ci.sigma2_delta, vd),
        (ci.sigma2_tau2, vt),
        (ci.lower, est - half),
        (ci.upper, est + half),
    ] {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn rct_pipeline_matches_scalar_loop() {
    let rows = ten_samples();
    let props: Vec<f64> = rows.iter().map(|r| pi(&[r.0])).collect();
    let d1 = dataset(&rows).with_known_propensity(props.clone()).unwrap();
    let m = MeasureOfFit::from_predictions(&[0.1, 0.2, 0.4]);
    let ci = pp_interval_rct(&d1, &FnCate(tau2), &m, 0.05).unwrap();
    assert_eq!(ci.method, Method::PpIpw);

    let mut deltas = Vec::new();
    for (&(x, a, y), p) in rows.iter().zip(&props) {
        let s = if a == 1 { y / p } else { -y / (1.0 - p) };
        deltas.push(s - (0.5 - 0.25 * x));
    }
    let dh = deltas.iter().sum::<f64>() / 10.0;
    let vd = deltas.iter().map(|d| (d - dh).powi(2)).sum::<f64>() / 10.0;
    let th = 0.7 / 3.0;
    let vt = [0.1f64, 0.2, 0.4].iter().map(|p| (p - th).powi(2)).sum::<f64>() / 3.0;
    let half = Z975 * (vd / 10.0 + vt / 3.0).sqrt();
    assert!((ci.estimate - (dh + th)).abs() < 1e-12);
    assert!((ci.half_width() - half).abs() < 1e-12);
}

// ---------- ridge against normal equations ----------

/// Solves A v = b by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x
}

/// [intercept, w...] minimizing Σ(y − b − ⟨w,x⟩)² + λ‖w‖².
fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let p = x[0].len() + 1;
    let row = |i: usize| -> Vec<f64> {
        let mut r = vec![1.0];
        r.extend_from_slice(&x[i]);
        r
    };
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..x.len() {
        let r = row(i);
        for j in 0..p {
            b[j] += r[j] * y[i];
            for k in 0..p {
                a[j][k] += r[j] * r[k];
            }
        }
    }
    for (j, row) in a.iter_mut().enumerate().skip(1) {
        row[j] += lambda;
    }
    gauss_solve(a, b)
}

#[test]
fn ridge_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..40 {
        let n = rng.random_range(8..=50);
        let q = rng.random_range(1..=4);
        let lambda = [0.0, 1e-6, 0.1, 3.0][case % 4];
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..q).map(|j| rng.random_range(-2.0..2.0) * (j + 1) as f64).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.5 - r.iter().sum::<f64>() + rng.random_range(-1.0..1.0))
            .collect();
        let xm = DMatrix::from_fn(n, q, |i, j| x[i][j]);
        let fit = fit_linear(&xm, &y, lambda).unwrap();
        let want = ridge_oracle(&x, &y, lambda);
        assert!(close(fit.intercept, want[0], 1e-10), "case {case}");
        for j in 0..q {
            assert!(close(fit.weights[j], want[j + 1], 1e-10), "case {case} coef {j}");
        }
    }
}

// ---------- logistic optimality ----------

fn logistic_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<u8>) {
    let n = rng.random_range(60..200);
    let q = rng.random_range(1..=3);
    let x = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.5..1.5));
    let beta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.5..1.5)).collect();
    let a = (0..n)
        .map(|i| {
            let eta = 0.2 + (0..q).map(|j| beta[j] * x[(i, j)]).sum::<f64>();
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    (x, a)
}

fn mean_loglik_gradient(x: &DMatrix<f64>, a: &[u8], b0: f64, w: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut g = vec![0.0; w.len() + 1];
    for i in 0..n {
        let mut eta = b0;
        for j in 0..w.len() {
            eta += w[j] * x[(i, j)];
        }
        let r = a[i] as f64 - 1.0 / (1.0 + (-eta).exp());
        g[0] += r;
        for j in 0..w.len() {
            g[j + 1] += r * x[(i, j)];
        }
    }
    g.iter().map(|v| v / n as f64).collect()
}

#[test]
fn logistic_gradient_vanishes_at_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..20 {
        let (x, a) = logistic_instance(&mut rng);
        let fit = fit_logistic(&x, &a, 0.01).unwrap();
        assert!(!fit.separation_fallback, "case {case}");
        let g = mean_loglik_gradient(&x, &a, fit.intercept, &fit.weights);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "case {case}: gradient norm {norm}");
    }
}

#[test]
fn logistic_fit_beats_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (x, a) = logistic_instance(&mut rng);
    let fit = fit_logistic(&x, &a, 0.01).unwrap();
    let best = logistic_log_likelihood(&x, &a, fit.intercept, &fit.weights);
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        let b0 = fit.intercept + scale * rng.random_range(-1.0..1.0);
        let w: Vec<f64> = fit.weights.iter().map(|w| w + scale * rng.random_range(-1.0..1.0)).collect();
        assert!(logistic_log_likelihood(&x, &a, b0, &w) <= best + 1e-12);
    }
}

// ---------- variants ----------

#[test]
fn finite_population_hand_example() {
    let deltas: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -0.5 } else { 0.5 }).collect();
    let r = Rectifier::from_deltas(deltas, ScoreKind::Aipw);
    let m = MeasureOfFit::from_predictions(&[1.0; 20]);
    let ci = pp_interval_finite_pop(&r, &m, &vec![(-1.0, 1.0); 100], 0.05).unwrap();
    let want = (100.0 * 4.0 / (2.0 * 100.0 * 100.0) * 40f64.ln()).sqrt();
    assert!((ci.half_width() - want).abs() < 1e-12);
    assert!((ci.half_width() - 0.27162).abs() < 1e-5);
    assert_eq!(ci.method, Method::PpFinitePop);
}

#[test]
fn shifted_weights_piecewise() {
    let scores = ppate::scores::ScoreVector {
        values: vec![1.0, 2.0, 3.0, 4.0],
        kind: ScoreKind::Aipw,
    };
    let tau_d1 = [0.5, 0.5, 1.0, 1.0];
    let w1 = [2.0, 0.0, 1.0, 0.5];
    let tau_d2 = [1.0, 3.0];
    let w2 = [0.5, 1.5];
    let ci = pp_interval_shifted(&scores, &tau_d1, &tau_d2, &w1, &w2, 0.05).unwrap();
    // deltas: 1.0, 0.0, 2.0, 1.5 -> mean 1.125, var (0.015625+1.265625+0.765625+0.140625)/4
    // weighted predictions: 0.5, 4.5 -> mean 2.5, var 4
    let vd = (0.015625 + 1.265625 + 0.765625 + 0.140625) / 4.0;
    assert!((ci.estimate - 3.625).abs() < 1e-15);
    assert!((ci.sigma2_delta - vd).abs() < 1e-15);
    assert!((ci.sigma2_tau2 - 4.0).abs() < 1e-15);
    assert!((ci.half_width() - Z975 * (vd / 4.0 + 2.0).sqrt()).abs() < 1e-12);
}

#[test]
fn apo_four_samples() {
    let f1 = [1.0, 2.0, 4.0, 5.0];
    let f2_d1 = [0.5, 2.5, 3.0, 5.0];
    let f2_d2 = [2.0, 4.0];
    let ci = pp_interval_apo(&f1, &f2_d1, &f2_d2, 0.05).unwrap();
    // deltas 0.5, -0.5, 1.0, 0.0: mean 0.25, var (0.0625+0.5625+0.5625+0.0625)/4 = 0.3125
    assert!((ci.estimate - 3.25).abs() < 1e-15);
    assert!((ci.sigma2_delta - 0.3125).abs() < 1e-15);
    assert!((ci.sigma2_tau2 - 1.0).abs() < 1e-15);
    assert!((ci.half_width() - Z975 * (0.3125 / 4.0 + 0.5f64).sqrt()).abs() < 1e-12);

    let same = pp_interval_apo(&f2_d1, &f2_d1, &f2_d2, 0.05).unwrap();
    assert_eq!(same.estimate, 3.0);
    let flat = pp_interval_apo(&[2.0; 3], &[1.0; 3], &[1.0; 5], 0.05).unwrap();
    assert_eq!((flat.estimate, flat.width), (2.0, 0.0));
}
