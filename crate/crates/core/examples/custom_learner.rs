//! Plugging a different outcome model into cross-fitting. Here a k-nearest
//! neighbour regressor replaces ridge regression for the AIPW nuisances.

use nalgebra::DMatrix;
use ppate::dataset::split;
use ppate::nuisance::{cross_fit_with, FittedOutcome, Logistic, OutcomeRegressor};
use ppate::scores::{score_dataset, ScoreInput};
use ppate::synthgen::{generate, DgpConfig, Scenario};

#[derive(Debug)]
struct Knn {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    k: usize,
}

impl FittedOutcome for Knn {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut d: Vec<(f64, f64)> = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(xi, &y)| {
                let dist: f64 = xi.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (dist, y)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = self.k.min(d.len());
        d[..k].iter().map(|p| p.1).sum::<f64>() / k as f64
    }
}

struct KnnLearner(usize);

impl OutcomeRegressor for KnnLearner {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> ppate::Result<Box<dyn FittedOutcome>> {
        let xs = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(Box::new(Knn {
            xs,
            ys: y.to_vec(),
            k: self.0,
        }))
    }
}

fn main() -> ppate::Result<()> {
    let data = generate(&DgpConfig::scenario(Scenario::Little, 4))?;
    let folds = split(&data.d1, 2, 0)?;
    let nuisance = cross_fit_with(&data.d1, folds, &KnnLearner(15), &Logistic { clip_epsilon: 0.01 })?;
    let scores = score_dataset(&data.d1, ScoreInput::Aipw(&nuisance))?;
    let se = (scores.population_variance() / scores.len() as f64).sqrt();
    println!("AIPW with kNN outcomes: {:.4} (se {:.4})", scores.mean(), se);
    println!("oracle ATE:             {:.4}", data.oracle_ate);
    Ok(())
}
