//! Finite-sample interval: when every rectifier term is known to lie in a
//! bounded range, Hoeffding's inequality replaces the normal approximation
//! on the small-dataset side.

use ppate::ppi::{pp_interval, pp_interval_finite_pop, MeasureOfFit, Rectifier};
use ppate::scores::ScoreKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ppate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let deltas: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let predictions: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..=2.0)).collect();

    let r = Rectifier::from_deltas(deltas, ScoreKind::Aipw);
    let m = MeasureOfFit::from_predictions(&predictions);
    let bounds = vec![(-1.0, 1.0); r.n];

    let hoeffding = pp_interval_finite_pop(&r, &m, &bounds, 0.05)?;
    let normal = pp_interval(&r, &m, 0.05)?;
    println!("Hoeffding: {:.4} ± {:.4}", hoeffding.estimate, hoeffding.half_width());
    println!("normal:    {:.4} ± {:.4}", normal.estimate, normal.half_width());
    Ok(())
}
