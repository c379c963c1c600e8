//! Drawing functions from the composite-kernel Gaussian process used by the
//! synthetic generator, and checking an empirical covariance.

use ppate::synthgen::{kernel, GpSampler, KernelConfig, Point};

fn main() -> ppate::Result<()> {
    let cfg = KernelConfig {
        alpha_x: 1.0,
        alpha_u: 0.5,
        l_x: 0.7,
        l_u: 0.7,
    };
    let grid: Vec<Point> = (0..41)
        .map(|i| Point::new(vec![-1.0 + i as f64 * 0.05], 0.3))
        .collect();
    let sampler = GpSampler::new(&grid, &cfg)?;

    let draw = sampler.draw(42);
    for (p, v) in grid.iter().zip(&draw).step_by(5) {
        println!("f({:+.2}, {:+.2}) = {:+.4}", p.x[0], p.u, v);
    }

    let (i, j) = (10, 30);
    let draws = 4000;
    let mut acc = 0.0;
    for seed in 0..draws {
        let f = sampler.draw(seed);
        acc += f[i] * f[j];
    }
    println!(
        "empirical cov {:.4} vs kernel {:.4}",
        acc / draws as f64,
        kernel(&grid[i], &grid[j], &cfg)
    );
    Ok(())
}
