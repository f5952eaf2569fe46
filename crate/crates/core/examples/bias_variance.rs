//! Monte Carlo bias-variance decomposition: the sample-mean sanity case and
//! the stacking families.

use brainage::ensemble::{BasePredictions, EnsembleSpec};
use brainage::experiment::{ensemble_trainer, sample_mean_trainer, ConstantSource, StackingSource};
use brainage::stats::bias_variance_decompose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let constant = ConstantSource {
        value: 50.0,
        sigma: 1.0,
    };
    let e = bias_variance_decompose(&constant, sample_mean_trainer, 25, &[()], 500, 1)?;
    println!(
        "sample mean, n=25: bias2 {:.5}  variance {:.5} (expect {:.5})  total {:.4}  direct {:.4}",
        e.bias_squared,
        e.variance,
        1.0 / 25.0,
        e.total,
        e.empirical_error
    );

    let source = StackingSource::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let points: Vec<BasePredictions> = (0..200).map(|_| source.draw_x(&mut rng)).collect();
    println!(
        "\n{:<20} {:>8} {:>9} {:>8} {:>8}",
        "model", "bias2", "variance", "total", "direct"
    );
    for spec in EnsembleSpec::default_candidates() {
        let e = bias_variance_decompose(&source, ensemble_trainer(spec), 100, &points, 200, 2)?;
        println!(
            "{:<20} {:>8.3} {:>9.3} {:>8.3} {:>8.3}",
            spec.title(),
            e.bias_squared,
            e.variance,
            e.total,
            e.empirical_error
        );
    }
    Ok(())
}
