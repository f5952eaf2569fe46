use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};

/// A data-generating process `y = f(x) + ε` with known `f` and `Var ε`.
pub trait DataSource: Sync {
    type X: Clone + Send + Sync;

    fn truth(&self, x: &Self::X) -> f64;

    fn noise_variance(&self) -> f64;

    /// Draws `n` training pairs.
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Self::X, f64)>;

    /// A fresh noisy observation at `x`.
    fn observe(&self, x: &Self::X, rng: &mut ChaCha8Rng) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceEstimate {
    pub bias_squared: f64,
    pub variance: f64,
    pub irreducible: f64,
    /// `bias² + variance + σ²`.
    pub total: f64,
    /// Mean of `(y - f̂(x))²` over fresh observations, [`FRESH_DRAWS`] per
    /// repeat and point.
    pub empirical_error: f64,
    pub repeats: usize,
    pub eval_points: usize,
}

pub const MIN_REPEATS: usize = 20;

/// Fresh observations drawn at each evaluation point in every repeat.
pub const FRESH_DRAWS: usize = 32;

/// Monte Carlo estimate of `E[(y - f̂(x))²] = bias² + variance + σ²`.
///
/// Repeat `r` draws its training set and its fresh observations from stream
/// `r` of `seed`, so results do not depend on scheduling.
pub fn bias_variance_decompose<S, T, P>(
    source: &S,
    trainer: T,
    train_size: usize,
    eval_points: &[S::X],
    n_repeats: usize,
    seed: u64,
) -> Result<BiasVarianceEstimate>
where
    S: DataSource,
    T: Fn(&[(S::X, f64)]) -> P + Sync,
    P: Fn(&S::X) -> f64,
{
    if n_repeats < MIN_REPEATS {
        return Err(StatsError::TooFewRepeats {
            needed: MIN_REPEATS,
            found: n_repeats,
        });
    }
    if eval_points.is_empty() {
        return Err(StatsError::TooFewPoints {
            needed: 1,
            found: 0,
        });
    }
    let runs: Vec<(Vec<f64>, f64)> = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let train = source.sample(train_size, &mut rng);
            let predictor = trainer(&train);
            let preds: Vec<f64> = eval_points.iter().map(&predictor).collect();
            if preds.iter().any(|p| !p.is_finite()) {
                return Err(StatsError::Divergence { repeat: r });
            }
            let sq_err: f64 = eval_points
                .iter()
                .zip(&preds)
                .map(|(x, p)| {
                    (0..FRESH_DRAWS)
                        .map(|_| (source.observe(x, &mut rng) - p).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / FRESH_DRAWS as f64;
            Ok((preds, sq_err))
        })
        .collect::<Result<_>>()?;

    let (reps, pts) = (n_repeats as f64, eval_points.len() as f64);
    let (mut bias2, mut variance) = (0.0, 0.0);
    for (j, x) in eval_points.iter().enumerate() {
        let mean = runs.iter().map(|(p, _)| p[j]).sum::<f64>() / reps;
        bias2 += (mean - source.truth(x)).powi(2);
        variance += runs.iter().map(|(p, _)| (p[j] - mean).powi(2)).sum::<f64>() / reps;
    }
    let bias_squared = bias2 / pts;
    let variance = variance / pts;
    let irreducible = source.noise_variance();
    Ok(BiasVarianceEstimate {
        bias_squared,
        variance,
        irreducible,
        total: bias_squared + variance + irreducible,
        empirical_error: runs.iter().map(|r| r.1).sum::<f64>() / (reps * pts),
        repeats: n_repeats,
        eval_points: eval_points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    struct Constant {
        c: f64,
        sigma: f64,
    }

    impl DataSource for Constant {
        type X = ();
        fn truth(&self, _: &()) -> f64 {
            self.c
        }
        fn noise_variance(&self) -> f64 {
            self.sigma * self.sigma
        }
        fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<((), f64)> {
            (0..n).map(|_| ((), self.observe(&(), rng))).collect()
        }
        fn observe(&self, _: &(), rng: &mut ChaCha8Rng) -> f64 {
            self.c + Normal::new(0.0, self.sigma).unwrap().sample(rng)
        }
    }

    #[test]
    fn zero_predictor_is_pure_bias() {
        let src = Constant { c: 3.0, sigma: 0.5 };
        let est = bias_variance_decompose(&src, |_| |_: &()| 0.0, 10, &[()], 50, 1).unwrap();
        assert_eq!(est.bias_squared, 9.0);
        assert_eq!(est.variance, 0.0);
        assert_eq!(est.irreducible, 0.25);
        assert_eq!(est.total, 9.25);
    }

    #[test]
    fn rejects_few_repeats_and_nan() {
        let src = Constant { c: 0.0, sigma: 1.0 };
        assert!(bias_variance_decompose(&src, |_| |_: &()| 0.0, 5, &[()], 10, 0).is_err());
        assert!(matches!(
            bias_variance_decompose(&src, |_| |_: &()| f64::NAN, 5, &[()], 20, 0),
            Err(StatsError::Divergence { .. })
        ));
    }
}
