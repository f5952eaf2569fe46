//! Known data-generating processes for bias-variance and cross-validation experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{fit_ensemble, predict_ensemble, BasePredictions, EnsembleSpec};
use crate::stats::DataSource;

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("positive sd").sample(rng)
    } else {
        0.0
    }
}

/// `y = value + ε`, `ε ~ N(0, sigma²)`; there are no features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSource {
    pub value: f64,
    pub sigma: f64,
}

impl DataSource for ConstantSource {
    type X = ();

    fn truth(&self, _: &()) -> f64 {
        self.value
    }

    fn noise_variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<((), f64)> {
        (0..n).map(|_| ((), self.observe(&(), rng))).collect()
    }

    fn observe(&self, _: &(), rng: &mut ChaCha8Rng) -> f64 {
        self.value + gauss(rng, self.sigma)
    }
}

/// Predictor that returns the training-sample mean everywhere.
pub fn sample_mean_trainer<X>(train: &[(X, f64)]) -> impl Fn(&X) -> f64 {
    let m = train.iter().map(|t| t.1).sum::<f64>() / train.len().max(1) as f64;
    move |_| m
}

/// Four noisy, individually biased base predictions of a latent age `u`,
/// with a target that is linear in the predictions plus a mild cubic term
/// in their mean:
///
/// `f(x) = Σ wᵢ xᵢ + curvature · ((x̄ - 50) / 10)³`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingSource {
    pub age_min: f64,
    pub age_max: f64,
    pub base_bias: [f64; 4],
    pub base_noise: [f64; 4],
    pub weights: [f64; 4],
    pub curvature: f64,
    pub target_noise: f64,
}

impl Default for StackingSource {
    fn default() -> Self {
        Self {
            age_min: 20.0,
            age_max: 80.0,
            base_bias: [1.5, -2.0, 0.5, -1.0],
            base_noise: [6.0, 8.0, 4.0, 5.0],
            weights: [0.2, 0.1, 0.45, 0.25],
            curvature: 0.15,
            target_noise: 3.0,
        }
    }
}

impl StackingSource {
    pub fn draw_x(&self, rng: &mut ChaCha8Rng) -> BasePredictions {
        let u = rng.random_range(self.age_min..self.age_max);
        std::array::from_fn(|i| u + self.base_bias[i] + gauss(rng, self.base_noise[i]))
    }

    /// Seeded table of `(base predictions, target)` pairs.
    pub fn table(&self, n: usize, seed: u64) -> Vec<(BasePredictions, f64)> {
        self.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl DataSource for StackingSource {
    type X = BasePredictions;

    fn truth(&self, x: &BasePredictions) -> f64 {
        let mean = x.iter().sum::<f64>() / 4.0;
        x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()
            + self.curvature * ((mean - 50.0) / 10.0).powi(3)
    }

    fn noise_variance(&self) -> f64 {
        self.target_noise * self.target_noise
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(BasePredictions, f64)> {
        (0..n)
            .map(|_| {
                let x = self.draw_x(rng);
                let y = self.observe(&x, rng);
                (x, y)
            })
            .collect()
    }

    fn observe(&self, x: &BasePredictions, rng: &mut ChaCha8Rng) -> f64 {
        self.truth(x) + gauss(rng, self.target_noise)
    }
}

/// Trainer that fits an ensemble of the given family. A failed fit predicts
/// NaN, which the decomposition reports as divergence.
pub fn ensemble_trainer(
    spec: EnsembleSpec,
) -> impl Fn(&[(BasePredictions, f64)]) -> Box<dyn Fn(&BasePredictions) -> f64> + Sync {
    move |train| {
        let (x, y): (Vec<BasePredictions>, Vec<f64>) = train.iter().copied().unzip();
        match fit_ensemble(&x, &y, &spec) {
            Ok(model) => {
                Box::new(move |p: &BasePredictions| predict_ensemble(&model, p).unwrap_or(f64::NAN))
            }
            Err(_) => Box::new(|_: &BasePredictions| f64::NAN),
        }
    }
}
