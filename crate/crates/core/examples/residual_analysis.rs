//! Residual statistics by ICD-code count on simulated predictions where
//! subjects with two or more conditions look older than they are.

use brainage::stats::{
    compute_residuals, format_p, residual_group_report, Prediction, TrendMode,
    DEFAULT_AGE_THRESHOLD,
};
use brainage::{Condition, IcdFlags};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 4.0).unwrap();
    let preds: Vec<Prediction> = (0..600)
        .map(|i| {
            let age: f64 = rng.random_range(20.0..80.0);
            let p = 0.05 + 0.006 * (age - 20.0);
            let mut flags = IcdFlags::default();
            for c in Condition::ALL {
                flags.set(c, rng.random_bool(p));
            }
            // Older subjects with comorbidities are predicted older still.
            let shift = if flags.count() >= 2 {
                0.15 * (age - 40.0).max(0.0)
            } else {
                0.0
            };
            Prediction {
                subject_id: format!("S{i:04}"),
                actual: age,
                predicted: age + shift + noise.sample(&mut rng),
                flags,
            }
        })
        .collect();

    let residuals = compute_residuals(&preds, DEFAULT_AGE_THRESHOLD);
    let report = residual_group_report(
        &residuals,
        DEFAULT_AGE_THRESHOLD,
        TrendMode::SlopesAndIntercepts,
    );

    for g in &report.by_icd_count {
        if let (Some(mean), Some(median)) = (g.mean, g.median) {
            println!(
                "{:<8} n={:<4} mean {mean:+.2}  median {median:+.2}",
                g.key, g.count
            );
        }
    }
    for (label, a) in [
        ("all ages", &report.anova_icd_count),
        ("over 49", &report.anova_icd_count_over_threshold),
    ] {
        if let Some(r) = a.result() {
            println!(
                "ANOVA by ICD count, {label}: F = {:.3}, p = {}",
                r.f,
                format_p(r.p)
            );
        }
    }
    if let Some(t) = report.trend_icd_count.result() {
        println!(
            "trend lines equal across groups: F = {:.3}, p = {}",
            t.f,
            format_p(t.p)
        );
    }
}
