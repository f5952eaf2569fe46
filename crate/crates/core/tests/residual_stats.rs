use brainage::stats::{
    compute_residuals, f_survival, moment_stats, residual_group_report, Prediction, TrendMode,
};
use brainage::{Condition, IcdFlags};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn planted_shift_is_detected_over_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let noise = Normal::new(0.0, 3.0).unwrap();
    let preds: Vec<Prediction> = (0..400)
        .map(|i| {
            let age: f64 = rng.random_range(20.0..80.0);
            let mut flags = IcdFlags::default();
            for c in Condition::ALL {
                flags.set(c, rng.random_bool(0.3));
            }
            let residual = noise.sample(&mut rng) + if flags.count() >= 2 { -3.0 } else { 0.0 };
            Prediction {
                subject_id: format!("S{i:04}"),
                actual: age,
                predicted: age - residual,
                flags,
            }
        })
        .collect();
    let records = compute_residuals(&preds, 49.0);
    let report = residual_group_report(&records, 49.0, TrendMode::SlopesAndIntercepts);
    let p = report.anova_icd_count_over_threshold.result().unwrap().p;
    assert!(p < 0.01, "p = {p}");
    assert_eq!(report.subjects, 400);
}

#[test]
fn tail_limits() {
    assert_eq!(f_survival(0.0, 1.0, 4.0).unwrap(), 1.0);
    let far = f_survival(1e6, 1.0, 4.0).unwrap();
    assert!(far < 1e-3);
    let mut last = 1.0;
    for f in [0.1, 1.0, 10.0, 100.0, 1e4, 1e6] {
        let p = f_survival(f, 1.0, 4.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn symmetric_values_have_no_skew() {
    assert_eq!(moment_stats(&[1.0, 2.0, 3.0]).unwrap().skewness, 0.0);
}
