//! Trains one small per-modality CNN on a synthetic cohort and reports
//! held-out error.
//!
//! cargo run --release --example train_modality

use brainage::cnn::{build_model, mirror_augment, predict_ages, train_cnn, CnnConfig};
use brainage::dataio::{load_image, load_metadata, split_train_test};
use brainage::stats::regression_metrics;
use brainage::synth::{generate_cohort, SynthConfig};
use brainage::{LabeledImage, Modality};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("brainage_train_modality");
    let side = 32;
    generate_cohort(
        &SynthConfig {
            subjects: 150,
            image_side: side,
            seed: 2,
            ..SynthConfig::default()
        },
        &dir,
    )?;
    let (records, _) = load_metadata(dir.join("metadata.csv"))?;
    let complete: Vec<_> = records.into_iter().filter(|r| r.is_complete()).collect();
    let (train, test) = split_train_test(&complete, 0.8, 0)?;

    let m = Modality::T2Ac;
    let labeled = |recs: &[brainage::SubjectRecord]| -> Result<Vec<LabeledImage>, brainage::dataio::DataError> {
        recs.iter()
            .map(|r| {
                Ok(LabeledImage {
                    image: load_image(r.image(m).unwrap(), side)?,
                    age: r.age_years,
                })
            })
            .collect()
    };
    let train_set = mirror_augment(&labeled(&train)?);
    let test_set = labeled(&test)?;

    let config = CnnConfig {
        epochs: 12,
        seed: 1,
        ..CnnConfig::with_side(side)
    };
    let model = train_cnn(build_model(&config, m)?, &train_set)?;
    for (e, loss) in model.history.iter().enumerate() {
        println!("epoch {:>2}  train MSE {loss:.2}", e + 1);
    }

    let images: Vec<_> = test_set.iter().map(|s| s.image.clone()).collect();
    let actual: Vec<_> = test_set.iter().map(|s| s.age).collect();
    let m = regression_metrics(&actual, &predict_ages(&model, &images)?)?;
    println!(
        "test n={}  R2 {:.3}  MAE {:.2}  MSE {:.2}",
        actual.len(),
        m.r2,
        m.mae,
        m.mse
    );
    Ok(())
}
