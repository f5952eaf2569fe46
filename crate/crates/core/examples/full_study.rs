//! The whole workflow through the pipeline layer: synthesize, train the four
//! modality CNNs, then fit, cross-validate and analyse.
//!
//! cargo run --release --example full_study -- [subjects] [epochs] [out_dir]

use brainage::cnn::CnnConfig;
use brainage::pipeline::{run_analyze, run_synth, run_train, AnalyzeOptions, TrainOptions};
use brainage::synth::{ConditionOffsets, SynthConfig};
use brainage::Modality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let subjects = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/full_study".into()));

    let synth = SynthConfig {
        subjects,
        offsets: ConditionOffsets::ZERO,
        multi_flag_offset: 4.0,
        seed: 7,
        ..SynthConfig::default()
    };
    let cohort_dir = out.join("cohort");
    let models_dir = out.join("models");
    run_synth(&synth, &cohort_dir)?;

    for (i, m) in Modality::ALL.into_iter().enumerate() {
        let mut opts = TrainOptions::new(&cohort_dir, m, &models_dir);
        opts.cnn = CnnConfig {
            epochs,
            seed: i as u64,
            ..CnnConfig::with_side(synth.image_side)
        };
        let t = run_train(&opts)?;
        println!(
            "{m}: final train MSE {:.2}",
            t.model.history.last().unwrap()
        );
    }

    let result = run_analyze(&AnalyzeOptions::new(
        &cohort_dir,
        &models_dir,
        out.join("report"),
    ))?;
    if let Some(m) = result.report.ensemble_test.result() {
        println!(
            "third-order ensemble, test: R2 {:.3}  MAE {:.2}  MSE {:.2}",
            m.r2, m.mae, m.mse
        );
    }
    println!("report in {}", out.join("report").display());
    Ok(())
}
