//! Saves a model to the binary container, inspects the header and checks
//! that the reloaded model predicts identically.

use brainage::cnn::{build_model, predict_ages, CnnConfig};
use brainage::dataio::{inspect_container, load_model, save_model, storage_rounded};
use brainage::{Modality, Raster};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = CnnConfig {
        seed: 3,
        ..CnnConfig::with_side(48)
    };
    let model = build_model(&config, Modality::FlairLv)?;
    let path = std::env::temp_dir().join("brainage_example.barb");
    save_model(&model, &path)?;

    let header = inspect_container(&path)?;
    println!("{} ({} tensors)", header.modality, header.tensors.len());
    for t in &header.tensors {
        println!("  {:<28} {:?} {}", t.name, t.shape, t.storage);
    }

    let probes: Vec<Raster> = (0..8)
        .map(|k| {
            Raster::new(
                48,
                48,
                (0..48 * 48)
                    .map(|i| ((i * (k + 3)) % 97) as f64 / 97.0)
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let reloaded = load_model(&path)?;
    let before = predict_ages(&storage_rounded(&model), &probes)?;
    let after = predict_ages(&reloaded, &probes)?;
    let identical = before
        .iter()
        .zip(&after)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("predictions identical after reload: {identical}");
    Ok(())
}
