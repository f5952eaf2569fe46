//! Layer-by-layer summary of the reference network at its 512-pixel input.

use brainage::cnn::{build_model, count_parameters, CnnConfig};
use brainage::Modality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(512);
    let config = CnnConfig::with_side(side);

    println!("{:<20} {:<18} {:>10}", "Layer", "Output shape", "Param #");
    for layer in config.summary()? {
        let shape = layer
            .output_shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        println!(
            "{:<20} {:<18} {:>10}",
            layer.kind,
            format!("({shape})"),
            layer.parameters()
        );
    }

    let counts = count_parameters(&build_model(&config, Modality::FlairAc)?);
    println!();
    println!("Total params: {}", counts.total);
    println!("Trainable params: {}", counts.trainable);
    println!("Non-trainable params: {}", counts.non_trainable);
    Ok(())
}
