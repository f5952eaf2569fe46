//! The per-modality age-regression CNN.
//!
//! Layer stack (defaults in parentheses):
//!
//! ```text
//! 3 × [conv k×k (16, 32, 64) → batchnorm → relu → maxpool 2×2]
//! flatten → dense(16) → batchnorm → relu → dropout(0.5)
//!         → dense(4) → relu → dense(1, linear)
//! ```
//!
//! Convolutions are valid/stride 1 and pooling drops odd remainders, so a
//! 512-pixel input yields the 510→255→253→126→124→62 chain and a flattened
//! width of 246,016.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modality::Modality;
use crate::raster::{LabeledImage, Raster};
use crate::tensor::{
    reverse_gradients, ActivationKind, LayerSpec, Network, OptimizerState, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input side {input_side} is too small: layer {layer} ({kind}) {detail}")]
    ShapeUnderflow {
        input_side: usize,
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training needs at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("image {index} has age {age}; ages must be finite and positive")]
    InvalidAge { index: usize, age: f64 },
    #[error("image is {width}×{height} but the model expects {side}×{side}")]
    SizeMismatch {
        width: usize,
        height: usize,
        side: usize,
    },
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CnnError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub input_side: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_side: usize,
    pub dense_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Include the batch-normalization layers (the reference stack does).
    pub batchnorm: bool,
    pub batchnorm_epsilon: f64,
    pub batchnorm_momentum: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_side: 512,
            conv_filters: vec![16, 32, 64],
            kernel_side: 3,
            dense_widths: vec![16, 4, 1],
            dropout_rate: 0.5,
            batch_size: 20,
            epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
            batchnorm: true,
            batchnorm_epsilon: 1e-5,
            batchnorm_momentum: 0.99,
        }
    }
}

impl CnnConfig {
    pub fn with_side(input_side: usize) -> Self {
        Self {
            input_side,
            ..Self::default()
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let bn = LayerSpec::Batchnorm {
            epsilon: self.batchnorm_epsilon,
            momentum: self.batchnorm_momentum,
        };
        let relu = LayerSpec::Activation {
            function: ActivationKind::Relu,
        };
        let mut specs = Vec::new();
        for &filters in &self.conv_filters {
            specs.push(LayerSpec::Conv2d {
                filters,
                kernel_side: self.kernel_side,
            });
            if self.batchnorm {
                specs.push(bn.clone());
            }
            specs.push(relu.clone());
            specs.push(LayerSpec::Maxpool2);
        }
        specs.push(LayerSpec::Flatten);
        let last = self.dense_widths.len().saturating_sub(1);
        for (i, &units) in self.dense_widths.iter().enumerate() {
            specs.push(LayerSpec::Dense { units });
            if i == last {
                break;
            }
            if i == 0 {
                if self.batchnorm {
                    specs.push(bn.clone());
                }
                specs.push(relu.clone());
                specs.push(LayerSpec::Dropout {
                    rate: self.dropout_rate,
                });
            } else {
                specs.push(relu.clone());
            }
        }
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_side == 0 {
            return Err(CnnError::Config("kernel_side must be at least 1".into()));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(CnnError::Config(
                "conv_filters must be non-empty and positive".into(),
            ));
        }
        if self.dense_widths.last() != Some(&1) || self.dense_widths.contains(&0) {
            return Err(CnnError::Config(
                "dense_widths must be positive and end with 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CnnError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(CnnError::Config(
                "batch_size must be at least 2 for batch normalization".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(CnnError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Per-layer `(kind, per-sample output shape, parameter count)` rows,
    /// failing with the first layer whose output would be empty.
    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        self.validate()?;
        let mut shape = vec![self.input_side, self.input_side, 1];
        let mut rows = Vec::new();
        for (i, spec) in self.layer_specs().into_iter().enumerate() {
            let out = spec
                .output_shape(&shape)
                .map_err(|e| CnnError::ShapeUnderflow {
                    input_side: self.input_side,
                    layer: i,
                    kind: spec.name(),
                    detail: e.to_string(),
                })?;
            if out.contains(&0) {
                return Err(CnnError::ShapeUnderflow {
                    input_side: self.input_side,
                    layer: i,
                    kind: spec.name(),
                    detail: format!("produces an empty {out:?} map"),
                });
            }
            let (trainable, frozen) = spec.parameter_counts(&shape)?;
            rows.push(LayerSummary {
                kind: spec.name(),
                output_shape: out.clone(),
                trainable,
                non_trainable: frozen,
            });
            shape = out;
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl LayerSummary {
    pub fn parameters(&self) -> usize {
        self.trainable + self.non_trainable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// A per-modality network plus the target scaling learned from its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub modality: Modality,
    pub network: Network,
    /// Mean training loss per epoch, in years².
    pub history: Vec<f64>,
    /// The network regresses `(age - target_mean) / target_scale`.
    pub target_mean: f64,
    pub target_scale: f64,
}

pub fn build_model(config: &CnnConfig, modality: Modality) -> Result<CnnModel> {
    config.summary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network = Network::new(
        &[config.input_side, config.input_side, 1],
        config.layer_specs(),
        &mut rng,
    )?;
    Ok(CnnModel {
        config: config.clone(),
        modality,
        network,
        history: Vec::new(),
        target_mean: 0.0,
        target_scale: 1.0,
    })
}

pub fn count_parameters(model: &CnnModel) -> ParameterCounts {
    let (total, trainable, non_trainable) = model.network.parameter_counts();
    ParameterCounts {
        total,
        trainable,
        non_trainable,
    }
}

/// Every image followed by its left-right mirror, same label.
pub fn mirror_augment(dataset: &[LabeledImage]) -> Vec<LabeledImage> {
    dataset
        .iter()
        .flat_map(|item| {
            [
                item.clone(),
                LabeledImage {
                    image: item.image.mirrored(),
                    age: item.age,
                },
            ]
        })
        .collect()
}

fn batch_tensor(side: usize, images: &[&Raster]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if !img.is_square(side) {
            return Err(CnnError::SizeMismatch {
                width: img.width(),
                height: img.height(),
                side,
            });
        }
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::new(vec![images.len(), side, side, 1], data)?)
}

/// Minimizes mean-squared error on age with Adam, using the training
/// hyper-parameters in `model.config`.
///
/// Shuffling and dropout draw from two independent streams of the config
/// seed, so `(seed, data, config)` fixes the resulting parameters exactly.
/// A trailing batch of one image is skipped.
pub fn train_cnn(mut model: CnnModel, train_set: &[LabeledImage]) -> Result<CnnModel> {
    let config = model.config.clone();
    config.validate()?;
    if train_set.is_empty() {
        return Err(CnnError::EmptyTrainingSet);
    }
    if train_set.len() < 2 {
        return Err(CnnError::TooFewImages(train_set.len()));
    }
    let side = config.input_side;
    for (index, item) in train_set.iter().enumerate() {
        if !item.age.is_finite() || item.age <= 0.0 {
            return Err(CnnError::InvalidAge {
                index,
                age: item.age,
            });
        }
        if !item.image.is_square(side) {
            return Err(CnnError::SizeMismatch {
                width: item.image.width(),
                height: item.image.height(),
                side,
            });
        }
    }

    let n = train_set.len() as f64;
    let mean = train_set.iter().map(|s| s.age).sum::<f64>() / n;
    let var = train_set
        .iter()
        .map(|s| (s.age - mean).powi(2))
        .sum::<f64>()
        / n;
    model.target_mean = mean;
    model.target_scale = var.sqrt().max(1.0);
    let scale2 = model.target_scale * model.target_scale;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut optimizer = OptimizerState::with_learning_rate(config.learning_rate);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<&Raster> = chunk.iter().map(|&i| &train_set[i].image).collect();
            let batch = batch_tensor(side, &images)?;
            let targets: Vec<f64> = chunk
                .iter()
                .map(|&i| (train_set[i].age - model.target_mean) / model.target_scale)
                .collect();
            let loss = reverse_gradients(&mut model.network, &batch, &targets, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(CnnError::Divergence { epoch });
            }
            optimizer.update(&mut model.network.trainable_mut())?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let epoch_loss = loss_sum / seen as f64 * scale2;
        if !epoch_loss.is_finite() {
            return Err(CnnError::Divergence { epoch });
        }
        model.history.push(epoch_loss);
    }
    for t in model.network.trainable_mut() {
        t.clear_grad();
    }
    Ok(model)
}

/// Inference-mode age estimate (years) for one image.
pub fn predict_age(model: &CnnModel, image: &Raster) -> Result<f64> {
    Ok(predict_ages(model, std::slice::from_ref(image))?[0])
}

/// Batched [`predict_age`].
pub fn predict_ages(model: &CnnModel, images: &[Raster]) -> Result<Vec<f64>> {
    let side = model.config.input_side;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let refs: Vec<&Raster> = chunk.iter().collect();
        let batch = batch_tensor(side, &refs)?;
        let y = model.network.infer(&batch)?;
        out.extend(
            y.data()
                .iter()
                .map(|v| v * model.target_scale + model.target_mean),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_match_reference_table() {
        let rows = CnnConfig::default().summary().unwrap();
        let params: Vec<usize> = rows.iter().map(LayerSummary::parameters).collect();
        assert_eq!(
            params,
            vec![
                160, 64, 0, 0, 4640, 128, 0, 0, 18496, 256, 0, 0, 0, 3_936_272, 64, 0, 0, 68, 0, 5
            ]
        );
        let total: usize = params.iter().sum();
        let frozen: usize = rows.iter().map(|r| r.non_trainable).sum();
        assert_eq!((total, frozen), (3_960_153, 256));
    }

    #[test]
    fn underflow_names_the_layer() {
        let err = CnnConfig::with_side(16).summary().unwrap_err();
        match err {
            CnnError::ShapeUnderflow { layer, kind, .. } => {
                assert_eq!((layer, kind), (8, "conv2d"))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(CnnConfig::with_side(22).summary().is_ok());
        // 21 → 19 → 9 → 7 → 3 → 1, and the last pool has nothing to pool
        match CnnConfig::with_side(21).summary().unwrap_err() {
            CnnError::ShapeUnderflow { layer, kind, .. } => {
                assert_eq!((layer, kind), (11, "maxpool2"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = CnnConfig::with_side(32);
        c.batch_size = 1;
        assert!(matches!(c.validate(), Err(CnnError::Config(_))));
        let mut c = CnnConfig::with_side(32);
        c.dense_widths = vec![16, 2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn without_batchnorm_nothing_is_frozen() {
        let config = CnnConfig {
            batchnorm: false,
            ..CnnConfig::with_side(32)
        };
        let model = build_model(&config, Modality::T2Lv).unwrap();
        assert_eq!(count_parameters(&model).non_trainable, 0);
    }

    #[test]
    fn augmentation_doubles_and_keeps_labels() {
        let a = LabeledImage {
            image: Raster::new(2, 1, vec![0.0, 1.0]).unwrap(),
            age: 30.5,
        };
        let b = LabeledImage {
            image: Raster::new(2, 1, vec![0.2, 0.2]).unwrap(),
            age: 61.0,
        };
        let out = mirror_augment(&[a.clone(), b.clone()]);
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], a);
        assert_eq!(out[1].image.pixels(), &[1.0, 0.0]);
        assert_eq!(out[1].age, 30.5);
        assert_eq!(out[2], b);
        assert_eq!(out[3].image, b.image);
    }

    #[test]
    fn prediction_rejects_wrong_size() {
        let model = build_model(&CnnConfig::with_side(24), Modality::FlairAc).unwrap();
        let err = predict_age(&model, &Raster::filled(20, 24, 0.0)).unwrap_err();
        assert!(matches!(err, CnnError::SizeMismatch { .. }));
        let y = predict_age(&model, &Raster::filled(24, 24, 0.0)).unwrap();
        assert!(y.is_finite());
    }
}
