pub mod cnn;
pub mod dataio;
pub mod ensemble;
pub mod experiment;
pub mod linalg;
pub mod modality;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod stats;
pub mod subject;
pub mod synth;
pub mod tensor;

pub use modality::Modality;
pub use raster::{LabeledImage, Raster};
pub use subject::{Condition, IcdFlags, Sex, SubjectRecord};
