//! Noise models, priors, datasets and the log-likelihood/posterior functions.

pub mod dataset;
pub mod noise;
pub mod posterior;
pub mod prior;

pub use dataset::{
    generate_custom_dataset, generate_dataset, reference_trajectory, split_indices, train_val_split,
    Dataset, GroundTruth,
};
pub use noise::{negll_gaussian, negll_negbin, NoiseKind, NoiseModel};
pub use posterior::{LikelihoodModel, SplitEval, NEGLL_SENTINEL};
pub use prior::{PriorKind, PriorScale, PriorSpec, LOG_DENSITY_SENTINEL};
