//! Discriminative screener: TF-IDF features, wrapper feature selection,
//! soft-label logistic regression and potential scoring.

pub mod classifier;
pub mod features;
pub mod potential;
pub mod selection;

pub use classifier::{predict, train, ClassifierModel, TrainConfig, TrainError};
pub use features::{featurize, FeatureError, FeatureSpace, SparseVector};
pub use potential::{potential, rank_queue, PotentialScore};
pub use selection::{select_features, InitialSubset, SelectionConfig, SelectionError, SelectionResult};
