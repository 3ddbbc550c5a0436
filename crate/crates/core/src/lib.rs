//! Episodic few-shot image classification with local-descriptor prototypes.
//!
//! Images become grids of local descriptors ([`extractor`]). Each class is
//! represented by the cell-wise mean of its support maps, optionally fused
//! over several input scales ([`augment`]). A query is scored against each
//! prototype by summing, over its descriptors, the top-k scaled cosines to
//! the prototype's descriptors, with every query position weighted by how
//! strongly it co-occurs in the prototype ([`head`]). [`episodes`] samples
//! N-way K-shot tasks and aggregates accuracy with 95% intervals.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod episodes;
pub mod error;
pub mod extractor;
pub mod features_io;
pub mod head;
pub mod heatmap;
pub mod image;
pub mod report;
pub mod tensor;

pub use augment::{augmented_prototype, pool_to_grid, Resolution, ScaleSet};
pub use dataset::{generate_toy_dataset, Dataset, Item};
pub use episodes::{
    ablation_run, evaluate, sample_episode, Episode, EvalReport, EvalSettings, Execution,
};
pub use error::{Error, Result};
pub use extractor::{extract, Extractor, ExtractorConfig};
pub use features_io::{load_features, save_features};
pub use head::{
    classify, compute_prototype, fit_tau, rectify_weights, similarity, tau_gradient, HeadConfig,
    Prototype, RectifyWeights,
};
pub use heatmap::render_weight_heatmap;
pub use image::{resize_image, Image};
pub use tensor::{cosine, cosine_matrix, l2_normalize, softmax, top_k_sum, FeatureMap, ProbVector};
