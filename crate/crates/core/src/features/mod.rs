//! The 182-feature catalog and the extractors that fill it.

pub mod catalog;
pub mod cells;
pub mod channel;
pub mod color;
pub mod extract;
pub mod glcm;
pub mod matrix;
pub mod shape;

pub use catalog::{FeatureCatalog, FeatureDescriptor, FeatureGroup};
pub use cells::{cell_features, CellFeatures};
pub use channel::{channel_stats, ChannelStats};
pub use color::{global_color_features, local_color_features};
pub use extract::{extract_tile, ExtractParams, FeatureVector, TileFlags, TileQc};
pub use glcm::{compute_glcm, haralick, Glcm, GlcmParams, HaralickSet};
pub use matrix::{FeatureMatrix, MatrixRow};
pub use shape::{morphometry, Morphometry};

/// Number of blobs; the `immune_num` feature.
pub fn immune_feature(blobs: &[crate::segment::Blob]) -> f64 {
    blobs.len() as f64
}

/// Number of detected circles; the `spot_num` feature.
pub fn differentiation_feature(circles: &crate::segment::CircleSet) -> f64 {
    circles.len() as f64
}
