//! Core algorithms for transparent, feature-based MSI/MSS classification of
//! H&E pathology tiles.
//!
//! The crate is organized along the analysis workflow:
//!
//! * [`dataset`]: tile manifests, patient-level splitting and tile QC.
//! * [`pretreat`]: white balance, brightness and color deconvolution.
//! * [`segment`]: GMM segmentation, connected components, morphology,
//!   circle Hough transform, nucleus and immune-cell detection.
//! * [`features`]: the 182-feature catalog and the extractors behind it.
//! * [`forest`]: a from-scratch random forest with OOB bookkeeping.
//! * [`explain`]: permutation importance, minimal depth and interactions.
//! * [`stats`]: rank-sum tests and ROC/AUC with bootstrap intervals.
//! * [`synthgen`]: deterministic synthetic tile corpora with planted signal.

pub mod dataset;
pub mod error;
pub mod explain;
pub mod features;
pub mod forest;
pub mod image;
pub mod pretreat;
pub mod seed;
pub mod segment;
pub mod stats;
pub mod synthgen;
pub mod table;

pub use dataset::{DatasetManifest, Label, SplitAssignment, TileRecord};
pub use error::{Error, Result};
pub use features::{FeatureCatalog, FeatureMatrix, FeatureVector};
pub use forest::{Forest, ForestParams, PatientScore, TileScore};
pub use image::{Grid, Mask, TileImage};
