//! Pixel-level primitives used by the feature extractors.

pub mod cells;
pub mod components;
pub mod gmm;
pub mod hough;
pub mod morphology;

use serde::{Deserialize, Serialize};

pub use cells::{detect_immune_cells, detect_nuclei, CellDetection, ImmuneParams, NucleusParams};
pub use components::{connected_components, Blob};
pub use gmm::{assign_labels, fit_gmm, GmmModel, GmmParams, LabelMap};
pub use hough::{hough_circles, Circle, CircleSet, HoughParams};
pub use morphology::{morphological_gradient, morphology, MorphOp};

use crate::image::{Grid, Mask};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    pub gmm: GmmParams,
    pub nucleus: NucleusParams,
    pub immune: ImmuneParams,
    pub hough: HoughParams,
    pub gland: GlandParams,
}

/// Edge preparation for the differentiation (gland) detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlandParams {
    pub od_threshold: f64,
    /// Closing radius applied to the thresholded mask before the gradient.
    pub closing_radius: usize,
    pub gradient_radius: usize,
}

impl Default for GlandParams {
    fn default() -> Self {
        Self {
            od_threshold: 0.15,
            closing_radius: 1,
            gradient_radius: 1,
        }
    }
}

/// Hough edge input: morphological gradient of the closed, thresholded
/// hematoxylin mask.
pub fn gland_edges(hema: &Grid<f64>, params: &GlandParams) -> Mask {
    let mask = Mask::from_vec(
        hema.width(),
        hema.height(),
        hema.data().iter().map(|&v| v >= params.od_threshold).collect(),
    );
    let closed = if params.closing_radius > 0 {
        morphology::closing(&mask, params.closing_radius)
    } else {
        mask
    };
    morphological_gradient(&closed, params.gradient_radius.max(1))
}

pub fn detect_glands(hema: &Grid<f64>, params: &SegmentParams) -> CircleSet {
    hough_circles(&gland_edges(hema, &params.gland), &params.hough)
}
