//! Full per-tile chain: pretreat, segment, extract, assemble in catalog order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::catalog::FeatureCatalog;
use super::cells::cell_features;
use super::color::{global_color_features, local_color_features, map_features};
use super::glcm::GlcmParams;
use crate::error::{Error, Result};
use crate::image::TileImage;
use crate::pretreat::{pretreat, PretreatParams, StainBasis};
use crate::seed::{self, salt};
use crate::segment::{assign_labels, detect_glands, detect_immune_cells, detect_nuclei, fit_gmm, gmm::roi_pixels, SegmentParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractParams {
    pub pretreat: PretreatParams,
    pub segment: SegmentParams,
    pub glcm: GlcmParams,
}

/// Imputation and warning flags, written as `flag_*` columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileFlags {
    pub empty_roi: bool,
    pub gmm_failed: bool,
    pub empty_cluster: bool,
    pub no_cells: bool,
    pub no_texture: bool,
    pub pretreat_warning: bool,
}

impl TileFlags {
    pub const NAMES: [&'static str; 6] = [
        "flag_empty_roi",
        "flag_gmm_failed",
        "flag_empty_cluster",
        "flag_no_cells",
        "flag_no_texture",
        "flag_pretreat_warning",
    ];

    pub fn to_array(self) -> [bool; 6] {
        [
            self.empty_roi,
            self.gmm_failed,
            self.empty_cluster,
            self.no_cells,
            self.no_texture,
            self.pretreat_warning,
        ]
    }

    pub fn from_array(a: [bool; 6]) -> Self {
        Self {
            empty_roi: a[0],
            gmm_failed: a[1],
            empty_cluster: a[2],
            no_cells: a[3],
            no_texture: a[4],
            pretreat_warning: a[5],
        }
    }

    pub fn any(self) -> bool {
        self.to_array().iter().any(|&b| b)
    }
}

/// Quality-control measurements that are not catalog features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TileQc {
    /// Fraction of stained (non-background) pixels.
    pub roi_fraction: f64,
    /// Variance of the pretreated grayscale over the whole tile.
    pub gray_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub tile_id: String,
    pub values: Vec<f64>,
    pub flags: TileFlags,
    pub qc: TileQc,
}

/// Runs the whole chain on one tile. The GMM seed depends only on `seed`, so
/// the result is a function of the tile bytes, the parameters and the seed.
pub fn extract_tile(
    tile_id: &str,
    tile: &TileImage,
    catalog: &FeatureCatalog,
    params: &ExtractParams,
    basis: &StainBasis,
    seed: u64,
) -> Result<FeatureVector> {
    let pre = pretreat(tile, &params.pretreat, basis);
    let mut flags = TileFlags {
        pretreat_warning: !pre.warnings.is_empty(),
        ..TileFlags::default()
    };
    let gray = pre.tile.gray();
    let qc = TileQc {
        roi_fraction: pre.roi.fraction(),
        gray_variance: {
            let d = gray.data();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64
        },
    };

    let mut named: Vec<(String, f64)> = Vec::with_capacity(200);
    named.push(("roi_fraction".into(), qc.roi_fraction));
    match global_color_features(&pre.tile, &pre.roi) {
        Some(v) => named.extend(v),
        None => flags.empty_roi = true,
    }
    for (prefix, map) in [("hema", &pre.stains.hematoxylin), ("eosin", &pre.stains.eosin)] {
        if let Some(v) = map_features(prefix, map, &pre.roi) {
            named.extend(v);
        }
    }

    let k = params.segment.gmm.components;
    let pixels = roi_pixels(&pre.tile, &pre.roi);
    let gmm = if pixels.is_empty() {
        None
    } else {
        match fit_gmm(&pixels, &params.segment.gmm, seed::derive(seed, &[salt::GMM])) {
            Ok(m) => Some(m),
            Err(e) => {
                log::debug!("tile {tile_id}: GMM failed: {e}");
                flags.gmm_failed = true;
                None
            }
        }
    };
    if let Some(model) = gmm {
        let labels = assign_labels(&model, &pre.tile, &pre.roi)?;
        let local = local_color_features(&pre.tile, &labels, k);
        flags.empty_cluster = local.empty_cluster;
        named.extend(local.values);
    }

    let immune = detect_immune_cells(&pre.stains.hematoxylin, &gray, &params.segment.immune);
    named.push(("immune_num".into(), super::immune_feature(&immune)));
    let glands = detect_glands(&pre.stains.hematoxylin, &params.segment);
    named.push(("spot_num".into(), super::differentiation_feature(&glands)));

    let cells = detect_nuclei(&pre.stains.hematoxylin, &params.segment.nucleus);
    let cf = cell_features(&cells, &pre.stains, &params.glcm);
    flags.no_cells = cf.no_cells;
    flags.no_texture = cf.no_texture;
    named.extend(cf.values);

    let values = assemble(catalog, named)?;
    Ok(FeatureVector {
        tile_id: tile_id.to_string(),
        values,
        flags,
        qc,
    })
}

/// Orders computed values by the catalog. Names the extractors know but did
/// not produce for this tile are imputed as 0; names no extractor knows are
/// an error.
fn assemble(catalog: &FeatureCatalog, named: Vec<(String, f64)>) -> Result<Vec<f64>> {
    let supported = FeatureCatalog::default_catalog();
    let map: HashMap<String, f64> = named.into_iter().collect();
    catalog
        .names()
        .map(|name| match map.get(name) {
            Some(&v) if v.is_finite() => Ok(v),
            Some(&v) => Err(Error::Numerical(format!("feature {name} is {v}"))),
            None if supported.position(name).is_some() => Ok(0.0),
            None => Err(Error::UnknownFeature(name.to_string())),
        })
        .collect()
}
