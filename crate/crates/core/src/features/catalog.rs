use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog_v1.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    GlobalColor,
    LocalColor,
    Immune,
    Differentiation,
    CellMorphometry,
    CellOD,
    HaralickTexture,
}

impl FeatureGroup {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "GlobalColor" => Self::GlobalColor,
            "LocalColor" => Self::LocalColor,
            "Immune" => Self::Immune,
            "Differentiation" => Self::Differentiation,
            "CellMorphometry" => Self::CellMorphometry,
            "CellOD" => Self::CellOD,
            "HaralickTexture" => Self::HaralickTexture,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub group: FeatureGroup,
    pub channel: String,
    pub statistic: String,
}

/// Ordered feature registry loaded from a tab-separated data file with the
/// columns `name, group, channel, statistic`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    features: Vec<FeatureDescriptor>,
    index: HashMap<String, usize>,
}

impl FeatureCatalog {
    pub fn parse(text: &str) -> Result<Self> {
        let mut features = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("catalog rows need 4 tab-separated columns, got {}", cols.len()),
                });
            }
            let group = FeatureGroup::parse(cols[1]).ok_or_else(|| Error::Parse {
                row: i + 1,
                message: format!("unknown feature group {:?}", cols[1]),
            })?;
            let name = cols[0].to_string();
            if index.insert(name.clone(), features.len()).is_some() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("duplicate feature name {name}"),
                });
            }
            features.push(FeatureDescriptor {
                name,
                group,
                channel: cols[2].to_string(),
                statistic: cols[3].to_string(),
            });
        }
        if features.is_empty() {
            return Err(Error::Parse {
                row: 0,
                message: "catalog is empty".into(),
            });
        }
        Ok(Self { features, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The bundled 182-feature catalog.
    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// SHA-256 over the ordered names; identifies a catalog in model files.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        Self::default_catalog()
    }
}
