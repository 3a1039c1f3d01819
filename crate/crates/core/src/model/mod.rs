//! Volume-to-temperature regressors: random forest and gradient boosting
//! over CART trees, plus versioned JSON persistence.

mod dataset;
mod ensemble;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::volume::{gaussian_blur, BlurKernel};

pub use dataset::{augment, Sample, TrainingSet};
pub use ensemble::{
    fit_gradient_boosting, fit_gradient_boosting_with_history, fit_random_forest, tree_seed, BoostedModel,
    ForestModel, GBParams, RFParams,
};
pub use tree::{fit_tree, Columns, MaxFeatures, Node, TreeParams};

pub const MODEL_FORMAT: &str = "voxtherm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature arity mismatch: model expects {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("feature vector is empty")]
    EmptyFeatures,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("unsupported model version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for ModelError {
    fn from(e: csv::Error) -> Self {
        ModelError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Gbt,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random-forest" => Ok(ModelKind::Rf),
            "gbt" | "gb" | "gradient-boosting" => Ok(ModelKind::Gbt),
            other => Err(format!("unknown model kind {other:?} (rf|gbt)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ensemble {
    Forest(ForestModel),
    Boosted(BoostedModel),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub training_cities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_cell_size_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_radius: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub meta: ModelMeta,
    pub ensemble: Ensemble,
}

impl Model {
    pub fn new(ensemble: Ensemble, meta: ModelMeta) -> Self {
        Self { meta, ensemble }
    }

    pub fn kind(&self) -> ModelKind {
        match self.ensemble {
            Ensemble::Forest(_) => ModelKind::Rf,
            Ensemble::Boosted(_) => ModelKind::Gbt,
        }
    }

    pub fn feature_arity(&self) -> usize {
        match &self.ensemble {
            Ensemble::Forest(m) => m.feature_arity,
            Ensemble::Boosted(m) => m.feature_arity,
        }
    }

    pub fn n_trees(&self) -> usize {
        match &self.ensemble {
            Ensemble::Forest(m) => m.trees.len(),
            Ensemble::Boosted(m) => m.trees.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        let expected = self.feature_arity();
        if x.len() != expected {
            return Err(ModelError::ArityMismatch { expected, got: x.len() });
        }
        Ok(match &self.ensemble {
            Ensemble::Forest(m) => m.predict_unchecked(x),
            Ensemble::Boosted(m) => m.predict_unchecked(x),
        })
    }

    pub fn to_json(&self) -> String {
        let (params, base, trees) = match &self.ensemble {
            Ensemble::Forest(m) => (serde_json::to_value(m.params), None, &m.trees),
            Ensemble::Boosted(m) => (serde_json::to_value(m.params), Some(m.base), &m.trees),
        };
        let doc = Document {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            kind: self.kind(),
            feature_arity: self.feature_arity(),
            meta: self.meta.clone(),
            params: params.expect("params serialize"),
            base,
            trees: trees.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &[u8]) -> Result<Self, ModelError> {
        // Peek at the header first so a newer version gets a clear error.
        let header: Header = serde_json::from_slice(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("unexpected format tag {:?}", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(ModelError::Version {
                found: header.version,
                expected: MODEL_VERSION,
            });
        }
        let doc: Document = serde_json::from_slice(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if doc.trees.is_empty() {
            return Err(ModelError::Format("model has no trees".into()));
        }
        for (i, t) in doc.trees.iter().enumerate() {
            if !t.all_finite() {
                return Err(ModelError::Format(format!("tree {i} has non-finite values")));
            }
            if t.max_feature().is_some_and(|f| f >= doc.feature_arity) {
                return Err(ModelError::Format(format!("tree {i} references a feature beyond arity")));
            }
        }
        let bad = |e: serde_json::Error| ModelError::Format(format!("params: {e}"));
        let ensemble = match doc.kind {
            ModelKind::Rf => Ensemble::Forest(ForestModel {
                params: serde_json::from_value(doc.params).map_err(bad)?,
                feature_arity: doc.feature_arity,
                trees: doc.trees,
            }),
            ModelKind::Gbt => Ensemble::Boosted(BoostedModel {
                params: serde_json::from_value(doc.params).map_err(bad)?,
                feature_arity: doc.feature_arity,
                base: doc
                    .base
                    .ok_or_else(|| ModelError::Format("boosted model without base value".into()))?,
                trees: doc.trees,
            }),
        };
        Ok(Model { meta: doc.meta, ensemble })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read(path)?)
    }
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    kind: ModelKind,
    feature_arity: usize,
    #[serde(flatten)]
    meta: ModelMeta,
    params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<f64>,
    trees: Vec<Node>,
}

/// Blurs a coarse volume grid and predicts temperature per valid cell.
/// Cells that are nodata in the input stay nodata.
pub fn predict_grid(model: &Model, volume: &Grid, kernel: &BlurKernel) -> Result<Grid, ModelError> {
    if model.feature_arity() != 1 {
        return Err(ModelError::ArityMismatch {
            expected: model.feature_arity(),
            got: 1,
        });
    }
    let blurred = gaussian_blur(volume, kernel);
    let values = blurred
        .values
        .iter()
        .map(|&v| {
            if blurred.is_valid(v) {
                model.predict(&[v])
            } else {
                Ok(blurred.nodata)
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Grid {
        spec: blurred.spec,
        values,
        nodata: blurred.nodata,
    })
}

/// Training rows from a blurred volume grid and a temperature grid on the
/// same lattice; cells where either side is nodata are dropped.
pub fn training_rows(blurred: &Grid, temperature: &Grid, city: &str) -> Result<TrainingSet, ModelError> {
    if blurred.values.len() != temperature.values.len() {
        return Err(ModelError::InvalidParam(format!(
            "grid sizes differ: {} vs {}",
            blurred.values.len(),
            temperature.values.len()
        )));
    }
    let mut ts = TrainingSet::new();
    for (&v, &t) in blurred.values.iter().zip(&temperature.values) {
        if blurred.is_valid(v) && temperature.is_valid(t) {
            ts.push(vec![v], t, city)?;
        }
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set() -> TrainingSet {
        let mut ts = TrainingSet::new();
        for i in 0..40 {
            let x = f64::from(i) * 500.0;
            ts.push(vec![x], 14.0 + 1e-4 * x, if i % 2 == 0 { "a" } else { "b" })
                .unwrap();
        }
        ts
    }

    fn forest() -> Model {
        let ts = toy_set();
        let f = fit_random_forest(
            &ts,
            &RFParams {
                n_trees: 15,
                seed: 3,
                ..RFParams::default()
            },
        )
        .unwrap();
        Model::new(
            Ensemble::Forest(f),
            ModelMeta {
                training_cities: ts.cities(),
                coarse_cell_size_m: Some(1000.0),
                ..Default::default()
            },
        )
    }

    fn boosted() -> Model {
        let ts = toy_set();
        let g = fit_gradient_boosting(
            &ts,
            &GBParams {
                n_trees: 30,
                learning_rate: 0.1,
                ..GBParams::default()
            },
        )
        .unwrap();
        Model::new(Ensemble::Boosted(g), ModelMeta::default())
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        for m in [forest(), boosted()] {
            let back = Model::from_json(m.to_json().as_bytes()).unwrap();
            assert_eq!(back, m);
            for x in [-1.0, 0.0, 3210.5, 1e7] {
                assert_eq!(back.predict(&[x]).unwrap(), m.predict(&[x]).unwrap());
            }
        }
    }

    #[test]
    fn version_and_truncation_are_rejected() {
        let text = forest().to_json();
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            Model::from_json(bumped.as_bytes()),
            Err(ModelError::Version { found: 2, .. })
        ));
        let cut = &text.as_bytes()[..text.len() / 2];
        assert!(matches!(Model::from_json(cut), Err(ModelError::Format(_))));
    }

    #[test]
    fn arity_mismatch_is_an_error() {
        assert!(matches!(
            forest().predict(&[1.0, 2.0]),
            Err(ModelError::ArityMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn kind_parses() {
        assert_eq!("RF".parse::<ModelKind>().unwrap(), ModelKind::Rf);
        assert_eq!("gbt".parse::<ModelKind>().unwrap(), ModelKind::Gbt);
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
