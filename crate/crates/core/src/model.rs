//! JSON persistence of fitted ensembles.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cart::RegressionTree;
use crate::ensemble::{BoostParams, BoostedModel, ForestModel, ForestParams};
use crate::error::{Error, Result};
use crate::samples::Predictor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Boosted,
}

/// On-disk layout shared by both ensemble kinds.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model_kind: ModelKind,
    params: serde_json::Value,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_train: Option<usize>,
    trees: Vec<RegressionTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_bag: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
}

/// A fitted forest or boosted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Boosted(_) => ModelKind::Boosted,
        }
    }

    pub fn as_forest(&self) -> Option<&ForestModel> {
        match self {
            Model::Forest(f) => Some(f),
            Model::Boosted(_) => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            Model::Forest(f) => ModelDocument {
                format_version: FORMAT_VERSION,
                model_kind: ModelKind::Forest,
                params: serde_json::to_value(f.params)?,
                seed: f.seed,
                n_train: Some(f.n_train),
                trees: f.trees.clone(),
                in_bag: Some(f.in_bag.clone()),
                learning_rate: None,
            },
            Model::Boosted(b) => ModelDocument {
                format_version: FORMAT_VERSION,
                model_kind: ModelKind::Boosted,
                params: serde_json::to_value(b.params)?,
                seed: b.seed,
                n_train: None,
                trees: b.trees.clone(),
                in_bag: None,
                learning_rate: Some(b.learning_rate),
            },
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::param(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        for tree in &doc.trees {
            RegressionTree::from_nodes(tree.nodes().to_vec())?;
        }
        match doc.model_kind {
            ModelKind::Forest => {
                let params: ForestParams = serde_json::from_value(doc.params)?;
                let in_bag = doc.in_bag.ok_or_else(|| Error::param("forest model without in_bag"))?;
                let n_train = doc.n_train.ok_or_else(|| Error::param("forest model without n_train"))?;
                Ok(Model::Forest(ForestModel::from_parts(
                    doc.trees, in_bag, params, doc.seed, n_train,
                )?))
            }
            ModelKind::Boosted => {
                let params: BoostParams = serde_json::from_value(doc.params)?;
                let learning_rate = doc
                    .learning_rate
                    .ok_or_else(|| Error::param("boosted model without learning_rate"))?;
                if doc.trees.is_empty() {
                    return Err(Error::Empty("boosted model without trees".into()));
                }
                Ok(Model::Boosted(BoostedModel {
                    trees: doc.trees,
                    learning_rate,
                    params,
                    seed: doc.seed,
                }))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Model::from_json(&text)
    }
}

impl Predictor for Model {
    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Forest(f) => f.predict(row),
            Model::Boosted(b) => b.predict(row),
        }
    }
}

impl From<ForestModel> for Model {
    fn from(f: ForestModel) -> Self {
        Model::Forest(f)
    }
}

impl From<BoostedModel> for Model {
    fn from(b: BoostedModel) -> Self {
        Model::Boosted(b)
    }
}
