use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use crate::data::LlmCatalog;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::numcore::Tensor;
use crate::params::ParamStore;
use crate::router::{RouterConfig, RouterModel};

pub const CHECKPOINT_FORMAT: &str = "radialrouter-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Everything needed to rebuild and audit a trained router.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub router: RouterConfig,
    pub catalog_hash: String,
    pub catalog: LlmCatalog,
    pub alpha: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Epochs completed when the parameters were taken.
    pub epoch: usize,
    pub params_hash: String,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn new(
        model: &RouterModel,
        catalog: &LlmCatalog,
        alpha: f64,
        seed: u64,
        loss: &LossConfig,
        epoch: usize,
    ) -> Result<Self> {
        if catalog.len() != model.config.n {
            return Err(Error::Config(format!(
                "router has {} satellites, catalog {} entries",
                model.config.n,
                catalog.len()
            )));
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            router: model.config.clone(),
            catalog_hash: catalog.hash(),
            catalog: catalog.clone(),
            alpha,
            seed,
            loss: loss.clone(),
            epoch,
            params_hash: model.store.content_hash(),
            params: model
                .store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
            optimizer: None,
        })
    }

    pub fn with_optimizer(mut self, opt: AdamW) -> Self {
        self.optimizer = Some(opt);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        if ck.catalog.hash() != ck.catalog_hash {
            return Err(Error::Format("checkpoint catalog does not match its recorded hash".into()));
        }
        Ok(ck)
    }

    /// Rebuilds the router, refusing a catalog that differs from the one it
    /// was trained against.
    pub fn model(&self, active: &LlmCatalog) -> Result<RouterModel> {
        let found = active.hash();
        if found != self.catalog_hash {
            return Err(Error::CatalogMismatch {
                expected: self.catalog_hash.clone(),
                found,
            });
        }
        self.model_unchecked()
    }

    /// Rebuilds the router against the checkpoint's own catalog.
    pub fn model_unchecked(&self) -> Result<RouterModel> {
        let mut model = RouterModel::new(self.router.clone(), self.seed)?;
        let mut saved = ParamStore::new();
        for p in &self.params {
            saved.add(p.name.clone(), p.tensor.clone());
        }
        model.store.load_from(&saved)?;
        if model.store.content_hash() != self.params_hash {
            return Err(Error::Format("checkpoint parameters do not match their recorded hash".into()));
        }
        Ok(model)
    }
}
