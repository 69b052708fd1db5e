//! JSON run configuration. Every section is optional; command line flags
//! override the file.

use std::path::Path;

use anyhow::Context;
use radialrouter_core::clustering::ClusterConfig;
use radialrouter_core::data::DEFAULT_FRACTIONS;
use radialrouter_core::router::{Backbone, RouterConfig};
use radialrouter_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: DEFAULT_FRACTIONS.0,
            val: DEFAULT_FRACTIONS.1,
        }
    }
}

/// Router shape without the data-derived widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    #[serde(default)]
    pub share_layers: bool,
    #[serde(default)]
    pub backbone: Backbone,
    pub mlp_hidden: usize,
}

impl Default for RouterSection {
    fn default() -> Self {
        let r = RouterConfig::new(1, 1);
        Self {
            d: r.d,
            layers: r.layers,
            heads: r.heads,
            share_layers: r.share_layers,
            backbone: r.backbone,
            mlp_hidden: r.mlp_hidden,
        }
    }
}

impl RouterSection {
    pub fn build(&self, d_enc: usize, n: usize) -> RouterConfig {
        RouterConfig {
            d_enc,
            n,
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            share_layers: self.share_layers,
            backbone: self.backbone,
            mlp_hidden: self.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub random_trials: usize,
    /// Alpha grid of the sweep experiment.
    pub sweep_alphas: Vec<f64>,
    /// Seeds of each ablation variant.
    pub ablation_seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            random_trials: radialrouter_core::eval::RANDOM_TRIALS,
            sweep_alphas: vec![0.0, 0.01, 0.02, 0.05, 0.1],
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the split, clustering, initialization and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub router: RouterSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Every problem found, not just the first.
    pub fn problems(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        let s = &self.split;
        if !(s.train > 0.0 && s.val > 0.0 && s.train + s.val < 1.0) {
            out.push(format!("split fractions train={} val={} must be positive and sum below 1", s.train, s.val));
        }
        if let Err(e) = self.router.build(1, n.max(1)).validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.train.validate(n) {
            out.push(e.to_string());
        }
        if self.eval.random_trials == 0 {
            out.push("eval.random_trials must be positive".into());
        }
        out
    }

    pub fn check(&self, n: usize) -> anyhow::Result<()> {
        let problems = self.problems(n);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(UsageError(format!("invalid configuration:\n  - {}", problems.join("\n  - "))).into())
        }
    }
}
