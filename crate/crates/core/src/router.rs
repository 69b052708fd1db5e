//! Query projection, backbone, per-satellite scoring head and selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LlmCatalog;
use crate::error::{dim_err, Error, Result};
use crate::numcore::{softmax_row, Graph, Tensor, Var};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::radialformer::{relu_norm_row, NormIds, RadialFormerConfig, RadialFormerParams, Topology};

pub const DEFAULT_MLP_HIDDEN: usize = 128;

/// Backbone variants compared in the ablation harness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    #[default]
    #[serde(rename = "radialformer")]
    RadialFormer,
    #[serde(rename = "star_transformer_topology")]
    Star,
    #[serde(rename = "full_attention_transformer")]
    Full,
    /// Each satellite is `LN(ReLU([q ‖ m_i] W + b))`; no attention.
    #[serde(rename = "mlp_only")]
    MlpOnly,
}

impl Backbone {
    pub const ALL: [Backbone; 4] = [Backbone::RadialFormer, Backbone::Star, Backbone::Full, Backbone::MlpOnly];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::RadialFormer => "radialformer",
            Backbone::Star => "star_transformer_topology",
            Backbone::Full => "full_attention_transformer",
            Backbone::MlpOnly => "mlp_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    /// Width of the external query embeddings.
    pub d_enc: usize,
    /// Number of candidate LLMs.
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    #[serde(default)]
    pub share_layers: bool,
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
}

fn default_mlp_hidden() -> usize {
    DEFAULT_MLP_HIDDEN
}

impl RouterConfig {
    /// Six layers, four heads, width 128.
    pub fn new(d_enc: usize, n: usize) -> Self {
        Self {
            d_enc,
            n,
            d: 128,
            layers: 6,
            heads: 4,
            share_layers: false,
            backbone: Backbone::RadialFormer,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
        }
    }

    pub fn former(&self) -> RadialFormerConfig {
        RadialFormerConfig {
            n: self.n,
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            share_layers: self.share_layers,
            topology: match self.backbone {
                Backbone::Star => Topology::Star,
                Backbone::Full => Topology::Full,
                _ => Topology::Radial,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_enc == 0 {
            return Err(Error::Config("d_enc must be positive".into()));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be positive".into()));
        }
        self.former().validate()
    }
}

/// Affine map from encoder space into the router's hidden width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectionAdapter {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// `d -> hidden -> 1` MLP applied to every final satellite row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpBackbone {
    pub embeddings: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
    pub norm: NormIds,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackboneParams {
    Former(RadialFormerParams),
    Mlp(MlpBackbone),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RoutingDecision {
    pub predicted_scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_name: String,
}

impl RoutingDecision {
    pub fn from_scores(scores: Vec<f64>, catalog: &LlmCatalog) -> Result<Self> {
        if scores.len() != catalog.len() {
            return Err(Error::Config(format!(
                "{} scores for a catalog of {}",
                scores.len(),
                catalog.len()
            )));
        }
        let probabilities = routing_probability(&scores)?;
        let chosen_index = select(&probabilities)?;
        Ok(Self {
            predicted_scores: scores,
            probabilities,
            chosen_index,
            chosen_name: catalog.name(chosen_index).to_string(),
        })
    }
}

/// Graph handles from a recorded router pass.
#[derive(Clone, Copy, Debug)]
pub struct RouterVars {
    /// `1 x d` projected query.
    pub projected: Var,
    /// `1 x n` predicted scores.
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct RouterModel {
    pub config: RouterConfig,
    pub store: ParamStore,
    pub adapter: ProjectionAdapter,
    pub backbone: BackboneParams,
    pub head: RoutingHead,
}

impl RouterModel {
    /// Deterministic initialization from `seed`.
    pub fn new(config: RouterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d_enc, d, n, h) = (config.d_enc, config.d, config.n, config.mlp_hidden);
        let adapter = ProjectionAdapter {
            weight: store.add(
                "adapter.weight",
                Tensor::uniform(d_enc, d, 1.0 / (d_enc as f64).sqrt(), &mut rng),
            ),
            bias: store.add("adapter.bias", Tensor::zeros(1, d)),
        };
        let backbone = match config.backbone {
            Backbone::MlpOnly => BackboneParams::Mlp(MlpBackbone {
                embeddings: store.add("backbone.model_embeddings", Tensor::normal(n, d, 0.02, &mut rng)),
                weight: store.add(
                    "backbone.mlp.weight",
                    Tensor::uniform(2 * d, d, 1.0 / ((2 * d) as f64).sqrt(), &mut rng),
                ),
                bias: store.add("backbone.mlp.bias", Tensor::zeros(1, d)),
                norm: NormIds::init(&mut store, "backbone.mlp.norm", d),
            }),
            _ => BackboneParams::Former(RadialFormerParams::init(config.former(), &mut store, &mut rng)?),
        };
        let head = RoutingHead {
            w1: store.add("head.w1", Tensor::uniform(d, h, 1.0 / (d as f64).sqrt(), &mut rng)),
            b1: store.add("head.b1", Tensor::zeros(1, h)),
            w2: store.add("head.w2", Tensor::uniform(h, 1, 1.0 / (h as f64).sqrt(), &mut rng)),
            b2: store.add("head.b2", Tensor::zeros(1, 1)),
        };
        Ok(Self {
            config,
            store,
            adapter,
            backbone,
            head,
        })
    }

    pub fn check_embedding(&self, len: usize) -> Result<()> {
        if len != self.config.d_enc {
            return dim_err(format!(
                "query embedding has {len} values, router expects {}",
                self.config.d_enc
            ));
        }
        Ok(())
    }

    /// Records projection, backbone and head for one raw `1 x d_enc` query.
    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundParams, raw: Var) -> Result<RouterVars> {
        let [rows, cols] = g.shape(raw);
        if rows != 1 {
            return dim_err(format!("expected one query row, got {rows}"));
        }
        self.check_embedding(cols)?;
        let projected = self.project_graph(g, bound, raw)?;
        let sats = match &self.backbone {
            BackboneParams::Former(p) => p.forward_graph(g, bound, projected, None)?.satellites,
            BackboneParams::Mlp(m) => {
                let n = self.config.n;
                let q = g.concat_rows(&vec![projected; n])?;
                let x = g.concat_cols(&[q, bound.var(m.embeddings)])?;
                let h = g.matmul(x, bound.var(m.weight))?;
                let h = g.add_row(h, bound.var(m.bias))?;
                let h = g.relu(h);
                g.layer_norm(h, bound.var(m.norm.gain), bound.var(m.norm.bias))?
            }
        };
        let hid = g.matmul(sats, bound.var(self.head.w1))?;
        let hid = g.add_row(hid, bound.var(self.head.b1))?;
        let hid = g.relu(hid);
        let out = g.matmul(hid, bound.var(self.head.w2))?;
        let out = g.add_row(out, bound.var(self.head.b2))?;
        let logits = g.transpose(out);
        Ok(RouterVars { projected, logits })
    }

    /// Records only the adapter on `raw`, for contrastive pairs.
    pub fn project_graph(&self, g: &mut Graph, bound: &BoundParams, raw: Var) -> Result<Var> {
        let x = g.matmul(raw, bound.var(self.adapter.weight))?;
        g.add_row(x, bound.var(self.adapter.bias))
    }

    pub fn project(&self, raw: &[f64]) -> Result<Tensor> {
        self.check_embedding(raw.len())?;
        let x = Tensor::row_vector(raw.to_vec());
        let mut out = x.matmul(self.store.get(self.adapter.weight))?;
        for (o, b) in out.data_mut().iter_mut().zip(self.store.get(self.adapter.bias).data()) {
            *o += b;
        }
        Ok(out)
    }

    /// Final `n x d` satellite states for a raw query.
    pub fn satellites(&self, raw: &[f64]) -> Result<Tensor> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query embedding".into()));
        }
        let q = self.project(raw)?;
        match &self.backbone {
            BackboneParams::Former(p) => Ok(p.forward(&self.store, &q)?.satellites),
            BackboneParams::Mlp(m) => {
                let (n, d) = (self.config.n, self.config.d);
                let emb = self.store.get(m.embeddings);
                let mut x = Tensor::zeros(n, 2 * d);
                for i in 0..n {
                    let row = x.row_mut(i);
                    row[..d].copy_from_slice(q.data());
                    row[d..].copy_from_slice(emb.row(i));
                }
                let mut h = x.matmul(self.store.get(m.weight))?;
                let (bias, gain, nb) = (
                    self.store.get(m.bias),
                    self.store.get(m.norm.gain),
                    self.store.get(m.norm.bias),
                );
                for i in 0..n {
                    let row = h.row_mut(i);
                    row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
                    relu_norm_row(row, gain.data(), nb.data());
                }
                Ok(h)
            }
        }
    }

    /// Predicted score of every candidate for a raw query.
    pub fn predict_scores(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let sats = self.satellites(raw)?;
        self.head_scores(&sats)
    }

    /// Applies the routing head to each row of `satellites`.
    pub fn head_scores(&self, satellites: &Tensor) -> Result<Vec<f64>> {
        let mut hid = satellites.matmul(self.store.get(self.head.w1))?;
        let b1 = self.store.get(self.head.b1);
        for i in 0..hid.rows() {
            hid.row_mut(i)
                .iter_mut()
                .zip(b1.data())
                .for_each(|(v, b)| *v = (*v + b).max(0.0));
        }
        let out = hid.matmul(self.store.get(self.head.w2))?;
        let b2 = self.store.get(self.head.b2).data()[0];
        Ok(out.data().iter().map(|v| v + b2).collect())
    }

    pub fn route(&self, raw: &[f64], catalog: &LlmCatalog) -> Result<RoutingDecision> {
        RoutingDecision::from_scores(self.predict_scores(raw)?, catalog)
    }

    /// Chosen index only.
    pub fn choose(&self, raw: &[f64]) -> Result<usize> {
        select(&self.predict_scores(raw)?)
    }
}

/// Softmax of predicted scores.
pub fn routing_probability(scores: &[f64]) -> Result<Vec<f64>> {
    softmax_row(scores)
}

/// Index of the largest value; ties go to the lowest index.
pub fn select(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Config("cannot select from an empty pool".into()));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `perf - alpha * cost`.
pub fn true_score(perf: f64, cost: f64, alpha: f64) -> Result<f64> {
    if !(cost.is_finite() && cost >= 0.0) {
        return Err(Error::Validation(format!("cost must be non-negative, got {cost}")));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Validation(format!("alpha must be non-negative, got {alpha}")));
    }
    if !(perf.is_finite() && (0.0..=1.0).contains(&perf)) {
        return Err(Error::Validation(format!("performance must lie in [0, 1], got {perf}")));
    }
    Ok(perf - alpha * cost)
}

/// Softmax of one query's true scores.
pub fn target_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("true score".into()));
    }
    softmax_row(scores)
}

#[cfg(test)]
mod tests;
