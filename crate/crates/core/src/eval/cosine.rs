use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::ce_graph;
use crate::numcore::{Graph, Tensor};
use crate::training::AdamW;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineConfig {
    /// Fixed logit temperature applied to cosine similarities.
    pub scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CosineConfig {
    fn default() -> Self {
        Self {
            scale: 10.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// One prototype per LLM; a query goes to the most cosine-similar one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineClassifier {
    pub prototypes: Tensor,
    pub scale: f64,
}

impl CosineClassifier {
    pub fn new(prototypes: Tensor, scale: f64) -> Self {
        Self { prototypes, scale }
    }

    /// Fits prototypes with cross-entropy on `labels` (one per row of
    /// `embeddings`). Classes without examples keep their random init.
    pub fn fit(embeddings: &Tensor, labels: &[usize], n: usize, cfg: &CosineConfig) -> Result<Self> {
        let m = embeddings.rows();
        if labels.len() != m {
            return Err(Error::Dimension(format!("{} labels for {m} embeddings", labels.len())));
        }
        if m == 0 || n == 0 {
            return Err(Error::Config("cosine classifier needs examples and classes".into()));
        }
        if cfg.batch_size == 0 || !(cfg.scale.is_finite() && cfg.scale > 0.0) {
            return Err(Error::Config("cosine classifier needs a positive batch size and scale".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Index(format!("label {bad} out of range for {n} classes")));
        }
        for c in 0..n {
            if !labels.contains(&c) {
                log::warn!("class {c} has no training examples; its prototype stays at init");
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![Tensor::normal(n, embeddings.cols(), 1.0, &mut rng)];
        let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay)?;
        let mut order: Vec<usize> = (0..m).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut g = Graph::new();
                let p = g.param(params[0].clone());
                let pn = g.l2_normalize(p)?;
                let pt = g.transpose(pn);
                let mut losses = Vec::with_capacity(batch.len());
                for &q in batch {
                    let x = g.constant(Tensor::row_vector(embeddings.row(q).to_vec()));
                    let xn = g.l2_normalize(x)?;
                    let cos = g.matmul(xn, pt)?;
                    let logits = g.scale(cos, cfg.scale);
                    losses.push(ce_graph(&mut g, logits, labels[q])?);
                }
                let stacked = g.concat_cols(&losses)?;
                let sum = g.sum(stacked);
                let loss = g.scale(sum, 1.0 / batch.len() as f64);
                g.backward(loss)?;
                let grad = g.grad(p).cloned().unwrap_or_else(|| Tensor::zeros(n, embeddings.cols()));
                opt.step(&mut params, &[grad])?;
            }
        }
        Ok(Self {
            prototypes: params.pop().expect("one tensor"),
            scale: cfg.scale,
        })
    }

    /// Fits on a dataset's embeddings with labels = argmax true score.
    pub fn fit_dataset(train: &Dataset, alpha: f64, cfg: &CosineConfig) -> Result<Self> {
        let labels: Vec<usize> = crate::training::precompute_targets(train, alpha)?
            .into_iter()
            .map(|t| t.label)
            .collect();
        Self::fit(train.require_embeddings()?, &labels, train.catalog().len(), cfg)
    }

    /// Cosine similarity to every prototype.
    pub fn similarities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.prototypes.cols() {
            return Err(Error::Dimension(format!(
                "query has {} values, prototypes {}",
                x.len(),
                self.prototypes.cols()
            )));
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let nx = norm(x);
        Ok((0..self.prototypes.rows())
            .map(|c| {
                let p = self.prototypes.row(c);
                p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (norm(p) * nx)
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        crate::router::select(&self.similarities(x)?)
    }
}
