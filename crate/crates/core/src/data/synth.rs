//! Seeded synthetic routing benchmark with a known answer: each semantic
//! group has one designated best LLM.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::catalog::LlmCatalog;
use super::dataset::{Dataset, QueryRecord};
use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const BEST_PERF: f64 = 0.9;
pub const OTHER_PERF: f64 = 0.4;
pub const COST_RANGE: (f64, f64) = (0.1, 7.2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_llms: usize,
    pub n_groups: usize,
    pub queries_per_group: usize,
    pub d_enc: usize,
    pub noise: f64,
    pub seed: u64,
    /// Standard deviation of queries around their group centroid; centroids
    /// are standard normal.
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    0.3
}

impl SynthConfig {
    pub fn new(n_llms: usize, n_groups: usize, queries_per_group: usize, d_enc: usize, noise: f64, seed: u64) -> Self {
        Self {
            n_llms,
            n_groups,
            queries_per_group,
            d_enc,
            noise,
            seed,
            spread: default_spread(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_llms < 2 {
            return Err(Error::Config(format!("n_llms must be at least 2, got {}", self.n_llms)));
        }
        if self.n_groups < 2 {
            return Err(Error::Config(format!("n_groups must be at least 2, got {}", self.n_groups)));
        }
        if self.queries_per_group == 0 || self.d_enc == 0 {
            return Err(Error::Config("queries_per_group and d_enc must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Config(format!("spread must be non-negative, got {}", self.spread)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub catalog: LlmCatalog,
    /// Records with embeddings attached.
    pub dataset: Dataset,
    pub embeddings: EmbeddingTable,
    /// Designated best LLM of each group.
    pub designated: Vec<usize>,
    /// Construction group of each dataset record, in dataset order.
    pub groups: Vec<usize>,
    pub centroids: Tensor,
}

impl SynthData {
    /// Closed-form oracle score at `alpha` for noise-free data, macro
    /// averaged over groups. Valid when the designated LLM also wins after
    /// the cost penalty.
    pub fn designated_score(&self, alpha: f64) -> f64 {
        let total: f64 = self
            .designated
            .iter()
            .map(|&b| BEST_PERF - alpha * self.catalog.cost(b))
            .sum();
        total / self.designated.len() as f64
    }
}

pub fn group_tag(g: usize) -> String {
    format!("group-{g:03}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (COST_RANGE.0.ln(), COST_RANGE.1.ln());
    let costs: Vec<f64> = (0..cfg.n_llms).map(|_| rng.random_range(lo..hi).exp()).collect();
    let catalog = LlmCatalog::from_pairs(
        costs.iter().enumerate().map(|(i, &c)| (format!("llm-{i:02}"), c)),
    )?;
    let mut perm: Vec<usize> = (0..cfg.n_llms).collect();
    perm.shuffle(&mut rng);
    let designated: Vec<usize> = (0..cfg.n_groups).map(|g| perm[g % cfg.n_llms]).collect();

    let centroids = Tensor::normal(cfg.n_groups, cfg.d_enc, 1.0, &mut rng);
    let total = cfg.n_groups * cfg.queries_per_group;
    let mut records = Vec::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    let mut rows = Vec::with_capacity(total * cfg.d_enc);
    let mut group_by_id = HashMap::with_capacity(total);
    for g in 0..cfg.n_groups {
        for k in 0..cfg.queries_per_group {
            let id = format!("{}-q{k:05}", group_tag(g));
            for &c in centroids.row(g) {
                let z: f64 = StandardNormal.sample(&mut rng);
                rows.push(c + cfg.spread * z);
            }
            let perf: BTreeMap<String, f64> = (0..cfg.n_llms)
                .map(|i| {
                    let base = if i == designated[g] { BEST_PERF } else { OTHER_PERF };
                    let jitter = if cfg.noise > 0.0 {
                        rng.random_range(-cfg.noise..=cfg.noise)
                    } else {
                        0.0
                    };
                    (catalog.name(i).to_string(), (base + jitter).clamp(0.0, 1.0))
                })
                .collect();
            records.push(QueryRecord {
                id: id.clone(),
                text: None,
                dataset_tag: group_tag(g),
                perf,
            });
            group_by_id.insert(id.clone(), g);
            ids.push(id);
        }
    }
    let embeddings = EmbeddingTable::new(
        "synthetic-gaussian",
        ids,
        Tensor::new(total, cfg.d_enc, rows)?,
    )?;
    let dataset = Dataset::new(catalog.clone(), records)?.with_embeddings(&embeddings)?;
    let groups = dataset.ids().iter().map(|id| group_by_id[*id]).collect();
    Ok(SynthData {
        catalog,
        dataset,
        embeddings,
        designated,
        groups,
        centroids,
    })
}
