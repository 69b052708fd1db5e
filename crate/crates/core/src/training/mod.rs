//! Mini-batch training of a [`RouterModel`] with AdamW, validation-based
//! model selection and early stopping.

mod adamw;
mod checkpoint;

pub use adamw::{AdamW, MAX_BAD_STEPS};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::sample_contrastive_pair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_choices, EvalReport, Scenario};
use crate::losses::{
    ce_graph, ce_label, ce_loss, kl_graph, kl_loss, ql_contrastive_loss, ql_graph, qq_graph, LossConfig, LossKind,
};
use crate::numcore::{Graph, Tensor, Var};
use crate::params::{BoundParams, ParamStore};
use crate::parallel;
use crate::router::{routing_probability, select, target_distribution, true_score, RouterModel};

/// Examples per gradient chunk. Chunks are summed in a fixed order so the
/// parallel and sequential builds produce the same bits.
pub const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "d_patience")]
    pub patience: usize,
}

fn d_batch() -> usize {
    64
}
fn d_epochs() -> usize {
    1000
}
fn d_lr() -> f64 {
    5e-5
}
fn d_wd() -> f64 {
    0.01
}
fn d_patience() -> usize {
    50
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: d_batch(),
            max_epochs: d_epochs(),
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            alpha: 0.0,
            loss: LossConfig::default(),
            seed: 0,
            patience: d_patience(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        self.loss.validate(n)
    }
}

/// Per-query supervision derived from the true scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleTarget {
    pub scores: Vec<f64>,
    pub target: Vec<f64>,
    pub label: usize,
}

pub fn precompute_targets(dataset: &Dataset, alpha: f64) -> Result<Vec<ExampleTarget>> {
    let costs = dataset.catalog().costs();
    dataset
        .perf()
        .iter()
        .map(|row| {
            let scores = row
                .iter()
                .zip(&costs)
                .map(|(&p, &c)| true_score(p, c, alpha))
                .collect::<Result<Vec<_>>>()?;
            Ok(ExampleTarget {
                target: target_distribution(&scores)?,
                label: ce_label(&scores)?,
                scores,
            })
        })
        .collect()
}

/// Loss pieces of one recorded example.
#[derive(Clone, Copy, Debug)]
pub struct ExampleLoss {
    pub total: Var,
    pub main: f64,
    pub qq: Option<f64>,
}

/// Records the objective of one query: the main routing loss plus
/// `lambda` times the query-query term when a contrastive pair is given.
pub fn objective_graph(
    g: &mut Graph,
    model: &RouterModel,
    bound: &BoundParams,
    raw: &[f64],
    target: &ExampleTarget,
    pair: Option<(&[f64], &[&[f64]])>,
    loss: &LossConfig,
) -> Result<ExampleLoss> {
    let x = g.constant(Tensor::row_vector(raw.to_vec()));
    let out = model.forward_graph(g, bound, x)?;
    let main = match loss.kind {
        LossKind::Kl => kl_graph(g, out.logits, &target.target)?,
        LossKind::Ce => ce_graph(g, out.logits, target.label)?,
        LossKind::Ql => ql_graph(g, out.logits, &target.scores, loss.k, loss.ql_on_logits)?,
    };
    let main_value = g.scalar(main);
    let Some((pos, negs)) = pair.filter(|_| loss.lambda > 0.0) else {
        return Ok(ExampleLoss {
            total: main,
            main: main_value,
            qq: None,
        });
    };
    let project = |g: &mut Graph, v: &[f64]| {
        let c = g.constant(Tensor::row_vector(v.to_vec()));
        model.project_graph(g, bound, c)
    };
    let positive = project(g, pos)?;
    let negatives = negs.iter().map(|n| project(g, n)).collect::<Result<Vec<_>>>()?;
    let qq = qq_graph(g, out.projected, positive, &negatives)?;
    let qq_value = g.scalar(qq);
    let weighted = g.scale(qq, loss.lambda);
    let total = g.add(main, weighted)?;
    Ok(ExampleLoss {
        total,
        main: main_value,
        qq: Some(qq_value),
    })
}

/// One example of a batch: dataset row and optional (positive, negatives).
pub type BatchItem = (usize, Option<(usize, Vec<usize>)>);

#[derive(Clone, Debug)]
pub struct BatchGradient {
    /// Batch-mean gradient per parameter tensor.
    pub grads: Vec<Tensor>,
    pub loss: f64,
    pub main: f64,
    pub qq_sum: f64,
    pub qq_pairs: usize,
}

fn add_into(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
    }
}

/// Mean objective and gradient over `items`.
pub fn batch_gradient(
    model: &RouterModel,
    embeddings: &Tensor,
    targets: &[ExampleTarget],
    items: &[BatchItem],
    loss: &LossConfig,
) -> Result<BatchGradient> {
    if items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let chunks: Vec<&[BatchItem]> = items.chunks(GRAD_CHUNK).collect();
    let partial = parallel::map_slice(&chunks, |chunk| -> Result<(Vec<Tensor>, f64, f64, f64, usize)> {
        let mut acc: Option<Vec<Tensor>> = None;
        let (mut total, mut main, mut qq_sum, mut pairs) = (0.0, 0.0, 0.0, 0);
        for (q, pair) in chunk.iter() {
            let mut g = Graph::new();
            let bound = model.store.bind(&mut g);
            let negs: Vec<&[f64]>;
            let pair = match pair {
                Some((p, ns)) => {
                    negs = ns.iter().map(|&n| embeddings.row(n)).collect();
                    Some((embeddings.row(*p), negs.as_slice()))
                }
                None => None,
            };
            let ex = objective_graph(&mut g, model, &bound, embeddings.row(*q), &targets[*q], pair, loss)?;
            total += g.scalar(ex.total);
            main += ex.main;
            if let Some(v) = ex.qq {
                qq_sum += v;
                pairs += 1;
            }
            g.backward(ex.total)?;
            let grads = model.store.grads(&g, &bound);
            match acc.as_mut() {
                Some(a) => add_into(a, &grads),
                None => acc = Some(grads),
            }
        }
        Ok((acc.expect("non-empty chunk"), total, main, qq_sum, pairs))
    });
    let mut grads: Option<Vec<Tensor>> = None;
    let (mut total, mut main, mut qq_sum, mut qq_pairs) = (0.0, 0.0, 0.0, 0);
    for part in partial {
        let (g, t, m, s, p) = part?;
        match grads.as_mut() {
            Some(a) => add_into(a, &g),
            None => grads = Some(g),
        }
        total += t;
        main += m;
        qq_sum += s;
        qq_pairs += p;
    }
    let b = items.len() as f64;
    let mut grads = grads.expect("non-empty batch");
    grads.iter_mut().for_each(|t| t.scale(1.0 / b));
    Ok(BatchGradient {
        grads,
        loss: total / b,
        main: main / b,
        qq_sum,
        qq_pairs,
    })
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub main_loss: f64,
    /// Mean query-query loss over sampled pairs, if any.
    pub qq_loss: Option<f64>,
    pub qq_pairs: usize,
    pub steps: usize,
    pub skipped_steps: usize,
    pub val_performance: f64,
    pub val_cost: f64,
    pub val_score: f64,
    /// Mean main loss on validation; breaks ties between equal scores.
    pub val_loss: f64,
    pub best: bool,
}

/// Optimizer state and completed-epoch count to continue from.
#[derive(Clone, Debug)]
pub struct ResumeState {
    pub epoch: usize,
    pub optimizer: AdamW,
}

pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    /// Semantic group of each training row; needed when `lambda > 0`.
    pub groups: Option<&'a [usize]>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub model: RouterModel,
    /// Parameters after the last epoch run, for resuming.
    pub last: ParamStore,
    /// Optimizer state after the last epoch run.
    pub optimizer: AdamW,
    /// Completed epochs after the last epoch run.
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Total contrastive pairs sampled.
    pub qq_pairs: usize,
}

struct Validation {
    report: EvalReport,
    /// Mean main loss over the validation split.
    loss: f64,
}

impl Validation {
    /// Higher score wins; equal scores fall back to the lower loss.
    fn beats(&self, other: &Validation) -> bool {
        let (a, b) = (self.report.score(), other.report.score());
        a > b + 1e-12 || ((a - b).abs() <= 1e-12 && self.loss < other.loss)
    }
}

fn validate(
    model: &RouterModel,
    val: &Dataset,
    emb: &Tensor,
    targets: &[ExampleTarget],
    loss: &LossConfig,
    scenario: Scenario,
) -> Result<Validation> {
    let rows = parallel::map_range(val.len(), |q| -> Result<(usize, f64)> {
        let scores = model.predict_scores(emb.row(q))?;
        let p = routing_probability(&scores)?;
        let t = &targets[q];
        let l = match loss.kind {
            LossKind::Kl => kl_loss(&t.target, &p)?,
            LossKind::Ce => ce_loss(&p, t.label)?,
            LossKind::Ql => ql_contrastive_loss(if loss.ql_on_logits { &scores } else { &p }, &t.scores, loss.k)?,
        };
        Ok((select(&scores)?, l))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let choices: Vec<usize> = rows.iter().map(|r| r.0).collect();
    Ok(Validation {
        report: evaluate_choices(val, &choices, scenario, "radialrouter")?,
        loss: rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64,
    })
}

/// Trains `model` and returns the best-validation parameters. `on_epoch`
/// sees every history record as it is produced.
pub fn train<F>(
    mut model: RouterModel,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    resume: Option<ResumeState>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    let n = model.config.n;
    cfg.validate(n)?;
    for ds in [data.train, data.val] {
        if ds.catalog().len() != n {
            return Err(Error::Config(format!(
                "router has {n} satellites, dataset catalog {} entries",
                ds.catalog().len()
            )));
        }
    }
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let emb = data.train.require_embeddings()?;
    let val_emb = data.val.require_embeddings()?;
    model.check_embedding(emb.cols())?;
    model.check_embedding(val_emb.cols())?;
    let use_qq = cfg.loss.lambda > 0.0;
    let groups = match (use_qq, data.groups) {
        (true, None) => return Err(Error::Config("lambda > 0 needs semantic groups".into())),
        (true, Some(g)) if g.len() != data.train.len() => {
            return Err(Error::Dimension(format!(
                "{} group labels for {} training queries",
                g.len(),
                data.train.len()
            )))
        }
        (_, g) => g.unwrap_or(&[]),
    };
    let targets = precompute_targets(data.train, cfg.alpha)?;
    let val_targets = precompute_targets(data.val, cfg.alpha)?;
    let scenario = Scenario::custom(cfg.alpha)?;

    let (start, mut opt) = match resume {
        Some(r) => (r.epoch, r.optimizer),
        None => (0, AdamW::new(model.store.tensors(), cfg.learning_rate, cfg.weight_decay)?),
    };
    let mut best_val = validate(&model, data.val, val_emb, &val_targets, &cfg.loss, scenario)?;
    let mut best_store = model.store.clone();
    let mut best_epoch = start;
    let mut history = Vec::new();
    let mut total_pairs = 0;
    let mut stopped_early = false;
    let mut epoch = start;

    while epoch < cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);

        let (mut loss_sum, mut main_sum, mut qq_sum, mut pairs) = (0.0, 0.0, 0.0, 0);
        let (mut steps, mut skipped) = (0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<BatchItem> = (0..batch.len())
                .map(|pos| {
                    let pair = if use_qq {
                        sample_contrastive_pair(batch, groups, pos, cfg.loss.negatives, &mut rng)
                    } else {
                        None
                    };
                    (batch[pos], pair)
                })
                .collect();
            let bg = batch_gradient(&model, emb, &targets, &items, &cfg.loss)?;
            let w = batch.len() as f64;
            loss_sum += bg.loss * w;
            main_sum += bg.main * w;
            qq_sum += bg.qq_sum;
            pairs += bg.qq_pairs;
            if opt.step(model.store.tensors_mut(), &bg.grads)? {
                steps += 1;
            } else {
                skipped += 1;
            }
        }
        epoch += 1;
        total_pairs += pairs;

        let current = validate(&model, data.val, val_emb, &val_targets, &cfg.loss, scenario)?;
        let improved = current.beats(&best_val);
        let report = &current.report;
        let m = data.train.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / m,
            main_loss: main_sum / m,
            qq_loss: (pairs > 0).then(|| qq_sum / pairs as f64),
            qq_pairs: pairs,
            steps,
            skipped_steps: skipped,
            val_performance: report.macro_avg.performance,
            val_cost: report.macro_avg.cost,
            val_score: report.score(),
            val_loss: current.loss,
            best: improved,
        };
        log::debug!(
            "epoch {epoch}: loss {:.6} val score {:.6}",
            record.train_loss,
            record.val_score
        );
        on_epoch(&record)?;
        history.push(record);
        if improved {
            best_val = current;
            best_store = model.store.clone();
            best_epoch = epoch;
        }
        if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            log::info!("early stop after epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    let last = std::mem::replace(&mut model.store, best_store);
    Ok(TrainOutcome {
        model,
        last,
        optimizer: opt,
        epochs_run: epoch,
        best_epoch,
        best_val: best_val.report,
        history,
        stopped_early,
        qq_pairs: total_pairs,
    })
}
