use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{baseline_best_candidate, baseline_oracle, evaluate_choices, evaluate_router, EvalReport, Metrics, Scenario};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::numcore::Tensor;
use crate::router::{Backbone, RouterConfig, RouterModel};
use crate::training::{train, TrainConfig, TrainData};

/// The named scenario pinned to `alpha`, or a custom one.
pub fn scenario_for(alpha: f64) -> Result<Scenario> {
    Ok(Scenario::NAMED
        .into_iter()
        .find(|s| s.alpha == alpha)
        .unwrap_or(Scenario::custom(alpha)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub router: String,
    pub performance: f64,
    pub cost: f64,
    pub score: f64,
}

impl SweepRow {
    fn from_report(alpha: f64, r: &EvalReport) -> Self {
        Self {
            alpha,
            router: r.router.clone(),
            performance: r.macro_avg.performance,
            cost: r.macro_avg.cost,
            score: r.macro_avg.score,
        }
    }
}

/// Evaluates `oracle`, `best_candidate` and every router the factory
/// yields at each alpha. The factory returns `(name, choices on dataset)`.
pub fn alpha_sweep<F>(dataset: &Dataset, alphas: &[f64], mut factory: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(Scenario) -> Result<Vec<(String, Vec<usize>)>>,
{
    let mut rows = Vec::new();
    for &alpha in alphas {
        let scenario = scenario_for(alpha)?;
        rows.push(SweepRow::from_report(alpha, &baseline_oracle(dataset, scenario)?));
        rows.push(SweepRow::from_report(alpha, &baseline_best_candidate(dataset, scenario)?.1));
        for (name, choices) in factory(scenario)? {
            let report = evaluate_choices(dataset, &choices, scenario, &name)?;
            super::check_oracle_dominance(dataset, scenario, &report)?;
            rows.push(SweepRow::from_report(alpha, &report));
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub size: usize,
    /// Name of the LLM added at this size.
    pub added: String,
    pub oracle: Metrics,
    pub best_candidate: Metrics,
    pub router: Option<Metrics>,
}

/// Nested pools `order[..1]`, `order[..2]`, ... evaluated on `dataset`.
/// `factory(pool)` returns choices, as indices into the restricted
/// catalog, or `None` to report baselines only.
pub fn pool_growth<F>(dataset: &Dataset, order: &[usize], scenario: Scenario, mut factory: F) -> Result<Vec<PoolRow>>
where
    F: FnMut(&[usize], &Dataset) -> Result<Option<Vec<usize>>>,
{
    if order.is_empty() {
        return Err(Error::Config("pool order is empty".into()));
    }
    let mut rows = Vec::with_capacity(order.len());
    for size in 1..=order.len() {
        let pool = &order[..size];
        let restricted = dataset.restrict_pool(pool)?;
        let oracle = baseline_oracle(&restricted, scenario)?;
        let router = match factory(pool, &restricted)? {
            Some(choices) => {
                let r = evaluate_choices(&restricted, &choices, scenario, "radialrouter")?;
                super::check_oracle_dominance(&restricted, scenario, &r)?;
                Some(r.macro_avg)
            }
            None => None,
        };
        rows.push(PoolRow {
            size,
            added: dataset.catalog().name(order[size - 1]).to_string(),
            oracle: oracle.macro_avg,
            best_candidate: baseline_best_candidate(&restricted, scenario)?.1.macro_avg,
            router,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub backbone: Backbone,
    pub loss: LossKind,
    pub qq: bool,
}

impl AblationVariant {
    pub const FULL: AblationVariant = AblationVariant {
        backbone: Backbone::RadialFormer,
        loss: LossKind::Kl,
        qq: true,
    };

    /// Backbone swaps with the full objective, then loss swaps on the
    /// radial backbone.
    pub fn table() -> Vec<AblationVariant> {
        let mut v: Vec<_> = Backbone::ALL
            .iter()
            .map(|&backbone| AblationVariant { backbone, ..Self::FULL })
            .collect();
        v.push(AblationVariant { qq: false, ..Self::FULL });
        for loss in [LossKind::Ce, LossKind::Ql] {
            v.push(AblationVariant { loss, ..Self::FULL });
            v.push(AblationVariant { loss, qq: false, ..Self::FULL });
        }
        v
    }

    /// Only backbone variants carry a routing time.
    pub fn is_backbone_variant(&self) -> bool {
        self.loss == LossKind::Kl && self.qq
    }

    pub fn name(&self) -> String {
        format!(
            "{}+{}{}",
            self.backbone.name(),
            self.loss.name(),
            if self.qq { "+qq" } else { "" }
        )
    }

    /// Parses `backbone+loss[+qq]`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').collect();
        let bad = || Error::Config(format!("unknown ablation variant {s:?}; expected backbone+loss[+qq]"));
        let (backbone, loss, qq) = match parts.as_slice() {
            [b, l] => (b, l, false),
            [b, l, "qq"] => (b, l, true),
            _ => return Err(bad()),
        };
        Ok(Self {
            backbone: Backbone::parse(backbone).map_err(|_| bad())?,
            loss: LossKind::parse(loss).map_err(|_| bad())?,
            qq,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub report: EvalReport,
    /// Mean routing time per batch; only for backbone variants.
    pub time_ms: Option<f64>,
}

pub struct AblationInputs<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
    pub groups: Option<&'a [usize]>,
}

/// Trains one variant with `base` settings and evaluates it on the test
/// split. Without `qq` the contrastive weight is forced to zero.
pub fn ablation_run(
    inputs: &AblationInputs<'_>,
    variant: AblationVariant,
    base: &RouterConfig,
    train_cfg: &TrainConfig,
    scenario: Scenario,
) -> Result<AblationRow> {
    let router = RouterConfig {
        backbone: variant.backbone,
        ..base.clone()
    };
    let mut cfg = train_cfg.clone();
    cfg.alpha = scenario.alpha;
    cfg.loss.kind = variant.loss;
    if !variant.qq {
        cfg.loss.lambda = 0.0;
    }
    let model = RouterModel::new(router, cfg.seed)?;
    let data = TrainData {
        train: inputs.train,
        val: inputs.val,
        groups: inputs.groups,
    };
    let outcome = train(model, &data, &cfg, None, |_| Ok(()))?;
    let emb = inputs.test.require_embeddings()?;
    let model = &outcome.model;
    let report = evaluate_router(inputs.test, scenario, &variant.name(), |q| model.choose(emb.row(q)))?
        .with_seed(cfg.seed);
    let time_ms = if variant.is_backbone_variant() {
        Some(time_routing(model, emb, train_cfg.batch_size)?)
    } else {
        None
    };
    Ok(AblationRow {
        variant: variant.name(),
        seed: cfg.seed,
        report,
        time_ms,
    })
}

/// Mean wall-clock milliseconds to route one batch of `batch_size` rows
/// of `queries`, one query after another.
pub fn time_routing(model: &RouterModel, queries: &Tensor, batch_size: usize) -> Result<f64> {
    if batch_size == 0 || queries.rows() == 0 {
        return Err(Error::Config("timing needs queries and a positive batch size".into()));
    }
    let rows: Vec<usize> = (0..queries.rows()).collect();
    let batches = rows.chunks(batch_size).count();
    let start = Instant::now();
    for q in rows {
        std::hint::black_box(model.choose(queries.row(q))?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / batches as f64)
}
