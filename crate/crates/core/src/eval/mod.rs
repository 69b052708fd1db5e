//! Routing metrics, baselines and experiment harnesses.

mod cosine;
mod experiments;
mod report;

pub use cosine::{CosineClassifier, CosineConfig};
pub use experiments::{
    ablation_run, alpha_sweep, pool_growth, scenario_for, time_routing, AblationInputs, AblationRow, AblationVariant,
    PoolRow, SweepRow,
};
pub use report::{
    read_report_json, write_ablation_csv, write_per_dataset_csv, write_plot_tsv, write_pool_csv, write_report_json,
    write_summary_csv, write_sweep_csv, ABLATION_COLUMNS, PER_DATASET_COLUMNS, POOL_COLUMNS, SUMMARY_COLUMNS,
    SWEEP_COLUMNS,
};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::TARGET_FLOOR;
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    PerformanceFirst,
    Balance,
    CostFirst,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub alpha: f64,
}

impl Scenario {
    pub const PERFORMANCE_FIRST: Scenario = Scenario {
        name: ScenarioName::PerformanceFirst,
        alpha: 0.0,
    };
    pub const BALANCE: Scenario = Scenario {
        name: ScenarioName::Balance,
        alpha: 0.02,
    };
    pub const COST_FIRST: Scenario = Scenario {
        name: ScenarioName::CostFirst,
        alpha: 0.1,
    };
    pub const NAMED: [Scenario; 3] = [Self::PERFORMANCE_FIRST, Self::BALANCE, Self::COST_FIRST];

    pub fn custom(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
        }
        Ok(Self {
            name: ScenarioName::Custom,
            alpha,
        })
    }

    /// Named scenarios ignore `alpha`; `custom` requires it.
    pub fn parse(name: &str, alpha: Option<f64>) -> Result<Self> {
        let named = match name {
            "performance_first" => Self::PERFORMANCE_FIRST,
            "balance" => Self::BALANCE,
            "cost_first" => Self::COST_FIRST,
            "custom" => {
                return Self::custom(
                    alpha.ok_or_else(|| Error::Config("the custom scenario needs an alpha".into()))?,
                )
            }
            _ => return Err(Error::Config(format!("unknown scenario {name:?}"))),
        };
        if let Some(a) = alpha {
            if a != named.alpha {
                return Err(Error::Config(format!(
                    "scenario {name} pins alpha to {}, got {a}",
                    named.alpha
                )));
            }
        }
        Ok(named)
    }

    pub fn label(&self) -> String {
        match self.name {
            ScenarioName::PerformanceFirst => "performance_first".into(),
            ScenarioName::Balance => "balance".into(),
            ScenarioName::CostFirst => "cost_first".into(),
            ScenarioName::Custom => format!("custom_{}", self.alpha),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub performance: f64,
    pub cost: f64,
    pub score: f64,
}

impl Metrics {
    fn from_sums(perf: f64, cost: f64, count: usize, alpha: f64) -> Self {
        let (performance, cost) = (perf / count as f64, cost / count as f64);
        Self {
            performance,
            cost,
            score: performance - alpha * cost,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub catalog_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Floor applied to target probabilities inside the KL loss.
    pub target_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub router: String,
    pub scenario: Scenario,
    /// Mean over dataset tags of per-tag means. Headline numbers.
    pub macro_avg: Metrics,
    /// Mean over queries.
    pub micro_avg: Metrics,
    pub per_dataset: BTreeMap<String, Metrics>,
    pub queries: usize,
    /// How often each catalog entry was chosen.
    pub selections: Vec<usize>,
    pub metadata: ReportMeta,
}

impl EvalReport {
    pub fn score(&self) -> f64 {
        self.macro_avg.score
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.metadata.seed = Some(seed);
        self
    }

    pub fn with_checkpoint(mut self, id: impl Into<String>) -> Self {
        self.metadata.checkpoint = Some(id.into());
        self
    }
}

/// Metrics of a fixed choice per query. Out-of-range choices are errors.
pub fn evaluate_choices(dataset: &Dataset, choices: &[usize], scenario: Scenario, router: &str) -> Result<EvalReport> {
    if choices.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "{} choices for {} queries",
            choices.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let catalog = dataset.catalog();
    let n = catalog.len();
    let alpha = scenario.alpha;
    let mut selections = vec![0usize; n];
    let mut per_tag: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let (mut perf_sum, mut cost_sum) = (0.0, 0.0);
    for (q, (&c, rec)) in choices.iter().zip(dataset.records()).enumerate() {
        if c >= n {
            return Err(Error::Index(format!("router chose LLM {c} of {n} for query {:?}", rec.id)));
        }
        selections[c] += 1;
        let (p, cost) = (dataset.perf()[q][c], catalog.cost(c));
        let e = per_tag.entry(rec.dataset_tag.as_str()).or_default();
        e.0 += p;
        e.1 += cost;
        e.2 += 1;
        perf_sum += p;
        cost_sum += cost;
    }
    let per_dataset: BTreeMap<String, Metrics> = per_tag
        .iter()
        .map(|(tag, &(p, c, k))| (tag.to_string(), Metrics::from_sums(p, c, k, alpha)))
        .collect();
    let t = per_dataset.len();
    let macro_perf = per_dataset.values().map(|m| m.performance).sum::<f64>();
    let macro_cost = per_dataset.values().map(|m| m.cost).sum::<f64>();
    Ok(EvalReport {
        router: router.to_string(),
        scenario,
        macro_avg: Metrics::from_sums(macro_perf, macro_cost, t, alpha),
        micro_avg: Metrics::from_sums(perf_sum, cost_sum, dataset.len(), alpha),
        per_dataset,
        queries: dataset.len(),
        selections,
        metadata: ReportMeta {
            catalog_hash: catalog.hash(),
            seed: None,
            checkpoint: None,
            target_floor: TARGET_FLOOR,
        },
    })
}

/// Runs `route` on every query (in parallel when enabled) and evaluates.
/// Also checks that the oracle is not beaten.
pub fn evaluate_router<F>(dataset: &Dataset, scenario: Scenario, router: &str, route: F) -> Result<EvalReport>
where
    F: Fn(usize) -> Result<usize> + Sync + Send,
{
    let choices = parallel::map_range(dataset.len(), route)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_choices(dataset, &choices, scenario, router)?;
    check_oracle_dominance(dataset, scenario, &report)?;
    Ok(report)
}

/// Errors if `report` beats the oracle on its own data.
pub fn check_oracle_dominance(dataset: &Dataset, scenario: Scenario, report: &EvalReport) -> Result<()> {
    let oracle = baseline_oracle(dataset, scenario)?;
    let slack = 1e-9;
    let beaten = report.macro_avg.score > oracle.macro_avg.score + slack
        || report.micro_avg.score > oracle.micro_avg.score + slack
        || report
            .per_dataset
            .iter()
            .any(|(tag, m)| m.score > oracle.per_dataset[tag].score + slack);
    if beaten {
        return Err(Error::Contract(format!(
            "router {:?} scored {} above the oracle's {}",
            report.router,
            report.macro_avg.score,
            oracle.macro_avg.score
        )));
    }
    Ok(())
}

/// Per-query true-score matrix `perf - alpha * cost`.
pub fn score_matrix(dataset: &Dataset, alpha: f64) -> Vec<Vec<f64>> {
    let costs = dataset.catalog().costs();
    dataset
        .perf()
        .iter()
        .map(|row| row.iter().zip(&costs).map(|(p, c)| p - alpha * c).collect())
        .collect()
}

/// Best true score per query; ties to the cheaper LLM, then the lower index.
pub fn oracle_choices(dataset: &Dataset, alpha: f64) -> Vec<usize> {
    let costs = dataset.catalog().costs();
    score_matrix(dataset, alpha)
        .iter()
        .map(|row| {
            let mut best = 0;
            for i in 1..row.len() {
                if row[i] > row[best] || (row[i] == row[best] && costs[i] < costs[best]) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn baseline_oracle(dataset: &Dataset, scenario: Scenario) -> Result<EvalReport> {
    evaluate_choices(dataset, &oracle_choices(dataset, scenario.alpha), scenario, "oracle")
}

/// Reports of every constant router.
pub fn constant_reports(dataset: &Dataset, scenario: Scenario) -> Result<Vec<EvalReport>> {
    (0..dataset.catalog().len())
        .map(|i| {
            let name = format!("constant:{}", dataset.catalog().name(i));
            evaluate_choices(dataset, &vec![i; dataset.len()], scenario, &name)
        })
        .collect()
}

/// The constant router with the highest aggregate score (lowest index on
/// ties) and its catalog index.
pub fn baseline_best_candidate(dataset: &Dataset, scenario: Scenario) -> Result<(usize, EvalReport)> {
    let reports = constant_reports(dataset, scenario)?;
    let scores: Vec<f64> = reports.iter().map(|r| r.score()).collect();
    let best = crate::router::select(&scores)?;
    let mut report = reports.into_iter().nth(best).expect("index in range");
    report.router = "best_candidate".into();
    Ok((best, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    /// Mean of the trial reports' metrics.
    pub report: EvalReport,
    /// Expected metrics of a uniform choice: mean over catalog columns.
    pub expectation: Metrics,
    pub trials: usize,
}

pub const RANDOM_TRIALS: usize = 50;

/// Uniform random routing averaged over `trials` seeded runs.
pub fn baseline_random(dataset: &Dataset, scenario: Scenario, trials: usize, seed: u64) -> Result<RandomBaseline> {
    if trials == 0 {
        return Err(Error::Config("at least one random trial is required".into()));
    }
    let n = dataset.catalog().len();
    let runs = parallel::map_range(trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let choices: Vec<usize> = (0..dataset.len()).map(|_| rng.random_range(0..n)).collect();
        evaluate_choices(dataset, &choices, scenario, "random")
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mean_of = |f: &dyn Fn(&EvalReport) -> Metrics| {
        let mut m = Metrics::default();
        for r in &runs {
            let x = f(r);
            m.performance += x.performance;
            m.cost += x.cost;
        }
        Metrics::from_sums(m.performance, m.cost, runs.len(), scenario.alpha)
    };
    let mut report = runs[0].clone();
    report.macro_avg = mean_of(&|r| r.macro_avg);
    report.micro_avg = mean_of(&|r| r.micro_avg);
    for (tag, m) in report.per_dataset.iter_mut() {
        *m = mean_of(&|r| r.per_dataset[tag]);
    }
    report.selections = (0..n).map(|i| runs.iter().map(|r| r.selections[i]).sum::<usize>() / trials).collect();
    report.metadata.seed = Some(seed);

    let constants = constant_reports(dataset, scenario)?;
    let expectation = Metrics::from_sums(
        constants.iter().map(|r| r.macro_avg.performance).sum(),
        constants.iter().map(|r| r.macro_avg.cost).sum(),
        n,
        scenario.alpha,
    );
    Ok(RandomBaseline {
        report,
        expectation,
        trials,
    })
}
