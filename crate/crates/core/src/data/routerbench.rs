//! Adapter for the RouterBench per-query wide CSV export.
//!
//! Assumed columns:
//!
//! * `sample_id`: unique query id (required)
//! * `eval_name`: source benchmark, e.g. `hellaswag` or `mmlu-astronomy` (required)
//! * `prompt`: query text (optional)
//! * `<model>`: graded performance in [0, 1], one column per LLM
//! * `<model>|total_cost`: dollar cost of that LLM on the query (required per model)
//! * any other `<model>|...` column and `oracle_model_to_route_to` are ignored
//!
//! Model names are mapped to the short catalog names by dropping the
//! organisation prefix (`meta/`, `mistralai/`, ...) and a small alias
//! table. Rows from benchmarks outside the six tracked datasets are skipped.

use std::collections::BTreeMap;
use std::path::Path;

use super::catalog::{LlmCatalog, LlmEntry};
use super::dataset::{Dataset, QueryRecord};
use super::reference;
use crate::error::{Error, Result};

const ID_COL: &str = "sample_id";
const EVAL_COL: &str = "eval_name";
const PROMPT_COL: &str = "prompt";
const IGNORED: [&str; 1] = ["oracle_model_to_route_to"];
const COST_SUFFIX: &str = "|total_cost";

const ALIASES: [(&str, &str); 2] = [
    ("code-llama-instruct-34b-chat", "code-llama-34b-chat"),
    ("yi-34b-chat", "Yi-34B-Chat"),
];

#[derive(Clone, Debug)]
pub struct AdaptOptions {
    /// Multiplier applied to the mean per-query dollar cost.
    pub cost_scale: f64,
    /// Take costs from the reference table for LLMs it knows.
    pub reference_costs: bool,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            cost_scale: 1.0,
            reference_costs: false,
        }
    }
}

pub fn canonical_model_name(raw: &str) -> String {
    let short = raw.rsplit('/').next().unwrap_or(raw).trim();
    for (from, to) in ALIASES {
        if short.eq_ignore_ascii_case(from) {
            return to.to_string();
        }
    }
    short.to_string()
}

pub fn dataset_tag(eval_name: &str) -> Option<&'static str> {
    let e = eval_name.to_ascii_lowercase();
    let tag = if e.contains("gsm8k") || e.contains("grade-school-math") {
        "GSM8K"
    } else if e.contains("hellaswag") {
        "Hellaswag"
    } else if e.contains("mbpp") {
        "MBPP"
    } else if e.starts_with("mmlu") {
        "MMLU"
    } else if e.contains("winogrande") {
        "Winogrande"
    } else if e.starts_with("arc") {
        "ARC"
    } else {
        return None;
    };
    Some(tag)
}

fn parse_cell(raw: &str, id: &str, col: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::Ingestion(format!("query {id:?}: column {col:?} holds {raw:?}, not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Ingestion(format!("query {id:?}: column {col:?} is not finite")));
    }
    Ok(v)
}

pub fn adapt(path: impl AsRef<Path>, opts: &AdaptOptions) -> Result<(Dataset, LlmCatalog)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col(ID_COL).ok_or_else(|| Error::Ingestion(format!("missing column {ID_COL:?}")))?;
    let eval_col =
        col(EVAL_COL).ok_or_else(|| Error::Ingestion(format!("missing column {EVAL_COL:?}")))?;
    let prompt_col = col(PROMPT_COL);

    // (catalog name, perf column, cost column)
    let mut models = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h.contains('|') || [ID_COL, EVAL_COL, PROMPT_COL].contains(&h) || IGNORED.contains(&h) {
            continue;
        }
        let cost_name = format!("{h}{COST_SUFFIX}");
        let cost_col = col(&cost_name)
            .ok_or_else(|| Error::Ingestion(format!("missing column {cost_name:?}")))?;
        models.push((canonical_model_name(h), i, cost_col));
    }
    if models.is_empty() {
        return Err(Error::Ingestion("no model performance columns found".into()));
    }
    for (name, ..) in &models {
        if reference::STATS.iter().all(|(n, ..)| n != name) {
            log::warn!("LLM {name:?} is not in the reference pool; retained");
        }
    }

    let mut records = Vec::new();
    // per model, per tag: (cost sum, count)
    let mut costs: Vec<BTreeMap<&'static str, (f64, usize)>> = vec![BTreeMap::new(); models.len()];
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let id = row.get(id_col).unwrap_or_default().to_string();
        let eval = row.get(eval_col).unwrap_or_default();
        let Some(tag) = dataset_tag(eval) else {
            *skipped.entry(eval.to_string()).or_default() += 1;
            continue;
        };
        let mut perf = BTreeMap::new();
        for (m, (name, pc, cc)) in models.iter().enumerate() {
            let p = parse_cell(row.get(*pc).unwrap_or_default(), &id, &headers[*pc])?;
            let c = parse_cell(row.get(*cc).unwrap_or_default(), &id, &headers[*cc])?;
            if c < 0.0 {
                return Err(Error::Ingestion(format!("query {id:?}: negative cost for {name:?}")));
            }
            perf.insert(name.clone(), p);
            let e = costs[m].entry(tag).or_default();
            e.0 += c;
            e.1 += 1;
        }
        records.push(QueryRecord {
            id,
            text: prompt_col
                .and_then(|c| row.get(c))
                .filter(|t| !t.is_empty())
                .map(String::from),
            dataset_tag: tag.to_string(),
            perf,
        });
    }
    for (eval, n) in &skipped {
        log::warn!("skipped {n} rows from untracked benchmark {eval:?}");
    }

    let entries = models
        .iter()
        .zip(&costs)
        .map(|((name, ..), per_tag)| {
            let reference_cost = reference::STATS
                .iter()
                .find(|(n, ..)| n == name)
                .map(|(.., c)| *c)
                .filter(|_| opts.reference_costs);
            let cost = reference_cost.unwrap_or_else(|| {
                // macro average over datasets, like the performance column
                let means: Vec<f64> = per_tag.values().map(|(s, n)| s / *n as f64).collect();
                if means.is_empty() {
                    0.0
                } else {
                    opts.cost_scale * means.iter().sum::<f64>() / means.len() as f64
                }
            });
            LlmEntry {
                name: name.clone(),
                cost,
            }
        })
        .collect();
    let catalog = LlmCatalog::new(entries)?;
    let dataset = Dataset::new(catalog.clone(), records)?;
    Ok((dataset, catalog))
}
