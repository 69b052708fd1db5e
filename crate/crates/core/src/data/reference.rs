//! Published per-dataset statistics for the eleven-LLM RouterBench pool.
//! Used for metric cross-checks; one synthetic record per dataset tag makes
//! macro-averaged evaluation reproduce the published per-LLM averages.

use std::collections::BTreeMap;

use super::catalog::LlmCatalog;
use super::dataset::{Dataset, QueryRecord};
use crate::error::Result;

pub const DATASET_TAGS: [&str; 6] = ["GSM8K", "Hellaswag", "MBPP", "MMLU", "Winogrande", "ARC"];

/// (name, per-dataset accuracy in `DATASET_TAGS` order, average cost).
pub const STATS: [(&str, [f64; 6], f64); 11] = [
    ("WizardLM-13B-V1.2", [0.5054, 0.6004, 0.3906, 0.5253, 0.5289, 0.6476], 0.166),
    ("claude-instant-v1", [0.6281, 0.7690, 0.6250, 0.4529, 0.5211, 0.8421], 0.514),
    ("claude-v1", [0.6520, 0.8187, 0.6094, 0.5281, 0.5711, 0.9199], 4.486),
    ("claude-v2", [0.6671, 0.3130, 0.6406, 0.5652, 0.4763, 0.6247], 5.336),
    ("gpt-3.5-turbo-1106", [0.6094, 0.7843, 0.6875, 0.6667, 0.6632, 0.8444], 0.562),
    ("gpt-4-1106-preview", [0.6589, 0.9057, 0.6875, 0.8162, 0.8552, 0.9565], 7.185),
    ("code-llama-34b-chat", [0.4548, 0.5194, 0.5156, 0.5284, 0.5921, 0.6636], 0.407),
    ("llama-2-70b-chat", [0.5252, 0.7046, 0.3750, 0.6034, 0.4974, 0.8169], 0.490),
    ("mistral-7b-chat", [0.4151, 0.5410, 0.3828, 0.5198, 0.5737, 0.6705], 0.107),
    ("mixtral-8x7b-chat", [0.5214, 0.6960, 0.5391, 0.6822, 0.6842, 0.8627], 0.324),
    ("Yi-34B-Chat", [0.5517, 0.8782, 0.4141, 0.7187, 0.7421, 0.9176], 0.439),
];

/// Published per-LLM average performance, rounded as printed.
pub const PUBLISHED_PERF: [f64; 11] = [
    0.5331, 0.6397, 0.6832, 0.5478, 0.7092, 0.8134, 0.5457, 0.5871, 0.5171, 0.6642, 0.7037,
];

/// Order in which LLMs join the pool in the pool-growth experiment.
pub const POOL_ORDER: [&str; 11] = [
    "WizardLM-13B-V1.2",
    "code-llama-34b-chat",
    "llama-2-70b-chat",
    "claude-v2",
    "claude-v1",
    "claude-instant-v1",
    "mistral-7b-chat",
    "mixtral-8x7b-chat",
    "Yi-34B-Chat",
    "gpt-3.5-turbo-1106",
    "gpt-4-1106-preview",
];

pub fn catalog() -> LlmCatalog {
    LlmCatalog::from_pairs(STATS.iter().map(|(n, _, c)| (*n, *c))).expect("static catalog")
}

/// Six records, one per dataset tag, whose per-LLM values are the
/// published per-dataset accuracies.
pub fn dataset() -> Result<Dataset> {
    let records = DATASET_TAGS
        .iter()
        .enumerate()
        .map(|(j, tag)| QueryRecord {
            id: format!("reference-{j}-{tag}"),
            text: None,
            dataset_tag: (*tag).to_string(),
            perf: STATS
                .iter()
                .map(|(n, accs, _)| (n.to_string(), accs[j]))
                .collect::<BTreeMap<_, _>>(),
        })
        .collect();
    Dataset::new(catalog(), records)
}

/// Catalog indices of [`POOL_ORDER`].
pub fn pool_order_indices(catalog: &LlmCatalog) -> Option<Vec<usize>> {
    POOL_ORDER.iter().map(|n| catalog.index_of(n)).collect()
}
