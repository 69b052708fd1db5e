//! Training objectives. Each loss has a plain value function and a graph
//! builder that records the same computation for backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{log_sum_exp, Graph, Tensor, Var};
use crate::router::select;

/// Floor applied to target probabilities before taking their log.
pub const TARGET_FLOOR: f64 = 1e-12;
const DIST_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// KL divergence from the routing distribution to the score softmax.
    #[default]
    Kl,
    /// Cross-entropy against the best LLM.
    Ce,
    /// Top-K versus bottom-K query-LLM contrast.
    Ql,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Kl => "kl",
            LossKind::Ce => "ce",
            LossKind::Ql => "ql",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(LossKind::Kl),
            "ce" => Ok(LossKind::Ce),
            "ql" => Ok(LossKind::Ql),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the query-query contrastive term.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Out-group negatives per anchor.
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    /// Top and bottom set size of the query-LLM loss.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub kind: LossKind,
    /// Query-LLM loss over logits instead of probabilities.
    #[serde(default)]
    pub ql_on_logits: bool,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_negatives() -> usize {
    4
}
fn default_k() -> usize {
    3
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            negatives: default_negatives(),
            k: default_k(),
            kind: LossKind::Kl,
            ql_on_logits: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.negatives == 0 {
            return Err(Error::Config("at least one out-group negative is required".into()));
        }
        if self.kind == LossKind::Ql {
            check_k(self.k, n)?;
        }
        Ok(())
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || 2 * k > n {
        return Err(Error::Config(format!("top/bottom size {k} needs 1 <= 2K <= n = {n}")));
    }
    Ok(())
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(Error::Validation(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `sum_i p_i ln(p_i / max(q_i, 1e-12))`, with `0 ln 0 = 0`.
pub fn kl_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(Error::Validation(format!("p has {} entries, q has {}", p.len(), q.len())));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(TARGET_FLOOR).ln()))
        .sum())
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of width {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Validation("cosine similarity of a zero vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// InfoNCE over cosine similarities with the positive in first place.
pub fn qq_contrastive_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Config("at least one negative is required".into()));
    }
    let mut sims = vec![cosine(anchor, positive)?];
    for n in negatives {
        sims.push(cosine(anchor, n)?);
    }
    Ok(log_sum_exp(&sims) - sims[0])
}

pub fn combined_objective(kl: f64, qq: f64, lambda: f64) -> Result<f64> {
    if !(kl.is_finite() && qq.is_finite() && lambda.is_finite()) {
        return Err(Error::NonFinite("loss term".into()));
    }
    Ok(kl + lambda * qq)
}

/// `-ln p_label`.
pub fn ce_loss(p: &[f64], label: usize) -> Result<f64> {
    check_distribution(p, "p")?;
    let pl = p
        .get(label)
        .ok_or_else(|| Error::Index(format!("label {label} of {}", p.len())))?;
    Ok(-pl.ln())
}

/// Label for the cross-entropy loss: best true score, lowest index on ties.
pub fn ce_label(true_scores: &[f64]) -> Result<usize> {
    select(true_scores)
}

/// Top-K indices by true score (ties to lower index), then bottom-K among
/// the rest (ties to lower index).
pub fn top_bottom(true_scores: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    check_k(k, true_scores.len())?;
    let mut order: Vec<usize> = (0..true_scores.len()).collect();
    order.sort_by(|&a, &b| true_scores[b].total_cmp(&true_scores[a]).then(a.cmp(&b)));
    let top = order[..k].to_vec();
    let mut rest = order[k..].to_vec();
    rest.sort_by(|&a, &b| true_scores[a].total_cmp(&true_scores[b]).then(a.cmp(&b)));
    Ok((top, rest[..k].to_vec()))
}

/// `sum_{i in I} -ln(e^{x_i} / (e^{x_i} + sum_{j in J} e^{x_j}))` where `x`
/// is usually the routing distribution itself.
pub fn ql_contrastive_loss(x: &[f64], true_scores: &[f64], k: usize) -> Result<f64> {
    if x.len() != true_scores.len() {
        return Err(Error::Validation(format!(
            "{} inputs for {} scores",
            x.len(),
            true_scores.len()
        )));
    }
    let (top, bottom) = top_bottom(true_scores, k)?;
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(k + 1);
    for &i in &top {
        terms.clear();
        terms.push(x[i]);
        terms.extend(bottom.iter().map(|&j| x[j]));
        total += log_sum_exp(&terms) - x[i];
    }
    Ok(total)
}

/// KL term on `1 x n` logits against a fixed target.
pub fn kl_graph(g: &mut Graph, logits: Var, target: &[f64]) -> Result<Var> {
    let log_q = Tensor::row_vector(target.iter().map(|q| q.max(TARGET_FLOOR).ln()).collect());
    if g.shape(logits) != log_q.shape() {
        return Err(Error::Dimension(format!(
            "logits {:?} vs target of {}",
            g.shape(logits),
            target.len()
        )));
    }
    let lp = g.log_softmax(logits)?;
    let p = g.softmax(logits)?;
    let lq = g.constant(log_q);
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    Ok(g.sum(terms))
}

/// Cross-entropy term on `1 x n` logits.
pub fn ce_graph(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let n = g.shape(logits)[1];
    if label >= n {
        return Err(Error::Index(format!("label {label} of {n}")));
    }
    let lp = g.log_softmax(logits)?;
    let picked = g.select_cols(lp, &[label])?;
    Ok(g.scale(picked, -1.0))
}

/// Query-LLM contrastive term on `1 x n` logits. With `on_logits` the
/// exponentials act on the logits instead of the probabilities.
pub fn ql_graph(g: &mut Graph, logits: Var, true_scores: &[f64], k: usize, on_logits: bool) -> Result<Var> {
    let n = g.shape(logits)[1];
    if n != true_scores.len() {
        return Err(Error::Dimension(format!("{n} logits for {} scores", true_scores.len())));
    }
    let (top, bottom) = top_bottom(true_scores, k)?;
    let x = if on_logits { logits } else { g.softmax(logits)? };
    let mut terms = Vec::with_capacity(k);
    for &i in &top {
        let mut cols = vec![i];
        cols.extend_from_slice(&bottom);
        let sel = g.select_cols(x, &cols)?;
        let ls = g.log_softmax(sel)?;
        let first = g.select_cols(ls, &[0])?;
        terms.push(first);
    }
    let stacked = g.concat_cols(&terms)?;
    let total = g.sum(stacked);
    Ok(g.scale(total, -1.0))
}

/// Query-query contrastive term on projected `1 x d` rows.
pub fn qq_graph(g: &mut Graph, anchor: Var, positive: Var, negatives: &[Var]) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::Config("at least one negative is required".into()));
    }
    let a = g.l2_normalize(anchor)?;
    let mut rows = vec![positive];
    rows.extend_from_slice(negatives);
    let others = g.concat_rows(&rows)?;
    let others = g.l2_normalize(others)?;
    let ot = g.transpose(others);
    let sims = g.matmul(a, ot)?;
    let ls = g.log_softmax(sims)?;
    let first = g.select_cols(ls, &[0])?;
    Ok(g.scale(first, -1.0))
}
