use crate::error::{Error, Result};
use crate::numcore::graph::{Graph, Var};

/// Projection matrices of one multi-head attention block, all `d x d`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// `softmax(Q K^T / sqrt(d_k)) V` for already projected operands.
fn attend(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let dk = g.shape(k)[1];
    let kt = g.transpose(k);
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax(scaled)?;
    g.matmul(weights, v)
}

fn check_context(g: &Graph, query: Var, context: Var) -> Result<()> {
    let [m, dc] = g.shape(context);
    if m == 0 {
        return Err(Error::Dimension("attention over an empty context".into()));
    }
    let [rq, dq] = g.shape(query);
    if rq != 1 || dq != dc {
        return Err(Error::Dimension(format!(
            "query {rq}x{dq} against context {m}x{dc}"
        )));
    }
    Ok(())
}

/// Single-head scaled dot-product attention of a `1 x d` query over the
/// `m x d` context. The scale uses the projected key width.
pub fn scaled_dot_attention(
    g: &mut Graph,
    query: Var,
    context: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var> {
    check_context(g, query, context)?;
    let q = g.matmul(query, wq)?;
    let k = g.matmul(context, wk)?;
    let v = g.matmul(context, wv)?;
    attend(g, q, k, v)
}

/// Multi-head attention: the projected query/key/value columns are split
/// into `heads` groups of width `d / heads`, each attended independently,
/// then concatenated and mapped through the output projection.
pub fn multi_head_attention(
    g: &mut Graph,
    query: Var,
    context: Var,
    w: &AttentionVars,
    heads: usize,
) -> Result<Var> {
    check_context(g, query, context)?;
    let d = g.shape(w.wq)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "hidden width {d} is not divisible by {heads} heads"
        )));
    }
    g.count_attention();
    let q = g.matmul(query, w.wq)?;
    let k = g.matmul(context, w.wk)?;
    let v = g.matmul(context, w.wv)?;
    let width = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * width, width)?;
        let kh = g.slice_cols(k, h * width, width)?;
        let vh = g.slice_cols(v, h * width, width)?;
        outs.push(attend(g, qh, kh, vh)?);
    }
    let joined = g.concat_cols(&outs)?;
    g.matmul(joined, w.wo)
}
