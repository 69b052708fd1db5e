//! Dense two-dimensional tensors and the small reverse-mode differentiation
//! engine the router trains with.

mod attention;
mod gradcheck;
mod graph;
mod tensor;

pub use attention::{multi_head_attention, scaled_dot_attention, AttentionVars};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use graph::{Graph, GraphStats, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

pub(crate) use graph::{log_sum_exp, softmax_in_place};

use crate::error::{dim_err, Result};

/// Numerically stable softmax of a score vector.
pub fn softmax_row(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return dim_err("softmax over an empty vector");
    }
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests;
