use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_FRACTIONS: (f64, f64) = (0.7, 0.1);

/// Stratified split by label. Within each stratum the indices are shuffled
/// and cut at rounded `train` and `val` fractions; the remainder is test.
pub fn stratified_split<L: Ord>(labels: &[L], train: f64, val: f64, seed: u64) -> Result<Split> {
    if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(Error::Config(format!("invalid split fractions {train}/{val}")));
    }
    let mut strata: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        strata.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let m = idx.len();
        let n_train = ((m as f64 * train).round() as usize).min(m);
        let n_val = ((m as f64 * val).round() as usize).min(m - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
