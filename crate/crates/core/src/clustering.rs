//! Semantic grouping of training queries: exact t-SNE, k-means and the
//! in-group/out-group sampler used by the query-query contrastive loss.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::parallel;

pub const PCA_DIM: usize = 50;
pub const DEFAULT_GROUPS: usize = 6;
const JITTER: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    #[serde(default = "default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Step size; `None` picks `max(m / (4 * exaggeration), 50)`.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_exaggeration")]
    pub early_exaggeration: f64,
    /// Iterations with exaggerated affinities and low momentum.
    #[serde(default = "default_exaggeration_iters")]
    pub exaggeration_iters: usize,
}

fn default_perplexity() -> f64 {
    30.0
}
fn default_iterations() -> usize {
    1000
}
fn default_dim() -> usize {
    2
}
fn default_exaggeration() -> f64 {
    12.0
}
fn default_exaggeration_iters() -> usize {
    250
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: default_perplexity(),
            iterations: default_iterations(),
            dim: default_dim(),
            learning_rate: None,
            early_exaggeration: default_exaggeration(),
            exaggeration_iters: default_exaggeration_iters(),
        }
    }
}

/// Projects rows onto their top `k` principal directions.
pub fn pca(x: &Tensor, k: usize) -> Result<Tensor> {
    let (m, d) = (x.rows(), x.cols());
    if k == 0 || k > d {
        return Err(Error::Config(format!("cannot keep {k} of {d} principal directions")));
    }
    let mut centered = DMatrix::from_row_slice(m, d, x.data());
    for j in 0..d {
        let mean = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, k);
    for (c, &src) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(c, &v);
    }
    let proj = centered * basis;
    let mut data = Vec::with_capacity(m * k);
    for i in 0..m {
        data.extend(proj.row(i).iter());
    }
    Tensor::new(m, k, data)
}

fn squared_distances(x: &Tensor) -> Vec<f64> {
    let m = x.rows();
    let mut d = vec![0.0; m * m];
    parallel::for_each_chunk_mut(&mut d, m, |i, row| {
        let xi = x.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Conditional affinities of one point with entropy `ln(perplexity)`,
/// found by bisection on the precision.
fn conditional_row(dist: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    for _ in 0..100 {
        let min = dist
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&dj, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
            *o = if j == i { 0.0 } else { (-(dj - min) * beta).exp() };
            sum += *o;
            weighted += *o * (dj - min);
        }
        let entropy = sum.ln() + beta * weighted / sum;
        out.iter_mut().for_each(|o| *o /= sum);
        let gap = entropy - target;
        if gap.abs() < 1e-5 {
            break;
        }
        if gap > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
}

/// Jitters rows that exactly duplicate another row.
fn jitter_duplicates(x: &mut Tensor, rng: &mut ChaCha8Rng) -> usize {
    let m = x.rows();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut dup = vec![false; m];
    for i in 0..m {
        let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        if let Some(&first) = seen.get(&key) {
            dup[first] = true;
            dup[i] = true;
        } else {
            seen.insert(key, i);
        }
    }
    for (i, _) in dup.iter().enumerate().filter(|(_, d)| **d) {
        for v in x.row_mut(i) {
            *v += rng.random_range(-JITTER..JITTER);
        }
    }
    dup.iter().filter(|d| **d).count()
}

/// Exact t-SNE embedding of the rows of `x`.
pub fn tsne_project(x: &Tensor, cfg: &TsneConfig, seed: u64) -> Result<Tensor> {
    let m = x.rows();
    if m < 4 {
        return Err(Error::Config(format!("t-SNE needs at least 4 points, got {m}")));
    }
    if cfg.dim == 0 || cfg.iterations == 0 {
        return Err(Error::Config("t-SNE dimension and iterations must be positive".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = if x.cols() > PCA_DIM { pca(x, PCA_DIM)? } else { x.clone() };
    let n_dup = jitter_duplicates(&mut x, &mut rng);
    if n_dup > 0 {
        log::debug!("jittered {n_dup} duplicate embeddings");
    }

    let max_perp = (m - 1) as f64 / 3.0;
    let mut perplexity = cfg.perplexity;
    if perplexity >= max_perp {
        perplexity = (0.99 * max_perp).max(1.0);
        log::warn!("perplexity {} clamped to {perplexity} for {m} points", cfg.perplexity);
    }

    let dist = squared_distances(&x);
    let mut cond = vec![0.0; m * m];
    parallel::for_each_chunk_mut(&mut cond, m, |i, row| {
        conditional_row(&dist[i * m..(i + 1) * m], i, perplexity, row)
    });
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] = ((cond[i * m + j] + cond[j * m + i]) / (2.0 * m as f64)).max(1e-12);
        }
    }

    let dim = cfg.dim;
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (m as f64 / (4.0 * cfg.early_exaggeration)).max(50.0));
    let mut y = Tensor::normal(m, dim, 1e-4, &mut rng).into_data();
    let mut update = vec![0.0; m * dim];
    let mut gains = vec![1.0f64; m * dim];
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let yr = &y;
        let num: Vec<f64> = parallel::map_range(m * m, |k| {
            let (i, j) = (k / m, k % m);
            if i == j {
                return 0.0;
            }
            let d2: f64 = (0..dim).map(|c| (yr[i * dim + c] - yr[j * dim + c]).powi(2)).sum();
            1.0 / (1.0 + d2)
        });
        let z: f64 = num.iter().sum();
        let grads: Vec<f64> = parallel::map_range(m, |i| {
            let mut g = vec![0.0; dim];
            for j in 0..m {
                if i == j {
                    continue;
                }
                let nij = num[i * m + j];
                let coef = 4.0 * (exag * p[i * m + j] - nij / z) * nij;
                for (c, gc) in g.iter_mut().enumerate() {
                    *gc += coef * (yr[i * dim + c] - yr[j * dim + c]);
                }
            }
            g
        })
        .concat();
        for k in 0..m * dim {
            let same_sign = (grads[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign { (gains[k] * 0.8).max(0.01) } else { gains[k] + 0.2 };
            update[k] = momentum * update[k] - lr * gains[k] * grads[k];
            y[k] += update[k];
        }
        for c in 0..dim {
            let mean = (0..m).map(|i| y[i * dim + c]).sum::<f64>() / m as f64;
            (0..m).for_each(|i| y[i * dim + c] -= mean);
        }
    }
    let out = Tensor::new(m, dim, y)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// 0-based cluster of each point.
    pub assignment: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq(p, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = points.rows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = (0..m).map(|i| sq(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            // every point coincides with a seed; take an unused index
            let free: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            *free.choose(rng).expect("k <= m")
        };
        chosen.push(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq(points.row(i), points.row(next)));
        }
    }
    chosen
}

/// Lloyd iterations from k-means++ seeds. An empty cluster is moved to the
/// point farthest from its current centroid.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let (m, dim) = (points.rows(), points.cols());
    if k == 0 || k > m {
        return Err(Error::Config(format!("cannot form {k} clusters from {m} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = plus_plus_seeds(points, k, &mut rng);
    let mut centroids = Tensor::zeros(k, dim);
    for (c, &s) in seeds.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(s));
    }
    let mut assignment = vec![usize::MAX; m];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; m];
        for i in 0..m {
            let (c, d) = nearest(points.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = trace.last() {
            if inertia > prev + 1e-9 * prev.abs().max(1.0) {
                return Err(Error::Contract(format!("k-means inertia rose from {prev} to {inertia}")));
            }
        }
        trace.push(inertia);
        if !changed && trace.len() > 1 {
            converged = true;
            break;
        }
        let mut sums = Tensor::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[assignment[i]] += 1;
            sums.row_mut(assignment[i])
                .iter_mut()
                .zip(points.row(i))
                .for_each(|(s, p)| *s += p);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centroids.row_mut(c);
                row.iter_mut()
                    .zip(sums.row(c))
                    .for_each(|(v, s)| *v = s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = sq(points.row(a), centroids.row(assignment[a]));
                        let db = sq(points.row(b), centroids.row(assignment[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("m > 0");
                log::debug!("re-seeding empty cluster {c} at point {far}");
                let p = points.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&p);
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
            }
        }
    }
    let inertia = (0..m).map(|i| sq(points.row(i), centroids.row(assignment[i]))).sum();
    Ok(KMeans {
        assignment,
        centroids,
        inertia,
        trace,
        converged,
    })
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(clusters: &[usize], labels: &[usize]) -> f64 {
    if clusters.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in clusters.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / clusters.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Group count; `None` means one group per dataset tag.
    #[serde(default)]
    pub n_groups: Option<usize>,
    #[serde(default)]
    pub tsne: TsneConfig,
    #[serde(default = "default_kmeans_iter")]
    pub kmeans_max_iter: usize,
}

fn default_kmeans_iter() -> usize {
    300
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_groups: None,
            tsne: TsneConfig::default(),
            kmeans_max_iter: default_kmeans_iter(),
        }
    }
}

/// Group of every training query. Group ids are 1-based in the file and
/// in [`SemanticGroups::assignment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticGroups {
    pub n_groups: usize,
    pub projection_dim: usize,
    pub seed: u64,
    pub perplexity: f64,
    pub assignment: BTreeMap<String, usize>,
    pub centroids: Tensor,
}

impl SemanticGroups {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let g: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some((id, &bad)) = g.assignment.iter().find(|(_, &v)| v == 0 || v > g.n_groups) {
            return Err(Error::Format(format!("query {id:?} has group {bad} outside 1..={}", g.n_groups)));
        }
        Ok(g)
    }

    /// 0-based group of each id, in the given order.
    pub fn labels_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.assignment
                    .get(id.as_ref())
                    .map(|g| g - 1)
                    .ok_or_else(|| Error::Validation(format!("query {:?} has no group", id.as_ref())))
            })
            .collect()
    }

    /// SHA-256 of the assignment in id order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, g) in &self.assignment {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
            h.update((*g as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// t-SNE followed by k-means over the given query embeddings.
pub fn group_queries<S: AsRef<str>>(
    ids: &[S],
    embeddings: &Tensor,
    n_groups: usize,
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<SemanticGroups> {
    if ids.len() != embeddings.rows() {
        return Err(Error::Dimension(format!("{} ids for {} embeddings", ids.len(), embeddings.rows())));
    }
    let coords = tsne_project(embeddings, &cfg.tsne, seed)?;
    let km = kmeans(&coords, n_groups, seed, cfg.kmeans_max_iter)?;
    let max_perp = (ids.len() - 1) as f64 / 3.0;
    Ok(SemanticGroups {
        n_groups,
        projection_dim: cfg.tsne.dim,
        seed,
        perplexity: if cfg.tsne.perplexity >= max_perp { (0.99 * max_perp).max(1.0) } else { cfg.tsne.perplexity },
        assignment: ids
            .iter()
            .zip(&km.assignment)
            .map(|(id, &c)| (id.as_ref().to_string(), c + 1))
            .collect(),
        centroids: km.centroids,
    })
}

/// In-group positive and up to `h` out-group negatives for the anchor at
/// position `anchor` of `batch`. `groups[q]` is the group of dataset row
/// `q`. Returns `None` when the batch holds no in-group partner.
pub fn sample_contrastive_pair<R: Rng + ?Sized>(
    batch: &[usize],
    groups: &[usize],
    anchor: usize,
    h: usize,
    rng: &mut R,
) -> Option<(usize, Vec<usize>)> {
    let a = batch[anchor];
    let g = groups[a];
    let partners: Vec<usize> = batch
        .iter()
        .enumerate()
        .filter(|&(pos, &q)| pos != anchor && groups[q] == g)
        .map(|(_, &q)| q)
        .collect();
    let positive = *partners.choose(rng)?;
    let outsiders: Vec<usize> = batch.iter().copied().filter(|&q| groups[q] != g).collect();
    if outsiders.is_empty() {
        return None;
    }
    let negatives = outsiders.choose_multiple(rng, h.min(outsiders.len())).copied().collect();
    Some((positive, negatives))
}
