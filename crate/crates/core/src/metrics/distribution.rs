//! Embedding-space metrics: FID, diversity, R-precision, multimodal
//! distance and part-level similarity.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};

/// Covariance ridge added before the matrix square root.
pub const FID_RIDGE: f64 = 1e-6;
pub const DEFAULT_POOL_SIZE: usize = 32;
pub const MAX_DIVERSITY_PAIRS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Motion,
    Text,
}

/// `n × d` embeddings from one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    pub origin: Origin,
    pub encoder: String,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, origin: Origin, encoder: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("feature rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite embedding".into()));
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data: rows.into_iter().flatten().collect(),
            origin,
            encoder: encoder.into(),
        })
    }

    pub fn from_f32(rows: &[Vec<f32>], origin: Origin, encoder: impl Into<String>) -> Result<Self> {
        Self::new(
            rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
            origin,
            encoder,
        )
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.dim, &self.data)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_aligned(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "feature sets misaligned: {}x{} vs {}x{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean and unbiased covariance of the rows.
pub fn fit_gaussian(a: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.len() < 2 {
        return Err(Error::InvalidArgument("need at least two embeddings to fit a Gaussian".into()));
    }
    let m = a.matrix();
    let mean = DVector::from_iterator(a.dim(), m.column_iter().map(|c| c.mean()));
    let centered = DMatrix::from_fn(a.len(), a.dim(), |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (a.len() - 1) as f64;
    Ok((mean, cov))
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians. The trace of `(ΣaΣb)^{1/2}` is
/// computed from the eigenvalues of the symmetric `√Σa Σb √Σa`.
pub fn frechet_distance(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    if mu_a.len() != mu_b.len() || cov_a.shape() != cov_b.shape() {
        return Err(Error::shape("Gaussian dimensions differ"));
    }
    let ridge = DMatrix::identity(mu_a.len(), mu_a.len()) * FID_RIDGE;
    let ca = cov_a + &ridge;
    let cb = cov_b + &ridge;
    let ra = symmetric_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = (mu_a - mu_b).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::Validation("non-finite Fréchet distance".into()));
    }
    Ok(d.max(0.0))
}

pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("feature sets have different widths"));
    }
    let (mu_a, cov_a) = fit_gaussian(a)?;
    let (mu_b, cov_b) = fit_gaussian(b)?;
    frechet_distance(&mu_a, &cov_a, &mu_b, &cov_b)
}

/// `min(300, ⌊n/2⌋)`.
pub fn default_diversity_pairs(n: usize) -> usize {
    MAX_DIVERSITY_PAIRS.min(n / 2)
}

/// Disjoint index pairs from a seeded shuffle of `0..n`.
pub fn diversity_pairs(n: usize, num_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if num_pairs == 0 || 2 * num_pairs > n {
        return Err(Error::InvalidArgument(format!(
            "{num_pairs} disjoint pairs need at least {} embeddings, have {n}",
            2 * num_pairs.max(1)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..num_pairs).map(|i| (order[2 * i], order[2 * i + 1])).collect())
}

/// Mean Euclidean distance over the given pairs.
pub fn mean_pair_distance(a: &FeatureSet, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs".into()));
    }
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= a.len() || *j >= a.len()) {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) out of range")));
    }
    Ok(pairs.iter().map(|&(i, j)| distance(a.row(i), a.row(j))).sum::<f64>() / pairs.len() as f64)
}

pub fn diversity(a: &FeatureSet, num_pairs: usize, seed: u64) -> Result<f64> {
    mean_pair_distance(a, &diversity_pairs(a.len(), num_pairs, seed)?)
}

/// Top-k retrieval accuracy of text→motion within random pools.
///
/// For anchor text `i` the pool is motion `i` plus `pool_size − 1`
/// distinct distractors drawn with a seed derived from `(seed, i)`.
/// Candidates are ranked by Euclidean distance; a distractor at exactly
/// the true distance ranks ahead of the true motion only if its index is
/// lower. Returns one accuracy per entry of `ks`.
pub fn r_precision(
    motion: &FeatureSet,
    text: &FeatureSet,
    pool_size: usize,
    ks: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    check_aligned(motion, text)?;
    let n = motion.len();
    if pool_size == 0 || n < pool_size {
        return Err(Error::InvalidArgument(format!(
            "pool size {pool_size} needs at least that many pairs, have {n}"
        )));
    }
    let ranks = exec.map(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let distractors = rand::seq::index::sample(&mut rng, n - 1, pool_size - 1);
        let anchor = text.row(i);
        let true_dist = distance(anchor, motion.row(i));
        distractors
            .iter()
            .map(|j| if j >= i { j + 1 } else { j })
            .filter(|&j| {
                let d = distance(anchor, motion.row(j));
                d < true_dist || (d == true_dist && j < i)
            })
            .count()
            + 1
    });
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64)
        .collect())
}

/// Mean distance between row-aligned motion and text embeddings.
pub fn mm_dist(motion: &FeatureSet, text: &FeatureSet) -> Result<f64> {
    check_aligned(motion, text)?;
    if motion.is_empty() {
        return Err(Error::InvalidArgument("no pairs".into()));
    }
    Ok((0..motion.len()).map(|i| distance(motion.row(i), text.row(i))).sum::<f64>() / motion.len() as f64)
}

/// `½(cos θ + 1)` between a part's motion and text embeddings.
pub fn pmm_sim(z_motion: &[f64], z_text: &[f64]) -> Result<f64> {
    if z_motion.len() != z_text.len() {
        return Err(Error::shape("embedding widths differ"));
    }
    let nm = z_motion.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = z_text.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nm == 0.0 || nt == 0.0 {
        return Err(Error::InvalidArgument("similarity of a zero vector".into()));
    }
    let cos = z_motion.iter().zip(z_text).map(|(a, b)| a * b).sum::<f64>() / (nm * nt);
    Ok((0.5 * (cos + 1.0)).clamp(0.0, 1.0))
}

/// Mean [`pmm_sim`] over aligned rows.
pub fn mean_pmm_sim(motion: &FeatureSet, text: &FeatureSet) -> Result<f64> {
    check_aligned(motion, text)?;
    let mut total = 0.0;
    for i in 0..motion.len() {
        total += pmm_sim(motion.row(i), text.row(i))?;
    }
    Ok(total / motion.len().max(1) as f64)
}
