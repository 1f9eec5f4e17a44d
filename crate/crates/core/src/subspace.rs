//! Diagonal Gaussian concept subspaces.
//!
//! The subspace of a concept is the per-dimension mean and population
//! variance of its observed probe vectors. Vectors are sampled from it with
//! each coordinate drawn from a normal truncated to `mean +/- n * sigma`, and
//! the draw is then scaled to unit L2 norm.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GcsError, Result};
use crate::linalg::{norm, CompensatedSum};
use crate::probes::{self, fit_logistic, normalize_fit, ProbeVector, TrainConfig};
use crate::repstore::LabeledReprSet;
use crate::seed::rng;

pub const SUBSPACE_MAGIC: [u8; 4] = *b"GCSG";
pub const SUBSPACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSubspace {
    pub concept_id: String,
    pub layer: u32,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    pub m_source: u32,
}

impl GaussianSubspace {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|&v| (v as f64).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledVectorSet {
    pub concept_id: String,
    pub layer: u32,
    /// Unit-norm rows.
    pub vectors: Vec<Vec<f32>>,
    pub sigma_level: f64,
    pub paired_intercept: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MeanDifference,
    SingleLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineVector {
    pub kind: BaselineKind,
    pub vector: Vec<f32>,
    /// Zero for the mean-difference baseline.
    pub intercept: f32,
}

/// Ensemble members in the fixed reduction order (ascending subset seed).
fn reduction_order(ensemble: &[ProbeVector]) -> Vec<&ProbeVector> {
    let mut ordered: Vec<&ProbeVector> = ensemble.iter().collect();
    ordered.sort_by_key(|p| p.subset_seed);
    ordered
}

pub fn fit_gaussian(ensemble: &[ProbeVector]) -> Result<GaussianSubspace> {
    let first = ensemble.first().ok_or(GcsError::EmptySet)?;
    let d = first.dim();
    if let Some(p) = ensemble.iter().find(|p| p.dim() != d) {
        return Err(GcsError::DimensionMismatch {
            expected: d,
            found: p.dim(),
        });
    }
    let ordered = reduction_order(ensemble);
    let m = ordered.len() as f64;
    let mut mean = vec![0.0f64; d];
    let mut variance = vec![0.0f64; d];
    for i in 0..d {
        let mut s = CompensatedSum::default();
        for p in &ordered {
            s.add(p.weights[i] as f64);
        }
        mean[i] = s.value() / m;
        let mut q = CompensatedSum::default();
        for p in &ordered {
            let dev = p.weights[i] as f64 - mean[i];
            q.add(dev * dev);
        }
        variance[i] = q.value() / m;
    }
    Ok(GaussianSubspace {
        concept_id: first.concept_id.clone(),
        layer: first.layer,
        mean: mean.iter().map(|&x| x as f32).collect(),
        variance: variance.iter().map(|&x| x as f32).collect(),
        m_source: ordered.len() as u32,
    })
}

/// Mean observed intercept, paired with sampled vectors for classification.
pub fn mean_intercept(ensemble: &[ProbeVector]) -> f32 {
    if ensemble.is_empty() {
        return 0.0;
    }
    let mut s = CompensatedSum::default();
    for p in reduction_order(ensemble) {
        s.add(p.intercept as f64);
    }
    (s.value() / ensemble.len() as f64) as f32
}

fn check_sampling(n_sigma: f64, count: usize) -> Result<()> {
    if !(n_sigma > 0.0 && n_sigma.is_finite()) {
        return Err(GcsError::InvalidParameter("n_sigma must be positive".into()));
    }
    if count == 0 {
        return Err(GcsError::InvalidParameter("count must be at least 1".into()));
    }
    Ok(())
}

/// Truncated-normal draws before normalization, one row per sample.
///
/// Each coordinate is `mean + sd * Phi^-1(u)` with `u` uniform on
/// `[Phi(-n), Phi(n)]`, clamped to the truncation interval so floating-point
/// round-off can never leave it.
pub fn draw_truncated(
    gs: &GaussianSubspace,
    n_sigma: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_sampling(n_sigma, count)?;
    let std_normal = Normal::standard();
    let lo = std_normal.cdf(-n_sigma);
    let hi = std_normal.cdf(n_sigma);
    let sd = gs.std_dev();
    let mut r = rng(seed);
    Ok((0..count)
        .map(|_| {
            gs.mean
                .iter()
                .zip(&sd)
                .map(|(&mu, &s)| {
                    let u: f64 = r.random();
                    let mu = mu as f64;
                    if s == 0.0 {
                        return mu;
                    }
                    let z = std_normal.inverse_cdf(lo + (hi - lo) * u);
                    (mu + s * z).clamp(mu - n_sigma * s, mu + n_sigma * s)
                })
                .collect()
        })
        .collect())
}

pub fn sample(
    gs: &GaussianSubspace,
    n_sigma: f64,
    count: usize,
    seed: u64,
    paired_intercept: f32,
) -> Result<SampledVectorSet> {
    let raw = draw_truncated(gs, n_sigma, count, seed)?;
    let vectors = raw
        .iter()
        .map(|v| {
            let n = norm(v);
            if n == 0.0 {
                return Err(GcsError::DegenerateDirection);
            }
            Ok(v.iter().map(|&x| (x / n) as f32).collect())
        })
        .collect::<Result<Vec<Vec<f32>>>>()?;
    Ok(SampledVectorSet {
        concept_id: gs.concept_id.clone(),
        layer: gs.layer,
        vectors,
        sigma_level: n_sigma,
        paired_intercept,
        seed,
    })
}

fn class_mean(pool: &LabeledReprSet, rows: &[usize]) -> Vec<f64> {
    let d = pool.dim();
    (0..d)
        .map(|j| {
            let mut s = CompensatedSum::default();
            for &i in rows {
                s.add(pool.row(i)[j] as f64);
            }
            s.value() / rows.len() as f64
        })
        .collect()
}

/// Difference of class means, normalized. Requires equally sized classes.
pub fn mean_difference(pool: &LabeledReprSet) -> Result<BaselineVector> {
    let pos = pool.positive_indices();
    let neg = pool.negative_indices();
    if pos.is_empty() {
        return Err(GcsError::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(GcsError::EmptyClass("negative"));
    }
    if pos.len() != neg.len() {
        return Err(GcsError::UnequalClasses {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let mp = class_mean(pool, &pos);
    let mn = class_mean(pool, &neg);
    let diff: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
    let scale = norm(&mp).max(norm(&mn));
    let n = norm(&diff);
    if n == 0.0 || n <= 1e-9 * scale {
        return Err(GcsError::DegenerateDirection);
    }
    Ok(BaselineVector {
        kind: BaselineKind::MeanDifference,
        vector: diff.iter().map(|&x| (x / n) as f32).collect(),
        intercept: 0.0,
    })
}

/// One probe trained on the entire pool.
pub fn single_linear(pool: &LabeledReprSet, tcfg: &TrainConfig) -> Result<BaselineVector> {
    let all: Vec<usize> = (0..pool.len()).collect();
    let fit = fit_logistic(pool, &all, tcfg)?;
    let (vector, intercept) = normalize_fit(&fit)?;
    Ok(BaselineVector {
        kind: BaselineKind::SingleLinear,
        vector,
        intercept,
    })
}

pub fn encode_subspace(gs: &GaussianSubspace) -> Vec<u8> {
    let d = gs.dim();
    let mut out = Vec::with_capacity(16 + 8 * d);
    out.extend_from_slice(&SUBSPACE_MAGIC);
    out.extend_from_slice(&SUBSPACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for x in gs.mean.iter().chain(&gs.variance) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&gs.m_source.to_le_bytes());
    out
}

pub fn decode_subspace(bytes: &[u8], concept_id: &str, layer: u32) -> Result<GaussianSubspace> {
    if bytes.len() < 4 {
        return Err(GcsError::Truncated {
            needed: 16,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != SUBSPACE_MAGIC {
        return Err(GcsError::BadMagic {
            expected: SUBSPACE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 12 {
        return Err(GcsError::Truncated {
            needed: 16,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SUBSPACE_VERSION {
        return Err(GcsError::VersionMismatch {
            expected: SUBSPACE_VERSION,
            found: version,
        });
    }
    let d = u32_at(8) as usize;
    let needed = 12 + 8 * d + 4;
    if bytes.len() != needed {
        return Err(GcsError::Truncated {
            needed: needed as u64,
            found: bytes.len() as u64,
        });
    }
    let floats: Vec<f32> = bytes[12..12 + 8 * d]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (mean, variance) = floats.split_at(d);
    if variance.iter().any(|&v| !(v >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
        return Err(GcsError::InvalidParameter(
            "subspace has negative variance or non-finite mean".into(),
        ));
    }
    Ok(GaussianSubspace {
        concept_id: concept_id.to_string(),
        layer,
        mean: mean.to_vec(),
        variance: variance.to_vec(),
        m_source: u32_at(12 + 8 * d),
    })
}

pub fn write_subspace(path: &Path, gs: &GaussianSubspace) -> Result<()> {
    fs::write(path, encode_subspace(gs))?;
    Ok(())
}

pub fn read_subspace(path: &Path, concept_id: &str, layer: u32) -> Result<GaussianSubspace> {
    if !path.exists() {
        return Err(GcsError::MissingInput(path.to_path_buf()));
    }
    decode_subspace(&fs::read(path)?, concept_id, layer)
}

/// Sampled sets are stored in the probe-vector layout with the paired
/// intercept and set seed on every row.
pub fn sampled_as_probes(set: &SampledVectorSet) -> Vec<ProbeVector> {
    set.vectors
        .iter()
        .map(|v| ProbeVector {
            weights: v.clone(),
            intercept: set.paired_intercept,
            concept_id: set.concept_id.clone(),
            layer: set.layer,
            subset_seed: set.seed,
            final_loss: 0.0,
            iterations_used: 0,
            heldout_accuracy: 0.0,
        })
        .collect()
}

pub fn write_sampled(path: &Path, set: &SampledVectorSet) -> Result<()> {
    probes::write_ensemble(path, &sampled_as_probes(set))
}

pub fn read_sampled(path: &Path, concept_id: &str, layer: u32, sigma_level: f64) -> Result<SampledVectorSet> {
    let rows = probes::read_ensemble(path, concept_id, layer)?;
    let first = rows.first().ok_or(GcsError::EmptySet)?;
    Ok(SampledVectorSet {
        concept_id: concept_id.to_string(),
        layer,
        paired_intercept: first.intercept,
        seed: first.subset_seed,
        sigma_level,
        vectors: rows.into_iter().map(|p| p.weights).collect(),
    })
}
