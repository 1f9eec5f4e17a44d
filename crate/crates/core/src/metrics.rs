//! Faithfulness and plausibility measurements.
//!
//! Faithfulness compares observed probe vectors against sampled vectors
//! (pairwise cosine within and across the two sets, classification
//! accuracy). Plausibility looks at geometry across concepts: the mean
//! cosine between concept sets and a 2-D PCA of concept means.
//!
//! Pairwise means divide by the number of pairs actually summed:
//! `K(K-1)/2` within a set, `K1*K2` across sets, `M*M` between concepts.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};
use crate::linalg::{dot, norm};
use crate::probes::{accuracy_on, ProbeVector};
use crate::repstore::LabeledReprSet;
use crate::subspace::SampledVectorSet;

pub const HISTOGRAM_BINS: usize = 50;

/// Uniform-bin histogram of cosine values on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self::cosine()
    }
}

impl Histogram {
    pub fn cosine() -> Self {
        let edges = (0..=HISTOGRAM_BINS)
            .map(|i| -1.0 + 2.0 * i as f64 / HISTOGRAM_BINS as f64)
            .collect();
        Self {
            edges,
            counts: vec![0; HISTOGRAM_BINS],
        }
    }

    pub fn add(&mut self, value: f64) {
        let v = value.clamp(-1.0, 1.0);
        let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
        self.counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean: f64,
    pub pairs: u64,
    pub histogram: Histogram,
}

/// Element types the similarity routines accept; everything is widened to
/// `f64` before normalization.
pub trait Component: Copy + Into<f64> {}
impl Component for f32 {}
impl Component for f64 {}

fn unit_rows<T: Component>(vectors: &[Vec<T>]) -> Result<Vec<Vec<f64>>> {
    let d = vectors.first().map_or(0, Vec::len);
    vectors
        .iter()
        .map(|v| {
            if v.len() != d {
                return Err(GcsError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            let wide: Vec<f64> = v.iter().map(|&x| x.into()).collect();
            let n = norm(&wide);
            if !(n > 0.0 && n.is_finite()) {
                return Err(GcsError::DegenerateDirection);
            }
            Ok(wide.into_iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Mean cosine over the `K(K-1)/2` distinct unordered pairs.
pub fn within_set_similarity<T: Component>(vectors: &[Vec<T>]) -> Result<SimilarityStats> {
    if vectors.len() < 2 {
        return Err(GcsError::InvalidParameter(
            "within-set similarity needs at least two vectors".into(),
        ));
    }
    let units = unit_rows(vectors)?;
    let mut histogram = Histogram::cosine();
    let mut sum = 0.0;
    let mut pairs = 0u64;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            let c = dot(&units[i], &units[j]);
            histogram.add(c);
            sum += c;
            pairs += 1;
        }
    }
    Ok(SimilarityStats {
        mean: sum / pairs as f64,
        pairs,
        histogram,
    })
}

/// Mean cosine over all `K1 * K2` ordered pairs.
pub fn cross_set_similarity<T: Component>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<SimilarityStats> {
    if a.is_empty() || b.is_empty() {
        return Err(GcsError::EmptySet);
    }
    let ua = unit_rows(a)?;
    let ub = unit_rows(b)?;
    if ua[0].len() != ub[0].len() {
        return Err(GcsError::DimensionMismatch {
            expected: ua[0].len(),
            found: ub[0].len(),
        });
    }
    let mut histogram = Histogram::cosine();
    let mut sum = 0.0;
    for x in &ua {
        for y in &ub {
            let c = dot(x, y);
            histogram.add(c);
            sum += c;
        }
    }
    let pairs = (ua.len() * ub.len()) as u64;
    Ok(SimilarityStats {
        mean: sum / pairs as f64,
        pairs,
        histogram,
    })
}

/// Mean over vectors of the fraction of `eval_set` rows each classifies
/// correctly (zero scores count as positive).
pub fn ensemble_accuracy(
    vectors: &[Vec<f32>],
    intercepts: &[f32],
    eval_set: &LabeledReprSet,
) -> Result<f64> {
    if vectors.is_empty() {
        return Err(GcsError::EmptySet);
    }
    if intercepts.len() != vectors.len() {
        return Err(GcsError::DimensionMismatch {
            expected: vectors.len(),
            found: intercepts.len(),
        });
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != eval_set.dim()) {
        return Err(GcsError::DimensionMismatch {
            expected: eval_set.dim(),
            found: v.len(),
        });
    }
    let total: f64 = vectors
        .iter()
        .zip(intercepts)
        .map(|(v, &b)| accuracy_on(v, b, eval_set, 0..eval_set.len()).unwrap_or(0.0))
        .sum();
    Ok(total / vectors.len() as f64)
}

/// Mean held-out accuracy of observed probes, each scored on the pool rows
/// its own subset never drew.
pub fn observed_accuracy(observed: &[ProbeVector]) -> Result<f64> {
    if observed.is_empty() {
        return Err(GcsError::EmptySet);
    }
    Ok(observed.iter().map(|p| p.heldout_accuracy as f64).sum::<f64>() / observed.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub concept_id: String,
    pub layer: u32,
    pub sigma_level: f64,
    pub s_observed: f64,
    pub s_sampled: f64,
    pub s_cross: f64,
    pub a_observed: f64,
    pub a_sampled: f64,
    pub hist_observed: Histogram,
    pub hist_sampled: Histogram,
    pub hist_cross: Histogram,
}

pub fn faithfulness(
    observed: &[ProbeVector],
    sampled: &SampledVectorSet,
    pool: &LabeledReprSet,
) -> Result<FaithfulnessReport> {
    let w: Vec<Vec<f32>> = observed.iter().map(|p| p.weights.clone()).collect();
    let so = within_set_similarity(&w)?;
    let ss = within_set_similarity(&sampled.vectors)?;
    let sx = cross_set_similarity(&w, &sampled.vectors)?;
    let intercepts = vec![sampled.paired_intercept; sampled.vectors.len()];
    Ok(FaithfulnessReport {
        concept_id: sampled.concept_id.clone(),
        layer: sampled.layer,
        sigma_level: sampled.sigma_level,
        s_observed: so.mean,
        s_sampled: ss.mean,
        s_cross: sx.mean,
        a_observed: observed_accuracy(observed)?,
        a_sampled: ensemble_accuracy(&sampled.vectors, &intercepts, pool)?,
        hist_observed: so.histogram,
        hist_sampled: ss.histogram,
        hist_cross: sx.histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSimilarityMatrix {
    pub concept_ids: Vec<String>,
    /// Row-major `C x C`.
    pub values: Vec<Vec<f64>>,
}

impl ConceptSimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("concept_id");
        for id in &self.concept_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in self.concept_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Mean intra-group and inter-group off-diagonal entries.
    pub fn block_means(&self, groups: &[usize]) -> (f64, f64) {
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.values.len() {
            for j in 0..self.values.len() {
                if i == j {
                    continue;
                }
                if groups[i] == groups[j] {
                    intra += self.values[i][j];
                    ni += 1;
                } else {
                    inter += self.values[i][j];
                    nx += 1;
                }
            }
        }
        (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
    }
}

/// Mean cosine over all `M x M` ordered pairs between every two sets.
///
/// The mean of pairwise dot products of unit rows equals the dot product of
/// the row means, so each entry costs `O((M1 + M2) d)`.
pub fn concept_similarity_matrix(sets: &[SampledVectorSet]) -> Result<ConceptSimilarityMatrix> {
    let vectors: Vec<&[Vec<f32>]> = sets.iter().map(|s| s.vectors.as_slice()).collect();
    let values = similarity_values(&vectors)?;
    Ok(ConceptSimilarityMatrix {
        concept_ids: sets.iter().map(|s| s.concept_id.clone()).collect(),
        values,
    })
}

/// Matrix entries for arbitrary vector sets, in input order.
pub fn similarity_values<T: Component>(sets: &[&[Vec<T>]]) -> Result<Vec<Vec<f64>>> {
    if sets.len() < 2 {
        return Err(GcsError::InvalidParameter(
            "similarity matrix needs at least two concept sets".into(),
        ));
    }
    let d = sets[0].first().map_or(0, Vec::len);
    let mut centroids = Vec::with_capacity(sets.len());
    for s in sets {
        if s.is_empty() {
            return Err(GcsError::EmptySet);
        }
        let units = unit_rows(s)?;
        if units[0].len() != d {
            return Err(GcsError::DimensionMismatch {
                expected: d,
                found: units[0].len(),
            });
        }
        let mut c = vec![0.0; d];
        for u in &units {
            for (ci, ui) in c.iter_mut().zip(u) {
                *ci += ui;
            }
        }
        let k = units.len() as f64;
        c.iter_mut().for_each(|x| *x /= k);
        centroids.push(c);
    }
    let n = sets.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&centroids[i], &centroids[j]);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(values)
}

/// Arithmetic mean of a vector set's rows.
pub fn set_mean(vectors: &[Vec<f32>]) -> Vec<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for v in vectors {
        for (mi, &x) in m.iter_mut().zip(v) {
            *mi += x as f64;
        }
    }
    let k = vectors.len().max(1) as f64;
    m.iter_mut().for_each(|x| *x /= k);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub concept_ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub explained_variance_ratio: [f64; 2],
}

impl PcaProjection {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("concept_id,x,y\n");
        for (id, c) in self.concept_ids.iter().zip(&self.coords) {
            let _ = writeln!(out, "{id},{},{}", c[0], c[1]);
        }
        out
    }
}

const RANK_TOLERANCE: f64 = 1e-10;

/// Projects concept means onto their top two principal directions.
///
/// Rows are centered and decomposed by exact SVD. Each direction is signed
/// so its largest-magnitude loading is positive. Centered rank below two is
/// an error unless `allow_rank_one` is set, in which case the second
/// coordinate is zero.
pub fn pca_project(
    means: &[Vec<f64>],
    ids: &[String],
    allow_rank_one: bool,
) -> Result<PcaProjection> {
    let c = means.len();
    if c < 3 {
        return Err(GcsError::InvalidParameter(
            "PCA needs at least three concepts".into(),
        ));
    }
    if ids.len() != c {
        return Err(GcsError::DimensionMismatch {
            expected: c,
            found: ids.len(),
        });
    }
    let d = means[0].len();
    if let Some(m) = means.iter().find(|m| m.len() != d) {
        return Err(GcsError::DimensionMismatch {
            expected: d,
            found: m.len(),
        });
    }
    let mut center = vec![0.0; d];
    for m in means {
        for (ci, x) in center.iter_mut().zip(m) {
            *ci += x;
        }
    }
    center.iter_mut().for_each(|x| *x /= c as f64);
    let x = DMatrix::from_fn(c, d, |i, j| means[i][j] - center[j]);

    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let s1 = s.first().copied().unwrap_or(0.0);
    let s2 = s.get(1).copied().unwrap_or(0.0);
    let rank = if s1 <= f64::MIN_POSITIVE {
        0
    } else if s2 <= RANK_TOLERANCE * s1 {
        1
    } else {
        2
    };
    if rank == 0 || (rank == 1 && !allow_rank_one) {
        return Err(GcsError::DegenerateRank(rank));
    }

    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(2);
    for (slot, &k) in order.iter().take(2).enumerate() {
        if slot == 1 && rank < 2 {
            directions.push(vec![0.0; d]);
            continue;
        }
        let mut dir: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = dir
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > dir[best].abs() { i } else { best });
        if dir[lead] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        directions.push(dir);
    }
    let coords = (0..c)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            [dot(&row, &directions[0]), dot(&row, &directions[1])]
        })
        .collect();
    let ratio = |v: f64| if total > 0.0 { v * v / total } else { 0.0 };
    Ok(PcaProjection {
        concept_ids: ids.to_vec(),
        coords,
        explained_variance_ratio: [ratio(s1), if rank < 2 { 0.0 } else { ratio(s2) }],
    })
}

/// Mean 2-D distance between concepts in the same group and in different
/// groups.
pub fn cluster_distances(proj: &PcaProjection, groups: &[usize]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..proj.coords.len() {
        for j in i + 1..proj.coords.len() {
            let dx = proj.coords[i][0] - proj.coords[j][0];
            let dy = proj.coords[i][1] - proj.coords[j][1];
            let dist = (dx * dx + dy * dy).sqrt();
            if groups[i] == groups[j] {
                intra += dist;
                ni += 1;
            } else {
                inter += dist;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}
