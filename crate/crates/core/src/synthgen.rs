//! Seeded generator of two-level concept hierarchies.
//!
//! Each group has a mean direction of norm `group_scale`; each concept in the
//! group adds an offset of norm `concept_scale` orthogonal to its group mean.
//! Positives for a concept are its mean plus isotropic Gaussian noise;
//! negatives are drawn uniformly from the positive distributions of all other
//! concepts.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};
use crate::linalg::{dot, norm};
use crate::repstore::LabeledReprSet;
use crate::seed::{derive_seed, rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySpec {
    pub n_groups: usize,
    pub concepts_per_group: usize,
    pub dim: usize,
    /// Samples per class; each set has this many positives and negatives.
    pub samples_per_concept: usize,
    pub group_scale: f64,
    pub concept_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            n_groups: 4,
            concepts_per_group: 4,
            dim: 128,
            samples_per_concept: 1000,
            group_scale: 12.0,
            concept_scale: 10.0,
            noise_scale: 2.0,
            seed: 7,
        }
    }
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GcsError::InvalidParameter(m.to_string()));
        if self.n_groups == 0 || self.concepts_per_group == 0 || self.samples_per_concept == 0 {
            return bad("group count, concepts per group and samples per concept must be positive");
        }
        if self.dim < 2 || self.n_groups > self.dim {
            return bad("dim must be at least 2 and no smaller than the number of groups");
        }
        if self.n_concepts() < 2 {
            return bad("at least two concepts are needed to draw negatives");
        }
        if !(self.concept_scale > 0.0 && self.group_scale > self.concept_scale) {
            return bad("scales must satisfy group_scale > concept_scale > 0");
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return bad("noise_scale must be positive");
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.n_groups * self.concepts_per_group
    }

    pub fn concept_id(&self, group: usize, concept: usize) -> String {
        format!("g{group}_c{concept}")
    }

    /// Group index of each concept in generation order.
    pub fn group_of(&self) -> Vec<usize> {
        (0..self.n_concepts())
            .map(|k| k / self.concepts_per_group)
            .collect()
    }
}

/// Noise-free concept geometry.
#[derive(Debug, Clone)]
pub struct ConceptGeometry {
    pub group_means: Vec<Vec<f64>>,
    /// Concept means in group-major order.
    pub concept_means: Vec<Vec<f64>>,
    pub concept_ids: Vec<String>,
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn remove_component(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    for (x, u) in v.iter_mut().zip(unit) {
        *x -= c * u;
    }
}

fn scale_to(v: &mut [f64], target: f64) -> Result<()> {
    let n = norm(v);
    if n < 1e-12 {
        return Err(GcsError::DegenerateDirection);
    }
    for x in v.iter_mut() {
        *x *= target / n;
    }
    Ok(())
}

/// Draws the group and concept means for `spec`.
///
/// Group means are made mutually orthogonal so that every intra-group pair
/// of concept means is more similar than every inter-group pair whenever
/// `group_scale >= 3 * concept_scale`.
pub fn geometry(spec: &HierarchySpec) -> Result<ConceptGeometry> {
    spec.validate()?;
    let mut rng = rng(derive_seed(spec.seed, "synth-geometry", "", 0));
    let mut unit_groups: Vec<Vec<f64>> = Vec::with_capacity(spec.n_groups);
    let mut group_means = Vec::with_capacity(spec.n_groups);
    let mut concept_means = Vec::with_capacity(spec.n_concepts());
    let mut concept_ids = Vec::with_capacity(spec.n_concepts());
    for _ in 0..spec.n_groups {
        let mut v = gaussian(&mut rng, spec.dim);
        for u in &unit_groups {
            remove_component(&mut v, u);
        }
        scale_to(&mut v, 1.0)?;
        unit_groups.push(v.clone());
        scale_to(&mut v, spec.group_scale)?;
        group_means.push(v);
    }
    for g in 0..spec.n_groups {
        for c in 0..spec.concepts_per_group {
            let mut offset = gaussian(&mut rng, spec.dim);
            remove_component(&mut offset, &unit_groups[g]);
            scale_to(&mut offset, spec.concept_scale)?;
            let mean = group_means[g]
                .iter()
                .zip(&offset)
                .map(|(a, b)| a + b)
                .collect();
            concept_means.push(mean);
            concept_ids.push(spec.concept_id(g, c));
        }
    }
    Ok(ConceptGeometry {
        group_means,
        concept_means,
        concept_ids,
    })
}

/// One labeled set per concept, in group-major order. Rows are the
/// positives followed by the negatives.
pub fn generate(spec: &HierarchySpec) -> Result<Vec<LabeledReprSet>> {
    let geo = geometry(spec)?;
    let n_concepts = spec.n_concepts();
    let n = spec.samples_per_concept;
    let mut out = Vec::with_capacity(n_concepts);
    for (k, id) in geo.concept_ids.iter().enumerate() {
        let mut rng = rng(derive_seed(spec.seed, "synth-samples", id, 0));
        let mut reprs = Vec::with_capacity(2 * n * spec.dim);
        let draw = |rng: &mut Rng, mean: &[f64], reprs: &mut Vec<f32>| {
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                reprs.push((m + spec.noise_scale * z) as f32);
            }
        };
        for _ in 0..n {
            draw(&mut rng, &geo.concept_means[k], &mut reprs);
        }
        for _ in 0..n {
            let mut other = rng.random_range(0..n_concepts - 1);
            if other >= k {
                other += 1;
            }
            draw(&mut rng, &geo.concept_means[other], &mut reprs);
        }
        let labels = std::iter::repeat_n(1u8, n)
            .chain(std::iter::repeat_n(0u8, n))
            .collect();
        out.push(LabeledReprSet::new(id.clone(), 0, spec.dim, reprs, labels)?);
    }
    Ok(out)
}

/// Identifier recorded as `source_model` in manifests of generated sets.
pub fn source_model_id(spec: &HierarchySpec) -> String {
    format!(
        "synthgen-v1 groups={} per_group={} dim={} n={} scales={}/{}/{}",
        spec.n_groups,
        spec.concepts_per_group,
        spec.dim,
        spec.samples_per_concept,
        spec.group_scale,
        spec.concept_scale,
        spec.noise_scale
    )
}
