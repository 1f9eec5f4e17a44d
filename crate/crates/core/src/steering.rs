//! Residual-stream steering on a small seeded decoder-only transformer.
//!
//! Each layer updates the residual stream as
//! `h' = h + Att(h) + MLP(h + Att(h))`. Steering replaces the last token's
//! end-of-layer state with `(1 - a) h + a v'`, where `v'` is the concept
//! vector rescaled so its largest absolute entry matches that of `h`. The
//! intervened state is what the next layer consumes, so interventions at
//! several layers compound within one pass.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};
use crate::linalg::{dot, max_abs, norm};
use crate::seed::{derive_seed, rng};

/// Table strengths used for the default sweep.
pub const DEFAULT_STRENGTH_GRID: [f64; 9] =
    [0.038, 0.043, 0.048, 0.053, 0.059, 0.064, 0.069, 0.074, 0.080];

/// Everything needed to regenerate a model; no weight file is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelSpec {
    pub n_layers: usize,
    pub dim: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    /// Multiplies the attention output projection; zero disables attention.
    pub attention_gain: f64,
    /// Multiplies the MLP output projection; zero disables the MLP.
    pub mlp_gain: f64,
    pub seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            n_layers: 6,
            dim: 128,
            mlp_hidden: 256,
            vocab_size: 64,
            attention_gain: 0.5,
            mlp_gain: 0.5,
            seed: 11,
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 3 {
            return Err(GcsError::InvalidParameter(format!(
                "toy model needs at least 3 layers, got {}",
                self.n_layers
            )));
        }
        if self.dim == 0 || self.mlp_hidden == 0 || self.vocab_size == 0 {
            return Err(GcsError::InvalidParameter(
                "toy model dimensions must be positive".into(),
            ));
        }
        if !self.attention_gain.is_finite() || !self.mlp_gain.is_finite() {
            return Err(GcsError::InvalidParameter("toy model gains must be finite".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn random(rows: usize, cols: usize, std: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * std
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    pub spec: ToyModelSpec,
    pub embedding: Matrix,
    pub unembedding: Matrix,
    pub layers: Vec<LayerWeights>,
}

/// Smooth MLP nonlinearity (tanh approximation of GELU).
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl ToyTransformer {
    pub fn from_spec(spec: &ToyModelSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let h = spec.mlp_hidden;
        let s = spec.seed;
        let seed_for = |part: &str, idx: u64| derive_seed(s, "toy-model", part, idx);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let layers = (0..spec.n_layers as u64)
            .map(|l| LayerWeights {
                w_q: Matrix::random(d, d, inv_sqrt_d, seed_for("w_q", l)),
                w_k: Matrix::random(d, d, inv_sqrt_d, seed_for("w_k", l)),
                w_v: Matrix::random(d, d, inv_sqrt_d, seed_for("w_v", l)),
                w_o: Matrix::random(d, d, spec.attention_gain * inv_sqrt_d, seed_for("w_o", l)),
                w_in: Matrix::random(h, d, inv_sqrt_d, seed_for("w_in", l)),
                b_in: Matrix::random(1, h, 0.1, seed_for("b_in", l)).data,
                w_out: Matrix::random(
                    d,
                    h,
                    spec.mlp_gain / (h as f64).sqrt(),
                    seed_for("w_out", l),
                ),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            embedding: Matrix::random(spec.vocab_size, d, 1.0, seed_for("embedding", 0)),
            unembedding: Matrix::random(spec.vocab_size, d, inv_sqrt_d, seed_for("unembedding", 0)),
            layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Embeds a token sequence, rejecting empty input and unknown ids.
    pub fn embed(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(GcsError::InvalidParameter("empty token sequence".into()));
        }
        tokens
            .iter()
            .map(|&t| {
                if t >= self.spec.vocab_size {
                    Err(GcsError::InvalidParameter(format!(
                        "token id {t} outside vocabulary of {}",
                        self.spec.vocab_size
                    )))
                } else {
                    Ok(self.embedding.row(t).to_vec())
                }
            })
            .collect()
    }

    /// Causal single-head softmax attention over all positions.
    pub fn attention(&self, layer: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = &self.layers[layer];
        let q: Vec<Vec<f64>> = xs.iter().map(|x| w.w_q.apply(x)).collect();
        let k: Vec<Vec<f64>> = xs.iter().map(|x| w.w_k.apply(x)).collect();
        let v: Vec<Vec<f64>> = xs.iter().map(|x| w.w_v.apply(x)).collect();
        let scale = 1.0 / (self.dim() as f64).sqrt();
        (0..xs.len())
            .map(|t| {
                let scores: Vec<f64> = (0..=t).map(|s| dot(&q[t], &k[s]) * scale).collect();
                let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let z: f64 = weights.iter().sum();
                let mut mixed = vec![0.0; self.dim()];
                for (s, a) in weights.iter().enumerate() {
                    for (m, vs) in mixed.iter_mut().zip(&v[s]) {
                        *m += a / z * vs;
                    }
                }
                w.w_o.apply(&mixed)
            })
            .collect()
    }

    pub fn mlp(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.layers[layer];
        let hidden: Vec<f64> = w
            .w_in
            .apply(x)
            .iter()
            .zip(&w.b_in)
            .map(|(z, b)| gelu(z + b))
            .collect();
        w.w_out.apply(&hidden)
    }

    /// One residual update for every position.
    pub fn layer_step(&self, layer: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let att = self.attention(layer, xs);
        xs.iter()
            .zip(&att)
            .map(|(h, a)| {
                let mid: Vec<f64> = h.iter().zip(a).map(|(x, y)| x + y).collect();
                let m = self.mlp(layer, &mid);
                h.iter()
                    .zip(a)
                    .zip(&m)
                    .map(|((x, y), z)| x + y + z)
                    .collect()
            })
            .collect()
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        self.unembedding.apply(h)
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        self.run(tokens, None)
    }

    pub fn steered_forward(&self, tokens: &[usize], cfg: &SteeringConfig) -> Result<ForwardOutput> {
        cfg.validate(self)?;
        self.run(tokens, Some(cfg))
    }

    fn run(&self, tokens: &[usize], cfg: Option<&SteeringConfig>) -> Result<ForwardOutput> {
        let mut xs = self.embed(tokens)?;
        let mut states = Vec::with_capacity(self.n_layers());
        for layer in 0..self.n_layers() {
            xs = self.layer_step(layer, &xs);
            if let Some(cfg) = cfg {
                if cfg.layer_set.contains(&layer) {
                    let last = xs.len() - 1;
                    xs[last] = cfg.intervene(&xs[last])?;
                }
            }
            states.push(xs.clone());
        }
        let logits = self.logits(&xs[xs.len() - 1]);
        Ok(ForwardOutput { states, logits })
    }
}

/// `states[layer][position]` is the end-of-layer residual state.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub states: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<f64>,
}

impl ForwardOutput {
    /// The last token's state at every layer (`L x d`).
    pub fn last_token_states(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|layer| layer[layer.len() - 1].clone())
            .collect()
    }

    pub fn final_state(&self) -> &[f64] {
        let last = &self.states[self.states.len() - 1];
        &last[last.len() - 1]
    }
}

/// Rescales `v` so its largest absolute entry equals that of `h`.
pub fn scale_to_range(v: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if v.len() != h.len() {
        return Err(GcsError::DimensionMismatch {
            expected: h.len(),
            found: v.len(),
        });
    }
    let mv = max_abs(v);
    if !(mv > 0.0 && mv.is_finite()) {
        return Err(GcsError::DegenerateDirection);
    }
    let r = max_abs(h) / mv;
    Ok(v.iter().map(|x| x * r).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingPolicy {
    #[default]
    MaxAbsMatch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyTo {
    #[default]
    LastToken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    pub strength: f64,
    pub layer_set: BTreeSet<usize>,
    pub vector: Vec<f64>,
    pub scaling: ScalingPolicy,
    pub apply_to: ApplyTo,
}

impl SteeringConfig {
    /// Steers every layer except the first and the last.
    pub fn new(n_layers: usize, vector: Vec<f64>, strength: f64) -> Self {
        Self {
            strength,
            layer_set: (1..n_layers.saturating_sub(1)).collect(),
            vector,
            scaling: ScalingPolicy::MaxAbsMatch,
            apply_to: ApplyTo::LastToken,
        }
    }

    pub fn validate(&self, model: &ToyTransformer) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(GcsError::InvalidParameter(format!(
                "steering strength {} outside [0, 1]",
                self.strength
            )));
        }
        if let Some(&l) = self.layer_set.iter().find(|&&l| l >= model.n_layers()) {
            return Err(GcsError::InvalidParameter(format!(
                "steering layer {l} out of bounds for {} layers",
                model.n_layers()
            )));
        }
        if self.vector.len() != model.dim() {
            return Err(GcsError::DimensionMismatch {
                expected: model.dim(),
                found: self.vector.len(),
            });
        }
        if !(max_abs(&self.vector) > 0.0) {
            return Err(GcsError::DegenerateDirection);
        }
        Ok(())
    }

    /// `(1 - a) h + a scale_to_range(v, h)`; a zero strength leaves `h`
    /// untouched.
    pub fn intervene(&self, h: &[f64]) -> Result<Vec<f64>> {
        if self.strength == 0.0 {
            return Ok(h.to_vec());
        }
        let target = match self.scaling {
            ScalingPolicy::MaxAbsMatch => scale_to_range(&self.vector, h)?,
        };
        let a = self.strength;
        Ok(h.iter()
            .zip(&target)
            .map(|(x, t)| (1.0 - a) * x + a * t)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strength: f64,
    pub probe_score: f64,
    pub drift: f64,
}

/// A linear readout `w . h + b` evaluated on steered states.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearProbe {
    pub fn score(&self, h: &[f64]) -> f64 {
        dot(&self.weights, h) + self.intercept
    }
}

/// One steered pass per strength. The probe reads the last token at the
/// deepest steered layer; drift is the L2 distance between the steered and
/// unsteered final states.
pub fn strength_sweep(
    model: &ToyTransformer,
    tokens: &[usize],
    base: &SteeringConfig,
    probe: &LinearProbe,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(GcsError::InvalidParameter("empty strength grid".into()));
    }
    if probe.weights.len() != model.dim() {
        return Err(GcsError::DimensionMismatch {
            expected: model.dim(),
            found: probe.weights.len(),
        });
    }
    let read_layer = base
        .layer_set
        .iter()
        .next_back()
        .copied()
        .unwrap_or(model.n_layers() - 1);
    let reference = model.forward(tokens)?;
    grid.par_iter()
        .map(|&a| {
            let cfg = SteeringConfig {
                strength: a,
                ..base.clone()
            };
            let out = model.steered_forward(tokens, &cfg)?;
            let h = &out.states[read_layer];
            let diff: Vec<f64> = out
                .final_state()
                .iter()
                .zip(reference.final_state())
                .map(|(x, y)| x - y)
                .collect();
            Ok(SweepRow {
                strength: a,
                probe_score: probe.score(&h[h.len() - 1]),
                drift: norm(&diff),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("strength,probe_score,drift\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.strength, r.probe_score, r.drift);
    }
    out
}

/// A fixed pseudo-random prompt for sweeps.
pub fn prompt_tokens(vocab_size: usize, len: usize, seed: u64) -> Vec<usize> {
    use rand::Rng as _;
    let mut r = rng(derive_seed(seed, "prompt", "", 0));
    (0..len).map(|_| r.random_range(0..vocab_size)).collect()
}
