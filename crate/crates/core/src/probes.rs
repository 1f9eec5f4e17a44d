//! Resampled probing datasets and L2-regularized logistic probes.
//!
//! A probe minimizes the mean log-loss plus `(lambda / 2) * ||w||^2` over one
//! resampled subset; the intercept is fit but not penalized. The raw weights
//! are then scaled to unit L2 norm and the intercept is divided by the same
//! factor, which leaves the decision boundary unchanged.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};
use crate::linalg::{dot, dot_f32, norm};
use crate::repstore::LabeledReprSet;
use crate::seed::{derive_seed, rng};

pub const ENSEMBLE_MAGIC: [u8; 4] = *b"GCSW";
pub const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Damped Newton steps with Armijo backtracking.
    #[default]
    Newton,
    /// Full-batch gradient descent with Armijo backtracking.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub max_iterations: u32,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    /// Initial step for gradient descent; Newton always tries a unit step.
    pub learning_rate: f64,
    pub fit_intercept: bool,
    pub solver: Solver,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iterations: 5000,
            tolerance: 1e-6,
            learning_rate: 1.0,
            fit_intercept: true,
            solver: Solver::Newton,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(GcsError::InvalidParameter("lambda must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(GcsError::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GcsError::InvalidParameter(
                "learning_rate must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(GcsError::InvalidParameter(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResampleConfig {
    pub m: usize,
    pub pos_per_subset: usize,
    pub neg_per_subset: usize,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            m: 100,
            pos_per_subset: 1000,
            neg_per_subset: 1000,
            seed: 0,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.pos_per_subset == 0 || self.neg_per_subset == 0 {
            return Err(GcsError::InvalidParameter(
                "m and subset sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One resampled probing dataset: pool row indices drawn with replacement,
/// positives first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subset {
    pub seed: u64,
    pub indices: Vec<usize>,
}

impl Subset {
    pub fn distinct(&self) -> HashSet<usize> {
        self.indices.iter().copied().collect()
    }
}

/// A trained, normalized probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVector {
    pub weights: Vec<f32>,
    pub intercept: f32,
    pub concept_id: String,
    pub layer: u32,
    pub subset_seed: u64,
    pub final_loss: f32,
    pub iterations_used: u32,
    pub heldout_accuracy: f32,
}

impl ProbeVector {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

pub fn resample(pool: &LabeledReprSet, cfg: &ResampleConfig) -> Result<Vec<Subset>> {
    cfg.validate()?;
    let pos = pool.positive_indices();
    let neg = pool.negative_indices();
    if pos.is_empty() {
        return Err(GcsError::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(GcsError::EmptyClass("negative"));
    }
    Ok((0..cfg.m as u64)
        .map(|k| {
            let seed = derive_seed(cfg.seed, "subset", "", k);
            let mut r = rng(seed);
            let mut indices = Vec::with_capacity(cfg.pos_per_subset + cfg.neg_per_subset);
            indices.extend((0..cfg.pos_per_subset).map(|_| pos[r.random_range(0..pos.len())]));
            indices.extend((0..cfg.neg_per_subset).map(|_| neg[r.random_range(0..neg.len())]));
            Subset { seed, indices }
        })
        .collect())
}

/// Unnormalized solution of the regularized logistic objective.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Objective value before the first step and after every accepted step.
    pub loss_history: Vec<f64>,
}

/// Centered design matrix. Fitting on centered rows is an exact
/// reparametrization (`b = b_c - w . mean`) that improves conditioning.
struct Design {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    mean: Vec<f64>,
}

impl Design {
    fn new(set: &LabeledReprSet, indices: &[usize], center: bool) -> Self {
        let d = set.dim();
        let n = indices.len();
        let mut mean = vec![0.0; d];
        if center {
            for &i in indices {
                for (m, &v) in mean.iter_mut().zip(set.row(i)) {
                    *m += v as f64;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
        }
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for &i in indices {
            x.extend(set.row(i).iter().zip(&mean).map(|(&v, m)| v as f64 - m));
            y.push(set.label(i) as f64);
        }
        Self { n, d, x, y, mean }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Objective<'a> {
    design: &'a Design,
    lambda: f64,
    fit_intercept: bool,
}

impl Objective<'_> {
    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.design.n {
            let z = dot(self.design.row(i), w) + b;
            total += softplus(z) - self.design.y[i] * z;
        }
        total / self.design.n as f64 + 0.5 * self.lambda * dot(w, w)
    }

    /// Gradient with respect to `(w, b)` and the per-sample probabilities.
    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64, Vec<f64>) {
        let n = self.design.n as f64;
        let mut gw = vec![0.0; self.design.d];
        let mut gb = 0.0;
        let mut probs = Vec::with_capacity(self.design.n);
        for i in 0..self.design.n {
            let row = self.design.row(i);
            let p = sigmoid(dot(row, w) + b);
            let r = p - self.design.y[i];
            for (g, &x) in gw.iter_mut().zip(row) {
                *g += r * x;
            }
            gb += r;
            probs.push(p);
        }
        for (g, &wi) in gw.iter_mut().zip(w) {
            *g = *g / n + self.lambda * wi;
        }
        let gb = if self.fit_intercept { gb / n } else { 0.0 };
        (gw, gb, probs)
    }

    /// Newton direction solving `H d = -g`, or `None` if `H` is not
    /// numerically positive definite.
    fn newton_direction(&self, probs: &[f64], gw: &[f64], gb: f64) -> Option<(Vec<f64>, f64)> {
        let d = self.design.d;
        let k = if self.fit_intercept { d + 1 } else { d };
        let n = self.design.n as f64;
        let mut h = vec![0.0; k * k];
        let mut aug = vec![1.0; k];
        for (i, &p) in probs.iter().enumerate() {
            let s = p * (1.0 - p);
            if s == 0.0 {
                continue;
            }
            aug[..d].copy_from_slice(self.design.row(i));
            for a in 0..k {
                let sa = s * aug[a];
                let hrow = &mut h[a * k..(a + 1) * k];
                for (hb, &xb) in hrow[a..].iter_mut().zip(&aug[a..]) {
                    *hb += sa * xb;
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                h[a * k + b] /= n;
            }
            if a < d {
                h[a * k + a] += self.lambda;
            }
            for b in 0..a {
                h[a * k + b] = h[b * k + a];
            }
        }
        let hm = DMatrix::from_row_slice(k, k, &h);
        let chol = hm.cholesky()?;
        let mut g = DVector::from_iterator(k, gw.iter().copied().chain(std::iter::once(gb)).take(k));
        g.neg_mut();
        let step = chol.solve(&g);
        let dw = step.as_slice()[..d].to_vec();
        let db = if self.fit_intercept { step[d] } else { 0.0 };
        Some((dw, db))
    }
}

const MAX_BACKTRACKS: u32 = 60;
const ARMIJO: f64 = 1e-4;

/// Minimizes the regularized logistic objective over `indices` of `set`.
pub fn fit_logistic(set: &LabeledReprSet, indices: &[usize], cfg: &TrainConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(GcsError::EmptySet);
    }
    let positives = indices.iter().filter(|&&i| set.label(i) == 1).count();
    if positives == 0 {
        return Err(GcsError::EmptyClass("positive"));
    }
    if positives == indices.len() {
        return Err(GcsError::EmptyClass("negative"));
    }
    let design = Design::new(set, indices, cfg.fit_intercept);
    let obj = Objective {
        design: &design,
        lambda: cfg.lambda,
        fit_intercept: cfg.fit_intercept,
    };

    let mut w = vec![0.0; design.d];
    let mut b = 0.0;
    let mut loss = obj.loss(&w, b);
    let mut history = vec![loss];
    let mut step_hint = cfg.learning_rate;
    let mut iterations = 0;
    let mut gnorm;
    let mut converged = false;
    loop {
        let (gw, gb, probs) = obj.gradient(&w, b);
        gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
        if gnorm < cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        let (dw, db, mut t) = match cfg.solver {
            Solver::Newton => match obj.newton_direction(&probs, &gw, gb) {
                Some((dw, db)) => (dw, db, 1.0),
                None => (gw.iter().map(|g| -g).collect(), -gb, step_hint),
            },
            Solver::GradientDescent => (gw.iter().map(|g| -g).collect(), -gb, step_hint),
        };
        let slope = dot(&gw, &dw) + gb * db;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let wt: Vec<f64> = w.iter().zip(&dw).map(|(a, d)| a + t * d).collect();
            let bt = b + t * db;
            let lt = obj.loss(&wt, bt);
            if lt <= loss + ARMIJO * t * slope {
                accepted = Some((wt, bt, lt));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((wt, bt, lt)) => {
                w = wt;
                b = bt;
                loss = lt;
                history.push(loss);
                step_hint = 2.0 * t;
            }
            // No representable decrease along the descent direction: the
            // iterate is as close to the optimum as floating point allows.
            None => {
                let (gw, gb, _) = obj.gradient(&w, b);
                gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
                converged = gnorm < cfg.tolerance;
                break;
            }
        }
    }

    let intercept = b - dot(&w, &design.mean);
    Ok(LogisticFit {
        weights: w,
        intercept,
        loss,
        gradient_norm: gnorm,
        iterations,
        converged,
        loss_history: history,
    })
}

/// Decision score `w . h + b`.
pub fn decision_score(weights: &[f32], intercept: f32, h: &[f32]) -> f64 {
    dot_f32(weights, h) + intercept as f64
}

/// Classifies as positive when the score is zero or above.
pub fn predict(weights: &[f32], intercept: f32, h: &[f32]) -> u8 {
    u8::from(decision_score(weights, intercept, h) >= 0.0)
}

/// Fraction of the listed rows of `set` whose predicted label is correct.
/// Returns `None` if `rows` is empty.
pub fn accuracy_on(
    weights: &[f32],
    intercept: f32,
    set: &LabeledReprSet,
    rows: impl IntoIterator<Item = usize>,
) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in rows {
        total += 1;
        if predict(weights, intercept, set.row(i)) == set.label(i) {
            correct += 1;
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Unit-normalizes a raw fit. Fails if the weights are exactly zero.
pub fn normalize_fit(fit: &LogisticFit) -> Result<(Vec<f32>, f32)> {
    let n = norm(&fit.weights);
    if n == 0.0 || !n.is_finite() {
        return Err(GcsError::DegenerateDirection);
    }
    let weights = fit.weights.iter().map(|&w| (w / n) as f32).collect();
    Ok((weights, (fit.intercept / n) as f32))
}

/// Trains one probe on `subset` and scores it on the pool rows the subset
/// never drew. When the subset covers the whole pool the accuracy is taken
/// over the pool instead.
pub fn train_probe(data: &LabeledReprSet, subset: &Subset, cfg: &TrainConfig) -> Result<ProbeVector> {
    let fit = fit_logistic(data, &subset.indices, cfg)?;
    if !fit.converged {
        log::warn!(
            "probe {} seed {:#x}: stopped after {} iterations, gradient norm {:e}",
            data.concept_id,
            subset.seed,
            fit.iterations,
            fit.gradient_norm
        );
    }
    let (weights, intercept) = normalize_fit(&fit)?;
    let drawn = subset.distinct();
    let heldout = accuracy_on(
        &weights,
        intercept,
        data,
        (0..data.len()).filter(|i| !drawn.contains(i)),
    )
    .or_else(|| accuracy_on(&weights, intercept, data, 0..data.len()))
    .expect("pool is non-empty");
    let iterations_used = if fit.converged {
        fit.iterations.min(cfg.max_iterations.saturating_sub(1))
    } else {
        cfg.max_iterations
    };
    Ok(ProbeVector {
        weights,
        intercept,
        concept_id: data.concept_id.clone(),
        layer: data.layer,
        subset_seed: subset.seed,
        final_loss: fit.loss as f32,
        iterations_used,
        heldout_accuracy: heldout as f32,
    })
}

pub fn train_ensemble(
    pool: &LabeledReprSet,
    rcfg: &ResampleConfig,
    tcfg: &TrainConfig,
) -> Result<Vec<ProbeVector>> {
    tcfg.validate()?;
    let subsets = resample(pool, rcfg)?;
    subsets
        .par_iter()
        .map(|s| train_probe(pool, s, tcfg))
        .collect()
}

pub fn converged(probe: &ProbeVector, cfg: &TrainConfig) -> bool {
    probe.iterations_used < cfg.max_iterations
}

pub fn encode_ensemble(probes: &[ProbeVector]) -> Result<Vec<u8>> {
    let d = probes.first().map_or(0, ProbeVector::dim);
    if let Some(p) = probes.iter().find(|p| p.dim() != d) {
        return Err(GcsError::DimensionMismatch {
            expected: d,
            found: p.dim(),
        });
    }
    let mut out = Vec::with_capacity(16 + probes.len() * (d * 4 + 20));
    out.extend_from_slice(&ENSEMBLE_MAGIC);
    out.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(probes.len() as u32).to_le_bytes());
    for p in probes {
        for w in &p.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&p.intercept.to_le_bytes());
        out.extend_from_slice(&p.subset_seed.to_le_bytes());
        out.extend_from_slice(&p.final_loss.to_le_bytes());
        out.extend_from_slice(&p.heldout_accuracy.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a vector file. Fields the format does not carry
/// (`concept_id`, `layer`, `iterations_used`) come from the arguments or
/// are zero.
pub fn decode_ensemble(bytes: &[u8], concept_id: &str, layer: u32) -> Result<Vec<ProbeVector>> {
    if bytes.len() < 4 {
        return Err(GcsError::Truncated {
            needed: 16,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != ENSEMBLE_MAGIC {
        return Err(GcsError::BadMagic {
            expected: ENSEMBLE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 16 {
        return Err(GcsError::Truncated {
            needed: 16,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != ENSEMBLE_VERSION {
        return Err(GcsError::VersionMismatch {
            expected: ENSEMBLE_VERSION,
            found: version,
        });
    }
    let d = u32_at(8) as usize;
    let m = u32_at(12) as usize;
    let record = d * 4 + 20;
    let needed = 16 + m * record;
    if bytes.len() != needed {
        return Err(GcsError::Truncated {
            needed: needed as u64,
            found: bytes.len() as u64,
        });
    }
    Ok((0..m)
        .map(|k| {
            let base = 16 + k * record;
            let weights = (0..d).map(|i| f32_at(base + 4 * i)).collect();
            let o = base + 4 * d;
            ProbeVector {
                weights,
                intercept: f32_at(o),
                concept_id: concept_id.to_string(),
                layer,
                subset_seed: u64::from_le_bytes(bytes[o + 4..o + 12].try_into().unwrap()),
                final_loss: f32_at(o + 12),
                iterations_used: 0,
                heldout_accuracy: f32_at(o + 16),
            }
        })
        .collect())
}

pub fn write_ensemble(path: &Path, probes: &[ProbeVector]) -> Result<()> {
    fs::write(path, encode_ensemble(probes)?)?;
    Ok(())
}

pub fn read_ensemble(path: &Path, concept_id: &str, layer: u32) -> Result<Vec<ProbeVector>> {
    if !path.exists() {
        return Err(GcsError::MissingInput(path.to_path_buf()));
    }
    decode_ensemble(&fs::read(path)?, concept_id, layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, HierarchySpec};

    fn line_set() -> LabeledReprSet {
        LabeledReprSet::new("line", 0, 1, vec![-1.0, 1.0], vec![0, 1]).unwrap()
    }

    /// Fine-grid scan of f(w) = softplus(-w) + w^2 / 2, the 1-D objective
    /// for x = -1 (label 0) and x = +1 (label 1) with lambda = 1. Symmetry
    /// pins the intercept at zero.
    fn scan_line_objective() -> f64 {
        let f = |w: f64| (1.0 + (-w).exp()).ln() + 0.5 * w * w;
        let (mut best, mut best_f) = (0.0, f64::INFINITY);
        let step = 1e-6;
        let mut w = -2.0;
        while w <= 2.0 {
            let v = f(w);
            if v < best_f {
                best_f = v;
                best = w;
            }
            w += step;
        }
        best
    }

    #[test]
    fn one_dimensional_probe_matches_grid_scan() {
        let oracle = scan_line_objective();
        // Root of w = 1 / (1 + e^w), frozen from the scan above.
        assert!((oracle - 0.401_058).abs() < 1e-5, "{oracle}");
        for solver in [Solver::Newton, Solver::GradientDescent] {
            let cfg = TrainConfig { solver, ..Default::default() };
            let fit = fit_logistic(&line_set(), &[0, 1], &cfg).unwrap();
            assert!(fit.converged);
            assert!((fit.weights[0] - oracle).abs() < 1e-4, "{solver:?}: {}", fit.weights[0]);
            assert!(fit.intercept.abs() < 1e-6);
            let probe = train_probe(
                &line_set(),
                &Subset { seed: 0, indices: vec![0, 1] },
                &cfg,
            )
            .unwrap();
            assert_eq!(probe.weights, vec![1.0]);
        }
    }

    #[test]
    fn symmetric_separable_data_gives_axis_direction() {
        let rows = vec![
            vec![1.0, 0.5],
            vec![2.0, -0.5],
            vec![1.5, 0.0],
            vec![-1.0, 0.5],
            vec![-2.0, -0.5],
            vec![-1.5, 0.0],
        ];
        let set = LabeledReprSet::from_rows("sym", 0, &rows, vec![1, 1, 1, 0, 0, 0]).unwrap();
        let p = train_probe(&set, &Subset { seed: 1, indices: (0..6).collect() }, &TrainConfig::default()).unwrap();
        assert!((p.weights[0] - 1.0).abs() < 1e-6);
        assert!(p.weights[1].abs() < 1e-6);
        assert!(p.intercept.abs() < 1e-6);
    }

    #[test]
    fn single_element_pools_force_repetition() {
        let set = line_set();
        let cfg = ResampleConfig { m: 5, pos_per_subset: 3, neg_per_subset: 3, seed: 4 };
        for s in resample(&set, &cfg).unwrap() {
            assert_eq!(s.indices, vec![1, 1, 1, 0, 0, 0]);
        }
    }

    #[test]
    fn resample_is_deterministic_and_seeded() {
        let set = generate(&HierarchySpec { dim: 4, samples_per_concept: 50, ..Default::default() })
            .unwrap()
            .remove(0);
        let cfg = ResampleConfig { m: 3, pos_per_subset: 10, neg_per_subset: 10, seed: 9 };
        let a = resample(&set, &cfg).unwrap();
        assert_eq!(a, resample(&set, &cfg).unwrap());
        assert_ne!(a, resample(&set, &ResampleConfig { seed: 10, ..cfg.clone() }).unwrap());
        for s in &a {
            assert!(s.indices[..10].iter().all(|&i| set.label(i) == 1));
            assert!(s.indices[10..].iter().all(|&i| set.label(i) == 0));
        }
    }

    #[test]
    fn resample_rejects_empty_class() {
        let set = LabeledReprSet::new("c", 0, 1, vec![1.0, 2.0], vec![1, 1]).unwrap();
        assert!(matches!(
            resample(&set, &ResampleConfig::default()),
            Err(GcsError::EmptyClass("negative"))
        ));
    }

    #[test]
    fn single_class_subset_rejected() {
        let set = LabeledReprSet::new("c", 0, 1, vec![1.0, 2.0], vec![1, 0]).unwrap();
        let s = Subset { seed: 0, indices: vec![0, 0] };
        assert!(matches!(
            train_probe(&set, &s, &TrainConfig::default()),
            Err(GcsError::EmptyClass("negative"))
        ));
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        let set = generate(&HierarchySpec { dim: 8, samples_per_concept: 40, ..Default::default() })
            .unwrap()
            .remove(0);
        let cfg = TrainConfig {
            solver: Solver::GradientDescent,
            max_iterations: 3,
            ..Default::default()
        };
        let s = Subset { seed: 0, indices: (0..set.len()).collect() };
        let p = train_probe(&set, &s, &cfg).unwrap();
        assert_eq!(p.iterations_used, 3);
        assert!(!converged(&p, &cfg));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { lambda: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { tolerance: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ensemble_file_round_trip_and_errors() {
        let p = ProbeVector {
            weights: vec![0.6, 0.8],
            intercept: -0.25,
            concept_id: "c".into(),
            layer: 2,
            subset_seed: 0xdead_beef_0000_0001,
            final_loss: 0.5,
            iterations_used: 0,
            heldout_accuracy: 0.75,
        };
        let bytes = encode_ensemble(&[p.clone(), p.clone()]).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * (2 * 4 + 20));
        assert_eq!(decode_ensemble(&bytes, "c", 2).unwrap(), vec![p.clone(), p.clone()]);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_ensemble(&bad, "c", 2), Err(GcsError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_ensemble(&bad, "c", 2), Err(GcsError::VersionMismatch { .. })));
        assert!(matches!(
            decode_ensemble(&bytes[..bytes.len() - 1], "c", 2),
            Err(GcsError::Truncated { .. })
        ));
        let mut q = p.clone();
        q.weights.push(0.0);
        assert!(matches!(encode_ensemble(&[p, q]), Err(GcsError::DimensionMismatch { .. })));
    }
}
