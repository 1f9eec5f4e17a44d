//! Acceptance suite on the desk-scale synthetic configuration: 16 concepts
//! in 4 groups, d = 128, 1000 samples per class, M = 100 probes per concept,
//! 1000 sampled vectors per sigma level.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fail.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gcs_core::metrics::{cluster_distances, cross_set_similarity, set_mean, within_set_similarity};
use gcs_core::pipeline::{load_pools, run_pipeline, steering_setup, PipelineConfig, PipelineSummary};
use gcs_core::probes::{fit_logistic, read_ensemble, train_ensemble, ResampleConfig, Solver, TrainConfig};
use gcs_core::repstore::LabeledReprSet;
use gcs_core::seed::rng;
use gcs_core::steering::{scale_to_range, strength_sweep, SteeringConfig, DEFAULT_STRENGTH_GRID};
use gcs_core::subspace::{fit_gaussian, read_sampled};
use rand::Rng;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn record(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { name, pass, detail });
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn group_of(concept_id: &str) -> usize {
    concept_id
        .split('_')
        .next()
        .and_then(|g| g.strip_prefix('g'))
        .and_then(|g| g.parse().ok())
        .expect("synthetic concept ids start with g<index>")
}

fn desk_config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.output_dir = dir.to_path_buf();
    cfg
}

fn naive_mean_cosine(a: &[Vec<f32>], b: &[Vec<f32>], within: bool) -> f64 {
    let cos = |x: &[f32], y: &[f32]| {
        let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..x.len() {
            xy += x[i] as f64 * y[i] as f64;
            xx += x[i] as f64 * x[i] as f64;
            yy += y[i] as f64 * y[i] as f64;
        }
        xy / (xx.sqrt() * yy.sqrt())
    };
    let (mut sum, mut n) = (0.0, 0u64);
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if within && j <= i {
                continue;
            }
            sum += cos(x, y);
            n += 1;
        }
    }
    sum / n as f64
}

fn oracle_equivalence(suite: &mut Suite, cfg: &PipelineConfig) {
    let start = Instant::now();
    let layout = cfg.layout();
    let pools = load_pools(cfg).expect("pools");
    let mut worst_rel = 0.0f64;
    for pool in &pools {
        let ens = read_ensemble(&layout.ensemble_path(&pool.concept_id, pool.layer), &pool.concept_id, pool.layer)
            .expect("ensemble");
        let gs = fit_gaussian(&ens).expect("fit");
        let m = ens.len() as f64;
        for j in 0..gs.dim() {
            let mean: f64 = ens.iter().map(|p| p.weights[j] as f64).sum::<f64>() / m;
            let var: f64 = ens.iter().map(|p| (p.weights[j] as f64 - mean).powi(2)).sum::<f64>() / m;
            let rel = |got: f32, want: f64| (got as f64 - want).abs() / want.abs().max(1e-12);
            worst_rel = worst_rel.max(rel(gs.mean[j], mean)).max(rel(gs.variance[j], var));
        }
    }
    let mut r = rng(2024);
    let mut draw = |k: usize| -> Vec<Vec<f32>> {
        (0..k).map(|_| (0..128).map(|_| r.random_range(-1.0f32..1.0)).collect()).collect()
    };
    let (a, b) = (draw(100), draw(100));
    let within_err = (within_set_similarity(&a).unwrap().mean - naive_mean_cosine(&a, &a, true)).abs();
    let cross_err = (cross_set_similarity(&a, &b).unwrap().mean - naive_mean_cosine(&a, &b, false)).abs();
    let elapsed = start.elapsed();
    suite.record(
        "oracle equivalence",
        worst_rel <= 1e-6 && within_err <= 1e-9 && cross_err <= 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "gaussian max rel err {worst_rel:.2e} (<= 1e-6), within {within_err:.2e}, cross {cross_err:.2e} (<= 1e-9), {:.2}s (< 10s)",
            secs(elapsed)
        ),
    );
}

fn probe_correctness(suite: &mut Suite, cfg: &PipelineConfig) {
    let f = |w: f64| (1.0 + (-w).exp()).ln() + 0.5 * w * w;
    let (mut best, mut best_f, mut w) = (0.0, f64::INFINITY, -2.0);
    while w <= 2.0 {
        if f(w) < best_f {
            best_f = f(w);
            best = w;
        }
        w += 1e-6;
    }
    let line = LabeledReprSet::from_rows("line", 0, &[vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
    let mut scan_err = 0.0f64;
    for solver in [Solver::Newton, Solver::GradientDescent] {
        let fit = fit_logistic(&line, &[0, 1], &TrainConfig { solver, ..TrainConfig::default() }).unwrap();
        scan_err = scan_err.max((fit.weights[0] - best).abs());
    }

    let layout = cfg.layout();
    let pools = load_pools(cfg).expect("pools");
    let mut min_acc = f64::INFINITY;
    for pool in &pools {
        let ens = read_ensemble(&layout.ensemble_path(&pool.concept_id, pool.layer), &pool.concept_id, pool.layer)
            .expect("ensemble");
        for p in &ens {
            min_acc = min_acc.min(p.heldout_accuracy as f64);
        }
    }
    let start = Instant::now();
    let rcfg = ResampleConfig { seed: 99, ..cfg.resample.clone() };
    let ens = train_ensemble(&pools[0], &rcfg, &cfg.train).expect("train");
    let elapsed = start.elapsed();
    suite.record(
        "probe correctness",
        scan_err <= 1e-4 && min_acc > 0.95 && elapsed < Duration::from_secs(60),
        format!(
            "1-D scan err {scan_err:.2e} (<= 1e-4), min held-out acc {min_acc:.4} (> 0.95), M={} ensemble in {:.2}s (< 60s)",
            ens.len(),
            secs(elapsed)
        ),
    );
}

fn faithfulness_ordering(suite: &mut Suite, s: &PipelineSummary, elapsed: Duration) {
    let mut ok = elapsed < Duration::from_secs(120);
    let (mut m1, mut m2, mut m3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    for r in s.faithfulness.iter().filter(|r| r.sigma_level == 1.0) {
        // s_sampled >= s_cross - 0.02 >= s_observed - 0.04, s_sampled > s_observed.
        let a = r.s_sampled - (r.s_cross - 0.02);
        let b = (r.s_cross - 0.02) - (r.s_observed - 0.04);
        let c = r.s_sampled - r.s_observed;
        ok &= a >= 0.0 && b >= 0.0 && c > 0.0;
        m1 = m1.min(a);
        m2 = m2.min(b);
        m3 = m3.min(c);
        for (k, v) in [r.s_observed, r.s_sampled, r.s_cross].into_iter().enumerate() {
            ranges[k] = (ranges[k].0.min(v), ranges[k].1.max(v));
        }
    }
    suite.record(
        "faithfulness ordering",
        ok,
        format!(
            "1σ observed {:.4}..{:.4}, sampled {:.4}..{:.4}, cross {:.4}..{:.4}; min margins {m1:.4}, {m2:.4}, {m3:.4} (>= 0, >= 0, > 0); desk run {:.1}s (< 120s)",
            ranges[0].0, ranges[0].1, ranges[1].0, ranges[1].1, ranges[2].0, ranges[2].1,
            secs(elapsed)
        ),
    );
}

fn report_at<'a>(s: &'a PipelineSummary, concept: &str, sigma: f64) -> &'a gcs_core::metrics::FaithfulnessReport {
    s.faithfulness
        .iter()
        .find(|r| r.concept_id == concept && r.sigma_level == sigma)
        .expect("report present")
}

fn accuracy_comparability(suite: &mut Suite, s: &PipelineSummary) {
    let (mut worst_gap, mut worst_drop) = (0.0f64, f64::NEG_INFINITY);
    for id in &s.similarity.concept_ids {
        let r1 = report_at(s, id, 1.0);
        let r5 = report_at(s, id, 5.0);
        worst_gap = worst_gap.max((r1.a_sampled - r1.a_observed).abs());
        worst_drop = worst_drop.max(r5.a_sampled - r1.a_sampled);
    }
    suite.record(
        "accuracy comparability",
        worst_gap <= 0.02 && worst_drop <= 0.01,
        format!("max |A_S(1σ) - A_O| {worst_gap:.4} (<= 0.02), max A_S(5σ) - A_S(1σ) {worst_drop:.4} (<= 0.01)"),
    );
}

fn sigma_nesting(suite: &mut Suite, s: &PipelineSummary) {
    let min_gap = s
        .similarity
        .concept_ids
        .iter()
        .map(|id| report_at(s, id, 1.0).s_sampled - report_at(s, id, 5.0).s_sampled)
        .fold(f64::INFINITY, f64::min);
    suite.record(
        "sigma nesting",
        min_gap >= 0.005,
        format!("min over concepts of s(1σ) - s(5σ) = {min_gap:.4} (>= 0.005), 1000 samples per level"),
    );
}

fn plausibility_blocks(suite: &mut Suite, s: &PipelineSummary) {
    let m = &s.similarity;
    let groups: Vec<usize> = m.concept_ids.iter().map(|id| group_of(id)).collect();
    let (intra, inter) = m.block_means(&groups);
    let n = m.values.len();
    let mut symmetric = true;
    let mut diag_dominant = true;
    for i in 0..n {
        for j in 0..n {
            symmetric &= m.values[i][j] == m.values[j][i];
            diag_dominant &= m.values[i][i] + 0.01 >= m.values[i][j];
        }
    }
    suite.record(
        "plausibility blocks",
        intra - inter >= 0.05 && symmetric && diag_dominant,
        format!(
            "intra {intra:.4} - inter {inter:.4} = {:.4} (>= 0.05), symmetric {symmetric}, diagonal dominant {diag_dominant}",
            intra - inter
        ),
    );
}

fn pca_clustering(suite: &mut Suite, s: &PipelineSummary, cfg: &PipelineConfig) {
    let Some(pca) = &s.pca else {
        suite.record("pca clustering", false, "no projection produced".into());
        return;
    };
    let groups: Vec<usize> = pca.concept_ids.iter().map(|id| group_of(id)).collect();
    let (intra, inter) = cluster_distances(pca, &groups);
    let layout = cfg.layout();
    let means: Vec<Vec<f64>> = pca
        .concept_ids
        .iter()
        .map(|id| {
            let set = read_sampled(&layout.sample_path(id, 0, 1.0), id, 0, 1.0).expect("samples");
            set_mean(&set.vectors)
        })
        .collect();
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..means.len() {
        for j in 0..means.len() {
            let full = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let (p, q) = (pca.coords[i], pca.coords[j]);
            let proj = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            worst_excess = worst_excess.max(proj - full);
        }
    }
    suite.record(
        "pca clustering",
        intra < inter && worst_excess <= 1e-9,
        format!(
            "mean 2-D distance intra {intra:.4} < inter {inter:.4}; max projected-minus-full distance {worst_excess:.2e} (<= 1e-9); explained {:.3}/{:.3}",
            pca.explained_variance_ratio[0], pca.explained_variance_ratio[1]
        ),
    );
}

fn steering_identities(suite: &mut Suite, cfg: &PipelineConfig) {
    let start = Instant::now();
    let setup = steering_setup(cfg).expect("steering setup");
    let (model, tokens) = (&setup.model, &setup.tokens);
    let plain = model.forward(tokens).unwrap();
    let zero = model
        .steered_forward(tokens, &SteeringConfig { strength: 0.0, ..setup.base.clone() })
        .unwrap();
    let identity = zero == plain;

    let full_cfg = SteeringConfig { strength: 1.0, ..setup.base.clone() };
    let full = model.steered_forward(tokens, &full_cfg).unwrap();
    let mut replace_err = 0.0f64;
    for &layer in &full_cfg.layer_set {
        let pre = model.layer_step(layer, &full.states[layer - 1]);
        let want = scale_to_range(&full_cfg.vector, pre.last().unwrap()).unwrap();
        for (a, b) in full.states[layer].last().unwrap().iter().zip(&want) {
            replace_err = replace_err.max((a - b).abs());
        }
    }

    let rows = strength_sweep(model, tokens, &setup.base, &setup.probe, &DEFAULT_STRENGTH_GRID).unwrap();
    let scores_ok = rows.windows(2).all(|w| w[1].probe_score >= w[0].probe_score);
    let drift_ok = rows.windows(2).all(|w| w[1].drift > w[0].drift);
    let elapsed = start.elapsed();
    suite.record(
        "steering identities and monotonicity",
        identity && replace_err <= 1e-9 && scores_ok && drift_ok && elapsed < Duration::from_secs(30),
        format!(
            "a=0 bitwise {identity}, a=1 max err {replace_err:.2e} (<= 1e-9), score {:.4} -> {:.4} non-decreasing {scores_ok}, drift {:.4} -> {:.4} increasing {drift_ok}, {:.2}s (< 30s)",
            rows[0].probe_score,
            rows[rows.len() - 1].probe_score,
            rows[0].drift,
            rows[rows.len() - 1].drift,
            secs(elapsed)
        ),
    );
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(suite: &mut Suite) {
    // A reduced hierarchy keeps three full runs within budget; every stage
    // still executes.
    let runs: Vec<_> = [Some(1), Some(3), None]
        .into_iter()
        .map(|workers| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = desk_config(dir.path());
            cfg.workers = workers;
            cfg.hierarchy.n_groups = 2;
            cfg.hierarchy.concepts_per_group = 2;
            cfg.hierarchy.dim = 32;
            cfg.hierarchy.samples_per_concept = 300;
            cfg.resample.m = 20;
            cfg.resample.pos_per_subset = 300;
            cfg.resample.neg_per_subset = 300;
            cfg.evaluation.sample_count = 200;
            run_pipeline(&cfg).expect("determinism run");
            let tree = read_tree(dir.path());
            (workers, tree, dir)
        })
        .collect();
    let identical = runs.windows(2).all(|w| w[0].1 == w[1].1);
    suite.record(
        "determinism",
        identical && !runs[0].1.is_empty(),
        format!(
            "{} files byte-identical across workers {:?}: {identical}",
            runs[0].1.len(),
            runs.iter().map(|r| r.0).collect::<Vec<_>>()
        ),
    );
}

fn baseline_relations(suite: &mut Suite, s: &PipelineSummary) {
    use gcs_core::subspace::BaselineKind;
    let mut ok = true;
    let (mut min_sl, mut max_md, mut min_md) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for id in &s.similarity.concept_ids {
        let get = |k: BaselineKind| {
            s.baselines
                .iter()
                .find(|b| &b.concept_id == id && b.kind == k)
                .expect("baseline row")
                .cosine_with_mean
        };
        let sl = get(BaselineKind::SingleLinear);
        let md = get(BaselineKind::MeanDifference);
        ok &= sl > md && md > 0.0 && sl > 0.0;
        min_sl = min_sl.min(sl);
        max_md = max_md.max(md);
        min_md = min_md.min(md);
    }
    suite.record(
        "baseline relations",
        ok,
        format!("cos(single linear, mean) >= {min_sl:.4}; cos(mean difference, mean) in {min_md:.4}..{max_md:.4}"),
    );
}

fn main() -> ExitCode {
    let mut suite = Suite { outcomes: Vec::new() };
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = desk_config(dir.path());

    let start = Instant::now();
    let summary = match run_pipeline(&cfg) {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL desk-scale pipeline: {e}");
            return ExitCode::FAILURE;
        }
    };
    let elapsed = start.elapsed();
    println!(
        "desk-scale run: {} concepts, {} artifacts, {:.1}s",
        summary.similarity.concept_ids.len(),
        summary.manifest.artifacts.len(),
        secs(elapsed)
    );

    oracle_equivalence(&mut suite, &cfg);
    probe_correctness(&mut suite, &cfg);
    faithfulness_ordering(&mut suite, &summary, elapsed);
    accuracy_comparability(&mut suite, &summary);
    sigma_nesting(&mut suite, &summary);
    plausibility_blocks(&mut suite, &summary);
    pca_clustering(&mut suite, &summary, &cfg);
    steering_identities(&mut suite, &cfg);
    determinism(&mut suite);
    baseline_relations(&mut suite, &summary);

    let failed: Vec<&str> = suite.outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!(
        "acceptance: {} passed, {} failed",
        suite.outcomes.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for o in suite.outcomes.iter().filter(|o| !o.pass) {
            eprintln!("failed: {} ({})", o.name, o.detail);
        }
        ExitCode::FAILURE
    }
}
