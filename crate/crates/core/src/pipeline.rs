//! End-to-end pipeline over an artifact directory.
//!
//! Every stage reads its inputs from the output directory (or the configured
//! input directory for representations) and writes its artifacts back, so
//! the stages can run one at a time or all at once. Seeds derive from
//! `global_seed` per stage and concept; outputs do not depend on the worker
//! count.
//!
//! Layout under the output directory:
//!
//! ```text
//! reprs/<concept>.gcsr (+ .manifest.json)
//! ensembles/<concept>_L<layer>.gcsw
//! subspaces/<concept>_L<layer>.gcsg
//! samples/<concept>_L<layer>_s<sigma>.gcsw
//! faithfulness/<concept>_L<layer>_s<sigma>.json
//! faithfulness/<concept>_L<layer>_s<sigma>.{observed,sampled,cross}.csv
//! faithfulness.csv  similarity.csv  pca.csv  baselines.csv  steering.csv
//! manifest.json
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GcsError, Result};
use crate::linalg::{dot, norm};
use crate::metrics::{
    concept_similarity_matrix, faithfulness, pca_project, set_mean, ConceptSimilarityMatrix,
    FaithfulnessReport, PcaProjection,
};
use crate::probes::{accuracy_on, converged, read_ensemble, train_ensemble, write_ensemble, ResampleConfig, TrainConfig};
use crate::repstore::{read_repr_set, write_repr_set, LabeledReprSet, ReprManifest};
use crate::seed::derive_seed;
use crate::steering::{
    prompt_tokens, strength_sweep, sweep_csv, LinearProbe, SteeringConfig, SweepRow, ToyModelSpec,
    ToyTransformer, DEFAULT_STRENGTH_GRID,
};
use crate::subspace::{
    fit_gaussian, mean_difference, mean_intercept, read_sampled, read_subspace, sample,
    single_linear, write_sampled, write_subspace, BaselineKind, BaselineVector, SampledVectorSet,
};
use crate::synthgen::{generate, source_model_id, HierarchySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of existing `.gcsr` files; when unset, representations are
    /// synthesized into `<output_dir>/reprs`.
    pub input_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input_dir: None,
            output_dir: PathBuf::from("gcs-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub sigma_levels: Vec<f64>,
    pub sample_count: usize,
    /// Sigma level whose sampled sets feed the similarity matrix and PCA.
    pub plausibility_sigma: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            sigma_levels: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            sample_count: 1000,
            plausibility_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSection {
    /// Concept to steer toward; defaults to the first concept.
    pub concept: Option<String>,
    pub strength_grid: Vec<f64>,
    pub prompt_len: usize,
    /// The model width always follows the representation width.
    pub model: ToyModelSpec,
}

impl Default for SteeringSection {
    fn default() -> Self {
        Self {
            concept: None,
            strength_grid: DEFAULT_STRENGTH_GRID.to_vec(),
            prompt_len: 8,
            model: ToyModelSpec::default(),
        }
    }
}

/// The `seed` fields of `hierarchy` and `resample` are replaced by seeds
/// derived from `global_seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub global_seed: u64,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub paths: Paths,
    pub hierarchy: HierarchySpec,
    pub resample: ResampleConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub steering: SteeringSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GcsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GcsError::MissingInput(path.to_path_buf()));
        }
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: GcsError| match e {
            GcsError::InvalidParameter(m) => GcsError::Config(m),
            other => other,
        };
        self.hierarchy.validate().map_err(cfg_err)?;
        self.resample.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        let ev = &self.evaluation;
        if ev.sigma_levels.is_empty() || ev.sigma_levels.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(GcsError::Config("sigma_levels must be non-empty and positive".into()));
        }
        if ev.sample_count < 2 {
            return Err(GcsError::Config("sample_count must be at least 2".into()));
        }
        if !ev.sigma_levels.contains(&ev.plausibility_sigma) {
            return Err(GcsError::Config(format!(
                "plausibility_sigma {} is not one of sigma_levels",
                ev.plausibility_sigma
            )));
        }
        let st = &self.steering;
        if st.strength_grid.is_empty() || st.strength_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(GcsError::Config("strength_grid must be non-empty within [0, 1]".into()));
        }
        if st.prompt_len == 0 {
            return Err(GcsError::Config("prompt_len must be positive".into()));
        }
        st.model.validate().map_err(cfg_err)?;
        if self.workers == Some(0) {
            return Err(GcsError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.paths.output_dir)
    }

    fn hierarchy_spec(&self) -> HierarchySpec {
        HierarchySpec {
            seed: derive_seed(self.global_seed, "synth", "", 0),
            ..self.hierarchy.clone()
        }
    }

    fn repr_dir(&self) -> PathBuf {
        self.paths
            .input_dir
            .clone()
            .unwrap_or_else(|| self.layout().repr_dir())
    }
}

/// File naming under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

pub const PARTIAL_MARKER: &str = ".partial";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn repr_dir(&self) -> PathBuf {
        self.root.join("reprs")
    }

    pub fn repr_path(&self, concept: &str) -> PathBuf {
        self.repr_dir().join(format!("{concept}.gcsr"))
    }

    pub fn ensemble_path(&self, concept: &str, layer: u32) -> PathBuf {
        self.root.join("ensembles").join(format!("{concept}_L{layer}.gcsw"))
    }

    pub fn subspace_path(&self, concept: &str, layer: u32) -> PathBuf {
        self.root.join("subspaces").join(format!("{concept}_L{layer}.gcsg"))
    }

    pub fn sample_path(&self, concept: &str, layer: u32, sigma: f64) -> PathBuf {
        self.root
            .join("samples")
            .join(format!("{concept}_L{layer}_s{sigma}.gcsw"))
    }

    pub fn faithfulness_stem(&self, concept: &str, layer: u32, sigma: f64) -> PathBuf {
        self.root
            .join("faithfulness")
            .join(format!("{concept}_L{layer}_s{sigma}"))
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn partial_marker(&self) -> PathBuf {
        self.root.join(PARTIAL_MARKER)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(path.to_path_buf())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

/// Runs `f` inside a pool with the configured worker count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| GcsError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one stage with the `.partial` marker present until it succeeds.
pub fn guarded<T>(layout: &Layout, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    fs::create_dir_all(&layout.root).map_err(|e| GcsError::from(e).in_stage(stage))?;
    let marker = layout.partial_marker();
    fs::write(&marker, format!("running {stage}\n")).map_err(|e| GcsError::from(e).in_stage(stage))?;
    match f() {
        Ok(v) => {
            fs::remove_file(&marker).map_err(|e| GcsError::from(e).in_stage(stage))?;
            Ok(v)
        }
        Err(e) => {
            let e = e.in_stage(stage);
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

/// Representation pools in the configured source directory, ordered by
/// concept id.
pub fn load_pools(cfg: &PipelineConfig) -> Result<Vec<LabeledReprSet>> {
    let dir = cfg.repr_dir();
    if !dir.is_dir() {
        return Err(GcsError::MissingInput(dir));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gcsr"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(GcsError::MissingInput(dir.join("*.gcsr")));
    }
    let mut pools = paths
        .iter()
        .map(|p| read_repr_set(p).map(|(set, _)| set))
        .collect::<Result<Vec<_>>>()?;
    pools.sort_by(|a, b| (&a.concept_id, a.layer).cmp(&(&b.concept_id, b.layer)));
    Ok(pools)
}

pub fn stage_synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.hierarchy_spec();
    let layout = cfg.layout();
    let model = source_model_id(&spec);
    let mut written = Vec::new();
    for set in generate(&spec)? {
        let path = layout.repr_path(&set.concept_id);
        ensure_parent(&path)?;
        let manifest = ReprManifest::describe(&set, &model, spec.seed);
        write_repr_set(&set, &manifest, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn resample_config(cfg: &PipelineConfig, pool: &LabeledReprSet) -> ResampleConfig {
    ResampleConfig {
        seed: derive_seed(cfg.global_seed, "resample", &pool.concept_id, pool.layer as u64),
        ..cfg.resample.clone()
    }
}

pub fn stage_train(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let layout = cfg.layout();
    let mut written = Vec::new();
    for pool in load_pools(cfg)? {
        let ensemble = train_ensemble(&pool, &resample_config(cfg, &pool), &cfg.train)?;
        if let Some(bad) = ensemble.iter().find(|p| !converged(p, &cfg.train)) {
            return Err(GcsError::NonConvergence {
                iterations: bad.iterations_used,
                gradient_norm: f64::NAN,
            });
        }
        let path = layout.ensemble_path(&pool.concept_id, pool.layer);
        ensure_parent(&path)?;
        write_ensemble(&path, &ensemble)?;
        log::info!("trained {} probes for {}", ensemble.len(), pool.concept_id);
        written.push(path);
    }
    Ok(written)
}

pub fn stage_estimate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let layout = cfg.layout();
    let mut written = Vec::new();
    for pool in load_pools(cfg)? {
        let ensemble = read_ensemble(&layout.ensemble_path(&pool.concept_id, pool.layer), &pool.concept_id, pool.layer)?;
        let gs = fit_gaussian(&ensemble)?;
        let path = layout.subspace_path(&pool.concept_id, pool.layer);
        ensure_parent(&path)?;
        write_subspace(&path, &gs)?;
        written.push(path);
    }
    Ok(written)
}

fn sample_seed(cfg: &PipelineConfig, concept: &str, layer: u32, sigma: f64) -> u64 {
    let per_layer = derive_seed(cfg.global_seed, "sample", concept, layer as u64);
    derive_seed(per_layer, "sigma", concept, sigma.to_bits())
}

pub fn stage_sample(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let layout = cfg.layout();
    let mut written = Vec::new();
    for pool in load_pools(cfg)? {
        let (c, l) = (&pool.concept_id, pool.layer);
        let gs = read_subspace(&layout.subspace_path(c, l), c, l)?;
        let b = mean_intercept(&read_ensemble(&layout.ensemble_path(c, l), c, l)?);
        for &sigma in &cfg.evaluation.sigma_levels {
            let set = sample(&gs, sigma, cfg.evaluation.sample_count, sample_seed(cfg, c, l, sigma), b)?;
            let path = layout.sample_path(c, l, sigma);
            ensure_parent(&path)?;
            write_sampled(&path, &set)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn faithfulness_csv(reports: &[FaithfulnessReport]) -> String {
    let mut out =
        String::from("concept_id,layer,sigma,s_observed,s_sampled,s_cross,a_observed,a_sampled\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.concept_id, r.layer, r.sigma_level, r.s_observed, r.s_sampled, r.s_cross, r.a_observed, r.a_sampled
        );
    }
    out
}

pub fn stage_eval_faith(cfg: &PipelineConfig) -> Result<(Vec<FaithfulnessReport>, Vec<PathBuf>)> {
    let layout = cfg.layout();
    let pools = load_pools(cfg)?;
    let jobs: Vec<(&LabeledReprSet, f64)> = pools
        .iter()
        .flat_map(|p| cfg.evaluation.sigma_levels.iter().map(move |&s| (p, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(pool, sigma)| {
            let (c, l) = (&pool.concept_id, pool.layer);
            let observed = read_ensemble(&layout.ensemble_path(c, l), c, l)?;
            let sampled = read_sampled(&layout.sample_path(c, l, sigma), c, l, sigma)?;
            faithfulness(&observed, &sampled, pool)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for r in &reports {
        let stem = layout.faithfulness_stem(&r.concept_id, r.layer, r.sigma_level);
        let json = serde_json::to_string_pretty(r).expect("report serializes");
        written.push(write_file(&stem.with_extension("json"), json + "\n")?);
        for (kind, h) in [
            ("observed", &r.hist_observed),
            ("sampled", &r.hist_sampled),
            ("cross", &r.hist_cross),
        ] {
            let name = format!("{}.{kind}.csv", stem.file_name().unwrap().to_string_lossy());
            written.push(write_file(&stem.with_file_name(name), h.to_csv())?);
        }
    }
    written.push(write_file(&layout.table("faithfulness.csv"), faithfulness_csv(&reports))?);
    Ok((reports, written))
}

fn plausibility_sets(cfg: &PipelineConfig) -> Result<Vec<SampledVectorSet>> {
    let layout = cfg.layout();
    let sigma = cfg.evaluation.plausibility_sigma;
    load_pools(cfg)?
        .iter()
        .map(|p| read_sampled(&layout.sample_path(&p.concept_id, p.layer, sigma), &p.concept_id, p.layer, sigma))
        .collect()
}

pub fn stage_eval_plaus(cfg: &PipelineConfig) -> Result<(ConceptSimilarityMatrix, Vec<PathBuf>)> {
    let matrix = concept_similarity_matrix(&plausibility_sets(cfg)?)?;
    let path = write_file(&cfg.layout().table("similarity.csv"), matrix.to_csv())?;
    Ok((matrix, vec![path]))
}

pub fn stage_pca(cfg: &PipelineConfig) -> Result<(PcaProjection, Vec<PathBuf>)> {
    let sets = plausibility_sets(cfg)?;
    let means: Vec<Vec<f64>> = sets.iter().map(|s| set_mean(&s.vectors)).collect();
    let ids: Vec<String> = sets.iter().map(|s| s.concept_id.clone()).collect();
    let proj = pca_project(&means, &ids, false)?;
    let path = write_file(&cfg.layout().table("pca.csv"), proj.to_csv())?;
    Ok((proj, vec![path]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub concept_id: String,
    pub layer: u32,
    pub kind: BaselineKind,
    /// Cosine between the baseline direction and the subspace mean.
    pub cosine_with_mean: f64,
    /// Accuracy on the full pool (mean difference uses the midpoint of the
    /// class means as threshold).
    pub accuracy: f64,
}

fn kind_name(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::MeanDifference => "mean_difference",
        BaselineKind::SingleLinear => "single_linear",
    }
}

pub fn baselines_csv(rows: &[BaselineRow]) -> String {
    let mut out = String::from("concept_id,layer,kind,cosine_with_mean,accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.concept_id, r.layer, kind_name(r.kind), r.cosine_with_mean, r.accuracy
        );
    }
    out
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    dot(&a, &b) / (norm(&a) * norm(&b))
}

pub fn stage_baseline(cfg: &PipelineConfig) -> Result<(Vec<BaselineRow>, Vec<PathBuf>)> {
    let layout = cfg.layout();
    let pools = load_pools(cfg)?;
    let rows = pools
        .par_iter()
        .map(|pool| {
            let (c, l) = (&pool.concept_id, pool.layer);
            let gs = read_subspace(&layout.subspace_path(c, l), c, l)?;
            let baselines: [BaselineVector; 2] = [mean_difference(pool)?, single_linear(pool, &cfg.train)?];
            Ok(baselines
                .iter()
                .map(|b| BaselineRow {
                    concept_id: c.clone(),
                    layer: l,
                    kind: b.kind,
                    cosine_with_mean: cosine(&b.vector, &gs.mean),
                    accuracy: accuracy_on(&b.vector, b.intercept, pool, 0..pool.len()).unwrap_or(0.0),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let path = write_file(&layout.table("baselines.csv"), baselines_csv(&rows))?;
    Ok((rows, vec![path]))
}

/// Model, prompt, base steering config and readout used by the steer stage.
pub struct SteeringSetup {
    pub model: ToyTransformer,
    pub tokens: Vec<usize>,
    pub base: SteeringConfig,
    pub probe: LinearProbe,
}

pub fn steering_setup(cfg: &PipelineConfig) -> Result<SteeringSetup> {
    let layout = cfg.layout();
    let pools = load_pools(cfg)?;
    let pool = match &cfg.steering.concept {
        Some(id) => pools
            .iter()
            .find(|p| &p.concept_id == id)
            .ok_or_else(|| GcsError::Config(format!("unknown steering concept {id}")))?,
        None => &pools[0],
    };
    let (c, l) = (&pool.concept_id, pool.layer);
    let gs = read_subspace(&layout.subspace_path(c, l), c, l)?;
    let intercept = mean_intercept(&read_ensemble(&layout.ensemble_path(c, l), c, l)?) as f64;
    let spec = ToyModelSpec {
        dim: gs.dim(),
        ..cfg.steering.model.clone()
    };
    let model = ToyTransformer::from_spec(&spec)?;
    let vector: Vec<f64> = gs.mean.iter().map(|&x| x as f64).collect();
    let n = norm(&vector);
    if !(n > 0.0) {
        return Err(GcsError::DegenerateDirection);
    }
    let tokens = prompt_tokens(
        spec.vocab_size,
        cfg.steering.prompt_len,
        derive_seed(cfg.global_seed, "steer-prompt", c, l as u64),
    );
    Ok(SteeringSetup {
        base: SteeringConfig::new(model.n_layers(), vector.clone(), 0.0),
        probe: LinearProbe {
            weights: vector.iter().map(|x| x / n).collect(),
            intercept,
        },
        model,
        tokens,
    })
}

pub fn stage_steer(cfg: &PipelineConfig) -> Result<(Vec<SweepRow>, Vec<PathBuf>)> {
    let s = steering_setup(cfg)?;
    let rows = strength_sweep(&s.model, &s.tokens, &s.base, &s.probe, &cfg.steering.strength_grid)?;
    let path = write_file(&cfg.layout().table("steering.csv"), sweep_csv(&rows))?;
    Ok((rows, vec![path]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub global_seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn describe_artifacts(root: &Path, paths: &[PathBuf]) -> Result<Vec<ArtifactEntry>> {
    let mut entries = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            let rel = p.strip_prefix(root).unwrap_or(p);
            Ok(ArtifactEntry {
                path: rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    entries.dedup();
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub faithfulness: Vec<FaithfulnessReport>,
    pub similarity: ConceptSimilarityMatrix,
    /// `None` when fewer than three concepts are present.
    pub pca: Option<PcaProjection>,
    pub baselines: Vec<BaselineRow>,
    pub steering: Vec<SweepRow>,
    pub manifest: ArtifactManifest,
}

/// Runs every stage in order and writes `manifest.json` last.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let layout = cfg.layout();
    let _ = fs::remove_file(layout.manifest());
    let summary = with_workers(cfg.workers, || {
        guarded(&layout, "run", || {
            let tag = |stage: &'static str| move |e: GcsError| e.in_stage(stage);
            let mut written = Vec::new();
            if cfg.paths.input_dir.is_none() {
                written.extend(stage_synth(cfg).map_err(tag("synth"))?);
            }
            written.extend(stage_train(cfg).map_err(tag("train"))?);
            written.extend(stage_estimate(cfg).map_err(tag("estimate"))?);
            written.extend(stage_sample(cfg).map_err(tag("sample"))?);
            let (faith, w) = stage_eval_faith(cfg).map_err(tag("eval-faith"))?;
            written.extend(w);
            let (similarity, w) = stage_eval_plaus(cfg).map_err(tag("eval-plaus"))?;
            written.extend(w);
            let pca = if similarity.concept_ids.len() >= 3 {
                let (pca, w) = stage_pca(cfg).map_err(tag("pca"))?;
                written.extend(w);
                Some(pca)
            } else {
                log::warn!("skipping PCA: needs at least three concepts");
                None
            };
            let (baselines, w) = stage_baseline(cfg).map_err(tag("baseline"))?;
            written.extend(w);
            let (steering, w) = stage_steer(cfg).map_err(tag("steer"))?;
            written.extend(w);
            if cfg.paths.input_dir.is_none() {
                // Sidecars are artifacts too.
                let sidecars: Vec<PathBuf> = written
                    .iter()
                    .filter(|p| p.extension().is_some_and(|x| x == "gcsr"))
                    .map(|p| crate::repstore::manifest_path(p))
                    .collect();
                written.extend(sidecars);
            }
            let manifest = ArtifactManifest {
                global_seed: cfg.global_seed,
                artifacts: describe_artifacts(&layout.root, &written).map_err(tag("manifest"))?,
            };
            let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            write_file(&layout.manifest(), json + "\n").map_err(tag("manifest"))?;
            Ok(PipelineSummary {
                faithfulness: faith,
                similarity,
                pca,
                baselines,
                steering,
                manifest,
            })
        })
    })??;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> PipelineConfig {
        PipelineConfig::from_toml_str(&format!(
            r#"
global_seed = 3
workers = 1
[paths]
output_dir = "{}"
[hierarchy]
n_groups = 1
concepts_per_group = 2
dim = 8
samples_per_concept = 20
[resample]
m = 4
pos_per_subset = 20
neg_per_subset = 20
[evaluation]
sigma_levels = [1.0, 2.0]
sample_count = 10
[steering]
prompt_len = 3
[steering.model]
n_layers = 3
mlp_hidden = 8
vocab_size = 5
"#,
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn config_roundtrips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        assert!(matches!(PipelineConfig::from_toml_str("bogus = 1"), Err(GcsError::Config(_))));
        assert!(matches!(
            PipelineConfig::from_toml_str("[evaluation]\nplausibility_sigma = 9.0"),
            Err(GcsError::Config(_))
        ));
        assert_eq!(cfg.steering.strength_grid.len(), 9);
    }

    #[test]
    fn two_concept_run_skips_pca() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let summary = run_pipeline(&cfg).unwrap();
        assert!(summary.pca.is_none());
        assert!(!dir.path().join(PARTIAL_MARKER).exists());
        assert!(dir.path().join(MANIFEST_FILE).exists());
        assert!(stage_pca(&cfg).is_err());
    }

    #[test]
    fn failing_stage_is_tagged_and_marked() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.steering.concept = Some("nope".into());
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, GcsError::Stage { stage: "steer", .. }), "{err}");
        assert!(dir.path().join(PARTIAL_MARKER).exists());
        assert!(!dir.path().join(MANIFEST_FILE).exists());
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_samples_is_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        stage_synth(&cfg).unwrap();
        let err = stage_eval_plaus(&cfg).unwrap_err();
        assert!(matches!(err, GcsError::MissingInput(_)));
        assert_eq!(err.exit_code(), 3);
    }
}
