//! `gcs`: estimate, sample, evaluate and steer with Gaussian concept
//! subspaces.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 missing input,
//! 4 probe non-convergence, 5 I/O, format or data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcs_core::pipeline::{self, guarded, with_workers, PipelineConfig};
use gcs_core::probes::Solver;
use gcs_core::Result;

#[derive(Debug, Parser)]
#[command(name = "gcs", version, about = "Gaussian concept subspace toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic hierarchical concept representations.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train a probe ensemble per concept.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fit a diagonal Gaussian to each ensemble.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Draw truncated samples from each subspace.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Similarity and accuracy of observed versus sampled vectors.
    EvalFaith {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Concept-by-concept similarity matrix.
    EvalPlaus {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plaus: PlausArgs,
    },
    /// 2-D PCA of concept means.
    Pca {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plaus: PlausArgs,
    },
    /// Steering strength sweep on the toy transformer.
    Steer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steer: SteerArgs,
    },
    /// Mean-difference and single-probe baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run every stage and write the artifact manifest.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        plaus: PlausArgs,
        #[command(flatten)]
        steer: SteerArgs,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Directory of existing `.gcsr` representation files.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Global seed every stage seed derives from.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (does not change outputs).
    #[arg(long, env = "GCS_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n_groups: Option<usize>,
    #[arg(long)]
    concepts_per_group: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples_per_concept: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Ensemble size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    pos_per_subset: Option<usize>,
    #[arg(long)]
    neg_per_subset: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<Solver>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Sigma levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Vectors per sigma level.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct PlausArgs {
    /// Sigma level of the sampled sets to compare.
    #[arg(long)]
    plausibility_sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct SteerArgs {
    /// Strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Concept to steer toward.
    #[arg(long)]
    concept: Option<String>,
    #[arg(long)]
    prompt_len: Option<usize>,
}

fn parse_solver(s: &str) -> std::result::Result<Solver, String> {
    match s {
        "newton" => Ok(Solver::Newton),
        "gradient-descent" => Ok(Solver::GradientDescent),
        other => Err(format!("unknown solver `{other}` (newton | gradient-descent)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        set(&mut cfg.paths.output_dir, self.output_dir.clone());
        if self.input_dir.is_some() {
            cfg.paths.input_dir = self.input_dir.clone();
        }
        set(&mut cfg.global_seed, self.seed);
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        Ok(cfg)
    }
}

impl SynthArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let h = &mut cfg.hierarchy;
        set(&mut h.n_groups, self.n_groups);
        set(&mut h.concepts_per_group, self.concepts_per_group);
        set(&mut h.dim, self.dim);
        set(&mut h.samples_per_concept, self.samples_per_concept);
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.resample.m, self.m);
        set(&mut cfg.resample.pos_per_subset, self.pos_per_subset);
        set(&mut cfg.resample.neg_per_subset, self.neg_per_subset);
        set(&mut cfg.train.lambda, self.lambda);
        set(&mut cfg.train.max_iterations, self.max_iterations);
        set(&mut cfg.train.solver, self.solver);
    }
}

impl SampleArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(levels) = &self.sigma {
            cfg.evaluation.sigma_levels = levels.clone();
            if !levels.contains(&cfg.evaluation.plausibility_sigma) {
                cfg.evaluation.plausibility_sigma = levels[0];
            }
        }
        set(&mut cfg.evaluation.sample_count, self.count);
    }
}

impl PlausArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.evaluation.plausibility_sigma, self.plausibility_sigma);
    }
}

impl SteerArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.steering.strength_grid, self.grid.clone());
        if self.concept.is_some() {
            cfg.steering.concept = self.concept.clone();
        }
        set(&mut cfg.steering.prompt_len, self.prompt_len);
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn stage<T>(
    cfg: &PipelineConfig,
    name: &'static str,
    f: impl FnOnce(&PipelineConfig) -> Result<T> + Send,
) -> Result<T>
where
    T: Send,
{
    let layout = cfg.layout();
    with_workers(cfg.workers, || guarded(&layout, name, || f(cfg)))?
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.command {
        Command::Synth { common, .. }
        | Command::Train { common, .. }
        | Command::Estimate { common }
        | Command::Sample { common, .. }
        | Command::EvalFaith { common, .. }
        | Command::EvalPlaus { common, .. }
        | Command::Pca { common, .. }
        | Command::Steer { common, .. }
        | Command::Baseline { common, .. }
        | Command::Run { common, .. }
        | Command::Config { common } => common.config()?,
    };
    match &cli.command {
        Command::Synth { synth, .. } => synth.apply(&mut cfg),
        Command::Train { train, .. } | Command::Baseline { train, .. } => train.apply(&mut cfg),
        Command::Sample { sample, .. } | Command::EvalFaith { sample, .. } => sample.apply(&mut cfg),
        Command::EvalPlaus { plaus, .. } | Command::Pca { plaus, .. } => plaus.apply(&mut cfg),
        Command::Steer { steer, .. } => steer.apply(&mut cfg),
        Command::Run {
            synth,
            train,
            sample,
            plaus,
            steer,
            ..
        } => {
            synth.apply(&mut cfg);
            train.apply(&mut cfg);
            sample.apply(&mut cfg);
            plaus.apply(&mut cfg);
            steer.apply(&mut cfg);
        }
        Command::Estimate { .. } | Command::Config { .. } => {}
    }
    cfg.validate()?;

    match cli.command {
        Command::Config { .. } => print!("{}", cfg.to_toml_string()),
        Command::Synth { .. } => report(&stage(&cfg, "synth", pipeline::stage_synth)?),
        Command::Train { .. } => report(&stage(&cfg, "train", pipeline::stage_train)?),
        Command::Estimate { .. } => report(&stage(&cfg, "estimate", pipeline::stage_estimate)?),
        Command::Sample { .. } => report(&stage(&cfg, "sample", pipeline::stage_sample)?),
        Command::EvalFaith { .. } => {
            let (reports, paths) = stage(&cfg, "eval-faith", pipeline::stage_eval_faith)?;
            report(&paths);
            print!("{}", pipeline::faithfulness_csv(&reports));
        }
        Command::EvalPlaus { .. } => report(&stage(&cfg, "eval-plaus", pipeline::stage_eval_plaus)?.1),
        Command::Pca { .. } => report(&stage(&cfg, "pca", pipeline::stage_pca)?.1),
        Command::Baseline { .. } => report(&stage(&cfg, "baseline", pipeline::stage_baseline)?.1),
        Command::Steer { .. } => report(&stage(&cfg, "steer", pipeline::stage_steer)?.1),
        Command::Run { .. } => {
            let summary = pipeline::run_pipeline(&cfg)?;
            println!(
                "wrote {} artifacts to {}",
                summary.manifest.artifacts.len(),
                cfg.paths.output_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
