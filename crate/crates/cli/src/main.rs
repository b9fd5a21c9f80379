use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use fewshot::baseline::{train_baseline, BaselineModel, SoftmaxHead};
use fewshot::data::{generate_synthetic_dataset, read_volume, DatasetManifest, NoiseKind, MANIFEST_FILE};
use fewshot::harness::{
    parse_noise_kind, render_uncertainty, run_experiment, run_uncertainty_demo, sample_volumes, training_set, Corpus,
    ExperimentId, ExperimentSpec, HarnessConfig, ModelChoice,
};
use fewshot::head::{load_head, save_head, write_projected_embeddings, EmbeddingHead, ProjectedRow, TripletPipeline};
use fewshot::nn::{load_checkpoint, save_checkpoint, save_checkpoint_with_head};
use fewshot::train::train_triplet;
use fewshot::{Error, Result, Rng};

#[derive(Parser)]
#[command(name = "fewshot", version, about = "Few-shot volume classification with triplet embeddings")]
struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Training step budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Triplet,
    Baseline,
    Both,
}

impl From<ModelArg> for ModelChoice {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Triplet => ModelChoice::Triplet,
            ModelArg::Baseline => ModelChoice::Baseline,
            ModelArg::Both => ModelChoice::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write its checkpoint.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Few-shot slice limit per few-shot class.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit the PCA, mixture and gate on a triplet checkpoint's training embeddings.
    FitHead {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Classify volume files.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Head file; omit for a baseline checkpoint.
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(required = true)]
        volumes: Vec<PathBuf>,
    },
    /// Run one experimental regime and write its reports.
    Experiment {
        #[arg(long)]
        exp: ExperimentId,
        #[arg(long, default_value = "none")]
        noise: String,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value = "both")]
        model: ModelArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Gate verdicts for a held-out volume and three synthetic out-of-sample inputs.
    UncertaintyDemo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write PCA-projected slice embeddings of a split as TSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<HarnessConfig> {
    match path {
        Some(p) => HarnessConfig::load(p),
        None => Ok(HarnessConfig::default()),
    }
}

fn apply(cfg: &mut HarnessConfig, o: &Overrides) -> Result<()> {
    if let Some(s) = o.steps {
        cfg.step_budget = s;
    }
    if let Some(d) = o.embedding_dim {
        cfg.embedding_dim = d;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(DatasetManifest::read(dir.join(MANIFEST_FILE))?)
}

fn load_pipeline(checkpoint: &Path, head: &Path) -> Result<TripletPipeline> {
    let ck = load_checkpoint(checkpoint)?;
    Ok(TripletPipeline::new(ck.network, Some(load_head(head)?)))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let w = |e: io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::GenData { out: dir, seed } => {
            if let Some(s) = seed {
                cfg.corpus_seed = s;
            }
            cfg.validate()?;
            let g = generate_synthetic_dataset(&cfg.synth(), &dir)?;
            for warning in &g.warnings {
                log::warn!("{warning}");
            }
            writeln!(
                out,
                "wrote {} volumes to {} (histogram separability {:.3})",
                g.manifest.entries.len(),
                g.manifest_path.display(),
                g.histogram_separability
            )
            .map_err(w)?;
        }
        Command::Train {
            model,
            data,
            out: path,
            seed,
            limit,
            overrides,
        } => {
            apply(&mut cfg, &overrides)?;
            let corpus = load_corpus(&data)?;
            let set = training_set(&corpus, &cfg, limit, seed)?;
            let train_cfg = cfg.train(cfg.noise(NoiseKind::None));
            let losses = match model {
                ModelArg::Triplet => {
                    let t = train_triplet(&set, &cfg.network(), &train_cfg, &cfg.triplet(), seed)?;
                    save_checkpoint(&t.model, &t.optimizer, &path)?;
                    t.losses
                }
                ModelArg::Baseline => {
                    let t = train_baseline(&set, &cfg.network(), &train_cfg, seed)?;
                    let head = t.model.head()?.tensors();
                    save_checkpoint_with_head(&t.model.network, &t.optimizer, &head, &path)?;
                    t.losses
                }
                ModelArg::Both => return Err(Error::Config("train takes a single model".into())),
            };
            writeln!(
                out,
                "trained {} steps, final loss {:.6}, checkpoint {}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                path.display()
            )
            .map_err(w)?;
        }
        Command::FitHead {
            checkpoint,
            data,
            out: path,
            seed,
            limit,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            cfg.input_size = ck.network.config().input_size.0;
            let corpus = load_corpus(&data)?;
            let set = training_set(&corpus, &cfg, limit, seed)?;
            let images: Vec<_> = set.slices.iter().map(|s| &s.image).collect();
            let labels: Vec<usize> = set.slices.iter().map(|s| s.label).collect();
            let emb = ck.network.embed(&images)?;
            let (head, report) = EmbeddingHead::fit(
                &emb,
                &labels,
                &corpus.manifest.class_names(),
                &cfg.head(),
                &mut Rng::new(seed).split(3),
            )?;
            for warning in &report.warnings {
                log::warn!("{warning}");
            }
            save_head(&head, &path)?;
            writeln!(
                out,
                "head fitted in {} EM iterations (converged: {}), tau {:.4}, written to {}",
                report.gmm_trace.len(),
                report.converged,
                head.gate.tau,
                path.display()
            )
            .map_err(w)?;
        }
        Command::Classify {
            checkpoint,
            head,
            seed,
            volumes,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let sampling = cfg.sampling();
            match head {
                Some(h) => {
                    let pipeline = TripletPipeline::new(ck.network, Some(load_head(h)?));
                    let names = pipeline.head()?.class_names.clone();
                    for (i, p) in volumes.iter().enumerate() {
                        let v = read_volume(p)?;
                        let pred = pipeline.classify_volume(&v, &sampling, None, &mut Rng::new(seed).split(i as u64))?;
                        writeln!(
                            out,
                            "{}\t{}\t{:.4}\t{}",
                            p.display(),
                            names[pred.label],
                            pred.mean_loglik,
                            pred.verdict.as_str()
                        )
                        .map_err(w)?;
                    }
                }
                None => {
                    if ck.head.is_empty() {
                        return Err(Error::Config("checkpoint has no softmax head; pass --head".into()));
                    }
                    let dim = ck.network.config().embedding_dim;
                    let model = BaselineModel {
                        head: Some(SoftmaxHead::from_tensors(ck.head, dim)?),
                        network: ck.network,
                    };
                    for (i, p) in volumes.iter().enumerate() {
                        let v = read_volume(p)?;
                        let pred = model.classify_volume(&v, &sampling, None, &mut Rng::new(seed).split(i as u64))?;
                        writeln!(out, "{}\tclass{}", p.display(), pred.label).map_err(w)?;
                    }
                }
            }
        }
        Command::Experiment {
            exp,
            noise,
            limit,
            model,
            seed,
            data,
            out: dir,
            overrides,
        } => {
            apply(&mut cfg, &overrides)?;
            let corpus = load_corpus(&data)?;
            let spec = ExperimentSpec::new(exp, model.into(), parse_noise_kind(&noise)?, limit, seed, &cfg)?;
            let outcome = run_experiment(&spec, &corpus, &cfg, Some(&dir))?;
            info!("reports written to {}", dir.display());
            write!(out, "{}", outcome.text).map_err(w)?;
        }
        Command::UncertaintyDemo {
            checkpoint,
            head,
            volume,
            seed,
        } => {
            let pipeline = load_pipeline(&checkpoint, &head)?;
            let rows = run_uncertainty_demo(&pipeline, &read_volume(&volume)?, &cfg.sampling(), seed)?;
            write!(out, "{}", render_uncertainty(&rows)).map_err(w)?;
        }
        Command::ExportEmbeddings {
            checkpoint,
            head,
            data,
            split,
            seed,
            out: path,
        } => {
            let pipeline = load_pipeline(&checkpoint, &head)?;
            cfg.input_size = pipeline.network.config().input_size.0;
            let corpus = load_corpus(&data)?;
            let volumes = match split.as_str() {
                "train" => &corpus.train,
                "val" => &corpus.val,
                "test" => &corpus.test,
                other => return Err(Error::Config(format!("unknown split `{other}`"))),
            };
            let names = corpus.manifest.class_names();
            let h = pipeline.head()?;
            let mut rows = Vec::new();
            for (slices, (v, label)) in sample_volumes(volumes, &cfg, &Rng::new(seed))?.iter().zip(volumes) {
                let z = h.project(&pipeline.network.embed(slices)?)?;
                for (s, zr) in slices.iter().zip(z.iter_rows()) {
                    rows.push(ProjectedRow {
                        volume_id: v.id.clone(),
                        axis: s.axis,
                        index: s.index,
                        label: names[*label].clone(),
                        z: zr.to_vec(),
                    });
                }
            }
            match path {
                Some(p) => {
                    let mut f = io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
                    write_projected_embeddings(&mut f, &rows)
                        .and_then(|_| f.flush())
                        .map_err(|e| Error::io(&p, e))?;
                }
                None => write_projected_embeddings(&mut out, &rows).map_err(w)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
