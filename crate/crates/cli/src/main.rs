use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lgtm_core::diffusion::SampleRequest;
use lgtm_core::exec::Execution;
use lgtm_core::harness::{
    end_to_end_sample, generated_pairs, ingest, read_motion_dir, sample_id, sample_pairs, train, train_evaluator,
    write_toy_corpus, DatasetIndex, Generator, Split, TrainConfig,
};
use lgtm_core::metrics::{evaluate, EvalConfig, EvalEncoders, EvalPair};
use lgtm_core::model::ContrastiveConfig;
use lgtm_core::motion::{write_motion_file, MotionSequence, MotionSidecar};
use lgtm_core::text::{
    DecomposeOptions, Decomposer, DecompositionCache, HttpCompletionClient, LlmSettings, PromptSpec,
};

#[derive(Parser)]
#[command(name = "lgtm", version, about = "Part-decomposed text-to-motion diffusion")]
struct Cli {
    /// Run every data-parallel stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the procedural 16-clip toy corpus.
    Toycorpus {
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate a dataset directory and write its index.json.
    Ingest { data: PathBuf },
    /// Give every caption a part-level decomposition.
    Decompose {
        data: PathBuf,
        #[command(flatten)]
        decomposer: DecomposerArgs,
        /// Re-query captions whose decomposition came from the fallback.
        #[arg(long)]
        refresh_fallbacks: bool,
    },
    /// Train the generator.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the evaluation encoders.
    TrainEval {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON evaluator config; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Generate motion from a caption, or one clip per caption of a split.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "from_data")]
        caption: Option<String>,
        /// Sample every caption of `--split` in this dataset, with the
        /// dataset's decompositions and clip lengths.
        #[arg(long, conflicts_with = "caption")]
        from_data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG of trajectory and joint heights.
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        decomposer: DecomposerArgs,
    },
    /// Score generated clips against reference clips; prints the JSON report.
    Eval {
        #[arg(long)]
        evaluator: PathBuf,
        /// Directory of generated clips (sidecars carry caption and part texts).
        #[arg(long)]
        generated: PathBuf,
        /// Dataset directory (uses `--split`) or a directory of clips.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 32)]
        pool_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DecomposerArgs {
    /// Never contact the completion service; use keyword rules.
    #[arg(long)]
    offline: bool,
    /// Fail rather than fall back when the service gives no usable answer.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 3)]
    retries: usize,
    /// Decomposition cache directory (default: `<data>/cache`, or none).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Prompt template file (JSON); the bundled prompt otherwise.
    #[arg(long)]
    prompt: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON training config; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set model.part.layers=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }
}

impl DecomposerArgs {
    fn build(&self, default_cache: Option<&Path>) -> Result<Decomposer> {
        let spec = match &self.prompt {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<PromptSpec>(&text)?
            }
            None => PromptSpec::bundled(),
        };
        let cache = match self.cache.as_deref().or(default_cache) {
            Some(dir) => Some(DecompositionCache::open(dir)?),
            None => None,
        };
        let client = if self.offline {
            None
        } else {
            match LlmSettings::from_env() {
                Some(s) => Some(Box::new(HttpCompletionClient::new(s)) as Box<_>),
                None if self.strict => bail!(
                    "strict mode needs a completion service; set {}",
                    LlmSettings::URL_VAR
                ),
                None => {
                    log::warn!("{} not set; decomposing offline", LlmSettings::URL_VAR);
                    None
                }
            }
        };
        let offline = client.is_none();
        Ok(Decomposer::new(
            spec,
            client,
            cache,
            DecomposeOptions {
                retries: self.retries,
                offline,
                strict: self.strict,
            },
        ))
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .with_context(|| format!("unknown split {s:?} (train, val, test)"))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_reference(path: &Path, split: Split) -> Result<Vec<MotionSequence>> {
    if path.join(lgtm_core::harness::INDEX_FILE).exists() {
        let index = DatasetIndex::load(path)?;
        let clips: Vec<_> = index.clips_in(split).collect();
        if clips.is_empty() {
            bail!("dataset has no {} clips", split.name());
        }
        clips.into_iter().map(|c| Ok(index.read_clip(c)?)).collect()
    } else {
        Ok(read_motion_dir(path)?.into_iter().map(|(m, _)| m).collect())
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Toycorpus { out, seed } => {
            let clips = write_toy_corpus(&out, seed)?;
            eprintln!("wrote {} clips to {}", clips.len(), out.display());
        }
        Command::Ingest { data } => {
            let index = ingest(&data, exec)?;
            eprintln!("indexed {} clips, {} captions", index.clips.len(), index.caption_count());
        }
        Command::Decompose {
            data,
            decomposer,
            refresh_fallbacks,
        } => {
            let mut index = DatasetIndex::load(&data)?;
            let d = decomposer.build(Some(&data.join("cache")))?;
            let summary = index.precompute_decompositions(&d, refresh_fallbacks, exec)?;
            print_json(&summary)?;
        }
        Command::Train { data, out, config } => {
            let mut cfg = config.load()?;
            if cli.sequential {
                cfg.parallel_data = false;
            }
            let index = DatasetIndex::load(&data)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
            let outcome = train(&cfg, &index, Some(&out))?;
            let first = outcome.losses.first().map_or(f64::NAN, |r| r.loss);
            let last = outcome.losses.last().map_or(f64::NAN, |r| r.loss);
            eprintln!(
                "trained {} steps ({} parameters): loss {first:.4} -> {last:.4}",
                outcome.losses.len(),
                outcome.generator.num_params()
            );
            for c in &outcome.checkpoints {
                eprintln!("checkpoint {}", c.display());
            }
        }
        Command::TrainEval {
            data,
            out,
            config,
            split,
        } => {
            let cfg: ContrastiveConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)?,
                None => ContrastiveConfig::default(),
            };
            let index = DatasetIndex::load(&data)?;
            let (enc, report) = train_evaluator(&index, parse_split(&split)?, &cfg)?;
            enc.save(&out)?;
            if !report.ambiguous_captions.is_empty() {
                eprintln!("{} captions label several motions", report.ambiguous_captions.len());
            }
            eprintln!(
                "evaluator trained: loss {:.4} -> {:.4}; saved {}",
                report.losses.first().copied().unwrap_or(f64::NAN),
                report.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Sample {
            checkpoint,
            caption,
            from_data,
            split,
            frames,
            steps,
            seed,
            out,
            plot,
            decomposer,
        } => {
            let generator = Generator::load(&checkpoint)?;
            if let Some(data) = from_data {
                let index = DatasetIndex::load(&data)?;
                let prompts: Vec<EvalPair> = lgtm_core::harness::eval_pairs(&index, parse_split(&split)?)?;
                let samples = sample_pairs(&generator, &prompts, steps, seed)?;
                for (i, s) in samples.iter().enumerate() {
                    let mut side = MotionSidecar::new(format!("{i:05}_{}", sample_id(&s.caption, seed)), &s.motion);
                    side.caption = Some(s.caption.clone());
                    side.part_texts = Some(s.parts.clone());
                    write_motion_file(&out, &s.motion, &side)?;
                }
                eprintln!("wrote {} clips to {}", samples.len(), out.display());
            } else {
                let caption = caption.expect("clap requires caption");
                let d = decomposer.build(None)?;
                let req = SampleRequest::new(caption, frames, steps, seed);
                let result = end_to_end_sample(&generator, &d, &req, &out, plot)?;
                eprintln!("wrote {}", result.path.display());
                if let Some(p) = result.plot {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
        Command::Eval {
            evaluator,
            generated,
            reference,
            split,
            pool_size,
            seed,
            out,
        } => {
            let enc = EvalEncoders::load(&evaluator)?;
            let generated = generated_pairs(&generated)?;
            let reference = load_reference(&reference, parse_split(&split)?)?;
            let cfg = EvalConfig {
                pool_size,
                seed,
                ..Default::default()
            };
            let report = evaluate(&enc, &generated, &reference, &cfg, exec)?;
            if let Some(p) = out {
                fs::write(&p, serde_json::to_vec_pretty(&report)?)?;
            }
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
