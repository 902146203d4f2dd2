use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use vqa_core::fragments::sample_fragment;
use vqa_core::harness::{
    ablate, evaluate, export_quality_map, train, write_log, write_predictions, Checkpoint, RunConfig,
};
use vqa_core::io::{read_video, write_ppm_frames};
use vqa_core::metrics::fmt_metric;
use vqa_core::rng::derive_seed;
use vqa_core::synthdata::{generate_corpus, read_corpus, write_corpus, CorpusSpec, Split};
use vqa_core::{FusionMode, Inference};

#[derive(Parser)]
#[command(name = "vqa", version, about = "Two-branch Siamese video quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured fusion mode.
    #[arg(long)]
    fusion: Option<FusionMode>,
    /// Overrides backbone weight sharing.
    #[arg(long, action = clap::ArgAction::Set)]
    shared: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus (.rgb8 videos and manifest.csv).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// `train` or `context_test`.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        /// Frame side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Write the fragment and aesthetic clip of one video as PPM frames.
    SampleFragments {
        #[command(flatten)]
        common: Common,
        /// Directory of PPM frames or an .rgb8 blob.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a model; writes a checkpoint and the epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training corpus; overrides `data.train` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a corpus with a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Inference,
    },
    /// Run the ablation matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Export technical, aesthetic and merged quality maps for one video.
    QualityMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Inference,
    },
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| vqa_core::Error::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::toy(0),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(f) = c.fusion {
        cfg.model.fusion = f;
    }
    if let Some(s) = c.shared {
        cfg.model.shared = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    match flag.clone().or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => Err(vqa_core::Error::Config(format!("no {what} corpus given (flag or config)")).into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { common, count, split, frames, size } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "context_test" => Split::ContextTest,
                other => return Err(vqa_core::Error::Config(format!("unknown split {other}")).into()),
            };
            let spec = CorpusSpec {
                count,
                frames,
                height: size,
                width: size,
                seed: common.seed.unwrap_or(0),
                split,
            };
            let corpus = generate_corpus(&spec)?;
            write_corpus(&common.out, &corpus)?;
            fs::write(common.out.join("corpus.json"), serde_json::to_string_pretty(&spec)?)?;
            println!("wrote {} videos to {}", corpus.len(), common.out.display());
        }
        Command::SampleFragments { common, input } => {
            let cfg = load_config(&common)?;
            let video = read_video(&input)?;
            let sampler = cfg.sampler.clone().with_seed(derive_seed(cfg.sampler.seed, &video.id));
            let frag = sample_fragment(&video, &sampler)?;
            let aes = vqa_core::fragments::resize_aesthetic(&video, sampler.side(), &sampler)?;
            fs::create_dir_all(&common.out)?;
            write_ppm_frames(&common.out, "fragment", frag.frames, frag.side, frag.side, &frag.pixels)?;
            write_ppm_frames(&common.out, "aesthetic", aes.frames, aes.side, aes.side, &aes.to_u8())?;
            fs::write(common.out.join("fragment.json"), serde_json::to_string_pretty(&frag.sidecar(&video.id))?)?;
            println!("fragment {}x{}x{} written to {}", frag.frames, frag.side, frag.side, common.out.display());
        }
        Command::Train { common, data, epochs } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.optim.epochs = e;
            }
            let dir = data_dir(&data, &cfg.data.train, "training")?;
            cfg.data.train = Some(dir.clone());
            let corpus = read_corpus(&dir)?;
            info!("training on {} videos", corpus.len());
            let out = train(&cfg, &corpus)?;
            out.checkpoint.save(&common.out)?;
            write_log(&common.out.join("train_log.csv"), &out.log)?;
            if let Some(last) = out.log.last() {
                println!(
                    "epoch {}: loss {:.6} train srcc {} plcc {}",
                    last.epoch,
                    last.loss,
                    last.train_srcc.map_or("NaR".into(), |v| format!("{v:.6}")),
                    last.train_plcc.map_or("NaR".into(), |v| format!("{v:.6}"))
                );
            }
        }
        Command::Eval { common, checkpoint, data, mode } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let corpus = read_corpus(&data)?;
            let report = evaluate(&ckpt, &corpus, mode)?;
            fs::create_dir_all(&common.out)?;
            write_predictions(&common.out.join("predictions.csv"), &report)?;
            println!("srcc {} plcc {}", fmt_metric(&report.srcc), fmt_metric(&report.plcc));
        }
        Command::Ablate { common, data, test } => {
            let cfg = load_config(&common)?;
            let train_dir = data_dir(&data, &cfg.data.train, "training")?;
            let test_dir = data_dir(&test, &cfg.data.test, "test")?;
            let table = ablate(&cfg, &read_corpus(&train_dir)?, &read_corpus(&test_dir)?)?;
            table.write(&common.out)?;
            for r in &table.rows {
                println!(
                    "{:<32} srcc {:>9} plcc {:>9} params {:>8}",
                    r.row,
                    r.srcc.map_or("NaR".into(), |v| format!("{v:.4}")),
                    r.plcc.map_or("NaR".into(), |v| format!("{v:.4}")),
                    r.params
                );
            }
        }
        Command::QualityMap { common, checkpoint, input, mode } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let video = read_video(&input)?;
            let report = export_quality_map(&ckpt, &video, mode, &common.out)?;
            println!("score {:.6}; maps written to {}", report.score, common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let user = e.downcast_ref::<vqa_core::Error>().is_some_and(|e| e.is_user_error());
            ExitCode::from(if user { 2 } else { 1 })
        }
    }
}
