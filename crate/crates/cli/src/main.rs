//! `latentmark`: train the codec and watermark stack, embed and recover
//! messages, localize tampering, and run holdout evaluations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use latentmark_core::checkpoint::Checkpoint;
use latentmark_core::config::Config;
use latentmark_core::dataset::Dataset;
use latentmark_core::eval;
use latentmark_core::imageio;
use latentmark_core::message::BitMessage;
use latentmark_core::metrics::psnr;
use latentmark_core::trainer::{pretrain_codec, train_watermark, Models};

#[derive(Parser)]
#[command(
    name = "latentmark",
    version,
    about = "Latent-space image watermarking: embed a k-bit message in a \
             staged decoder, recover it and localize tampering after edits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file (missing keys fall back to defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. --set optim.learning_rate=3e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let base = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => Config::default(),
        };
        Ok(base.apply_overrides(&self.set)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Phase one: fit the autoencoder on reconstruction MSE.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for checkpoints and step logs.
        #[arg(long, default_value = "runs/default")]
        out_dir: PathBuf,
        /// Resume from an earlier pretrain checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Phase two: freeze the codec, train embedder + extractor.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pretrain checkpoint to start from, or a watermark checkpoint
        /// to resume.
        #[arg(long)]
        init: PathBuf,
        #[arg(long, default_value = "runs/default")]
        out_dir: PathBuf,
    },
    /// Embed a hex message into one PNG.
    Embed {
        /// Watermark checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Message as k/4 hex digits (MSB first).
        #[arg(long)]
        bits: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Recover the message and tamper mask from a PNG.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Where to write the tamper-probability mask PNG.
        #[arg(long)]
        mask_output: Option<PathBuf>,
    },
    /// Holdout metrics across a distortion slate.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated slate, e.g. "identity,jpeg:80,gaussian-blur:1.5".
        /// Defaults to one setting of every family.
        #[arg(long)]
        distortions: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Dotted config override on top of the checkpoint's config
        /// (e.g. --set train.holdout_size=32).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Save the query-averaged cross-attention map of every CAF stage.
    ExportAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Message as k/4 hex digits (MSB first).
        #[arg(long)]
        bits: String,
        #[arg(long, default_value = "attn")]
        out_dir: PathBuf,
    },
}

fn load_models(path: &Path, set: &[String]) -> Result<(Config, Models)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ckpt.config.apply_overrides(set)?;
    let models = Models::new(&cfg);
    ckpt.restore_params(&models.store)?;
    Ok((cfg, models))
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Pretrain { cfg, out_dir, resume } => {
            let cfg = cfg.load()?;
            let resume_ckpt = match &resume {
                Some(p) => {
                    Some(Checkpoint::load(p).with_context(|| format!("reading {}", p.display()))?)
                }
                None => None,
            };
            let run = pretrain_codec(&cfg, resume_ckpt.as_ref(), Some(&out_dir))?;
            let ds = Dataset::holdout(&cfg);
            let psnr_db = eval::reconstruction_psnr(&run.models, &ds)?;
            println!(
                "pretrain done: {} steps, final mse {:.6}, holdout reconstruction {:.2} dB",
                run.losses.len(),
                run.losses.last().copied().unwrap_or(f64::NAN),
                psnr_db
            );
            println!("checkpoint: {}", out_dir.join("pretrain.ckpt").display());
        }
        Cmd::Train { cfg, init, out_dir } => {
            let cfg = cfg.load()?;
            let init_ckpt =
                Checkpoint::load(&init).with_context(|| format!("reading {}", init.display()))?;
            let run = train_watermark(&cfg, &init_ckpt, Some(&out_dir))?;
            println!(
                "watermark training done: {} steps, final loss {:.6}",
                run.losses.len(),
                run.losses.last().copied().unwrap_or(f64::NAN)
            );
            println!("checkpoint: {}", out_dir.join("watermark.ckpt").display());
        }
        Cmd::Embed { ckpt, input, bits, output } => {
            let (cfg, models) = load_models(&ckpt, &[])?;
            let msg = BitMessage::from_hex(&bits, cfg.model.k)?;
            let img = imageio::load_image_batch(&input, cfg.model.image_size)
                .with_context(|| format!("reading {}", input.display()))?;
            let z = models.encode_image(&img)?;
            let clean = models.codec.decode_staged(&z, None);
            let marked = models.embedder.embed(&models.codec, &z, std::slice::from_ref(&msg))?;
            let (p, capped) = psnr(&marked.value(), &clean.value());
            imageio::save_image_png(&output, &marked.value())?;
            println!(
                "embedded {} bits; marked-vs-clean psnr {:.2} dB{}",
                cfg.model.k,
                p,
                if capped { " (capped)" } else { "" }
            );
            println!("wrote {}", output.display());
        }
        Cmd::Extract { ckpt, input, mask_output } => {
            let (cfg, models) = load_models(&ckpt, &[])?;
            let img = imageio::load_image_batch(&input, cfg.model.image_size)
                .with_context(|| format!("reading {}", input.display()))?;
            let (msgs, mask) = models.extract_image(&img)?;
            let tampered = mask.iter().filter(|&&v| v > 0.5).count() as f64 / mask.len() as f64;
            println!("message: {}", msgs[0].to_hex());
            println!("tampered fraction: {tampered:.4}");
            if let Some(p) = &mask_output {
                imageio::save_mask_png(p, &mask)?;
                println!("wrote {}", p.display());
            }
        }
        Cmd::Evaluate { ckpt, distortions, seed, json, set } => {
            let (cfg, models) = load_models(&ckpt, &set)?;
            let specs = match &distortions {
                Some(list) => eval::parse_distortion_list(list, &cfg.distortion)?,
                None => eval::default_distortions(&cfg.distortion),
            };
            let ds = Dataset::holdout(&cfg);
            let report = eval::evaluate(&models, &ds, &specs, seed)?;
            print!("{}", report.to_table());
            if let Some(p) = &json {
                std::fs::write(p, report.to_json())?;
                println!("wrote {}", p.display());
            }
        }
        Cmd::ExportAttn { ckpt, input, bits, out_dir } => {
            let (cfg, models) = load_models(&ckpt, &[])?;
            let msg = BitMessage::from_hex(&bits, cfg.model.k)?;
            let img = imageio::load_image_batch(&input, cfg.model.image_size)
                .with_context(|| format!("reading {}", input.display()))?;
            let z = models.encode_image(&img)?;
            let maps = models
                .embedder
                .export_attention_maps(&models.codec, &z, std::slice::from_ref(&msg))?;
            if maps.is_empty() {
                bail!("this model records no attention (no CAF stages in full mode)");
            }
            std::fs::create_dir_all(&out_dir)?;
            for (stage, map) in &maps {
                // Min-max normalize each map so the PNG uses the full range.
                let (lo, hi) = map
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                let norm =
                    if hi > lo { map.mapv(|v| (v - lo) / (hi - lo)) } else { map.mapv(|_| 0.0) };
                let path = out_dir.join(format!("attn_stage{stage}.png"));
                imageio::save_mask_png(&path, &norm)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
