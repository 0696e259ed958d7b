//! Two-phase training. Phase one fits the codec on reconstruction MSE;
//! phase two freezes it and trains embedder + extractor against the
//! distortion pool. Every stochastic choice derives from
//! (seed, phase, micro-step), so a run resumed from a checkpoint is
//! bit-identical to one that never stopped.

use std::io::Write;
use std::path::Path;

use latentmark_autograd::{cosine_lr, AdamW, Arr, Param, ParamStore, Tape};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Phase};
use crate::codec::LatentCodec;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::distortion::DistortionSpec;
use crate::embedder::WatermarkEmbedder;
use crate::error::Error;
use crate::extractor::TamperExtractor;
use crate::message::BitMessage;
use crate::objectives::{total_loss, GradientMagnitudeDistance};

const TAG_PRETRAIN: u64 = 11;
const TAG_WATERMARK: u64 = 12;

fn step_rng(seed: u64, tag: u64, micro: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::dataset::mix(seed, tag, micro))
}

/// The three sub-models over one shared parameter store.
pub struct Models {
    pub store: ParamStore,
    pub codec: LatentCodec,
    pub embedder: WatermarkEmbedder,
    pub extractor: TamperExtractor,
}

impl Models {
    pub fn new(cfg: &Config) -> Models {
        let store = ParamStore::new(cfg.train.seed);
        let codec = LatentCodec::new(&store.root().sub("codec"), &cfg.model);
        let embedder = WatermarkEmbedder::new(&store.root().sub("embedder"), &cfg.model);
        let extractor = TamperExtractor::new(&store.root().sub("extractor"), &cfg.model);
        Models { store, codec, embedder, extractor }
    }

    /// Rebuild the architecture from the checkpoint's config and load its
    /// weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Models, Error> {
        let m = Models::new(&ckpt.config);
        ckpt.restore_params(&m.store)?;
        Ok(m)
    }

    /// Encode a `[B,3,H,W]` pixel array on a fresh tape (inference entry
    /// point; the returned tensor keeps its tape alive).
    pub fn encode_image(&self, img: &Arr) -> Result<latentmark_autograd::Tensor, Error> {
        let tape = Tape::new();
        self.codec.encode(&tape.constant(img.clone()))
    }

    /// Recover per-sample messages and the tamper-probability map from a
    /// `[B,3,H,W]` pixel array.
    pub fn extract_image(&self, img: &Arr) -> Result<(Vec<BitMessage>, Arr), Error> {
        let tape = Tape::new();
        self.extractor.extract(&tape.constant(img.clone()))
    }
}

/// Byte image of a parameter subset, for freeze assertions.
pub fn param_fingerprint(store: &ParamStore, prefix: &str) -> Vec<u8> {
    let mut bytes = Vec::new();
    for p in store.params() {
        if p.name().starts_with(prefix) {
            bytes.extend_from_slice(p.name().as_bytes());
            for v in p.value().iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    bytes
}

pub struct TrainRun {
    pub models: Models,
    pub checkpoint: Checkpoint,
    /// One entry per optimizer step: the mean total loss of its
    /// micro-batches.
    pub losses: Vec<f64>,
}

struct StepLog {
    file: Option<std::io::BufWriter<std::fs::File>>,
    echo_every: u64,
}

impl StepLog {
    fn open(dir: Option<&Path>, phase: Phase, echo_every: u64) -> Result<StepLog, Error> {
        let file = match dir {
            None => None,
            Some(d) => {
                std::fs::create_dir_all(d)?;
                let path = d.join(format!("{}.log.jsonl", phase.name()));
                Some(std::io::BufWriter::new(std::fs::File::create(path)?))
            }
        };
        Ok(StepLog { file, echo_every })
    }

    fn record(&mut self, step: u64, value: &serde_json::Value) -> Result<(), Error> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, value).map_err(|e| Error::Io(e.into()))?;
            f.write_all(b"\n")?;
            if step % self.echo_every == 0 {
                f.flush()?;
                println!("{value}");
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), Error> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

fn save_abort(dir: Option<&Path>, phase: Phase, last_good: &Checkpoint) -> String {
    match dir {
        None => String::new(),
        Some(d) => {
            let path = d.join(format!("{}.aborted.ckpt", phase.name()));
            match last_good.save(&path) {
                Ok(()) => format!("; last good checkpoint at {}", path.display()),
                Err(e) => format!("; failed to save last-good checkpoint: {e}"),
            }
        }
    }
}

/// Phase one: codec reconstruction on MSE. Only `codec/` params update;
/// embedder and extractor stay at their initialization. Pass a
/// `Phase::Pretrain` checkpoint to resume.
pub fn pretrain_codec(
    cfg: &Config,
    resume: Option<&Checkpoint>,
    dir: Option<&Path>,
) -> Result<TrainRun, Error> {
    pretrain_codec_until(cfg, resume, dir, None)
}

/// `pretrain_codec` stopping after optimizer step `stop_at` while keeping
/// the full-budget learning-rate schedule, as an interruption would. The
/// returned checkpoint resumes bit-exactly.
pub fn pretrain_codec_until(
    cfg: &Config,
    resume: Option<&Checkpoint>,
    dir: Option<&Path>,
    stop_at: Option<u64>,
) -> Result<TrainRun, Error> {
    let models = Models::new(cfg);
    let mut start = 0u64;
    let mut opt = AdamW::new(cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps, cfg.optim.weight_decay);
    if let Some(ck) = resume {
        if ck.phase != Phase::Pretrain {
            return Err(Error::Checkpoint("resume checkpoint is not a pretrain checkpoint".into()));
        }
        ck.restore_params(&models.store)?;
        ck.restore_optimizer(&mut opt, &models.store)?;
        start = ck.step;
    }
    let ds = Dataset::train(cfg)?;
    let codec_params: Vec<Param> = models
        .store
        .params()
        .into_iter()
        .filter(|p| p.name().starts_with("codec/"))
        .collect();

    let mut log = StepLog::open(dir, Phase::Pretrain, cfg.train.log_every)?;
    let total_steps = cfg.train.pretrain_steps;
    let stop = stop_at.unwrap_or(total_steps).min(total_steps);
    let accum = cfg.optim.grad_accum as u64;
    let inv_accum = 1.0 / accum as f64;
    let mut losses = Vec::new();
    let mut last_good = Checkpoint::capture(cfg, Phase::Pretrain, start, &models.store, Some(&opt));

    for step in start..stop {
        let mut step_loss = 0.0;
        for micro in 0..accum {
            let mut rng = step_rng(cfg.train.seed, TAG_PRETRAIN, step * accum + micro);
            let idx: Vec<usize> =
                (0..cfg.optim.batch_size).map(|_| rng.gen_range(0..ds.len())).collect();
            let tape = Tape::new();
            let x = tape.constant(ds.batch(&idx));
            let z = models.codec.encode(&x)?;
            let recon = models.codec.decode_staged_raw(&z, None);
            let loss = recon.sub(&x).square().mean_all();
            let val = loss.scalar();
            if !val.is_finite() {
                let extra = save_abort(dir, Phase::Pretrain, &last_good);
                return Err(Error::Training(format!(
                    "non-finite reconstruction loss {val} at step {step}{extra}"
                )));
            }
            step_loss += val * inv_accum;
            tape.backward(&loss.mul_scalar(inv_accum));
        }
        let lr = cosine_lr(cfg.train.pretrain_learning_rate, step, total_steps, cfg.optim.warmup_steps);
        opt.step(&codec_params, lr);
        models.store.zero_grads();
        losses.push(step_loss);
        log.record(
            step,
            &serde_json::json!({
                "phase": "pretrain", "step": step, "lr": lr, "mse": step_loss,
            }),
        )?;
        if step % cfg.train.log_every == 0 {
            last_good = Checkpoint::capture(cfg, Phase::Pretrain, step + 1, &models.store, Some(&opt));
        }
    }
    log.finish()?;

    let checkpoint = Checkpoint::capture(cfg, Phase::Pretrain, stop, &models.store, Some(&opt));
    if let Some(d) = dir {
        checkpoint.save(&d.join("pretrain.ckpt"))?;
    }
    Ok(TrainRun { models, checkpoint, losses })
}

/// Broadcast one `[3, S, S]` donor image to `[B, 3, S, S]`.
fn donor_batch(img: &Arr, b: usize) -> Arr {
    let s = img.shape();
    let mut out = Arr::zeros(IxDyn(&[b, s[0], s[1], s[2]]));
    for bi in 0..b {
        for c in 0..s[0] {
            for y in 0..s[1] {
                for x in 0..s[2] {
                    out[[bi, c, y, x]] = img[[c, y, x]];
                }
            }
        }
    }
    out
}

/// Phase two: freeze the codec, train embedder + extractor end to end
/// through the distortion layer. `init` is either a pretrain checkpoint
/// (fresh start) or a watermark checkpoint (resume at its step).
pub fn train_watermark(
    cfg: &Config,
    init: &Checkpoint,
    dir: Option<&Path>,
) -> Result<TrainRun, Error> {
    train_watermark_until(cfg, init, dir, None)
}

/// `train_watermark` stopping after optimizer step `stop_at` while keeping
/// the full-budget learning-rate schedule; see `pretrain_codec_until`.
pub fn train_watermark_until(
    cfg: &Config,
    init: &Checkpoint,
    dir: Option<&Path>,
    stop_at: Option<u64>,
) -> Result<TrainRun, Error> {
    let models = Models::new(cfg);
    init.restore_params(&models.store)?;
    let mut opt = AdamW::new(cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps, cfg.optim.weight_decay);
    let start = match init.phase {
        Phase::Pretrain => 0,
        Phase::Watermark => {
            init.restore_optimizer(&mut opt, &models.store)?;
            init.step
        }
    };

    // Frozen-generator contract: codec params enter every graph as
    // constants from here on; the fingerprint check at the end makes the
    // guarantee observable.
    models.store.set_trainable_prefix("codec/", false);
    let codec_before = param_fingerprint(&models.store, "codec/");
    let trainable: Vec<Param> = models.store.trainable_params();

    let ds = Dataset::train(cfg)?;
    let percep = GradientMagnitudeDistance::default();
    let mut log = StepLog::open(dir, Phase::Watermark, cfg.train.log_every)?;
    let total_steps = cfg.train.steps;
    let stop = stop_at.unwrap_or(total_steps).min(total_steps);
    let accum = cfg.optim.grad_accum as u64;
    let inv_accum = 1.0 / accum as f64;
    let mut losses = Vec::new();
    let mut last_good = Checkpoint::capture(cfg, Phase::Watermark, start, &models.store, Some(&opt));

    for step in start..stop {
        let mut step_loss = 0.0;
        let mut last_report = None;
        let mut last_kind = "";
        for micro in 0..accum {
            let mut rng = step_rng(cfg.train.seed, TAG_WATERMARK, step * accum + micro);
            let idx: Vec<usize> =
                (0..cfg.optim.batch_size).map(|_| rng.gen_range(0..ds.len())).collect();
            let msgs: Vec<BitMessage> = (0..cfg.optim.batch_size)
                .map(|_| BitMessage::random(cfg.model.k, &mut rng))
                .collect::<Result<_, _>>()?;
            let donor_idx = rng.gen_range(0..ds.len());
            let spec = if step < cfg.distortion.warmup_identity_steps {
                DistortionSpec::Identity
            } else {
                DistortionSpec::sample(&cfg.distortion, &mut rng)?
            };
            let region_seed: u64 = rng.gen();

            let tape = Tape::new();
            let x = tape.constant(ds.batch(&idx));
            let z = models.codec.encode(&x)?;
            let clean_raw = models.codec.decode_staged_raw(&z, None);
            let gen_raw = models.embedder.embed_raw(&models.codec, &z, &msgs)?;
            let gen = gen_raw.clamp(0.0, 1.0);
            let clean_px = clean_raw.value().mapv(|v| v.clamp(0.0, 1.0));
            let donor = donor_batch(ds.image(donor_idx), cfg.optim.batch_size);
            let (i_noise, mask_gt) = spec.apply(&gen, &clean_px, Some(&donor), region_seed)?;
            let out = models.extractor.forward(&i_noise)?;

            // Image fidelity compares the raw (unclamped) decodes so the
            // gradient never dies outside [0, 1]. The residual-cost weight
            // follows the ramp schedule so the message can bootstrap first.
            let loss_cfg = cfg.loss.with_ct_scale(cfg.loss.ct_scale(step));
            let pair = total_loss(
                &out.msg_probs,
                &msgs,
                &out.mask_probs,
                &mask_gt,
                &gen_raw,
                &clean_raw.value(),
                &loss_cfg,
                &percep,
            );
            let (loss, report) = match pair {
                Ok(v) => v,
                Err(e) => {
                    let extra = save_abort(dir, Phase::Watermark, &last_good);
                    return Err(Error::Training(format!("step {step}: {e}{extra}")));
                }
            };
            step_loss += report.total * inv_accum;
            last_report = Some(report);
            last_kind = spec.kind_name();
            tape.backward(&loss.mul_scalar(inv_accum));
        }
        let lr = cosine_lr(cfg.optim.learning_rate, step, total_steps, cfg.optim.warmup_steps);
        opt.step(&trainable, lr);
        models.store.zero_grads();
        losses.push(step_loss);
        let rep = last_report.expect("at least one micro-batch");
        log.record(
            step,
            &serde_json::json!({
                "phase": "watermark", "step": step, "lr": lr, "distortion": last_kind,
                "total": step_loss, "wm": rep.wm, "mask": rep.mask, "image": rep.image,
                "image_mse": rep.image_mse, "image_perceptual": rep.image_perceptual,
                "image_ct": rep.image_ct,
            }),
        )?;
        if step % cfg.train.log_every == 0 {
            last_good =
                Checkpoint::capture(cfg, Phase::Watermark, step + 1, &models.store, Some(&opt));
        }
    }
    log.finish()?;

    assert_eq!(
        codec_before,
        param_fingerprint(&models.store, "codec/"),
        "frozen-generator contract violated: codec weights changed"
    );

    let checkpoint = Checkpoint::capture(cfg, Phase::Watermark, stop, &models.store, Some(&opt));
    if let Some(d) = dir {
        checkpoint.save(&d.join("watermark.ckpt"))?;
    }
    Ok(TrainRun { models, checkpoint, losses })
}
