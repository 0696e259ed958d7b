//! Toy image autoencoder with an explicitly staged decoder.
//!
//! The encoder downsamples by alpha = 2^n into a C-channel latent; the
//! decoder mirrors it with nearest-neighbor upsampling and runs as a
//! sequence of stages, invoking an injector hook at the arrival of each
//! stage (stage 0 = the raw latent, stage n = full resolution):
//!
//!   z --inject(0)--> block0 --up--> conv --inject(1)--> conv --up--> ...
//!
//! With no injector the decode is the clean reconstruction path; the
//! watermark embedder supplies an injector that adds message residuals.

use latentmark_autograd::nn::Conv2d;
use latentmark_autograd::{Scope, Tape, Tensor};
use std::rc::Rc;

use crate::config::ModelConfig;
use crate::error::Error;

/// Hook invoked by the staged decoder. Implementations may carry state
/// across stages (the watermark feature pipeline does).
pub trait StageInjector {
    fn inject(&mut self, stage: usize, z: &Tensor) -> Tensor;
}

/// Channel width of the decoder at each stage; tapers at high resolution
/// to keep full-res convolutions affordable.
pub fn stage_widths(base: usize, n_stages: usize) -> Vec<usize> {
    (0..=n_stages)
        .map(|i| match i {
            0 | 1 => base,
            2 => (base / 2).max(8),
            _ => (base / 2).max(8),
        })
        .collect()
}

struct DecoderStage {
    /// Maps the upsampled previous width to this stage's width (absent at
    /// stage 0, where `block_in` plays that role).
    pre: Option<Conv2d>,
    post: Conv2d,
}

pub struct LatentCodec {
    pub alpha: usize,
    pub n_stages: usize,
    pub latent_channels: usize,
    widths: Vec<usize>,
    enc_in: Conv2d,
    enc_down: Vec<Conv2d>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec_stages: Vec<DecoderStage>,
    dec_head: Conv2d,
}

impl LatentCodec {
    pub fn new(scope: &Scope<'_>, cfg: &ModelConfig) -> LatentCodec {
        let n_stages = cfg.alpha.trailing_zeros() as usize;
        let widths = stage_widths(cfg.codec_width, n_stages);
        let c = cfg.latent_channels;

        // Encoder mirrors the decoder widths in reverse.
        let enc = scope.sub("enc");
        let enc_in = Conv2d::new(&enc.sub("in"), 3, widths[n_stages], 3, 1, 1);
        let mut enc_down = Vec::new();
        for i in 0..n_stages {
            // moving from resolution 2^(n-i) width to the next-coarser width
            let (cin, cout) = (widths[n_stages - i], widths[n_stages - i - 1]);
            enc_down.push(Conv2d::new(&enc.sub(format!("down{i}").as_str()), cin, cout, 4, 2, 1));
        }
        let enc_out = Conv2d::new(&enc.sub("out"), widths[0], c, 3, 1, 1);

        let dec = scope.sub("dec");
        let dec_in = Conv2d::new(&dec.sub("in"), c, widths[0], 3, 1, 1);
        let mut dec_stages = Vec::new();
        for stage in 0..=n_stages {
            let s = dec.sub(format!("stage{stage}").as_str());
            let pre = (stage > 0)
                .then(|| Conv2d::new(&s.sub("pre"), widths[stage - 1], widths[stage], 3, 1, 1));
            let post = Conv2d::new(&s.sub("post"), widths[stage], widths[stage], 3, 1, 1);
            dec_stages.push(DecoderStage { pre, post });
        }
        let dec_head = Conv2d::new(&dec.sub("head"), widths[n_stages], 3, 3, 1, 1);

        LatentCodec {
            alpha: cfg.alpha,
            n_stages,
            latent_channels: c,
            widths,
            enc_in,
            enc_down,
            enc_out,
            dec_in,
            dec_stages,
            dec_head,
        }
    }

    /// Decoder channel width at a given stage (what an injector must match).
    pub fn width_at(&self, stage: usize) -> usize {
        self.widths[stage]
    }

    /// Latent spatial side for a full-resolution side length.
    pub fn latent_side(&self, image_side: usize) -> usize {
        image_side / self.alpha
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor, Error> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("encode expects [B,3,H,W], got {s:?}")));
        }
        if s[2] % self.alpha != 0 || s[3] % self.alpha != 0 {
            return Err(Error::Shape(format!(
                "image dims {}x{} not divisible by alpha {}",
                s[2], s[3], self.alpha
            )));
        }
        let mut z = self.enc_in.forward(image).silu();
        for down in &self.enc_down {
            z = down.forward(&z).silu();
        }
        Ok(self.enc_out.forward(&z))
    }

    /// Run the staged decoder. Output is the raw head signal; see
    /// `decode_staged` for the [0,1]-clamped image.
    pub fn decode_staged_raw(
        &self,
        latent: &Tensor,
        mut injector: Option<&mut dyn StageInjector>,
    ) -> Tensor {
        let s = latent.shape().to_vec();
        assert_eq!(s.len(), 4, "decode: latent must be [B,C,h,w]");
        assert_eq!(s[1], self.latent_channels, "decode: latent channel mismatch");

        let mut apply = |stage: usize, z: Tensor| -> Tensor {
            match injector.as_deref_mut() {
                Some(inj) => {
                    let out = inj.inject(stage, &z);
                    assert_eq!(
                        out.shape(),
                        z.shape(),
                        "injector at stage {stage} returned a mismatched shape"
                    );
                    out
                }
                None => z,
            }
        };

        let mut z = apply(0, latent.clone());
        z = self.dec_in.forward(&z).silu();
        z = self.dec_stages[0].post.forward(&z).silu();
        for stage in 1..=self.n_stages {
            z = z.upsample_nearest2x();
            z = self.dec_stages[stage].pre.as_ref().unwrap().forward(&z).silu();
            z = apply(stage, z);
            z = self.dec_stages[stage].post.forward(&z).silu();
        }
        self.dec_head.forward(&z)
    }

    /// Clean decode to an image in [0,1].
    pub fn decode_staged(&self, latent: &Tensor, injector: Option<&mut dyn StageInjector>) -> Tensor {
        self.decode_staged_raw(latent, injector).clamp(0.0, 1.0)
    }

    /// Convenience: clean reconstruction of an image batch (no injection).
    pub fn reconstruct(&self, tape: &Rc<Tape>, image: &latentmark_autograd::Arr) -> Result<Tensor, Error> {
        let x = tape.constant(image.clone());
        let z = self.encode(&x)?;
        Ok(self.decode_staged(&z, None))
    }
}
