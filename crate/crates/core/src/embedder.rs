//! Message embedding into the staged decoder.
//!
//! The bit message is encoded once into an initial watermark feature on
//! the stage-0 latent grid, then injected along the decode path:
//! direct addition at stage 0, cross-attention fusion (CAF) blocks at
//! intermediate stages, and a spatial-fusion (SF) residual at the final
//! stage. Every injection's output layer is zero-initialized, so a fresh
//! model embeds the identity: watermarked decode == clean decode.

use latentmark_autograd::nn::{Conv2d, Linear};
use latentmark_autograd::{concat_channels, Arr, Scope, Tape, Tensor};
use ndarray::IxDyn;
use std::rc::Rc;

use crate::codec::{stage_widths, LatentCodec, StageInjector};
use crate::config::{CafMode, InjectionKind, ModelConfig};
use crate::error::Error;
use crate::message::BitMessage;

/// Maps the k-bit message to the stage-0 watermark feature: linear to the
/// latent grid, one conv on top. The conv is the residual output layer and
/// starts at zero.
pub struct MessageEncoder {
    pub k: usize,
    c: usize,
    h0: usize,
    w0: usize,
    linear: Linear,
    conv: Conv2d,
}

impl MessageEncoder {
    pub fn new(scope: &Scope<'_>, k: usize, c: usize, h0: usize, w0: usize) -> MessageEncoder {
        MessageEncoder {
            k,
            c,
            h0,
            w0,
            linear: Linear::new(&scope.sub("lin"), k, c * h0 * w0),
            conv: Conv2d::new_zero_output(&scope.sub("conv"), c, c, 3, 1, 1),
        }
    }

    /// Encode a batch of messages into [B, C, h0, w0].
    pub fn forward(&self, tape: &Rc<Tape>, msgs: &[BitMessage]) -> Result<Tensor, Error> {
        if msgs.is_empty() {
            return Err(Error::Malformed("empty message batch".into()));
        }
        for m in msgs {
            if m.k() != self.k {
                return Err(Error::PayloadLength {
                    expected: format!("{} bits", self.k),
                    got: m.k(),
                });
            }
        }
        let b = msgs.len();
        let mut flat = Vec::with_capacity(b * self.k);
        for m in msgs {
            flat.extend(m.as_f64());
        }
        let m = tape.constant(Arr::from_shape_vec(IxDyn(&[b, self.k]), flat).unwrap());
        let x = self.linear.forward(&m).silu();
        let grid = x.reshape(&[b, self.c, self.h0, self.w0]);
        Ok(self.conv.forward(&grid))
    }
}

/// One injection block at an intermediate decoder stage. In the full mode
/// the watermark feature queries the latent through scaled dot-product
/// attention; the ablation modes swap the fusion for plain addition or a
/// concat+conv, keeping the zero-residual-at-init property.
pub struct CafBlock {
    pub stage: usize,
    mode: CafMode,
    d: usize,
    adapter: Conv2d,
    q: Option<Conv2d>,
    k: Option<Conv2d>,
    v: Option<Conv2d>,
    res1: Option<Conv2d>,
    res2: Option<Conv2d>,
    fuse1: Option<Conv2d>,
    fuse2: Option<Conv2d>,
}

impl CafBlock {
    pub fn new(
        scope: &Scope<'_>,
        stage: usize,
        f_in: usize,
        width: usize,
        d: usize,
        mode: CafMode,
    ) -> CafBlock {
        // In Add mode the adapted feature lands on the latent directly, so
        // the adapter itself is the zero-initialized output layer.
        let adapter = match mode {
            CafMode::Add => Conv2d::new_zero_output(&scope.sub("adapt"), f_in, width, 1, 1, 0),
            _ => Conv2d::new(&scope.sub("adapt"), f_in, width, 1, 1, 0),
        };
        let mut blk = CafBlock {
            stage,
            mode,
            d,
            adapter,
            q: None,
            k: None,
            v: None,
            res1: None,
            res2: None,
            fuse1: None,
            fuse2: None,
        };
        match mode {
            CafMode::Caf => {
                blk.q = Some(Conv2d::new(&scope.sub("q"), width, d, 1, 1, 0));
                blk.k = Some(Conv2d::new(&scope.sub("k"), width, d, 1, 1, 0));
                blk.v = Some(Conv2d::new(&scope.sub("v"), width, d, 1, 1, 0));
                blk.res1 = Some(Conv2d::new(&scope.sub("res1"), d + width, width, 3, 1, 1));
                blk.res2 = Some(Conv2d::new_zero_output(&scope.sub("res2"), width, width, 3, 1, 1));
            }
            CafMode::Add => {}
            CafMode::Fuse => {
                blk.fuse1 = Some(Conv2d::new(&scope.sub("fuse1"), 2 * width, width, 3, 1, 1));
                blk.fuse2 = Some(Conv2d::new_zero_output(&scope.sub("fuse2"), width, width, 3, 1, 1));
            }
        }
        blk
    }

    /// Scaled dot-product attention over flattened spatial tokens: queries
    /// from the (adapted) watermark feature, keys/values from the latent.
    /// Returns (context [B,d,h,w], attention weights [B,T,T]).
    pub fn attention(&self, f_adapted: &Tensor, z: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(self.mode, CafMode::Caf, "attention only exists in the full mode");
        let fs = f_adapted.shape().to_vec();
        let zs = z.shape().to_vec();
        assert_eq!(
            (fs[0], fs[2], fs[3]),
            (zs[0], zs[2], zs[3]),
            "attention inputs must be spatially aligned"
        );
        let (b, h, w) = (zs[0], zs[2], zs[3]);
        let t = h * w;
        let d = self.d;

        let tokens = |x: &Tensor| x.reshape(&[b, x.shape()[1], t]).transpose_last2();
        let q = tokens(&self.q.as_ref().unwrap().forward(f_adapted)); // [B,T,d]
        let k = tokens(&self.k.as_ref().unwrap().forward(z));
        let v = tokens(&self.v.as_ref().unwrap().forward(z));

        let scores = q
            .bmm(&k.transpose_last2())
            .mul_scalar(1.0 / (d as f64).sqrt()); // [B,T,T]
        let attn = scores.softmax_lastdim();
        let ctx = attn.bmm(&v).transpose_last2().reshape(&[b, d, h, w]);
        (ctx, attn)
    }

    /// Consume the upsampled watermark feature and the stage latent;
    /// produce the next watermark feature and the watermarked latent.
    /// Optionally returns the query-averaged attention map [B,h,w].
    pub fn forward(
        &self,
        f_up: &Tensor,
        z: &Tensor,
        record_attn: bool,
    ) -> (Tensor, Tensor, Option<Arr>) {
        let f_adapted = self.adapter.forward(f_up);
        match self.mode {
            CafMode::Caf => {
                let (ctx, attn) = self.attention(&f_adapted, z);
                let cat = concat_channels(&[&ctx, &f_adapted]);
                let f_next = self
                    .res2
                    .as_ref()
                    .unwrap()
                    .forward(&self.res1.as_ref().unwrap().forward(&cat).silu());
                let z_wm = z.add(&f_next);
                let map = record_attn.then(|| {
                    let zs = z.shape().to_vec();
                    average_attention(&attn.value(), zs[2], zs[3])
                });
                (f_next, z_wm, map)
            }
            CafMode::Add => {
                let z_wm = z.add(&f_adapted);
                (f_adapted, z_wm, None)
            }
            CafMode::Fuse => {
                let cat = concat_channels(&[z, &f_adapted]);
                let f_next = self
                    .fuse2
                    .as_ref()
                    .unwrap()
                    .forward(&self.fuse1.as_ref().unwrap().forward(&cat).silu());
                let z_wm = z.add(&f_next);
                (f_next, z_wm, None)
            }
        }
    }
}

/// Average attention weight received by each key token, reshaped to the
/// stage grid: [B,T,T] -> [B,h,w].
pub fn average_attention(attn: &Arr, h: usize, w: usize) -> Arr {
    let s = attn.shape().to_vec();
    let (b, tq, tk) = (s[0], s[1], s[2]);
    assert_eq!(tk, h * w);
    let mut out = Arr::zeros(IxDyn(&[b, h, w]));
    for bi in 0..b {
        for kt in 0..tk {
            let mut acc = 0.0;
            for qt in 0..tq {
                acc += attn[[bi, qt, kt]];
            }
            out[[bi, kt / w, kt % w]] = acc / tq as f64;
        }
    }
    out
}

/// Final-stage spatial fusion: the initial watermark feature is flattened,
/// projected to one value per channel, broadcast over the full-resolution
/// grid, and fused into the latent with a zero-initialized residual conv.
pub struct SfBlock {
    c: usize,
    h0: usize,
    w0: usize,
    linear: Linear,
    fuse1: Conv2d,
    fuse2: Conv2d,
}

impl SfBlock {
    pub fn new(scope: &Scope<'_>, c: usize, h0: usize, w0: usize, width: usize) -> SfBlock {
        SfBlock {
            c,
            h0,
            w0,
            linear: Linear::new(&scope.sub("lin"), c * h0 * w0, c),
            fuse1: Conv2d::new(&scope.sub("fuse1"), width + c, width, 3, 1, 1),
            fuse2: Conv2d::new_zero_output(&scope.sub("fuse2"), width, width, 3, 1, 1),
        }
    }

    /// The spatially constant prior map broadcast from the projected
    /// message feature: [B, C, H, W].
    pub fn prior(&self, f_w1: &Tensor, h: usize, w: usize) -> Tensor {
        let b = f_w1.shape()[0];
        let flat = f_w1.reshape(&[b, self.c * self.h0 * self.w0]);
        self.linear.forward(&flat).broadcast_hw(h, w)
    }

    pub fn forward(&self, f_w1: &Tensor, z_final: &Tensor) -> Tensor {
        let zs = z_final.shape().to_vec();
        let phi = self.prior(f_w1, zs[2], zs[3]);
        let cat = concat_channels(&[z_final, &phi]);
        let res = self.fuse2.forward(&self.fuse1.forward(&cat).silu());
        z_final.add(&res)
    }
}

pub struct WatermarkEmbedder {
    pub plan: Vec<InjectionKind>,
    h0: usize,
    w0: usize,
    c: usize,
    pub message_encoder: MessageEncoder,
    cafs: Vec<Option<CafBlock>>,
    sf: Option<SfBlock>,
}

impl WatermarkEmbedder {
    pub fn new(scope: &Scope<'_>, cfg: &ModelConfig) -> WatermarkEmbedder {
        let n_stages = cfg.alpha.trailing_zeros() as usize;
        assert_eq!(cfg.injection.len(), n_stages + 1, "injection plan length");
        let widths = stage_widths(cfg.codec_width, n_stages);
        let h0 = cfg.image_size / cfg.alpha;
        let c = cfg.latent_channels;

        let message_encoder = MessageEncoder::new(&scope.sub("msg"), cfg.k, c, h0, h0);
        let mut cafs: Vec<Option<CafBlock>> = Vec::with_capacity(n_stages + 1);
        let mut f_ch = c;
        for stage in 0..=n_stages {
            if cfg.injection[stage] == InjectionKind::Caf {
                let blk = CafBlock::new(
                    &scope.sub(format!("caf{stage}").as_str()),
                    stage,
                    f_ch,
                    widths[stage],
                    c,
                    cfg.caf_mode,
                );
                f_ch = widths[stage];
                cafs.push(Some(blk));
            } else {
                cafs.push(None);
            }
        }
        let sf = cfg
            .injection
            .iter()
            .position(|k| *k == InjectionKind::Sf)
            .map(|stage| SfBlock::new(&scope.sub("sf"), c, h0, h0, widths[stage]));

        WatermarkEmbedder {
            plan: cfg.injection.clone(),
            h0,
            w0: h0,
            c,
            message_encoder,
            cafs,
            sf,
        }
    }

    /// Initial watermark feature for a message batch.
    pub fn encode_message(&self, tape: &Rc<Tape>, msgs: &[BitMessage]) -> Result<Tensor, Error> {
        self.message_encoder.forward(tape, msgs)
    }

    /// Build the per-decode injector. The latent fixes the tape and batch.
    pub fn injector(&self, latent: &Tensor, msgs: &[BitMessage]) -> Result<WatermarkInjector<'_>, Error> {
        let s = latent.shape().to_vec();
        if s.len() != 4 || s[1] != self.c || s[2] != self.h0 || s[3] != self.w0 {
            return Err(Error::Shape(format!(
                "latent shape {:?} does not match configured stage-0 grid [B,{},{},{}]",
                s, self.c, self.h0, self.w0
            )));
        }
        if msgs.len() != s[0] {
            return Err(Error::Shape(format!(
                "message batch {} != latent batch {}",
                msgs.len(),
                s[0]
            )));
        }
        let f_w1 = self.encode_message(&latent.tape(), msgs)?;
        let last_caf = self
            .plan
            .iter()
            .rposition(|k| *k == InjectionKind::Caf)
            .unwrap_or(0);
        Ok(WatermarkInjector {
            emb: self,
            f_cur: f_w1.clone(),
            f_w1,
            last_caf_stage: last_caf,
            record_attn: false,
            attention_maps: Vec::new(),
        })
    }

    /// Watermarked image in [0,1].
    pub fn embed(
        &self,
        codec: &LatentCodec,
        latent: &Tensor,
        msgs: &[BitMessage],
    ) -> Result<Tensor, Error> {
        let mut inj = self.injector(latent, msgs)?;
        Ok(codec.decode_staged(latent, Some(&mut inj)))
    }

    /// Watermarked image before the output clamp (training path).
    pub fn embed_raw(
        &self,
        codec: &LatentCodec,
        latent: &Tensor,
        msgs: &[BitMessage],
    ) -> Result<Tensor, Error> {
        let mut inj = self.injector(latent, msgs)?;
        Ok(codec.decode_staged_raw(latent, Some(&mut inj)))
    }

    /// Query-averaged attention map per CAF stage: (stage, [B,h,w]).
    pub fn export_attention_maps(
        &self,
        codec: &LatentCodec,
        latent: &Tensor,
        msgs: &[BitMessage],
    ) -> Result<Vec<(usize, Arr)>, Error> {
        let mut inj = self.injector(latent, msgs)?;
        inj.record_attn = true;
        let _ = codec.decode_staged(latent, Some(&mut inj));
        Ok(inj.attention_maps)
    }
}

/// Stage hook carrying the watermark feature through the decode.
pub struct WatermarkInjector<'a> {
    emb: &'a WatermarkEmbedder,
    f_cur: Tensor,
    f_w1: Tensor,
    last_caf_stage: usize,
    pub record_attn: bool,
    pub attention_maps: Vec<(usize, Arr)>,
}

impl StageInjector for WatermarkInjector<'_> {
    fn inject(&mut self, stage: usize, z: &Tensor) -> Tensor {
        match self.emb.plan[stage] {
            InjectionKind::DirectAdd => {
                assert_eq!(stage, 0, "direct addition is a stage-0 injection");
                z.add(&self.f_w1)
            }
            InjectionKind::Caf => {
                let f_up = self.f_cur.upsample_nearest2x();
                let blk = self.emb.cafs[stage].as_ref().expect("CAF block exists per plan");
                let (f_next, z_wm, map) = blk.forward(&f_up, z, self.record_attn);
                self.f_cur = f_next;
                if let Some(m) = map {
                    self.attention_maps.push((stage, m));
                }
                z_wm
            }
            InjectionKind::Sf => {
                let sf = self.emb.sf.as_ref().expect("SF block exists per plan");
                sf.forward(&self.f_w1, z)
            }
            InjectionKind::None => {
                // Keep the watermark feature spatially aligned for any CAF
                // still ahead.
                if stage > 0 && stage <= self.last_caf_stage {
                    self.f_cur = self.f_cur.upsample_nearest2x();
                }
                z.clone()
            }
        }
    }
}
