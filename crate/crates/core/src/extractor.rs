//! Joint message recovery and tamper localization.
//!
//! A shallow shared backbone lifts the (possibly degraded) image into a
//! resolution-preserving feature map. The message head pools that map and
//! decodes k bit probabilities. The localization head looks at a
//! high-frequency residual of the image (block-DCT high-pass) stacked with
//! the shared features, runs a four-stage depthwise-separable pyramid, and
//! decodes a per-pixel tamper probability by upsampling every scale back
//! to full resolution with transposed convolutions.

use latentmark_autograd::nn::{Conv2d, ConvTranspose2d, DepthwiseConv2d, Linear};
use latentmark_autograd::{concat_channels, Scope, Tensor};

use crate::config::{ExtractorInput, ModelConfig};
use crate::dct::highfreq_tensor;
use crate::error::Error;
use crate::message::BitMessage;

/// Channel widths of the four pyramid stages.
pub const PYRAMID_WIDTHS: [usize; 4] = [24, 32, 48, 64];
/// Channel width carried by each mask upsampling chain.
const UP_WIDTH: usize = 8;

struct PyramidStage {
    down: Conv2d,
    dw: DepthwiseConv2d,
    pw1: Conv2d,
    pw2: Conv2d,
}

impl PyramidStage {
    fn new(scope: &Scope<'_>, cin: usize, cout: usize, first: bool) -> PyramidStage {
        // The first stage patchifies at stride 4 (image -> H/4); later
        // stages halve.
        let down = if first {
            Conv2d::new(&scope.sub("down"), cin, cout, 4, 4, 0)
        } else {
            Conv2d::new(&scope.sub("down"), cin, cout, 2, 2, 0)
        };
        PyramidStage {
            down,
            dw: DepthwiseConv2d::new(&scope.sub("dw"), cout, 3, 1),
            pw1: Conv2d::new(&scope.sub("pw1"), cout, 2 * cout, 1, 1, 0),
            pw2: Conv2d::new(&scope.sub("pw2"), 2 * cout, cout, 1, 1, 0),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let y = self.down.forward(x);
        let r = self.pw2.forward(&self.pw1.forward(&self.dw.forward(&y)).silu());
        y.add(&r)
    }
}

pub struct ExtractOutputs {
    /// Shared feature map [B, C_f, H, W].
    pub f_map: Tensor,
    /// High-frequency residual [B, 3, H, W].
    pub i_h: Tensor,
    /// Four scales, scale i at H/2^{i+1}.
    pub pyramid: Vec<Tensor>,
    /// Per-bit probabilities [B, k] in [0,1].
    pub msg_probs: Tensor,
    /// Tamper probabilities [B, 1, H, W] in [0,1].
    pub mask_probs: Tensor,
}

pub struct TamperExtractor {
    pub k: usize,
    pub c_f: usize,
    pub dct_cutoff: usize,
    pub input_mode: ExtractorInput,
    ef: Vec<Conv2d>,
    stages: Vec<PyramidStage>,
    mask_up: Vec<Vec<ConvTranspose2d>>,
    mask_head1: Conv2d,
    mask_head2: Conv2d,
    msg_fc1: Linear,
    msg_fc2: Linear,
}

impl TamperExtractor {
    pub fn new(scope: &Scope<'_>, cfg: &ModelConfig) -> TamperExtractor {
        let c_f = cfg.c_f;
        let ef_scope = scope.sub("ef");
        let ef = vec![
            Conv2d::new(&ef_scope.sub("c0"), 3, c_f, 3, 1, 1),
            Conv2d::new(&ef_scope.sub("c1"), c_f, c_f, 3, 1, 1),
            Conv2d::new(&ef_scope.sub("c2"), c_f, c_f, 3, 1, 1),
        ];

        let in_ch = match cfg.extractor_input {
            ExtractorInput::NoiseOnly | ExtractorInput::HighfreqOnly => 3,
            ExtractorInput::NoiseFmap | ExtractorInput::HighfreqFmap => 3 + c_f,
        };
        let mut stages = Vec::new();
        let mut cin = in_ch;
        for (i, &cout) in PYRAMID_WIDTHS.iter().enumerate() {
            stages.push(PyramidStage::new(
                &scope.sub(format!("stage{}", i + 1).as_str()),
                cin,
                cout,
                i == 0,
            ));
            cin = cout;
        }

        // Scale i sits at H/2^{i+1}; its chain needs i+1 doublings.
        let mut mask_up = Vec::new();
        for (i, &ci) in PYRAMID_WIDTHS.iter().enumerate() {
            let ups = i + 2;
            let mut chain = Vec::new();
            let up_scope = scope.sub(format!("mask/up{}", i + 1).as_str());
            let mut c = ci;
            for j in 0..ups {
                chain.push(ConvTranspose2d::new(
                    &up_scope.sub(format!("t{j}").as_str()),
                    c,
                    UP_WIDTH,
                    4,
                    1,
                ));
                c = UP_WIDTH;
            }
            mask_up.push(chain);
        }
        let mask_head1 = Conv2d::new(&scope.sub("mask/head1"), 4 * UP_WIDTH, 16, 3, 1, 1);
        let mask_head2 = Conv2d::new(&scope.sub("mask/head2"), 16, 1, 3, 1, 1);

        let msg_fc1 = Linear::new(&scope.sub("msg/fc1"), c_f, 128);
        let msg_fc2 = Linear::new(&scope.sub("msg/fc2"), 128, cfg.k);

        TamperExtractor {
            k: cfg.k,
            c_f,
            dct_cutoff: cfg.dct_cutoff,
            input_mode: cfg.extractor_input,
            ef,
            stages,
            mask_up,
            mask_head1,
            mask_head2,
            msg_fc1,
            msg_fc2,
        }
    }

    /// Resolution-preserving shared features [B, C_f, H, W].
    pub fn shared_features(&self, i_noise: &Tensor) -> Tensor {
        let mut x = self.ef[0].forward(i_noise).silu();
        x = self.ef[1].forward(&x).silu();
        self.ef[2].forward(&x).silu()
    }

    /// High-frequency residual of the image.
    pub fn highfreq(&self, i_noise: &Tensor) -> Tensor {
        highfreq_tensor(i_noise, self.dct_cutoff)
    }

    /// Four-scale feature pyramid from the configured input stack.
    pub fn encode_pyramid(&self, stack: &Tensor) -> Vec<Tensor> {
        let mut x = stack.clone();
        let mut pyr = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            x = s.forward(&x);
            pyr.push(x.clone());
        }
        pyr
    }

    /// Tamper probability map from the pyramid, at full resolution.
    pub fn decode_mask(&self, pyramid: &[Tensor]) -> Tensor {
        let mut ups = Vec::with_capacity(pyramid.len());
        for (chain, feat) in self.mask_up.iter().zip(pyramid) {
            let mut y = feat.clone();
            for (j, t) in chain.iter().enumerate() {
                y = t.forward(&y);
                if j + 1 < chain.len() {
                    y = y.silu();
                }
            }
            ups.push(y);
        }
        let refs: Vec<&Tensor> = ups.iter().collect();
        let cat = concat_channels(&refs);
        let h = self.mask_head2.forward(&self.mask_head1.forward(&cat).silu());
        h.sigmoid()
    }

    /// Per-bit probabilities from the pooled shared features.
    pub fn decode_message(&self, f_map: &Tensor) -> Tensor {
        let pooled = f_map.global_avg_pool();
        let h = self.msg_fc1.forward(&pooled).silu();
        self.msg_fc2.forward(&h).sigmoid()
    }

    /// Full forward pass with every intermediate exposed (training needs
    /// the graph tensors; inference wraps this).
    pub fn forward(&self, i_noise: &Tensor) -> Result<ExtractOutputs, Error> {
        let s = i_noise.shape().to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("extractor expects [B,3,H,W], got {s:?}")));
        }
        if s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(Error::Shape(format!(
                "extractor needs dims divisible by 32 for the pyramid, got {}x{}",
                s[2], s[3]
            )));
        }
        let f_map = self.shared_features(i_noise);
        let i_h = self.highfreq(i_noise);
        let stack = match self.input_mode {
            ExtractorInput::NoiseOnly => i_noise.clone(),
            ExtractorInput::HighfreqOnly => i_h.clone(),
            ExtractorInput::NoiseFmap => concat_channels(&[i_noise, &f_map]),
            ExtractorInput::HighfreqFmap => concat_channels(&[&i_h, &f_map]),
        };
        let pyramid = self.encode_pyramid(&stack);
        let mask_probs = self.decode_mask(&pyramid);
        let msg_probs = self.decode_message(&f_map);
        Ok(ExtractOutputs {
            f_map,
            i_h,
            pyramid,
            msg_probs,
            mask_probs,
        })
    }

    /// Inference wrapper: hard bits at threshold 0.5 per sample, plus the
    /// tamper probability map values.
    pub fn extract(
        &self,
        i_noise: &Tensor,
    ) -> Result<(Vec<BitMessage>, latentmark_autograd::Arr), Error> {
        let out = self.forward(i_noise)?;
        let probs = out.msg_probs.value();
        let b = probs.shape()[0];
        let mut msgs = Vec::with_capacity(b);
        for bi in 0..b {
            let row: Vec<f64> = (0..self.k).map(|i| probs[[bi, i]]).collect();
            msgs.push(BitMessage::from_probs(&row)?);
        }
        Ok((msgs, out.mask_probs.value()))
    }
}
