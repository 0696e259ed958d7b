//! Simulated edits and degradations applied to the generated image during
//! training and evaluation, together with the ground-truth tamper mask.
//!
//! Every distortion is a pure function of (inputs, seed). Kinds that keep
//! pixel provenance in the generated image (blur, JPEG, brightness,
//! contrast, identity) yield an all-zero mask; region replacements mark
//! exactly the replaced pixels; the global-rewrite proxy marks everything.
//! All kinds except the global rewrite keep a gradient path into the
//! generated image so the embedder can be trained through them.

use latentmark_autograd::{Arr, Tensor};
use ndarray::{Ix4, IxDyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DistortionConfig;
use crate::dct::{block_dct_tensor, block_idct_tensor, BLOCK};
use crate::error::Error;

/// Axis-aligned region, half-open in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

/// A distortion with its parameters resolved to concrete values.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionSpec {
    Identity,
    /// Replace a random rectangle of the generated image with the original.
    RdCropReplace { area_frac: [f64; 2] },
    /// Paste a rectangle of a donor image into the generated image.
    Splice { area_frac: [f64; 2] },
    GaussianBlur { sigma: f64 },
    Jpeg { quality: u32 },
    Brightness { delta: f64 },
    Contrast { scale: f64 },
    /// Whole image replaced by the donor; stands in for a full regeneration.
    GlobalRewriteProxy,
}

impl DistortionSpec {
    /// Canonical kind name (the row label in evaluation reports).
    pub fn kind_name(&self) -> &'static str {
        match self {
            DistortionSpec::Identity => "identity",
            DistortionSpec::RdCropReplace { .. } => "rd-crop-replace",
            DistortionSpec::Splice { .. } => "splice",
            DistortionSpec::GaussianBlur { .. } => "gaussian-blur",
            DistortionSpec::Jpeg { .. } => "jpeg",
            DistortionSpec::Brightness { .. } => "brightness",
            DistortionSpec::Contrast { .. } => "contrast",
            DistortionSpec::GlobalRewriteProxy => "global-rewrite-proxy",
        }
    }

    /// Label including resolved parameters, used for report rows.
    pub fn label(&self) -> String {
        match self {
            DistortionSpec::GaussianBlur { sigma } => format!("gaussian-blur:{sigma}"),
            DistortionSpec::Jpeg { quality } => format!("jpeg:{quality}"),
            DistortionSpec::Brightness { delta } => format!("brightness:{delta}"),
            DistortionSpec::Contrast { scale } => format!("contrast:{scale}"),
            other => other.kind_name().to_string(),
        }
    }

    /// True when the distortion needs a donor image.
    pub fn needs_donor(&self) -> bool {
        matches!(
            self,
            DistortionSpec::Splice { .. } | DistortionSpec::GlobalRewriteProxy
        )
    }

    /// Check that a configured training-pool entry is a known kind that is
    /// legal to train against.
    pub fn validate_pool_kind(kind: &str) -> Result<(), Error> {
        match kind {
            "identity" | "rd-crop-replace" | "splice" | "gaussian-blur" | "jpeg"
            | "brightness" | "contrast" => Ok(()),
            "global-rewrite-proxy" => Err(Error::Config(
                "global-rewrite-proxy is evaluation-only and cannot be in the training pool"
                    .into(),
            )),
            other => Err(Error::Config(format!("unknown distortion kind '{other}'"))),
        }
    }

    /// Parse an evaluation-CLI entry, `kind[:param]`. Parameterized kinds
    /// (blur sigma, jpeg quality, brightness delta, contrast scale) require
    /// the parameter; region kinds take their area range from the config.
    pub fn parse(entry: &str, cfg: &DistortionConfig) -> Result<DistortionSpec, Error> {
        let (kind, param) = match entry.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (entry.trim(), None),
        };
        let need = |what: &str| -> Error {
            Error::Config(format!("distortion '{kind}' requires a parameter: {kind}:<{what}>"))
        };
        let no_param = |spec: DistortionSpec| -> Result<DistortionSpec, Error> {
            match param {
                Some(p) => Err(Error::Config(format!(
                    "distortion '{kind}' takes no parameter, got ':{p}'"
                ))),
                None => Ok(spec),
            }
        };
        match kind {
            "identity" => no_param(DistortionSpec::Identity),
            "rd-crop-replace" => no_param(DistortionSpec::RdCropReplace {
                area_frac: cfg.rd_area_frac,
            }),
            "splice" => no_param(DistortionSpec::Splice {
                area_frac: cfg.rd_area_frac,
            }),
            "global-rewrite-proxy" => no_param(DistortionSpec::GlobalRewriteProxy),
            "gaussian-blur" => {
                let sigma: f64 = param
                    .ok_or_else(|| need("sigma"))?
                    .parse()
                    .map_err(|_| need("sigma"))?;
                if !(sigma > 0.0) {
                    return Err(Error::Config(format!("blur sigma must be > 0, got {sigma}")));
                }
                Ok(DistortionSpec::GaussianBlur { sigma })
            }
            "jpeg" => {
                let quality: u32 = param
                    .ok_or_else(|| need("quality"))?
                    .parse()
                    .map_err(|_| need("quality"))?;
                if !(10..=95).contains(&quality) {
                    return Err(Error::Config(format!(
                        "jpeg quality must be in [10,95], got {quality}"
                    )));
                }
                Ok(DistortionSpec::Jpeg { quality })
            }
            "brightness" => {
                let delta: f64 = param
                    .ok_or_else(|| need("delta"))?
                    .parse()
                    .map_err(|_| need("delta"))?;
                Ok(DistortionSpec::Brightness { delta })
            }
            "contrast" => {
                let scale: f64 = param
                    .ok_or_else(|| need("scale"))?
                    .parse()
                    .map_err(|_| need("scale"))?;
                if !(scale > 0.0) {
                    return Err(Error::Config(format!("contrast scale must be > 0, got {scale}")));
                }
                Ok(DistortionSpec::Contrast { scale })
            }
            other => Err(Error::Config(format!("unknown distortion kind '{other}'"))),
        }
    }

    /// Draw a training-step distortion: uniform kind from the pool, with
    /// parameters sampled from the configured ranges.
    pub fn sample(cfg: &DistortionConfig, rng: &mut ChaCha8Rng) -> Result<DistortionSpec, Error> {
        if cfg.pool.is_empty() {
            return Err(Error::Config("distortion pool is empty".into()));
        }
        let kind = &cfg.pool[rng.gen_range(0..cfg.pool.len())];
        Ok(match kind.as_str() {
            "identity" => DistortionSpec::Identity,
            "rd-crop-replace" => DistortionSpec::RdCropReplace { area_frac: cfg.rd_area_frac },
            "splice" => DistortionSpec::Splice { area_frac: cfg.rd_area_frac },
            "gaussian-blur" => DistortionSpec::GaussianBlur {
                sigma: rng.gen_range(cfg.blur_sigma[0]..=cfg.blur_sigma[1]),
            },
            "jpeg" => DistortionSpec::Jpeg {
                quality: rng.gen_range(cfg.jpeg_quality[0]..=cfg.jpeg_quality[1]),
            },
            "brightness" => DistortionSpec::Brightness {
                delta: rng.gen_range(-cfg.brightness_delta..=cfg.brightness_delta),
            },
            "contrast" => DistortionSpec::Contrast {
                scale: rng.gen_range(cfg.contrast_range[0]..=cfg.contrast_range[1]),
            },
            other => return Err(Error::Config(format!("unknown distortion kind '{other}'"))),
        })
    }

    /// Apply to a generated-image batch. `i_ori`/`donor` are plain pixel
    /// sources (no gradient). Returns the degraded image and the tamper
    /// mask [B,1,H,W] with 1 = pixel sourced from outside the generated
    /// image.
    pub fn apply(
        &self,
        i_gen: &Tensor,
        i_ori: &Arr,
        donor: Option<&Arr>,
        seed: u64,
    ) -> Result<(Tensor, Arr), Error> {
        let shape = i_gen.shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("distortion expects [B,3,H,W], got {shape:?}")));
        }
        if i_ori.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "original image shape {:?} != generated {:?}",
                i_ori.shape(),
                shape
            )));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let zero_mask = || Arr::zeros(IxDyn(&[b, 1, h, w]));
        let tape = i_gen.tape();

        match self {
            DistortionSpec::Identity => Ok((i_gen.clone(), zero_mask())),
            DistortionSpec::RdCropReplace { area_frac } => {
                let (out, mask) = region_replace(i_gen, i_ori, *area_frac, seed)?;
                Ok((out, mask))
            }
            DistortionSpec::Splice { area_frac } => {
                let donor = donor.ok_or_else(|| {
                    Error::Config("splice distortion requires a donor image".into())
                })?;
                if donor.shape() != shape.as_slice() {
                    return Err(Error::Shape("donor shape mismatch".into()));
                }
                let (out, mask) = region_replace(i_gen, donor, *area_frac, seed)?;
                Ok((out, mask))
            }
            DistortionSpec::GaussianBlur { sigma } => Ok((blur(i_gen, *sigma), zero_mask())),
            DistortionSpec::Jpeg { quality } => Ok((jpeg_approx(i_gen, *quality)?, zero_mask())),
            DistortionSpec::Brightness { delta } => {
                Ok((i_gen.add_scalar(*delta).clamp(0.0, 1.0), zero_mask()))
            }
            DistortionSpec::Contrast { scale } => {
                let centered = i_gen.add_scalar(-0.5).mul_scalar(*scale).add_scalar(0.5);
                Ok((centered.clamp(0.0, 1.0), zero_mask()))
            }
            DistortionSpec::GlobalRewriteProxy => {
                let donor = donor.ok_or_else(|| {
                    Error::Config("global-rewrite-proxy requires a donor image".into())
                })?;
                if donor.shape() != shape.as_slice() {
                    return Err(Error::Shape("donor shape mismatch".into()));
                }
                let out = tape.constant(donor.clone());
                Ok((out, Arr::ones(IxDyn(&[b, 1, h, w]))))
            }
        }
    }
}

/// Uniformly sample a rectangle whose area fraction lies in
/// `area_frac_range`, fully inside an `h` x `w` image. The fraction is
/// drawn uniformly, then an aspect ratio in [1/2, 2] (log-uniform); integer
/// rounding is corrected so the realized fraction stays inside the range.
pub fn sample_region(
    seed: u64,
    h: usize,
    w: usize,
    area_frac_range: [f64; 2],
) -> Result<Rect, Error> {
    let [lo, hi] = area_frac_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::Config(format!(
            "area fraction range must satisfy 0 < min <= max < 1, got [{lo}, {hi}]"
        )));
    }
    let total = (h * w) as f64;
    if 1.0 / total > hi {
        return Err(Error::Infeasible(format!(
            "image {h}x{w} too small for max area fraction {hi}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5245_4354); // "RECT"
    let frac = rng.gen_range(lo..=hi);
    let target = frac * total;
    let log_aspect = rng.gen_range(-std::f64::consts::LN_2..=std::f64::consts::LN_2);
    let aspect = log_aspect.exp();

    let mut rw = (target * aspect).sqrt().round().max(1.0) as usize;
    rw = rw.min(w);
    let mut rh = ((target / rw as f64).round().max(1.0)) as usize;
    rh = rh.min(h);

    // Rounding can push the realized fraction out of range; nudge the
    // larger/smaller dimension until it lands back inside.
    let mut guard = 0;
    loop {
        let f = (rw * rh) as f64 / total;
        if f > hi {
            if rw >= rh && rw > 1 {
                rw -= 1;
            } else if rh > 1 {
                rh -= 1;
            } else {
                return Err(Error::Infeasible(format!(
                    "cannot realize area fraction within [{lo}, {hi}] on {h}x{w}"
                )));
            }
        } else if f < lo {
            if rw <= rh && rw < w {
                rw += 1;
            } else if rh < h {
                rh += 1;
            } else {
                return Err(Error::Infeasible(format!(
                    "cannot realize area fraction within [{lo}, {hi}] on {h}x{w}"
                )));
            }
        } else {
            break;
        }
        guard += 1;
        if guard > h + w {
            return Err(Error::Infeasible(format!(
                "region sampling failed to converge for range [{lo}, {hi}] on {h}x{w}"
            )));
        }
    }

    let y0 = rng.gen_range(0..=(h - rh));
    let x0 = rng.gen_range(0..=(w - rw));
    Ok(Rect { y0, x0, h: rh, w: rw })
}

/// Masked blend `gen*(1-m) + src*m` with a binary rectangle mask. With
/// exact 0/1 weights the untouched pixels are bit-identical to the
/// generated image and the replaced ones to the source.
fn region_replace(
    i_gen: &Tensor,
    src: &Arr,
    area_frac: [f64; 2],
    seed: u64,
) -> Result<(Tensor, Arr), Error> {
    let shape = i_gen.shape().to_vec();
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    let rect = sample_region(seed, h, w, area_frac)?;

    let mut mask1 = Arr::zeros(IxDyn(&[b, 1, h, w]));
    {
        let mut v = mask1.view_mut().into_dimensionality::<Ix4>().unwrap();
        for bi in 0..b {
            for y in rect.y0..rect.y0 + rect.h {
                for x in rect.x0..rect.x0 + rect.w {
                    v[[bi, 0, y, x]] = 1.0;
                }
            }
        }
    }
    // Broadcast the 1-channel mask over RGB.
    let mut mask3 = Arr::zeros(IxDyn(&[b, 3, h, w]));
    for c in 0..3 {
        mask3
            .index_axis_mut(ndarray::Axis(1), c)
            .assign(&mask1.index_axis(ndarray::Axis(1), 0));
    }

    let tape = i_gen.tape();
    let m = tape.constant(mask3.clone());
    let keep = tape.constant(mask3.mapv(|v| 1.0 - v));
    let s = tape.constant(src.clone());
    let out = i_gen.mul(&keep).add(&s.mul(&m));
    Ok((out, mask1))
}

/// Normalized 1-D gaussian taps with radius `ceil(3 sigma)` (at least 1).
pub fn gaussian_kernel1d(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "gaussian kernel needs sigma > 0");
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * (d / sigma).powi(2)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian blur via a fixed depthwise kernel over reflect padding. Linear
/// in the image, so gradients flow through to the embedder.
pub fn blur(x: &Tensor, sigma: f64) -> Tensor {
    let k1 = gaussian_kernel1d(sigma);
    let ks = k1.len();
    let radius = ks / 2;
    let c = x.shape()[1];
    let mut kernel = Arr::zeros(IxDyn(&[c, ks, ks]));
    for ci in 0..c {
        for i in 0..ks {
            for j in 0..ks {
                kernel[[ci, i, j]] = k1[i] * k1[j];
            }
        }
    }
    let kt = x.tape().constant(kernel);
    x.reflect_pad2d(radius).depthwise_conv2d(&kt, None, 0)
}

/// Luminance quantization table from the JPEG standard, row-major 8x8.
const JPEG_QUANT_LUMA: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-scaled quantization step for each of the 64 block positions.
pub fn jpeg_quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [0.0; 64];
    for (i, &base) in JPEG_QUANT_LUMA.iter().enumerate() {
        t[i] = ((base * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    t
}

/// JPEG-style degradation: per-channel 8x8 block DCT, quantization with
/// straight-through rounding, inverse DCT. Operates in the 0..255 domain
/// with the conventional -128 level shift.
pub fn jpeg_approx(x: &Tensor, quality: u32) -> Result<Tensor, Error> {
    if !(10..=95).contains(&quality) {
        return Err(Error::Config(format!("jpeg quality must be in [10,95], got {quality}")));
    }
    let shape = x.shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    if h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(Error::Shape(format!(
            "jpeg approximation needs dims divisible by {BLOCK}, got {h}x{w}"
        )));
    }
    let table = jpeg_quant_table(quality);
    // Tile the quantization table across the full spatial extent.
    let mut steps = Arr::zeros(IxDyn(&shape));
    {
        let mut v = steps.view_mut().into_dimensionality::<Ix4>().unwrap();
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..h {
                    for xx in 0..w {
                        v[[b, c, y, xx]] = table[(y % BLOCK) * BLOCK + (xx % BLOCK)];
                    }
                }
            }
        }
    }
    let tape = x.tape();
    let steps_t = tape.constant(steps.clone());
    let inv_steps_t = tape.constant(steps.mapv(|s| 1.0 / s));

    let shifted = x.mul_scalar(255.0).add_scalar(-128.0);
    let coefs = block_dct_tensor(&shifted);
    let quantized = coefs.mul(&inv_steps_t).round_ste().mul(&steps_t);
    let back = block_idct_tensor(&quantized);
    Ok(back.add_scalar(128.0).mul_scalar(1.0 / 255.0).clamp(0.0, 1.0))
}
