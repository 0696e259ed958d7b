//! The training objective: message BCE, mask BCE with an edge-aware
//! boundary term, and the visual-quality stack (MSE + perceptual
//! distance + JND-weighted residual cost). Everything here is a pure
//! function from heads and targets to tape scalars.

use latentmark_autograd::{Arr, Tensor};
use ndarray::{ArrayD, Ix4, IxDyn};
use serde::Serialize;

use crate::config::LossConfig;
use crate::error::Error;
use crate::jnd::cost_map;
use crate::message::BitMessage;

/// Probabilities are clamped to `[EPS, 1-EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Elementwise `-(t ln p + (1-t) ln(1-p))` on clamped probabilities.
fn bce_elems(pred: &Tensor, target: &Arr) -> Tensor {
    assert_eq!(pred.shape(), target.shape(), "bce: shape mismatch");
    let p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let t = pred.tape().constant(target.clone());
    let t_inv = pred.tape().constant(target.mapv(|v| 1.0 - v));
    let pos = t.mul(&p.ln());
    let neg = t_inv.mul(&p.neg().add_scalar(1.0).ln());
    pos.add(&neg).neg()
}

/// Message-recovery loss: `lambda_k` times the mean binary cross-entropy
/// between predicted bit probabilities `[B, k]` and the ground truth.
pub fn loss_wm(pred_probs: &Tensor, gt: &[BitMessage], lambda_k: f64) -> Tensor {
    let s = pred_probs.shape().to_vec();
    assert_eq!(s.len(), 2, "loss_wm: predictions must be [B, k]");
    assert_eq!(s[0], gt.len(), "loss_wm: batch size mismatch");
    let mut target = ArrayD::<f64>::zeros(IxDyn(&s));
    for (bi, msg) in gt.iter().enumerate() {
        assert_eq!(msg.k(), s[1], "loss_wm: message length mismatch");
        for (ki, v) in msg.as_f64().into_iter().enumerate() {
            target[[bi, ki]] = v;
        }
    }
    bce_elems(pred_probs, &target).mean_all().mul_scalar(lambda_k)
}

/// 3x3 binary dilation (`dilate`) or erosion over NCHW, with pixels
/// outside the grid treated as zero.
fn morph3(m: &Arr, dilate: bool) -> Arr {
    let v = m.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let mut acc = if dilate { 0.0f64 } else { 1.0f64 };
                    for di in -1isize..=1 {
                        for dj in -1isize..=1 {
                            let (y, x) = (hi as isize + di, wi as isize + dj);
                            let val = if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                                v[[ni, ci, y as usize, x as usize]]
                            } else {
                                0.0
                            };
                            acc = if dilate { acc.max(val) } else { acc.min(val) };
                        }
                    }
                    out[[ni, ci, hi, wi]] = acc;
                }
            }
        }
    }
    out
}

/// Binary band covering the mask boundary: the 3x3 morphological
/// gradient (dilation minus erosion), thickened by further dilations
/// until it is at least `band_px` wide. All-zero masks give an empty
/// band; a full-image mask bands only along the image border.
pub fn edge_band(mask_gt: &Arr, band_px: usize) -> Arr {
    assert_eq!(mask_gt.shape().len(), 4, "edge_band: NCHW mask");
    let d = morph3(mask_gt, true);
    let e = morph3(mask_gt, false);
    // Erosion is a subset of dilation, so the difference stays binary.
    let mut band = d - e;
    // The raw gradient is two pixels wide; each extra dilation adds two.
    for _ in 0..band_px.saturating_sub(2).div_ceil(2) {
        band = morph3(&band, true);
    }
    band
}

/// Localization loss: `lambda_m * BCE(pred, gt)` plus `gamma` times the
/// BCE restricted to the boundary band of the ground truth. An empty
/// band (or `gamma = 0`) leaves exactly the first term.
pub fn loss_mask(pred: &Tensor, gt: &Arr, lambda_m: f64, gamma: f64, band_px: usize) -> Tensor {
    assert_eq!(pred.shape(), gt.shape(), "loss_mask: shape mismatch");
    let elems = bce_elems(pred, gt);
    let base = elems.mean_all().mul_scalar(lambda_m);
    if gamma == 0.0 {
        return base;
    }
    let band = edge_band(gt, band_px);
    let band_px_count: f64 = band.sum();
    if band_px_count == 0.0 {
        return base;
    }
    let band_c = pred.tape().constant(band);
    let edge = elems.mul(&band_c).sum_all().mul_scalar(gamma / band_px_count);
    base.add(&edge)
}

/// JND-weighted residual cost: mean of `cost ⊙ |i_gen - i_ori|`. With
/// `literal` the term follows the written form `cost ⊙ i_gen` instead of
/// weighting the residual.
pub fn loss_ct(i_gen: &Tensor, i_ori: &Arr, cost: &Arr, literal: bool) -> Tensor {
    assert_eq!(i_gen.shape(), i_ori.shape(), "loss_ct: image shape mismatch");
    assert_eq!(i_gen.shape(), cost.shape(), "loss_ct: cost shape mismatch");
    let c = i_gen.tape().constant(cost.clone());
    if literal {
        return i_gen.mul(&c).mean_all();
    }
    let ori = i_gen.tape().constant(i_ori.clone());
    i_gen.sub(&ori).abs().mul(&c).mean_all()
}

/// Plug point for the perceptual term of the image loss. Training only
/// sees this trait, so a learned metric can replace the built-in
/// surrogate without touching the objective.
pub trait PerceptualDistance {
    fn distance(&self, i_gen: &Tensor, i_ori: &Arr) -> Tensor;
    fn name(&self) -> &'static str;
}

/// Deterministic stand-in for a learned perceptual metric: L2 between
/// central-difference gradient magnitudes, averaged over a dyadic
/// pyramid. Pooling stops early when a side goes odd or below 8 px.
pub struct GradientMagnitudeDistance {
    pub scales: usize,
}

impl Default for GradientMagnitudeDistance {
    fn default() -> Self {
        GradientMagnitudeDistance { scales: 3 }
    }
}

impl GradientMagnitudeDistance {
    /// `sqrt(dx^2 + dy^2 + eps)` from central differences, per channel.
    fn grad_mag(x: &Tensor) -> Tensor {
        let c = x.shape()[1];
        let mut kx = ArrayD::<f64>::zeros(IxDyn(&[c, 3, 3]));
        let mut ky = ArrayD::<f64>::zeros(IxDyn(&[c, 3, 3]));
        for ci in 0..c {
            kx[[ci, 1, 0]] = -0.5;
            kx[[ci, 1, 2]] = 0.5;
            ky[[ci, 0, 1]] = -0.5;
            ky[[ci, 2, 1]] = 0.5;
        }
        let dx = x.depthwise_conv2d(&x.tape().constant(kx), None, 1);
        let dy = x.depthwise_conv2d(&x.tape().constant(ky), None, 1);
        dx.square().add(&dy.square()).add_scalar(1e-12).sqrt()
    }
}

impl PerceptualDistance for GradientMagnitudeDistance {
    fn distance(&self, i_gen: &Tensor, i_ori: &Arr) -> Tensor {
        assert_eq!(i_gen.shape(), i_ori.shape(), "perceptual: shape mismatch");
        let mut gen = i_gen.clone();
        let mut ori = i_gen.tape().constant(i_ori.clone());
        let mut total: Option<Tensor> = None;
        let mut used = 0;
        for si in 0..self.scales.max(1) {
            if si > 0 {
                let s = gen.shape().to_vec();
                if s[2] % 2 != 0 || s[3] % 2 != 0 || s[2] < 16 || s[3] < 16 {
                    break;
                }
                gen = gen.avg_pool2d(2);
                ori = ori.avg_pool2d(2);
            }
            let term = Self::grad_mag(&gen).sub(&Self::grad_mag(&ori)).square().mean_all();
            total = Some(match total {
                Some(t) => t.add(&term),
                None => term,
            });
            used += 1;
        }
        total.expect("at least one scale").mul_scalar(1.0 / used as f64)
    }

    fn name(&self) -> &'static str {
        "gradient-magnitude"
    }
}

/// Unweighted components of the visual-quality loss.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ImageLossParts {
    pub mse: f64,
    pub perceptual: f64,
    pub ct: f64,
}

/// `lambda_i * MSE + lambda_lpips * perceptual + lambda_ct * ct` on a
/// generated/original pair. `lambda_lpips = 0` skips the perceptual term
/// entirely. Returns the weighted scalar plus raw component values.
pub fn loss_image(
    i_gen: &Tensor,
    i_ori: &Arr,
    cfg: &LossConfig,
    percep: &dyn PerceptualDistance,
) -> (Tensor, ImageLossParts) {
    assert_eq!(i_gen.shape(), i_ori.shape(), "loss_image: shape mismatch");
    let ori = i_gen.tape().constant(i_ori.clone());
    let mse = i_gen.sub(&ori).square().mean_all();
    let cost = cost_map(i_ori, cfg.alpha_jnd);
    let ct = loss_ct(i_gen, i_ori, &cost, cfg.ct_literal);
    let mut parts = ImageLossParts { mse: mse.scalar(), perceptual: 0.0, ct: ct.scalar() };
    let mut total = mse.mul_scalar(cfg.lambda_i).add(&ct.mul_scalar(cfg.lambda_ct));
    if cfg.lambda_lpips > 0.0 {
        let p = percep.distance(i_gen, i_ori);
        parts.perceptual = p.scalar();
        total = total.add(&p.mul_scalar(cfg.lambda_lpips));
    }
    (total, parts)
}

/// Per-component values of one step's objective, for the metrics log.
/// `wm + mask + image` equals `total`; the `image_*` fields are the
/// unweighted sub-terms behind `image`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub wm: f64,
    pub mask: f64,
    pub image: f64,
    pub image_mse: f64,
    pub image_perceptual: f64,
    pub image_ct: f64,
}

/// Full objective `L_wm + L_mask + L_image` on one batch: the scalar for
/// backward plus the component report. Any non-finite component aborts
/// the step with a diagnostic instead of training on garbage.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    msg_probs: &Tensor,
    gt_msgs: &[BitMessage],
    mask_probs: &Tensor,
    mask_gt: &Arr,
    i_gen: &Tensor,
    i_ori: &Arr,
    cfg: &LossConfig,
    percep: &dyn PerceptualDistance,
) -> Result<(Tensor, LossReport), Error> {
    let wm = loss_wm(msg_probs, gt_msgs, cfg.lambda_k);
    let mask = loss_mask(mask_probs, mask_gt, cfg.lambda_m, cfg.gamma, cfg.edge_band_px);
    let (image, parts) = loss_image(i_gen, i_ori, cfg, percep);
    let total = wm.add(&mask).add(&image);
    let report = LossReport {
        total: total.scalar(),
        wm: wm.scalar(),
        mask: mask.scalar(),
        image: image.scalar(),
        image_mse: parts.mse,
        image_perceptual: parts.perceptual,
        image_ct: parts.ct,
    };
    for (name, v) in [
        ("wm", report.wm),
        ("mask", report.mask),
        ("image", report.image),
        ("total", report.total),
    ] {
        if !v.is_finite() {
            return Err(Error::Training(format!("non-finite loss component {name}: {v}")));
        }
    }
    Ok((total, report))
}
