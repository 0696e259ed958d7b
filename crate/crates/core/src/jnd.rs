//! Just-noticeable-difference map: classical luminance adaptation plus
//! texture masking, computed directly on arrays (the map weights a loss
//! on the clean image, so nothing differentiates through it).
//!
//! Per channel: `JND = min(1, max(LA(local mean), TM(local gradient)))`
//! with the classical piecewise luminance curve rescaled to [0,1] pixel
//! range and a slope on the local gradient magnitude for masking.

use latentmark_autograd::Arr;
use ndarray::{ArrayD, Ix4, IxDyn};

/// Luminance-adaptation threshold for a background level in [0,1].
/// Rescaled Chou-Li curve: high tolerance in dark regions, a shallow
/// linear rise in bright ones.
fn luminance_term(bg: f64) -> f64 {
    if bg <= 0.5 {
        0.066 * (1.0 - (bg / 0.5).sqrt()) + 0.012
    } else {
        0.046 * (bg - 0.5) / 0.5 + 0.012
    }
}

/// 5x5 local mean with reflected edges.
fn local_mean(x: &Arr) -> Arr {
    box_filter(x, 2)
}

fn box_filter(x: &Arr, r: usize) -> Arr {
    let v = x.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    let mirror = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
        i as usize
    };
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    let k = (2 * r + 1) * (2 * r + 1);
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let mut s = 0.0;
                    for di in -(r as isize)..=(r as isize) {
                        for dj in -(r as isize)..=(r as isize) {
                            s += v[[ni, ci, mirror(hi as isize + di, h), mirror(wi as isize + dj, w)]];
                        }
                    }
                    out[[ni, ci, hi, wi]] = s / k as f64;
                }
            }
        }
    }
    out
}

/// Central-difference gradient magnitude with reflected edges.
fn gradient_magnitude(x: &Arr) -> Arr {
    let v = x.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let up = v[[ni, ci, hi.saturating_sub(1), wi]];
                    let dn = v[[ni, ci, (hi + 1).min(h - 1), wi]];
                    let lf = v[[ni, ci, hi, wi.saturating_sub(1)]];
                    let rt = v[[ni, ci, hi, (wi + 1).min(w - 1)]];
                    let gy = 0.5 * (dn - up);
                    let gx = 0.5 * (rt - lf);
                    out[[ni, ci, hi, wi]] = (gx * gx + gy * gy).sqrt();
                }
            }
        }
    }
    out
}

/// Per-pixel JND grid in [0,1], shape equal to the input image.
pub fn jnd_map(image: &Arr) -> Arr {
    assert_eq!(image.shape().len(), 4, "jnd_map: NCHW input");
    let bg = local_mean(image);
    // Texture masking reads the gradient of the smoothed signal so single
    // noisy pixels don't dominate.
    let grad = gradient_magnitude(&bg);
    let mut out = bg.mapv(luminance_term);
    out.zip_mut_with(&grad, |jnd, &g| {
        let tm = 0.8 * g;
        *jnd = jnd.max(tm).min(1.0);
    });
    out
}

/// Cost map of Eq-style form `1 - alpha_jnd * JND(image)`, pointwise.
pub fn cost_map(image: &Arr, alpha_jnd: f64) -> Arr {
    assert!(alpha_jnd >= 0.0, "alpha_jnd must be >= 0");
    jnd_map(image).mapv(|j| 1.0 - alpha_jnd * j)
}
