//! Evaluation metrics: bit accuracy, PSNR, SSIM, F1, AUC.
//!
//! Conventions: images live in [0,1] with peak 1; identical images report
//! the PSNR cap (99 dB) with a flag; mask F1 uses threshold 0.5 and is
//! undefined (None) for an empty ground truth; AUC uses rank statistics
//! with ties counted as half-credit and is undefined if either class is
//! empty.

use latentmark_autograd::Arr;

pub const PSNR_CAP_DB: f64 = 99.0;

pub fn bit_accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "bit_accuracy: length mismatch");
    assert!(!pred.is_empty());
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// PSNR in dB between images in [0,1]. Returns (value, capped_flag).
pub fn psnr(a: &Arr, b: &Arr) -> (f64, bool) {
    assert_eq!(a.shape(), b.shape(), "psnr: shape mismatch");
    let n = a.len() as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse <= 0.0 {
        return (PSNR_CAP_DB, true);
    }
    let v = -10.0 * mse.log10();
    if v >= PSNR_CAP_DB {
        (PSNR_CAP_DB, true)
    } else {
        (v, false)
    }
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5),
/// standard C1/C2 constants for unit peak, valid-region convolution.
pub fn ssim(a: &Arr, b: &Arr) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ssim: shape mismatch");
    let s = a.shape();
    assert_eq!(s.len(), 4, "ssim: NCHW input");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let win = 11usize.min(h).min(w);
    let win = if win % 2 == 0 { win - 1 } else { win };
    let sigma = 1.5;
    let mut kernel = vec![0.0; win * win];
    let half = (win / 2) as isize;
    let mut sum = 0.0;
    for i in 0..win {
        for j in 0..win {
            let (di, dj) = (i as isize - half, j as isize - half);
            let v = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            kernel[i * win + j] = v;
            sum += v;
        }
    }
    for v in &mut kernel {
        *v /= sum;
    }

    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let (ho, wo) = (h - win + 1, w - win + 1);
    let mut total = 0.0;
    let mut count = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..win {
                        for j in 0..win {
                            let kx = kernel[i * win + j];
                            let xa = a[[ni, ci, oi + i, oj + j]];
                            let xb = b[[ni, ci, oi + i, oj + j]];
                            ma += kx * xa;
                            mb += kx * xb;
                            va += kx * xa * xa;
                            vb += kx * xb * xb;
                            cov += kx * xa * xb;
                        }
                    }
                    va -= ma * ma;
                    vb -= mb * mb;
                    cov -= ma * mb;
                    let v = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    total += v;
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// F1 of `scores >= 0.5` against a binary ground truth. None when the
/// ground truth has no positive pixels (undefined precision/recall base).
pub fn f1_at_half(scores: &[f64], truth: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "f1: length mismatch");
    let n_pos: usize = truth.iter().filter(|&&t| t == 1).count();
    if n_pos == 0 {
        return None;
    }
    let (mut tp, mut fp, mut fnm) = (0usize, 0usize, 0usize);
    for (&s, &t) in scores.iter().zip(truth) {
        let p = s >= 0.5;
        match (p, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnm += 1,
            (false, false) => {}
        }
    }
    Some(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fnm as f64))
}

/// Threshold-free AUC by the rank-sum (Mann-Whitney) statistic with ties
/// as half-credit. None if either class is empty. O(n log n).
pub fn auc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "auc: length mismatch");
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("NaN score"));
    // Average rank per tie group (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if truth[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}
