//! Central-difference gradient verification against the tape.
//!
//! The caller supplies a closure that rebuilds the loss graph from scratch
//! (fresh tape each call) over a fixed batch; we compare the tape's
//! gradients with finite differences on a deterministic subset of
//! parameter coordinates and report one vector-level relative error:
//! `|g_fd - g_an| / max(|g_fd|, |g_an|)`.

use crate::param::Param;
use crate::tape::Tensor;

pub struct GradCheckReport {
    pub coords_checked: usize,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    pub worst_coord: Option<(String, usize, f64, f64)>,
}

/// Pick up to `max_coords` coordinates spread evenly across all params.
fn pick_coords(params: &[Param], max_coords: usize) -> Vec<(usize, usize)> {
    let total: usize = params.iter().map(|p| p.len()).sum();
    let stride = (total / max_coords.max(1)).max(1);
    let mut coords = Vec::new();
    let mut global = 0usize;
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.len() {
            if global % stride == 0 && coords.len() < max_coords {
                coords.push((pi, i));
            }
            global += 1;
        }
    }
    coords
}

/// Compare tape gradients with central differences.
///
/// `loss_fn` must be deterministic: same parameter values, same scalar out.
pub fn grad_check(
    params: &[Param],
    loss_fn: impl Fn() -> Tensor,
    eps: f64,
    max_coords: usize,
) -> GradCheckReport {
    // Analytic pass.
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    loss.tape().backward(&loss);
    let analytic: Vec<ndarray::ArrayD<f64>> = params.iter().map(|p| p.grad()).collect();

    let coords = pick_coords(params, max_coords);
    let mut g_an = Vec::with_capacity(coords.len());
    let mut g_fd = Vec::with_capacity(coords.len());
    let mut worst: Option<(String, usize, f64, f64)> = None;
    let mut worst_gap = -1.0f64;

    for &(pi, i) in &coords {
        let p = &params[pi];
        let orig = {
            let v = p.value();
            v.as_slice().unwrap()[i]
        };
        let eval_at = |x: f64| -> f64 {
            let mut v = p.value();
            v.as_slice_mut().unwrap()[i] = x;
            p.set_value(v);
            loss_fn().scalar()
        };
        let lp = eval_at(orig + eps);
        let lm = eval_at(orig - eps);
        // Restore.
        let mut v = p.value();
        v.as_slice_mut().unwrap()[i] = orig;
        p.set_value(v);

        let fd = (lp - lm) / (2.0 * eps);
        let an = analytic[pi].as_slice().unwrap()[i];
        g_fd.push(fd);
        g_an.push(an);
        let gap = (fd - an).abs();
        if gap > worst_gap {
            worst_gap = gap;
            worst = Some((p.name().to_string(), i, fd, an));
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = g_fd.iter().zip(&g_an).map(|(a, b)| a - b).collect();
    let (nfd, nan) = (norm(&g_fd), norm(&g_an));
    let rel_err = norm(&diff) / nfd.max(nan).max(1e-12);

    GradCheckReport {
        coords_checked: coords.len(),
        rel_err,
        analytic_norm: nan,
        fd_norm: nfd,
        worst_coord: worst,
    }
}
