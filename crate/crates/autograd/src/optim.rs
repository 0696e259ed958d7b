//! AdamW with decoupled weight decay, plus the cosine learning-rate
//! schedule used by the trainers. Moment buffers are keyed by parameter
//! name so optimizer state survives checkpoint round-trips.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::param::Param;
use crate::tape::Arr;

#[derive(Clone)]
struct Moments {
    m: Arr,
    v: Arr,
}

pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> AdamW {
        AdamW { beta1, beta2, eps, weight_decay, step: 0, state: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `params` using their accumulated gradients.
    /// Gradients are not cleared here; callers zero them between steps.
    pub fn step(&mut self, params: &[Param], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let g = p.grad();
            let st = self.state.entry(p.name().to_string()).or_insert_with(|| Moments {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
            });
            st.m.zip_mut_with(&g, |m, &gv| *m = self.beta1 * *m + (1.0 - self.beta1) * gv);
            st.v.zip_mut_with(&g, |v, &gv| *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv);
            let (beta_eps, wd) = (self.eps, self.weight_decay);
            let (m, v) = (&st.m, &st.v);
            p.update_with(|w, _| {
                ndarray::Zip::from(&mut *w).and(m).and(v).for_each(|wv, &mv, &vv| {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *wv -= lr * (mhat / (vhat.sqrt() + beta_eps) + wd * *wv);
                });
            });
        }
    }

    /// Serializable view of the moment buffers: (name, step-count shared).
    pub fn export_state(&self) -> (u64, Vec<(String, Vec<f64>, Vec<f64>)>) {
        let entries = self
            .state
            .iter()
            .map(|(k, mo)| {
                (
                    k.clone(),
                    mo.m.iter().cloned().collect(),
                    mo.v.iter().cloned().collect(),
                )
            })
            .collect();
        (self.step, entries)
    }

    /// Restore moment buffers; shapes come from the named params.
    pub fn import_state(
        &mut self,
        step: u64,
        entries: &[(String, Vec<f64>, Vec<f64>)],
        shape_of: impl Fn(&str) -> Option<Vec<usize>>,
    ) {
        self.step = step;
        self.state.clear();
        for (name, m, v) in entries {
            let shape = shape_of(name)
                .unwrap_or_else(|| panic!("optimizer state references unknown param {name}"));
            let dim = ndarray::IxDyn(&shape);
            self.state.insert(
                name.clone(),
                Moments {
                    m: ArrayD::from_shape_vec(dim.clone(), m.clone()).expect("bad moment shape"),
                    v: ArrayD::from_shape_vec(dim, v.clone()).expect("bad moment shape"),
                },
            );
        }
    }
}

/// Cosine decay from `base_lr` to ~0 over `total` steps, with an optional
/// linear warmup over the first `warmup` steps. `step` is 0-based.
pub fn cosine_lr(base_lr: f64, step: u64, total: u64, warmup: u64) -> f64 {
    if warmup > 0 && step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    let total = total.max(1);
    let t = step.min(total).saturating_sub(warmup) as f64
        / total.saturating_sub(warmup).max(1) as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos())
}
