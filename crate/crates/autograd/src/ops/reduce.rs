//! Reductions to scalars and fused numerically-stable losses.
//!
//! Scalars are rank-0 arrays; `Tensor::scalar()` reads them back out.

use ndarray::{ArrayD, IxDyn};

use crate::tape::{Arr, BackwardEntry, Tensor};

fn scalar_arr(v: f64) -> Arr {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let in_shape = IxDyn(self.shape());
        let out = self.with_value(|a| scalar_arr(a.sum()));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let gv = g[[]];
                    vec![Some(ArrayD::from_elem(in_shape.clone(), gv))]
                }),
            }),
            false,
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n: usize = self.shape().iter().product();
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    /// Elementwise binary cross-entropy on logits against a constant target
    /// in [0, 1]. Stable form: `max(x, 0) - x*t + ln(1 + exp(-|x|))`;
    /// gradient is `sigmoid(x) - t`. Reduce with `mean_all` (optionally
    /// after weighting) to get a loss value.
    pub fn bce_with_logits(&self, target: &Arr) -> Tensor {
        assert_eq!(
            self.shape(),
            target.shape(),
            "bce_with_logits: target shape mismatch"
        );
        let x_id = self.id;
        let t = target.clone();
        let out = self.with_value(|x| {
            let mut y = x.clone();
            y.zip_mut_with(target, |xv, &tv| {
                *xv = xv.max(0.0) - *xv * tv + (-xv.abs()).exp().ln_1p();
            });
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![x_id],
                run: Box::new(move |v, g, _n| {
                    let x = v.get(x_id);
                    let mut gi = g.clone();
                    ndarray::Zip::from(&mut gi).and(x).and(&t).for_each(|gv, &xv, &tv| {
                        *gv *= 1.0 / (1.0 + (-xv).exp()) - tv;
                    });
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }
}
