//! Pointwise ops. All binary ops require identical shapes; broadcasting is
//! handled by dedicated shape ops instead.

use crate::tape::{Arr, BackwardEntry, Tensor};

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert!(a.same_tape(b), "{op}: tensors from different tapes");
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "add");
        let out = self.with_value(|a| other.with_value(|b| a + b));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id, other.id],
                run: Box::new(move |_v, g, needs| {
                    vec![
                        needs[0].then(|| g.clone()),
                        needs[1].then(|| g.clone()),
                    ]
                }),
            }),
            false,
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "sub");
        let out = self.with_value(|a| other.with_value(|b| a - b));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id, other.id],
                run: Box::new(move |_v, g, needs| {
                    vec![
                        needs[0].then(|| g.clone()),
                        needs[1].then(|| g.mapv(|x| -x)),
                    ]
                }),
            }),
            false,
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "mul");
        let (a_id, b_id) = (self.id, other.id);
        let out = self.with_value(|a| other.with_value(|b| a * b));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![a_id, b_id],
                run: Box::new(move |v, g, needs| {
                    vec![
                        needs[0].then(|| g * v.get(b_id)),
                        needs[1].then(|| g * v.get(a_id)),
                    ]
                }),
            }),
            false,
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.with_value(|a| a.mapv(|x| x + c));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| vec![Some(g.clone())]),
            }),
            false,
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out = self.with_value(|a| a.mapv(|x| x * c));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| vec![Some(g.mapv(|x| x * c))]),
            }),
            false,
        )
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let x_id = self.id;
        let out = self.with_value(|a| a.mapv(&f));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![x_id],
                run: Box::new(move |v, g, _n| {
                    let mut gi = g.clone();
                    gi.zip_mut_with(v.get(x_id), |gv, &xv| *gv *= df(xv));
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| 1.0 / (1.0 + (-x).exp()),
            |x| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            },
        )
    }

    /// x * sigmoid(x).
    pub fn silu(&self) -> Tensor {
        self.unary(
            |x| x / (1.0 + (-x).exp()),
            |x| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(|x| x.sqrt(), |x| 0.5 / x.sqrt().max(1e-300))
    }

    pub fn ln(&self) -> Tensor {
        self.unary(|x| x.ln(), |x| 1.0 / x)
    }

    /// Subgradient at 0 is 0.
    pub fn abs(&self) -> Tensor {
        self.unary(
            |x| x.abs(),
            |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x| 2.0 * x)
    }

    /// Pass-through gradient inside [lo, hi], zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Round to nearest integer with a straight-through gradient (identity
    /// in the backward pass).
    pub fn round_ste(&self) -> Tensor {
        let out = self.with_value(|a| a.mapv(f64::round));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| vec![Some(g.clone())]),
            }),
            false,
        )
    }

    /// Cut the graph: value passes, gradient does not.
    pub fn detach(&self) -> Tensor {
        let out: Arr = self.value();
        self.tape.constant(out)
    }
}
