//! Dense linear algebra: affine maps, batched matmul, softmax, and a
//! generic fixed linear operator (forward + adjoint pair).

use std::rc::Rc;

use ndarray::{Array2, Array3, ArrayD, Axis, Ix2, Ix3, IxDyn};

use crate::tape::{Arr, BackwardEntry, Tensor};

fn as2(a: &Arr) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected rank-2 tensor")
}

fn as3(a: &Arr) -> ndarray::ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected rank-3 tensor")
}

impl Tensor {
    /// Affine map for rank-2 input: `[n, in] x [out, in]^T + [out] -> [n, out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
        assert_eq!(self.shape().len(), 2, "linear: input must be [n, in]");
        assert_eq!(weight.shape().len(), 2, "linear: weight must be [out, in]");
        assert_eq!(self.shape()[1], weight.shape()[1], "linear: in-dim mismatch");
        let (x_id, w_id) = (self.id, weight.id);
        let b_id = bias.map(|b| {
            assert_eq!(b.shape(), [weight.shape()[0]], "linear: bias dim mismatch");
            b.id
        });

        let out = self.with_value(|x| {
            weight.with_value(|w| {
                let mut y: Array2<f64> = as2(x).dot(&as2(w).t());
                if let Some(b) = bias {
                    b.with_value(|bv| {
                        let bv = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                        y += &bv;
                    });
                }
                y.into_dyn()
            })
        });

        let mut inputs = vec![x_id, w_id];
        if let Some(b) = b_id {
            inputs.push(b);
        }
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs,
                run: Box::new(move |v, g, needs| {
                    let g2 = as2(g);
                    let mut grads = vec![
                        needs[0].then(|| g2.dot(&as2(v.get(w_id))).into_dyn()),
                        needs[1].then(|| g2.t().dot(&as2(v.get(x_id))).into_dyn()),
                    ];
                    if b_id.is_some() {
                        grads.push(needs[2].then(|| g2.sum_axis(Axis(0)).into_dyn()));
                    }
                    grads
                }),
            }),
            false,
        )
    }

    /// Batched matmul: `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, other: &Tensor) -> Tensor {
        assert!(self.same_tape(other), "bmm: tensors from different tapes");
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        assert_eq!(sa.len(), 3, "bmm: lhs must be rank 3");
        assert_eq!(sb.len(), 3, "bmm: rhs must be rank 3");
        assert_eq!(sa[0], sb[0], "bmm: batch mismatch");
        assert_eq!(sa[2], sb[1], "bmm: inner dim mismatch");
        let (a_id, b_id) = (self.id, other.id);

        let out = self.with_value(|a| {
            other.with_value(|b| {
                let (a3, b3) = (as3(a), as3(b));
                let mut y = Array3::<f64>::zeros((sa[0], sa[1], sb[2]));
                for i in 0..sa[0] {
                    y.index_axis_mut(Axis(0), i)
                        .assign(&a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)));
                }
                y.into_dyn()
            })
        });

        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![a_id, b_id],
                run: Box::new(move |v, g, needs| {
                    let g3 = as3(g);
                    let (a3v, b3v) = (v.get(a_id), v.get(b_id));
                    let (a3, b3) = (as3(a3v), as3(b3v));
                    let batch = g3.shape()[0];
                    let ga = needs[0].then(|| {
                        let mut ga = Array3::<f64>::zeros((batch, a3.shape()[1], a3.shape()[2]));
                        for i in 0..batch {
                            ga.index_axis_mut(Axis(0), i).assign(
                                &g3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i).t()),
                            );
                        }
                        ga.into_dyn()
                    });
                    let gb = needs[1].then(|| {
                        let mut gb = Array3::<f64>::zeros((batch, b3.shape()[1], b3.shape()[2]));
                        for i in 0..batch {
                            gb.index_axis_mut(Axis(0), i).assign(
                                &a3.index_axis(Axis(0), i).t().dot(&g3.index_axis(Axis(0), i)),
                            );
                        }
                        gb.into_dyn()
                    });
                    vec![ga, gb]
                }),
            }),
            false,
        )
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&self) -> Tensor {
        assert_eq!(self.shape().len(), 3, "transpose_last2: rank-3 only");
        let out = self.with_value(|a| {
            let mut v = a.view();
            v.swap_axes(1, 2);
            v.to_owned()
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gv = g.view();
                    gv.swap_axes(1, 2);
                    vec![Some(gv.to_owned())]
                }),
            }),
            false,
        )
    }

    /// Softmax along the last axis. Rows of the result sum to 1.
    pub fn softmax_lastdim(&self) -> Tensor {
        let out = self.with_value(|a| softmax_last(a));
        let y_cache = out.clone();
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    // dx = y * (g - sum(g * y, last))
                    let last = y_cache.ndim() - 1;
                    let dot = (g * &y_cache).sum_axis(Axis(last)).insert_axis(Axis(last));
                    vec![Some(&y_cache * &(g - &dot))]
                }),
            }),
            false,
        )
    }

    /// Apply a fixed linear operator `A` with its adjoint `A^T`.
    ///
    /// The forward closure must be linear in its input; the backward pass is
    /// then exactly the adjoint applied to the upstream gradient. Used for
    /// hand-written transforms (block DCT, fixed filters) without teaching
    /// the tape about their internals.
    pub fn linear_map(
        &self,
        forward: Rc<dyn Fn(&Arr) -> Arr>,
        adjoint: Rc<dyn Fn(&Arr) -> Arr>,
    ) -> Tensor {
        let in_shape = IxDyn(self.shape());
        let out = self.with_value(|a| forward(a));
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let gi = adjoint(g);
                    assert_eq!(
                        gi.raw_dim(),
                        in_shape,
                        "linear_map: adjoint returned wrong shape"
                    );
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }
}

fn softmax_last(a: &Arr) -> Arr {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - mx).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}

/// Row-wise softmax over the last axis of a plain array (no tape).
pub fn softmax_last_arr(a: &ArrayD<f64>) -> ArrayD<f64> {
    softmax_last(a)
}
