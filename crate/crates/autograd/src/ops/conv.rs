//! 2-D convolutions over NCHW tensors.
//!
//! `conv2d` lowers to im2col + one GEMM per call, which is where nearly all
//! training time goes; everything else in this module is straightforward
//! loop code. Transposed convolution is not an op here: compose
//! `zero_interleave2x` + `conv2d` (see `nn::ConvTranspose2d`).

use ndarray::{Array2, Array4, ArrayD, Ix4, IxDyn};

use crate::tape::{Arr, BackwardEntry, Tensor};

/// Zero-pad the two trailing axes of an NCHW array.
fn pad_nchw(a: &Arr, p: usize) -> Array4<f64> {
    let v = a.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    if p == 0 {
        // Force standard layout; producers like concatenate or axis
        // permutations can hand over exotic strides.
        return v.as_standard_layout().into_owned();
    }
    let mut out = Array4::<f64>::zeros((n, c, h + 2 * p, w + 2 * p));
    out.slice_mut(ndarray::s![.., .., p..p + h, p..p + w]).assign(&v);
    out
}

/// Unfold to a `[cin*kh*kw, n*ho*wo]` matrix (column l = (n, ho, wo)).
/// Hot path: works on raw slices so the inner copy vectorizes.
fn im2col(xpad: &Array4<f64>, kh: usize, kw: usize, stride: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (n, cin, hp, wp) = xpad.dim();
    let xs = xpad.as_slice().expect("im2col: non-contiguous input");
    let mut col = Array2::<f64>::zeros((cin * kh * kw, n * ho * wo));
    {
        let cs = col.as_slice_mut().unwrap();
        let ncols = n * ho * wo;
        for ci in 0..cin {
            for ki in 0..kh {
                for kj in 0..kw {
                    let r = (ci * kh + ki) * kw + kj;
                    let row = &mut cs[r * ncols..(r + 1) * ncols];
                    for ni in 0..n {
                        for hi in 0..ho {
                            let src = ((ni * cin + ci) * hp + hi * stride + ki) * wp + kj;
                            let dst = (ni * ho + hi) * wo;
                            if stride == 1 {
                                row[dst..dst + wo].copy_from_slice(&xs[src..src + wo]);
                            } else {
                                for wi in 0..wo {
                                    row[dst + wi] = xs[src + wi * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add of the im2col adjoint back into an (unpadded) input gradient.
fn col2im(
    gcol: &Array2<f64>,
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> ArrayD<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut gpad = Array4::<f64>::zeros((n, cin, hp, wp));
    {
        let gs = gpad.as_slice_mut().unwrap();
        let cs = gcol.as_slice().expect("col2im: non-contiguous gradient");
        let ncols = n * ho * wo;
        for ci in 0..cin {
            for ki in 0..kh {
                for kj in 0..kw {
                    let r = (ci * kh + ki) * kw + kj;
                    let row = &cs[r * ncols..(r + 1) * ncols];
                    for ni in 0..n {
                        for hi in 0..ho {
                            let dst = ((ni * cin + ci) * hp + hi * stride + ki) * wp + kj;
                            let src = (ni * ho + hi) * wo;
                            if stride == 1 {
                                let (g, s) = (&mut gs[dst..dst + wo], &row[src..src + wo]);
                                for (gv, sv) in g.iter_mut().zip(s) {
                                    *gv += sv;
                                }
                            } else {
                                for wi in 0..wo {
                                    gs[dst + wi * stride] += row[src + wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if pad == 0 {
        gpad.into_dyn()
    } else {
        gpad.slice(ndarray::s![.., .., pad..pad + h, pad..pad + w])
            .to_owned()
            .into_dyn()
    }
}

/// GEMM results come back column-major when both operand leading strides
/// are 1 (ndarray picks the output layout from its inputs); the reshapes
/// below need row-major.
fn to_c_order(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// `[cout, n*ho*wo]` GEMM output -> `[n, cout, ho, wo]`.
fn mat_to_nchw(y: Array2<f64>, n: usize, cout: usize, ho: usize, wo: usize) -> Arr {
    to_c_order(y)
        .into_shape_with_order((cout, n, ho, wo))
        .unwrap()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .to_owned()
        .into_dyn()
}

/// `[n, cout, ho, wo]` gradient -> `[cout, n*ho*wo]` for the GEMMs.
fn nchw_to_mat(g: &Arr) -> Array2<f64> {
    let v = g.view().into_dimensionality::<Ix4>().unwrap();
    let (n, cout, ho, wo) = v.dim();
    v.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((cout, n * ho * wo))
        .unwrap()
}

impl Tensor {
    /// Standard convolution: x `[n, cin, h, w]`, weight `[cout, cin, kh, kw]`,
    /// optional bias `[cout]`, zero padding. Output size must divide exactly.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [cout, cin, kh, kw]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than input");
        assert_eq!((h + 2 * pad - kh) % stride, 0, "conv2d: height/stride mismatch");
        assert_eq!((w + 2 * pad - kw) % stride, 0, "conv2d: width/stride mismatch");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;

        let (x_id, w_id) = (self.id, weight.id);
        let b_id = bias.map(|b| {
            assert_eq!(b.shape(), [cout], "conv2d: bias dim mismatch");
            b.id
        });

        let out = self.with_value(|x| {
            weight.with_value(|wv| {
                let col = im2col(&pad_nchw(x, pad), kh, kw, stride, ho, wo);
                let wmat = wv
                    .view()
                    .into_shape_with_order((cout, cin * kh * kw))
                    .unwrap();
                let mut y = wmat.dot(&col);
                if let Some(b) = bias {
                    b.with_value(|bv| {
                        for (mut row, &bc) in y.rows_mut().into_iter().zip(bv.iter()) {
                            row.mapv_inplace(|v| v + bc);
                        }
                    });
                }
                mat_to_nchw(y, n, cout, ho, wo)
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
                    let gmat = nchw_to_mat(g);
                    let wv = v.get(w_id);
                    let wmat = wv
                        .view()
                        .into_shape_with_order((cout, cin * kh * kw))
                        .unwrap();
                    let gx = needs[0].then(|| {
                        let gcol = wmat.t().dot(&gmat);
                        col2im(&gcol, n, cin, h, w, kh, kw, stride, pad, ho, wo)
                    });
                    let gw = needs[1].then(|| {
                        let col = im2col(&pad_nchw(v.get(x_id), pad), kh, kw, stride, ho, wo);
                        to_c_order(gmat.dot(&col.t()))
                            .into_shape_with_order((cout, cin, kh, kw))
                            .unwrap()
                            .into_dyn()
                    });
                    let mut grads = vec![gx, gw];
                    if b_id.is_some() {
                        grads.push(needs[2].then(|| {
                            let mut gb = ndarray::Array1::<f64>::zeros(cout);
                            for (i, row) in gmat.rows().into_iter().enumerate() {
                                gb[i] = row.sum();
                            }
                            gb.into_dyn()
                        }));
                    }
                    grads
                }),
            }),
            false,
        )
    }

    /// Per-channel convolution: x `[n, c, h, w]`, weight `[c, kh, kw]`,
    /// optional bias `[c]`, stride 1, zero padding.
    pub fn depthwise_conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, pad: usize) -> Tensor {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "depthwise_conv2d: input must be NCHW");
        assert_eq!(ws.len(), 3, "depthwise_conv2d: weight must be [c, kh, kw]");
        assert_eq!(xs[1], ws[0], "depthwise_conv2d: channel mismatch");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ws[1], ws[2]);
        let ho = h + 2 * pad - kh + 1;
        let wo = w + 2 * pad - kw + 1;

        let (x_id, w_id) = (self.id, weight.id);
        let b_id = bias.map(|b| {
            assert_eq!(b.shape(), [c], "depthwise_conv2d: bias dim mismatch");
            b.id
        });

        let out = self.with_value(|x| {
            weight.with_value(|wv| {
                let xpad = pad_nchw(x, pad);
                let (hp, wp) = (h + 2 * pad, w + 2 * pad);
                let xs = xpad.as_slice().unwrap();
                let ws = wv.as_slice().unwrap();
                let mut y = Array4::<f64>::zeros((n, c, ho, wo));
                let ys = y.as_slice_mut().unwrap();
                for ni in 0..n {
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let wk = ws[(ci * kh + ki) * kw + kj];
                                if wk == 0.0 {
                                    continue;
                                }
                                for hi in 0..ho {
                                    let src = ((ni * c + ci) * hp + hi + ki) * wp + kj;
                                    let dst = ((ni * c + ci) * ho + hi) * wo;
                                    for wi in 0..wo {
                                        ys[dst + wi] += wk * xs[src + wi];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    b.with_value(|bv| {
                        for ni in 0..n {
                            for ci in 0..c {
                                let bc = bv[[ci]];
                                let dst = (ni * c + ci) * ho * wo;
                                for v in &mut ys[dst..dst + ho * wo] {
                                    *v += bc;
                                }
                            }
                        }
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
                    let gs = g.as_slice().expect("depthwise: non-contiguous grad");
                    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
                    let gx = needs[0].then(|| {
                        let wv = v.get(w_id);
                        let ws = wv.as_slice().unwrap();
                        let mut gpad = Array4::<f64>::zeros((n, c, hp, wp));
                        {
                            let gp = gpad.as_slice_mut().unwrap();
                            for ni in 0..n {
                                for ci in 0..c {
                                    for ki in 0..kh {
                                        for kj in 0..kw {
                                            let wk = ws[(ci * kh + ki) * kw + kj];
                                            if wk == 0.0 {
                                                continue;
                                            }
                                            for hi in 0..ho {
                                                let dst = ((ni * c + ci) * hp + hi + ki) * wp + kj;
                                                let src = ((ni * c + ci) * ho + hi) * wo;
                                                for wi in 0..wo {
                                                    gp[dst + wi] += wk * gs[src + wi];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        if pad == 0 {
                            gpad.into_dyn()
                        } else {
                            gpad.slice(ndarray::s![.., .., pad..pad + h, pad..pad + w])
                                .to_owned()
                                .into_dyn()
                        }
                    });
                    let gw = needs[1].then(|| {
                        let xpad = pad_nchw(v.get(x_id), pad);
                        let xs = xpad.as_slice().unwrap();
                        let mut gw = ArrayD::<f64>::zeros(IxDyn(&[c, kh, kw]));
                        {
                            let gws = gw.as_slice_mut().unwrap();
                            for ni in 0..n {
                                for ci in 0..c {
                                    for ki in 0..kh {
                                        for kj in 0..kw {
                                            let mut s = 0.0;
                                            for hi in 0..ho {
                                                let xo = ((ni * c + ci) * hp + hi + ki) * wp + kj;
                                                let go = ((ni * c + ci) * ho + hi) * wo;
                                                for wi in 0..wo {
                                                    s += gs[go + wi] * xs[xo + wi];
                                                }
                                            }
                                            gws[(ci * kh + ki) * kw + kj] += s;
                                        }
                                    }
                                }
                            }
                        }
                        gw
                    });
                    let mut grads = vec![gx, gw];
                    if b_id.is_some() {
                        grads.push(needs[2].then(|| {
                            let mut gb = ndarray::Array1::<f64>::zeros(c);
                            for ni in 0..n {
                                for ci in 0..c {
                                    let src = (ni * c + ci) * ho * wo;
                                    gb[ci] += gs[src..src + ho * wo].iter().sum::<f64>();
                                }
                            }
                            gb.into_dyn()
                        }));
                    }
                    grads
                }),
            }),
            false,
        )
    }
}
