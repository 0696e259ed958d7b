//! Shape and resampling ops on NCHW tensors. Each op is a bijective or
//! summing index map, so the backward pass is the corresponding scatter.

use ndarray::{ArrayD, Axis, IxDyn};

use crate::tape::{BackwardEntry, Tensor};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.shape().iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let in_shape = self.shape().to_vec();
        let out = self.with_value(|a| {
            a.as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(shape))
                .unwrap()
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    vec![Some(
                        g.as_standard_layout()
                            .into_owned()
                            .into_shape_with_order(IxDyn(&in_shape))
                            .unwrap(),
                    )]
                }),
            }),
            false,
        )
    }

    /// `[n, c, h, w] -> [n, c, 2h, 2w]` by pixel duplication.
    pub fn upsample_nearest2x(&self) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "upsample_nearest2x: NCHW only");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c, 2 * h, 2 * w]));
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        for wi in 0..w {
                            let v = a[[ni, ci, hi, wi]];
                            y[[ni, ci, 2 * hi, 2 * wi]] = v;
                            y[[ni, ci, 2 * hi, 2 * wi + 1]] = v;
                            y[[ni, ci, 2 * hi + 1, 2 * wi]] = v;
                            y[[ni, ci, 2 * hi + 1, 2 * wi + 1]] = v;
                        }
                    }
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                    for ni in 0..n {
                        for ci in 0..c {
                            for hi in 0..h {
                                for wi in 0..w {
                                    gi[[ni, ci, hi, wi]] = g[[ni, ci, 2 * hi, 2 * wi]]
                                        + g[[ni, ci, 2 * hi, 2 * wi + 1]]
                                        + g[[ni, ci, 2 * hi + 1, 2 * wi]]
                                        + g[[ni, ci, 2 * hi + 1, 2 * wi + 1]];
                                }
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    /// Insert zeros between samples: `[n, c, h, w] -> [n, c, 2h-1, 2w-1]`
    /// with the original values at even indices. Composing this with a
    /// padded convolution yields a stride-2 transposed convolution.
    pub fn zero_interleave2x(&self) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "zero_interleave2x: NCHW only");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c, 2 * h - 1, 2 * w - 1]));
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        for wi in 0..w {
                            y[[ni, ci, 2 * hi, 2 * wi]] = a[[ni, ci, hi, wi]];
                        }
                    }
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                    for ni in 0..n {
                        for ci in 0..c {
                            for hi in 0..h {
                                for wi in 0..w {
                                    gi[[ni, ci, hi, wi]] = g[[ni, ci, 2 * hi, 2 * wi]];
                                }
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    /// Non-overlapping k x k mean pooling. H and W must divide by k.
    pub fn avg_pool2d(&self, k: usize) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "avg_pool2d: NCHW only");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h % k == 0 && w % k == 0, "avg_pool2d: size not divisible by k");
        let (ho, wo) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c, ho, wo]));
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..ho {
                        for wi in 0..wo {
                            let mut s = 0.0;
                            for di in 0..k {
                                for dj in 0..k {
                                    s += a[[ni, ci, hi * k + di, wi * k + dj]];
                                }
                            }
                            y[[ni, ci, hi, wi]] = s * inv;
                        }
                    }
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                    for ni in 0..n {
                        for ci in 0..c {
                            for hi in 0..ho {
                                for wi in 0..wo {
                                    let gv = g[[ni, ci, hi, wi]] * inv;
                                    for di in 0..k {
                                        for dj in 0..k {
                                            gi[[ni, ci, hi * k + di, wi * k + dj]] = gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&self) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "global_avg_pool: NCHW only");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let inv = 1.0 / (h * w) as f64;
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
            for ni in 0..n {
                for ci in 0..c {
                    let mut s = 0.0;
                    for hi in 0..h {
                        for wi in 0..w {
                            s += a[[ni, ci, hi, wi]];
                        }
                    }
                    y[[ni, ci]] = s * inv;
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                    for ni in 0..n {
                        for ci in 0..c {
                            let gv = g[[ni, ci]] * inv;
                            for hi in 0..h {
                                for wi in 0..w {
                                    gi[[ni, ci, hi, wi]] = gv;
                                }
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    /// `[n, c] -> [n, c, h, w]` by copying each channel value everywhere.
    pub fn broadcast_hw(&self, h: usize, w: usize) -> Tensor {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 2, "broadcast_hw: input must be [n, c]");
        let (n, c) = (s[0], s[1]);
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
            for ni in 0..n {
                for ci in 0..c {
                    let v = a[[ni, ci]];
                    for hi in 0..h {
                        for wi in 0..w {
                            y[[ni, ci, hi, wi]] = v;
                        }
                    }
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c]));
                    for ni in 0..n {
                        for ci in 0..c {
                            let mut s = 0.0;
                            for hi in 0..h {
                                for wi in 0..w {
                                    s += g[[ni, ci, hi, wi]];
                                }
                            }
                            gi[[ni, ci]] = s;
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }

    /// Reflection padding (edge not repeated), p < min(h, w).
    pub fn reflect_pad2d(&self, p: usize) -> Tensor {
        if p == 0 {
            return self.clone();
        }
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "reflect_pad2d: NCHW only");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(p < h && p < w, "reflect_pad2d: pad too large");
        // Mirror index into [0, len) for a coordinate offset by -p.
        let mirror = move |i: usize, p: usize, len: usize| -> usize {
            let x = i as isize - p as isize;
            if x < 0 {
                (-x) as usize
            } else if x as usize >= len {
                2 * (len - 1) - x as usize
            } else {
                x as usize
            }
        };
        let out = self.with_value(|a| {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[n, c, h + 2 * p, w + 2 * p]));
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h + 2 * p {
                        let sh = mirror(hi, p, h);
                        for wi in 0..w + 2 * p {
                            y[[ni, ci, hi, wi]] = a[[ni, ci, sh, mirror(wi, p, w)]];
                        }
                    }
                }
            }
            y
        });
        self.tape.push(
            out,
            Some(BackwardEntry {
                inputs: vec![self.id],
                run: Box::new(move |_v, g, _n| {
                    let mut gi = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
                    for ni in 0..n {
                        for ci in 0..c {
                            for hi in 0..h + 2 * p {
                                let sh = mirror(hi, p, h);
                                for wi in 0..w + 2 * p {
                                    gi[[ni, ci, sh, mirror(wi, p, w)]] += g[[ni, ci, hi, wi]];
                                }
                            }
                        }
                    }
                    vec![Some(gi)]
                }),
            }),
            false,
        )
    }
}

/// Concatenate along the channel axis: all inputs `[n, c_i, h, w]`.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_channels: empty input");
    let first = parts[0];
    let s0 = first.shape().to_vec();
    assert_eq!(s0.len(), 4, "concat_channels: NCHW only");
    let mut channels = Vec::with_capacity(parts.len());
    for t in parts {
        assert!(first.same_tape(t), "concat_channels: tensors from different tapes");
        let s = t.shape();
        assert_eq!(s.len(), 4, "concat_channels: NCHW only");
        assert_eq!((s[0], s[2], s[3]), (s0[0], s0[2], s0[3]), "concat_channels: n/h/w mismatch");
        channels.push(s[1]);
    }

    let out = {
        let tape = first.tape();
        let values = tape.values.borrow();
        let views: Vec<_> = parts.iter().map(|t| values[t.id].view()).collect();
        // concatenate may emit permuted strides; downstream kernels want
        // standard layout.
        ndarray::concatenate(Axis(1), &views)
            .expect("concat_channels failed")
            .as_standard_layout()
            .into_owned()
    };

    let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
    let chan = channels.clone();
    first.tape.push(
        out,
        Some(BackwardEntry {
            inputs: ids,
            run: Box::new(move |_v, g, needs| {
                let mut grads = Vec::with_capacity(chan.len());
                let mut off = 0usize;
                for (i, &ci) in chan.iter().enumerate() {
                    grads.push(needs[i].then(|| {
                        g.slice_axis(Axis(1), ndarray::Slice::from(off as isize..(off + ci) as isize))
                            .to_owned()
                    }));
                    off += ci;
                }
                grads
            }),
        }),
        false,
    )
}
