//! 8x8 block DCT utilities: the JPEG-style transform pair and the
//! high-frequency filter used by the extractor.
//!
//! The 1-D basis is the orthonormal DCT-II, so the 2-D block transform is
//! orthogonal: the inverse is the transpose, and the high-pass filter
//! (zero low zig-zag coefficients, transform back) is an orthogonal
//! projection — symmetric and idempotent. That makes it usable directly
//! as a `linear_map` graph op with itself as the adjoint.

use latentmark_autograd::{Arr, Tensor};
use ndarray::{ArrayD, Ix4, IxDyn};
use std::rc::Rc;

pub const BLOCK: usize = 8;

/// Orthonormal DCT-II basis: `M[u][n] = c(u) cos((2n+1) u pi / 16)`.
fn dct_matrix() -> [[f64; BLOCK]; BLOCK] {
    let mut m = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (u, row) in m.iter_mut().enumerate() {
        let c = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = c * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / (2.0 * n)).cos();
        }
    }
    m
}

/// Zig-zag scan index of each (row, col) coefficient, JPEG order.
pub fn zigzag_index() -> [[usize; BLOCK]; BLOCK] {
    let mut out = [[0usize; BLOCK]; BLOCK];
    let mut idx = 0usize;
    for s in 0..(2 * BLOCK - 1) {
        let cells: Vec<(usize, usize)> = (0..=s.min(BLOCK - 1))
            .filter_map(|i| {
                let j = s.checked_sub(i)?;
                (j < BLOCK).then_some((i, j))
            })
            .collect();
        // Odd diagonals run top-right to bottom-left, even ones the reverse.
        let iter: Box<dyn Iterator<Item = &(usize, usize)>> = if s % 2 == 1 {
            Box::new(cells.iter())
        } else {
            Box::new(cells.iter().rev())
        };
        for &(i, j) in iter {
            out[i][j] = idx;
            idx += 1;
        }
    }
    out
}

fn transform_blocks(x: &Arr, basis_left: &[[f64; BLOCK]; BLOCK]) -> Arr {
    let v = x.view().into_dimensionality::<Ix4>().expect("NCHW input");
    let (n, c, h, w) = v.dim();
    assert!(h % BLOCK == 0 && w % BLOCK == 0, "dims must be multiples of 8");
    let xs = x.as_slice().expect("contiguous input");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, h, w]));
    let os = out.as_slice_mut().unwrap();
    let m = basis_left;
    for img in 0..n * c {
        let base = img * h * w;
        for bi in (0..h).step_by(BLOCK) {
            for bj in (0..w).step_by(BLOCK) {
                // tmp = M * B
                let mut tmp = [[0.0; BLOCK]; BLOCK];
                for u in 0..BLOCK {
                    for j in 0..BLOCK {
                        let mut s = 0.0;
                        for x_ in 0..BLOCK {
                            s += m[u][x_] * xs[base + (bi + x_) * w + bj + j];
                        }
                        tmp[u][j] = s;
                    }
                }
                // out = tmp * M^T
                for u in 0..BLOCK {
                    for v_ in 0..BLOCK {
                        let mut s = 0.0;
                        for j in 0..BLOCK {
                            s += tmp[u][j] * m[v_][j];
                        }
                        os[base + (bi + u) * w + bj + v_] = s;
                    }
                }
            }
        }
    }
    out
}

/// Forward 2-D block DCT of an NCHW array (dims must divide by 8).
pub fn block_dct(x: &Arr) -> Arr {
    transform_blocks(x, &dct_matrix())
}

/// Inverse block DCT (transpose of the forward, by orthogonality).
pub fn block_idct(coefs: &Arr) -> Arr {
    // B = M^T * C * M; reuse transform_blocks with the transposed basis.
    let m = dct_matrix();
    let mut mt = [[0.0; BLOCK]; BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            mt[u][v] = m[v][u];
        }
    }
    transform_blocks(coefs, &mt)
}

/// Zero all coefficients with zig-zag index < cutoff (cutoff 0 = no-op),
/// in place on a coefficient-domain array.
pub fn apply_highpass_mask(coefs: &mut Arr, cutoff: usize) {
    if cutoff == 0 {
        return;
    }
    let zz = zigzag_index();
    let v = coefs.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    let cs = coefs.as_slice_mut().unwrap();
    for img in 0..n * c {
        let base = img * h * w;
        for bi in (0..h).step_by(BLOCK) {
            for bj in (0..w).step_by(BLOCK) {
                for (u, row) in zz.iter().enumerate() {
                    for (v_, &z) in row.iter().enumerate() {
                        if z < cutoff {
                            cs[base + (bi + u) * w + bj + v_] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// High-frequency filter: block DCT, zero zig-zag indices < cutoff,
/// inverse DCT. Handles dims that are not multiples of 8 by reflection
/// padding and cropping back.
pub fn highfreq_filter(x: &Arr, cutoff: usize) -> Arr {
    let s = x.shape().to_vec();
    assert_eq!(s.len(), 4, "highfreq_filter: NCHW input");
    let (h, w) = (s[2], s[3]);
    if h % BLOCK == 0 && w % BLOCK == 0 {
        let mut c = block_dct(x);
        apply_highpass_mask(&mut c, cutoff);
        return block_idct(&c);
    }
    let (hp, wp) = (h.next_multiple_of(BLOCK), w.next_multiple_of(BLOCK));
    let padded = reflect_pad_to(x, hp, wp);
    let mut c = block_dct(&padded);
    apply_highpass_mask(&mut c, cutoff);
    let full = block_idct(&c);
    full.slice(ndarray::s![.., .., 0..h, 0..w]).to_owned().into_dyn()
}

fn reflect_pad_to(x: &Arr, hp: usize, wp: usize) -> Arr {
    let v = x.view().into_dimensionality::<Ix4>().unwrap();
    let (n, c, h, w) = v.dim();
    let mirror = |i: usize, len: usize| -> usize {
        if i < len {
            i
        } else {
            2 * (len - 1) - i
        }
    };
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, hp, wp]));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..hp {
                for wi in 0..wp {
                    out[[ni, ci, hi, wi]] = v[[ni, ci, mirror(hi, h), mirror(wi, w)]];
                }
            }
        }
    }
    out
}

/// Graph op: high-frequency filter on a tensor. For dims divisible by 8
/// the filter is an orthogonal projection and therefore its own adjoint,
/// giving exact gradients. Other sizes take the reflect-pad + crop path,
/// where the same function is only an approximate adjoint; training always
/// runs on multiples of 32, so the gradient path never sees padding.
pub fn highfreq_tensor(x: &Tensor, cutoff: usize) -> Tensor {
    let f: Rc<dyn Fn(&Arr) -> Arr> = Rc::new(move |a: &Arr| highfreq_filter(a, cutoff));
    x.linear_map(f.clone(), f)
}

/// Graph op: forward block DCT (adjoint = inverse, by orthogonality).
pub fn block_dct_tensor(x: &Tensor) -> Tensor {
    x.linear_map(Rc::new(block_dct), Rc::new(block_idct))
}

/// Graph op: inverse block DCT (adjoint = forward).
pub fn block_idct_tensor(x: &Tensor) -> Tensor {
    x.linear_map(Rc::new(block_idct), Rc::new(block_dct))
}
