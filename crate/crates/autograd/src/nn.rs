//! Thin layer structs: a layer owns its `Param`s and knows how to apply
//! itself to a tensor on some tape. Parameter names live under the scope
//! passed at construction ("w" / "b"), so checkpointing is just the store.

use crate::param::{Init, Param, Scope};
use crate::tape::Tensor;

/// Standard conv layer. `zero_output` forces weight and bias to zero at
/// init, which makes any residual branch ending in this layer an exact
/// no-op until training moves it.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(scope: &Scope<'_>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let fan_in = cin * k * k;
        Conv2d {
            weight: scope.param("w", &[cout, cin, k, k], Init::FanIn { fan_in }),
            bias: Some(scope.param("b", &[cout], Init::Zeros)),
            stride,
            pad,
        }
    }

    pub fn new_zero_output(scope: &Scope<'_>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        Conv2d {
            weight: scope.param("w", &[cout, cin, k, k], Init::Zeros),
            bias: Some(scope.param("b", &[cout], Init::Zeros)),
            stride,
            pad,
        }
    }

    pub fn no_bias(scope: &Scope<'_>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let fan_in = cin * k * k;
        Conv2d {
            weight: scope.param("w", &[cout, cin, k, k], Init::FanIn { fan_in }),
            bias: None,
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor(x.tape());
        let b = self.bias.as_ref().map(|b| b.tensor(x.tape()));
        x.conv2d(&w, b.as_ref(), self.stride, self.pad)
    }
}

/// Per-channel (depthwise) conv, stride 1.
pub struct DepthwiseConv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn new(scope: &Scope<'_>, c: usize, k: usize, pad: usize) -> DepthwiseConv2d {
        DepthwiseConv2d {
            weight: scope.param("w", &[c, k, k], Init::FanIn { fan_in: k * k }),
            bias: Some(scope.param("b", &[c], Init::Zeros)),
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor(x.tape());
        let b = self.bias.as_ref().map(|b| b.tensor(x.tape()));
        x.depthwise_conv2d(&w, b.as_ref(), self.pad)
    }
}

/// Stride-2 transposed conv, realized as zero interleaving followed by a
/// stride-1 conv with pad `k - 1 - p`. Output is exactly `[n, cout, 2h, 2w]`
/// for (k=4, p=1) or (k=2, p=0).
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    conv_pad: usize,
}

impl ConvTranspose2d {
    pub fn new(scope: &Scope<'_>, cin: usize, cout: usize, k: usize, p: usize) -> ConvTranspose2d {
        assert!(k >= p + 1, "conv_transpose: pad too large for kernel");
        assert_eq!(k, 2 * (p + 1), "conv_transpose: need k = 2(p+1) for exact 2x output");
        let fan_in = cin * k * k;
        ConvTranspose2d {
            weight: scope.param("w", &[cout, cin, k, k], Init::FanIn { fan_in }),
            bias: Some(scope.param("b", &[cout], Init::Zeros)),
            conv_pad: k - 1 - p,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor(x.tape());
        let b = self.bias.as_ref().map(|b| b.tensor(x.tape()));
        x.zero_interleave2x().conv2d(&w, b.as_ref(), 1, self.conv_pad)
    }
}

/// Fully connected layer over `[n, in]`.
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(scope: &Scope<'_>, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: scope.param("w", &[d_out, d_in], Init::FanIn { fan_in: d_in }),
            bias: Some(scope.param("b", &[d_out], Init::Zeros)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor(x.tape());
        let b = self.bias.as_ref().map(|b| b.tensor(x.tape()));
        x.linear(&w, b.as_ref())
    }
}
