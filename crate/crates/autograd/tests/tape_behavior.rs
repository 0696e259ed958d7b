//! Tape semantics: straight-through ops, detach, frozen params, and
//! deterministic parameter initialization.

use latentmark_autograd::nn::{Conv2d, ConvTranspose2d};
use latentmark_autograd::{Arr, Init, ParamStore, Tape};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

fn rand_arr(shape: &[usize], seed: u64) -> Arr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn round_ste_rounds_forward_passes_grad_back() {
    let store = ParamStore::new(1);
    let x = store.root().param("x", &[4], Init::Uniform { lo: -3.0, hi: 3.0 });
    let tape = Tape::new();
    let t = x.tensor(&tape);
    let y = t.round_ste();
    let expect = x.value().mapv(f64::round);
    assert_eq!(y.value(), expect);

    let loss = y.mul_scalar(2.0).sum_all();
    tape.backward(&loss);
    // Straight-through: d(round(x)*2)/dx == 2 everywhere.
    assert_eq!(x.grad(), Arr::from_elem(IxDyn(&[4]), 2.0));
}

#[test]
fn detach_blocks_gradient() {
    let store = ParamStore::new(2);
    let x = store.root().param("x", &[3], Init::Uniform { lo: -1.0, hi: 1.0 });
    let tape = Tape::new();
    let t = x.tensor(&tape);
    // loss = sum(x * detach(x)): only the live branch contributes.
    let loss = t.mul(&t.detach()).sum_all();
    tape.backward(&loss);
    assert_eq!(x.grad(), x.value(), "detach leaked gradient");
}

#[test]
fn frozen_param_enters_as_constant_and_gets_no_grad() {
    let store = ParamStore::new(3);
    let x = store.root().param("x", &[3], Init::Uniform { lo: -1.0, hi: 1.0 });
    let w = store.root().param("w", &[3], Init::Uniform { lo: -1.0, hi: 1.0 });
    w.set_trainable(false);

    let tape = Tape::new();
    let tw = w.tensor(&tape);
    assert!(!tw.needs_grad(), "frozen param produced a grad-tracked tensor");
    let loss = x.tensor(&tape).mul(&tw).sum_all();
    tape.backward(&loss);
    assert_eq!(x.grad(), w.value());
    assert_eq!(w.grad().sum(), 0.0, "frozen param accumulated gradient");
}

#[test]
fn param_init_is_order_independent() {
    // Same seed, different creation order -> identical values per name.
    let s1 = ParamStore::new(42);
    let a1 = s1.root().param("block/a", &[8], Init::FanIn { fan_in: 8 });
    let b1 = s1.root().param("block/b", &[8], Init::FanIn { fan_in: 8 });

    let s2 = ParamStore::new(42);
    let b2 = s2.root().param("block/b", &[8], Init::FanIn { fan_in: 8 });
    let a2 = s2.root().param("block/a", &[8], Init::FanIn { fan_in: 8 });

    assert_eq!(a1.value(), a2.value());
    assert_eq!(b1.value(), b2.value());
    assert_ne!(a1.value(), b1.value(), "different names must init differently");
}

#[test]
fn zero_output_conv_is_exact_identity_for_residual() {
    let store = ParamStore::new(4);
    let root = store.root();
    let conv = Conv2d::new_zero_output(&root.sub("res"), 3, 3, 3, 1, 1);
    let tape = Tape::new();
    let x = tape.constant(rand_arr(&[2, 3, 8, 8], 9));
    let y = x.add(&conv.forward(&x));
    assert_eq!(y.value(), x.value(), "zero-init residual branch must be a no-op");
}

#[test]
fn conv_transpose_doubles_spatial_size() {
    let store = ParamStore::new(5);
    let root = store.root();
    for (k, p) in [(4usize, 1usize), (2, 0)] {
        let up = ConvTranspose2d::new(&root.sub(format!("up{k}").as_str()), 3, 5, k, p);
        let tape = Tape::new();
        let x = tape.constant(rand_arr(&[2, 3, 6, 7], 10));
        let y = up.forward(&x);
        assert_eq!(y.shape(), &[2, 5, 12, 14]);
    }
}

#[test]
fn backward_requires_scalar() {
    let store = ParamStore::new(6);
    let x = store.root().param("x", &[2, 2], Init::Uniform { lo: -1.0, hi: 1.0 });
    let tape = Tape::new();
    let t = x.tensor(&tape);
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        tape.backward(&t);
    }));
    assert!(result.is_err(), "backward on a non-scalar must panic");
}
