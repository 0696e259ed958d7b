//! Behavioral checks for the distortion simulator: mask faithfulness,
//! bit-exact region replacement, analytic blur limits, JPEG quantization
//! bounds, region-sampling statistics, determinism, and gradient flow.

use latentmark_autograd::{Arr, Tape, Tensor};
use latentmark_core::config::DistortionConfig;
use latentmark_core::distortion::{sample_region, DistortionSpec};
use latentmark_core::metrics::psnr;
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

fn rand_img(shape: &[usize], seed: u64) -> Arr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(0.0..1.0))
}

fn as_leaf(tape: &Rc<Tape>, a: &Arr) -> Tensor {
    tape.leaf(a.clone())
}

#[test]
fn identity_passes_through_with_zero_mask() {
    let tape = Tape::new();
    let gen = rand_img(&[2, 3, 24, 24], 1);
    let ori = rand_img(&[2, 3, 24, 24], 2);
    let (out, mask) = DistortionSpec::Identity
        .apply(&tape.constant(gen.clone()), &ori, None, 7)
        .unwrap();
    assert_eq!(out.value(), gen);
    assert!(mask.iter().all(|&v| v == 0.0));
}

#[test]
fn rd_crop_replace_is_bit_exact_and_mask_faithful() {
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 32, 32], 3);
    let ori = rand_img(&[1, 3, 32, 32], 4);
    let spec = DistortionSpec::RdCropReplace { area_frac: [0.05, 0.40] };
    let (out, mask) = spec.apply(&tape.constant(gen.clone()), &ori, None, 99).unwrap();
    let o = out.value();

    let mut inside = 0usize;
    for b in 0..1 {
        for y in 0..32 {
            for x in 0..32 {
                let tampered = mask[[b, 0, y, x]] == 1.0;
                for c in 0..3 {
                    let got = o[[b, c, y, x]];
                    if tampered {
                        assert_eq!(got, ori[[b, c, y, x]], "inside pixels must equal the original bit-exactly");
                    } else {
                        assert_eq!(got, gen[[b, c, y, x]], "outside pixels must equal the generated bit-exactly");
                    }
                }
                if tampered {
                    inside += 1;
                }
            }
        }
    }
    let frac = inside as f64 / (32.0 * 32.0);
    assert!((0.05..=0.40).contains(&frac), "mask area fraction {frac} outside configured range");
}

#[test]
fn splice_uses_donor_and_requires_it() {
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 32, 32], 5);
    let ori = rand_img(&[1, 3, 32, 32], 6);
    let donor = rand_img(&[1, 3, 32, 32], 7);
    let spec = DistortionSpec::Splice { area_frac: [0.05, 0.40] };

    assert!(spec.apply(&tape.constant(gen.clone()), &ori, None, 1).is_err());

    let (out, mask) = spec.apply(&tape.constant(gen.clone()), &ori, Some(&donor), 1).unwrap();
    let o = out.value();
    for y in 0..32 {
        for x in 0..32 {
            let tampered = mask[[0, 0, y, x]] == 1.0;
            for c in 0..3 {
                let expect = if tampered { donor[[0, c, y, x]] } else { gen[[0, c, y, x]] };
                assert_eq!(o[[0, c, y, x]], expect);
            }
        }
    }
}

#[test]
fn global_rewrite_is_all_donor_all_ones() {
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 16, 16], 8);
    let ori = rand_img(&[1, 3, 16, 16], 9);
    let donor = rand_img(&[1, 3, 16, 16], 10);
    let (out, mask) = DistortionSpec::GlobalRewriteProxy
        .apply(&tape.constant(gen), &ori, Some(&donor), 2)
        .unwrap();
    assert_eq!(out.value(), donor);
    assert!(mask.iter().all(|&v| v == 1.0));
}

#[test]
fn blur_sigma_to_zero_limit_is_identity() {
    // With sigma -> 0 the kernel weights collapse onto the center tap:
    // the nearest off-center weight is exp(-0.5/sigma^2), which for
    // sigma = 0.05 is ~e^-200, far below any representable contribution.
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 24, 24], 11);
    let ori = gen.clone();
    let spec = DistortionSpec::GaussianBlur { sigma: 0.05 };
    let (out, mask) = spec.apply(&tape.constant(gen.clone()), &ori, None, 3).unwrap();
    let max_err = out
        .value()
        .iter()
        .zip(gen.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err < 1e-6, "near-delta blur changed pixels by {max_err}");
    assert!(mask.iter().all(|&v| v == 0.0));
}

#[test]
fn blur_preserves_mean_and_range() {
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 32, 32], 12);
    let spec = DistortionSpec::GaussianBlur { sigma: 2.0 };
    let (out, _) = spec.apply(&tape.constant(gen.clone()), &gen, None, 4).unwrap();
    let o = out.value();
    assert!(o.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    // Reflect padding + normalized kernel keeps the global mean close.
    let m0 = gen.mean().unwrap();
    let m1 = o.mean().unwrap();
    assert!((m0 - m1).abs() < 5e-3, "blur shifted mean {m0} -> {m1}");
}

#[test]
fn jpeg_quality95_constant_image_within_one_level()
{
    let tape = Tape::new();
    let gen = Arr::from_elem(IxDyn(&[1, 3, 16, 16]), 0.42);
    let spec = DistortionSpec::Jpeg { quality: 95 };
    let (out, mask) = spec.apply(&tape.constant(gen.clone()), &gen, None, 5).unwrap();
    let max_err = out
        .value()
        .iter()
        .map(|&v| (v - 0.42f64).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err <= 1.0 / 255.0 + 1e-12, "constant image moved by {max_err} > 1/255");
    assert!(mask.iter().all(|&v| v == 0.0));
    assert!(out.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn jpeg_psnr_non_increasing_as_quality_drops() {
    let tape = Tape::new();
    // Smooth-ish test image: mixture of low-frequency gradients plus mild
    // texture, so quantization bites progressively.
    let mut gen = Arr::zeros(IxDyn(&[1, 3, 32, 32]));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for c in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let base = 0.5
                    + 0.3 * ((x as f64 / 31.0) - 0.5)
                    + 0.2 * ((y as f64 / 31.0) - 0.5)
                    + 0.1 * ((x as f64 * 0.7 + y as f64 * 0.3 + c as f64).sin() * 0.5);
                gen[[0, c, y, x]] = (base + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
        }
    }
    let mut last = f64::INFINITY;
    for q in [95, 80, 60, 40, 20, 10] {
        let spec = DistortionSpec::Jpeg { quality: q };
        let (out, _) = spec.apply(&tape.constant(gen.clone()), &gen, None, 6).unwrap();
        let (db, _) = psnr(&out.value(), &gen);
        assert!(
            db <= last + 1e-9,
            "psnr rose from {last:.3} to {db:.3} when quality dropped to {q}"
        );
        last = db;
    }
    assert!(last < 60.0, "lowest quality should visibly degrade the image");
}

#[test]
fn brightness_contrast_shift_and_clamp() {
    let tape = Tape::new();
    let gen = rand_img(&[1, 3, 16, 16], 14);
    let (bright, m1) = DistortionSpec::Brightness { delta: 0.15 }
        .apply(&tape.constant(gen.clone()), &gen, None, 7)
        .unwrap();
    for (o, g) in bright.value().iter().zip(gen.iter()) {
        assert!((o - (g + 0.15).clamp(0.0, 1.0)).abs() < 1e-12);
    }
    assert!(m1.iter().all(|&v| v == 0.0));

    let (contr, m2) = DistortionSpec::Contrast { scale: 1.2 }
        .apply(&tape.constant(gen.clone()), &gen, None, 8)
        .unwrap();
    for (o, g) in contr.value().iter().zip(gen.iter()) {
        assert!((o - ((g - 0.5) * 1.2 + 0.5).clamp(0.0, 1.0)).abs() < 1e-12);
    }
    assert!(m2.iter().all(|&v| v == 0.0));
}

#[test]
fn differentiable_kinds_pass_gradients_to_the_generated_image() {
    let gen = rand_img(&[1, 3, 16, 16], 15);
    let ori = rand_img(&[1, 3, 16, 16], 16);
    let donor = rand_img(&[1, 3, 16, 16], 17);
    let kinds = [
        DistortionSpec::Identity,
        DistortionSpec::RdCropReplace { area_frac: [0.05, 0.40] },
        DistortionSpec::Splice { area_frac: [0.05, 0.40] },
        DistortionSpec::GaussianBlur { sigma: 1.0 },
        DistortionSpec::Jpeg { quality: 75 },
        DistortionSpec::Brightness { delta: 0.1 },
        DistortionSpec::Contrast { scale: 1.1 },
    ];
    for spec in kinds {
        let tape = Tape::new();
        let x = as_leaf(&tape, &gen);
        let (out, _) = spec.apply(&x, &ori, Some(&donor), 9).unwrap();
        let loss = out.mean_all();
        tape.backward(&loss);
        let g = x.grad().expect("leaf gradient must be recorded");
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            norm > 1e-12,
            "distortion {} blocked all gradient flow",
            spec.label()
        );
    }
}

#[test]
fn apply_is_deterministic_in_seed() {
    let gen = rand_img(&[2, 3, 32, 32], 18);
    let ori = rand_img(&[2, 3, 32, 32], 19);
    let spec = DistortionSpec::RdCropReplace { area_frac: [0.05, 0.40] };

    let run = |seed: u64| {
        let tape = Tape::new();
        let (out, mask) = spec.apply(&tape.constant(gen.clone()), &ori, None, seed).unwrap();
        (out.value(), mask)
    };
    let (o1, m1) = run(42);
    let (o2, m2) = run(42);
    let (o3, m3) = run(43);
    assert_eq!(o1, o2);
    assert_eq!(m1, m2);
    assert!(o1 != o3 || m1 != m3, "different seeds should sample different regions");
}

#[test]
fn sample_region_respects_range_and_seed() {
    let r1 = sample_region(7, 64, 64, [0.05, 0.40]).unwrap();
    let r2 = sample_region(7, 64, 64, [0.05, 0.40]).unwrap();
    assert_eq!(r1, r2, "same seed must give the same rectangle");

    assert!(sample_region(1, 64, 64, [0.0, 0.4]).is_err());
    assert!(sample_region(1, 64, 64, [0.5, 0.4]).is_err());
    assert!(sample_region(1, 64, 64, [0.4, 1.0]).is_err());
    // 2x2 image cannot host a rectangle under 1/4 area smaller than 1 px.
    assert!(sample_region(1, 2, 2, [0.01, 0.02]).is_err());
}

#[test]
fn sample_region_monte_carlo_stays_in_range() {
    let (h, w) = (64, 48);
    let range = [0.05, 0.40];
    let mut min_f = f64::INFINITY;
    let mut max_f = f64::NEG_INFINITY;
    for seed in 0..10_000u64 {
        let r = sample_region(seed, h, w, range).unwrap();
        assert!(r.y0 + r.h <= h && r.x0 + r.w <= w, "rectangle must stay inside the image");
        let f = r.area() as f64 / (h * w) as f64;
        min_f = min_f.min(f);
        max_f = max_f.max(f);
    }
    assert!(min_f >= range[0], "min fraction {min_f} fell below {}", range[0]);
    assert!(max_f <= range[1], "max fraction {max_f} exceeded {}", range[1]);
    // The sampler should actually exercise the range, not sit in a corner.
    assert!(min_f < 0.08 && max_f > 0.35, "observed [{min_f:.3}, {max_f:.3}] too narrow");
}

#[test]
fn training_pool_sampler_covers_all_kinds() {
    let cfg = DistortionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..500 {
        let spec = DistortionSpec::sample(&cfg, &mut rng).unwrap();
        if let DistortionSpec::GaussianBlur { sigma } = &spec {
            assert!((cfg.blur_sigma[0]..=cfg.blur_sigma[1]).contains(sigma));
        }
        if let DistortionSpec::Jpeg { quality } = &spec {
            assert!((cfg.jpeg_quality[0]..=cfg.jpeg_quality[1]).contains(quality));
        }
        seen.insert(spec.kind_name().to_string());
    }
    assert_eq!(seen.len(), cfg.pool.len(), "sampler missed kinds: saw {seen:?}");
}
