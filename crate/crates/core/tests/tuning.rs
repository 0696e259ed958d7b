//! Scratch timing/tuning runs; not part of the suite.

use std::time::Instant;

use latentmark_core::config::{default_injection, Config};
use latentmark_core::dataset::Dataset;
use latentmark_core::distortion::DistortionSpec;
use latentmark_core::eval::evaluate;
use latentmark_core::trainer::{pretrain_codec, train_watermark_until};

fn run_with_milestones(tag: &str, cfg: &Config, milestones: &[u64]) {
    let ds = Dataset::holdout(cfg);
    let specs = vec![
        DistortionSpec::Identity,
        DistortionSpec::GaussianBlur { sigma: 1.0 },
        DistortionSpec::RdCropReplace { area_frac: cfg.distortion.rd_area_frac },
    ];

    let t0 = Instant::now();
    let pre = pretrain_codec(cfg, None, None).unwrap();
    println!(
        "[{tag} {:7.1}s] pretrain done, final mse {:.5}",
        t0.elapsed().as_secs_f64(),
        pre.losses.last().unwrap()
    );

    let mut init = pre.checkpoint;
    for &stop in milestones {
        let run = train_watermark_until(cfg, &init, None, Some(stop)).unwrap();
        println!(
            "[{tag} {:7.1}s] wm step {stop}, loss {:.5}",
            t0.elapsed().as_secs_f64(),
            run.losses.last().unwrap()
        );
        let rep = evaluate(&run.models, &ds, &specs, 5).unwrap();
        println!("{}", rep.to_table());
        init = run.checkpoint;
    }
}

/// Message channel with only the MSE carrier anchor: identity distortion
/// forever, no mask or cost pressure. If accuracy does not leave 0.5 here,
/// optimization of the message pathway itself is broken.
#[test]
#[ignore]
fn probe_message_only() {
    let mut cfg = Config::toy();
    cfg.model.image_size = 32;
    cfg.model.alpha = 4;
    cfg.model.injection = default_injection(4);
    cfg.model.k = 8;
    cfg.train.dataset_size = 16;
    cfg.train.holdout_size = 4;
    cfg.train.pretrain_steps = 300;
    cfg.train.steps = 800;
    cfg.distortion.warmup_identity_steps = 800;
    cfg.loss.lambda_k = 10.0;
    cfg.loss.lambda_m = 0.0;
    cfg.loss.lambda_i = 1.0;
    cfg.loss.lambda_lpips = 0.0;
    cfg.loss.lambda_ct = 0.0;
    cfg.validate().unwrap();
    run_with_milestones("msg-k10", &cfg, &[100, 200, 400, 800]);
}

#[test]
#[ignore]
fn full_toy_run() {
    let cfg = Config::toy();
    run_with_milestones("toy", &cfg, &[300, 600, 1000, 1500, 2000, 2500, 3000]);
}
