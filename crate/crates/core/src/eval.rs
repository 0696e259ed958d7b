//! Holdout evaluation: embed → distort → extract per image, one report
//! row per requested distortion, plus aggregate means. Reports serialize
//! to JSON and render as an aligned text table.

use latentmark_autograd::Tape;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{mix, Dataset};
use crate::distortion::DistortionSpec;
use crate::error::Error;
use crate::message::BitMessage;
use crate::metrics::{auc, bit_accuracy, f1_at_half, psnr, ssim};
use crate::trainer::Models;

const TAG_EVAL: u64 = 21;

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub distortion: String,
    pub bit_accuracy: f64,
    /// Watermarked-versus-clean fidelity (independent of the distortion).
    pub psnr_db: f64,
    pub psnr_capped: bool,
    pub ssim: f64,
    /// Mask quality; absent when the ground truth has a single class
    /// (e.g. identity rows have nothing tampered).
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub mean_bit_accuracy: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Means over the rows where the metric is defined.
    pub mean_f1: Option<f64>,
    pub mean_auc: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn mean_opt(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(mean(xs))
    }
}

/// Mean codec reconstruction PSNR over a dataset (phase-one quality).
pub fn reconstruction_psnr(models: &Models, ds: &Dataset) -> Result<f64, Error> {
    let mut vals = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let tape = Tape::new();
        let x = ds.batch(&[i]);
        let recon = models.codec.reconstruct(&tape, &x)?;
        vals.push(psnr(&recon.value(), &x).0);
    }
    Ok(mean(&vals))
}

/// Run the embed → distort → extract protocol over `ds` for every entry
/// of `specs`, in order. Deterministic in `seed`.
pub fn evaluate(
    models: &Models,
    ds: &Dataset,
    specs: &[DistortionSpec],
    seed: u64,
) -> Result<MetricsReport, Error> {
    if ds.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let k = models.embedder.message_encoder.k;
    let mut rows = Vec::with_capacity(specs.len());

    for (ri, spec) in specs.iter().enumerate() {
        let mut accs = Vec::new();
        let mut psnrs = Vec::new();
        let mut ssims = Vec::new();
        let mut f1s = Vec::new();
        let mut aucs = Vec::new();
        let mut capped = false;

        for i in 0..ds.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, TAG_EVAL + ri as u64, i as u64));
            let msg = BitMessage::random(k, &mut rng)?;
            let region_seed: u64 = rng.gen();

            let tape = Tape::new();
            let x = tape.constant(ds.batch(&[i]));
            let z = models.codec.encode(&x)?;
            let clean = models.codec.decode_staged(&z, None);
            let marked = models.embedder.embed(&models.codec, &z, std::slice::from_ref(&msg))?;

            let (p, cap) = psnr(&marked.value(), &clean.value());
            psnrs.push(p);
            capped |= cap;
            ssims.push(ssim(&marked.value(), &clean.value()));

            let donor = ds.batch(&[(i + 1) % ds.len()]);
            let (i_noise, mask_gt) = spec.apply(&marked, &clean.value(), Some(&donor), region_seed)?;
            let (found, mask_probs) = models.extractor.extract(&i_noise)?;
            accs.push(bit_accuracy(found[0].bits(), msg.bits()));

            let scores: Vec<f64> = mask_probs.iter().cloned().collect();
            let truth: Vec<u8> = mask_gt.iter().map(|&v| (v > 0.5) as u8).collect();
            if let Some(f1) = f1_at_half(&scores, &truth) {
                f1s.push(f1);
            }
            if let Some(a) = auc(&scores, &truth) {
                aucs.push(a);
            }
        }

        rows.push(MetricsRow {
            distortion: spec.label(),
            bit_accuracy: mean(&accs),
            psnr_db: mean(&psnrs),
            psnr_capped: capped,
            ssim: mean(&ssims),
            f1: mean_opt(&f1s),
            auc: mean_opt(&aucs),
        });
    }

    let f1_rows: Vec<f64> = rows.iter().filter_map(|r| r.f1).collect();
    let auc_rows: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
    Ok(MetricsReport {
        mean_bit_accuracy: mean(&rows.iter().map(|r| r.bit_accuracy).collect::<Vec<_>>()),
        mean_psnr_db: mean(&rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>()),
        mean_ssim: mean(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>()),
        mean_f1: mean_opt(&f1_rows),
        mean_auc: mean_opt(&auc_rows),
        rows,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per distortion plus a mean row.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.distortion.len())
            .chain(["distortion".len(), "mean".len()])
            .max()
            .unwrap_or(10);
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>7}  {:>7}  {:>7}\n",
            "distortion", "acc", "psnr", "ssim", "f1", "auc"
        ));
        for r in &self.rows {
            let psnr_s = if r.psnr_capped {
                format!("{:.2}*", r.psnr_db)
            } else {
                format!("{:.2}", r.psnr_db)
            };
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8}  {:>7.4}  {:>7}  {:>7}\n",
                r.distortion,
                r.bit_accuracy,
                psnr_s,
                r.ssim,
                fmt_opt(r.f1),
                fmt_opt(r.auc),
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.2}  {:>7.4}  {:>7}  {:>7}\n",
            "mean",
            self.mean_bit_accuracy,
            self.mean_psnr_db,
            self.mean_ssim,
            fmt_opt(self.mean_f1),
            fmt_opt(self.mean_auc),
        ));
        out
    }
}

/// The default evaluation slate: identity plus one fixed setting of each
/// distortion family, in table order. Region kinds take their area range
/// from `cfg`.
pub fn default_distortions(cfg: &crate::config::DistortionConfig) -> Vec<DistortionSpec> {
    vec![
        DistortionSpec::Identity,
        DistortionSpec::RdCropReplace { area_frac: cfg.rd_area_frac },
        DistortionSpec::Splice { area_frac: cfg.rd_area_frac },
        DistortionSpec::GaussianBlur { sigma: 1.0 },
        DistortionSpec::Jpeg { quality: 80 },
        DistortionSpec::Brightness { delta: 0.1 },
        DistortionSpec::Contrast { scale: 1.1 },
    ]
}

/// Parse a comma-separated CLI distortion list against the config ranges.
pub fn parse_distortion_list(
    list: &str,
    cfg: &crate::config::DistortionConfig,
) -> Result<Vec<DistortionSpec>, Error> {
    list.split(',')
        .map(|e| DistortionSpec::parse(e, cfg))
        .collect()
}
