//! Procedural training images: smooth corner gradients, a few
//! low-frequency sinusoids, and flat shapes, all deterministic per
//! (seed, split, index) so runs reproduce without shipping data.
//! A user folder of PNGs can be mixed into the training split.

use latentmark_autograd::Arr;
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::Error;
use crate::imageio;

/// SplitMix64-style spread so nearby (seed, tag, index) triples give
/// unrelated streams.
pub(crate) fn mix(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One `[3, side, side]` image in `[0, 1]`.
pub fn procedural_image(side: usize, seed: u64) -> Arr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;

    // Smooth background: bilinear blend of four random corner colors.
    let corners: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)])
        .collect();
    let mut img = Arr::from_shape_fn(IxDyn(&[3, side, side]), |ix| {
        let (c, y, x) = (ix[0], ix[1] as f64 / (s - 1.0), ix[2] as f64 / (s - 1.0));
        let top = corners[0][c] * (1.0 - x) + corners[1][c] * x;
        let bot = corners[2][c] * (1.0 - x) + corners[3][c] * x;
        top * (1.0 - y) + bot * y
    });

    // Low-frequency texture: two or three oriented sinusoids.
    for _ in 0..rng.gen_range(2..4usize) {
        let fy = rng.gen_range(0.5..3.0) * std::f64::consts::TAU / s;
        let fx = rng.gen_range(0.5..3.0) * std::f64::consts::TAU / s;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let gain: [f64; 3] =
            [rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08)];
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    img[[c, y, x]] += gain[c] * (fy * y as f64 + fx * x as f64 + phase).sin();
                }
            }
        }
    }

    // A few flat shapes: rectangles and discs.
    for _ in 0..rng.gen_range(1..4usize) {
        let color: [f64; 3] =
            [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let cy = rng.gen_range(0.15..0.85) * s;
        let cx = rng.gen_range(0.15..0.85) * s;
        let r = rng.gen_range(0.06..0.22) * s;
        let disc = rng.gen_bool(0.5);
        let blend = rng.gen_range(0.6..1.0);
        for y in 0..side {
            for x in 0..side {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside =
                    if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r };
                if inside {
                    for c in 0..3 {
                        img[[c, y, x]] = (1.0 - blend) * img[[c, y, x]] + blend * color[c];
                    }
                }
            }
        }
    }

    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

const TAG_TRAIN: u64 = 1;
const TAG_HOLDOUT: u64 = 2;

pub struct Dataset {
    images: Vec<Arr>,
    side: usize,
}

impl Dataset {
    /// Training split: `dataset_size` procedural images plus any PNGs
    /// found in `train.data_dir` (sorted by filename for determinism).
    pub fn train(cfg: &Config) -> Result<Dataset, Error> {
        let side = cfg.model.image_size;
        let mut images: Vec<Arr> = (0..cfg.train.dataset_size as u64)
            .map(|i| procedural_image(side, mix(cfg.train.seed, TAG_TRAIN, i)))
            .collect();
        if let Some(dir) = &cfg.train.data_dir {
            let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
                .collect();
            paths.sort();
            for p in &paths {
                images.push(imageio::load_image_png_resized(p, side)?);
            }
        }
        if images.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        Ok(Dataset { images, side })
    }

    /// Held-out split from a disjoint seed stream; never mixes user data
    /// so evaluation stays self-contained.
    pub fn holdout(cfg: &Config) -> Dataset {
        let side = cfg.model.image_size;
        let images = (0..cfg.train.holdout_size as u64)
            .map(|i| procedural_image(side, mix(cfg.train.seed, TAG_HOLDOUT, i)))
            .collect();
        Dataset { images, side }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn image(&self, i: usize) -> &Arr {
        &self.images[i % self.images.len()]
    }

    /// Stack images into a `[B, 3, side, side]` batch.
    pub fn batch(&self, indices: &[usize]) -> Arr {
        assert!(!indices.is_empty(), "empty batch");
        let mut out = Arr::zeros(IxDyn(&[indices.len(), 3, self.side, self.side]));
        for (bi, &i) in indices.iter().enumerate() {
            let img = self.image(i);
            for c in 0..3 {
                for y in 0..self.side {
                    for x in 0..self.side {
                        out[[bi, c, y, x]] = img[[c, y, x]];
                    }
                }
            }
        }
        out
    }
}
