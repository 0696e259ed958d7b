//! PNG input/output. Images travel as `[3, H, W]` arrays in `[0, 1]`;
//! masks as `[H, W]` grayscale with 255 meaning tampered.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use latentmark_autograd::Arr;
use ndarray::IxDyn;

use crate::error::Error;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Accept `[3, H, W]` or a singleton batch `[1, 3, H, W]`.
fn chw_view(img: &Arr) -> Result<(usize, usize, Vec<usize>), Error> {
    let s = img.shape();
    match s {
        [3, h, w] => Ok((*h, *w, vec![])),
        [1, 3, h, w] => Ok((*h, *w, vec![0])),
        _ => Err(Error::Shape(format!("expected [3,H,W] or [1,3,H,W] image, got {s:?}"))),
    }
}

pub fn save_image_png(path: &Path, img: &Arr) -> Result<(), Error> {
    let (h, w, lead) = chw_view(img)?;
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| -> f64 {
                if lead.is_empty() {
                    img[[c, y, x]]
                } else {
                    img[[0, c, y, x]]
                }
            };
            out.put_pixel(x as u32, y as u32, image::Rgb([to_u8(px(0)), to_u8(px(1)), to_u8(px(2))]));
        }
    }
    out.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_image_png(path: &Path) -> Result<Arr, Error> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(rgb_to_arr(&img))
}

/// Load and resample to `side` x `side` (triangle filter) for datasets
/// with mixed source sizes.
pub fn load_image_png_resized(path: &Path, side: usize) -> Result<Arr, Error> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    if img.width() as usize == side && img.height() as usize == side {
        return Ok(rgb_to_arr(&img));
    }
    let resized = image::imageops::resize(&img, side as u32, side as u32, FilterType::Triangle);
    Ok(rgb_to_arr(&resized))
}

/// `load_image_png_resized` shaped as a singleton batch `[1, 3, side, side]`.
pub fn load_image_batch(path: &Path, side: usize) -> Result<Arr, Error> {
    let img = load_image_png_resized(path, side)?;
    Ok(img
        .into_shape_with_order(IxDyn(&[1, 3, side, side]))
        .expect("[3,S,S] reshapes to [1,3,S,S]"))
}

fn rgb_to_arr(img: &RgbImage) -> Arr {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Arr::from_shape_fn(IxDyn(&[3, h, w]), |ix| {
        img.get_pixel(ix[2] as u32, ix[1] as u32).0[ix[0]] as f64 / 255.0
    })
}

/// Mask values in `[0, 1]` map linearly onto 8-bit gray; a binary mask
/// lands on exactly {0, 255}. Accepts `[H, W]`, `[1, H, W]`, or
/// `[1, 1, H, W]`.
pub fn save_mask_png(path: &Path, mask: &Arr) -> Result<(), Error> {
    let s = mask.shape().to_vec();
    let (h, w) = match s.as_slice() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        [1, 1, h, w] => (*h, *w),
        _ => return Err(Error::Shape(format!("expected a single-channel mask, got {s:?}"))),
    };
    let flat: Vec<f64> = mask.iter().cloned().collect();
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x as u32, y as u32, image::Luma([to_u8(flat[y * w + x])]));
        }
    }
    out.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_mask_png(path: &Path) -> Result<Arr, Error> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Arr::from_shape_fn(IxDyn(&[h, w]), |ix| {
        img.get_pixel(ix[1] as u32, ix[0] as u32).0[0] as f64 / 255.0
    }))
}
