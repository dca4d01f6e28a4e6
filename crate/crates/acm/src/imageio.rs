//! PNG input and output: images, ROI masks, density heat maps, attention overlays.

use std::path::Path;

use acm_core::{AttentionPlan, RoiMask, Tensor};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Loads an image as `[1, channels, H, W]` scaled to `[0, 1]`. `channels` is 1 (luma) or 3 (RGB).
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(image_err(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0; channels * plane];
    match channels {
        1 => {
            for (i, p) in img.to_luma8().pixels().enumerate() {
                data[i] = p.0[0] as f64 / 255.0;
            }
        }
        3 => {
            for (i, p) in img.to_rgb8().pixels().enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = p.0[c] as f64 / 255.0;
                }
            }
        }
        n => return Err(Error::format(path, format!("cannot load an image with {n} channels (1 or 3)"))),
    }
    Ok(Tensor::new(&[1, channels, h, w], data)?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[1, C, H, W]` tensor with values in `[0, 1]` (C = 1 or 3).
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 4 || s[0] != 1 || !(s[1] == 1 || s[1] == 3) {
        return Err(Error::format(path, format!("cannot save tensor of shape {s:?} as an image")));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    ensure_parent(path)?;
    let d = image.data();
    if c == 1 {
        GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])]))
            .save(path)
            .map_err(image_err(path))
    } else {
        let plane = h * w;
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])])
        })
        .save(path)
        .map_err(image_err(path))
    }
}

/// Grayscale mask, pixels `>= 128` are inside.
pub fn load_roi(path: &Path) -> Result<RoiMask> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let w = img.width() as usize;
    Ok(RoiMask::from_fn(img.height() as usize, w, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] >= 128
    }))
}

pub fn save_roi(path: &Path, roi: &RoiMask) -> Result<()> {
    let w = roi.width();
    ensure_parent(path)?;
    GrayImage::from_fn(w as u32, roi.height() as u32, |x, y| {
        Luma([if roi.values()[y as usize * w + x as usize] != 0.0 { 255 } else { 0 }])
    })
    .save(path)
    .map_err(image_err(path))
}

// dark blue -> cyan -> yellow -> red
const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.3],
    [0.0, 0.4, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut out = [0; 3];
    for c in 0..3 {
        out[c] = to_u8(RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f);
    }
    out
}

/// Heat map of a density map, normalized to its own maximum.
pub fn save_density_png(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = map
        .spatial()
        .ok_or_else(|| Error::format(path, "density map needs two dimensions"))?;
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    ensure_parent(path)?;
    let d = map.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Rgb(colormap(d[y as usize * w + x as usize] * scale))
    });
    img.save(path).map_err(image_err(path))
}

/// The image with everything outside the attention regions dimmed and each
/// region outlined in red.
pub fn save_attention_overlay(path: &Path, image: &Tensor, plan: &AttentionPlan) -> Result<()> {
    let s = image.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let plane = h * w;
    let d = image.data();
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let dim = if plan.union_mask[i] != 0.0 { 1.0 } else { 0.35 };
        let ch = |k: usize| to_u8(d[(k.min(c - 1)) * plane + i] * dim);
        Rgb([ch(0), ch(1), ch(2)])
    });
    for r in &plan.regions {
        let (top, left) = (r.top as u32, r.left as u32);
        let (bottom, right) = ((r.top + r.height - 1) as u32, (r.left + r.width - 1) as u32);
        for x in left..=right {
            img.put_pixel(x, top, Rgb([255, 0, 0]));
            img.put_pixel(x, bottom, Rgb([255, 0, 0]));
        }
        for y in top..=bottom {
            img.put_pixel(left, y, Rgb([255, 0, 0]));
            img.put_pixel(right, y, Rgb([255, 0, 0]));
        }
    }
    ensure_parent(path)?;
    img.save(path).map_err(image_err(path))
}
