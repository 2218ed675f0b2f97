use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::image::{Image, CHANNELS};
use crate::rng;

/// Stochastic view pipeline: random resized crop, horizontal flip, color
/// distortion, random grayscale — applied in that order. Strengths follow the
/// common contrastive-pretraining defaults and are fully config-exposed.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    /// Crop area fraction range, sampled uniformly.
    pub crop_scale: (f32, f32),
    /// Crop aspect ratio range.
    pub crop_ratio: (f32, f32),
    pub flip_prob: f32,
    /// Probability of applying the color-jitter block.
    pub jitter_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub grayscale_prob: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale: (0.6, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            flip_prob: 0.5,
            jitter_prob: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    /// All probabilities zero and the crop fixed to the full frame; `augment`
    /// becomes the identity map bit-for-bit.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            grayscale_prob: 0.0,
        }
    }
}

pub fn augment(img: &Image, cfg: &AugmentConfig, seed: u64) -> Result<Image> {
    let mut rng = rng::rng_from(seed);
    let mut out = random_resized_crop(img, cfg, &mut rng)?;

    if cfg.flip_prob > 0.0 && rng.random_range(0.0f32..1.0) < cfg.flip_prob {
        out = out.flip_horizontal();
    }

    if cfg.jitter_prob > 0.0 && rng.random_range(0.0f32..1.0) < cfg.jitter_prob {
        // sub-operations in random order, as is conventional for this jitter
        let mut ops = [0usize, 1, 2, 3];
        ops.shuffle(&mut rng);
        for op in ops {
            match op {
                0 => {
                    let f = 1.0 + rng.random_range(-cfg.brightness..=cfg.brightness);
                    scale_pixels(&mut out, f);
                }
                1 => {
                    let f = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast);
                    adjust_contrast(&mut out, f);
                }
                2 => {
                    let f = 1.0 + rng.random_range(-cfg.saturation..=cfg.saturation);
                    adjust_saturation(&mut out, f);
                }
                _ => {
                    let d = rng.random_range(-cfg.hue..=cfg.hue);
                    rotate_hue(&mut out, d);
                }
            }
        }
    }

    if cfg.grayscale_prob > 0.0 && rng.random_range(0.0f32..1.0) < cfg.grayscale_prob {
        to_grayscale(&mut out);
    }

    out.clamp01();
    Ok(out)
}

fn random_resized_crop(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let area = (h * w) as f32;
    // retry loop as in standard implementations; fall back to full frame
    for _ in 0..10 {
        let scale = if cfg.crop_scale.0 >= cfg.crop_scale.1 {
            cfg.crop_scale.0
        } else {
            rng.random_range(cfg.crop_scale.0..=cfg.crop_scale.1)
        };
        let ratio = if cfg.crop_ratio.0 >= cfg.crop_ratio.1 {
            cfg.crop_ratio.0
        } else {
            rng.random_range(cfg.crop_ratio.0..=cfg.crop_ratio.1)
        };
        let target = area * scale;
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = if ch == h { 0 } else { rng.random_range(0..=h - ch) };
            let left = if cw == w { 0 } else { rng.random_range(0..=w - cw) };
            return img.crop_resize(top, left, ch, cw);
        }
    }
    Ok(img.clone())
}

fn scale_pixels(img: &mut Image, factor: f32) {
    for v in img.as_mut_slice() {
        *v *= factor;
    }
}

fn adjust_contrast(img: &mut Image, factor: f32) {
    let mean = luminance_mean(img);
    for v in img.as_mut_slice() {
        *v = mean + factor * (*v - mean);
    }
}

fn adjust_saturation(img: &mut Image, factor: f32) {
    let (h, w) = (img.height(), img.width());
    for y in 0..h {
        for x in 0..w {
            let gray = luminance(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
            for c in 0..CHANNELS {
                let v = img.get(c, y, x);
                img.set(c, y, x, gray + factor * (v - gray));
            }
        }
    }
}

/// Hue shift as a rotation of the chroma plane in YIQ space; `delta` in
/// fractional turns (0.1 = 36 degrees).
fn rotate_hue(img: &mut Image, delta: f32) {
    let angle = delta * 2.0 * std::f32::consts::PI;
    let (cs, sn) = (angle.cos(), angle.sin());
    let (h, w) = (img.height(), img.width());
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
            let yy = 0.299 * r + 0.587 * g + 0.114 * b;
            let i = 0.596 * r - 0.274 * g - 0.322 * b;
            let q = 0.211 * r - 0.523 * g + 0.312 * b;
            let i2 = cs * i - sn * q;
            let q2 = sn * i + cs * q;
            img.set(0, y, x, yy + 0.956 * i2 + 0.621 * q2);
            img.set(1, y, x, yy - 0.272 * i2 - 0.647 * q2);
            img.set(2, y, x, yy - 1.106 * i2 + 1.703 * q2);
        }
    }
}

fn to_grayscale(img: &mut Image) {
    let (h, w) = (img.height(), img.width());
    for y in 0..h {
        for x in 0..w {
            let gray = luminance(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
            for c in 0..CHANNELS {
                img.set(c, y, x, gray);
            }
        }
    }
}

#[inline]
fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn luminance_mean(img: &Image) -> f32 {
    let (h, w) = (img.height(), img.width());
    let mut acc = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            acc += luminance(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)) as f64;
        }
    }
    (acc / (h * w) as f64) as f32
}
