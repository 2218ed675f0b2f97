use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// Working resolution shared by every module; non-square or differently sized
/// inputs are resized here on load.
pub const CANONICAL_SIZE: usize = 32;

pub const CHANNELS: usize = 3;

/// An RGB raster with `f32` channel values in `[0, 1]`, stored channel-major
/// (CHW). The universal sample unit of the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f32>,
    height: usize,
    width: usize,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            data: vec![0.0; CHANNELS * height * width],
            height,
            width,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut img = Image::zeros(height, width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x));
                }
            }
        }
        img
    }

    /// Build from a raw CHW buffer. Length must equal `3 * height * width`.
    pub fn from_chw(data: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::Argument(format!(
                "pixel buffer length {} does not match {}x{}x{}",
                data.len(),
                CHANNELS,
                height,
                width
            )));
        }
        Ok(Image {
            data,
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_canonical(&self) -> bool {
        self.height == CANONICAL_SIZE && self.width == CANONICAL_SIZE
    }

    /// Check the type invariants: every channel value finite and in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Numeric(format!(
                    "pixel {i} out of range: {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear resize (half-pixel-center convention). Returns a copy when the
    /// target size equals the current size, so same-size resizing is exact.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Image::zeros(height, width);
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                for c in 0..CHANNELS {
                    let top = self.get(c, y0, x0) * (1.0 - wx) + self.get(c, y0, x1) * wx;
                    let bot = self.get(c, y1, x0) * (1.0 - wx) + self.get(c, y1, x1) * wx;
                    out.set(c, y, x, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        out
    }

    /// Resize to the canonical 32x32 resolution and clamp to `[0, 1]`.
    /// Idempotent: canonical images come back unchanged.
    pub fn canonicalize(&self) -> Image {
        let mut out = self.resize_bilinear(CANONICAL_SIZE, CANONICAL_SIZE);
        out.clamp01();
        out
    }

    /// Extract a sub-rectangle and resize it back to this image's size.
    pub fn crop_resize(&self, top: usize, left: usize, ch: usize, cw: usize) -> Result<Image> {
        if ch == 0 || cw == 0 || top + ch > self.height || left + cw > self.width {
            return Err(Error::Argument(format!(
                "crop {top},{left} {ch}x{cw} exceeds {}x{}",
                self.height, self.width
            )));
        }
        if top == 0 && left == 0 && ch == self.height && cw == self.width {
            return Ok(self.clone());
        }
        let mut crop = Image::zeros(ch, cw);
        for c in 0..CHANNELS {
            for y in 0..ch {
                for x in 0..cw {
                    crop.set(c, y, x, self.get(c, top + y, left + x));
                }
            }
        }
        Ok(crop.resize_bilinear(self.height, self.width))
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut out = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                for c in 0..CHANNELS {
                    out.set(c, y, x, p[c] as f32 / 255.0);
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = [
                    (self.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                    (self.get(1, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                    (self.get(2, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        out
    }
}

/// Stack images into an NCHW tensor.
pub fn batch_to_tensor(imgs: &[Image], device: &Device) -> Result<Tensor> {
    if imgs.is_empty() {
        return Err(Error::Argument("empty image batch".into()));
    }
    let h = imgs[0].height();
    let w = imgs[0].width();
    let mut buf = Vec::with_capacity(imgs.len() * CHANNELS * h * w);
    for img in imgs {
        if img.height() != h || img.width() != w {
            return Err(Error::Argument("mixed image sizes in batch".into()));
        }
        buf.extend_from_slice(img.as_slice());
    }
    Ok(Tensor::from_vec(buf, (imgs.len(), CHANNELS, h, w), device)?)
}

/// Inverse of [`batch_to_tensor`]; expects an NCHW f32 tensor.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::Argument(format!("expected 3 channels, got {c}")));
    }
    let flat = t.flatten_all()?.to_vec1::<f32>()?;
    let stride = c * h * w;
    (0..n)
        .map(|i| Image::from_chw(flat[i * stride..(i + 1) * stride].to_vec(), h, w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_identity() {
        let img = Image::from_fn(32, 32, |c, y, x| ((c + y * x) % 7) as f32 / 7.0);
        assert_eq!(img.resize_bilinear(32, 32), img);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let img = Image::from_fn(48, 64, |c, y, x| ((c * 31 + y * 7 + x) % 11) as f32 / 11.0);
        let once = img.canonicalize();
        let twice = once.canonicalize();
        assert!(once.is_canonical());
        assert_eq!(once, twice);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Image::from_fn(10, 10, |_, _, _| 0.25);
        let up = img.resize_bilinear(32, 32);
        for &v in up.as_slice() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_full_frame_is_identity() {
        let img = Image::from_fn(32, 32, |c, y, x| ((c + y + x) % 5) as f32 / 5.0);
        assert_eq!(img.crop_resize(0, 0, 32, 32).unwrap(), img);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = Image::from_fn(32, 32, |c, y, x| ((c * 3 + y * 5 + x * 7) % 13) as f32 / 13.0);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn rgb8_round_trip_within_quantization() {
        let img = Image::from_fn(32, 32, |c, y, x| ((c + 2 * y + 3 * x) % 17) as f32 / 17.0);
        let back = Image::from_rgb8(&img.to_rgb8());
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn batch_tensor_round_trip() {
        let imgs: Vec<Image> = (0..3)
            .map(|i| Image::from_fn(32, 32, |c, y, x| ((i + c + y + x) % 9) as f32 / 9.0))
            .collect();
        let t = batch_to_tensor(&imgs, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[3, 3, 32, 32]);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back, imgs);
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut img = Image::zeros(4, 4);
        img.set(0, 0, 0, 1.5);
        assert!(img.validate().is_err());
    }
}
