//! Grayscale images: renders, targets and network inputs.

use std::path::Path;

use image::{ImageBuffer, Luma};
use thiserror::Error;

/// Side length of the images the similarity network consumes.
pub const NETWORK_SIDE: usize = 64;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// Row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(ImageError::Invalid(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage::new(width, height, vec![value; width * height]).expect("valid fill")
    }

    /// Builds an image from a per-pixel function; values are clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage::new(width, height, pixels).expect("valid pixels")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resample(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = axis_taps(self.width, width);
        let ys = axis_taps(self.height, height);
        let mut pixels = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(self.get(x0, y0) as f64, self.get(x1, y0) as f64, fx);
                let bottom = lerp(self.get(x0, y1) as f64, self.get(x1, y1) as f64, fx);
                pixels.push(lerp(top, bottom, fy).clamp(0.0, 1.0) as f32);
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    /// Resamples to the 64x64 network input size.
    pub fn resample64(&self) -> GrayImage {
        self.resample(NETWORK_SIDE, NETWORK_SIDE)
    }

    /// Loads a PNG, converting colour to luminance `0.299R + 0.587G + 0.114B`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let err = |message: String| ImageError::Io {
            path: path.display().to_string(),
            message,
        };
        let decoded = image::open(path).map_err(|e| err(e.to_string()))?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let pixels = match decoded {
            image::DynamicImage::ImageLuma8(buf) => {
                buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect()
            }
            image::DynamicImage::ImageLumaA8(buf) => {
                buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect()
            }
            image::DynamicImage::ImageLuma16(buf) => {
                buf.pixels().map(|p| p.0[0] as f32 / 65535.0).collect()
            }
            other => other
                .to_rgb8()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                    (y / 255.0).clamp(0.0, 1.0) as f32
                })
                .collect(),
        };
        GrayImage::new(w, h, pixels).map_err(|e| err(e.to_string()))
    }

    /// Writes an 8-bit grayscale PNG, rounding half up.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ImageError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// For each output index: the two source taps and the weight of the second.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_resamples_to_constant() {
        for (w, h) in [(1, 1), (7, 3), (200, 150), (64, 64)] {
            let img = GrayImage::filled(w, h, 0.5).resample64();
            assert_eq!((img.width(), img.height()), (64, 64));
            assert!(img.pixels().iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 31) as f32 / 30.0);
        assert_eq!(img.resample64(), img);
    }

    #[test]
    fn checkerboard_averages_to_half() {
        let img = GrayImage::from_fn(128, 128, |x, y| ((x + y) % 2) as f32);
        let out = img.resample64();
        assert!(out.pixels().iter().all(|&p| (p - 0.5).abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_pixels() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, f32::NAN]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn png_gray_and_rgb_loading() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![255, 0]).unwrap().save(&gray).unwrap();
        let g = GrayImage::load(&gray).unwrap();
        assert_eq!(g.pixels(), &[1.0, 0.0]);

        let rgb = dir.path().join("c.png");
        image::RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap().save(&rgb).unwrap();
        let c = GrayImage::load(&rgb).unwrap();
        assert!((c.pixels()[0] - 0.299).abs() < 1e-6);

        let rgba = dir.path().join("a.png");
        image::RgbaImage::from_raw(1, 1, vec![0, 255, 0, 10]).unwrap().save(&rgba).unwrap();
        assert!((GrayImage::load(&rgba).unwrap().pixels()[0] - 0.587).abs() < 1e-6);
    }

    #[test]
    fn unreadable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = GrayImage::load(&p).unwrap_err();
        assert!(err.to_string().contains("junk.png"));
    }

    proptest! {
        #[test]
        fn save_load_quantization(pixels in prop::collection::vec(0f32..=1.0, 12)) {
            let img = GrayImage::new(4, 3, pixels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("q.png");
            img.save(&p).unwrap();
            let back = GrayImage::load(&p).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
            }
        }

        #[test]
        fn resampling_stays_in_range(w in 1usize..90, h in 1usize..90, seed in any::<u32>()) {
            let img = GrayImage::from_fn(w, h, |x, y| (((x as u32).wrapping_mul(2654435761) ^ (y as u32).wrapping_mul(40503) ^ seed) % 1000) as f32 / 999.0);
            let out = img.resample64();
            prop_assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
