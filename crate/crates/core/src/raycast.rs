//! Orthographic top-down ray casting with front-to-back compositing.
//!
//! One ray per output pixel travels along -z, from the top slice
//! (`z = nz - 1`) to the bottom. Each voxel contributes opacity
//! `a = scale * tf[bin] / 255` and emission `e = bin / 255`:
//!
//! ```text
//! L <- L + (1 - A) * a * e
//! A <- A + (1 - A) * a
//! ```
//!
//! Rays stop once `A >= 0.999`; the final pixel is `L + (1 - A) * background`.

use thiserror::Error;

use crate::gray::GrayImage;
use crate::tf::TransferFunction;
use crate::volume::BinnedVolume;

/// Accumulated opacity at which a ray is considered saturated.
pub const EARLY_TERMINATION: f64 = 0.999;

#[derive(Debug, Error)]
#[error("invalid render settings: {0}")]
pub struct SettingsError(String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    width: usize,
    height: usize,
    background: f64,
    opacity_scale: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            width: 256,
            height: 256,
            background: 0.0,
            opacity_scale: 1.0,
        }
    }
}

impl RenderSettings {
    pub fn new(
        width: usize,
        height: usize,
        background: f64,
        opacity_scale: f64,
    ) -> Result<Self, SettingsError> {
        if width == 0 || height == 0 {
            return Err(SettingsError(format!("output size {width}x{height}")));
        }
        if !(0.0..=1.0).contains(&background) {
            return Err(SettingsError(format!("background {background} outside [0, 1]")));
        }
        if !(opacity_scale.is_finite() && opacity_scale > 0.0) {
            return Err(SettingsError(format!("opacity scale {opacity_scale}")));
        }
        Ok(RenderSettings {
            width,
            height,
            background,
            opacity_scale,
        })
    }

    pub fn with_size(width: usize, height: usize) -> Result<Self, SettingsError> {
        RenderSettings::new(width, height, 0.0, 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn opacity_scale(&self) -> f64 {
        self.opacity_scale
    }
}

/// Renders `volume` with an already-smoothed transfer function.
pub fn render(volume: &BinnedVolume, tf: &TransferFunction, settings: &RenderSettings) -> GrayImage {
    let (nx, ny, nz) = volume.dims();
    let slice = nx * ny;
    let bins = volume.bins();

    // Per-bin lookups: opacity and premultiplied emission.
    let mut alpha = [0.0f64; 256];
    let mut emit = [0.0f64; 256];
    for b in 0..256 {
        alpha[b] = (settings.opacity_scale * tf.opacity()[b] as f64 / 255.0).clamp(0.0, 1.0);
        emit[b] = alpha[b] * (b as f64 / 255.0);
    }

    let xs: Vec<usize> = (0..settings.width).map(|p| nearest(p, settings.width, nx)).collect();
    let mut pixels = Vec::with_capacity(settings.width * settings.height);
    for py in 0..settings.height {
        let vy = nearest(py, settings.height, ny);
        for &vx in &xs {
            let column = vx + nx * vy;
            let mut light = 0.0f64;
            let mut acc = 0.0f64;
            for z in (0..nz).rev() {
                let b = bins[column + slice * z] as usize;
                let t = 1.0 - acc;
                light += t * emit[b];
                acc += t * alpha[b];
                if acc >= EARLY_TERMINATION {
                    break;
                }
            }
            let value = light + (1.0 - acc) * settings.background;
            pixels.push(value.clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage::new(settings.width, settings.height, pixels).expect("composited values in range")
}

/// Nearest voxel index for output pixel `p` when `out` pixels span `n` voxels.
fn nearest(p: usize, out: usize, n: usize) -> usize {
    (((p as f64 + 0.5) * n as f64 / out as f64).floor() as usize).min(n - 1)
}
