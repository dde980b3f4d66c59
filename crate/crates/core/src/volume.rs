//! Scalar volumes, the `.vol` container and quantization onto the 256
//! transfer-function bins.
//!
//! A `.vol` file is two ASCII header lines followed by raw samples:
//!
//! ```text
//! TFQVOL1\n
//! <nx> <ny> <nz>\n
//! <nx*ny*nz little-endian f32, x fastest, then y, then z>
//! ```
//!
//! Nothing may follow the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Number of domain intervals a transfer function is defined over.
pub const BIN_COUNT: usize = 256;

const MAGIC: &str = "TFQVOL1";

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad volume header: {0}")]
    Header(String),
    #[error("volume payload is {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f32 },
}

/// A 3D scalar field stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    nx: usize,
    ny: usize,
    nz: usize,
    samples: Vec<f32>,
    vmin: f32,
    vmax: f32,
}

impl Volume {
    pub fn new(nx: usize, ny: usize, nz: usize, samples: Vec<f32>) -> Result<Self, VolumeError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::Header(format!(
                "dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        let expected = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| VolumeError::Header(format!("{nx}x{ny}x{nz} overflows")))?;
        if samples.len() != expected {
            return Err(VolumeError::Length {
                expected: expected * 4,
                actual: samples.len() * 4,
            });
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index, value });
        }
        let (vmin, vmax) = samples
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(Volume {
            nx,
            ny,
            nz,
            samples,
            vmin,
            vmax,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn vmin(&self) -> f32 {
        self.vmin
    }

    pub fn vmax(&self) -> f32 {
        self.vmax
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.samples[self.index(x, y, z)]
    }

    /// Quantizes every sample onto `[0, 255]`.
    ///
    /// `bin = floor((s - vmin) / (vmax - vmin) * 256)`, clamped so that the
    /// maximum lands in bin 255. A constant volume maps entirely to bin 0.
    pub fn bin(&self) -> BinnedVolume {
        let lo = self.vmin as f64;
        let range = self.vmax as f64 - lo;
        let bins = if range > 0.0 {
            let scale = BIN_COUNT as f64 / range;
            self.samples
                .iter()
                .map(|&s| {
                    let b = ((s as f64 - lo) * scale).floor();
                    b.clamp(0.0, (BIN_COUNT - 1) as f64) as u8
                })
                .collect()
        } else {
            vec![0; self.samples.len()]
        };
        BinnedVolume {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            bins,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!("{MAGIC}\n{} {} {}\n", self.nx, self.ny, self.nz);
        let mut out = Vec::with_capacity(header.len() + self.samples.len() * 4);
        out.extend_from_slice(header.as_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VolumeError> {
        let (magic, rest) = split_line(bytes)
            .ok_or_else(|| VolumeError::Header("missing magic line".into()))?;
        if magic != MAGIC.as_bytes() {
            return Err(VolumeError::Header(format!(
                "expected magic {MAGIC:?}, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let (dims_line, payload) = split_line(rest)
            .ok_or_else(|| VolumeError::Header("missing dimensions line".into()))?;
        let dims_text = std::str::from_utf8(dims_line)
            .map_err(|_| VolumeError::Header("dimensions line is not ASCII".into()))?;
        let dims = parse_dims(dims_text)?;
        let count = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| VolumeError::Header(format!("{dims_text:?} overflows")))?;
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| VolumeError::Header(format!("{dims_text:?} overflows")))?;
        if payload.len() != expected {
            return Err(VolumeError::Length {
                expected,
                actual: payload.len(),
            });
        }
        let samples = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Volume::new(dims[0], dims[1], dims[2], samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VolumeError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| VolumeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Volume::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VolumeError> {
        let path = path.as_ref();
        let io = |source| VolumeError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

fn parse_dims(line: &str) -> Result<[usize; 3], VolumeError> {
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() != 3 {
        return Err(VolumeError::Header(format!(
            "expected `nx ny nz`, found {line:?}"
        )));
    }
    let mut dims = [0usize; 3];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(VolumeError::Header(format!("bad dimension {part:?}")));
        }
        *slot = part
            .parse()
            .map_err(|_| VolumeError::Header(format!("bad dimension {part:?}")))?;
        if *slot == 0 {
            return Err(VolumeError::Header("dimensions must be positive".into()));
        }
    }
    Ok(dims)
}

/// A volume whose samples have been quantized to transfer-function bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedVolume {
    nx: usize,
    ny: usize,
    nz: usize,
    bins: Vec<u8>,
}

impl BinnedVolume {
    /// Builds a binned volume directly, mostly useful for renderer tests.
    ///
    /// Panics if `bins.len() != nx * ny * nz`.
    pub fn from_bins(nx: usize, ny: usize, nz: usize, bins: Vec<u8>) -> Self {
        assert!(nx > 0 && ny > 0 && nz > 0, "dimensions must be positive");
        assert_eq!(bins.len(), nx * ny * nz, "bin count does not match dims");
        BinnedVolume { nx, ny, nz, bins }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn bins(&self) -> &[u8] {
        &self.bins
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.bins[x + self.nx * (y + self.ny * z)]
    }
}
