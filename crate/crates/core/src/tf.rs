//! Opacity transfer functions.
//!
//! The searchable form is a [`Chromosome`]: 16 opacity genes, one per
//! equal-width range of the data domain. Rendering uses the expanded
//! 256-entry list form, a [`TransferFunction`], after smoothing.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::BIN_COUNT;

/// Coarse ranges on the data axis.
pub const GENE_COUNT: usize = 16;

/// Bins covered by one gene.
pub const RANGE_WIDTH: usize = BIN_COUNT / GENE_COUNT;

/// Opacity levels the seeded population starts from.
pub const DEFAULT_LEVELS: [u8; 5] = [0, 1, 16, 64, 128];

const JSON_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TfError {
    #[error("malformed JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported version {0}, expected 1")]
    Version(u32),
    #[error("expected {expected} values, found {actual}")]
    Length { expected: usize, actual: usize },
    #[error("value {value} at index {index} is outside 0..=255")]
    Range { index: usize, value: i64 },
    #[error("invalid seed configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chromosome {
    genes: [u8; GENE_COUNT],
}

impl Chromosome {
    pub const fn new(genes: [u8; GENE_COUNT]) -> Self {
        Chromosome { genes }
    }

    pub fn zeros() -> Self {
        Chromosome::new([0; GENE_COUNT])
    }

    pub fn genes(&self) -> &[u8; GENE_COUNT] {
        &self.genes
    }

    pub fn genes_mut(&mut self) -> &mut [u8; GENE_COUNT] {
        &mut self.genes
    }

    /// A step function that is `level` on `[start, start + width)` and zero
    /// elsewhere.
    pub fn window(start: usize, width: usize, level: u8) -> Self {
        assert!(width >= 1 && start + width <= GENE_COUNT, "window out of range");
        let mut genes = [0; GENE_COUNT];
        genes[start..start + width].fill(level);
        Chromosome::new(genes)
    }

    /// Every gene drawn uniformly from `0..=255`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut genes = [0; GENE_COUNT];
        for g in &mut genes {
            *g = rng.random();
        }
        Chromosome::new(genes)
    }

    /// Repeats each gene over its range of 16 bins. No smoothing.
    pub fn expand(&self) -> TransferFunction {
        let mut opacity = [0u8; BIN_COUNT];
        for (j, o) in opacity.iter_mut().enumerate() {
            *o = self.genes[j / RANGE_WIDTH];
        }
        TransferFunction { opacity }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GenesDoc {
            version: JSON_VERSION,
            genes: self.genes.iter().map(|&g| g as i64).collect(),
        })
        .expect("serializing integers cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TfError> {
        let doc: GenesDoc = serde_json::from_str(text)?;
        check_version(doc.version)?;
        Ok(Chromosome::new(checked_values(&doc.genes)?))
    }
}

/// 256 opacity values in `0..=255`, one per data bin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransferFunction {
    opacity: [u8; BIN_COUNT],
}

impl TransferFunction {
    pub fn new(opacity: [u8; BIN_COUNT]) -> Self {
        TransferFunction { opacity }
    }

    pub fn zeros() -> Self {
        TransferFunction::new([0; BIN_COUNT])
    }

    pub fn constant(value: u8) -> Self {
        TransferFunction::new([value; BIN_COUNT])
    }

    pub fn opacity(&self) -> &[u8; BIN_COUNT] {
        &self.opacity
    }

    pub fn opacity_mut(&mut self) -> &mut [u8; BIN_COUNT] {
        &mut self.opacity
    }

    /// Applies the `0.2, 0.6, 0.2` smoothing kernel with replicated edges,
    /// rounding half up.
    pub fn smooth(&self) -> TransferFunction {
        let raw = self.smooth_real();
        let mut opacity = [0u8; BIN_COUNT];
        for (o, r) in opacity.iter_mut().zip(raw) {
            *o = (r + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        TransferFunction { opacity }
    }

    /// The smoothed values before rounding.
    pub fn smooth_real(&self) -> [f64; BIN_COUNT] {
        let v = |i: isize| self.opacity[i.clamp(0, BIN_COUNT as isize - 1) as usize] as f64;
        let mut out = [0.0; BIN_COUNT];
        for (i, o) in out.iter_mut().enumerate() {
            let i = i as isize;
            // Integer numerators keep the weights exact: 0.2a + 0.6b + 0.2c.
            *o = (2.0 * v(i - 1) + 6.0 * v(i) + 2.0 * v(i + 1)) / 10.0;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&OpacityDoc {
            version: JSON_VERSION,
            opacity: self.opacity.iter().map(|&g| g as i64).collect(),
        })
        .expect("serializing integers cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TfError> {
        let doc: OpacityDoc = serde_json::from_str(text)?;
        check_version(doc.version)?;
        Ok(TransferFunction::new(checked_values(&doc.opacity)?))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpacityDoc {
    version: u32,
    opacity: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenesDoc {
    version: u32,
    genes: Vec<i64>,
}

fn check_version(v: u32) -> Result<(), TfError> {
    if v == JSON_VERSION {
        Ok(())
    } else {
        Err(TfError::Version(v))
    }
}

fn checked_values<const N: usize>(values: &[i64]) -> Result<[u8; N], TfError> {
    if values.len() != N {
        return Err(TfError::Length {
            expected: N,
            actual: values.len(),
        });
    }
    let mut out = [0u8; N];
    for (index, (o, &value)) in out.iter_mut().zip(values).enumerate() {
        *o = u8::try_from(value).map_err(|_| TfError::Range { index, value })?;
    }
    Ok(out)
}

/// Parameters for building the initial population from sliding windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedConfig {
    pub levels: BTreeSet<u8>,
    pub n_ranges: usize,
    pub pop_size: usize,
}

impl SeedConfig {
    pub fn new(pop_size: usize) -> Self {
        SeedConfig {
            levels: DEFAULT_LEVELS.into_iter().collect(),
            n_ranges: GENE_COUNT,
            pop_size,
        }
    }

    pub fn validate(&self) -> Result<(), TfError> {
        if self.levels.is_empty() {
            return Err(TfError::Config("opacity level set is empty".into()));
        }
        if self.pop_size == 0 {
            return Err(TfError::Config("population size must be at least 1".into()));
        }
        if self.n_ranges == 0 || BIN_COUNT % self.n_ranges != 0 {
            return Err(TfError::Config(format!(
                "{} ranges do not divide {BIN_COUNT} bins",
                self.n_ranges
            )));
        }
        if self.n_ranges != GENE_COUNT {
            return Err(TfError::Config(format!(
                "chromosomes have {GENE_COUNT} genes, cannot seed {} ranges",
                self.n_ranges
            )));
        }
        Ok(())
    }

    /// All `(start, width, level)` windows, in a fixed order.
    pub fn candidates(&self) -> Result<Vec<Chromosome>, TfError> {
        self.validate()?;
        let mut out = Vec::new();
        for start in 0..self.n_ranges {
            for width in 1..=self.n_ranges - start {
                for &level in &self.levels {
                    out.push(Chromosome::window(start, width, level));
                }
            }
        }
        Ok(out)
    }
}

/// Draws `cfg.pop_size` windows uniformly, with replacement, from the full
/// candidate set.
pub fn seed_population<R: Rng + ?Sized>(
    cfg: &SeedConfig,
    rng: &mut R,
) -> Result<Vec<Chromosome>, TfError> {
    let candidates = cfg.candidates()?;
    Ok((0..cfg.pop_size)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect())
}

/// A population of uniformly random chromosomes, the unseeded baseline.
pub fn random_population<R: Rng + ?Sized>(pop_size: usize, rng: &mut R) -> Vec<Chromosome> {
    (0..pop_size).map(|_| Chromosome::random(rng)).collect()
}
