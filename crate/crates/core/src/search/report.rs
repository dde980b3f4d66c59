//! Per-generation costs of a search run.
//!
//! ```text
//! {"version":1,"generations":[[...],...],"normalized":[[...],...],
//!  "best":{"genes":[...],"cost":...,"generation":n},"wallSeconds":...}
//! ```
//!
//! `normalized` is derived: every cost mapped by `(c - min) / (max - min)`
//! over the whole run, or 0 when all costs are equal.

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::tf::{Chromosome, GENE_COUNT};

const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestRecord {
    pub chromosome: Chromosome,
    pub cost: f64,
    /// Zero-based generation in which the chromosome was first evaluated
    /// at this cost.
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// `generations[g][i]` is the cost of individual `i` in generation `g`.
    pub generations: Vec<Vec<f64>>,
    pub best: BestRecord,
    pub wall_seconds: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BestJson {
    genes: Vec<u8>,
    cost: f64,
    generation: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct ReportJson {
    version: u32,
    generations: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    best: BestJson,
    wall_seconds: f64,
}

impl RunReport {
    pub fn min_cost(&self) -> f64 {
        self.generations.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_cost(&self) -> f64 {
        self.generations.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let (lo, hi) = (self.min_cost(), self.max_cost());
        let range = hi - lo;
        self.generations
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&c| if range > 0.0 { (c - lo) / range } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Lowest cost seen up to and including each generation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.generations
            .iter()
            .map(|g| {
                best = g.iter().copied().fold(best, f64::min);
                best
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let json = ReportJson {
            version: VERSION,
            generations: self.generations.clone(),
            normalized: self.normalized(),
            best: BestJson {
                genes: self.best.chromosome.genes().to_vec(),
                cost: self.best.cost,
                generation: self.best.generation,
            },
            wall_seconds: self.wall_seconds,
        };
        serde_json::to_string(&json).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        let json: ReportJson = serde_json::from_str(text).map_err(|e| SearchError::Report(e.to_string()))?;
        if json.version != VERSION {
            return Err(SearchError::Report(format!("unsupported version {}", json.version)));
        }
        let genes: [u8; GENE_COUNT] = json.best.genes.as_slice().try_into().map_err(|_| {
            SearchError::Report(format!("best chromosome has {} genes", json.best.genes.len()))
        })?;
        let report = RunReport {
            generations: json.generations,
            best: BestRecord {
                chromosome: Chromosome::new(genes),
                cost: json.best.cost,
                generation: json.best.generation,
            },
            wall_seconds: json.wall_seconds,
        };
        if report.normalized() != json.normalized {
            return Err(SearchError::Report("normalized costs disagree with raw costs".into()));
        }
        Ok(report)
    }
}
