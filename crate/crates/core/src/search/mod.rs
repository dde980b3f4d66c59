//! The genetic optimizer: seeded initialization, ternary tournaments,
//! two-point crossover, mutation and parallel evaluation.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::nn::NnError;
use crate::raycast::RenderSettings;
use crate::tf::{Chromosome, TfError, DEFAULT_LEVELS};

pub mod operators;
pub mod pool;
pub mod report;
pub mod run;

pub use operators::{crossover_at, mutate, mutate_genes, tournament_select, two_point_crossover, RandomSource};
pub use pool::{evaluate_population, EvalContext, Pool};
pub use report::{BestRecord, RunReport};
pub use run::{next_generation, run_search, SearchOutcome};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("invalid population state: {0}")]
    State(String),
    #[error("evaluating individual {index}: {source}")]
    Evaluation {
        index: usize,
        #[source]
        source: NnError,
    },
    #[error("evaluating individual {index}: {message}")]
    Worker { index: usize, message: String },
    #[error(transparent)]
    Seed(#[from] TfError),
    #[error("malformed run report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Sliding-window chromosomes at a few opacity levels.
    Seeded,
    /// Uniformly random genes.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub generations: usize,
    pub pop_size: usize,
    pub p_crossover: f64,
    pub p_mutate_individual: f64,
    pub p_mutate_gene: f64,
    pub tournament_size: usize,
    pub workers: usize,
    pub seed: u64,
    pub init: Init,
    /// Opacity levels of the seeded windows.
    pub levels: BTreeSet<u8>,
    pub render: RenderSettings,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            generations: 20,
            pop_size: 600,
            p_crossover: 0.8,
            p_mutate_individual: 0.3,
            p_mutate_gene: 0.05,
            tournament_size: 3,
            workers: 1,
            seed: 0,
            init: Init::Seeded,
            levels: DEFAULT_LEVELS.into_iter().collect(),
            render: RenderSettings::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let err = |m: String| Err(SearchError::Config(m));
        for (name, p) in [
            ("crossover", self.p_crossover),
            ("individual mutation", self.p_mutate_individual),
            ("gene mutation", self.p_mutate_gene),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.generations == 0 {
            return err("at least one generation is required".into());
        }
        if self.tournament_size == 0 {
            return err("tournament size must be at least 1".into());
        }
        if self.pop_size < self.tournament_size {
            return err(format!(
                "population {} is smaller than the tournament size {}",
                self.pop_size, self.tournament_size
            ));
        }
        if self.workers == 0 {
            return err("at least one worker is required".into());
        }
        if self.init == Init::Seeded && self.levels.is_empty() {
            return err("seeded initialization needs at least one opacity level".into());
        }
        Ok(())
    }
}

/// A chromosome and its cost, once evaluated. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Individual {
    pub chromosome: Chromosome,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn new(chromosome: Chromosome) -> Self {
        Individual {
            chromosome,
            fitness: None,
        }
    }

    pub fn evaluated(chromosome: Chromosome, cost: f64) -> Self {
        Individual {
            chromosome,
            fitness: Some(cost),
        }
    }
}
