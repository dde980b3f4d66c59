//! The generational loop.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::operators::{mutate, tournament_select, two_point_crossover, RandomSource};
use super::pool::{EvalContext, Pool};
use super::report::{BestRecord, RunReport};
use super::{Individual, Init, SearchConfig, SearchError};
use crate::gray::GrayImage;
use crate::nn::Metric;
use crate::tf::{random_population, seed_population, Chromosome, SeedConfig, TransferFunction};
use crate::volume::BinnedVolume;

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Chromosome,
    /// The smoothed transfer function the best chromosome was rendered with.
    pub transfer_function: TransferFunction,
    pub report: RunReport,
}

/// Selection, pairwise crossover of consecutive offspring, then mutation.
pub fn next_generation<R: RandomSource + ?Sized>(
    pop: &[Individual],
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<Vec<Chromosome>, SearchError> {
    let mut offspring = Vec::with_capacity(pop.len());
    for _ in 0..pop.len() {
        offspring.push(pop[tournament_select(pop, cfg.tournament_size, rng)?].chromosome);
    }
    for pair in offspring.chunks_exact_mut(2) {
        let (a, b) = two_point_crossover(&pair[0], &pair[1], cfg.p_crossover, rng);
        pair[0] = a;
        pair[1] = b;
    }
    for c in &mut offspring {
        *c = mutate(c, cfg.p_mutate_individual, cfg.p_mutate_gene, rng);
    }
    Ok(offspring)
}

fn initial_population(cfg: &SearchConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Chromosome>, SearchError> {
    Ok(match cfg.init {
        Init::Seeded => {
            let seed_cfg = SeedConfig {
                levels: cfg.levels.clone(),
                ..SeedConfig::new(cfg.pop_size)
            };
            seed_population(&seed_cfg, rng)?
        }
        Init::Random => random_population(cfg.pop_size, rng),
    })
}

/// Evolves transfer functions whose renders of `volume` approach `target`
/// under `metric`. The best individual over all generations is returned.
pub fn run_search(
    volume: &BinnedVolume,
    target: &GrayImage,
    metric: &dyn Metric,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    cfg.validate()?;
    let started = Instant::now();
    let target = target.resample64();
    let ctx = EvalContext::new(volume, &target, metric, cfg.render)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop = initial_population(cfg, &mut rng)?;

    let (generations, best) = Pool::scoped(&ctx, cfg.workers, |pool| {
        let mut generations = Vec::with_capacity(cfg.generations);
        let mut best: Option<BestRecord> = None;
        for g in 0..cfg.generations {
            let costs = pool.evaluate(&pop)?;
            for (c, &cost) in pop.iter().zip(&costs) {
                if best.is_none_or(|b| cost < b.cost) {
                    best = Some(BestRecord {
                        chromosome: *c,
                        cost,
                        generation: g,
                    });
                }
            }
            let b = best.expect("population is non-empty");
            log::info!(
                "generation {}/{}: min {:.6}, best so far {:.6}",
                g + 1,
                cfg.generations,
                costs.iter().copied().fold(f64::INFINITY, f64::min),
                b.cost
            );
            if g + 1 < cfg.generations {
                let evaluated: Vec<Individual> = pop
                    .iter()
                    .zip(&costs)
                    .map(|(&c, &cost)| Individual::evaluated(c, cost))
                    .collect();
                pop = next_generation(&evaluated, cfg, &mut rng)?;
            }
            generations.push(costs);
        }
        Ok::<_, SearchError>((generations, best.expect("at least one generation")))
    })?;

    let report = RunReport {
        generations,
        best,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(SearchOutcome {
        best: best.chromosome,
        transfer_function: best.chromosome.expand().smooth(),
        report,
    })
}
