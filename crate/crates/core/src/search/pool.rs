//! Parallel fitness evaluation.
//!
//! Workers live for the whole search. They pull `(index, chromosome)` tasks
//! from a shared queue and push back `(index, cost)`; the coordinator puts
//! results back in population order, so the worker count never changes
//! the outcome.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Individual, SearchError};
use crate::gray::{GrayImage, NETWORK_SIDE};
use crate::nn::{BoundMetric, Metric, NnError};
use crate::raycast::{render, RenderSettings};
use crate::tf::Chromosome;
use crate::volume::BinnedVolume;

/// Everything a worker needs, shared read-only.
pub struct EvalContext<'a> {
    volume: &'a BinnedVolume,
    metric: Box<dyn BoundMetric + 'a>,
    settings: RenderSettings,
}

impl<'a> EvalContext<'a> {
    /// `target` must already be at the network side length.
    pub fn new(
        volume: &'a BinnedVolume,
        target: &GrayImage,
        metric: &'a dyn Metric,
        settings: RenderSettings,
    ) -> Result<Self, SearchError> {
        if (target.width(), target.height()) != (NETWORK_SIDE, NETWORK_SIDE) {
            return Err(SearchError::Config(format!(
                "target is {}x{}, expected {NETWORK_SIDE}x{NETWORK_SIDE}",
                target.width(),
                target.height()
            )));
        }
        let metric = metric
            .bind(target)
            .map_err(|e| SearchError::Config(format!("metric rejected the target: {e}")))?;
        Ok(EvalContext {
            volume,
            metric,
            settings,
        })
    }

    /// The picture the metric sees for `c`.
    pub fn image(&self, c: &Chromosome) -> GrayImage {
        render(self.volume, &c.expand().smooth(), &self.settings).resample64()
    }

    pub fn cost(&self, c: &Chromosome) -> Result<f64, NnError> {
        let cost = self.metric.cost(&self.image(c))?;
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(NnError::Domain(format!("metric returned cost {cost}")));
        }
        Ok(cost)
    }
}

type Outcome = (usize, Result<f64, SearchError>);

pub struct Pool {
    tasks: Sender<(usize, Chromosome)>,
    results: Receiver<Outcome>,
}

impl Pool {
    /// Starts `workers` threads for the duration of `f`.
    pub fn scoped<T>(ctx: &EvalContext<'_>, workers: usize, f: impl FnOnce(&Pool) -> T) -> T {
        assert!(workers > 0, "pool needs at least one worker");
        let (task_tx, task_rx) = unbounded::<(usize, Chromosome)>();
        let (result_tx, result_rx) = unbounded::<Outcome>();
        thread::scope(|s| {
            for _ in 0..workers {
                let tasks = task_rx.clone();
                let results = result_tx.clone();
                s.spawn(move || {
                    for (index, c) in tasks {
                        let outcome = match catch_unwind(AssertUnwindSafe(|| ctx.cost(&c))) {
                            Ok(Ok(cost)) => Ok(cost),
                            Ok(Err(source)) => Err(SearchError::Evaluation { index, source }),
                            Err(panic) => Err(SearchError::Worker {
                                index,
                                message: panic_message(&panic),
                            }),
                        };
                        if results.send((index, outcome)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(result_tx);
            let pool = Pool {
                tasks: task_tx,
                results: result_rx,
            };
            f(&pool)
            // `pool` drops here, closing the queue so the workers exit.
        })
    }

    /// Costs of `pop`, in order. On failure the lowest failing index is
    /// reported.
    pub fn evaluate(&self, pop: &[Chromosome]) -> Result<Vec<f64>, SearchError> {
        for (i, c) in pop.iter().enumerate() {
            self.tasks.send((i, *c)).expect("workers alive while the pool exists");
        }
        let mut costs = vec![f64::NAN; pop.len()];
        let mut failure: Option<(usize, SearchError)> = None;
        for _ in 0..pop.len() {
            let (i, outcome) = self.results.recv().expect("workers alive while the pool exists");
            match outcome {
                Ok(c) => costs[i] = c,
                Err(e) => {
                    if failure.as_ref().is_none_or(|(j, _)| i < *j) {
                        failure = Some((i, e));
                    }
                }
            }
        }
        match failure {
            Some((_, e)) => Err(e),
            None => Ok(costs),
        }
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Evaluates every individual on a pool that lives for this call only.
pub fn evaluate_population(
    pop: &mut [Individual],
    volume: &BinnedVolume,
    target64: &GrayImage,
    metric: &dyn Metric,
    settings: &RenderSettings,
    workers: usize,
) -> Result<(), SearchError> {
    let ctx = EvalContext::new(volume, target64, metric, *settings)?;
    let chromosomes: Vec<Chromosome> = pop.iter().map(|i| i.chromosome).collect();
    let costs = Pool::scoped(&ctx, workers, |pool| pool.evaluate(&chromosomes))?;
    for (ind, cost) in pop.iter_mut().zip(costs) {
        ind.fitness = Some(cost);
    }
    Ok(())
}
