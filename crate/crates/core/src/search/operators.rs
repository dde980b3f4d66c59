//! Selection, crossover and mutation.

use rand::Rng;

use super::{Individual, SearchError};
use crate::tf::{Chromosome, GENE_COUNT};

/// The draws the operators need. Implemented for every [`rand::Rng`];
/// tests can substitute scripted sources.
pub trait RandomSource {
    /// Uniform in `[0, 1)`.
    fn unit(&mut self) -> f64;
    /// Uniform in `0..n`.
    fn below(&mut self, n: usize) -> usize;
}

impl<R: Rng + ?Sized> RandomSource for R {
    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn below(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

/// Draws `size` individuals with replacement and returns the index of the
/// cheapest. Equal costs go to the lower index.
pub fn tournament_select<R: RandomSource + ?Sized>(
    pop: &[Individual],
    size: usize,
    rng: &mut R,
) -> Result<usize, SearchError> {
    if pop.is_empty() {
        return Err(SearchError::State("tournament over an empty population".into()));
    }
    if let Some(i) = pop.iter().position(|ind| ind.fitness.is_none()) {
        return Err(SearchError::State(format!("individual {i} has no fitness")));
    }
    let cost = |i: usize| pop[i].fitness.unwrap();
    let mut best = rng.below(pop.len());
    for _ in 1..size {
        let i = rng.below(pop.len());
        if cost(i) < cost(best) || (cost(i) == cost(best) && i < best) {
            best = i;
        }
    }
    Ok(best)
}

/// Children of `a` and `b` with genes `p..q` exchanged.
pub fn crossover_at(a: &Chromosome, b: &Chromosome, p: usize, q: usize) -> (Chromosome, Chromosome) {
    assert!(p < q && q <= GENE_COUNT, "cut points {p}..{q}");
    let (mut x, mut y) = (*a, *b);
    x.genes_mut()[p..q].copy_from_slice(&b.genes()[p..q]);
    y.genes_mut()[p..q].copy_from_slice(&a.genes()[p..q]);
    (x, y)
}

const CUTS: usize = (GENE_COUNT - 1) * (GENE_COUNT - 2) / 2;

/// With probability `p`, cuts at a uniformly drawn `1 <= p < q <= 15` and
/// swaps the middle segment; otherwise returns the parents.
pub fn two_point_crossover<R: RandomSource + ?Sized>(
    a: &Chromosome,
    b: &Chromosome,
    p: f64,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    if rng.unit() >= p {
        return (*a, *b);
    }
    let (lo, hi) = cut_pair(rng.below(CUTS));
    crossover_at(a, b, lo, hi)
}

/// The `k`-th pair `(p, q)` with `1 <= p < q <= 15`, in lexicographic order.
fn cut_pair(mut k: usize) -> (usize, usize) {
    for p in 1..GENE_COUNT - 1 {
        let span = GENE_COUNT - 1 - p;
        if k < span {
            return (p, p + 1 + k);
        }
        k -= span;
    }
    unreachable!("cut index out of range")
}

/// With probability `p_individual` the chromosome goes through
/// [`mutate_genes`]; otherwise it is returned unchanged.
pub fn mutate<R: RandomSource + ?Sized>(
    c: &Chromosome,
    p_individual: f64,
    p_gene: f64,
    rng: &mut R,
) -> Chromosome {
    if rng.unit() < p_individual {
        mutate_genes(c, p_gene, rng)
    } else {
        *c
    }
}

/// Replaces each gene with probability `p_gene` by a uniform value in `0..=255`.
pub fn mutate_genes<R: RandomSource + ?Sized>(c: &Chromosome, p_gene: f64, rng: &mut R) -> Chromosome {
    let mut out = *c;
    for g in out.genes_mut() {
        if rng.unit() < p_gene {
            *g = rng.below(256) as u8;
        }
    }
    out
}
