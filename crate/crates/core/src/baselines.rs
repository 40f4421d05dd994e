//! Comparison schedulers: random, periodic (round robin), greedy and a
//! genetic algorithm over K-subsets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellId;
use crate::pattern::IlluminationPattern;
use crate::scoring::{ScoreContext, Scorer, ScorerKind};

fn check_beams(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::TooManyBeams { beams: k, cells: n });
    }
    Ok(())
}

/// Uniformly random K-subset.
pub fn pattern_random<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<IlluminationPattern> {
    check_beams(n, k)?;
    let mut cells = sample(rng, n, k).into_vec();
    cells.sort_unstable();
    Ok(IlluminationPattern::from_sorted_unchecked(cells))
}

/// Round robin: cells `(slot * K + m) mod N` for `m in 0..K`.
pub fn pattern_periodic(n: usize, k: usize, slot_index: usize) -> Result<IlluminationPattern> {
    check_beams(n, k)?;
    if n == 0 {
        return Ok(IlluminationPattern::from_sorted_unchecked(Vec::new()));
    }
    let start = (slot_index % n) * k % n;
    let mut cells: Vec<CellId> = (0..k).map(|m| (start + m) % n).collect();
    cells.sort_unstable();
    Ok(IlluminationPattern::from_sorted_unchecked(cells))
}

/// The K cells with the longest queues, ties to the lower id.
pub fn pattern_greedy(queues: &[f64], k: usize) -> Result<IlluminationPattern> {
    check_beams(queues.len(), k)?;
    let mut order: Vec<CellId> = (0..queues.len()).collect();
    let cmp = |a: &CellId, b: &CellId| queues[*b].total_cmp(&queues[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(IlluminationPattern::from_sorted_unchecked(order))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub rng_seed: u64,
    pub scorer: ScorerKind,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 500,
            generations: 50,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            rng_seed: 0,
            scorer: ScorerKind::BruteForce,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("GA population must be at least 2".into()));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Individual {
    cells: Vec<CellId>,
    fitness: f64,
}

fn evaluate(
    ctx: &ScoreContext<'_>,
    kind: ScorerKind,
    genomes: Vec<Vec<CellId>>,
) -> Vec<Individual> {
    let n = ctx.grid.len();
    genomes
        .into_par_iter()
        .map_init(
            || Scorer::new(kind, n),
            |scorer, cells| {
                let fitness = scorer.score_cells(ctx, &cells);
                Individual { cells, fitness }
            },
        )
        .collect()
}

fn tournament<'p>(pop: &'p [Individual], rng: &mut ChaCha8Rng) -> &'p Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if b.fitness > a.fitness {
        b
    } else {
        a
    }
}

/// Cells common to both parents are kept; the rest are drawn from the
/// parents' symmetric difference until the child holds K cells.
fn crossover(a: &[CellId], b: &[CellId], k: usize, rng: &mut ChaCha8Rng) -> Vec<CellId> {
    let mut child = Vec::with_capacity(k);
    let mut rest = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                child.push(x);
                i += 1;
                j += 1;
            }
            (Some(&x), Some(&y)) if x < y => {
                rest.push(x);
                i += 1;
            }
            (Some(_), Some(&y)) => {
                rest.push(y);
                j += 1;
            }
            (Some(&x), None) => {
                rest.push(x);
                i += 1;
            }
            (None, Some(&y)) => {
                rest.push(y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let need = k - child.len();
    for idx in sample(rng, rest.len(), need).into_iter() {
        child.push(rest[idx]);
    }
    child.sort_unstable();
    child
}

/// Swaps one member for a random non-member.
fn mutate(cells: &mut [CellId], n: usize, rng: &mut ChaCha8Rng) {
    if cells.len() == n || cells.is_empty() {
        return;
    }
    let out = rng.random_range(0..cells.len());
    let pick = rng.random_range(0..n - cells.len());
    // the pick-th id not already in the set
    let mut candidate = pick;
    for &c in cells.iter() {
        if c <= candidate {
            candidate += 1;
        } else {
            break;
        }
    }
    cells[out] = candidate;
    cells.sort_unstable();
}

/// GA-BH on the queue snapshot in `ctx`, starting from a random population.
pub fn pattern_ga(ctx: &ScoreContext<'_>, cfg: &GaConfig) -> Result<IlluminationPattern> {
    pattern_ga_seeded(ctx, cfg, Vec::new())
}

/// GA-BH whose initial population starts with `initial` (validated), padded
/// with random individuals up to the configured size.
pub fn pattern_ga_seeded(
    ctx: &ScoreContext<'_>,
    cfg: &GaConfig,
    initial: Vec<IlluminationPattern>,
) -> Result<IlluminationPattern> {
    cfg.validate()?;
    let n = ctx.grid.len();
    let k = ctx.beams;
    check_beams(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let mut genomes: Vec<Vec<CellId>> = Vec::with_capacity(cfg.population_size);
    for p in initial.into_iter().take(cfg.population_size) {
        p.expect_beams(k)?;
        if p.cells().last().is_some_and(|&c| c >= n) {
            return Err(Error::InvalidCell {
                id: *p.cells().last().unwrap(),
                len: n,
            });
        }
        genomes.push(p.cells().to_vec());
    }
    while genomes.len() < cfg.population_size {
        let mut g = sample(&mut rng, n, k).into_vec();
        g.sort_unstable();
        genomes.push(g);
    }
    let mut pop = evaluate(ctx, cfg.scorer, genomes);
    let mut best = fittest(&pop).clone();

    for _ in 0..cfg.generations {
        let mut next = Vec::with_capacity(cfg.population_size);
        next.push(best.cells.clone());
        while next.len() < cfg.population_size {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let mut child = if rng.random_bool(cfg.crossover_rate) {
                crossover(&a.cells, &b.cells, k, &mut rng)
            } else {
                a.cells.clone()
            };
            if rng.random_bool(cfg.mutation_rate) {
                mutate(&mut child, n, &mut rng);
            }
            next.push(child);
        }
        pop = evaluate(ctx, cfg.scorer, next);
        let gen_best = fittest(&pop);
        if gen_best.fitness > best.fitness {
            best = gen_best.clone();
        }
    }
    Ok(IlluminationPattern::from_sorted_unchecked(best.cells))
}

/// Highest fitness, first occurrence on ties.
fn fittest(pop: &[Individual]) -> &Individual {
    let mut best = &pop[0];
    for ind in &pop[1..] {
        if ind.fitness > best.fitness {
            best = ind;
        }
    }
    best
}
