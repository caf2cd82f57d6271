//! Elitist generational GA over chromosomes and coordinate refinement of the
//! head and feet split lines.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::rng::{self, GaitRng};

use super::{decode_chromosome, Chromosome, FitnessEngine, FitnessWeights, GtsBounds, MaskSpec, CHROMOSOME_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover: f64,
    pub mutation: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 15,
            crossover: 0.6,
            mutation: 0.03,
            elitism: 1,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 {
            return Err(GaitError::invalid("GA needs a population of at least 2 and one generation"));
        }
        if !(0.0..=1.0).contains(&self.crossover) || !(0.0..=1.0).contains(&self.mutation) {
            return Err(GaitError::invalid("GA probabilities must lie in [0, 1]"));
        }
        if self.elitism >= self.population {
            return Err(GaitError::invalid("elite count must be smaller than the population"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best: Chromosome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Chromosome,
    pub spec: MaskSpec,
    pub fitness: f64,
    pub trace: Vec<GenerationStats>,
    /// Fitness lookups, always `population × generations`.
    pub evaluations_requested: usize,
    /// Lookups that missed the mask cache.
    pub evaluations_computed: usize,
}

impl GaResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,best_fitness,mean_fitness,best_chromosome\n");
        for g in &self.trace {
            out.push_str(&format!("{},{},{},{}\n", g.generation, g.best_fitness, g.mean_fitness, g.best));
        }
        out
    }
}

/// Higher fitness wins; equal fitness goes to the smaller mask.
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn roulette(fitness: &[f64], rng: &mut GaitRng) -> usize {
    let total: f64 = fitness.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return rng.random_range(0..fitness.len());
    }
    let mut r = rng.random_range(0.0..total);
    for (i, &f) in fitness.iter().enumerate() {
        if r < f {
            return i;
        }
        r -= f;
    }
    fitness.iter().rposition(|&f| f > 0.0).unwrap_or(0)
}

fn random_chromosome(rng: &mut GaitRng) -> Chromosome {
    Chromosome::from_bits(rng.random_range(0..1u32 << CHROMOSOME_BITS)).expect("28-bit draw")
}

fn breed(a: Chromosome, b: Chromosome, params: &GaParams, rng: &mut GaitRng) -> Chromosome {
    let mut child = a;
    if rng.random_bool(params.crossover) {
        for i in 0..CHROMOSOME_BITS {
            if rng.random_bool(0.5) {
                child = child.with_bit(i, b.bit(i));
            }
        }
    }
    for i in 0..CHROMOSOME_BITS {
        if rng.random_bool(params.mutation) {
            child = child.with_bit(i, !child.bit(i));
        }
    }
    child
}

/// Runs the GA with an arbitrary mask fitness. Fitness values are cached by
/// decoded mask, so distinct chromosomes that decode alike cost one call.
pub fn ga_search<F>(fitness: F, params: &GaParams, bounds: &GtsBounds) -> Result<GaResult>
where
    F: Fn(&MaskSpec) -> f64 + Sync,
{
    params.validate()?;
    let mut cache: HashMap<MaskSpec, f64> = HashMap::new();
    let mut computed = 0usize;
    let mut requested = 0usize;
    let mut population: Vec<Chromosome> = (0..params.population)
        .map(|i| random_chromosome(&mut rng::stream(params.seed, &[0, i as u64])))
        .collect();
    let mut trace = Vec::with_capacity(params.generations);
    let mut best: Option<(Chromosome, MaskSpec, f64)> = None;

    for generation in 0..params.generations {
        let specs: Vec<MaskSpec> = population.iter().map(|&c| decode_chromosome(c, bounds)).collect();
        let mut fresh: Vec<MaskSpec> = specs.iter().filter(|s| !cache.contains_key(s)).copied().collect();
        fresh.sort();
        fresh.dedup();
        let values: Vec<f64> = fresh.par_iter().map(&fitness).collect();
        computed += fresh.len();
        cache.extend(fresh.into_iter().zip(values));
        requested += specs.len();
        let fit: Vec<f64> = specs.iter().map(|s| cache[s]).collect();

        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| {
            fit[b]
                .total_cmp(&fit[a])
                .then(specs[a].area().cmp(&specs[b].area()))
                .then(a.cmp(&b))
        });
        let lead = order[0];
        if best.as_ref().is_none_or(|(_, s, f)| better((fit[lead], specs[lead].area()), (*f, s.area()))) {
            best = Some((population[lead], specs[lead], fit[lead]));
        }
        trace.push(GenerationStats {
            generation,
            best_fitness: fit[lead],
            mean_fitness: fit.iter().sum::<f64>() / fit.len() as f64,
            best: population[lead],
        });

        if generation + 1 == params.generations {
            break;
        }
        let mut next: Vec<Chromosome> = Vec::with_capacity(params.population);
        next.push(population[lead]);
        next.extend(order.iter().filter(|&&i| i != lead).take(params.elitism - 1).map(|&i| population[i]));
        let parents = population.clone();
        let children: Vec<Chromosome> = (next.len()..params.population)
            .map(|i| {
                let mut rng = rng::stream(params.seed, &[generation as u64 + 1, i as u64]);
                let a = parents[roulette(&fit, &mut rng)];
                let b = parents[roulette(&fit, &mut rng)];
                breed(a, b, params, &mut rng)
            })
            .collect();
        next.extend(children);
        population = next;
    }
    let (chrom, spec, f) = best.expect("at least one generation");
    Ok(GaResult {
        best: chrom,
        spec,
        fitness: f,
        trace,
        evaluations_requested: requested,
        evaluations_computed: computed,
    })
}

/// GA over masks scored by the tuning-set recognizer.
pub fn ga_optimize(engine: &FitnessEngine, params: &GaParams, weights: &FitnessWeights, bounds: &GtsBounds) -> Result<GaResult> {
    ga_search(|s| engine.fitness(s, weights), params, bounds)
}

/// Line search of `sF` on its decode grid with `sH` fixed, then of `sH` with
/// the new `sF`. Region bits are left alone and fitness never decreases.
pub fn sequential_refine<F>(fitness: F, spec: &MaskSpec, bounds: &GtsBounds) -> (MaskSpec, f64)
where
    F: Fn(&MaskSpec) -> f64 + Sync,
{
    let mut cur = *spec;
    let mut cur_f = fitness(&cur);
    let step = |cands: Vec<MaskSpec>, cur: &mut MaskSpec, cur_f: &mut f64| {
        let vals: Vec<f64> = cands.par_iter().map(&fitness).collect();
        for (c, f) in cands.into_iter().zip(vals) {
            if better((f, c.area()), (*cur_f, cur.area())) {
                *cur = c;
                *cur_f = f;
            }
        }
    };
    let cands = bounds.f.grid().into_iter().filter(|&f| f >= cur.s_h && f != cur.s_f).map(|s_f| MaskSpec { s_f, ..cur }).collect();
    step(cands, &mut cur, &mut cur_f);
    let cands = bounds.h.grid().into_iter().filter(|&h| h <= cur.s_f && h != cur.s_h).map(|s_h| MaskSpec { s_h, ..cur }).collect();
    step(cands, &mut cur, &mut cur_f);
    (cur, cur_f)
}
