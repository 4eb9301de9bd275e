//! Memetic evolutionary search: mutation, hill-climbing local search, compete, and
//! tournament selection over a fixed-size population, against a pluggable fitness oracle.

mod oracle;
mod stats;

pub use oracle::{Evaluation, Evaluator, FitnessOracle, HyperNetOracle, MatchCountOracle};
pub use stats::{rank_sum_less, RankSum};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{uniform_sample, Genome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: f64,
    pub birth_generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Population capacity S.
    pub population: usize,
    pub generations: usize,
    pub mutation_p: f64,
    /// Neighbours sampled per hill-climbing step.
    pub neighbors: usize,
    /// Maximum hill-climbing steps.
    pub local_steps: usize,
    pub tournament: usize,
    /// Cap on oracle calls; `None` runs all generations.
    pub budget: Option<usize>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 2000,
            mutation_p: 0.1,
            neighbors: 5,
            local_steps: 2,
            tournament: 10,
            budget: None,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population < 2 {
            return bad(format!("population must be at least 2, got {}", self.population));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return bad(format!(
                "tournament size must be in 1..={}, got {}",
                self.population, self.tournament
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_p) {
            return bad(format!("mutation probability {} outside [0, 1]", self.mutation_p));
        }
        if self.budget == Some(0) {
            return bad("evaluation budget must be positive".into());
        }
        Ok(())
    }
}

/// Fixed-capacity set of evaluated individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Individual>,
    pub capacity: usize,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mean_fitness(&self) -> f64 {
        self.members.iter().map(|m| m.fitness).sum::<f64>() / self.members.len().max(1) as f64
    }

    /// Index of the lowest-fitness member; the oldest, then the first, wins ties.
    pub fn worst(&self) -> usize {
        let mut w = 0;
        for (i, m) in self.members.iter().enumerate().skip(1) {
            let cur = &self.members[w];
            if m.fitness < cur.fitness || (m.fitness == cur.fitness && m.birth_generation < cur.birth_generation) {
                w = i;
            }
        }
        w
    }

    /// Adds `ind` and then evicts the worst member, which may be `ind` itself.
    pub fn insert_and_evict(&mut self, ind: Individual) -> Individual {
        self.members.push(ind);
        let w = self.worst();
        self.members.remove(w)
    }
}

/// Per-locus redraw with probability `p`; a redrawn locus always takes a different allele.
pub fn mutate<R: Rng + ?Sized>(g: &Genome, p: f64, rng: &mut R) -> Genome {
    let n = g.mode().n_alleles();
    let mut out = g.clone();
    for locus in 0..g.n_loci() {
        if p > 0.0 && rng.random_bool(p) {
            let cur = g.allele(locus).expect("mutate needs a valid genome");
            let mut a = rng.random_range(0..n - 1);
            if a >= cur {
                a += 1;
            }
            out = out.with_allele(locus, a);
        }
    }
    out
}

/// Every genome differing from `g` at exactly one locus.
pub fn neighbors(g: &Genome) -> Vec<Genome> {
    let n = g.mode().n_alleles();
    let mut out = Vec::with_capacity(g.n_loci() * (n - 1));
    for locus in 0..g.n_loci() {
        let cur = g.allele(locus).expect("neighbors needs a valid genome");
        out.extend((0..n).filter(|&a| a != cur).map(|a| g.with_allele(locus, a)));
    }
    out
}

/// Hill climbing over one-locus substitutions.
///
/// Each step samples `k_n` neighbours, preferring ones not yet evaluated, and moves to the
/// best only if it is strictly fitter. Stops early when a step brings no improvement.
pub fn local_search<R: Rng + ?Sized>(
    start: Individual,
    eval: &mut Evaluator,
    k_n: usize,
    steps: usize,
    rng: &mut R,
) -> Result<Individual> {
    let mut cur = start;
    for _ in 0..steps {
        let all = neighbors(&cur.genome);
        let (fresh, seen): (Vec<Genome>, Vec<Genome>) = all.into_iter().partition(|g| !eval.is_known(g));
        let mut picked: Vec<Genome> = Vec::with_capacity(k_n);
        for pool in [fresh, seen] {
            let take = (k_n - picked.len()).min(pool.len());
            let idx = sample(rng, pool.len(), take);
            picked.extend(idx.iter().map(|i| pool[i].clone()));
        }
        let mut best: Option<(Genome, f64)> = None;
        for g in picked {
            let f = eval.evaluate(&g)?;
            if best.as_ref().is_none_or(|b| f > b.1) {
                best = Some((g, f));
            }
        }
        match best {
            Some((g, f)) if f > cur.fitness => {
                cur = Individual {
                    genome: g,
                    fitness: f,
                    birth_generation: cur.birth_generation,
                }
            }
            _ => break,
        }
    }
    Ok(cur)
}

/// Higher fitness wins; on a tie the local-search result `b` wins.
pub fn compete(a: Individual, b: Individual) -> Individual {
    if a.fitness > b.fitness {
        a
    } else {
        b
    }
}

/// Indices of the `k_t` members drawn without replacement for one tournament.
pub fn tournament_draw<R: Rng + ?Sized>(pop_len: usize, k_t: usize, rng: &mut R) -> Vec<usize> {
    sample(rng, pop_len, k_t).into_vec()
}

/// Fittest of the drawn members; ties go to the earliest birth, then the lowest index.
pub fn tournament_winner(pop: &Population, drawn: &[usize]) -> usize {
    let mut w = drawn[0];
    for &i in &drawn[1..] {
        let (m, cur) = (&pop.members[i], &pop.members[w]);
        let better = m.fitness > cur.fitness
            || (m.fitness == cur.fitness
                && (m.birth_generation < cur.birth_generation || (m.birth_generation == cur.birth_generation && i < w)));
        if better {
            w = i;
        }
    }
    w
}

pub fn tournament_select<R: Rng + ?Sized>(pop: &Population, k_t: usize, rng: &mut R) -> Individual {
    let drawn = tournament_draw(pop.len(), k_t, rng);
    pop.members[tournament_winner(pop, &drawn)].clone()
}

/// S uniform genomes, each evaluated once.
pub fn initialize<R: Rng + ?Sized>(config: &SearchConfig, eval: &mut Evaluator, rng: &mut R) -> Result<Population> {
    let space = eval.space();
    let mut members = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let genome = uniform_sample(&space, rng);
        let fitness = eval.evaluate(&genome)?;
        members.push(Individual {
            genome,
            fitness,
            birth_generation: 0,
        });
    }
    Ok(Population {
        members,
        capacity: config.population,
    })
}

/// One line of the per-generation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    /// Cumulative oracle calls, initialization included.
    pub evals_used: usize,
    /// Best fitness over every evaluation so far.
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_genome: Genome,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub strategy: &'static str,
    pub best: Individual,
    pub history: Vec<HistoryRow>,
    pub evaluations: Vec<Evaluation>,
    /// Set when the budget ran out before the planned work finished.
    pub budget_exhausted: bool,
    /// Population after the last completed generation; empty for non-population strategies.
    pub population: Vec<Individual>,
    pub seed: u64,
}

impl SearchOutcome {
    pub fn total_evaluations(&self) -> usize {
        self.evaluations.len()
    }

    pub fn result(&self, oracle: &dyn FitnessOracle) -> SearchResult {
        SearchResult {
            genome: self.best.genome.clone(),
            fitness: self.best.fitness,
            eer: oracle.eer_of(self.best.fitness),
            total_evaluations: self.total_evaluations(),
            seed: self.seed,
        }
    }
}

fn best_individual(eval: &Evaluator) -> Option<Individual> {
    eval.best().map(|e| Individual {
        genome: e.genome.clone(),
        fitness: e.fitness,
        birth_generation: e.generation,
    })
}

fn history_row(generation: usize, eval: &Evaluator, mean_fitness: f64) -> HistoryRow {
    let best = eval.best().expect("history rows follow at least one evaluation");
    HistoryRow {
        generation,
        evals_used: eval.calls(),
        best_fitness: best.fitness,
        mean_fitness,
        best_genome: best.genome.clone(),
    }
}

fn run_generation<R: Rng + ?Sized>(
    config: &SearchConfig,
    pop: &mut Population,
    parent: &Individual,
    eval: &mut Evaluator,
    rng: &mut R,
) -> Result<Individual> {
    let generation = eval.generation;
    let genome = mutate(&parent.genome, config.mutation_p, rng);
    let fitness = eval.evaluate(&genome)?;
    let mutant = Individual {
        genome,
        fitness,
        birth_generation: generation,
    };
    let searched = local_search(mutant.clone(), eval, config.neighbors, config.local_steps, rng)?;
    let winner = compete(mutant, searched);
    // Both candidates are already scored; this only guards the invariant.
    debug_assert_eq!(eval.cached(&winner.genome), Some(winner.fitness));
    pop.insert_and_evict(winner);
    Ok(tournament_select(pop, config.tournament, rng))
}

/// Memetic search: initialize, then per generation mutate, hill-climb, compete, insert,
/// evict the worst and select the next parent by tournament.
///
/// The first parent is a uniformly drawn member. Running out of budget stops the search
/// and returns the best individual evaluated so far with `budget_exhausted` set; a
/// partially completed generation still gets a history row so the call count adds up.
pub fn evolve(config: &SearchConfig, oracle: &dyn FitnessOracle) -> Result<SearchOutcome> {
    evolve_with(config, oracle, &mut |_, _| {})
}

/// [`evolve`] that hands the population and evaluator to `observe` after every completed
/// generation.
pub fn evolve_with(
    config: &SearchConfig,
    oracle: &dyn FitnessOracle,
    observe: &mut dyn FnMut(&Population, &Evaluator),
) -> Result<SearchOutcome> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval = Evaluator::new(oracle, config.budget);
    let mut history = Vec::with_capacity(config.generations.min(4096));
    let finish = |eval: Evaluator, history, population, exhausted| {
        Ok(SearchOutcome {
            strategy: "memetic",
            best: best_individual(&eval).ok_or(Error::BudgetExhausted(0))?,
            history,
            evaluations: eval.log,
            budget_exhausted: exhausted,
            population,
            seed: config.seed,
        })
    };

    let mut pop = match initialize(config, &mut eval, &mut rng) {
        Ok(p) => p,
        Err(Error::BudgetExhausted(_)) => return finish(eval, history, Vec::new(), true),
        Err(e) => return Err(e),
    };
    let mut parent = pop.members[rng.random_range(0..pop.len())].clone();
    for generation in 1..=config.generations {
        eval.generation = generation;
        let before = eval.calls();
        match run_generation(config, &mut pop, &parent, &mut eval, &mut rng) {
            Ok(next) => parent = next,
            Err(Error::BudgetExhausted(_)) => {
                if eval.calls() > before {
                    history.push(history_row(generation, &eval, pop.mean_fitness()));
                }
                return finish(eval, history, pop.members, true);
            }
            Err(e) => return Err(e),
        }
        history.push(history_row(generation, &eval, pop.mean_fitness()));
        observe(&pop, &eval);
    }
    finish(eval, history, pop.members, false)
}

/// Uniform sampling until `budget` distinct genomes are evaluated (or the space runs out).
pub fn random_search_baseline(config: &SearchConfig, oracle: &dyn FitnessOracle, budget: usize) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::Config("random search needs a positive budget".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let space = oracle.space();
    let target = match u64::try_from(space.size()) {
        Ok(n) if (n as u128) < budget as u128 => n as usize,
        _ => budget,
    };
    let mut eval = Evaluator::new(oracle, Some(budget));
    let mut history = Vec::with_capacity(target);
    let mut sum = 0.0;
    while eval.calls() < target {
        let g = uniform_sample(&space, &mut rng);
        if eval.is_known(&g) {
            continue;
        }
        sum += eval.evaluate(&g)?;
        history.push(history_row(eval.calls(), &eval, sum / eval.calls() as f64));
    }
    Ok(SearchOutcome {
        strategy: "random",
        best: best_individual(&eval).expect("at least one sample"),
        history,
        evaluations: eval.log,
        budget_exhausted: false,
        population: Vec::new(),
        seed: config.seed,
    })
}

/// A named search policy.
pub trait SearchStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, config: &SearchConfig, oracle: &dyn FitnessOracle) -> Result<SearchOutcome>;
}

pub struct Memetic;

impl SearchStrategy for Memetic {
    fn name(&self) -> &'static str {
        "memetic"
    }

    fn run(&self, config: &SearchConfig, oracle: &dyn FitnessOracle) -> Result<SearchOutcome> {
        evolve(config, oracle)
    }
}

/// Uniform sampling; needs `budget` set.
pub struct RandomSearch;

impl SearchStrategy for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn run(&self, config: &SearchConfig, oracle: &dyn FitnessOracle) -> Result<SearchOutcome> {
        let budget = config
            .budget
            .ok_or_else(|| Error::Config("random search needs `budget`".into()))?;
        random_search_baseline(config, oracle, budget)
    }
}

pub fn strategies() -> &'static [&'static dyn SearchStrategy] {
    &[&Memetic, &RandomSearch]
}

pub fn strategy_by_name(name: &str) -> Result<&'static dyn SearchStrategy> {
    strategies()
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown search strategy `{name}`")))
}

/// Final search result as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub genome: Genome,
    pub fitness: f64,
    pub eer: Option<f64>,
    pub total_evaluations: usize,
    pub seed: u64,
}

pub const HISTORY_HEADER: &str = "generation,evals_used,best_fitness,mean_fitness,best_genome";

/// History as CSV; genome text contains commas and is quoted.
pub fn format_history(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},\"{}\"",
            r.generation, r.evals_used, r.best_fitness, r.mean_fitness, r.best_genome
        );
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HISTORY_HEADER => {}
        _ => {
            return Err(Error::Parse {
                position: 1,
                message: format!("expected header `{HISTORY_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse {
            position: i + 1,
            message: m.to_string(),
        };
        let mut parts = line.splitn(5, ',');
        let mut field = |name: &str| parts.next().ok_or_else(|| err(&format!("missing {name}")));
        let generation = field("generation")?.parse().map_err(|_| err("bad generation"))?;
        let evals_used = field("evals_used")?.parse().map_err(|_| err("bad evals_used"))?;
        let best_fitness = field("best_fitness")?.parse().map_err(|_| err("bad best_fitness"))?;
        let mean_fitness = field("mean_fitness")?.parse().map_err(|_| err("bad mean_fitness"))?;
        let genome_text = field("best_genome")?.trim().trim_matches('"');
        let best_genome = Genome::decode(genome_text).map_err(|e| err(&e.to_string()))?;
        rows.push(HistoryRow {
            generation,
            evals_used,
            best_fitness,
            mean_fitness,
            best_genome,
        });
    }
    Ok(rows)
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    std::fs::write(path, format_history(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    parse_history(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_result(path: &Path, result: &SearchResult) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_result(path: &Path) -> Result<SearchResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Probability that `k_n` uniform one-locus neighbours of a genome one substitution away
/// from the optimum include the optimum.
pub fn neighbor_hit_probability(n_loci: usize, n_alleles: usize, k_n: usize) -> f64 {
    let q = 1.0 / (n_loci * (n_alleles - 1)) as f64;
    1.0 - (1.0 - q).powi(k_n as i32)
}
