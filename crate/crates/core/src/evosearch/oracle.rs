use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::{evaluate_candidate, EvalSet, HyperNet};
use crate::searchspace::{validate_or_contract, Genome, SpaceConfig};
use crate::verifier::fitness_from_eer;

/// Maps a valid genome to a fitness in `[0, 1]`.
pub trait FitnessOracle {
    fn space(&self) -> SpaceConfig;

    fn fitness(&self, genome: &Genome) -> Result<f64>;

    /// EER implied by a fitness, when the oracle scores verification error.
    fn eer_of(&self, _fitness: f64) -> Option<f64> {
        None
    }
}

/// Closed-form landscape: fraction of loci that match a hidden target.
#[derive(Debug, Clone)]
pub struct MatchCountOracle {
    pub target: Genome,
    space: SpaceConfig,
}

impl MatchCountOracle {
    pub fn new(target: Genome, space: SpaceConfig) -> Result<Self> {
        validate_or_contract(&target, &space)?;
        Ok(Self { target, space })
    }

    pub fn matches(&self, genome: &Genome) -> usize {
        (0..self.space.n_loci())
            .filter(|&i| genome.allele(i) == self.target.allele(i))
            .count()
    }
}

impl FitnessOracle for MatchCountOracle {
    fn space(&self) -> SpaceConfig {
        self.space
    }

    fn fitness(&self, genome: &Genome) -> Result<f64> {
        Ok(self.matches(genome) as f64 / self.space.n_loci() as f64)
    }
}

/// Fitness `1 − EER` of a sub-network inheriting weights from a trained hyper-network.
pub struct HyperNetOracle<'a> {
    pub net: &'a HyperNet,
    pub eval: &'a EvalSet,
}

impl FitnessOracle for HyperNetOracle<'_> {
    fn space(&self) -> SpaceConfig {
        self.net.config.space()
    }

    fn fitness(&self, genome: &Genome) -> Result<f64> {
        Ok(fitness_from_eer(evaluate_candidate(self.net, genome, self.eval)?))
    }

    fn eer_of(&self, fitness: f64) -> Option<f64> {
        Some(1.0 - fitness)
    }
}

/// One oracle call, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    /// 0 for initialization or baseline sampling.
    pub generation: usize,
    pub genome: Genome,
    pub fitness: f64,
}

/// Memoizing, budgeted front-end to an oracle; only cache misses count as evaluations.
pub struct Evaluator<'a> {
    oracle: &'a dyn FitnessOracle,
    space: SpaceConfig,
    memo: HashMap<String, f64>,
    budget: Option<usize>,
    pub log: Vec<Evaluation>,
    pub generation: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(oracle: &'a dyn FitnessOracle, budget: Option<usize>) -> Self {
        Self {
            oracle,
            space: oracle.space(),
            memo: HashMap::new(),
            budget,
            log: Vec::new(),
            generation: 0,
        }
    }

    pub fn space(&self) -> SpaceConfig {
        self.space
    }

    pub fn oracle(&self) -> &dyn FitnessOracle {
        self.oracle
    }

    pub fn calls(&self) -> usize {
        self.log.len()
    }

    pub fn remaining(&self) -> Option<usize> {
        self.budget.map(|b| b.saturating_sub(self.calls()))
    }

    pub fn is_known(&self, genome: &Genome) -> bool {
        self.memo.contains_key(&genome.encode())
    }

    pub fn cached(&self, genome: &Genome) -> Option<f64> {
        self.memo.get(&genome.encode()).copied()
    }

    /// Fitness of `genome`, calling the oracle only on a cache miss.
    pub fn evaluate(&mut self, genome: &Genome) -> Result<f64> {
        let key = genome.encode();
        if let Some(&f) = self.memo.get(&key) {
            return Ok(f);
        }
        if self.remaining() == Some(0) {
            return Err(Error::BudgetExhausted(self.calls()));
        }
        validate_or_contract(genome, &self.space)?;
        let fail = |message: String| Error::Oracle {
            genome: key.clone(),
            message,
        };
        let f = self.oracle.fitness(genome).map_err(|e| fail(e.to_string()))?;
        if !(0.0..=1.0).contains(&f) {
            return Err(fail(format!("fitness {f} outside [0, 1]")));
        }
        self.log.push(Evaluation {
            index: self.log.len(),
            generation: self.generation,
            genome: genome.clone(),
            fitness: f,
        });
        self.memo.insert(key, f);
        Ok(f)
    }

    /// Highest-fitness evaluation so far; the earliest wins ties.
    pub fn best(&self) -> Option<&Evaluation> {
        self.log.iter().fold(None, |best: Option<&Evaluation>, e| match best {
            Some(b) if b.fitness >= e.fitness => Some(b),
            _ => Some(e),
        })
    }
}
