use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::{Corpus, Split};
use crate::error::{Error, Result};
use crate::hypernet::{HyperNet, SubNet};
use crate::searchspace::{uniform_sample, Genome, SpaceConfig};
use crate::tensorcore::{checkpoint, Adam, AdamConfig, Binder, Graph, Tensor, Var};
use crate::verifier::{compute_eer, ge2e_loss_var, score_trials, ScoreParams, TrialSet, OFFSET_PARAM, SCALE_PARAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Softmax,
    Ge2e,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Leading steps trained with softmax before switching to `loss`.
    pub warmup_steps: usize,
    pub loss: LossMode,
    pub base_lr: f64,
    pub batch_speakers: usize,
    pub batch_utts: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            warmup_steps: 500,
            loss: LossMode::Ge2e,
            base_lr: 0.02,
            batch_speakers: 8,
            batch_utts: 5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_at(&self, step: usize) -> LossMode {
        if step < self.warmup_steps {
            LossMode::Softmax
        } else {
            self.loss
        }
    }
}

/// Learning rate at `step`: linear from `base` at step 0 down to 0 at step `total`.
pub fn lr_at(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    base * (1.0 - step.min(total) as f64 / total as f64)
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Which architecture each training step runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PathSampler {
    /// A fresh uniform genome per step.
    Uniform(SpaceConfig),
    Fixed(Genome),
    /// Cycles through the listed genomes.
    Schedule(Vec<Genome>),
}

impl PathSampler {
    fn pick(&self, step: usize, rng: &mut dyn RngCore) -> Genome {
        match self {
            PathSampler::Uniform(space) => uniform_sample(space, rng),
            PathSampler::Fixed(g) => g.clone(),
            PathSampler::Schedule(gs) => gs[step % gs.len()].clone(),
        }
    }
}

/// Resumable optimizer progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub adam: Adam,
    pub trace: Vec<f64>,
}

const OPTIMIZER_FILE: &str = "optimizer.ckpt";
const STATE_FILE: &str = "train_state.json";

#[derive(Serialize, Deserialize)]
struct StateFile {
    step: usize,
    adam_steps: Vec<(String, u64)>,
    trace: Vec<f64>,
}

impl TrainState {
    /// Writes `optimizer.ckpt` and `train_state.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (moments, adam_steps) = self.adam.export();
        checkpoint::save(&dir.join(OPTIMIZER_FILE), &moments)?;
        let file = StateFile {
            step: self.step,
            adam_steps,
            trace: self.trace.clone(),
        };
        let path = dir.join(STATE_FILE);
        fs::write(&path, serde_json::to_string(&file)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, adam: AdamConfig) -> Result<Self> {
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: StateFile = serde_json::from_str(&text)?;
        let moments = checkpoint::load(&dir.join(OPTIMIZER_FILE))?;
        Ok(Self {
            step: file.step,
            adam: Adam::import(adam, &moments, &file.adam_steps)?,
            trace: file.trace,
        })
    }
}

/// Training loop over the training split of a corpus.
pub struct Trainer {
    pub config: TrainConfig,
    pub sampler: PathSampler,
    pub path_dropout: bool,
    inputs: Vec<Tensor>,
    speakers: Vec<Vec<usize>>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(net: &HyperNet, corpus: &Corpus, config: TrainConfig, sampler: PathSampler, path_dropout: bool) -> Result<Self> {
        let groups = corpus.train_speakers();
        if groups.len() < config.batch_speakers || config.batch_speakers < 2 {
            return Err(Error::Config(format!(
                "need at least {} training speakers (and at least 2), found {}",
                config.batch_speakers,
                groups.len()
            )));
        }
        if config.batch_utts < 2 {
            return Err(Error::Config("batch_utts must be at least 2".into()));
        }
        if let Some((spk, u)) = groups.iter().find(|(_, u)| u.len() < config.batch_utts) {
            return Err(Error::Config(format!(
                "speaker `{spk}` has {} training utterances, batches need {}",
                u.len(),
                config.batch_utts
            )));
        }
        if groups.len() != net.config.n_train_speakers {
            return Err(Error::Config(format!(
                "softmax head has {} outputs but the corpus has {} training speakers",
                net.config.n_train_speakers,
                groups.len()
            )));
        }
        let mut inputs = Vec::new();
        let mut speakers = Vec::new();
        for (_, utts) in &groups {
            let mut idx = Vec::with_capacity(utts.len());
            for &u in utts {
                idx.push(inputs.len());
                inputs.push(net.prepare_input(&corpus.utterances[u].features)?);
            }
            speakers.push(idx);
        }
        Ok(Self {
            state: TrainState {
                step: 0,
                adam: Adam::new(config.adam),
                trace: Vec::new(),
            },
            config,
            sampler,
            path_dropout,
            inputs,
            speakers,
        })
    }

    /// Continues from saved progress; the step counter and optimizer moments carry over.
    pub fn resume(mut self, state: TrainState) -> Result<Self> {
        if state.step > self.config.steps {
            return Err(Error::Config(format!(
                "saved state is at step {} beyond the configured {} steps",
                state.step, self.config.steps
            )));
        }
        self.state = state;
        Ok(self)
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.config.steps
    }

    /// Runs one step and returns its loss.
    pub fn step(&mut self, net: &mut HyperNet) -> Result<f64> {
        let step = self.state.step;
        let mut rng = step_rng(self.config.seed, step);
        let genome = self.sampler.pick(step, &mut rng);
        net.check_genome(&genome)?;
        let spk = sample(&mut rng, self.speakers.len(), self.config.batch_speakers).into_vec();
        let mut g = Graph::new();
        let mut binder = Binder::new();
        let mut emb: Vec<Vec<Var>> = Vec::with_capacity(spk.len());
        let mut labels = Vec::new();
        let use_dropout = self.path_dropout && net.config.path_dropout > 0.0;
        for &s in &spk {
            let pool = &self.speakers[s];
            let picks = sample(&mut rng, pool.len(), self.config.batch_utts).into_vec();
            let mut row = Vec::with_capacity(picks.len());
            for p in picks {
                let x = g.constant(self.inputs[pool[p]].clone());
                let dropout: Option<&mut dyn RngCore> = if use_dropout { Some(&mut rng) } else { None };
                row.push(net.embed_var(&mut g, &mut binder, &genome, x, dropout)?);
                labels.push(s);
            }
            emb.push(row);
        }
        let loss = match self.config.loss_at(step) {
            LossMode::Softmax => {
                let mut terms = Vec::with_capacity(labels.len());
                for (e, &label) in emb.iter().flatten().zip(&labels) {
                    let logits = net.logits_var(&mut g, &mut binder, *e)?;
                    terms.push(g.softmax_xent(logits, label)?);
                }
                g.mean_of(&terms)?
            }
            LossMode::Ge2e => {
                let w = binder.bind(&mut g, &net.params, SCALE_PARAM)?;
                let b = binder.bind(&mut g, &net.params, OFFSET_PARAM)?;
                ge2e_loss_var(&mut g, &emb, w, b)?
            }
        };
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Contract(format!("non-finite loss at step {step}")));
        }
        let grads = g.backward(loss)?;
        let names = binder.accumulate(&grads, &mut net.params)?;
        let lr = lr_at(self.config.base_lr, step, self.config.steps);
        self.state.adam.step(&mut net.params, names.iter().map(String::as_str), lr)?;
        if net.params.contains(SCALE_PARAM) {
            ScoreParams::clamp_in(&mut net.params)?;
        }
        self.state.step += 1;
        self.state.trace.push(value);
        Ok(value)
    }

    /// Runs until the step budget or `stop_after` total steps, whichever comes first.
    pub fn run(&mut self, net: &mut HyperNet, stop_after: Option<usize>) -> Result<()> {
        let end = stop_after.map_or(self.config.steps, |s| s.min(self.config.steps));
        while self.state.step < end {
            self.step(net)?;
        }
        Ok(())
    }
}

/// Single-path training with uniform genome sampling and path dropout. Returns the loss trace.
pub fn train_hypernet(net: &mut HyperNet, corpus: &Corpus, config: TrainConfig) -> Result<Vec<f64>> {
    let sampler = PathSampler::Uniform(net.config.space());
    let mut t = Trainer::new(net, corpus, config, sampler, true)?;
    t.run(net, None)?;
    Ok(t.state.trace)
}

/// Trains a fixed architecture without path dropout. Returns the loss trace.
pub fn retrain(subnet: &mut SubNet, corpus: &Corpus, config: TrainConfig) -> Result<Vec<f64>> {
    let sampler = PathSampler::Fixed(subnet.genome.clone());
    let mut t = Trainer::new(&subnet.net, corpus, config, sampler, false)?;
    t.run(&mut subnet.net, None)?;
    Ok(t.state.trace)
}

/// Trials with their inputs already pooled for a given network configuration.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub trials: TrialSet,
    ids: Vec<String>,
    inputs: Vec<Tensor>,
}

impl EvalSet {
    pub fn new(net: &HyperNet, corpus: &Corpus, trials: TrialSet) -> Result<Self> {
        trials.check()?;
        let by_id = corpus.by_id();
        let ids = trials.utterance_ids();
        let inputs = ids
            .iter()
            .map(|id| {
                let u = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Lookup(format!("trial utterance `{id}` not in corpus")))?;
                if u.split == Split::Train {
                    return Err(Error::Contract(format!("trial utterance `{id}` is training data")));
                }
                net.prepare_input(&u.features)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trials, ids, inputs })
    }

    pub fn from_corpus(net: &HyperNet, corpus: &Corpus) -> Result<Self> {
        Self::new(net, corpus, corpus.trial_set())
    }

    pub fn n_utterances(&self) -> usize {
        self.ids.len()
    }

    /// Keeps `n_speakers` enrolled speakers with at most `n_enroll` enrollment and `n_test`
    /// test utterances each.
    pub fn subset(&self, n_speakers: usize, n_enroll: usize, n_test: usize) -> Result<Self> {
        let keep: Vec<&String> = self.trials.enrollment.keys().take(n_speakers).collect();
        let mut per_spk: BTreeMap<String, usize> = BTreeMap::new();
        let mut tests = std::collections::BTreeSet::new();
        for t in self.trials.trials.iter().filter(|t| t.target) {
            if keep.contains(&&t.enroll_speaker) {
                let n = per_spk.entry(t.enroll_speaker.clone()).or_default();
                if *n < n_test {
                    *n += 1;
                    tests.insert(t.test_utterance.clone());
                }
            }
        }
        let trials = TrialSet {
            enrollment: keep
                .iter()
                .map(|k| ((*k).clone(), self.trials.enrollment[*k].iter().take(n_enroll).cloned().collect()))
                .collect(),
            trials: self
                .trials
                .trials
                .iter()
                .filter(|t| keep.contains(&&t.enroll_speaker) && tests.contains(&t.test_utterance))
                .cloned()
                .collect(),
        };
        trials.check()?;
        let lookup: BTreeMap<&str, &Tensor> = self.ids.iter().map(String::as_str).zip(&self.inputs).collect();
        let ids = trials.utterance_ids();
        let inputs = ids.iter().map(|id| lookup[id.as_str()].clone()).collect();
        Ok(Self { trials, ids, inputs })
    }

    pub fn embeddings(&self, net: &HyperNet, genome: &Genome) -> Result<BTreeMap<String, Tensor>> {
        let embs = net.embed_prepared(genome, &self.inputs)?;
        Ok(self.ids.iter().cloned().zip(embs).collect())
    }
}

/// EER of `genome` with weights inherited from `net`, path dropout off.
pub fn evaluate_candidate(net: &HyperNet, genome: &Genome, eval: &EvalSet) -> Result<f64> {
    let embs = eval.embeddings(net, genome)?;
    let scores = score_trials(&embs, &eval.trials, &net.score_params()?)?;
    compute_eer(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(0.02, 0, 100), 0.02);
        assert_eq!(lr_at(0.02, 100, 100), 0.0);
        assert!((lr_at(0.02, 50, 100) - 0.01).abs() < 1e-15);
        assert_eq!(lr_at(0.02, 0, 0), 0.0);
    }

    #[test]
    fn warmup_then_configured_loss() {
        let c = TrainConfig {
            warmup_steps: 2,
            ..TrainConfig::default()
        };
        assert_eq!(c.loss_at(1), LossMode::Softmax);
        assert_eq!(c.loss_at(2), LossMode::Ge2e);
    }
}
