//! Experiment orchestration: configuration, versioned stage directories, the run manifest,
//! and the stages from data generation to the final report.

mod config;
mod manifest;

pub use config::{default_baseline, CorpusSource, ExperimentConfig, SearchSection, TrialSpec};
pub use manifest::{checksum_tree, next_stage_dir, sha256_file, verify, RunManifest, StageRecord, MANIFEST_FILE};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audiofeat::{
    extract_features, load_corpus, read_manifest, read_wav, save_corpus, utterance_id, Corpus, Crop, FeatureConfig,
    Utterance,
};
use crate::error::{Error, Result};
use crate::evosearch::{
    random_search_baseline, rank_sum_less, read_result, strategy_by_name, write_history, write_result, Evaluation,
    HyperNetOracle, RankSum, SearchOutcome,
};
use crate::hypernet::{lr_at, retrain, EvalSet, HyperNet, PathSampler, SubNet, TrainState, Trainer};
use crate::searchspace::{validate, Genome};
use crate::verifier::{compute_eer, fitness_from_eer, format_trials, score_trials, write_scores};

pub const STAGE_DATA: &str = "data";
pub const STAGE_HYPERNET: &str = "hypernet";
pub const STAGE_SEARCH: &str = "search";
pub const STAGE_RETRAIN: &str = "retrain";
pub const STAGE_EVALUATE: &str = "evaluate";
pub const STAGE_REPORT: &str = "report";

const HYPERNET_STEM: &str = "hypernet";
const SYSTEMS: [&str; 2] = ["baseline", "searched"];

/// Options of the hyper-network training stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue the latest checkpoint instead of starting over.
    pub resume: bool,
    /// Stop once the step counter reaches this value.
    pub stop_after: Option<usize>,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub genome: Genome,
    pub eer: f64,
    pub fitness: f64,
    pub param_count: usize,
}

/// Rank-sum comparison of candidate EERs from the search strategy and from random sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateComparison {
    pub strategy: String,
    pub n_strategy: usize,
    pub n_random: usize,
    pub mean_eer_strategy: f64,
    pub mean_eer_random: f64,
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "strategy candidates have lower EER".
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub strategy: String,
    pub best_genome: Genome,
    pub best_fitness: f64,
    pub total_evaluations: usize,
    pub budget_exhausted: bool,
    pub comparison: Option<CandidateComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub systems: Vec<SystemRow>,
    pub search: Option<SearchSummary>,
}

impl Report {
    pub fn system(&self, name: &str) -> Option<&SystemRow> {
        self.systems.iter().find(|r| r.system == name)
    }
}

/// A run directory with its manifest; each stage method writes a new versioned directory.
pub struct Run {
    pub root: PathBuf,
    pub config: ExperimentConfig,
    pub manifest: RunManifest,
}

struct Pending {
    stage: &'static str,
    rel: String,
    dir: PathBuf,
    inputs: Vec<String>,
    start: Instant,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn candidates_csv(evals: &[Evaluation], eer_of: impl Fn(f64) -> Option<f64>) -> String {
    let mut s = String::from("index,generation,fitness,eer,genome\n");
    for e in evals {
        let eer = eer_of(e.fitness).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},\"{}\"", e.index, e.generation, e.fitness, eer, e.genome);
    }
    s
}

fn trace_csv(trace: &[f64], first_step: usize) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", first_step + i);
    }
    s
}

/// Candidate EERs of a search outcome, in evaluation order.
pub fn candidate_eers(outcome: &SearchOutcome) -> Vec<f64> {
    outcome.evaluations.iter().map(|e| 1.0 - e.fitness).collect()
}

pub fn compare_candidates(strategy: &SearchOutcome, random: &SearchOutcome) -> Result<CandidateComparison> {
    let (a, b) = (candidate_eers(strategy), candidate_eers(random));
    let RankSum { u, z, p_value } = rank_sum_less(&a, &b)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CandidateComparison {
        strategy: strategy.strategy.to_string(),
        n_strategy: a.len(),
        n_random: b.len(),
        mean_eer_strategy: mean(&a),
        mean_eer_random: mean(&b),
        u,
        z,
        p_value,
    })
}

fn save_subnet(dir: &Path, name: &str, sub: &SubNet) -> Result<()> {
    sub.net.save(dir, name)?;
    write_file(&dir.join(format!("{name}.genome")), &format!("{}\n", sub.genome))
}

fn load_subnet(dir: &Path, name: &str) -> Result<SubNet> {
    let net = HyperNet::load(dir, name)?;
    let path = dir.join(format!("{name}.genome"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(SubNet {
        genome: Genome::decode(text.trim())?,
        net,
    })
}

fn wav_corpus(manifest: &Path) -> Result<Corpus> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let cfg = FeatureConfig::default();
    let mut utterances = Vec::new();
    for e in read_manifest(manifest)? {
        let path = base.join(&e.utterance_path);
        let wave = read_wav(&path)?;
        let features = extract_features(&wave, &cfg, Crop::Center)
            .map_err(|err| Error::Contract(format!("{}: {err}", path.display())))?;
        utterances.push(Utterance {
            id: utterance_id(&e.utterance_path),
            speaker_id: e.speaker_id,
            split: e.split,
            features,
            latent: None,
        });
    }
    let corpus = Corpus { utterances };
    corpus.check_splits()?;
    Ok(corpus)
}

impl Run {
    /// Validates `config`, then opens or creates the run directory it names.
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        let config = config.resolved()?;
        let root = config.out.clone();
        let manifest = RunManifest::open(&root, &config)?;
        Ok(Self { root, config, manifest })
    }

    fn begin(&self, stage: &'static str, inputs: Vec<String>) -> Result<Pending> {
        let (rel, dir) = next_stage_dir(&self.root, stage)?;
        Ok(Pending {
            stage,
            rel,
            dir,
            inputs,
            start: Instant::now(),
        })
    }

    fn commit(&mut self, p: Pending, notes: BTreeMap<String, serde_json::Value>) -> Result<StageRecord> {
        let record = StageRecord {
            stage: p.stage.to_string(),
            outputs: checksum_tree(&p.dir)?,
            dir: p.rel,
            inputs: p.inputs,
            wall_clock_secs: p.start.elapsed().as_secs_f64(),
            notes,
        };
        self.manifest.config = self.config.clone();
        self.manifest.stages.push(record.clone());
        self.manifest.save(&self.root)?;
        Ok(record)
    }

    fn record_by_dir(&self, dir: &str) -> Result<&StageRecord> {
        self.manifest
            .stages
            .iter()
            .find(|s| s.dir == dir)
            .ok_or_else(|| Error::Lookup(format!("stage directory `{dir}` missing from the run manifest")))
    }

    /// Latest record of `stage`, checked against its checksums.
    fn input(&self, stage: &str, command: &str) -> Result<StageRecord> {
        let r = self.manifest.require(stage, command)?.clone();
        verify(&self.root, &r)?;
        Ok(r)
    }

    /// The data record a downstream record was built from.
    fn upstream_data(&self, record: &StageRecord) -> Result<StageRecord> {
        for dir in &record.inputs {
            let r = self.record_by_dir(dir)?;
            if r.stage == STAGE_DATA {
                return Ok(r.clone());
            }
            if let Ok(d) = self.upstream_data(r) {
                return Ok(d);
            }
        }
        Err(Error::Lookup(format!("no data stage upstream of {}", record.dir)))
    }

    fn load_data(&self, record: &StageRecord) -> Result<Corpus> {
        verify(&self.root, record)?;
        load_corpus(&self.root.join(&record.dir).join("manifest.json"))
    }

    fn save_data(&mut self, p: Pending, corpus: &Corpus) -> Result<StageRecord> {
        save_corpus(&p.dir, corpus)?;
        write_file(&p.dir.join("trials.txt"), &format_trials(&corpus.trial_set().trials))?;
        let notes = BTreeMap::from([
            ("utterances".to_string(), json!(corpus.utterances.len())),
            ("train_speakers".to_string(), json!(corpus.train_speakers().len())),
        ]);
        self.commit(p, notes)
    }

    /// Renders the synthetic corpus to a feature cache.
    pub fn gen_data(&mut self) -> Result<StageRecord> {
        let CorpusSource::Synthetic(spec) = &self.config.corpus else {
            return Err(Error::Config("gen-data needs a synthetic corpus; use extract-features for WAV input".into()));
        };
        let corpus = crate::audiofeat::make_synthetic_corpus(spec)?;
        let p = self.begin(STAGE_DATA, Vec::new())?;
        self.save_data(p, &corpus)
    }

    /// Computes fixed-length MFCCs for every WAV file in the configured manifest.
    pub fn extract_features(&mut self) -> Result<StageRecord> {
        let CorpusSource::Wav { manifest } = &self.config.corpus else {
            return Err(Error::Config("extract-features needs a WAV manifest corpus; use gen-data for synthetic data".into()));
        };
        let corpus = wav_corpus(manifest)?;
        let p = self.begin(STAGE_DATA, Vec::new())?;
        self.save_data(p, &corpus)
    }

    pub fn train_hypernet(&mut self, opts: TrainOptions) -> Result<StageRecord> {
        let cfg = self.config.train.clone();
        let (mut net, state, data) = if opts.resume {
            let prev = self.input(STAGE_HYPERNET, "train-hypernet")?;
            let dir = self.root.join(&prev.dir);
            let net = HyperNet::load(&dir, HYPERNET_STEM)?;
            if net.config != self.config.hypernet {
                return Err(Error::Config("hyper-network checkpoint was built from a different configuration".into()));
            }
            let state = TrainState::load(&dir, cfg.adam)?;
            if state.step >= cfg.steps {
                return Err(Error::Config(format!("{} already finished all {} steps", prev.dir, cfg.steps)));
            }
            let data = self.upstream_data(&prev)?;
            (net, Some(state), data)
        } else {
            let data = self.input(STAGE_DATA, "gen-data")?;
            (HyperNet::build(self.config.hypernet.clone())?, None, data)
        };
        let corpus = self.load_data(&data)?;
        let mut trainer = Trainer::new(&net, &corpus, cfg.clone(), PathSampler::Uniform(net.config.space()), true)?;
        if let Some(s) = state {
            trainer = trainer.resume(s)?;
        }
        let mut inputs = vec![data.dir.clone()];
        if opts.resume {
            inputs.push(self.manifest.latest(STAGE_HYPERNET).expect("checked above").dir.clone());
        }
        let p = self.begin(STAGE_HYPERNET, inputs)?;
        trainer.run(&mut net, opts.stop_after)?;
        net.save(&p.dir, HYPERNET_STEM)?;
        trainer.state.save(&p.dir)?;
        write_file(&p.dir.join("loss_trace.csv"), &trace_csv(&trainer.state.trace, 0))?;
        let notes = BTreeMap::from([
            ("step".to_string(), json!(trainer.state.step)),
            ("steps".to_string(), json!(cfg.steps)),
            ("complete".to_string(), json!(trainer.done())),
            ("lr_start".to_string(), json!(lr_at(cfg.base_lr, 0, cfg.steps))),
            ("lr_end".to_string(), json!(lr_at(cfg.base_lr, cfg.steps, cfg.steps))),
        ]);
        self.commit(p, notes)
    }

    fn trained_hypernet(&self) -> Result<(StageRecord, HyperNet)> {
        let rec = self.input(STAGE_HYPERNET, "train-hypernet")?;
        if rec.notes.get("complete") != Some(&json!(true)) {
            return Err(Error::Config(format!(
                "{} stopped early; finish it with `train-hypernet --resume`",
                rec.dir
            )));
        }
        let net = HyperNet::load(&self.root.join(&rec.dir), HYPERNET_STEM)?;
        let want = &self.config.hypernet;
        if net.config.mode != want.mode || net.config.n_blocks != want.n_blocks {
            return Err(Error::Config(format!(
                "checkpoint {} is {:?} with {} blocks, configuration asks for {:?} with {}",
                rec.dir, net.config.mode, net.config.n_blocks, want.mode, want.n_blocks
            )));
        }
        Ok((rec, net))
    }

    fn search_eval_set(&self, net: &HyperNet, corpus: &Corpus) -> Result<EvalSet> {
        let t = self.config.trials;
        EvalSet::from_corpus(net, corpus)?.subset(
            t.n_speakers.unwrap_or(usize::MAX),
            t.n_enroll.unwrap_or(usize::MAX),
            t.n_test.unwrap_or(usize::MAX),
        )
    }

    pub fn search(&mut self) -> Result<StageRecord> {
        let (hrec, net) = self.trained_hypernet()?;
        let data = self.upstream_data(&hrec)?;
        let corpus = self.load_data(&data)?;
        let eval = self.search_eval_set(&net, &corpus)?;
        let oracle = HyperNetOracle { net: &net, eval: &eval };
        let section = &self.config.search;
        let strategy = strategy_by_name(&section.strategy)?;
        let p = self.begin(STAGE_SEARCH, vec![hrec.dir.clone()])?;
        let outcome = strategy.run(&section.config, &oracle)?;
        let eer_of = |f: f64| Some(1.0 - f);
        write_history(&p.dir.join("history.csv"), &outcome.history)?;
        write_result(&p.dir.join("result.json"), &outcome.result(&oracle))?;
        write_file(&p.dir.join("candidates.csv"), &candidates_csv(&outcome.evaluations, eer_of))?;
        let comparison = if section.compare_random {
            let random = random_search_baseline(&section.config, &oracle, outcome.total_evaluations())?;
            write_file(&p.dir.join("random_candidates.csv"), &candidates_csv(&random.evaluations, eer_of))?;
            write_result(&p.dir.join("random_result.json"), &random.result(&oracle))?;
            Some(compare_candidates(&outcome, &random)?)
        } else {
            None
        };
        let summary = SearchSummary {
            strategy: strategy.name().to_string(),
            best_genome: outcome.best.genome.clone(),
            best_fitness: outcome.best.fitness,
            total_evaluations: outcome.total_evaluations(),
            budget_exhausted: outcome.budget_exhausted,
            comparison,
        };
        write_json(&p.dir.join("summary.json"), &summary)?;
        let notes = BTreeMap::from([
            ("best_fitness".to_string(), json!(summary.best_fitness)),
            ("total_evaluations".to_string(), json!(summary.total_evaluations)),
        ]);
        self.commit(p, notes)
    }

    /// Retrains `genome` (default: the latest search result) and the baseline from fresh weights.
    pub fn retrain(&mut self, genome: Option<Genome>) -> Result<StageRecord> {
        let space = self.config.hypernet.space();
        let (genome, mut inputs) = match genome {
            Some(g) => (g, Vec::new()),
            None => {
                let s = self.input(STAGE_SEARCH, "search")?;
                let r = read_result(&self.root.join(&s.dir).join("result.json"))?;
                (r.genome, vec![s.dir])
            }
        };
        validate(&genome, &space).map_err(|v| Error::Config(format!("genome {genome}: {}", v.join("; "))))?;
        let data = match inputs.first() {
            Some(dir) => self.upstream_data(&self.record_by_dir(dir)?.clone())?,
            None => self.input(STAGE_DATA, "gen-data")?,
        };
        inputs.insert(0, data.dir.clone());
        let corpus = self.load_data(&data)?;
        let fresh = HyperNet::build(self.config.hypernet.clone())?;
        let p = self.begin(STAGE_RETRAIN, inputs)?;
        let mut notes = BTreeMap::new();
        for (name, g) in [("baseline", self.config.baseline_genome()), ("searched", genome)] {
            let mut sub = fresh.extract_subnet(&g)?;
            let trace = retrain(&mut sub, &corpus, self.config.retrain.clone())?;
            save_subnet(&p.dir, name, &sub)?;
            write_file(&p.dir.join(format!("{name}_trace.csv")), &trace_csv(&trace, 0))?;
            notes.insert(format!("{name}_params"), json!(sub.param_count()));
        }
        self.commit(p, notes)
    }

    /// Scores the full trial list with both retrained systems.
    pub fn evaluate(&mut self) -> Result<StageRecord> {
        let rec = self.input(STAGE_RETRAIN, "retrain")?;
        let data = self.upstream_data(&rec)?;
        let corpus = self.load_data(&data)?;
        let dir = self.root.join(&rec.dir);
        let p = self.begin(STAGE_EVALUATE, vec![rec.dir.clone(), data.dir.clone()])?;
        let mut rows = Vec::new();
        for name in SYSTEMS {
            let sub = load_subnet(&dir, name)?;
            let eval = EvalSet::from_corpus(&sub.net, &corpus)?;
            let embs = eval.embeddings(&sub.net, &sub.genome)?;
            let scores = score_trials(&embs, &eval.trials, &sub.net.score_params()?)?;
            write_scores(&p.dir.join(format!("{name}_scores.txt")), &scores)?;
            let eer = compute_eer(&scores)?;
            rows.push(SystemRow {
                system: name.to_string(),
                genome: sub.genome.clone(),
                eer,
                fitness: fitness_from_eer(eer),
                param_count: sub.param_count(),
            });
        }
        write_json(&p.dir.join("evaluation.json"), &rows)?;
        let notes = rows.iter().map(|r| (format!("{}_eer", r.system), json!(r.eer))).collect();
        self.commit(p, notes)
    }

    /// Collects the evaluation table and the search summary into `report.json` and `table.csv`.
    pub fn report(&mut self) -> Result<Report> {
        let ev = self.input(STAGE_EVALUATE, "evaluate")?;
        let systems: Vec<SystemRow> = read_json(&self.root.join(&ev.dir).join("evaluation.json"))?;
        let mut inputs = vec![ev.dir.clone()];
        let retrain_dir = &ev.inputs[0];
        let search_dir = self
            .record_by_dir(retrain_dir)?
            .inputs
            .iter()
            .find(|d| d.starts_with(STAGE_SEARCH))
            .cloned();
        let search = match search_dir {
            Some(d) => {
                let rec = self.record_by_dir(&d)?.clone();
                verify(&self.root, &rec)?;
                inputs.push(d.clone());
                Some(read_json::<SearchSummary>(&self.root.join(&d).join("summary.json"))?)
            }
            None => None,
        };
        let report = Report {
            seed: self.config.seed,
            systems,
            search,
        };
        let p = self.begin(STAGE_REPORT, inputs)?;
        write_json(&p.dir.join("report.json"), &report)?;
        let mut table = String::from("system,eer,fitness,param_count,genome\n");
        for r in &report.systems {
            let _ = writeln!(table, "{},{},{},{},\"{}\"", r.system, r.eer, r.fitness, r.param_count, r.genome);
        }
        write_file(&p.dir.join("table.csv"), &table)?;
        self.commit(p, BTreeMap::new())?;
        Ok(report)
    }
}

/// Every stage in order: data, hyper-network training, search, retraining, evaluation, report.
pub fn run_all(config: ExperimentConfig) -> Result<Report> {
    let mut run = Run::open(config)?;
    match run.config.corpus {
        CorpusSource::Synthetic(_) => run.gen_data()?,
        CorpusSource::Wav { .. } => run.extract_features()?,
    };
    run.train_hypernet(TrainOptions::default())?;
    run.search()?;
    run.retrain(None)?;
    run.evaluate()?;
    run.report()
}
