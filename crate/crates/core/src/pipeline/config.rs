use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audiofeat::SyntheticSpec;
use crate::error::{Error, Result};
use crate::evosearch::{strategy_by_name, SearchConfig};
use crate::hypernet::{HyperNetConfig, TrainConfig};
use crate::searchspace::{validate, ContextWindow, Genome, Mode, OpKind};

/// Where utterances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic(SyntheticSpec),
    /// A JSON manifest of 16 kHz mono WAV files, resolved relative to the manifest.
    Wav { manifest: PathBuf },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SyntheticSpec::default())
    }
}

/// The trials scored for every search candidate; final evaluation uses the full trial list.
/// Unset limits keep everything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSpec {
    pub n_speakers: Option<usize>,
    pub n_enroll: Option<usize>,
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub strategy: String,
    #[serde(flatten)]
    pub config: SearchConfig,
    /// Also sample as many random candidates as the strategy evaluated, for comparison.
    pub compare_random: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            strategy: "memetic".into(),
            config: SearchConfig::default(),
            compare_random: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusSource,
    pub hypernet: HyperNetConfig,
    pub train: TrainConfig,
    pub search: SearchSection,
    pub trials: TrialSpec,
    pub retrain: TrainConfig,
    /// Hand-designed reference genome; defaults to all-Conv3x3 blocks or the x-vector contexts.
    pub baseline: Option<Genome>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            corpus: CorpusSource::default(),
            hypernet: HyperNetConfig::default(),
            train: TrainConfig::default(),
            search: SearchSection::default(),
            trials: TrialSpec::default(),
            retrain: TrainConfig {
                steps: 1000,
                warmup_steps: 250,
                ..TrainConfig::default()
            },
            baseline: None,
        }
    }
}

impl ExperimentConfig {
    /// Small synthetic experiment that finishes in minutes on one CPU core.
    pub fn desk() -> Self {
        let lr = 0.002;
        Self {
            out: PathBuf::from("runs/desk"),
            hypernet: HyperNetConfig {
                filters: 8,
                n_blocks: 6,
                input_pool: Some((20, 20)),
                tail_pool: (5, 1),
                ..HyperNetConfig::default()
            },
            train: TrainConfig {
                steps: 2000,
                warmup_steps: 500,
                base_lr: lr,
                ..TrainConfig::default()
            },
            search: SearchSection {
                config: SearchConfig {
                    population: 20,
                    tournament: 10,
                    generations: 10_000,
                    budget: Some(300),
                    ..SearchConfig::default()
                },
                compare_random: true,
                ..SearchSection::default()
            },
            trials: TrialSpec {
                n_speakers: Some(30),
                n_enroll: Some(3),
                n_test: Some(3),
            },
            retrain: TrainConfig {
                steps: 1000,
                warmup_steps: 250,
                base_lr: lr,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Pushes the top-level seed into every module and fills derived defaults.
    pub fn resolved(mut self) -> Result<Self> {
        if let CorpusSource::Synthetic(s) = &mut self.corpus {
            s.seed = self.seed;
        }
        self.hypernet.seed = self.seed;
        self.train.seed = self.seed;
        self.retrain.seed = self.seed;
        self.search.config.seed = self.seed;
        self.hypernet = self.hypernet.resolved()?;
        if self.baseline.is_none() {
            self.baseline = Some(default_baseline(&self.hypernet));
        }
        self.check()?;
        Ok(self)
    }

    pub fn baseline_genome(&self) -> Genome {
        self.baseline.clone().unwrap_or_else(|| default_baseline(&self.hypernet))
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.corpus {
            CorpusSource::Synthetic(s) => {
                s.check()?;
                if s.n_train_speakers != self.hypernet.n_train_speakers {
                    return bad(format!(
                        "corpus has {} training speakers but the softmax head expects {}",
                        s.n_train_speakers, self.hypernet.n_train_speakers
                    ));
                }
                for (name, t) in [("train", &self.train), ("retrain", &self.retrain)] {
                    if t.batch_utts > s.utts_per_speaker {
                        return bad(format!(
                            "{name}.batch_utts {} exceeds {} utterances per speaker",
                            t.batch_utts, s.utts_per_speaker
                        ));
                    }
                }
            }
            CorpusSource::Wav { manifest } => {
                if !manifest.is_file() {
                    return bad(format!("WAV manifest {} not found", manifest.display()));
                }
            }
        }
        for (name, t) in [("train", &self.train), ("retrain", &self.retrain)] {
            if t.batch_speakers < 2 || t.batch_speakers > self.hypernet.n_train_speakers {
                return bad(format!(
                    "{name}.batch_speakers {} must be in 2..={} training speakers",
                    t.batch_speakers, self.hypernet.n_train_speakers
                ));
            }
            if t.batch_utts < 2 {
                return bad(format!("{name}.batch_utts must be at least 2"));
            }
            if !(t.base_lr > 0.0 && t.base_lr.is_finite()) {
                return bad(format!("{name}.base_lr must be positive"));
            }
            if t.warmup_steps > t.steps {
                return bad(format!("{name}.warmup_steps exceeds {name}.steps"));
            }
        }
        self.search.config.check()?;
        strategy_by_name(&self.search.strategy)?;
        let t = &self.trials;
        if [t.n_speakers, t.n_enroll, t.n_test].contains(&Some(0)) {
            return bad("trials.n_speakers, n_enroll and n_test must be positive".into());
        }
        if let Some(b) = &self.baseline {
            validate(b, &self.hypernet.space())
                .map_err(|v| Error::Config(format!("baseline genome {b}: {}", v.join("; "))))?;
        }
        Ok(())
    }
}

/// All-Conv3x3 blocks, or the x-vector's context windows in TDNN mode.
pub fn default_baseline(cfg: &HyperNetConfig) -> Genome {
    match cfg.mode {
        Mode::AutoVector => Genome::uniform_blocks(OpKind::Conv3x3, cfg.n_blocks),
        Mode::Tdnn => Genome::Tdnn(
            [2, 2, 3, 0, 0]
                .iter()
                .map(|&d| ContextWindow::new(d).expect("half-width in range"))
                .collect(),
        ),
    }
}
