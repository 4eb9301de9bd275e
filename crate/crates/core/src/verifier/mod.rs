//! Losses and verification metrics for speaker embeddings.

mod eer;
mod loss;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub use eer::{compute_eer, crossing, fitness_from_eer, raw_eer, roc_sweep, RocPoint};
pub use loss::{
    centroid, ge2e_anchor_losses, ge2e_loss_var, ge2e_per_anchor, ge2e_style_loss, scaled_similarity,
    scaled_similarity_var, softmax_xent_loss, EmbeddingBatch, ScoreParams, MIN_SCALE, OFFSET_PARAM,
    SCALE_PARAM,
};

/// One verification trial: does `test_utterance` belong to `enroll_speaker`?
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_speaker: String,
    pub test_utterance: String,
    pub target: bool,
}

/// Trials plus the enrollment utterances that define each speaker's centroid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialSet {
    pub enrollment: BTreeMap<String, Vec<String>>,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn n_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    /// Every utterance id an embedding is needed for, enrollment first, without repeats.
    pub fn utterance_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        let enroll = self.enrollment.values().flatten();
        let tests = self.trials.iter().map(|t| &t.test_utterance);
        for id in enroll.chain(tests) {
            if seen.insert(id.clone()) {
                out.push(id.clone());
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let nt = self.n_targets();
        if nt == 0 || nt == self.trials.len() {
            return Err(Error::Contract(format!(
                "trial set needs targets and non-targets, got {nt} of {}",
                self.trials.len()
            )));
        }
        Ok(())
    }
}

/// Trial scores with their same-speaker labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    pub fn push(&mut self, score: f64, target: bool) {
        self.scores.push(score);
        self.labels.push(target);
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.scores.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl FromIterator<(f64, bool)> for ScoreSet {
    fn from_iter<I: IntoIterator<Item = (f64, bool)>>(iter: I) -> Self {
        let mut s = ScoreSet::default();
        iter.into_iter().for_each(|(v, t)| s.push(v, t));
        s
    }
}

fn mean_of(tensors: &[&Tensor]) -> Vec<f64> {
    let mut acc = vec![0.0; tensors[0].numel()];
    for t in tensors {
        acc.iter_mut().zip(t.data()).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= tensors.len() as f64);
    acc
}

/// Scores each trial as `w·cos(enrollment centroid, test embedding) + b`.
pub fn score_trials(
    embeddings: &BTreeMap<String, Tensor>,
    trials: &TrialSet,
    params: &ScoreParams,
) -> Result<ScoreSet> {
    let lookup = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("no embedding for utterance `{id}`")))
    };
    let mut centroids: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (spk, utts) in &trials.enrollment {
        if utts.is_empty() {
            return Err(Error::Lookup(format!("speaker `{spk}` has no enrollment utterances")));
        }
        let ts = utts.iter().map(|u| lookup(u)).collect::<Result<Vec<_>>>()?;
        centroids.insert(spk, mean_of(&ts));
    }
    let mut out = ScoreSet::default();
    for t in &trials.trials {
        let c = centroids
            .get(t.enroll_speaker.as_str())
            .ok_or_else(|| Error::Lookup(format!("no enrollment for speaker `{}`", t.enroll_speaker)))?;
        let e = lookup(&t.test_utterance)?;
        out.push(scaled_similarity(c, e.data(), params)?, t.target);
    }
    Ok(out)
}

fn label_text(target: bool) -> &'static str {
    if target {
        "target"
    } else {
        "nontarget"
    }
}

fn parse_label(s: &str, line: usize) -> Result<bool> {
    match s {
        "target" => Ok(true),
        "nontarget" => Ok(false),
        other => Err(Error::Parse {
            position: line,
            message: format!("label must be `target` or `nontarget`, got `{other}`"),
        }),
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
}

/// Lines `enroll_speaker test_utterance {target|nontarget}`.
pub fn format_trials(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        let _ = writeln!(s, "{} {} {}", t.enroll_speaker, t.test_utterance, label_text(t.target));
    }
    s
}

/// Parses trial lines; the error position is the 1-based line number.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    records(text)
        .map(|(line, f)| match f.as_slice() {
            [spk, utt, label] => Ok(Trial {
                enroll_speaker: spk.to_string(),
                test_utterance: utt.to_string(),
                target: parse_label(label, line)?,
            }),
            _ => Err(Error::Parse {
                position: line,
                message: format!("expected 3 fields, got {}", f.len()),
            }),
        })
        .collect()
}

/// Lines `score label`, with scores printed round-trip exact.
pub fn format_scores(scores: &ScoreSet) -> String {
    let mut s = String::new();
    for (v, t) in scores.iter() {
        let _ = writeln!(s, "{v:?} {}", label_text(t));
    }
    s
}

pub fn parse_scores(text: &str) -> Result<ScoreSet> {
    records(text)
        .map(|(line, f)| match f.as_slice() {
            [v, label] => {
                let v: f64 = v.parse().map_err(|e| Error::Parse {
                    position: line,
                    message: format!("bad score `{v}`: {e}"),
                })?;
                Ok((v, parse_label(label, line)?))
            }
            _ => Err(Error::Parse {
                position: line,
                message: format!("expected 2 fields, got {}", f.len()),
            }),
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &ScoreSet) -> Result<()> {
    fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    parse_scores(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    fs::write(path, format_trials(trials)).map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    parse_trials(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
