use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audiofeat::{Waveform, N_CEPS, SAMPLE_RATE, TARGET_FRAMES};
use crate::error::{Error, Result};
use crate::tensorcore::{checkpoint, ParamSet, Tensor};
use crate::verifier::{compute_eer, scaled_similarity, ScoreParams, ScoreSet, Trial, TrialSet};

pub const FEATURES_TENSOR: &str = "features";
pub const LATENT_TENSOR: &str = "latent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Enroll,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub split: Split,
    pub features: Tensor,
    /// Generating latent, present for synthetic utterances only.
    pub latent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub utterance_path: String,
    pub split: Split,
}

impl Corpus {
    /// Utterance indices of each training speaker, speakers in id order.
    pub fn train_speakers(&self) -> Vec<(String, Vec<usize>)> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if u.split == Split::Train {
                map.entry(&u.speaker_id).or_default().push(i);
            }
        }
        map.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn by_id(&self) -> BTreeMap<&str, &Utterance> {
        self.utterances.iter().map(|u| (u.id.as_str(), u)).collect()
    }

    /// Every evaluation utterance scored against every enrolled speaker.
    pub fn trial_set(&self) -> TrialSet {
        let mut enrollment: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for u in self.utterances.iter().filter(|u| u.split == Split::Enroll) {
            enrollment.entry(u.speaker_id.clone()).or_default().push(u.id.clone());
        }
        let mut trials = Vec::new();
        for u in self.utterances.iter().filter(|u| u.split == Split::Eval) {
            for spk in enrollment.keys() {
                trials.push(Trial {
                    enroll_speaker: spk.clone(),
                    test_utterance: u.id.clone(),
                    target: *spk == u.speaker_id,
                });
            }
        }
        TrialSet { enrollment, trials }
    }

    /// Checks unique utterance ids and that no speaker has both training and evaluation material.
    pub fn check_splits(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut roles: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for u in &self.utterances {
            if !ids.insert(u.id.as_str()) {
                return Err(Error::Config(format!("duplicate utterance id `{}`", u.id)));
            }
            roles.entry(&u.speaker_id).or_default().insert(u.split);
        }
        for (spk, r) in roles {
            if r.contains(&Split::Train) && r.len() > 1 {
                return Err(Error::Config(format!(
                    "speaker `{spk}` appears in training and evaluation splits"
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.utterances.iter().filter(|u| u.split == split).count()
    }
}

/// Parameters of a synthetic corpus rendered directly as feature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train_speakers: usize,
    pub n_eval_speakers: usize,
    pub utts_per_speaker: usize,
    /// Enrollment utterances per evaluation speaker; the rest are test utterances.
    pub n_enroll: usize,
    pub latent_dim: usize,
    /// Norm of every speaker latent.
    pub separation: f64,
    /// Expected norm of the per-utterance latent perturbation.
    pub noise: f64,
    /// Per-cell Gaussian noise added to the rendered matrix.
    pub frame_noise: f64,
    /// Depth of the per-utterance sinusoidal temporal modulation.
    pub modulation: f64,
    pub n_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train_speakers: 30,
            n_eval_speakers: 30,
            utts_per_speaker: 20,
            n_enroll: 10,
            latent_dim: 16,
            // Latent oracle EER near 1% at these levels.
            separation: 1.0,
            noise: 0.7,
            frame_noise: 1.0,
            modulation: 0.5,
            n_frames: TARGET_FRAMES,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn check(&self) -> Result<()> {
        if self.utts_per_speaker < 2 {
            return Err(Error::Config(format!(
                "need at least 2 utterances per speaker, got {}",
                self.utts_per_speaker
            )));
        }
        if self.n_eval_speakers > 0 && (self.n_enroll == 0 || self.n_enroll >= self.utts_per_speaker) {
            return Err(Error::Config(format!(
                "n_enroll must be in 1..{}, got {}",
                self.utts_per_speaker, self.n_enroll
            )));
        }
        if !(self.separation >= 0.0 && self.noise >= 0.0 && self.frame_noise >= 0.0) {
            return Err(Error::Config("separation and noise levels must be non-negative".into()));
        }
        if self.latent_dim == 0 || self.n_frames == 0 {
            return Err(Error::Config("latent_dim and n_frames must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fixed rendering matrix `[40, L]`: each latent axis is a unit-norm spectral bump.
fn rendering_matrix(latent_dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut r = vec![0.0; N_CEPS * latent_dim];
    for l in 0..latent_dim {
        let center = rng.random_range(0.0..N_CEPS as f64);
        let width = rng.random_range(1.5..4.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let col: Vec<f64> = (0..N_CEPS)
            .map(|f| sign * (-(f as f64 - center).powi(2) / (2.0 * width * width)).exp())
            .collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (f, v) in col.into_iter().enumerate() {
            r[f * latent_dim + l] = v / norm;
        }
    }
    r
}

fn render(spec: &SyntheticSpec, r: &[f64], u: &[f64], rng: &mut ChaCha8Rng) -> Tensor {
    let l = spec.latent_dim;
    let t = spec.n_frames;
    let profile: Vec<f64> = (0..N_CEPS)
        .map(|f| r[f * l..(f + 1) * l].iter().zip(u).map(|(a, b)| a * b).sum())
        .collect();
    let period = rng.random_range(20.0..60.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let gain: Vec<f64> = (0..t)
        .map(|j| 1.0 + spec.modulation * (2.0 * PI * j as f64 / period + phase).sin())
        .collect();
    let mut data = Vec::with_capacity(N_CEPS * t);
    for p in &profile {
        for g in &gain {
            data.push(p * g + spec.frame_noise * gaussian(rng));
        }
    }
    Tensor::new(vec![N_CEPS, t], data).expect("shape matches data")
}

/// Deterministic corpus of training speakers plus evaluation speakers split into enroll/eval.
pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = rendering_matrix(spec.latent_dim, &mut rng);
    let l = spec.latent_dim;
    let mut utterances = Vec::new();
    let n_spk = spec.n_train_speakers + spec.n_eval_speakers;
    for s in 0..n_spk {
        let train = s < spec.n_train_speakers;
        let speaker_id = if train {
            format!("tr{s:04}")
        } else {
            format!("ev{:04}", s - spec.n_train_speakers)
        };
        let dir: Vec<f64> = (0..l).map(|_| gaussian(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let z: Vec<f64> = dir.iter().map(|v| v / norm * spec.separation).collect();
        for m in 0..spec.utts_per_speaker {
            let u: Vec<f64> = z
                .iter()
                .map(|zi| zi + spec.noise / (l as f64).sqrt() * gaussian(&mut rng))
                .collect();
            let split = match (train, m < spec.n_enroll) {
                (true, _) => Split::Train,
                (false, true) => Split::Enroll,
                (false, false) => Split::Eval,
            };
            utterances.push(Utterance {
                id: format!("{speaker_id}_u{m:03}"),
                speaker_id: speaker_id.clone(),
                split,
                features: render(spec, &r, &u, &mut rng),
                latent: Some(u),
            });
        }
    }
    Ok(Corpus { utterances })
}

/// EER of cosine scoring on the generating latents: the best a scorer can do on this corpus.
pub fn latent_oracle_eer(corpus: &Corpus) -> Result<f64> {
    let trials = corpus.trial_set();
    let by_id = corpus.by_id();
    let latent = |id: &str| -> Result<&Vec<f64>> {
        by_id
            .get(id)
            .and_then(|u| u.latent.as_ref())
            .ok_or_else(|| Error::Lookup(format!("no latent for `{id}`")))
    };
    let mut centroids = BTreeMap::new();
    for (spk, ids) in &trials.enrollment {
        let mut c = vec![0.0; latent(&ids[0])?.len()];
        for id in ids {
            c.iter_mut().zip(latent(id)?).for_each(|(a, v)| *a += v / ids.len() as f64);
        }
        centroids.insert(spk.clone(), c);
    }
    let unit = ScoreParams { w: 1.0, b: 0.0 };
    let mut scores = ScoreSet::default();
    for t in &trials.trials {
        scores.push(
            scaled_similarity(&centroids[&t.enroll_speaker], latent(&t.test_utterance)?, &unit)?,
            t.target,
        );
    }
    compute_eer(&scores)
}

/// Writes one checkpoint per utterance under `dir/features/` and returns the manifest path.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let mut p = ParamSet::new();
        p.insert(FEATURES_TENSOR, u.features.clone());
        if let Some(l) = &u.latent {
            p.insert(LATENT_TENSOR, Tensor::vector(l.clone()));
        }
        let rel = format!("features/{}.ckpt", u.id);
        checkpoint::save(&dir.join(&rel), &p)?;
        manifest.push(ManifestEntry {
            speaker_id: u.speaker_id.clone(),
            utterance_path: rel,
            split: u.split,
        });
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Utterance id derived from a manifest path: the file name without extension.
pub fn utterance_id(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Loads a feature-cache corpus; paths in the manifest are relative to its directory.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::new();
    for e in read_manifest(manifest)? {
        let p = checkpoint::load(&base.join(&e.utterance_path))?;
        let mut features = p.get(FEATURES_TENSOR)?.clone();
        features.set_requires_grad(false);
        if features.shape().len() != 2 || features.shape()[0] != N_CEPS {
            return Err(Error::InvalidShape(format!(
                "{}: features must be [{N_CEPS}, T], got {:?}",
                e.utterance_path,
                features.shape()
            )));
        }
        let latent = p.get(LATENT_TENSOR).ok().map(|t| t.data().to_vec());
        utterances.push(Utterance {
            id: utterance_id(&e.utterance_path),
            speaker_id: e.speaker_id,
            split: e.split,
            features,
            latent,
        });
    }
    let corpus = Corpus { utterances };
    corpus.check_splits()?;
    Ok(corpus)
}

/// Random voiced/unvoiced test signal with silent gaps, amplitude within `[-1, 1]`.
pub fn synthetic_waveform<R: Rng + ?Sized>(rng: &mut R, n_samples: usize) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(80.0..300.0);
    let n_harm = rng.random_range(3..12);
    let amps: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = amps.iter().sum::<f64>().max(1e-3);
    let level = rng.random_range(0.05..0.6);
    let noise = rng.random_range(0.0..0.05);
    let seg = rng.random_range(1600..8000);
    let mut samples = Vec::with_capacity(n_samples);
    let mut voiced = true;
    for i in 0..n_samples {
        if i % seg == 0 {
            voiced = rng.random_bool(0.7);
        }
        let t = i as f64 / sr;
        let v: f64 = amps
            .iter()
            .enumerate()
            .map(|(h, a)| a * (2.0 * PI * f0 * (h + 1) as f64 * t).sin())
            .sum();
        let s = if voiced { level * v / total } else { 0.0 } + noise * rng.random_range(-1.0..1.0);
        samples.push(s.clamp(-1.0, 1.0));
    }
    Waveform::new(samples)
}
