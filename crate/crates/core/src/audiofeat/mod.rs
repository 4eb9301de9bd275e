//! Waveform to fixed-size MFCC matrices, plus synthetic speaker corpora.

mod corpus;
mod wav;

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub use corpus::{
    latent_oracle_eer, load_corpus, make_synthetic_corpus, save_corpus, synthetic_waveform, Corpus, ManifestEntry,
    read_manifest, utterance_id, write_manifest, Split, SyntheticSpec, Utterance, FEATURES_TENSOR, LATENT_TENSOR,
};
pub use wav::{read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const FFT_LEN: usize = 512;
pub const N_MELS: usize = 40;
pub const N_CEPS: usize = 40;
pub const TARGET_FRAMES: usize = 300;
/// Half-width in frames of the mean-normalization window.
pub const NORM_HALF_WINDOW: usize = 150;
pub const VAD_MARGIN: f64 = 3.0;
const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Hamming-windowed frames of 400 samples every 160; empty when the signal is shorter than a frame.
pub fn frame_signal(w: &Waveform) -> Vec<Vec<f64>> {
    let n = w.samples.len();
    if n < FRAME_LEN {
        return Vec::new();
    }
    let win = hamming(FRAME_LEN);
    let count = (n - FRAME_LEN) / HOP + 1;
    (0..count)
        .map(|i| {
            let s = &w.samples[i * HOP..i * HOP + FRAME_LEN];
            s.iter().zip(&win).map(|(x, h)| x * h).collect()
        })
        .collect()
}

pub fn log_energy(frame: &[f64]) -> f64 {
    (frame.iter().map(|x| x * x).sum::<f64>() + LOG_FLOOR).ln()
}

/// Keeps frames whose log-energy exceeds the utterance mean log-energy minus `margin`.
pub fn energy_vad(frames: &[Vec<f64>], margin: f64) -> Vec<bool> {
    if frames.is_empty() {
        return Vec::new();
    }
    let e: Vec<f64> = frames.iter().map(|f| log_energy(f)).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    e.iter().map(|&v| v > mean - margin).collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with mel-spaced edges over 0..Nyquist, as sparse `(bin, weight)` lists.
pub fn mel_filterbank(n_mels: usize, fft_len: usize, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = fft_len / 2 + 1;
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_len as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .filter_map(|k| {
                    let f = bin_hz(k);
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|n| {
            let s = if n == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            s * x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * n as f64 * (i as f64 + 0.5) / m).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Inverse of the orthonormal DCT-II when the coefficient count equals the input length.
pub fn idct2(c: &[f64]) -> Vec<f64> {
    let m = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(n, v)| {
                    let s = if n == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    s * v * (PI * n as f64 * (i as f64 + 0.5) / m).cos()
                })
                .sum::<f64>()
        })
        .collect()
}

struct MfccPlan {
    fft: Arc<dyn Fft<f64>>,
    bank: Vec<Vec<(usize, f64)>>,
}

fn plan() -> &'static MfccPlan {
    static PLAN: OnceLock<MfccPlan> = OnceLock::new();
    PLAN.get_or_init(|| MfccPlan {
        fft: FftPlanner::new().plan_fft_forward(FFT_LEN),
        bank: mel_filterbank(N_MELS, FFT_LEN, SAMPLE_RATE),
    })
}

/// Log mel energies of one frame from its 512-point magnitude spectrum.
pub fn log_mel(frame: &[f64]) -> Vec<f64> {
    let p = plan();
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(FFT_LEN)
        .collect();
    p.fft.process(&mut buf);
    p.bank
        .iter()
        .map(|filt| {
            let e: f64 = filt.iter().map(|&(k, w)| w * buf[k].norm()).sum();
            e.max(LOG_FLOOR).ln()
        })
        .collect()
}

/// MFCC matrix `[40, T]`, one column per frame, `c0` kept.
pub fn mfcc(frames: &[Vec<f64>]) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to analyse".into()));
    }
    let t = frames.len();
    let mut data = vec![0.0; N_CEPS * t];
    for (j, f) in frames.iter().enumerate() {
        for (i, c) in dct2(&log_mel(f), N_CEPS).into_iter().enumerate() {
            data[i * t + j] = c;
        }
    }
    Tensor::new(vec![N_CEPS, t], data)
}

/// Normalization window `[lo, hi)` for column `j` of `t`: `2·half + 1` columns centred on `j`,
/// shifted inward at the edges, covering everything when `t` is shorter.
pub fn norm_window(j: usize, t: usize, half: usize) -> (usize, usize) {
    let len = (2 * half + 1).min(t);
    let lo = j.saturating_sub(half).min(t - len);
    (lo, lo + len)
}

/// Subtracts from every column the mean of the columns in its normalization window.
pub fn mean_normalize(f: &Tensor) -> Result<Tensor> {
    mean_normalize_with(f, NORM_HALF_WINDOW)
}

pub fn mean_normalize_with(f: &Tensor, half: usize) -> Result<Tensor> {
    let (d, t) = dims(f)?;
    let x = f.data();
    let mut out = vec![0.0; d * t];
    let mut means = vec![0.0; d];
    let mut cached = None;
    for j in 0..t {
        let (lo, hi) = norm_window(j, t, half);
        if cached != Some(lo) {
            // Mean of offsets from the first column, so constant rows give exact zeros.
            for (i, m) in means.iter_mut().enumerate() {
                let row = &x[i * t..(i + 1) * t];
                let base = row[lo];
                *m = row[lo..hi].iter().map(|v| v - base).sum::<f64>() / (hi - lo) as f64;
            }
            cached = Some(lo);
        }
        for i in 0..d {
            out[i * t + j] = (x[i * t + j] - x[i * t + lo]) - means[i];
        }
    }
    Tensor::new(vec![d, t], out)
}

fn dims(f: &Tensor) -> Result<(usize, usize)> {
    match f.shape() {
        &[d, t] => Ok((d, t)),
        s => Err(Error::InvalidShape(format!("feature matrix must be [D, T], got {s:?}"))),
    }
}

/// Where a fixed-length window starts when the input is longer than the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crop {
    Center,
    At(usize),
}

impl Crop {
    pub fn random<R: Rng + ?Sized>(t: usize, target: usize, rng: &mut R) -> Crop {
        Crop::At(rng.random_range(0..=t.saturating_sub(target)))
    }
}

/// Crops to `target` columns, or repeats columns cyclically when shorter.
pub fn fix_length(f: &Tensor, target: usize, crop: Crop) -> Result<Tensor> {
    let (d, t) = dims(f)?;
    let start = if t > target {
        match crop {
            Crop::Center => (t - target) / 2,
            Crop::At(s) if s + target <= t => s,
            Crop::At(s) => {
                return Err(Error::Contract(format!(
                    "crop start {s} leaves fewer than {target} of {t} columns"
                )))
            }
        }
    } else {
        0
    };
    let x = f.data();
    let mut out = Vec::with_capacity(d * target);
    for i in 0..d {
        out.extend((0..target).map(|j| x[i * t + (start + j) % t]));
    }
    Tensor::new(vec![d, target], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub vad_margin: f64,
    pub target_frames: usize,
    pub norm_half_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            vad_margin: VAD_MARGIN,
            target_frames: TARGET_FRAMES,
            norm_half_window: NORM_HALF_WINDOW,
        }
    }
}

/// Frame, VAD, MFCC, mean-normalize and fix length; short signals are rejected with `EmptyInput`.
pub fn extract_features(w: &Waveform, cfg: &FeatureConfig, crop: Crop) -> Result<Tensor> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE}",
            w.sample_rate
        )));
    }
    let frames = frame_signal(w);
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!(
            "signal of {} samples is shorter than one {FRAME_LEN}-sample frame",
            w.samples.len()
        )));
    }
    let mask = energy_vad(&frames, cfg.vad_margin);
    let kept: Vec<Vec<f64>> = frames.into_iter().zip(mask).filter(|(_, k)| *k).map(|(f, _)| f).collect();
    let m = mfcc(&kept)?;
    let n = mean_normalize_with(&m, cfg.norm_half_window)?;
    fix_length(&n, cfg.target_frames, crop)
}
