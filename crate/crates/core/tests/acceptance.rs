//! Acceptance criteria A1 to A11, one PASS/FAIL line each.
//!
//! Runs as a plain binary so every line is printed; exits non-zero when any criterion fails.
//! A5 and A7 share three desk-scale end-to-end runs and take roughly half an hour on one core.

mod common;

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::cases::SUITE;
use common::{worst_gradient_error, GRAD_CASES, GRAD_TOL};
use evonas::audiofeat::{
    extract_features, frame_signal, latent_oracle_eer, make_synthetic_corpus, mean_normalize, synthetic_waveform,
    Crop, FeatureConfig, Waveform, FRAME_LEN, N_CEPS, SAMPLE_RATE, TARGET_FRAMES,
};
use evonas::evosearch::{
    evolve, evolve_with, mutate, random_search_baseline, FitnessOracle, MatchCountOracle, SearchConfig,
};
use evonas::hypernet::HyperNet;
use evonas::pipeline::{run_all, CorpusSource, ExperimentConfig, Report, Run};
use evonas::searchspace::{combos_per_block, space_size, uniform_sample, validate, Genome, SpaceConfig};
use evonas::tensorcore::Tensor;
use evonas::verifier::{ge2e_per_anchor, raw_eer, EmbeddingBatch, ScoreParams, ScoreSet};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------------------------------------------------------------------------------------------
// A1

fn a1() -> Verdict {
    // Non-empty subsets of at most two of six ops, by bitmask.
    let brute = (1u32..64).filter(|m| m.count_ones() <= 2).count();
    let mut ok = combos_per_block(6) == 21 && brute == 21;
    let mut sizes = Vec::new();
    for b in [1usize, 2, 12, 24, 48] {
        let mut want = BigUint::from(1u32);
        for _ in 0..b {
            want *= BigUint::from(brute);
        }
        ok &= space_size(b, 6) == want && SpaceConfig::auto_vector(b).size() == want;
        sizes.push(format!("B={b}: {} digits", want.to_string().len()));
    }
    verdict(ok, format!("combos_per_block(6) = {}; {}", combos_per_block(6), sizes.join(", ")))
}

// ---------------------------------------------------------------------------------------------
// A2

fn a2() -> Verdict {
    let mut worst = ("", 0.0f64);
    let mut ok = true;
    for (name, make) in SUITE {
        let e = worst_gradient_error(*make);
        ok &= e < GRAD_TOL;
        if e > worst.1 {
            worst = (name, e);
        }
    }
    verdict(
        ok,
        format!(
            "{} operations x {GRAD_CASES} cases, worst relative error {:.2e} ({}) vs {GRAD_TOL:e}",
            SUITE.len(),
            worst.1,
            worst.0
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// A3

/// Direct count at every candidate threshold (each distinct score, then +inf), accepting when
/// score ≥ threshold; linear interpolation across the first sign change of FAR − FRR.
fn exhaustive_eer(scores: &[(f64, bool)]) -> f64 {
    let nt = scores.iter().filter(|s| s.1).count();
    let nn = scores.len() - nt;
    let mut th: Vec<f64> = scores.iter().map(|s| s.0).collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    th.push(f64::INFINITY);
    let mut prev: Option<(f64, f64)> = None;
    for &t in &th {
        let fa = scores.iter().filter(|s| !s.1 && s.0 >= t).count();
        let fr = scores.iter().filter(|s| s.1 && s.0 < t).count();
        let (far, frr) = (fa as f64 / nn as f64, fr as f64 / nt as f64);
        // FRR ≥ FAR, compared without rounding.
        if fr * nn >= fa * nt {
            return match prev {
                Some((pfar, pfrr)) if fr * nn != fa * nt => {
                    let (d0, d1) = (pfar - pfrr, far - frr);
                    pfar + d0 / (d0 - d1) * (far - pfar)
                }
                _ => far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("the last threshold rejects everything")
}

fn a3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let (mut min_n, mut max_n) = (usize::MAX, 0);
    for i in 0..1000 {
        let n = match i {
            0 => 10_000,
            1 => 2,
            _ => (2f64 * 5000f64.powf(rng.random_range(0.0..1.0))).round() as usize,
        };
        let quantize = rng.random_bool(0.3);
        let shift = rng.random_range(-0.5..1.5);
        let mut pairs: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let t = rng.random_bool(0.3);
                let s: f64 = rng.random_range(0.0..1.0) + if t { shift } else { 0.0 };
                (if quantize { (s * 10.0).round() } else { s }, t)
            })
            .collect();
        pairs[0].1 = true;
        pairs[n - 1].1 = false;
        min_n = min_n.min(n);
        max_n = max_n.max(n);
        let set: ScoreSet = pairs.iter().copied().collect();
        if raw_eer(&set).unwrap().to_bits() != exhaustive_eer(&pairs).to_bits() {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("1000 score sets, sizes {min_n}..={max_n}, {mismatches} differ from the exhaustive sweep"),
    )
}

// ---------------------------------------------------------------------------------------------
// A4

fn a4() -> Verdict {
    let net = HyperNet::build(ExperimentConfig::desk().hypernet).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let g = uniform_sample(&net.config.space(), &mut rng);
        let sub = net.extract_subnet(&g).unwrap();
        for _ in 0..10 {
            let x = Tensor::new(
                vec![N_CEPS, TARGET_FRAMES],
                (0..N_CEPS * TARGET_FRAMES).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let (a, b) = (sub.forward(&x).unwrap(), net.forward(&g, &x).unwrap());
            for (p, q) in a.data().iter().zip(b.data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    verdict(
        worst <= 1e-10,
        format!("F=8, B=6, 50 genomes x 10 inputs, max |subnet - inherited| = {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------------------------
// A5 and A7

struct DeskRuns {
    reports: Vec<Report>,
    oracle_eers: Vec<f64>,
    total_secs: f64,
    search_secs: Vec<f64>,
}

fn desk_runs() -> DeskRuns {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut search_secs = Vec::new();
    let mut oracle_eers = Vec::new();
    for seed in 0..3u64 {
        let mut cfg = ExperimentConfig::desk();
        cfg.seed = seed;
        cfg.out = root.path().join(format!("seed{seed}"));
        reports.push(run_all(cfg.clone()).unwrap());
        let run = Run::open(cfg.clone()).unwrap();
        search_secs.push(run.manifest.latest("search").unwrap().wall_clock_secs);
        let CorpusSource::Synthetic(spec) = run.config.corpus else {
            unreachable!("desk corpus is synthetic")
        };
        oracle_eers.push(latent_oracle_eer(&make_synthetic_corpus(&spec).unwrap()).unwrap());
    }
    DeskRuns {
        reports,
        oracle_eers,
        total_secs: start.elapsed().as_secs_f64(),
        search_secs,
    }
}

fn a5(runs: &DeskRuns) -> Verdict {
    let mut wins = 0;
    let mut all_below = true;
    let mut lines = Vec::new();
    for r in &runs.reports {
        let s = r.system("searched").unwrap().eer;
        let b = r.system("baseline").unwrap().eer;
        wins += usize::from(s <= b);
        all_below &= s < 0.15;
        lines.push(format!("seed {}: searched {:.4} vs baseline {:.4}", r.seed, s, b));
    }
    let oracle_ok = runs.oracle_eers.iter().all(|&e| e < 0.02);
    let time_ok = runs.total_secs < 45.0 * 60.0;
    verdict(
        wins >= 2 && all_below && oracle_ok && time_ok,
        format!(
            "{}; searched <= baseline in {wins}/3; perfect-scorer EER max {:.4}; {:.0} s",
            lines.join("; "),
            runs.oracle_eers.iter().copied().fold(0.0, f64::max),
            runs.total_secs
        ),
    )
}

fn a7(runs: &DeskRuns) -> Verdict {
    let r = &runs.reports[0];
    let c = r.search.as_ref().and_then(|s| s.comparison.as_ref()).expect("desk search compares with random");
    let others: Vec<String> = runs.reports[1..]
        .iter()
        .filter_map(|r| r.search.as_ref()?.comparison.as_ref().map(|c| format!("{:.1e}", c.p_value)))
        .collect();
    let secs = runs.search_secs[0];
    verdict(
        c.n_strategy == 300 && c.n_random == 300 && c.p_value < 0.01 && secs < 20.0 * 60.0,
        format!(
            "seed 0: mean candidate EER {:.4} memetic vs {:.4} random, n = {}/{}, one-sided p = {:.1e} \
             (seeds 1, 2: {}); {:.0} s",
            c.mean_eer_strategy,
            c.mean_eer_random,
            c.n_strategy,
            c.n_random,
            c.p_value,
            others.join(", "),
            secs
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// A6

struct A6 {
    memetic_mean: f64,
    random_mean: f64,
    hits: usize,
    secs: f64,
}

fn a6_runs() -> A6 {
    let start = Instant::now();
    let space = SpaceConfig::auto_vector(8);
    let (mut m, mut r, mut hits) = (0.0, 0.0, 0);
    for seed in 0..20u64 {
        let target = uniform_sample(&space, &mut ChaCha8Rng::seed_from_u64(600 + seed));
        let oracle = MatchCountOracle::new(target, space).unwrap();
        let cfg = SearchConfig {
            budget: Some(500),
            generations: usize::MAX,
            seed,
            ..SearchConfig::default()
        };
        let mem = evolve(&cfg, &oracle).unwrap();
        let rnd = random_search_baseline(&cfg, &oracle, 500).unwrap();
        assert!(mem.total_evaluations() <= 500 && rnd.total_evaluations() <= 500);
        m += mem.best.fitness / 20.0;
        r += rnd.best.fitness / 20.0;
        hits += usize::from(mem.best.fitness == 1.0);
    }
    A6 {
        memetic_mean: m,
        random_mean: r,
        hits,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn a6a(x: &A6) -> Verdict {
    verdict(
        x.memetic_mean > x.random_mean && x.secs < 60.0,
        format!(
            "B=8, budget 500, 20 seeds: mean best fitness memetic {:.4} vs random {:.4}; {:.1} s",
            x.memetic_mean, x.random_mean, x.secs
        ),
    )
}

fn a6b(x: &A6) -> Verdict {
    verdict(
        x.hits >= 18,
        format!("memetic reached the global optimum in {}/20 seeds (needs >= 18)", x.hits),
    )
}

// ---------------------------------------------------------------------------------------------
// A8

fn a8() -> Verdict {
    let space = SpaceConfig::auto_vector(24);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = uniform_sample(&space, &mut rng);
    let mut changed = 0usize;
    let mut invalid = 0usize;
    for _ in 0..10_000 {
        let m = mutate(&g, 0.1, &mut rng);
        invalid += usize::from(validate(&m, &space).is_err());
        changed += (0..24).filter(|&i| m.allele(i) != g.allele(i)).count();
    }
    let frac = changed as f64 / (10_000.0 * 24.0);
    verdict(
        (0.09..=0.11).contains(&frac) && invalid == 0,
        format!("10^4 mutations of B=24 at p=0.1: changed fraction {frac:.4}, {invalid} invalid"),
    )
}

// ---------------------------------------------------------------------------------------------
// A9

struct Counting<'a> {
    inner: &'a dyn FitnessOracle,
    calls: Cell<usize>,
}

impl FitnessOracle for Counting<'_> {
    fn space(&self) -> SpaceConfig {
        self.inner.space()
    }

    fn fitness(&self, genome: &Genome) -> evonas::Result<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.fitness(genome)
    }
}

fn a9() -> Verdict {
    let start = Instant::now();
    let space = SpaceConfig::auto_vector(24);
    let oracle = MatchCountOracle::new(uniform_sample(&space, &mut ChaCha8Rng::seed_from_u64(9)), space).unwrap();
    let counting = Counting {
        inner: &oracle,
        calls: Cell::new(0),
    };
    let cfg = SearchConfig {
        generations: 200,
        seed: 9,
        ..SearchConfig::default()
    };
    let mut sizes_ok = true;
    let mut observed = 0;
    let out = evolve_with(&cfg, &counting, &mut |pop, _| {
        observed += 1;
        sizes_ok &= pop.len() == cfg.population;
    })
    .unwrap();
    let monotone = out.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness);
    let calls = counting.calls.get();
    let per_generation: usize = (0..=cfg.generations)
        .map(|g| out.evaluations.iter().filter(|e| e.generation == g).count())
        .sum();
    let last = out.history.last().map_or(0, |r| r.evals_used);
    let accounting = calls == out.total_evaluations() && calls == last && calls == per_generation;
    verdict(
        sizes_ok && observed == 200 && monotone && accounting && start.elapsed().as_secs_f64() < 60.0,
        format!(
            "{observed} generations, |population| == {} throughout: {sizes_ok}; best non-decreasing: {monotone}; \
             oracle calls {calls}, logged {}, history {last}",
            cfg.population,
            out.total_evaluations()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// A10

fn a10() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let three_s = synthetic_waveform(&mut rng, 3 * SAMPLE_RATE as usize);
    let n_frames = frame_signal(&three_s).len();
    let fixed = extract_features(&three_s, &FeatureConfig::default(), Crop::Center).unwrap();
    let shape_ok = n_frames == 298 && fixed.shape() == [N_CEPS, TARGET_FRAMES];

    let flat = Tensor::filled(&[N_CEPS, 350], 2.75);
    let dc = Waveform::new(vec![0.3; 3 * SAMPLE_RATE as usize]);
    let zeros_ok = mean_normalize(&flat).unwrap().data().iter().all(|&v| v == 0.0)
        && extract_features(&dc, &FeatureConfig::default(), Crop::Center)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0);

    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(FRAME_LEN..=4 * SAMPLE_RATE as usize);
        let w = synthetic_waveform(&mut rng, n);
        let crop = if rng.random_bool(0.5) { Crop::Center } else { Crop::At(0) };
        let f = extract_features(&w, &FeatureConfig::default(), crop).unwrap();
        bad += usize::from(!f.is_finite() || f.shape() != [N_CEPS, TARGET_FRAMES]);
    }
    verdict(
        shape_ok && zeros_ok && bad == 0 && start.elapsed().as_secs_f64() < 60.0,
        format!(
            "3 s -> {n_frames} frames -> {:?}; constant input normalizes to zeros: {zeros_ok}; \
             {bad}/1000 random waveforms with non-finite output; {:.1} s",
            fixed.shape(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// A11

fn unit(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec())
}

/// Speaker 0's first utterance sits at angle `theta` from its own remaining utterances
/// (along e1); the other speakers live in the e3/e4 plane, so the negative similarities stay 0.
fn angled_batch(theta: f64, negs: &[(f64, f64)]) -> EmbeddingBatch {
    let mut rows = vec![vec![
        unit(&[theta.cos(), theta.sin(), 0.0, 0.0]),
        unit(&[1.0, 0.0, 0.0, 0.0]),
        unit(&[1.0, 0.0, 0.0, 0.0]),
    ]];
    for &(a, b) in negs {
        rows.push(vec![unit(&[0.0, 0.0, a, b]); 3]);
    }
    EmbeddingBatch::new((0..rows.len()).map(|k| format!("s{k}")).collect(), rows).unwrap()
}

fn a11() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out_of_range = 0;
    for _ in 0..500 {
        let (n, m, d) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(2..8));
        let rows: Vec<Vec<Tensor>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                        v[0] += 1.5;
                        Tensor::vector(v)
                    })
                    .collect()
            })
            .collect();
        let batch = EmbeddingBatch::new((0..n).map(|k| format!("s{k}")).collect(), rows).unwrap();
        let params = ScoreParams {
            w: rng.random_range(0.01..30.0),
            b: rng.random_range(-15.0..15.0),
        };
        out_of_range += ge2e_per_anchor(&batch, &params)
            .unwrap()
            .iter()
            .filter(|&&l| !(l > 0.0 && l < 2.0))
            .count();
    }

    let mut increases = 0;
    for _ in 0..200 {
        let negs: Vec<(f64, f64)> = (0..rng.random_range(1..4))
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)))
            .collect();
        let params = ScoreParams {
            w: rng.random_range(0.1..20.0),
            b: rng.random_range(-10.0..10.0),
        };
        let mut prev = f64::INFINITY;
        // Angle from pi down to 0 raises the positive cosine from -1 to 1.
        for step in 0..=50 {
            let theta = std::f64::consts::PI * (1.0 - step as f64 / 50.0);
            let l = ge2e_per_anchor(&angled_batch(theta, &negs), &params).unwrap()[0];
            increases += usize::from(l > prev);
            prev = l;
        }
    }

    let e1 = unit(&[1.0, 0.0]);
    let e2 = unit(&[0.0, 1.0]);
    let hand = EmbeddingBatch::new(
        vec!["a".into(), "b".into()],
        vec![vec![e1.clone(), e1], vec![e2.clone(), e2]],
    )
    .unwrap();
    let hand_losses = ge2e_per_anchor(&hand, &ScoreParams { w: 1.0, b: 0.0 }).unwrap();
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let want = 1.0 - sigmoid(1.0) + sigmoid(0.0);
    let hand_err = hand_losses.iter().map(|l| (l - 0.768_941).abs()).fold(0.0, f64::max);
    verdict(
        out_of_range == 0 && increases == 0 && hand_err < 1e-6 && (want - 0.768_941).abs() < 1e-6,
        format!(
            "{out_of_range} per-anchor losses outside (0, 2); {increases} increases as the positive \
             similarity grows; hand case {:.6} (|err| {hand_err:.1e})",
            hand_losses[0]
        ),
    )
}

// ---------------------------------------------------------------------------------------------

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| o == id || id.starts_with(o.as_str()));
    let mut failed = 0;
    let mut report = |id: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "{id:<4} {}  {}  [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report("A1", &mut a1);
    report("A2", &mut a2);
    report("A3", &mut a3);
    report("A4", &mut a4);
    let mut a6_cache = None;
    report("A6a", &mut || a6a(a6_cache.get_or_insert_with(a6_runs)));
    report("A6b", &mut || a6b(a6_cache.get_or_insert_with(a6_runs)));
    report("A8", &mut a8);
    report("A9", &mut a9);
    report("A10", &mut a10);
    report("A11", &mut a11);
    let mut desk = None;
    report("A5", &mut || a5(desk.get_or_insert_with(desk_runs)));
    report("A7", &mut || a7(desk.get_or_insert_with(desk_runs)));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
