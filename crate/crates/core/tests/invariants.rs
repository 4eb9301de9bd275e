//! Property tests over genomes, search operators, EER and the anchor loss.

use evonas::evosearch::{
    compete, local_search, mutate, neighbors, Evaluator, Individual, MatchCountOracle,
};
use evonas::searchspace::{uniform_sample, validate, Genome, Mode, SpaceConfig};
use evonas::tensorcore::Tensor;
use evonas::verifier::{compute_eer, ge2e_per_anchor, raw_eer, EmbeddingBatch, ScoreParams, ScoreSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space_strategy() -> impl Strategy<Value = SpaceConfig> {
    prop_oneof![(1usize..30).prop_map(SpaceConfig::auto_vector), Just(SpaceConfig::tdnn())]
}

fn genome_in(space: SpaceConfig, seed: u64) -> Genome {
    uniform_sample(&space, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn score_set() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..200).prop_map(|mut v| {
        v[0].1 = true;
        v[1].1 = false;
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn genome_text_round_trips(space in space_strategy(), seed in any::<u64>()) {
        let g = genome_in(space, seed);
        prop_assert!(validate(&g, &space).is_ok());
        let text = g.encode();
        prop_assert_eq!(Genome::decode(&text).unwrap(), g.clone());
        prop_assert_eq!(Genome::decode(&text).unwrap().encode(), text);
    }

    #[test]
    fn alleles_round_trip(space in space_strategy(), seed in any::<u64>()) {
        let g = genome_in(space, seed);
        let alleles: Vec<usize> = (0..g.n_loci()).map(|i| g.allele(i).unwrap()).collect();
        prop_assert!(alleles.iter().all(|&a| a < space.mode.n_alleles()));
        prop_assert_eq!(Genome::from_alleles(space.mode, &alleles), g);
    }

    #[test]
    fn mutants_stay_valid(space in space_strategy(), seed in any::<u64>(), p in 0.0f64..=1.0) {
        let g = genome_in(space, seed);
        let m = mutate(&g, p, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert!(validate(&m, &space).is_ok());
        prop_assert_eq!(m.n_loci(), g.n_loci());
    }

    #[test]
    fn certain_mutation_changes_every_locus(space in space_strategy(), seed in any::<u64>()) {
        let g = genome_in(space, seed);
        let m = mutate(&g, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((0..g.n_loci()).all(|i| m.allele(i) != g.allele(i)));
        prop_assert_eq!(mutate(&g, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)), g);
    }

    #[test]
    fn neighbours_differ_at_exactly_one_locus(n_blocks in 1usize..6, seed in any::<u64>()) {
        let space = SpaceConfig::auto_vector(n_blocks);
        let g = genome_in(space, seed);
        let ns = neighbors(&g);
        prop_assert_eq!(ns.len(), n_blocks * 20);
        for n in &ns {
            prop_assert_eq!((0..g.n_loci()).filter(|&i| n.allele(i) != g.allele(i)).count(), 1);
        }
    }

    #[test]
    fn local_search_never_loses_fitness(
        n_blocks in 1usize..10,
        seed in any::<u64>(),
        k_n in 1usize..8,
        steps in 0usize..4,
    ) {
        let space = SpaceConfig::auto_vector(n_blocks);
        let oracle = MatchCountOracle::new(genome_in(space, seed), space).unwrap();
        let mut eval = Evaluator::new(&oracle, None);
        let start = genome_in(space, seed.wrapping_add(1));
        let f = eval.evaluate(&start).unwrap();
        let ind = Individual { genome: start, fitness: f, birth_generation: 3 };
        let out = local_search(ind, &mut eval, k_n, steps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(out.fitness >= f);
        prop_assert_eq!(out.birth_generation, 3);
        prop_assert!(eval.calls() <= 1 + k_n * steps);
        prop_assert_eq!(eval.cached(&out.genome), Some(out.fitness));
    }

    #[test]
    fn compete_keeps_the_fitter(fa in 0.0f64..1.0, fb in 0.0f64..1.0) {
        let g = Genome::uniform_blocks(evonas::searchspace::OpKind::Identity, 1);
        let a = Individual { genome: g.clone(), fitness: fa, birth_generation: 0 };
        let b = Individual { genome: g, fitness: fb, birth_generation: 1 };
        let w = compete(a, b);
        prop_assert_eq!(w.fitness, fa.max(fb));
        if fa == fb {
            prop_assert_eq!(w.birth_generation, 1);
        }
    }

    #[test]
    fn eer_is_bounded(pairs in score_set()) {
        let set: ScoreSet = pairs.into_iter().collect();
        let raw = raw_eer(&set).unwrap();
        let e = compute_eer(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&raw));
        prop_assert!((0.0..=0.5).contains(&e));
    }

    #[test]
    fn eer_ignores_increasing_transforms(pairs in score_set(), scale in 0.1f64..10.0, shift in -3.0f64..3.0) {
        let set: ScoreSet = pairs.iter().copied().collect();
        let moved: ScoreSet = pairs.iter().map(|&(s, t)| (scale * s + shift, t)).collect();
        prop_assert!((raw_eer(&set).unwrap() - raw_eer(&moved).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation_gives_zero(pairs in score_set()) {
        let set: ScoreSet = pairs.iter().map(|&(s, t)| (if t { 10.0 + s } else { s - 10.0 }, t)).collect();
        prop_assert_eq!(raw_eer(&set).unwrap(), 0.0);
    }

    #[test]
    fn anchor_loss_stays_in_open_interval(
        vals in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 4),
        w in 0.01f64..20.0,
        b in -10.0f64..10.0,
    ) {
        let batch = batch_from(&vals, 2, 3, 4);
        for l in ge2e_per_anchor(&batch, &ScoreParams { w, b }).unwrap() {
            prop_assert!(l > 0.0 && l < 2.0, "{l}");
        }
    }
}

fn batch_from(vals: &[f64], n: usize, m: usize, d: usize) -> EmbeddingBatch {
    let embeddings = (0..n)
        .map(|k| {
            (0..m)
                .map(|u| {
                    let off = (k * m + u) * d;
                    // Keep every embedding away from zero so cosines are defined.
                    let mut v = vals[off..off + d].to_vec();
                    v[0] += if v[0] >= 0.0 { 0.5 } else { -0.5 };
                    Tensor::vector(v)
                })
                .collect()
        })
        .collect();
    EmbeddingBatch::new((0..n).map(|k| format!("s{k}")).collect(), embeddings).unwrap()
}

#[test]
fn tdnn_space_mode_is_reported() {
    assert_eq!(SpaceConfig::tdnn().mode, Mode::Tdnn);
}
