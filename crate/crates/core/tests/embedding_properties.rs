use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use vpc_anon::embedding::{self, AnonymizationSpec, EmbeddingNoiseConfig, EmbeddingPool, FarthestPoolConfig, Gender, SpeakerEmbedding, Strategy};
use vpc_anon::eval::{generate_population, SyntheticPopulationConfig};

fn nonzero_vec(d: usize) -> impl proptest::strategy::Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, d).prop_filter("non-zero", |v| embedding::norm(v) > 1e-3)
}

fn synthetic_pool(n: usize, d: usize, seed: u64) -> EmbeddingPool {
    let cfg = SyntheticPopulationConfig {
        n_speakers: n,
        utterances_per_speaker: 1,
        dimension: d,
        within_speaker_std: 0.0,
        seed,
        gender_split: 0.5,
    };
    generate_population(&cfg).unwrap().enrol
}

proptest! {
    #[test]
    fn cosine_symmetric_and_scale_invariant(a in nonzero_vec(6), b in nonzero_vec(6), k in 0.01f64..100.0) {
        let s = embedding::cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - embedding::cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        prop_assert!((s - embedding::cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((embedding::cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert!(embedding::cosine_similarity(&a, &neg).unwrap() < 1.0 - 1e-9);
    }

    #[test]
    fn farthest_average_is_unit_norm(seed: u64, k_select in 1usize..20, extra in 0usize..20) {
        let pool = synthetic_pool(60, 8, seed % 1000);
        let source = SpeakerEmbedding::new("src", Gender::M, None, pool.entries()[0].vector.clone());
        let cfg = FarthestPoolConfig { k_far: k_select + extra, k_select, renormalize: true };
        let v = embedding::farthest_pool_average(&source, &pool, &cfg, seed).unwrap();
        prop_assert!((embedding::norm(&v) - 1.0).abs() < 1e-9);
        prop_assert_eq!(v.clone(), embedding::farthest_pool_average(&source, &pool, &cfg, seed).unwrap());
    }

    #[test]
    fn cross_gender_partitions(seed: u64, split in 0.1f64..0.9) {
        let cfg = SyntheticPopulationConfig { n_speakers: 20, utterances_per_speaker: 2, dimension: 4, within_speaker_std: 0.1, seed, gender_split: split };
        let pool = generate_population(&cfg).unwrap().enrol;
        for g in [Gender::M, Gender::F] {
            let filtered = embedding::cross_gender_filter(&pool, g).unwrap();
            prop_assert!(filtered.entries().iter().all(|e| e.gender != g));
            let same = pool.entries().iter().filter(|e| e.gender == g).count();
            prop_assert_eq!(filtered.len() + same, pool.len());
        }
    }

    #[test]
    fn rejection_respects_attempt_budget(seed: u64, max_attempts in 1usize..40, threshold in 0.0f64..2.0) {
        let pool = synthetic_pool(30, 8, 3);
        let src = pool.entries()[0].vector.clone();
        let cfg = embedding::RejectionConfig { distance_threshold: threshold, max_attempts, ..Default::default() };
        let mut calls = 0;
        let mut generator = embedding::PoolAverageGenerator::new(&pool, 3, Some("spk0000")).unwrap();
        let mut counted = |s: u64| { calls += 1; embedding::PseudoSpeakerGenerator::generate(&mut generator, s) };
        let out = embedding::rejection_sample_anon(&src, &mut counted, &cfg, seed).unwrap();
        prop_assert!(out.attempts <= max_attempts);
        prop_assert_eq!(calls, out.attempts);
        let mut generator = embedding::PoolAverageGenerator::new(&pool, 3, Some("spk0000")).unwrap();
        let again = embedding::rejection_sample_anon(&src, &mut generator, &cfg, seed).unwrap();
        prop_assert_eq!(out, again);
    }
}

#[test]
fn random_speaker_uniform() {
    let entries = (0..10).map(|i| SpeakerEmbedding::new(format!("s{i}"), Gender::F, None, vec![1.0, i as f64])).collect();
    let pool = EmbeddingPool::new(2, entries).unwrap();
    let mut counts = [0usize; 10];
    let draws = 100_000;
    for seed in 0..draws {
        let e = embedding::select_random_speaker(&pool, seed, None).unwrap();
        counts[e.speaker_id[1..].parse::<usize>().unwrap()] += 1;
    }
    let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
    for (i, c) in counts.iter().enumerate() {
        assert!((*c as f64 - draws as f64 * 0.1).abs() <= 3.0 * sigma, "entry {i}: {c}");
    }
}

/// Independent simulation of unit vector + N(0, s^2) noise, renormalized.
fn simulated_mean_cosine(d: usize, scale: f64, trials: usize) -> f64 {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0xfeed);
    let mut total = 0.0;
    for _ in 0..trials {
        // input e_0; cosine = (1 + n_0) / |e_0 + n|
        let noise: Vec<f64> = (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
        let first = 1.0 + noise[0];
        let rest: f64 = noise[1..].iter().map(|x| x * x).sum();
        total += first / (first * first + rest).sqrt();
    }
    total / trials as f64
}

#[test]
fn embedding_noise_matches_simulation() {
    let d = 128;
    let scale = 0.075;
    let oracle = simulated_mean_cosine(d, scale, 10_000);
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut total = 0.0;
    for seed in 0..10_000u64 {
        let out = embedding::embedding_awgn(&v, &EmbeddingNoiseConfig { scale, seed }).unwrap();
        total += embedding::cosine_similarity(&v, &out).unwrap();
    }
    let mean = total / 10_000.0;
    assert!((mean - oracle).abs() / oracle < 0.05, "{mean} vs oracle {oracle}");
}

#[test]
fn system_1a_end_to_end() {
    let pool = synthetic_pool(400, 32, 9);
    let spec = AnonymizationSpec::system_1a();
    let sources = synthetic_pool(5, 32, 10);
    for (i, src) in sources.entries().iter().enumerate() {
        let v = embedding::anonymize_utterance(src, &pool, &spec, i as u64).unwrap();
        assert_eq!(v.len(), 32);
        assert!((embedding::norm(&v) - 1.0).abs() < 1e-9);
        assert_eq!(v, embedding::anonymize_utterance(src, &pool, &spec, i as u64).unwrap());
    }
}

#[test]
fn strategies_are_deterministic() {
    let pool = synthetic_pool(50, 16, 2);
    let src = synthetic_pool(2, 16, 77).entries()[0].clone();
    let specs = [
        AnonymizationSpec::new(Strategy::RandomSpeaker).cross_gender(true).noise(0.1),
        AnonymizationSpec::new(Strategy::FarthestPoolAverage(FarthestPoolConfig { k_far: 20, k_select: 10, renormalize: true })),
        AnonymizationSpec::new(Strategy::Rejection { config: Default::default(), generator_k: 5 }).cross_gender(true),
    ];
    for spec in &specs {
        let a = embedding::anonymize_utterance(&src, &pool, spec, 5).unwrap();
        let b = embedding::anonymize_utterance(&src, &pool, spec, 5).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
