use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use vpc_anon::embedding::{AnonymizationSpec, Strategy};
use vpc_anon::eval::{self, Condition, SyntheticPopulationConfig};

fn scores() -> impl proptest::strategy::Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..60)
}

proptest! {
    #[test]
    fn eer_in_range_and_invariant_under_monotone_maps(g in scores(), i in scores()) {
        let base = eval::compute_eer(&g, &i).unwrap();
        prop_assert!((0.0..=100.0).contains(&base.eer_percent));
        let f = |x: &f64| (x / 4.0).exp() * 3.0 + 1.0;
        let mapped = eval::compute_eer(&g.iter().map(f).collect::<Vec<_>>(), &i.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert!((base.eer_percent - mapped.eer_percent).abs() < 1e-9);
    }

    #[test]
    fn eer_symmetric_under_label_swap_and_negation(g in scores(), i in scores()) {
        let base = eval::compute_eer(&g, &i).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let swapped = eval::compute_eer(&neg(&i), &neg(&g)).unwrap();
        // ties at the threshold may shift by at most one trial on either side
        let slack = 100.0 / g.len().min(i.len()) as f64;
        prop_assert!((base.eer_percent - swapped.eer_percent).abs() <= slack + 1e-9,
            "{} vs {}", base.eer_percent, swapped.eer_percent);
    }

    #[test]
    fn classification_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(eval::classify_condition(lo).unwrap() <= eval::classify_condition(hi).unwrap());
    }
}

#[test]
fn separated_scores_give_zero() {
    let r = eval::compute_eer(&[0.9, 0.8, 0.95], &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(r.eer_percent, 0.0);
    assert_eq!(r.condition(), Condition::BelowRange);
}

#[test]
fn identical_distributions_near_chance() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
    let mut draw = |n: usize| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
    let g = draw(10_000);
    let i = draw(10_000);
    let r = eval::compute_eer(&g, &i).unwrap();
    assert!((r.eer_percent - 50.0).abs() <= 2.0, "{}", r.eer_percent);
}

#[test]
fn band_edges() {
    let cases = [
        (0.0, Condition::BelowRange),
        (9.999, Condition::BelowRange),
        (10.0, Condition::Eer1),
        (19.99, Condition::Eer1),
        (20.0, Condition::Eer2),
        (30.0, Condition::Eer3),
        (40.0, Condition::Eer4),
        (100.0, Condition::Eer4),
    ];
    for (e, c) in cases {
        assert_eq!(eval::classify_condition(e).unwrap(), c, "{e}");
    }
    assert!(eval::classify_condition(-0.1).is_err());
    assert!(eval::classify_condition(100.1).is_err());
    assert!(eval::classify_condition(f64::NAN).is_err());
}

fn small_population() -> SyntheticPopulationConfig {
    SyntheticPopulationConfig { n_speakers: 30, utterances_per_speaker: 4, ..Default::default() }
}

#[test]
fn attack_experiment_is_deterministic() {
    let cfg = small_population();
    let spec = AnonymizationSpec::new(Strategy::RandomSpeaker).noise(0.1);
    let a = eval::run_attack_experiment(&cfg, Some(&spec), 7).unwrap();
    let b = eval::run_attack_experiment(&cfg, Some(&spec), 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn clear_population_is_linkable() {
    let r = eval::run_attack_experiment(&small_population(), None, 3).unwrap();
    assert_eq!(r.condition(), Condition::BelowRange);
}

#[test]
fn random_speaker_reaches_chance() {
    let cfg = small_population();
    let spec = AnonymizationSpec::new(Strategy::RandomSpeaker);
    let r = eval::run_attack_experiment(&cfg, Some(&spec), 5).unwrap();
    assert!(r.eer_percent > 40.0, "{}", r.eer_percent);
}

#[test]
fn embedding_noise_raises_eer_at_larger_scales() {
    let cfg = SyntheticPopulationConfig::default();
    let seeds = [11, 22, 33];
    let mut previous = -1.0;
    for scale in [0.2, 0.3, 0.5, 0.7] {
        let spec = AnonymizationSpec::new(Strategy::Passthrough).noise(scale);
        let eers = eval::attack_over_seeds(&cfg, Some(&spec), &seeds).unwrap();
        let m = eval::median(&eers).unwrap();
        assert!(m > previous, "scale {scale}: {m} <= {previous}");
        previous = m;
    }
}

#[test]
fn trials_csv_round_trip() {
    let pop = eval::generate_population(&small_population()).unwrap();
    let mut buf = Vec::new();
    eval::write_trials_csv(&mut buf, &pop.trials).unwrap();
    assert_eq!(eval::read_trials_csv(buf.as_slice()).unwrap(), pop.trials);
}
