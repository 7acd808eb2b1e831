//! Attack-side evaluation: cosine-scored verification trials, equal error
//! rate, privacy condition bands and synthetic speaker populations.
//!
//! The attacker is plain cosine scoring in the embedding space, so absolute
//! EERs are not comparable to a trained verification model; only trends are.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{anonymize_utterance, cosine_similarity, normalize, AnonymizationSpec, EmbeddingPool, Gender, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enrol_id: String,
    pub test_id: String,
    pub label: Label,
}

impl Trial {
    pub fn new(enrol_id: impl Into<String>, test_id: impl Into<String>, label: Label) -> Self {
        Trial {
            enrol_id: enrol_id.into(),
            test_id: test_id.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Cosine score per trial, in trial order. Ids resolve against
/// [`SpeakerEmbedding::key`].
pub fn score_trials(trials: &[Trial], enrol: &EmbeddingPool, test: &EmbeddingPool) -> Result<Vec<ScoredTrial>> {
    if enrol.dimension() != test.dimension() {
        return Err(Error::DimensionMismatch {
            expected: enrol.dimension(),
            found: test.dimension(),
        });
    }
    let enrol_index = enrol.key_index();
    let test_index = test.key_index();
    let resolve = |index: &std::collections::HashMap<&str, Option<usize>>, id: &str| match index.get(id) {
        Some(Some(i)) => Ok(*i),
        Some(None) => Err(Error::UnresolvedId(format!("{id} (ambiguous)"))),
        None => Err(Error::UnresolvedId(id.to_string())),
    };
    trials
        .iter()
        .map(|t| {
            let e = resolve(&enrol_index, &t.enrol_id)?;
            let s = resolve(&test_index, &t.test_id)?;
            let score = cosine_similarity(&enrol.entries()[e].vector, &test.entries()[s].vector)?;
            Ok(ScoredTrial {
                trial: t.clone(),
                score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer_percent: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl EerResult {
    pub fn condition(&self) -> Condition {
        classify_condition(self.eer_percent).expect("EER lies in [0, 100]")
    }
}

/// Equal error rate of a score set where higher scores mean "same speaker".
///
/// With `FAR(t)` the fraction of impostor scores `>= t` and `FRR(t)` the
/// fraction of genuine scores `< t`, thresholds are swept over the sorted
/// unique scores. `FAR - FRR` starts at 1 on the lowest score and is `<= 0`
/// on the highest; the EER is read off by linear interpolation between the
/// two adjacent sweep points where its sign changes.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::config("scores", "NaN score"));
    }
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (g.len() as f64, i.len() as f64);
    // counts of scores strictly below the current threshold
    let (mut g_below, mut i_below) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    for &t in &thresholds {
        while g_below < g.len() && g[g_below] < t {
            g_below += 1;
        }
        while i_below < i.len() && i[i_below] < t {
            i_below += 1;
        }
        let far = (i.len() - i_below) as f64 / ni;
        let frr = g_below as f64 / ng;
        let d = far - frr;
        if d <= 0.0 {
            let (eer, threshold) = match prev {
                Some((pt, pfar, pfrr)) if d < 0.0 => {
                    let pd = pfar - pfrr;
                    let s = pd / (pd - d);
                    (pfar + s * (far - pfar), pt + s * (t - pt))
                }
                _ => (far, t),
            };
            return Ok(EerResult {
                eer_percent: (100.0 * eer).clamp(0.0, 100.0),
                threshold,
                n_genuine: g.len(),
                n_impostor: i.len(),
            });
        }
        prev = Some((t, far, frr));
    }
    unreachable!("FAR - FRR is non-positive at the highest score")
}

/// Privacy tier of an EER. Bands are lower-inclusive: `[10, 20)` is `Eer1`,
/// and so on up to `Eer4` for 40 and above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "below_range")]
    BelowRange,
    #[serde(rename = "EER1")]
    Eer1,
    #[serde(rename = "EER2")]
    Eer2,
    #[serde(rename = "EER3")]
    Eer3,
    #[serde(rename = "EER4")]
    Eer4,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::BelowRange => "below_range",
            Condition::Eer1 => "EER1",
            Condition::Eer2 => "EER2",
            Condition::Eer3 => "EER3",
            Condition::Eer4 => "EER4",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_condition(eer_percent: f64) -> Result<Condition> {
    if !(0.0..=100.0).contains(&eer_percent) {
        return Err(Error::EerOutOfRange(eer_percent));
    }
    Ok(match eer_percent {
        e if e < 10.0 => Condition::BelowRange,
        e if e < 20.0 => Condition::Eer1,
        e if e < 30.0 => Condition::Eer2,
        e if e < 40.0 => Condition::Eer3,
        _ => Condition::Eer4,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerReport {
    pub eer_percent: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub condition: Condition,
}

impl EerReport {
    pub fn from_result(r: &EerResult) -> Result<Self> {
        Ok(EerReport {
            eer_percent: numfmt::round_sig9(r.eer_percent),
            threshold: numfmt::round_sig9(r.threshold),
            n_genuine: r.n_genuine,
            n_impostor: r.n_impostor,
            condition: classify_condition(r.eer_percent)?,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub const TRIALS_HEADER: [&str; 3] = ["enrol_id", "test_id", "label"];
pub const SCORES_HEADER: [&str; 3] = ["enrol_id", "test_id", "score"];

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| Error::parse("header", e))?;
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse("header", format!("expected {}", expected.join(","))));
    }
    Ok(())
}

pub fn read_trials_csv<R: Read>(reader: R) -> Result<Vec<Trial>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &TRIALS_HEADER)?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(format!("line {}", i + 2), e)))
        .collect()
}

pub fn write_trials_csv<W: Write>(writer: W, trials: &[Trial]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::parse("trials csv", e);
    wtr.write_record(TRIALS_HEADER).map_err(err)?;
    for t in trials {
        let label = match t.label {
            Label::Genuine => "genuine",
            Label::Impostor => "impostor",
        };
        wtr.write_record([t.enrol_id.as_str(), t.test_id.as_str(), label]).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::parse("trials csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub enrol_id: String,
    pub test_id: String,
    pub score: f64,
}

pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &SCORES_HEADER)?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(format!("line {}", i + 2), e)))
        .collect()
}

pub fn write_scores_csv<W: Write>(writer: W, scored: &[ScoredTrial]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::parse("scores csv", e);
    wtr.write_record(SCORES_HEADER).map_err(err)?;
    for s in scored {
        wtr.write_record([s.trial.enrol_id.as_str(), s.trial.test_id.as_str(), &numfmt::fmt_sig9(s.score)])
            .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::parse("scores csv", e))
}

/// Splits scores by label and computes the EER.
pub fn eer_of(scored: &[ScoredTrial]) -> Result<EerResult> {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for s in scored {
        match s.trial.label {
            Label::Genuine => genuine.push(s.score),
            Label::Impostor => impostor.push(s.score),
        }
    }
    compute_eer(&genuine, &impostor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPopulationConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub dimension: usize,
    pub within_speaker_std: f64,
    pub seed: u64,
    /// Fraction of speakers labelled male; the first `round(n * split)`
    /// speakers are `M`.
    pub gender_split: f64,
}

impl Default for SyntheticPopulationConfig {
    fn default() -> Self {
        SyntheticPopulationConfig {
            n_speakers: 50,
            utterances_per_speaker: 10,
            dimension: 32,
            within_speaker_std: 0.05,
            seed: 0,
            gender_split: 0.5,
        }
    }
}

impl SyntheticPopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::config("n_speakers", "need at least 2 speakers"));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::config("utterances_per_speaker", "must be positive"));
        }
        if self.dimension == 0 {
            return Err(Error::config("dimension", "must be positive"));
        }
        if !(self.within_speaker_std.is_finite() && self.within_speaker_std >= 0.0) {
            return Err(Error::config("within_speaker_std", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.gender_split) {
            return Err(Error::config("gender_split", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub enrol: EmbeddingPool,
    pub test: EmbeddingPool,
    pub trials: Vec<Trial>,
}

/// Synthetic enrolment and test pools with their trial list.
///
/// Each speaker gets a uniformly random unit direction; every utterance is
/// that direction plus per-dimension Gaussian noise, unit-normalized. Both
/// pools hold `utterances_per_speaker` utterances per speaker, with ids
/// `spkNNNN-eUU` (enrolment) and `spkNNNN-tUU` (test). All same-speaker
/// enrolment/test pairs are genuine trials; an equal number of cross-speaker
/// pairs is sampled without replacement as impostor trials.
pub fn generate_population(cfg: &SyntheticPopulationConfig) -> Result<Population> {
    generate_population_with_prefix(cfg, "spk")
}

fn generate_population_with_prefix(cfg: &SyntheticPopulationConfig, prefix: &str) -> Result<Population> {
    cfg.validate()?;
    let (n, u, d) = (cfg.n_speakers, cfg.utterances_per_speaker, cfg.dimension);
    let mut rng = rng::seeded(cfg.seed);
    let n_male = (n as f64 * cfg.gender_split).round() as usize;

    let mut enrol = Vec::with_capacity(n * u);
    let mut test = Vec::with_capacity(n * u);
    for s in 0..n {
        let speaker = format!("{prefix}{s:04}");
        let gender = if s < n_male { Gender::M } else { Gender::F };
        let mean = unit_gaussian_direction(&mut rng, d);
        for (side, out) in [("e", &mut enrol), ("t", &mut test)] {
            for k in 0..u {
                let v: Vec<f64> = mean
                    .iter()
                    .map(|m| m + cfg.within_speaker_std * rng::standard_normal(&mut rng))
                    .collect();
                out.push(SpeakerEmbedding::new(
                    speaker.clone(),
                    gender,
                    Some(format!("{speaker}-{side}{k:02}")),
                    normalize(&v)?,
                ));
            }
        }
    }

    let key = |pool: &[SpeakerEmbedding], s: usize, k: usize| pool[s * u + k].key().to_string();
    let mut trials = Vec::with_capacity(2 * n * u * u);
    for s in 0..n {
        for i in 0..u {
            for j in 0..u {
                trials.push(Trial::new(key(&enrol, s, i), key(&test, s, j), Label::Genuine));
            }
        }
    }
    let n_genuine = trials.len();
    let per_enrol = (n - 1) * u;
    let total_cross = n * u * per_enrol;
    let mut picked = rand::seq::index::sample(&mut rng, total_cross, n_genuine).into_vec();
    picked.sort_unstable();
    for p in picked {
        let (enrol_flat, rem) = (p / per_enrol, p % per_enrol);
        let (es, ek) = (enrol_flat / u, enrol_flat % u);
        let (offset, tk) = (rem / u, rem % u);
        let ts = if offset < es { offset } else { offset + 1 };
        trials.push(Trial::new(key(&enrol, es, ek), key(&test, ts, tk), Label::Impostor));
    }

    Ok(Population {
        enrol: EmbeddingPool::new(d, enrol)?,
        test: EmbeddingPool::new(d, test)?,
        trials,
    })
}

fn unit_gaussian_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng::standard_normal(rng)).collect();
        if let Ok(unit) = normalize(&v) {
            return unit;
        }
    }
}

/// Speakers in the default anonymization target pool.
pub const TARGET_POOL_SPEAKERS: usize = 200;
/// Utterances per target-pool speaker.
pub const TARGET_POOL_UTTERANCES: usize = 2;

/// Target pool disjoint from any `spk*` population: speakers `tgtNNNN`, seeded
/// from `derive_seed(seed, "target-pool")`.
pub fn default_target_pool(cfg: &SyntheticPopulationConfig, seed: u64) -> Result<EmbeddingPool> {
    let pool_cfg = SyntheticPopulationConfig {
        n_speakers: TARGET_POOL_SPEAKERS,
        utterances_per_speaker: TARGET_POOL_UTTERANCES,
        seed: rng::derive_seed(seed, "target-pool"),
        ..*cfg
    };
    Ok(generate_population_with_prefix(&pool_cfg, "tgt")?.enrol)
}

/// Generates the population for `cfg`, anonymizes every test-side utterance
/// with `spec` against the default target pool (enrolment stays clear) and
/// returns the EER of the cosine attacker. `None` skips anonymization.
pub fn run_attack_experiment(
    cfg: &SyntheticPopulationConfig,
    spec: Option<&AnonymizationSpec>,
    seed: u64,
) -> Result<EerResult> {
    let target = default_target_pool(cfg, seed)?;
    run_attack_experiment_with_pool(cfg, &target, spec, seed)
}

/// Utterance `i` of the test pool is anonymized with seed
/// `derive_indexed(seed, "anonymize", i)`.
pub fn run_attack_experiment_with_pool(
    cfg: &SyntheticPopulationConfig,
    target: &EmbeddingPool,
    spec: Option<&AnonymizationSpec>,
    seed: u64,
) -> Result<EerResult> {
    let population = generate_population(cfg)?;
    let test = match spec {
        None => population.test,
        Some(spec) => {
            let anonymized = population
                .test
                .entries()
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let v = anonymize_utterance(e, target, spec, rng::derive_indexed(seed, "anonymize", i as u64))?;
                    Ok(SpeakerEmbedding { vector: v, ..e.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            EmbeddingPool::new(cfg.dimension, anonymized)?
        }
    };
    let scored = score_trials(&population.trials, &population.enrol, &test)?;
    eer_of(&scored)
}

/// Runs the experiment once per seed, using each seed for both the
/// population and the anonymization, and returns the EERs in seed order.
pub fn attack_over_seeds(
    cfg: &SyntheticPopulationConfig,
    spec: Option<&AnonymizationSpec>,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&s| {
            let c = SyntheticPopulationConfig { seed: s, ..*cfg };
            Ok(run_attack_experiment(&c, spec, s)?.eer_percent)
        })
        .collect()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
