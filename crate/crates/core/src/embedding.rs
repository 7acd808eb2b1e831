//! Speaker-embedding pools and anonymization strategies.
//!
//! Vectors are compared by cosine similarity only, so pools hold unit-norm
//! vectors: entries whose norm is further than [`NORM_TOLERANCE`] from 1 are
//! normalized when the pool is built.
//!
//! Strategies compose as cross-gender filter -> strategy -> embedding noise,
//! see [`anonymize_utterance`]. Entries sharing the source's speaker id are
//! never eligible targets.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt;
use crate::rng;

pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::M => Gender::F,
            Gender::F => Gender::M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerEmbedding {
    pub speaker_id: String,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    pub vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(speaker_id: impl Into<String>, gender: Gender, utterance_id: Option<String>, vector: Vec<f64>) -> Self {
        SpeakerEmbedding {
            speaker_id: speaker_id.into(),
            gender,
            utterance_id,
            vector,
        }
    }

    /// Identifier trials use to refer to this entry: the utterance id when
    /// present, else the speaker id.
    pub fn key(&self) -> &str {
        self.utterance_id.as_deref().unwrap_or(&self.speaker_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    dimension: usize,
    entries: Vec<SpeakerEmbedding>,
}

impl EmbeddingPool {
    pub fn new(dimension: usize, entries: Vec<SpeakerEmbedding>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::config("dimension", "must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut entries = entries;
        for e in &mut entries {
            if e.vector.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: e.vector.len(),
                });
            }
            if e.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("vector", format!("non-finite value in {:?}", e.key())));
            }
            let n = norm(&e.vector);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            if (n - 1.0).abs() > NORM_TOLERANCE {
                e.vector.iter_mut().for_each(|x| *x /= n);
            }
            if !seen.insert((e.speaker_id.clone(), e.utterance_id.clone())) {
                return Err(Error::DuplicateKey(format!(
                    "{}/{}",
                    e.speaker_id,
                    e.utterance_id.as_deref().unwrap_or("-")
                )));
            }
        }
        Ok(EmbeddingPool { dimension, entries })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[SpeakerEmbedding] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key -> entry index; keys that occur more than once map to `None`.
    pub fn key_index(&self) -> HashMap<&str, Option<usize>> {
        let mut map: HashMap<&str, Option<usize>> = HashMap::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            map.entry(e.key())
                .and_modify(|slot| *slot = None)
                .or_insert(Some(i));
        }
        map
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Header {
            dimension: usize,
        }

        let mut dimension: Option<usize> = None;
        let mut entries = Vec::new();
        let mut first = true;
        for (i, line) in reader.lines().enumerate() {
            let loc = format!("line {}", i + 1);
            let line = line.map_err(|e| Error::parse(loc.clone(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            if std::mem::take(&mut first) {
                if let Ok(h) = serde_json::from_str::<Header>(&line) {
                    if h.dimension == 0 {
                        return Err(Error::parse(loc, "dimension must be positive"));
                    }
                    dimension = Some(h.dimension);
                    continue;
                }
            }
            let e: SpeakerEmbedding = serde_json::from_str(&line).map_err(|e| Error::parse(loc.clone(), e))?;
            let d = *dimension.get_or_insert(e.vector.len());
            if e.vector.len() != d {
                return Err(Error::parse(
                    loc,
                    Error::DimensionMismatch {
                        expected: d,
                        found: e.vector.len(),
                    },
                ));
            }
            if norm(&e.vector) == 0.0 {
                return Err(Error::parse(loc, Error::ZeroNorm));
            }
            entries.push(e);
        }
        let dimension = dimension.ok_or_else(|| Error::parse("line 1", "no header or entries"))?;
        EmbeddingPool::new(dimension, entries)
    }

    pub fn read_jsonl_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        EmbeddingPool::read_jsonl(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// Header line followed by one entry per line, vectors rounded to 9
    /// significant digits.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{{\"dimension\":{}}}", self.dimension)?;
        for e in &self.entries {
            let rounded = SpeakerEmbedding {
                vector: numfmt::round_all(&e.vector),
                ..e.clone()
            };
            serde_json::to_writer(&mut w, &rounded)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // sqrt(x * x) == x exactly, so identical vectors score exactly 1
    Ok((dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Uniform pick over entries whose speaker differs from `exclude_speaker`.
pub fn select_random_speaker<'a>(
    pool: &'a EmbeddingPool,
    seed: u64,
    exclude_speaker: Option<&str>,
) -> Result<&'a SpeakerEmbedding> {
    let eligible = eligible(pool.entries(), exclude_speaker);
    pick_random(&eligible, seed)
}

fn eligible<'a>(entries: &'a [SpeakerEmbedding], exclude_speaker: Option<&str>) -> Vec<&'a SpeakerEmbedding> {
    entries
        .iter()
        .filter(|e| exclude_speaker != Some(e.speaker_id.as_str()))
        .collect()
}

fn pick_random<'a>(candidates: &[&'a SpeakerEmbedding], seed: u64) -> Result<&'a SpeakerEmbedding> {
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = rng::seeded(seed);
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Entries of the opposite gender to `source_gender`, order preserved.
pub fn cross_gender_filter(pool: &EmbeddingPool, source_gender: Gender) -> Result<EmbeddingPool> {
    let entries: Vec<_> = pool
        .entries()
        .iter()
        .filter(|e| e.gender != source_gender)
        .cloned()
        .collect();
    if entries.is_empty() {
        return Err(Error::NoOppositeGender);
    }
    Ok(EmbeddingPool {
        dimension: pool.dimension,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarthestPoolConfig {
    pub k_far: usize,
    pub k_select: usize,
    pub renormalize: bool,
}

impl Default for FarthestPoolConfig {
    fn default() -> Self {
        FarthestPoolConfig {
            k_far: 200,
            k_select: 100,
            renormalize: true,
        }
    }
}

impl FarthestPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_select == 0 || self.k_far == 0 {
            return Err(Error::config("farthest pool", "k_far and k_select must be positive"));
        }
        if self.k_select > self.k_far {
            return Err(Error::config(
                "farthest pool",
                format!("k_select {} exceeds k_far {}", self.k_select, self.k_far),
            ));
        }
        Ok(())
    }
}

/// Averages `k_select` entries sampled from the `k_far` entries least similar
/// to `source`.
pub fn farthest_pool_average(
    source: &SpeakerEmbedding,
    pool: &EmbeddingPool,
    cfg: &FarthestPoolConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let candidates = eligible(pool.entries(), Some(&source.speaker_id));
    farthest_average(&source.vector, &candidates, cfg, seed)
}

fn farthest_average(
    source: &[f64],
    candidates: &[&SpeakerEmbedding],
    cfg: &FarthestPoolConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if candidates.len() < cfg.k_select {
        return Err(Error::PoolTooSmall {
            needed: cfg.k_select,
            available: candidates.len(),
        });
    }
    let mut ranked = candidates
        .iter()
        .map(|e| Ok((cosine_similarity(source, &e.vector)?, *e)))
        .collect::<Result<Vec<_>>>()?;
    // sort_by is stable: ties keep input order
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked.truncate(cfg.k_far);

    let mut rng = rng::seeded(seed);
    let mut picked = rand::seq::index::sample(&mut rng, ranked.len(), cfg.k_select).into_vec();
    picked.sort_unstable();

    let mut mean = vec![0.0; source.len()];
    for &i in &picked {
        for (m, x) in mean.iter_mut().zip(&ranked[i].1.vector) {
            *m += x;
        }
    }
    let k = picked.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    if cfg.renormalize {
        normalize(&mean)
    } else {
        Ok(mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingNoiseConfig {
    pub scale: f64,
    pub seed: u64,
}

/// Unit-normalizes `v`, adds per-dimension Gaussian noise with std `scale`
/// and renormalizes.
pub fn embedding_awgn(v: &[f64], cfg: &EmbeddingNoiseConfig) -> Result<Vec<f64>> {
    if !(cfg.scale.is_finite() && cfg.scale >= 0.0) {
        return Err(Error::config("noise scale", format!("{} must be non-negative", cfg.scale)));
    }
    let unit = normalize(v)?;
    if cfg.scale == 0.0 {
        return Ok(unit);
    }
    let mut rng = rng::seeded(cfg.seed);
    let noisy: Vec<f64> = unit
        .iter()
        .map(|x| x + cfg.scale * rng::standard_normal(&mut rng))
        .collect();
    normalize(&noisy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptWhen {
    DistanceBelow,
    DistanceAbove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionConfig {
    pub distance_threshold: f64,
    pub max_attempts: usize,
    pub accept_when: AcceptWhen,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            distance_threshold: 0.3,
            max_attempts: 30,
            accept_when: AcceptWhen::DistanceBelow,
        }
    }
}

impl RejectionConfig {
    fn accepts(&self, distance: f64) -> bool {
        match self.accept_when {
            AcceptWhen::DistanceBelow => distance < self.distance_threshold,
            AcceptWhen::DistanceAbove => distance > self.distance_threshold,
        }
    }
}

/// Produces pseudo-speaker candidates from a per-attempt seed.
pub trait PseudoSpeakerGenerator {
    fn generate(&mut self, seed: u64) -> Result<Vec<f64>>;
}

impl<F> PseudoSpeakerGenerator for F
where
    F: FnMut(u64) -> Result<Vec<f64>>,
{
    fn generate(&mut self, seed: u64) -> Result<Vec<f64>> {
        self(seed)
    }
}

/// Reference generator: the normalized mean of `k` entries drawn without
/// replacement from a candidate set.
#[derive(Debug, Clone)]
pub struct PoolAverageGenerator<'a> {
    candidates: Vec<&'a SpeakerEmbedding>,
    k: usize,
}

impl<'a> PoolAverageGenerator<'a> {
    pub fn new(pool: &'a EmbeddingPool, k: usize, exclude_speaker: Option<&str>) -> Result<Self> {
        Self::from_candidates(eligible(pool.entries(), exclude_speaker), k)
    }

    fn from_candidates(candidates: Vec<&'a SpeakerEmbedding>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("generator k", "must be positive"));
        }
        if candidates.len() < k {
            return Err(Error::PoolTooSmall {
                needed: k,
                available: candidates.len(),
            });
        }
        Ok(PoolAverageGenerator { candidates, k })
    }
}

impl PseudoSpeakerGenerator for PoolAverageGenerator<'_> {
    fn generate(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng::seeded(seed);
        let mut picked = rand::seq::index::sample(&mut rng, self.candidates.len(), self.k).into_vec();
        picked.sort_unstable();
        let d = self.candidates[0].vector.len();
        let mut mean = vec![0.0; d];
        for i in picked {
            for (m, x) in mean.iter_mut().zip(&self.candidates[i].vector) {
                *m += x;
            }
        }
        normalize(&mean).map_err(|e| Error::Generator(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOutcome {
    pub vector: Vec<f64>,
    pub attempts: usize,
    pub accepted: bool,
    pub distance: f64,
}

/// Draws candidates until one passes the distance test or the attempt budget
/// runs out, in which case the last candidate is returned unaccepted.
/// Attempt `i` (1-based) gets seed `derive_indexed(seed, "rejection", i)`.
pub fn rejection_sample_anon<G: PseudoSpeakerGenerator + ?Sized>(
    source: &[f64],
    generator: &mut G,
    cfg: &RejectionConfig,
    seed: u64,
) -> Result<RejectionOutcome> {
    if cfg.max_attempts == 0 {
        return Err(Error::config("max_attempts", "must be at least 1"));
    }
    let mut last = None;
    for attempt in 1..=cfg.max_attempts {
        let candidate = generator.generate(rng::derive_indexed(seed, "rejection", attempt as u64))?;
        let distance = cosine_distance(source, &candidate)?;
        let accepted = cfg.accepts(distance);
        let outcome = RejectionOutcome {
            vector: candidate,
            attempts: attempt,
            accepted,
            distance,
        };
        if accepted {
            return Ok(outcome);
        }
        last = Some(outcome);
    }
    Ok(last.expect("max_attempts >= 1"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Keep the source embedding; only the optional noise stage applies.
    Passthrough,
    RandomSpeaker,
    FarthestPoolAverage(FarthestPoolConfig),
    /// Rejection sampling over a [`PoolAverageGenerator`] of `generator_k`
    /// entries.
    Rejection { config: RejectionConfig, generator_k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizationSpec {
    pub strategy: Strategy,
    pub cross_gender: bool,
    pub noise_scale: Option<f64>,
}

impl AnonymizationSpec {
    pub fn new(strategy: Strategy) -> Self {
        AnonymizationSpec {
            strategy,
            cross_gender: false,
            noise_scale: None,
        }
    }

    pub fn cross_gender(mut self, on: bool) -> Self {
        self.cross_gender = on;
        self
    }

    pub fn noise(mut self, scale: f64) -> Self {
        self.noise_scale = Some(scale);
        self
    }

    /// Farthest 200 / average 100, cross-gender, noise scale 0.075.
    pub fn system_1a() -> Self {
        AnonymizationSpec::new(Strategy::FarthestPoolAverage(FarthestPoolConfig::default()))
            .cross_gender(true)
            .noise(0.075)
    }
}

/// Runs cross-gender filtering (if set), the strategy, then embedding noise
/// (if set). Stage seeds are derived from `seed` with the labels
/// `"strategy"` and `"noise"`.
pub fn anonymize_utterance(
    source: &SpeakerEmbedding,
    pool: &EmbeddingPool,
    spec: &AnonymizationSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    if source.vector.len() != pool.dimension() {
        return Err(Error::DimensionMismatch {
            expected: pool.dimension(),
            found: source.vector.len(),
        });
    }
    let mut candidates = eligible(pool.entries(), Some(&source.speaker_id));
    if spec.cross_gender && !matches!(spec.strategy, Strategy::Passthrough) {
        candidates.retain(|e| e.gender != source.gender);
        if candidates.is_empty() {
            return Err(Error::NoOppositeGender);
        }
    }
    let strategy_seed = rng::derive_seed(seed, "strategy");
    let vector = match &spec.strategy {
        Strategy::Passthrough => normalize(&source.vector)?,
        Strategy::RandomSpeaker => pick_random(&candidates, strategy_seed)?.vector.clone(),
        Strategy::FarthestPoolAverage(cfg) => farthest_average(&source.vector, &candidates, cfg, strategy_seed)?,
        Strategy::Rejection { config, generator_k } => {
            let mut generator = PoolAverageGenerator::from_candidates(candidates, *generator_k)?;
            rejection_sample_anon(&source.vector, &mut generator, config, strategy_seed)?.vector
        }
    };
    match spec.noise_scale {
        Some(scale) => embedding_awgn(
            &vector,
            &EmbeddingNoiseConfig {
                scale,
                seed: rng::derive_seed(seed, "noise"),
            },
        ),
        None => Ok(vector),
    }
}
