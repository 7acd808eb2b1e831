//! Command-line front end.
//!
//! Every stochastic stage takes its seed from the global `--seed` through
//! [`rng::derive_seed`] with a fixed stage label, so one flag reproduces a
//! whole run. Outputs are staged in temporary files and only renamed into
//! place once every stage has succeeded.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audio::{self, ExtractorConfig};
use crate::embedding::{
    anonymize_utterance, AcceptWhen, AnonymizationSpec, EmbeddingPool, FarthestPoolConfig, RejectionConfig, SpeakerEmbedding, Strategy,
};
use crate::error::{Error, Result};
use crate::eval::{self, EerReport, SyntheticPopulationConfig};
use crate::f0::{self, F0NoiseConfig, F0Summary, F0Track, MeanReversionConfig};
use crate::numfmt::fmt_sig9;
use crate::prosody::{self, MultiplierRange, PhonemeProsody};
use crate::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vpc-anon", version, about = "Voice anonymization primitives and privacy evaluation")]
pub struct Cli {
    /// Global seed; every stochastic stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Format of the one-line run summary printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = SummaryFormat::Text)]
    pub format: SummaryFormat,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-reversion F0 with optional white noise.
    F0Transform(F0TransformArgs),
    /// Anonymize speaker embeddings against a target pool.
    AnonEmbed(AnonEmbedArgs),
    /// Score verification trials and report the EER.
    EvalEer(EvalEerArgs),
    /// Run a one-parameter grid and write one CSV row per point.
    Sweep(SweepArgs),
    /// Write a synthetic enrolment/test population with its trials.
    GenPopulation(GenPopulationArgs),
    /// Extract an F0 track from a 16-bit PCM WAV file.
    ExtractF0(ExtractF0Args),
}

#[derive(Debug, Args)]
pub struct F0TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Summary JSON path; defaults to `<output>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub alpha: f64,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Add white noise at this SNR after mean reversion.
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = F0NoiseConfig::DEFAULT_FLOOR_HZ)]
    pub floor_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Random,
    Farthest,
    Rejection,
    Passthrough,
}

#[derive(Debug, Args)]
pub struct AnonEmbedArgs {
    /// Target pool (JSON Lines).
    #[arg(long)]
    pub pool: PathBuf,
    /// Source embeddings to anonymize (JSON Lines).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub cross_gender: bool,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub k_far: usize,
    #[arg(long, default_value_t = 100)]
    pub k_select: usize,
    /// Keep the raw mean in farthest-pool averaging.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 30)]
    pub max_attempts: usize,
    /// Accept rejection candidates whose distance exceeds the threshold.
    #[arg(long)]
    pub accept_above: bool,
    /// Entries averaged per rejection-sampling candidate.
    #[arg(long, default_value_t = 10)]
    pub generator_k: usize,
}

#[derive(Debug, Args)]
pub struct EvalEerArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub enrol: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Scores CSV path.
    #[arg(long)]
    pub scores: PathBuf,
    /// EER report JSON path.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct PopulationArgs {
    #[arg(long, default_value_t = 50)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utterances: usize,
    #[arg(long, default_value_t = 32)]
    pub dimension: usize,
    #[arg(long, default_value_t = 0.05)]
    pub within_std: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gender_split: f64,
}

impl PopulationArgs {
    fn config(&self, seed: u64) -> SyntheticPopulationConfig {
        SyntheticPopulationConfig {
            n_speakers: self.speakers,
            utterances_per_speaker: self.utterances,
            dimension: self.dimension,
            within_speaker_std: self.within_std,
            seed,
            gender_split: self.gender_split,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Mean-reversion alpha grid (F0 std per point).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alpha: Option<Vec<f64>>,
    /// F0 noise SNR grid in dB, applied after mean reversion at `--base-alpha`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub snr_db: Option<Vec<f64>>,
    /// Embedding noise scale grid (median attack EER per point).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub noise_scale: Option<Vec<f64>>,
    /// Prosody multiplier ranges as `lo:hi` (pitch std per point).
    #[arg(long, value_delimiter = ',')]
    pub multiplier_range: Option<Vec<String>>,
    /// F0 track JSON (alpha / snr-db grids) or prosody CSV (multiplier grid).
    /// Defaults to a synthetic vibrato contour or a flat prosody sequence.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub base_alpha: f64,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Seeds per noise-scale point; the row holds the median EER.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[command(flatten)]
    pub population: PopulationArgs,
}

#[derive(Debug, Args)]
pub struct GenPopulationArgs {
    /// Directory receiving enrol.jsonl, test.jsonl and trials.csv.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub population: PopulationArgs,
}

#[derive(Debug, Args)]
pub struct ExtractF0Args {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub frame_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hop_ms: f64,
    #[arg(long, default_value_t = 60.0)]
    pub fmin_hz: f64,
    #[arg(long, default_value_t = 400.0)]
    pub fmax_hz: f64,
    #[arg(long, default_value_t = 0.45)]
    pub voicing_threshold: f64,
}

/// Usage problems detected after clap parsing.
struct Usage(String);

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let line = match cli.format {
                SummaryFormat::Text => summary
                    .iter()
                    .map(|(k, v)| format!("{k}={}", v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
                    .collect::<Vec<_>>()
                    .join(" "),
                SummaryFormat::Json => serde_json::Value::Object(summary).to_string(),
            };
            println!("{line}");
            EXIT_OK
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

type Summary = serde_json::Map<String, serde_json::Value>;

fn execute(cli: &Cli) -> std::result::Result<Summary, Failure> {
    let mut out = Outputs::default();
    let summary = match &cli.command {
        Command::F0Transform(a) => f0_transform(a, cli.seed, &mut out)?,
        Command::AnonEmbed(a) => anon_embed(a, cli.seed, &mut out)?,
        Command::EvalEer(a) => eval_eer(a, &mut out)?,
        Command::Sweep(a) => sweep(a, cli.seed, &mut out)?,
        Command::GenPopulation(a) => gen_population(a, cli.seed, &mut out)?,
        Command::ExtractF0(a) => extract_f0(a, &mut out)?,
    };
    out.commit()?;
    Ok(summary)
}

fn summary<const N: usize>(pairs: [(&str, serde_json::Value); N]) -> Summary {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn f0_transform(a: &F0TransformArgs, seed: u64, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let mr = MeanReversionConfig::new(a.alpha, a.window)?;
    let track = F0Track::read_json(&a.input)?;
    let mut result = f0::mean_reversion_f0(&track, &mr)?;
    if let Some(snr_db) = a.snr_db {
        let noise = F0NoiseConfig {
            snr_db,
            floor_hz: a.floor_hz,
            seed: rng::derive_seed(seed, "f0-transform/awgn"),
        };
        result = f0::awgn_f0(&result, &noise)?;
    }

    #[derive(serde::Serialize)]
    struct Before<'a> {
        before: &'a F0Summary,
        after: &'a F0Summary,
    }
    let before = f0::f0_summary(&track).rounded();
    let after = f0::f0_summary(&result).rounded();
    let mut summary_json = serde_json::to_string_pretty(&Before {
        before: &before,
        after: &after,
    })
    .expect("summary serializes");
    summary_json.push('\n');

    let summary_path = a.summary.clone().unwrap_or_else(|| suffixed(&a.output, ".summary.json"));
    out.add(&a.output, result.to_json_string().into_bytes());
    out.add(&summary_path, summary_json.into_bytes());
    Ok(summary([
        ("frames", result.len().into()),
        ("voiced", result.voiced_count().into()),
        ("std_before_hz", opt(before.std_hz)),
        ("std_after_hz", opt(after.std_hz)),
    ]))
}

fn opt(x: Option<f64>) -> serde_json::Value {
    x.map(serde_json::Value::from).unwrap_or(serde_json::Value::Null)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn anon_embed(a: &AnonEmbedArgs, seed: u64, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let strategy = match a.strategy {
        StrategyArg::Random => Strategy::RandomSpeaker,
        StrategyArg::Passthrough => Strategy::Passthrough,
        StrategyArg::Farthest => {
            let cfg = FarthestPoolConfig {
                k_far: a.k_far,
                k_select: a.k_select,
                renormalize: !a.no_renormalize,
            };
            cfg.validate()?;
            Strategy::FarthestPoolAverage(cfg)
        }
        StrategyArg::Rejection => Strategy::Rejection {
            config: RejectionConfig {
                distance_threshold: a.threshold,
                max_attempts: a.max_attempts,
                accept_when: if a.accept_above {
                    AcceptWhen::DistanceAbove
                } else {
                    AcceptWhen::DistanceBelow
                },
            },
            generator_k: a.generator_k,
        },
    };
    if let Some(scale) = a.noise_scale {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::config("noise scale", format!("{scale} must be non-negative")).into());
        }
    }
    let spec = AnonymizationSpec {
        strategy,
        cross_gender: a.cross_gender,
        noise_scale: a.noise_scale,
    };
    let pool = EmbeddingPool::read_jsonl_path(&a.pool)?;
    let sources = EmbeddingPool::read_jsonl_path(&a.input)?;
    if sources.dimension() != pool.dimension() {
        return Err(Error::DimensionMismatch {
            expected: pool.dimension(),
            found: sources.dimension(),
        }
        .into());
    }
    let anonymized = sources
        .entries()
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let v = anonymize_utterance(src, &pool, &spec, rng::derive_indexed(seed, "anon-embed", i as u64))
                .map_err(|e| Error::parse(format!("source {:?}", src.key()), e))?;
            Ok(SpeakerEmbedding { vector: v, ..src.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = EmbeddingPool::new(pool.dimension(), anonymized)?;
    let mut buf = Vec::new();
    result.write_jsonl(&mut buf).expect("write to memory");
    out.add(&a.output, buf);
    Ok(summary([("anonymized", result.len().into()), ("dimension", result.dimension().into())]))
}

fn eval_eer(a: &EvalEerArgs, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let trials_file = std::fs::File::open(&a.trials).map_err(|e| Error::io(&a.trials, e))?;
    let trials = eval::read_trials_csv(trials_file)?;
    let enrol = EmbeddingPool::read_jsonl_path(&a.enrol)?;
    let test = EmbeddingPool::read_jsonl_path(&a.test)?;
    let scored = eval::score_trials(&trials, &enrol, &test)?;
    let result = eval::eer_of(&scored)?;
    let report = EerReport::from_result(&result)?;

    let mut scores = Vec::new();
    eval::write_scores_csv(&mut scores, &scored)?;
    out.add(&a.scores, scores);
    out.add(&a.output, report.to_json_string().into_bytes());
    Ok(summary([
        ("eer_percent", report.eer_percent.into()),
        ("condition", report.condition.as_str().into()),
    ]))
}

enum Grid {
    Alpha(Vec<f64>),
    SnrDb(Vec<f64>),
    NoiseScale(Vec<f64>),
    Multiplier(Vec<MultiplierRange>),
}

fn grid_of(a: &SweepArgs) -> std::result::Result<Grid, Usage> {
    let mut grids = Vec::new();
    if let Some(v) = &a.alpha {
        grids.push(Grid::Alpha(v.clone()));
    }
    if let Some(v) = &a.snr_db {
        grids.push(Grid::SnrDb(v.clone()));
    }
    if let Some(v) = &a.noise_scale {
        grids.push(Grid::NoiseScale(v.clone()));
    }
    if let Some(v) = &a.multiplier_range {
        let ranges = v
            .iter()
            .map(|s| s.parse::<MultiplierRange>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Usage(format!("malformed --multiplier-range grid: {e}")))?;
        grids.push(Grid::Multiplier(ranges));
    }
    if grids.len() != 1 {
        return Err(Usage(
            "sweep needs exactly one of --alpha, --snr-db, --noise-scale, --multiplier-range".into(),
        ));
    }
    Ok(grids.pop().unwrap())
}

fn sweep(a: &SweepArgs, seed: u64, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let grid = grid_of(a)?;
    let mut csv = String::new();
    match grid {
        Grid::Alpha(alphas) => {
            let track = sweep_track(a)?;
            csv.push_str("parameter,value,std_hz\n");
            for &alpha in &alphas {
                let t = f0::mean_reversion_f0(&track, &MeanReversionConfig::new(alpha, a.window)?)?;
                push_row(&mut csv, "alpha", alpha, f0::f0_summary(&t).std_hz);
            }
        }
        Grid::SnrDb(snrs) => {
            let track = sweep_track(a)?;
            let base = f0::mean_reversion_f0(&track, &MeanReversionConfig::new(a.base_alpha, a.window)?)?;
            csv.push_str("parameter,value,std_hz\n");
            for &snr_db in &snrs {
                let t = f0::awgn_f0(&base, &F0NoiseConfig::new(snr_db, rng::derive_seed(seed, "sweep/f0-awgn")))?;
                push_row(&mut csv, "snr_db", snr_db, f0::f0_summary(&t).std_hz);
            }
        }
        Grid::NoiseScale(scales) => {
            if a.seeds == 0 {
                return Err(Usage("--seeds must be at least 1".into()).into());
            }
            let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| rng::derive_indexed(seed, "sweep/population", k)).collect();
            let cfg = a.population.config(0);
            csv.push_str("parameter,value,eer_percent\n");
            for &scale in &scales {
                let spec = AnonymizationSpec::new(Strategy::Passthrough).noise(scale);
                let eers = eval::attack_over_seeds(&cfg, Some(&spec), &seeds)?;
                push_row(&mut csv, "noise_scale", scale, eval::median(&eers));
            }
        }
        Grid::Multiplier(ranges) => {
            let seq = match &a.input {
                Some(path) => {
                    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                    prosody::read_csv(f)?
                }
                None => (0..1000)
                    .map(|i| PhonemeProsody::new(format!("ph{i}"), 1.0, 1.0, 1))
                    .collect::<Result<Vec<_>>>()?,
            };
            csv.push_str("parameter,value,pitch_std\n");
            for r in &ranges {
                let outp = prosody::randomize_prosody(&seq, *r, rng::derive_seed(seed, "sweep/prosody"));
                let pitches: Vec<f64> = outp.iter().map(|p| p.pitch).collect();
                csv.push_str(&format!("multiplier_range,{}:{},{}\n", fmt_sig9(r.lo()), fmt_sig9(r.hi()), fmt_sig9(pop_std(&pitches))));
            }
        }
    }
    let rows = csv.lines().count() - 1;
    out.add(&a.output, csv.into_bytes());
    Ok(summary([("rows", rows.into())]))
}

fn sweep_track(a: &SweepArgs) -> Result<F0Track> {
    match &a.input {
        Some(path) => F0Track::read_json(path),
        None => f0::vibrato_track(500, 160.0, 30.0, 20.0, 10.0),
    }
}

fn push_row(csv: &mut String, name: &str, value: f64, metric: Option<f64>) {
    let metric = metric.map(fmt_sig9).unwrap_or_default();
    csv.push_str(&format!("{name},{},{metric}\n", fmt_sig9(value)));
}

fn pop_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn gen_population(a: &GenPopulationArgs, seed: u64, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let cfg = a.population.config(rng::derive_seed(seed, "gen-population"));
    let pop = eval::generate_population(&cfg)?;
    let mut enrol = Vec::new();
    pop.enrol.write_jsonl(&mut enrol).expect("write to memory");
    let mut test = Vec::new();
    pop.test.write_jsonl(&mut test).expect("write to memory");
    let mut trials = Vec::new();
    eval::write_trials_csv(&mut trials, &pop.trials)?;
    out.add(&a.output.join("enrol.jsonl"), enrol);
    out.add(&a.output.join("test.jsonl"), test);
    out.add(&a.output.join("trials.csv"), trials);
    Ok(summary([
        ("enrol", pop.enrol.len().into()),
        ("test", pop.test.len().into()),
        ("trials", pop.trials.len().into()),
    ]))
}

fn extract_f0(a: &ExtractF0Args, out: &mut Outputs) -> std::result::Result<Summary, Failure> {
    let cfg = ExtractorConfig {
        frame_ms: a.frame_ms,
        hop_ms: a.hop_ms,
        fmin_hz: a.fmin_hz,
        fmax_hz: a.fmax_hz,
        voicing_threshold: a.voicing_threshold,
        ..ExtractorConfig::default()
    };
    cfg.validate()?;
    let wave = audio::read_wav(&a.input)?;
    let track = audio::extract_f0_autocorr(&wave, &cfg)?;
    out.add(&a.output, track.to_json_string().into_bytes());
    Ok(summary([("frames", track.len().into()), ("voiced", track.voiced_count().into())]))
}

/// Output files staged in memory and written atomically on commit.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_path_buf(), bytes));
    }

    /// Each file goes to a temporary sibling first; renames happen only after
    /// all temporaries are written.
    fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
            tmp.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            tmp.flush().map_err(|e| Error::io(&path, e))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        }
        Ok(())
    }
}
