//! Per-phoneme pitch and energy randomization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeProsody {
    pub phoneme: String,
    pub pitch: f64,
    pub energy: f64,
    pub duration_frames: u32,
}

impl PhonemeProsody {
    pub fn new(phoneme: impl Into<String>, pitch: f64, energy: f64, duration_frames: u32) -> Result<Self> {
        let p = PhonemeProsody {
            phoneme: phoneme.into(),
            pitch,
            energy,
            duration_frames,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pitch.is_finite() && self.pitch >= 0.0) {
            return Err(Error::config("pitch", format!("{} must be non-negative", self.pitch)));
        }
        if !(self.energy.is_finite() && self.energy >= 0.0) {
            return Err(Error::config("energy", format!("{} must be non-negative", self.energy)));
        }
        if self.duration_frames == 0 {
            return Err(Error::config("duration_frames", "must be at least 1"));
        }
        Ok(())
    }
}

/// Multipliers are drawn from the half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierRange {
    lo: f64,
    hi: f64,
}

impl MultiplierRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::config(
                "multiplier range",
                format!("[{lo}, {hi}) needs 0 < lo <= hi"),
            ));
        }
        Ok(MultiplierRange { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_identity(&self) -> bool {
        self.lo == 1.0 && self.hi == 1.0
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng::uniform_half_open(rng, self.lo, self.hi)
    }
}

impl std::fmt::Display for MultiplierRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for MultiplierRange {
    type Err = Error;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::parse(s, "expected lo:hi"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| Error::parse(s, e))?;
        let hi: f64 = hi.trim().parse().map_err(|e| Error::parse(s, e))?;
        MultiplierRange::new(lo, hi)
    }
}

/// Ranges from widest to the no-op `[1.0, 1.0]`.
pub fn preset_ranges() -> Vec<MultiplierRange> {
    [(0.6, 1.4), (0.7, 1.3), (0.8, 1.2), (0.9, 1.1), (1.0, 1.0)]
        .into_iter()
        .map(|(lo, hi)| MultiplierRange { lo, hi })
        .collect()
}

/// Multiplies each phoneme's pitch and energy by independent draws from
/// `range`. Draw order: phonemes ascending, pitch before energy.
pub fn randomize_prosody(seq: &[PhonemeProsody], range: MultiplierRange, seed: u64) -> Vec<PhonemeProsody> {
    let mut rng = rng::seeded(seed);
    seq.iter()
        .map(|p| {
            let pitch_mult = range.sample(&mut rng);
            let energy_mult = range.sample(&mut rng);
            PhonemeProsody {
                phoneme: p.phoneme.clone(),
                pitch: p.pitch * pitch_mult,
                energy: p.energy * energy_mult,
                duration_frames: p.duration_frames,
            }
        })
        .collect()
}

/// The raw `(pitch, energy)` multiplier pairs `randomize_prosody` would use
/// for `count` phonemes.
pub fn multiplier_draws(count: usize, range: MultiplierRange, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let p = range.sample(&mut rng);
            (p, range.sample(&mut rng))
        })
        .collect()
}

pub const CSV_HEADER: [&str; 4] = ["phoneme", "pitch", "energy", "duration_frames"];

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<PhonemeProsody>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("header", e))?;
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse("header", format!("expected {}", CSV_HEADER.join(","))));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            let line = format!("line {}", i + 2);
            let p: PhonemeProsody = row.map_err(|e| Error::parse(line.clone(), e))?;
            p.validate().map_err(|e| Error::parse(line, e))?;
            Ok(p)
        })
        .collect()
}

pub fn write_csv<W: Write>(writer: W, seq: &[PhonemeProsody]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::parse("prosody csv", e);
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for p in seq {
        wtr.write_record([
            p.phoneme.clone(),
            numfmt::fmt_sig9(p.pitch),
            numfmt::fmt_sig9(p.energy),
            p.duration_frames.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::parse("prosody csv", e))?;
    Ok(())
}
