//! F0 contours and the pitch transforms applied to them.
//!
//! A contour is a sequence of per-frame fundamental-frequency values with a
//! voicing flag per frame. Unvoiced frames always carry the value `0`, and
//! every transform here leaves them (and the voicing flags) untouched.
//!
//! * [`moving_average_f0`]: trailing mean over the last `n` *voiced* frames.
//! * [`mean_reversion_f0`]: `(1 - alpha) * f0 + alpha * moving_average`.
//! * [`awgn_f0`]: white Gaussian noise at a given SNR, referenced to the RMS
//!   of the voiced contour, clamped to a positive floor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    frame_period_ms: f64,
    f0_hz: Vec<f64>,
    voiced: Vec<bool>,
}

impl F0Track {
    pub fn new(frame_period_ms: f64, f0_hz: Vec<f64>, voiced: Vec<bool>) -> Result<Self> {
        if !(frame_period_ms.is_finite() && frame_period_ms > 0.0) {
            return Err(invalid("frame_period_ms", "must be a positive number"));
        }
        if f0_hz.len() != voiced.len() {
            return Err(invalid(
                "voiced",
                format!(
                    "length {} differs from f0_hz length {}",
                    voiced.len(),
                    f0_hz.len()
                ),
            ));
        }
        for (t, (&f, &v)) in f0_hz.iter().zip(&voiced).enumerate() {
            if !f.is_finite() || f < 0.0 {
                return Err(invalid(
                    format!("f0_hz[{t}]"),
                    "must be a finite non-negative number",
                ));
            }
            if v && f <= 0.0 {
                return Err(invalid(format!("f0_hz[{t}]"), "voiced frame must have f0 > 0"));
            }
            if !v && f != 0.0 {
                return Err(invalid(format!("f0_hz[{t}]"), "unvoiced frame must have f0 == 0"));
            }
        }
        Ok(F0Track {
            frame_period_ms,
            f0_hz,
            voiced,
        })
    }

    /// Builds a track from raw values, treating every positive value as voiced.
    pub fn from_hz(frame_period_ms: f64, f0_hz: Vec<f64>) -> Result<Self> {
        let voiced = f0_hz.iter().map(|&f| f > 0.0).collect();
        F0Track::new(frame_period_ms, f0_hz, voiced)
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn f0_hz(&self) -> &[f64] {
        &self.f0_hz
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
    }

    /// Same framing and voicing, new voiced values. Internal: callers keep the
    /// voiced-positive invariant.
    fn with_values(&self, f0_hz: Vec<f64>) -> F0Track {
        debug_assert_eq!(f0_hz.len(), self.voiced.len());
        F0Track {
            frame_period_ms: self.frame_period_ms,
            f0_hz,
            voiced: self.voiced.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TrackFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e)
        })?;
        let voiced = file
            .voiced
            .iter()
            .enumerate()
            .map(|(t, &v)| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(invalid(format!("voiced[{t}]"), format!("expected 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        F0Track::new(file.frame_period_ms, file.f0_hz, voiced)
    }

    /// JSON with values rounded to 9 significant digits.
    pub fn to_json_string(&self) -> String {
        let file = TrackFile {
            frame_period_ms: numfmt::round_sig9(self.frame_period_ms),
            f0_hz: numfmt::round_all(&self.f0_hz),
            voiced: self.voiced.iter().map(|&v| u8::from(v)).collect(),
        };
        let mut s = serde_json::to_string(&file).expect("track serializes");
        s.push('\n');
        s
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        F0Track::from_json_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackFile {
    frame_period_ms: f64,
    f0_hz: Vec<f64>,
    voiced: Vec<u8>,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidTrack {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanReversionConfig {
    pub alpha: f64,
    pub window_n: usize,
}

impl MeanReversionConfig {
    pub fn new(alpha: f64, window_n: usize) -> Result<Self> {
        let cfg = MeanReversionConfig { alpha, window_n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if self.window_n == 0 {
            return Err(Error::InvalidWindow);
        }
        Ok(())
    }
}

impl Default for MeanReversionConfig {
    fn default() -> Self {
        MeanReversionConfig {
            alpha: 0.75,
            window_n: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0NoiseConfig {
    pub snr_db: f64,
    pub floor_hz: f64,
    pub seed: u64,
}

impl F0NoiseConfig {
    pub const DEFAULT_FLOOR_HZ: f64 = 10.0;

    pub fn new(snr_db: f64, seed: u64) -> Self {
        F0NoiseConfig {
            snr_db,
            floor_hz: Self::DEFAULT_FLOOR_HZ,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::config("snr_db", "must be finite"));
        }
        if !(self.floor_hz.is_finite() && self.floor_hz > 0.0) {
            return Err(Error::config("floor_hz", "must be positive"));
        }
        Ok(())
    }

    /// Noise standard deviation for a contour with the given voiced RMS.
    pub fn sigma_for_rms(&self, rms_hz: f64) -> f64 {
        rms_hz * 10f64.powf(-self.snr_db / 20.0)
    }
}

/// Trailing mean over the most recent `window_n` voiced frames.
///
/// Unvoiced frames are skipped when filling the window and pass through as 0.
/// Near the start of a track the window holds whatever voiced frames exist.
pub fn moving_average_f0(track: &F0Track, window_n: usize) -> Result<F0Track> {
    if track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    if window_n == 0 {
        return Err(Error::InvalidWindow);
    }
    let mut history: Vec<f64> = Vec::with_capacity(track.voiced_count());
    let out = track
        .f0_hz
        .iter()
        .zip(&track.voiced)
        .map(|(&f, &v)| {
            if !v {
                return f;
            }
            history.push(f);
            let window = &history[history.len().saturating_sub(window_n)..];
            window_mean(window)
        })
        .collect();
    Ok(track.with_values(out))
}

// Exact mean lies in [min, max]; clamping removes summation round-off.
fn window_mean(window: &[f64]) -> f64 {
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &x in window {
        lo = lo.min(x);
        hi = hi.max(x);
        sum += x;
    }
    (sum / window.len() as f64).clamp(lo, hi)
}

/// Blends each voiced value with its trailing moving average.
pub fn mean_reversion_f0(track: &F0Track, cfg: &MeanReversionConfig) -> Result<F0Track> {
    if track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    cfg.validate()?;
    let ma = moving_average_f0(track, cfg.window_n)?;
    let alpha = cfg.alpha;
    let out = track
        .f0_hz
        .iter()
        .zip(&ma.f0_hz)
        .zip(&track.voiced)
        .map(|((&f, &m), &v)| {
            if !v {
                return f;
            }
            let blended = (1.0 - alpha) * f + alpha * m;
            blended.clamp(f.min(m), f.max(m))
        })
        .collect();
    Ok(track.with_values(out))
}

/// Adds seeded white Gaussian noise to voiced frames.
///
/// The noise std is `rms(voiced f0) * 10^(-snr_db / 20)`; draws are taken in
/// frame order, one per voiced frame. Noisy values below `floor_hz` are
/// raised to it.
pub fn awgn_f0(track: &F0Track, cfg: &F0NoiseConfig) -> Result<F0Track> {
    cfg.validate()?;
    let n_voiced = track.voiced_count();
    if n_voiced == 0 {
        return Err(Error::NoVoicedFrames);
    }
    let rms = (track.voiced_values().map(|f| f * f).sum::<f64>() / n_voiced as f64).sqrt();
    let sigma = cfg.sigma_for_rms(rms);
    let mut rng = rng::seeded(cfg.seed);
    let out = track
        .f0_hz
        .iter()
        .zip(&track.voiced)
        .map(|(&f, &v)| {
            if !v {
                return f;
            }
            let g = sigma * rng::standard_normal(&mut rng);
            (f + g).max(cfg.floor_hz)
        })
        .collect();
    Ok(track.with_values(out))
}

/// Voiced-frame statistics. `std_hz` is the population standard deviation
/// (divides by N). The per-value fields are `None` when nothing is voiced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Summary {
    pub mean_hz: Option<f64>,
    pub std_hz: Option<f64>,
    pub min_hz: Option<f64>,
    pub max_hz: Option<f64>,
    pub voiced_ratio: f64,
}

impl F0Summary {
    pub(crate) fn rounded(&self) -> F0Summary {
        let r = |x: Option<f64>| x.map(numfmt::round_sig9);
        F0Summary {
            mean_hz: r(self.mean_hz),
            std_hz: r(self.std_hz),
            min_hz: r(self.min_hz),
            max_hz: r(self.max_hz),
            voiced_ratio: numfmt::round_sig9(self.voiced_ratio),
        }
    }
}

pub fn f0_summary(track: &F0Track) -> F0Summary {
    let n = track.voiced_count();
    if n == 0 {
        return F0Summary {
            mean_hz: None,
            std_hz: None,
            min_hz: None,
            max_hz: None,
            voiced_ratio: 0.0,
        };
    }
    let nf = n as f64;
    let mean = track.voiced_values().sum::<f64>() / nf;
    let var = track.voiced_values().map(|f| (f - mean).powi(2)).sum::<f64>() / nf;
    let min = track.voiced_values().fold(f64::INFINITY, f64::min);
    let max = track.voiced_values().fold(f64::NEG_INFINITY, f64::max);
    F0Summary {
        mean_hz: Some(mean),
        std_hz: Some(var.sqrt()),
        min_hz: Some(min),
        max_hz: Some(max),
        voiced_ratio: nf / track.len() as f64,
    }
}

/// Sinusoidal vibrato contour `center + depth * sin(2 pi t / period)`, all
/// frames voiced. Used by the smoothing checks and the sweep defaults.
pub fn vibrato_track(
    frames: usize,
    center_hz: f64,
    depth_hz: f64,
    period_frames: f64,
    frame_period_ms: f64,
) -> Result<F0Track> {
    let f0 = (0..frames)
        .map(|t| center_hz + depth_hz * (2.0 * std::f64::consts::PI * t as f64 / period_frames).sin())
        .collect();
    F0Track::from_hz(frame_period_ms, f0)
}
