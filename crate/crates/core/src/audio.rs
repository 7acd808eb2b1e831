//! 16-bit PCM WAV input and an autocorrelation F0 extractor.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::f0::F0Track;

pub const MIN_SAMPLE_RATE_HZ: u32 = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    sample_rate_hz: u32,
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate_hz: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate_hz < MIN_SAMPLE_RATE_HZ {
            return Err(Error::config(
                "sample_rate_hz",
                format!("{sample_rate_hz} is below {MIN_SAMPLE_RATE_HZ}"),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::config("samples", format!("sample {i} is outside [-1, 1]")));
        }
        Ok(Waveform {
            sample_rate_hz,
            samples,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Parses a RIFF/WAVE byte stream holding 16-bit PCM, mono or stereo.
/// Stereo frames are averaged; samples are scaled by 1/32768.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::Wav(format!(
                    "truncated {:?} chunk: declares {size} bytes, {} available",
                    String::from_utf8_lossy(id),
                    bytes.len() - body_start
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("truncated \"fmt \" chunk".into()));
                }
                let le16 = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let audio_format = le16(0);
                let channels = le16(2);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = le16(14);
                format = Some((audio_format, channels, rate, bits));
            }
            b"data" => {
                let (audio_format, channels, rate, bits) =
                    format.ok_or_else(|| Error::Wav("data chunk before fmt chunk".into()))?;
                return decode_pcm16(audio_format, channels, rate, bits, body);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(Error::Wav(if format.is_some() {
        "no data chunk".into()
    } else {
        "no fmt chunk".into()
    }))
}

fn decode_pcm16(audio_format: u16, channels: u16, rate: u32, bits: u16, data: &[u8]) -> Result<Waveform> {
    if audio_format != 1 {
        return Err(Error::Wav(format!("unsupported audio_format {audio_format} (only PCM = 1)")));
    }
    if bits != 16 {
        return Err(Error::Wav(format!("unsupported bits_per_sample {bits} (only 16)")));
    }
    if !(1..=2).contains(&channels) {
        return Err(Error::Wav(format!("unsupported num_channels {channels} (mono or stereo)")));
    }
    let frame_bytes = 2 * channels as usize;
    if !data.len().is_multiple_of(frame_bytes) {
        return Err(Error::Wav(format!(
            "truncated data chunk: {} bytes is not a whole number of {frame_bytes}-byte frames",
            data.len()
        )));
    }
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
                .sum();
            sum / f64::from(channels)
        })
        .collect();
    Waveform::new(rate, samples)
}

/// Writes 16-bit PCM WAV with the given channel-interleaved samples.
pub fn write_wav_pcm16<W: Write>(mut w: W, sample_rate_hz: u32, channels: u16, interleaved: &[f64]) -> std::io::Result<()> {
    let data_len = (interleaved.len() * 2) as u32;
    let block_align = channels * 2;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVEfmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?;
    w.write_all(&channels.to_le_bytes())?;
    w.write_all(&sample_rate_hz.to_le_bytes())?;
    w.write_all(&(sample_rate_hz * u32::from(block_align)).to_le_bytes())?;
    w.write_all(&block_align.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in interleaved {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub voicing_threshold: f64,
    /// Frames with RMS below this are unvoiced.
    pub rms_gate: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            frame_ms: 25.0,
            hop_ms: 10.0,
            fmin_hz: 60.0,
            fmax_hz: 400.0,
            voicing_threshold: 0.45,
            rms_gate: 0.01,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} must be positive")))
            }
        };
        positive("frame_ms", self.frame_ms)?;
        positive("hop_ms", self.hop_ms)?;
        positive("fmin_hz", self.fmin_hz)?;
        positive("fmax_hz", self.fmax_hz)?;
        if self.fmin_hz >= self.fmax_hz {
            return Err(Error::config("fmin_hz", "must be below fmax_hz"));
        }
        if !(self.voicing_threshold.is_finite() && self.rms_gate.is_finite() && self.rms_gate >= 0.0) {
            return Err(Error::config("voicing", "threshold and RMS gate must be finite, gate >= 0"));
        }
        Ok(())
    }

    pub fn frame_len(&self, rate: u32) -> usize {
        (self.frame_ms * f64::from(rate) / 1000.0).round() as usize
    }

    pub fn hop_len(&self, rate: u32) -> usize {
        ((self.hop_ms * f64::from(rate) / 1000.0).round() as usize).max(1)
    }
}

/// Frame-wise normalized autocorrelation pitch tracker.
///
/// For each frame the normalized autocorrelation
/// `r(k) = sum x[i] x[i+k] / sqrt(sum x[i]^2 * sum x[i+k]^2)` is evaluated over
/// lags `rate/fmax ..= rate/fmin`. A frame is voiced when its RMS reaches the
/// gate and the best `r` reaches `voicing_threshold`. The pitch lag is the
/// shortest local maximum within 10% of the best peak (suppressing
/// octave-down errors), refined by parabolic interpolation; F0 is clamped to
/// `[fmin, fmax]`. There are `floor((len - frame) / hop) + 1` frames.
pub fn extract_f0_autocorr(wave: &Waveform, cfg: &ExtractorConfig) -> Result<F0Track> {
    cfg.validate()?;
    let rate = wave.sample_rate_hz();
    let x = wave.samples();
    let frame = cfg.frame_len(rate);
    let hop = cfg.hop_len(rate);
    if frame < 2 || x.len() < frame {
        return Err(Error::Wav(format!(
            "signal of {} samples is shorter than one {frame}-sample frame",
            x.len()
        )));
    }
    let lag_min = (f64::from(rate) / cfg.fmax_hz).ceil().max(1.0) as usize;
    let lag_max = ((f64::from(rate) / cfg.fmin_hz).floor() as usize).min(frame - 1);
    if lag_min > lag_max {
        return Err(Error::config("frame_ms", "frame too short for fmin_hz"));
    }

    let n_frames = (x.len() - frame) / hop + 1;
    let mut f0 = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let seg = &x[k * hop..k * hop + frame];
        match frame_pitch(seg, rate, lag_min, lag_max, cfg) {
            Some(hz) => {
                f0.push(hz);
                voiced.push(true);
            }
            None => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    F0Track::new(cfg.hop_ms, f0, voiced)
}

fn frame_pitch(seg: &[f64], rate: u32, lag_min: usize, lag_max: usize, cfg: &ExtractorConfig) -> Option<f64> {
    let energy: f64 = seg.iter().map(|s| s * s).sum();
    let rms = (energy / seg.len() as f64).sqrt();
    if rms < cfg.rms_gate || energy == 0.0 {
        return None;
    }
    // r over [lag_min - 1, lag_max + 1] for interpolation at the edges
    let lo = lag_min.saturating_sub(1).max(1);
    let hi = (lag_max + 1).min(seg.len() - 1);
    let r: Vec<f64> = (lo..=hi).map(|lag| normalized_autocorr(seg, lag)).collect();
    let at = |lag: usize| r[lag - lo];

    let best = (lag_min..=lag_max).map(at).fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best < cfg.voicing_threshold {
        return None;
    }
    let is_peak = |lag: usize| {
        let v = at(lag);
        (lag == lo || v >= at(lag - 1)) && (lag == hi || v >= at(lag + 1))
    };
    let lag = (lag_min..=lag_max)
        .find(|&l| at(l) >= 0.9 * best && is_peak(l))
        .unwrap_or_else(|| (lag_min..=lag_max).find(|&l| at(l) == best).unwrap());

    let mut refined = lag as f64;
    if lag > lo && lag < hi {
        let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            refined += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Some((f64::from(rate) / refined).clamp(cfg.fmin_hz, cfg.fmax_hz))
}

fn normalized_autocorr(seg: &[f64], lag: usize) -> f64 {
    let (a, b) = (&seg[..seg.len() - lag], &seg[lag..]);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        xy += p * q;
        xx += p * p;
        yy += q * q;
    }
    if xx == 0.0 || yy == 0.0 {
        0.0
    } else {
        xy / (xx * yy).sqrt()
    }
}

/// Sine tone, used by tests and demos.
pub fn sine(rate: u32, freq_hz: f64, amplitude: f64, seconds: f64) -> Result<Waveform> {
    let n = (f64::from(rate) * seconds).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / f64::from(rate)).sin())
        .collect();
    Waveform::new(rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(rate: u32, channels: u16, interleaved: &[f64]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_wav_pcm16(&mut buf, rate, channels, interleaved).unwrap();
        buf
    }

    #[test]
    fn zeros_file() {
        let w = parse_wav(&wav_bytes(16000, 1, &vec![0.0; 16000])).unwrap();
        assert_eq!(w.samples().len(), 16000);
        assert!(w.samples().iter().all(|&s| s == 0.0));
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn full_scale_sample() {
        let mut bytes = wav_bytes(16000, 1, &[0.0]);
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&32767i16.to_le_bytes());
        let w = parse_wav(&bytes).unwrap();
        assert_eq!(w.samples()[0], 32767.0 / 32768.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let inter: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let w = parse_wav(&wav_bytes(8000, 2, &inter)).unwrap();
        assert_eq!(w.samples().len(), 100);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = wav_bytes(16000, 1, &[0.25; 4]);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(parse_wav(&bytes).unwrap().samples(), &[0.25; 4]);
    }

    #[test]
    fn format_errors_name_the_field() {
        let mut float = wav_bytes(16000, 1, &[0.0; 4]);
        float[20..22].copy_from_slice(&3u16.to_le_bytes());
        assert!(parse_wav(&float).unwrap_err().to_string().contains("audio_format"));

        let mut bits = wav_bytes(16000, 1, &[0.0; 4]);
        bits[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(parse_wav(&bits).unwrap_err().to_string().contains("bits_per_sample"));

        let bytes = wav_bytes(16000, 1, &[0.0; 100]);
        let e = parse_wav(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");

        assert!(parse_wav(b"RIFX....WAVE").is_err());
        assert!(parse_wav(&wav_bytes(4000, 1, &[0.0; 4])).is_err());
    }

    #[test]
    fn sine_220_recovered() {
        let w = sine(16000, 220.0, 0.5, 1.0).unwrap();
        let t = extract_f0_autocorr(&w, &ExtractorConfig::default()).unwrap();
        assert!(t.voiced().iter().all(|&v| v));
        let mut f: Vec<f64> = t.voiced_values().collect();
        f.sort_by(f64::total_cmp);
        let median = f[f.len() / 2];
        assert!((median - 220.0).abs() <= 3.0, "{median}");
    }

    #[test]
    fn silence_unvoiced() {
        let w = Waveform::new(16000, vec![0.0; 16000]).unwrap();
        let t = extract_f0_autocorr(&w, &ExtractorConfig::default()).unwrap();
        assert_eq!(t.voiced_count(), 0);
        assert_eq!(t.len(), (16000 - 400) / 160 + 1);
        assert_eq!(t.frame_period_ms(), 10.0);
    }

    #[test]
    fn too_short() {
        let w = Waveform::new(16000, vec![0.1; 100]).unwrap();
        assert!(extract_f0_autocorr(&w, &ExtractorConfig::default()).is_err());
    }

    #[test]
    fn deterministic() {
        let w = sine(16000, 150.0, 0.3, 0.3).unwrap();
        let cfg = ExtractorConfig::default();
        assert_eq!(extract_f0_autocorr(&w, &cfg).unwrap(), extract_f0_autocorr(&w, &cfg).unwrap());
    }
}
