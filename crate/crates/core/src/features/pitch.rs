//! Frame-wise autocorrelation pitch tracking.
//!
//! Each 25 ms frame (10 ms hop) is scored with the normalized
//! autocorrelation against its lagged copy over lags covering 50-400 Hz. The smallest-lag local
//! peak within 10% of the best peak is taken, refined by parabolic
//! interpolation, and the frame is voiced when that peak's clarity reaches
//! [`CLARITY_THRESHOLD`].

use crate::error::{Error, Result};

pub const FRAME_SECONDS: f64 = 0.025;
pub const HOP_SECONDS: f64 = 0.010;
pub const MIN_PITCH_HZ: f64 = 50.0;
pub const MAX_PITCH_HZ: f64 = 400.0;
pub const CLARITY_THRESHOLD: f64 = 0.3;
pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const MAX_SAMPLE_RATE: u32 = 48_000;

// Peaks within this fraction of the best one count as candidates; the
// shortest lag among them wins, which avoids subharmonic (octave) errors.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if !(MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&sample_rate) {
            return Err(Error::InvalidAudio(format!(
                "sample rate {sample_rate} outside {MIN_SAMPLE_RATE}-{MAX_SAMPLE_RATE} Hz"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidAudio("no samples".into()));
        }
        Ok(Audio {
            samples,
            sample_rate,
        })
    }

    /// Reads a mono 16-bit PCM WAV file.
    pub fn read_wav(path: &std::path::Path) -> Result<Self> {
        let reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::InvalidAudio(format!(
                "{}: expected mono 16-bit PCM, found {} channel(s), {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Audio::new(samples, spec.sample_rate)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    /// Centre of the analysis window in seconds.
    pub time_s: f64,
    /// Estimated fundamental in Hz; 0 when unvoiced.
    pub pitch_hz: f64,
    pub voiced: bool,
    pub clarity: f64,
    /// RMS of the raw window.
    pub energy: f64,
}

pub fn frame_geometry(sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    (
        (FRAME_SECONDS * sr).round() as usize,
        (HOP_SECONDS * sr).round() as usize,
    )
}

pub fn extract_pitch(audio: &Audio) -> Result<Vec<PitchFrame>> {
    let (window, hop) = frame_geometry(audio.sample_rate);
    let n = audio.samples.len();
    if n < window {
        return Err(Error::InvalidAudio(format!(
            "{n} samples is shorter than one {window}-sample window"
        )));
    }
    let sr = audio.sample_rate as f64;
    let min_lag = (sr / MAX_PITCH_HZ).floor().max(2.0) as usize;
    let max_lag = (sr / MIN_PITCH_HZ).ceil() as usize;

    let frames = 1 + (n - window) / hop;
    let mut out = Vec::with_capacity(frames);
    let mut corr = vec![0.0f64; max_lag + 2];
    let signal: Vec<f64> = audio.samples.iter().map(|&v| v as f64).collect();
    for f in 0..frames {
        let start = f * hop;
        let x = &signal[start..start + window];
        let energy = (x.iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt();
        let time_s = (start as f64 + window as f64 / 2.0) / sr;

        let (pitch_hz, clarity) =
            frame_pitch(&signal, start, window, min_lag, max_lag, sr, &mut corr)
                .unwrap_or((0.0, 0.0));
        let voiced = clarity >= CLARITY_THRESHOLD && pitch_hz > 0.0;
        out.push(PitchFrame {
            time_s,
            pitch_hz: if voiced { pitch_hz } else { 0.0 },
            voiced,
            clarity,
            energy,
        });
    }
    Ok(out)
}

/// Normalized cross-correlation between the window at `start` and its copy
/// shifted by `lag`. The shifted copy may run past the window; near the
/// end of the signal both are shortened, down to half a window.
fn nccf(signal: &[f64], start: usize, window: usize, lag: usize) -> f64 {
    let len = window.min(signal.len().saturating_sub(start + lag));
    if len < window / 2 {
        return 0.0;
    }
    let a = &signal[start..start + len];
    let b = &signal[start + lag..start + lag + len];
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let ea: f64 = a.iter().map(|v| v * v).sum();
    let eb: f64 = b.iter().map(|v| v * v).sum();
    if ea <= 0.0 || eb <= 0.0 {
        0.0
    } else {
        dot / (ea * eb).sqrt()
    }
}

fn frame_pitch(
    signal: &[f64],
    start: usize,
    window: usize,
    min_lag: usize,
    max_lag: usize,
    sr: f64,
    corr: &mut [f64],
) -> Option<(f64, f64)> {
    if signal[start..start + window].iter().all(|&v| v == 0.0) {
        return None;
    }
    for lag in min_lag - 1..=max_lag + 1 {
        corr[lag] = nccf(signal, start, window, lag);
    }
    let peaks: Vec<usize> = (min_lag..=max_lag)
        .filter(|&l| corr[l] > corr[l - 1] && corr[l] >= corr[l + 1] && corr[l] > 0.0)
        .collect();
    let best = peaks
        .iter()
        .map(|&l| corr[l])
        .fold(f64::NEG_INFINITY, f64::max);
    let lag = *peaks
        .iter()
        .find(|&&l| corr[l] >= OCTAVE_TOLERANCE * best)?;

    let (y0, y1, y2) = (corr[lag - 1], corr[lag], corr[lag + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some((sr / (lag as f64 + shift), y1))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tone(freq: f64, seconds: f64, sr: u32) -> Audio {
        let n = (seconds * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| {
                (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()) as f32
            })
            .collect();
        Audio::new(samples, sr).unwrap()
    }

    #[test]
    fn sine_tones_recovered() {
        for f0 in [100.0, 150.0, 220.0, 300.0] {
            let frames = extract_pitch(&tone(f0, 1.0, 16_000)).unwrap();
            assert!(
                frames.iter().all(|f| f.voiced),
                "{f0} Hz has unvoiced frames"
            );
            for fr in &frames {
                assert!((fr.pitch_hz - f0).abs() <= 3.0, "{f0}: {}", fr.pitch_hz);
            }
        }
    }

    #[test]
    fn square_wave_fundamental_not_overtone() {
        let sr = 16_000;
        let samples = (0..sr)
            .map(|i| {
                if (i as f64 * 100.0 / sr as f64).fract() < 0.5 {
                    0.4f32
                } else {
                    -0.4
                }
            })
            .collect();
        let frames = extract_pitch(&Audio::new(samples, sr).unwrap()).unwrap();
        for fr in &frames {
            assert!(fr.voiced);
            assert!((fr.pitch_hz - 100.0).abs() <= 3.0, "{}", fr.pitch_hz);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let frames = extract_pitch(&Audio::new(vec![0.0; 16_000], 16_000).unwrap()).unwrap();
        assert!(frames
            .iter()
            .all(|f| !f.voiced && f.pitch_hz == 0.0 && f.energy == 0.0));
    }

    #[test]
    fn frame_count_and_times() {
        let frames = extract_pitch(&tone(200.0, 1.0, 16_000)).unwrap();
        // 1 + (16000 - 400) / 160
        assert_eq!(frames.len(), 98);
        assert!((frames[0].time_s - 0.0125).abs() < 1e-12);
        assert!((frames[1].time_s - frames[0].time_s - 0.01).abs() < 1e-12);
    }

    #[test]
    fn short_audio_rejected() {
        let a = Audio::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(extract_pitch(&a), Err(Error::InvalidAudio(_))));
    }

    #[test]
    fn unsupported_rate_rejected() {
        assert!(Audio::new(vec![0.0; 10], 4_000).is_err());
        assert!(Audio::new(vec![0.0; 10], 96_000).is_err());
        assert!(Audio::new(vec![], 16_000).is_err());
    }

    #[test]
    fn works_across_sample_rates() {
        for sr in [8_000, 22_050, 44_100, 48_000] {
            let frames = extract_pitch(&tone(150.0, 0.5, sr)).unwrap();
            assert!(
                frames.iter().all(|f| (f.pitch_hz - 150.0).abs() <= 3.0),
                "{sr}"
            );
        }
    }
}
