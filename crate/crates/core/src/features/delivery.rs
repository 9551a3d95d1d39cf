use serde::{Deserialize, Serialize};

use super::pitch::{extract_pitch, Audio, PitchFrame};
use crate::data::Matrix;
use crate::error::{Error, Result};

pub const DELIVERY_DIM: usize = 16;

/// Column order of a delivery vector.
pub const DELIVERY_COLUMNS: [&str; DELIVERY_DIM] = [
    "pitch_mean",
    "pitch_std",
    "pitch_median",
    "pitch_mad",
    "pitch_sum",
    "pitch_max",
    "pitch_min",
    "energy_mean",
    "energy_std",
    "energy_median",
    "energy_mad",
    "energy_sum",
    "energy_max",
    "energy_min",
    "duration_s",
    "confidence",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
    pub confidence: f64,
}

/// The seven summary statistics, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub mad: f64,
    pub sum: f64,
    pub max: f64,
    pub min: f64,
}

impl SummaryStats {
    /// Population statistics; all zeros for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return SummaryStats::default();
        }
        let n = values.len() as f64;
        let sum: f64 = values.iter().sum();
        let mean = sum / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mid = median(values.to_vec());
        let mad = median(values.iter().map(|v| (v - mid).abs()).collect());
        SummaryStats {
            mean,
            std: var.sqrt(),
            median: mid,
            mad,
            sum,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn to_array(self) -> [f64; 7] {
        [
            self.mean,
            self.std,
            self.median,
            self.mad,
            self.sum,
            self.max,
            self.min,
        ]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryVector {
    pub pitch: SummaryStats,
    pub energy: SummaryStats,
    pub duration_s: f64,
    pub confidence: f64,
}

impl DeliveryVector {
    pub fn to_row(&self) -> [f32; DELIVERY_DIM] {
        let mut row = [0.0f32; DELIVERY_DIM];
        let values = self
            .pitch
            .to_array()
            .into_iter()
            .chain(self.energy.to_array())
            .chain([self.duration_s, self.confidence]);
        for (slot, v) in row.iter_mut().zip(values) {
            *slot = v as f32;
        }
        row
    }
}

pub fn validate_alignments(alignments: &[WordAlignment], duration_s: f64) -> Result<()> {
    let mut prev_end = 0.0;
    for (i, a) in alignments.iter().enumerate() {
        let bad = |msg: String| Err(Error::InvalidAlignment(format!("#{i} {:?}: {msg}", a.word)));
        if !(a.start_s >= 0.0 && a.end_s > a.start_s) {
            return bad(format!(
                "span {}..{} is empty or negative",
                a.start_s, a.end_s
            ));
        }
        if a.end_s > duration_s + 1e-9 {
            return bad(format!("ends at {} past audio end {duration_s}", a.end_s));
        }
        if a.start_s < prev_end - 1e-9 {
            return bad(format!(
                "starts at {} before previous end {prev_end}",
                a.start_s
            ));
        }
        if !(0.0..=1.0).contains(&a.confidence) {
            return bad(format!("confidence {} outside [0, 1]", a.confidence));
        }
        prev_end = a.end_s;
    }
    Ok(())
}

/// Frames whose centre falls inside the word span; a span shorter than
/// the hop falls back to the frame centred closest to its midpoint.
fn frames_in<'a>(frames: &'a [PitchFrame], a: &WordAlignment) -> Vec<&'a PitchFrame> {
    let inside: Vec<_> = frames
        .iter()
        .filter(|f| f.time_s >= a.start_s && f.time_s < a.end_s)
        .collect();
    if !inside.is_empty() {
        return inside;
    }
    let mid = 0.5 * (a.start_s + a.end_s);
    frames
        .iter()
        .min_by(|x, y| (x.time_s - mid).abs().total_cmp(&(y.time_s - mid).abs()))
        .into_iter()
        .collect()
}

pub fn delivery_vectors(
    audio: &Audio,
    alignments: &[WordAlignment],
) -> Result<Vec<DeliveryVector>> {
    validate_alignments(alignments, audio.duration_seconds())?;
    if alignments.is_empty() {
        return Ok(Vec::new());
    }
    let frames = extract_pitch(audio)?;
    Ok(alignments
        .iter()
        .map(|a| {
            let seg = frames_in(&frames, a);
            let pitch: Vec<f64> = seg
                .iter()
                .filter(|f| f.voiced)
                .map(|f| f.pitch_hz)
                .collect();
            let energy: Vec<f64> = seg.iter().map(|f| f.energy).collect();
            DeliveryVector {
                pitch: SummaryStats::of(&pitch),
                energy: SummaryStats::of(&energy),
                duration_s: a.end_s - a.start_s,
                confidence: a.confidence,
            }
        })
        .collect())
}

/// One 16-wide row per aligned word.
pub fn delivery_features(audio: &Audio, alignments: &[WordAlignment]) -> Result<Matrix> {
    let rows: Vec<Vec<f32>> = delivery_vectors(audio, alignments)?
        .iter()
        .map(|v| v.to_row().to_vec())
        .collect();
    Matrix::from_rows(DELIVERY_DIM, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(start_s: f64, end_s: f64) -> WordAlignment {
        WordAlignment {
            word: "w".into(),
            start_s,
            end_s,
            confidence: 0.8,
        }
    }

    fn tone_then_silence(sr: u32) -> Audio {
        let mut s: Vec<f32> = (0..sr)
            .map(|i| {
                (0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / sr as f64).sin()) as f32
            })
            .collect();
        s.extend(std::iter::repeat_n(0.0, sr as usize));
        Audio::new(s, sr).unwrap()
    }

    #[test]
    fn stats_basic() {
        let s = SummaryStats::of(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mad, 1.0); // deviations 1.5 .5 .5 7.5
        assert_eq!(s.sum, 16.0);
        assert_eq!((s.max, s.min), (10.0, 1.0));
        assert!((s.std - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(SummaryStats::of(&[]), SummaryStats::default());
    }

    #[test]
    fn steady_tone_segment() {
        let audio = tone_then_silence(16_000);
        let v = &delivery_vectors(&audio, &[word(0.2, 0.7)]).unwrap()[0];
        assert!(v.pitch.std < 1.0, "{}", v.pitch.std);
        for p in [v.pitch.mean, v.pitch.median, v.pitch.max, v.pitch.min] {
            assert!((p - 220.0).abs() <= 3.0, "{p}");
        }
        assert!((v.energy.mean - 0.5 / 2f64.sqrt()).abs() < 0.01);
        assert_eq!(v.duration_s, 0.7 - 0.2);
        assert_eq!(v.confidence, 0.8);
    }

    #[test]
    fn unvoiced_segment_zero_fills_pitch() {
        let mut audio = tone_then_silence(16_000);
        // white noise: energy without periodicity
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for s in audio.samples[16_000..].iter_mut() {
            *s = rng.random_range(-0.05..0.05);
        }
        let v = &delivery_vectors(&audio, &[word(1.2, 1.6)]).unwrap()[0];
        assert_eq!(v.pitch, SummaryStats::default());
        assert!(v.energy.mean > 0.0);

        let silent = Audio::new(vec![0.0; 16_000], 16_000).unwrap();
        let v = &delivery_vectors(&silent, &[word(0.1, 0.3)]).unwrap()[0];
        assert_eq!(v.pitch.to_array(), [0.0; 7]);
        assert_eq!(v.energy.mean, 0.0);
    }

    #[test]
    fn matrix_shape_and_duration() {
        let audio = tone_then_silence(16_000);
        let words = [word(0.0, 0.3), word(0.3, 0.65), word(1.0, 1.9)];
        let m = delivery_features(&audio, &words).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 16));
        assert_eq!(m.row(1)[14], (0.65f64 - 0.3) as f32);
        assert_eq!(
            delivery_features(&audio, &[]).unwrap(),
            Matrix::zeros(0, 16)
        );
    }

    #[test]
    fn alignment_errors() {
        let audio = tone_then_silence(16_000);
        for bad in [
            vec![word(0.5, 0.4)],
            vec![word(1.5, 2.5)],
            vec![word(-0.1, 0.2)],
            vec![word(0.0, 0.5), word(0.4, 0.8)],
        ] {
            assert!(matches!(
                delivery_features(&audio, &bad),
                Err(Error::InvalidAlignment(_))
            ));
        }
        let mut w = word(0.0, 0.1);
        w.confidence = 1.5;
        assert!(delivery_features(&audio, &[w]).is_err());
    }

    #[test]
    fn very_short_word_uses_nearest_frame() {
        let audio = tone_then_silence(16_000);
        let v = &delivery_vectors(&audio, &[word(0.5, 0.503)]).unwrap()[0];
        assert!((v.pitch.mean - 220.0).abs() <= 3.0);
    }
}
