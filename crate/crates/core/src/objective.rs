//! Multi-margin ordinal loss, the combined training objective and
//! data-driven estimation of adjacent-level margins.
//!
//! Loss arithmetic runs in `f64` on plain logit rows. The returned
//! gradients are with respect to those logits and are seeded into the
//! model graph by the caller.

use std::io::Write;

use crate::config::{MarginMode, RunConfig};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::labels::{Aspect, CefrScale, Level, LEVEL_NAMES, NUM_LEVELS};
use crate::model::AspectModel;
use crate::numerics::{
    cosine_similarity, cosine_with_grad, cross_entropy, Cosine, Evaluation, Real,
};

pub type Logits = [f64; NUM_LEVELS];

/// Upper clamp for data-driven margins; cosine gaps never exceed it.
pub const MAX_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    logits: Vec<Logits>,
    labels: Vec<Level>,
}

impl LogitBatch {
    pub fn new(logits: Vec<Logits>, labels: Vec<Level>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if logits.len() != labels.len() {
            return Err(Error::DimMismatch {
                what: "batch labels".into(),
                expected: logits.len(),
                found: labels.len(),
            });
        }
        Ok(LogitBatch { logits, labels })
    }

    /// Builds a batch from a `B x 8` row-major slice.
    pub fn from_rows<T: Real>(data: &[T], labels: Vec<Level>) -> Result<Self> {
        if data.len() != labels.len() * NUM_LEVELS {
            return Err(Error::DimMismatch {
                what: "logit values".into(),
                expected: labels.len() * NUM_LEVELS,
                found: data.len(),
            });
        }
        let logits = data
            .chunks(NUM_LEVELS)
            .map(|c| std::array::from_fn(|k| c[k].as_f64()))
            .collect();
        LogitBatch::new(logits, labels)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self) -> &[Logits] {
        &self.logits
    }

    pub fn labels(&self) -> &[Level] {
        &self.labels
    }

    /// Same labels, every logit multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        LogitBatch {
            logits: self.logits.iter().map(|z| z.map(|v| v * c)).collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPairs {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairStats {
    pub triples: usize,
    /// Anchors with no other instance of their class.
    pub no_positive: usize,
    /// Anchors whose class fills the whole batch.
    pub no_negative: usize,
}

/// Exhaustive in-batch positives and negatives for every anchor.
pub fn build_pairs(batch: &LogitBatch) -> (Vec<AnchorPairs>, PairStats) {
    let y = &batch.labels;
    let mut stats = PairStats::default();
    let pairs = (0..y.len())
        .map(|i| {
            let positives: Vec<usize> = (0..y.len()).filter(|&j| j != i && y[j] == y[i]).collect();
            let negatives: Vec<usize> = (0..y.len()).filter(|&k| y[k] != y[i]).collect();
            if positives.is_empty() {
                stats.no_positive += 1;
            }
            if negatives.is_empty() {
                stats.no_negative += 1;
            }
            stats.triples += positives.len() * negatives.len();
            AnchorPairs {
                anchor: i,
                positives,
                negatives,
            }
        })
        .collect();
    (pairs, stats)
}

/// A loss value with its gradient with respect to every logit row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<Logits>,
    /// Per-triple hinge state, in enumeration order. Empty for smooth losses.
    pub active: Vec<bool>,
    /// Smallest |hinge argument| over all triples.
    pub kink_distance: f64,
    pub stats: PairStats,
}

impl LossValue {
    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            value: self.value,
            active: self.active.clone(),
            kink_distance: self.kink_distance,
        }
    }
}

pub fn mmo_loss(batch: &LogitBatch, scale: &CefrScale) -> LossValue {
    let b = batch.len();
    let z = &batch.logits;
    let y = &batch.labels;
    let (pairs, stats) = build_pairs(batch);
    let mut grad = vec![[0.0; NUM_LEVELS]; b];
    let mut out = LossValue {
        value: 0.0,
        grad: Vec::new(),
        active: Vec::with_capacity(stats.triples),
        kink_distance: f64::INFINITY,
        stats,
    };
    if stats.triples == 0 {
        out.grad = grad;
        return out;
    }

    let cos: Vec<Cosine> = (0..b * b)
        .map(|ij| cosine_with_grad(&z[ij / b], &z[ij % b]))
        .collect();
    let phi = |i: usize, j: usize| &cos[i * b + j];
    let inv = 1.0 / stats.triples as f64;
    let mut total = 0.0;
    for p in &pairs {
        let i = p.anchor;
        for &j in &p.positives {
            let pos = phi(i, j);
            for &k in &p.negatives {
                let neg = phi(i, k);
                let h = scale.cumulative_distance(y[i], y[k]) + neg.value - pos.value;
                out.kink_distance = out.kink_distance.min(h.abs());
                out.active.push(h > 0.0);
                if h > 0.0 {
                    total += h;
                    for d in 0..NUM_LEVELS {
                        grad[i][d] += inv * (neg.du[d] - pos.du[d]);
                        grad[k][d] += inv * neg.dv[d];
                        grad[j][d] -= inv * pos.dv[d];
                    }
                }
            }
        }
    }
    out.value = total * inv;
    out.grad = grad;
    out
}

pub fn mean_cross_entropy(batch: &LogitBatch) -> LossValue {
    let inv = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    let grad = batch
        .logits
        .iter()
        .zip(&batch.labels)
        .map(|(z, y)| {
            let (l, g) = cross_entropy(z, y.index());
            value += l;
            std::array::from_fn(|d| g[d] * inv)
        })
        .collect();
    LossValue {
        value: value * inv,
        grad,
        active: Vec::new(),
        kink_distance: f64::INFINITY,
        stats: PairStats::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub ce: f64,
    pub mmo: f64,
    pub grad: Vec<Logits>,
    pub active: Vec<bool>,
    pub kink_distance: f64,
    pub stats: PairStats,
}

impl CombinedLoss {
    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            value: self.total,
            active: self.active.clone(),
            kink_distance: self.kink_distance,
        }
    }
}

/// `lambda * CE + (1 - lambda) * MMO`.
pub fn combined_loss(batch: &LogitBatch, scale: &CefrScale, lambda: f64) -> Result<CombinedLoss> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let ce = mean_cross_entropy(batch);
    let mmo = mmo_loss(batch, scale);
    // Pure endpoints are returned untouched so they reproduce either term exactly.
    let total = if lambda == 1.0 {
        ce.value
    } else if lambda == 0.0 {
        mmo.value
    } else {
        lambda * ce.value + (1.0 - lambda) * mmo.value
    };
    let grad = ce
        .grad
        .iter()
        .zip(&mmo.grad)
        .map(|(a, b)| std::array::from_fn(|d| lambda * a[d] + (1.0 - lambda) * b[d]))
        .collect();
    let hinges_matter = lambda < 1.0;
    Ok(CombinedLoss {
        total,
        ce: ce.value,
        mmo: mmo.value,
        grad,
        active: if hinges_matter {
            mmo.active
        } else {
            Vec::new()
        },
        kink_distance: if hinges_matter {
            mmo.kink_distance
        } else {
            f64::INFINITY
        },
        stats: mmo.stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginSchedule {
    pub mode: MarginMode,
    margins: [f64; NUM_LEVELS - 1],
    pub ema_decay: f64,
    pub scale: f64,
}

impl MarginSchedule {
    pub fn new(
        mode: MarginMode,
        margins: [f64; NUM_LEVELS - 1],
        ema_decay: f64,
        scale: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_decay) {
            return Err(Error::InvalidConfig(format!(
                "ema decay {ema_decay} outside [0, 1)"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "margin scale {scale} must be positive"
            )));
        }
        CefrScale::default().with_margins(margins)?;
        Ok(MarginSchedule {
            mode,
            margins,
            ema_decay,
            scale,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        MarginSchedule::new(
            cfg.margin_mode,
            cfg.initial_margins,
            cfg.margin_ema_decay,
            cfg.margin_scale,
        )
    }

    pub fn margins(&self) -> &[f64; NUM_LEVELS - 1] {
        &self.margins
    }

    pub fn cefr_scale(&self) -> CefrScale {
        CefrScale::default()
            .with_margins(self.margins)
            .expect("schedule margins are kept valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginEstimate {
    /// `1 - cos` between adjacent class centroids; `None` when either class
    /// had no instances.
    pub raw_gaps: [Option<f64>; NUM_LEVELS - 1],
    pub margins: [f64; NUM_LEVELS - 1],
    pub missing_classes: Vec<Level>,
}

/// Mean logit vector per class, `None` for classes without instances.
pub fn class_centroids(logits: &[Logits], labels: &[Level]) -> [Option<Logits>; NUM_LEVELS] {
    let mut sums = [[0.0; NUM_LEVELS]; NUM_LEVELS];
    let mut counts = [0usize; NUM_LEVELS];
    for (z, y) in logits.iter().zip(labels) {
        counts[y.index()] += 1;
        for (s, v) in sums[y.index()].iter_mut().zip(z) {
            *s += v;
        }
    }
    std::array::from_fn(|c| (counts[c] > 0).then(|| sums[c].map(|s| s / counts[c] as f64)))
}

/// Refreshes the schedule from logits of labelled instances.
pub fn estimate_from_logits(
    logits: &[Logits],
    labels: &[Level],
    schedule: &mut MarginSchedule,
) -> MarginEstimate {
    let centroids = class_centroids(logits, labels);
    let missing_classes: Vec<Level> = (0..NUM_LEVELS)
        .filter(|&c| centroids[c].is_none())
        .map(Level::from_index)
        .collect();
    let raw_gaps: [Option<f64>; NUM_LEVELS - 1] =
        std::array::from_fn(|c| match (&centroids[c], &centroids[c + 1]) {
            (Some(a), Some(b)) => Some(1.0 - cosine_similarity(a, b)),
            _ => None,
        });
    if schedule.mode == MarginMode::DataDriven {
        for (m, gap) in schedule.margins.iter_mut().zip(&raw_gaps) {
            if let Some(g) = gap {
                let target = (schedule.scale * g).clamp(0.0, MAX_MARGIN);
                *m = schedule.ema_decay * *m + (1.0 - schedule.ema_decay) * target;
            }
        }
    }
    MarginEstimate {
        raw_gaps,
        margins: schedule.margins,
        missing_classes,
    }
}

pub fn estimate_margins<T: Real>(
    model: &AspectModel<T>,
    instances: &[Instance],
    aspect: Aspect,
    schedule: &mut MarginSchedule,
) -> Result<MarginEstimate> {
    if schedule.mode == MarginMode::Fixed {
        return Ok(MarginEstimate {
            raw_gaps: [None; NUM_LEVELS - 1],
            margins: schedule.margins,
            missing_classes: Vec::new(),
        });
    }
    let logits = model.predict_all(instances)?;
    let labels = instances
        .iter()
        .map(|i| i.label(aspect))
        .collect::<Result<Vec<_>>>()?;
    Ok(estimate_from_logits(&logits, &labels, schedule))
}

pub fn level_pair_name(c: usize) -> String {
    format!("{}/{}", LEVEL_NAMES[c], LEVEL_NAMES[c + 1])
}

pub const MARGINS_CSV_HEADER: &str = "epoch,level_pair,raw_gap,smoothed_margin";

/// Appends seven rows for one epoch; a missing raw gap is left blank.
pub fn write_margins_csv<W: Write>(
    mut w: W,
    epoch: usize,
    estimate: &MarginEstimate,
) -> Result<()> {
    for c in 0..NUM_LEVELS - 1 {
        let raw = estimate.raw_gaps[c]
            .map(|g| format!("{g:.9}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{epoch},{},{raw},{:.9}",
            level_pair_name(c),
            estimate.margins[c]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn lv(c: usize) -> Level {
        Level::new(c).unwrap()
    }

    fn batch(rows: &[(Logits, usize)]) -> LogitBatch {
        LogitBatch::new(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| lv(r.1)).collect(),
        )
        .unwrap()
    }

    fn e(k: usize) -> Logits {
        std::array::from_fn(|d| if d == k { 1.0 } else { 0.0 })
    }

    /// Direct triple enumeration, sharing nothing with `mmo_loss`.
    fn oracle(b: &LogitBatch, margins: &[f64; 7]) -> f64 {
        let cos = |u: &Logits, v: &Logits| {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let n = |w: &Logits| w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n(u) == 0.0 || n(v) == 0.0 {
                0.0
            } else {
                dot / (n(u) * n(v))
            }
        };
        let dist = |a: usize, c: usize| -> f64 { margins[a.min(c)..a.max(c)].iter().sum() };
        let (z, y) = (b.logits(), b.labels());
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..z.len() {
            for j in 0..z.len() {
                for k in 0..z.len() {
                    if j != i && y[j] == y[i] && y[k] != y[i] {
                        sum += (dist(y[i].index(), y[k].index()) + cos(&z[i], &z[k])
                            - cos(&z[i], &z[j]))
                        .max(0.0);
                        n += 1;
                    }
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    #[test]
    fn pair_enumeration() {
        let b = batch(&[(e(0), 1), (e(1), 1), (e(2), 2)]);
        let (pairs, stats) = build_pairs(&b);
        assert_eq!(pairs[0].positives, vec![1]);
        assert_eq!(pairs[0].negatives, vec![2]);
        assert_eq!(stats.no_positive, 1);
        assert_eq!(stats.triples, 2);

        let b = batch(&[(e(0), 1), (e(1), 1), (e(2), 3), (e(3), 3)]);
        assert_eq!(build_pairs(&b).1.triples, 4 * 1 * 2);
    }

    #[test]
    fn single_class_batch_has_no_mmo_term() {
        let b = batch(&[(e(0), 4), (e(1), 4), (e(2), 4)]);
        let l = mmo_loss(&b, &CefrScale::default());
        assert_eq!(l.value, 0.0);
        assert_eq!(l.stats.no_negative, 3);
        assert!(l.grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn satisfied_batch_is_zero() {
        let neg = e(0).map(|v| -v);
        let b = batch(&[(e(0), 1), (e(0), 1), (neg, 2), (neg, 2)]);
        assert_eq!(mmo_loss(&b, &CefrScale::default()).value, 0.0);
    }

    #[test]
    fn ties_give_mean_margin() {
        let b = batch(&[(e(0), 1), (e(0), 1), (e(0), 3), (e(0), 3)]);
        let scale = CefrScale::with_uniform_margins(0.7);
        assert!((mmo_loss(&b, &scale).value - 1.4).abs() < 1e-15);
    }

    #[test]
    fn hand_set_three_instance_batch() {
        let mut a = [0.0; 8];
        a[..3].copy_from_slice(&[1.0, 2.0, 0.5]);
        let mut p = [0.0; 8];
        p[..3].copy_from_slice(&[0.5, 1.0, 2.0]);
        let mut n = [0.0; 8];
        n[..3].copy_from_slice(&[2.0, 0.0, 1.0]);
        let b = batch(&[(a, 2), (p, 2), (n, 5)]);
        let margins = [0.3, 0.2, 0.1, 0.25, 0.4, 0.5, 0.6];
        let scale = CefrScale::default().with_margins(margins).unwrap();
        // anchor a: 0.55 + cos(a,n) - cos(a,p); anchor p: 0.55 + cos(p,n) - cos(p,a)
        let cap = 3.5 / 5.25;
        let can = 2.5 / (5.25f64.sqrt() * 5f64.sqrt());
        let cpn = 3.0 / (5.25f64.sqrt() * 5f64.sqrt());
        let expected = ((0.55 + can - cap).max(0.0) + (0.55 + cpn - cap).max(0.0)) / 2.0;
        assert_eq!(mmo_loss(&b, &scale).value, oracle(&b, &margins));
        assert!((mmo_loss(&b, &scale).value - expected).abs() < 1e-15);
    }

    #[test]
    fn combined_endpoints() {
        let b = batch(&[
            ([0.1, 0.4, -0.2, 0.3, 0.0, 1.0, 0.5, -1.0], 1),
            (e(3), 1),
            (e(5), 6),
        ]);
        let s = CefrScale::default();
        assert_eq!(
            combined_loss(&b, &s, 1.0).unwrap().total,
            mean_cross_entropy(&b).value
        );
        assert_eq!(
            combined_loss(&b, &s, 0.0).unwrap().total,
            mmo_loss(&b, &s).value
        );
        let half = combined_loss(&b, &s, 0.5).unwrap();
        assert!((half.total - (half.ce + half.mmo) / 2.0).abs() < 1e-15);
        assert!(combined_loss(&b, &s, 1.5).is_err());
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln8() {
        let b = batch(&[([0.3; 8], 1), ([-2.0; 8], 8)]);
        assert!((mean_cross_entropy(&b).value - 8f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn mmo_gradient_matches_finite_differences() {
        let b = batch(&[
            ([0.2, -0.4, 1.0, 0.3, 0.0, 0.7, -0.2, 0.1], 2),
            ([0.5, 0.4, -1.0, 0.3, 0.9, 0.1, 0.2, 0.0], 2),
            ([-0.3, 0.8, 0.2, -0.6, 0.4, 0.0, 0.3, 0.5], 4),
            ([0.1, 0.1, 0.6, 0.9, -0.5, 0.2, 0.4, -0.1], 7),
        ]);
        let s = CefrScale::default()
            .with_margins([0.2, 0.3, 0.1, 0.4, 0.2, 0.3, 0.1])
            .unwrap();
        let l = combined_loss(&b, &s, 0.3).unwrap();
        assert!(l.kink_distance > 1e-3);
        let h = 1e-6;
        for i in 0..b.len() {
            for d in 0..NUM_LEVELS {
                let mut up = b.clone();
                up.logits[i][d] += h;
                let mut dn = b.clone();
                dn.logits[i][d] -= h;
                let fd = (combined_loss(&up, &s, 0.3).unwrap().total
                    - combined_loss(&dn, &s, 0.3).unwrap().total)
                    / (2.0 * h);
                assert!(
                    (fd - l.grad[i][d]).abs() < 1e-7,
                    "row {i} dim {d}: {fd} vs {}",
                    l.grad[i][d]
                );
            }
        }
    }

    #[test]
    fn centroid_gap_extremes() {
        let mut sched = MarginSchedule::new(MarginMode::DataDriven, [1.0; 7], 0.0, 1.0).unwrap();
        let labels: Vec<Level> = (1..=8).map(lv).collect();
        let mut logits: Vec<Logits> = (0..8).map(e).collect();
        logits[1] = logits[0];
        logits[2] = logits[0].map(|v| -v);
        let est = estimate_from_logits(&logits, &labels, &mut sched);
        assert_eq!(est.raw_gaps[0], Some(0.0));
        assert_eq!(est.raw_gaps[1], Some(2.0));
        assert_eq!(est.raw_gaps[3], Some(1.0));
        assert_eq!(est.margins[1], 2.0);
    }

    #[test]
    fn ema_and_missing_classes() {
        let mut sched = MarginSchedule::new(MarginMode::DataDriven, [0.5; 7], 0.9, 1.0).unwrap();
        let labels: Vec<Level> = (1..=7).map(lv).collect();
        let logits: Vec<Logits> = (0..7).map(e).collect();
        let est = estimate_from_logits(&logits, &labels, &mut sched);
        assert_eq!(est.missing_classes, vec![lv(8)]);
        assert_eq!(est.raw_gaps[6], None);
        assert_eq!(est.margins[6], 0.5);
        assert!((est.margins[0] - (0.9 * 0.5 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn fixed_mode_leaves_margins() {
        let m = [0.9236, 0.5, 0.7, 0.6, 0.8, 0.4868, 0.65];
        let mut sched = MarginSchedule::new(MarginMode::Fixed, m, 0.9, 1.0).unwrap();
        let labels: Vec<Level> = (1..=8).map(lv).collect();
        let logits: Vec<Logits> = (0..8).map(e).collect();
        assert_eq!(
            estimate_from_logits(&logits, &labels, &mut sched).margins,
            m
        );
        assert_eq!(sched.margins(), &m);
    }

    #[test]
    fn margins_csv_rows() {
        let est = MarginEstimate {
            raw_gaps: [
                Some(0.25),
                None,
                Some(1.0),
                Some(0.0),
                Some(0.5),
                Some(0.5),
                Some(2.0),
            ],
            margins: [0.25, 1.0, 1.0, 0.0, 0.5, 0.5, 2.0],
            missing_classes: vec![],
        };
        let mut out = Vec::new();
        write_margins_csv(&mut out, 3, &est).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "3,Pre-A1/A1,0.250000000,0.250000000");
        assert_eq!(lines[1], "3,A1/A1+,,1.000000000");
    }

    fn arb_batch() -> impl Strategy<Value = LogitBatch> {
        (1usize..=8)
            .prop_flat_map(|b| {
                (
                    prop::collection::vec(prop::array::uniform8(-3.0f64..3.0), b),
                    prop::collection::vec(1usize..=8, b),
                )
            })
            .prop_map(|(z, y)| LogitBatch::new(z, y.into_iter().map(lv).collect()).unwrap())
    }

    fn arb_margins() -> impl Strategy<Value = [f64; 7]> {
        prop::array::uniform7(0.0f64..1.0)
    }

    proptest! {
        #[test]
        fn matches_oracle(b in arb_batch(), m in arb_margins()) {
            let s = CefrScale::default().with_margins(m).unwrap();
            prop_assert!((mmo_loss(&b, &s).value - oracle(&b, &m)).abs() < 1e-12);
        }

        #[test]
        fn non_negative(b in arb_batch(), m in arb_margins()) {
            let s = CefrScale::default().with_margins(m).unwrap();
            prop_assert!(mmo_loss(&b, &s).value >= 0.0);
        }

        #[test]
        fn monotone_in_margins(b in arb_batch(), m in arb_margins(), bump in arb_margins()) {
            let lo = CefrScale::default().with_margins(m).unwrap();
            let hi = CefrScale::default().with_margins(std::array::from_fn(|c| m[c] + bump[c])).unwrap();
            prop_assert!(mmo_loss(&b, &hi).value >= mmo_loss(&b, &lo).value - 1e-12);
        }

        #[test]
        fn invariant_to_positive_scaling(b in arb_batch(), m in arb_margins(), c in 0.01f64..50.0) {
            let s = CefrScale::default().with_margins(m).unwrap();
            prop_assert!((mmo_loss(&b, &s).value - mmo_loss(&b.scaled(c), &s).value).abs() < 1e-9);
        }

        #[test]
        fn fixed_mode_identity(z in prop::collection::vec(prop::array::uniform8(-3.0f64..3.0), 1..20), m in arb_margins()) {
            let labels: Vec<Level> = (0..z.len()).map(|i| Level::from_index(i % 8)).collect();
            let mut sched = MarginSchedule::new(MarginMode::Fixed, m, 0.5, 2.0).unwrap();
            prop_assert_eq!(estimate_from_logits(&z, &labels, &mut sched).margins, m);
        }

        #[test]
        fn data_driven_margins_stay_bounded(z in prop::collection::vec(prop::array::uniform8(-3.0f64..3.0), 1..20), scale in 0.1f64..10.0) {
            let labels: Vec<Level> = (0..z.len()).map(|i| Level::from_index(i % 8)).collect();
            let mut sched = MarginSchedule::new(MarginMode::DataDriven, [1.0; 7], 0.3, scale).unwrap();
            let est = estimate_from_logits(&z, &labels, &mut sched);
            prop_assert!(est.margins.iter().all(|m| m.is_finite() && (0.0..=MAX_MARGIN).contains(m)));
        }
    }
}
