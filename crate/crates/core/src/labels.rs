//! The ordered CEFR label space, raw-score digitization and the
//! cumulative ordinal distance between levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LEVELS: usize = 8;

pub const LEVEL_NAMES: [&str; NUM_LEVELS] = ["Pre-A1", "A1", "A1+", "A2", "A2+", "B1", "B1+", "B2"];

/// Default raw half-point scores, one per level in ascending order.
///
/// The raw scale also contains 5.0, which has no level of its own and is
/// rejected unless a custom map assigns it.
pub const DEFAULT_SCORES: [f64; NUM_LEVELS] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5];

const SCORE_EPS: f64 = 1e-9;

/// A 1-based class index into a [`CefrScale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(u8);

impl Level {
    pub fn new(class: usize) -> Result<Self> {
        if (1..=NUM_LEVELS).contains(&class) {
            Ok(Level(class as u8))
        } else {
            Err(Error::InvalidClass {
                index: class,
                levels: NUM_LEVELS,
            })
        }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_LEVELS, "level index {index} out of range");
        Level(index as u8 + 1)
    }

    /// 1-based class number.
    pub fn class(self) -> usize {
        self.0 as usize
    }

    /// 0-based position, for indexing logits and matrices.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn name(self) -> &'static str {
        LEVEL_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = Level> {
        (0..NUM_LEVELS).map(Level::from_index)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Content,
    Delivery,
    LanguageUse,
    Holistic,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [
        Aspect::Content,
        Aspect::Delivery,
        Aspect::LanguageUse,
        Aspect::Holistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Content => "content",
            Aspect::Delivery => "delivery",
            Aspect::LanguageUse => "language_use",
            Aspect::Holistic => "holistic",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown aspect {s:?}")))
    }
}

/// Ordered 8-level label space.
#[derive(Debug, Clone, PartialEq)]
pub struct CefrScale {
    score_map: Vec<(f64, Level)>,
    adjacent_margins: [f64; NUM_LEVELS - 1],
}

impl Default for CefrScale {
    fn default() -> Self {
        CefrScale::with_uniform_margins(1.0)
    }
}

impl CefrScale {
    pub fn new(
        score_map: Vec<(f64, usize)>,
        adjacent_margins: [f64; NUM_LEVELS - 1],
    ) -> Result<Self> {
        if score_map.len() != NUM_LEVELS {
            return Err(Error::InvalidScale(format!(
                "score map has {} entries, expected {NUM_LEVELS}",
                score_map.len()
            )));
        }
        let mut seen = [false; NUM_LEVELS];
        let mut entries = Vec::with_capacity(NUM_LEVELS);
        for (score, class) in score_map {
            if !score.is_finite() {
                return Err(Error::InvalidScale(format!("non-finite score {score}")));
            }
            let level = Level::new(class)?;
            if std::mem::replace(&mut seen[level.index()], true) {
                return Err(Error::InvalidScale(format!("class {class} mapped twice")));
            }
            entries.push((score, level));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in entries.windows(2) {
            if (w[1].0 - w[0].0).abs() < SCORE_EPS {
                return Err(Error::InvalidScale(format!("duplicate score {}", w[0].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidScale(format!(
                    "score map is not monotone at {} -> {}",
                    w[0].0, w[1].0
                )));
            }
        }
        let scale = CefrScale {
            score_map: entries,
            adjacent_margins: [0.0; NUM_LEVELS - 1],
        };
        scale.with_margins(adjacent_margins)
    }

    pub fn with_uniform_margins(margin: f64) -> Self {
        let map = DEFAULT_SCORES
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i + 1))
            .collect();
        CefrScale::new(map, [margin; NUM_LEVELS - 1]).expect("default scale is valid")
    }

    /// Returns a copy of this scale carrying different adjacent margins.
    pub fn with_margins(&self, margins: [f64; NUM_LEVELS - 1]) -> Result<Self> {
        if let Some(bad) = margins.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::InvalidScale(format!(
                "adjacent margin {bad} must be finite and >= 0"
            )));
        }
        Ok(CefrScale {
            score_map: self.score_map.clone(),
            adjacent_margins: margins,
        })
    }

    pub fn levels(&self) -> &'static [&'static str; NUM_LEVELS] {
        &LEVEL_NAMES
    }

    pub fn num_levels(&self) -> usize {
        NUM_LEVELS
    }

    pub fn adjacent_margins(&self) -> &[f64; NUM_LEVELS - 1] {
        &self.adjacent_margins
    }

    /// Score keys in ascending order with their classes.
    pub fn score_map(&self) -> &[(f64, Level)] {
        &self.score_map
    }

    pub fn digitize_score(&self, score: f64) -> Result<Level> {
        self.score_map
            .iter()
            .find(|(s, _)| (s - score).abs() < SCORE_EPS)
            .map(|&(_, level)| level)
            .ok_or(Error::UnknownScore(score))
    }

    /// Sum of adjacent margins along the path between two levels.
    pub fn cumulative_distance(&self, a: Level, b: Level) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.adjacent_margins[lo.index()..hi.index()]
            .iter()
            .fold(0.0, |acc, m| acc + m)
    }

    /// Full pairwise distance table, indexed by 0-based level.
    pub fn distance_table(&self) -> [[f64; NUM_LEVELS]; NUM_LEVELS] {
        let mut table = [[0.0; NUM_LEVELS]; NUM_LEVELS];
        for a in Level::all() {
            for b in Level::all() {
                table[a.index()][b.index()] = self.cumulative_distance(a, b);
            }
        }
        table
    }
}
