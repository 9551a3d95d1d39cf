//! Language-use vectors: one-hot UPOS, one-hot dependency relation and
//! multi-hot morphological features, against a frozen, versioned
//! vocabulary of 263 slots.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

pub const LANGUAGE_DIM: usize = 263;
pub const UPOS_SLOTS: usize = 18;
pub const DEPREL_SLOTS: usize = 51;
pub const MORPH_SLOTS: usize = 194;
pub const UNKNOWN: &str = "<unk>";

const BUNDLED_VOCAB: &str = include_str!("../../vocab/features-v1.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinguisticToken {
    pub word: String,
    pub upos: String,
    pub deprel: String,
    #[serde(default)]
    pub morph: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Group {
    Upos,
    Deprel,
    Morph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVocab {
    version: u32,
    slots: Vec<String>,
    index: HashMap<(Group, String), usize>,
    unknown: [usize; 3],
}

impl FeatureVocab {
    /// The vocabulary shipped with this crate.
    pub fn bundled() -> Self {
        FeatureVocab::parse(BUNDLED_VOCAB).expect("bundled vocabulary is valid")
    }

    /// Parses a vocabulary file: a `#version N` line, then one
    /// `group:value` slot name per line. Other `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfig(format!("feature vocabulary: {m}"));
        let mut version = None;
        let mut slots = Vec::new();
        let mut index = HashMap::new();
        let mut counts = [0usize; 3];
        let mut unknown = [usize::MAX; 3];
        let mut last_group = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(v) = line.strip_prefix("#version ") {
                version = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| bad(format!("bad version {v:?}")))?,
                );
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (group, value) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("bad slot {line:?}")))?;
            let (g, gi) = match group {
                "upos" => (Group::Upos, 0),
                "deprel" => (Group::Deprel, 1),
                "morph" => (Group::Morph, 2),
                _ => return Err(bad(format!("unknown group {group:?}"))),
            };
            if gi < last_group {
                return Err(bad(format!("slot {line:?} out of group order")));
            }
            last_group = gi;
            let slot = slots.len();
            if value == UNKNOWN {
                unknown[gi] = slot;
            }
            if index.insert((g, value.to_string()), slot).is_some() {
                return Err(bad(format!("duplicate slot {line:?}")));
            }
            counts[gi] += 1;
            slots.push(line.to_string());
        }
        let version = version.ok_or_else(|| bad("missing #version line".into()))?;
        if counts != [UPOS_SLOTS, DEPREL_SLOTS, MORPH_SLOTS] {
            return Err(bad(format!(
                "slot counts {counts:?}, expected [{UPOS_SLOTS}, {DEPREL_SLOTS}, {MORPH_SLOTS}]"
            )));
        }
        if unknown.contains(&usize::MAX) {
            return Err(bad("every group needs an <unk> slot".into()));
        }
        Ok(FeatureVocab {
            version,
            slots,
            index,
            unknown,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slots
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#version {}\n", self.version);
        for slot in &self.slots {
            s.push_str(slot);
            s.push('\n');
        }
        s
    }

    fn lookup(&self, group: Group, value: &str) -> usize {
        let gi = group as usize;
        self.index
            .get(&(group, value.to_string()))
            .copied()
            .unwrap_or(self.unknown[gi])
    }

    pub fn encode(&self, token: &LinguisticToken) -> [f32; LANGUAGE_DIM] {
        let mut row = [0.0f32; LANGUAGE_DIM];
        row[self.lookup(Group::Upos, &token.upos)] = 1.0;
        row[self.lookup(Group::Deprel, &token.deprel)] = 1.0;
        let morph: BTreeSet<&str> = token.morph.iter().map(String::as_str).collect();
        for feat in morph {
            // unknown features accumulate in the shared <unk> slot
            row[self.lookup(Group::Morph, feat)] += 1.0;
        }
        row
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        let (group, value) = name.split_once(':')?;
        let g = match group {
            "upos" => Group::Upos,
            "deprel" => Group::Deprel,
            "morph" => Group::Morph,
            _ => return None,
        };
        self.index.get(&(g, value.to_string())).copied()
    }
}

pub fn language_features(tokens: &[LinguisticToken], vocab: &FeatureVocab) -> Matrix {
    let rows: Vec<Vec<f32>> = tokens.iter().map(|t| vocab.encode(t).to_vec()).collect();
    Matrix::from_rows(LANGUAGE_DIM, &rows).expect("encoded rows are LANGUAGE_DIM wide")
}
