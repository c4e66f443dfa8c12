//! Labels, SNLI/V-SNLI records, image alignment, the hard subset, model-facing
//! examples and a synthetic dataset generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::encoders::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::rng::Seeded;

/// The three relations, in the fixed class order used for logits and tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Entailment,
    Contradiction,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }

    /// Accepts full names, capitalized names and single letters.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" | "e" => Some(Label::Entailment),
            "contradiction" | "c" => Some(Label::Contradiction),
            "neutral" | "n" => Some(Label::Neutral),
            _ => None,
        }
    }

    /// SNLI gold field: `"-"` (no consensus) maps to `Ok(None)`.
    pub fn parse_gold(s: &str) -> Result<Option<Label>> {
        if s.trim() == "-" {
            return Ok(None);
        }
        Label::parse(s)
            .map(Some)
            .ok_or_else(|| Error::Invalid(format!("unknown label {s:?}")))
    }
}

impl core::fmt::Display for Label {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnliRecord {
    pub pair_id: String,
    pub caption_id: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    /// `None` for the no-consensus gold label.
    pub gold: Option<Label>,
    #[serde(default)]
    pub annotator_labels: Vec<String>,
    /// Bracketed constituency parses, when the source carries them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_parse: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_parse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsnliRecord {
    #[serde(flatten)]
    pub record: SnliRecord,
    pub image_id: String,
}

/// Image file name for a caption id: the part before `#`, or the whole id.
pub fn image_id_from_caption(caption_id: &str) -> &str {
    caption_id.split_once('#').map_or(caption_id, |(id, _)| id)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub kept: Vec<VsnliRecord>,
    pub dropped: usize,
}

/// Pairs each record with the image its premise captions; records whose image
/// is not in `image_ids` are dropped. Order is preserved.
pub fn align_images(records: Vec<SnliRecord>, image_ids: &BTreeSet<String>) -> Alignment {
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for record in records {
        let id = image_id_from_caption(&record.caption_id);
        if image_ids.contains(id) {
            let image_id = String::from(id);
            kept.push(VsnliRecord { record, image_id });
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} records without a matching image");
    }
    Alignment { kept, dropped }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardSubset {
    pub records: Vec<VsnliRecord>,
    /// Listed ids that matched no record.
    pub missing: usize,
}

pub fn filter_hard<S: AsRef<str>>(records: &[VsnliRecord], hard_ids: &[S]) -> HardSubset {
    let wanted: BTreeSet<&str> = hard_ids.iter().map(|s| s.as_ref().trim()).filter(|s| !s.is_empty()).collect();
    let present: BTreeSet<&str> = records.iter().map(|r| r.record.pair_id.as_str()).collect();
    let missing = wanted.iter().filter(|id| !present.contains(*id)).count();
    if missing > 0 {
        log::warn!("{missing} hard-subset ids match no record");
    }
    let records = records
        .iter()
        .filter(|r| wanted.contains(r.record.pair_id.as_str()))
        .cloned()
        .collect();
    HardSubset { records, missing }
}

/// Per-class label counts; no-consensus records are counted separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub entailment: usize,
    pub contradiction: usize,
    pub neutral: usize,
    pub no_gold: usize,
}

impl LabelCounts {
    pub fn add(&mut self, gold: Option<Label>) {
        match gold {
            Some(Label::Entailment) => self.entailment += 1,
            Some(Label::Contradiction) => self.contradiction += 1,
            Some(Label::Neutral) => self.neutral += 1,
            None => self.no_gold += 1,
        }
    }

    pub fn of(golds: impl IntoIterator<Item = Option<Label>>) -> Self {
        let mut c = LabelCounts::default();
        for g in golds {
            c.add(g);
        }
        c
    }

    /// Records carrying a usable gold label.
    pub fn labelled(&self) -> usize {
        self.entailment + self.contradiction + self.neutral
    }
}

/// One model-facing pair: token indices, optional image id and gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub pair_id: String,
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub image_id: Option<String>,
    pub label: Label,
}

impl Example {
    /// Encodes a record; `None` when its gold label is the no-consensus marker.
    pub fn from_record(r: &SnliRecord, image_id: Option<&str>, vocab: &Vocabulary) -> Option<Example> {
        Some(Example {
            pair_id: r.pair_id.clone(),
            premise: vocab.encode(&r.premise),
            hypothesis: vocab.encode(&r.hypothesis),
            image_id: image_id.map(String::from),
            label: r.gold?,
        })
    }
}

/// Encodes V-SNLI records, skipping no-consensus ones.
pub fn examples_from_vsnli(records: &[VsnliRecord], vocab: &Vocabulary) -> Vec<Example> {
    records
        .iter()
        .filter_map(|r| Example::from_record(&r.record, Some(&r.image_id), vocab))
        .collect()
}

/// Parameters of [`synthetic_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub pairs: usize,
    /// Vocabulary size including PAD and UNK.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            pairs: 64,
            vocab_size: 50,
            min_len: 3,
            max_len: 6,
            seed: 0,
        }
    }
}

/// Balanced random pairs over word ids `2..vocab_size`, each with its own image id.
///
/// Entailment hypotheses reuse premise words, contradictions negate them with a
/// reserved cue word, and neutral hypotheses draw fresh words, so the relation
/// is recoverable from the text.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(Vocabulary, Vec<Example>)> {
    if spec.vocab_size < 8 || spec.min_len == 0 || spec.max_len < spec.min_len {
        return Err(Error::Config(format!("bad synthetic spec {spec:?}")));
    }
    let mut tokens = alloc::vec![String::from(PAD_TOKEN), String::from(UNK_TOKEN)];
    tokens.extend((2..spec.vocab_size).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens)?;
    let cue = spec.vocab_size - 1;
    let words = spec.vocab_size - 3; // ids 2..vocab_size-1, cue excluded
    let mut rng = Seeded::derived(spec.seed, "synthetic");
    let mut out = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let label = Label::ALL[i % 3];
        let len = spec.min_len + rng.usize(spec.max_len - spec.min_len + 1);
        let premise: Vec<usize> = (0..len).map(|_| 2 + rng.usize(words)).collect();
        let hlen = 1 + rng.usize(len);
        let mut hypothesis: Vec<usize> = match label {
            Label::Entailment | Label::Contradiction => {
                let mut h = premise.clone();
                rng.shuffle(&mut h);
                h.truncate(hlen);
                h
            }
            Label::Neutral => (0..hlen).map(|_| 2 + rng.usize(words)).collect(),
        };
        if label == Label::Contradiction {
            let at = rng.usize(hypothesis.len() + 1);
            hypothesis.insert(at, cue);
        }
        out.push(Example {
            pair_id: format!("syn{i}"),
            premise,
            hypothesis,
            image_id: Some(format!("syn{i}.jpg")),
            label,
        });
    }
    Ok((vocab, out))
}

/// Image ids referenced by a set of examples, sorted and deduplicated.
pub fn image_ids(examples: &[Example]) -> Vec<String> {
    let set: BTreeSet<&String> = examples.iter().filter_map(|e| e.image_id.as_ref()).collect();
    set.into_iter().cloned().collect()
}

/// Rejects duplicate pair ids within one split.
pub fn check_unique_pair_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeMap::new();
    for (n, id) in ids.into_iter().enumerate() {
        if let Some(first) = seen.insert(id, n) {
            return Err(Error::Invalid(format!("duplicate pair_id {id} (records {first} and {n})")));
        }
    }
    Ok(())
}
