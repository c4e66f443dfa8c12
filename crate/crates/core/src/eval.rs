//! Accuracy reports, confusion matrices, foil-image maps and tag breakdowns.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Label};
use crate::error::{Error, Result};
use crate::features::{ImageFeature, ImageLookup};
use crate::models::{resolve_input, Grounding, Model, ModelConfig};
use crate::stats::{chi_square_2x2, ChiSquare};
use crate::tagging::TagSet;

/// Counts indexed `[gold][predicted]` in entailment, contradiction, neutral order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 3]; 3],
}

impl Confusion {
    pub fn add(&mut self, gold: Label, predicted: Label) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Confusion::default();
        for (g, p) in pairs {
            c.add(g, p);
        }
        c
    }

    pub fn get(&self, gold: Label, predicted: Label) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, gold: Label) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Diagonal over row total; `None` for a class with no gold examples.
    pub fn class_accuracy(&self, gold: Label) -> Option<f64> {
        let n = self.row_total(gold);
        (n > 0).then(|| self.get(gold, gold) as f64 / n as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }
}

/// Cells counted as implausible errors when only the hypothesis and the
/// image are seen: entailment and contradiction confused with each other.
pub const IMPLAUSIBLE_CELLS: [(Label, Label); 2] = [
    (Label::Contradiction, Label::Entailment),
    (Label::Entailment, Label::Contradiction),
];

pub fn flags_implausible(grounding: Grounding) -> bool {
    grounding == Grounding::HypothesisImage
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub gold: Label,
    pub predicted: Label,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub entailment: Option<f64>,
    pub contradiction: Option<f64>,
    pub neutral: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAccuracy {
    pub examples: u64,
    pub correct: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: Option<ModelConfig>,
    pub dataset: String,
    pub foil: bool,
    pub foil_checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub examples: u64,
    pub overall: f64,
    pub per_class: ClassAccuracy,
    pub confusion: Confusion,
    /// Populated only for hypothesis-plus-image evaluation.
    pub implausible: Vec<FlaggedCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_tag: Option<BTreeMap<String, TagAccuracy>>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub gold: Label,
    pub predicted: Label,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.gold == self.predicted
    }
}

impl EvaluationReport {
    /// Builds a report from per-pair predictions.
    pub fn from_predictions(
        predictions: &[PredictionRecord],
        flag_implausible: bool,
        tags: Option<&BTreeMap<String, TagSet>>,
        metadata: ReportMetadata,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Empty("evaluation dataset"));
        }
        let confusion = Confusion::from_pairs(predictions.iter().map(|p| (p.gold, p.predicted)));
        let implausible = if flag_implausible {
            IMPLAUSIBLE_CELLS
                .iter()
                .map(|&(gold, predicted)| FlaggedCell {
                    gold,
                    predicted,
                    count: confusion.get(gold, predicted),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(EvaluationReport {
            examples: confusion.total(),
            overall: confusion.accuracy().unwrap_or(0.0),
            per_class: ClassAccuracy {
                entailment: confusion.class_accuracy(Label::Entailment),
                contradiction: confusion.class_accuracy(Label::Contradiction),
                neutral: confusion.class_accuracy(Label::Neutral),
            },
            confusion,
            implausible,
            per_tag: tags.map(|t| tag_breakdown(predictions, t)),
            metadata,
        })
    }

    pub fn is_flagged(&self, gold: Label, predicted: Label) -> bool {
        self.implausible.iter().any(|c| c.gold == gold && c.predicted == predicted)
    }

    /// Recomputes every accuracy from the confusion matrix and compares exactly.
    pub fn is_consistent(&self) -> bool {
        let c = &self.confusion;
        c.total() == self.examples
            && c.accuracy() == Some(self.overall)
            && c.class_accuracy(Label::Entailment) == self.per_class.entailment
            && c.class_accuracy(Label::Contradiction) == self.per_class.contradiction
            && c.class_accuracy(Label::Neutral) == self.per_class.neutral
    }
}

/// Test image id to the most dissimilar other test image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoilMap(pub BTreeMap<String, String>);

impl FoilMap {
    /// Maps every id to itself; only meaningful for testing the substitution path.
    pub fn identity<S: AsRef<str>>(ids: &[S]) -> Self {
        FoilMap(ids.iter().map(|s| (String::from(s.as_ref()), String::from(s.as_ref()))).collect())
    }

    pub fn get(&self, image_id: &str) -> Option<&str> {
        self.0.get(image_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// FNV-1a over the sorted `id TAB foil NEWLINE` lines, as 16 hex digits.
    pub fn checksum(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in &self.0 {
            for b in k.bytes().chain(*b"\t").chain(v.bytes()).chain(*b"\n") {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

/// For each id, the other id whose feature has the smallest cosine to it.
/// Ties go to the lexicographically smallest id. Features are compared as
/// flat vectors, so any variant works as long as all shapes agree.
pub fn foil_map<S: AsRef<str>>(features: &dyn ImageLookup, image_ids: &[S]) -> Result<FoilMap> {
    let mut ids: Vec<&str> = image_ids.iter().map(|s| s.as_ref()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Degenerate(format!("foil map needs at least 2 distinct images, got {}", ids.len())));
    }
    let feats: Vec<&ImageFeature> = ids
        .iter()
        .map(|id| features.feature(id).ok_or_else(|| Error::MissingImage(String::from(*id))))
        .collect::<Result<_>>()?;
    let shape = feats[0].data.shape();
    let mut norms = Vec::with_capacity(feats.len());
    for f in &feats {
        if f.data.shape() != shape || f.variant != feats[0].variant {
            return Err(Error::shape("foil_map", shape, f.data.shape()));
        }
        let v = f.data.data();
        let n = libm::sqrt(crate::tensor::dot(v, v));
        if n == 0.0 {
            return Err(Error::ZeroNorm { op: "foil_map" });
        }
        norms.push(n);
    }
    let mut out = BTreeMap::new();
    for i in 0..ids.len() {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..ids.len() {
            if i == j {
                continue;
            }
            let c = crate::tensor::dot(feats[i].data.data(), feats[j].data.data()) / (norms[i] * norms[j]);
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((j, c));
            }
        }
        let (j, _) = best.expect("at least two images");
        out.insert(String::from(ids[i]), String::from(ids[j]));
    }
    Ok(FoilMap(out))
}

/// Lookup that resolves each id through a foil map first.
struct FoiledLookup<'a> {
    inner: &'a dyn ImageLookup,
    foils: &'a FoilMap,
}

impl ImageLookup for FoiledLookup<'_> {
    fn feature(&self, image_id: &str) -> Option<&ImageFeature> {
        self.inner.feature(self.foils.get(image_id)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Runs the model over `examples`, replacing images through `foils` when given.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    images: &dyn ImageLookup,
    foils: Option<&FoilMap>,
    tags: Option<&BTreeMap<String, TagSet>>,
    dataset: &str,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let foiled;
    let lookup: &dyn ImageLookup = match foils {
        Some(f) => {
            foiled = FoiledLookup { inner: images, foils: f };
            &foiled
        }
        None => images,
    };
    let config = model.config();
    let needs_image = config.architecture.uses_image() && config.grounding.uses_image();
    let mut predictions = Vec::with_capacity(examples.len());
    for ex in examples {
        if let (Some(f), true, Some(id)) = (foils, needs_image, ex.image_id.as_deref()) {
            if f.get(id).is_none() {
                return Err(Error::MissingImage(format!("{id} (no foil)")));
            }
        }
        let input = resolve_input(config, ex, lookup)?;
        let p = model.predict(&input)?;
        predictions.push(PredictionRecord {
            pair_id: ex.pair_id.clone(),
            gold: ex.label,
            predicted: p.label,
        });
    }
    let metadata = ReportMetadata {
        model: Some(config.clone()),
        dataset: String::from(dataset),
        foil: foils.is_some(),
        foil_checksum: foils.map(FoilMap::checksum),
    };
    let report =
        EvaluationReport::from_predictions(&predictions, flags_implausible(config.grounding), tags, metadata)?;
    Ok(Evaluation { report, predictions })
}

/// Accuracy restricted to the pairs holding each tag. Tags no pair holds are absent.
pub fn tag_breakdown(predictions: &[PredictionRecord], tags: &BTreeMap<String, TagSet>) -> BTreeMap<String, TagAccuracy> {
    let mut acc: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for p in predictions {
        let Some(t) = tags.get(&p.pair_id) else { continue };
        for name in t.names() {
            let e = acc.entry(name).or_default();
            e.0 += 1;
            e.1 += p.correct() as u64;
        }
    }
    acc.into_iter()
        .map(|(k, (n, c))| {
            (
                k,
                TagAccuracy {
                    examples: n,
                    correct: c,
                    accuracy: c as f64 / n as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagComparison {
    pub a: TagAccuracy,
    pub b: TagAccuracy,
    /// `None` when the 2×2 table has a zero margin (e.g. both models perfect).
    pub chi_square: Option<ChiSquare>,
}

/// Per-tag accuracies of two models with a chi-square test on correct/wrong counts.
pub fn compare_by_tag(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    tags: &BTreeMap<String, TagSet>,
) -> BTreeMap<String, TagComparison> {
    let ta = tag_breakdown(a, tags);
    let tb = tag_breakdown(b, tags);
    ta.into_iter()
        .filter_map(|(k, x)| {
            let y = tb.get(&k)?.clone();
            let table = [[x.correct, x.examples - x.correct], [y.correct, y.examples - y.correct]];
            let chi_square = chi_square_2x2(table).ok();
            Some((k, TagComparison { a: x, b: y, chi_square }))
        })
        .collect()
}
