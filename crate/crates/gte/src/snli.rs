//! SNLI JSONL ingestion and V-SNLI split files.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use gte_core::data::{align_images, filter_hard, Label, LabelCounts, SnliRecord, VsnliRecord};
use gte_core::encoders::tokenize;
use gte_core::tagging::pos_from_parse;
use serde::{Deserialize, Serialize};

use crate::error::{io, parse, Result};

#[derive(Deserialize)]
struct RawLine {
    gold_label: String,
    sentence1: String,
    sentence2: String,
    #[serde(rename = "pairID")]
    pair_id: String,
    #[serde(rename = "captionID")]
    caption_id: String,
    #[serde(default)]
    annotator_labels: Vec<String>,
    #[serde(default)]
    sentence1_parse: Option<String>,
    #[serde(default)]
    sentence2_parse: Option<String>,
}

fn tokens(sentence: &str, parse: Option<&str>) -> Vec<String> {
    // Leaves of the bracketed parse are the corpus tokenization.
    if let Some(leaves) = parse.and_then(|p| pos_from_parse(p).ok()) {
        return leaves.into_iter().map(|(t, _)| t.to_lowercase()).collect();
    }
    tokenize(sentence)
}

/// Parses one SNLI JSON line.
pub fn parse_snli_line(line: &str) -> std::result::Result<SnliRecord, String> {
    let raw: RawLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let gold = Label::parse_gold(&raw.gold_label).map_err(|e| e.to_string())?;
    Ok(SnliRecord {
        premise: tokens(&raw.sentence1, raw.sentence1_parse.as_deref()),
        hypothesis: tokens(&raw.sentence2, raw.sentence2_parse.as_deref()),
        pair_id: raw.pair_id,
        caption_id: raw.caption_id,
        gold,
        annotator_labels: raw.annotator_labels,
        premise_parse: raw.sentence1_parse,
        hypothesis_parse: raw.sentence2_parse,
    })
}

/// Reads every record of an SNLI JSONL file, including no-consensus ones.
pub fn ingest_snli(path: &Path) -> Result<Vec<SnliRecord>> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_snli_line(&line).map_err(|m| parse(path, i + 1, m))?);
    }
    Ok(out)
}

pub fn read_vsnli(path: &Path) -> Result<Vec<VsnliRecord>> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_vsnli(path: &Path, records: &[VsnliRecord]) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(path)(e.into()))?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Non-empty trimmed lines of a text file (image lists, hard-subset ids).
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    /// Lines read from the SNLI file.
    pub read: usize,
    /// Records dropped because their image is not in the image list.
    pub no_image: usize,
    /// Aligned records with no consensus label (not written).
    pub no_gold: usize,
    /// Records written.
    pub kept: usize,
    pub labels: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub splits: Vec<SplitSummary>,
    pub total: usize,
    pub labels: LabelCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard: Option<SplitSummary>,
    /// Hard-subset ids that matched no test record.
    #[serde(default)]
    pub hard_missing: usize,
}

/// Aligns one split with the image list; no-consensus records are removed.
pub fn prepare_split(name: &str, records: Vec<SnliRecord>, images: &BTreeSet<String>) -> (SplitSummary, Vec<VsnliRecord>) {
    let read = records.len();
    let aligned = align_images(records, images);
    let no_gold = aligned.kept.iter().filter(|r| r.record.gold.is_none()).count();
    let kept: Vec<VsnliRecord> = aligned.kept.into_iter().filter(|r| r.record.gold.is_some()).collect();
    let labels = LabelCounts::of(kept.iter().map(|r| r.record.gold));
    let summary = SplitSummary {
        split: name.to_string(),
        read,
        no_image: aligned.dropped,
        no_gold,
        kept: kept.len(),
        labels,
    };
    (summary, kept)
}

pub fn hard_split(test: &[VsnliRecord], hard_ids: &[String]) -> (SplitSummary, Vec<VsnliRecord>, usize) {
    let h = filter_hard(test, hard_ids);
    let summary = SplitSummary {
        split: "test_hard".into(),
        read: hard_ids.len(),
        no_image: 0,
        no_gold: 0,
        kept: h.records.len(),
        labels: LabelCounts::of(h.records.iter().map(|r| r.record.gold)),
    };
    (summary, h.records, h.missing)
}

impl PrepareSummary {
    pub fn from_splits(splits: Vec<SplitSummary>, hard: Option<(SplitSummary, usize)>) -> Self {
        let mut labels = LabelCounts::default();
        for s in &splits {
            labels.entailment += s.labels.entailment;
            labels.contradiction += s.labels.contradiction;
            labels.neutral += s.labels.neutral;
        }
        let (hard, hard_missing) = match hard {
            Some((s, m)) => (Some(s), m),
            None => (None, 0),
        };
        PrepareSummary {
            total: splits.iter().map(|s| s.kept).sum(),
            splits,
            labels,
            hard,
            hard_missing,
        }
    }

    /// Split sizes and label totals as a markdown table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| split | pairs | entailment | contradiction | neutral | no image | no gold |\n|---|---:|---:|---:|---:|---:|---:|\n");
        for sp in self.splits.iter().chain(self.hard.iter()) {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                sp.split, sp.kept, sp.labels.entailment, sp.labels.contradiction, sp.labels.neutral, sp.no_image, sp.no_gold
            ));
        }
        s.push_str(&format!(
            "| total | {} | {} | {} | {} | | |\n",
            self.total, self.labels.entailment, self.labels.contradiction, self.labels.neutral
        ));
        s
    }
}
