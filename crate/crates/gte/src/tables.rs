//! Small text formats: tag CSV, prediction CSV, POS files, lexicons and
//! annotation tables.

use std::collections::BTreeMap;
use std::path::Path;

use gte_core::data::Label;
use gte_core::eval::PredictionRecord;
use gte_core::tagging::{parse_pos_file, LexicalResource, Tag, TagSet};

use crate::error::{io, parse, IoError, Result};

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => parse(path, line, format!("{other:?}")),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = h.iter().collect();
    if got != want {
        return Err(parse(path, 1, format!("expected header {want:?}, found {got:?}")));
    }
    Ok(())
}

/// `pair_id,tag,value` with one row per pair and automatic tag.
pub fn write_tags(path: &Path, tags: &[(String, TagSet)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["pair_id", "tag", "value"]).map_err(|e| csv_error(path, e))?;
    for (id, set) in tags {
        for t in Tag::ALL {
            let v = if set.has(t) { "1" } else { "0" };
            w.write_record([id.as_str(), t.name(), v]).map_err(|e| csv_error(path, e))?;
        }
        for name in set.names().into_iter().filter(|n| Tag::parse(n).is_none()) {
            w.write_record([id.as_str(), name.as_str(), "1"]).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(io(path))
}

/// Tag sets by pair id. Only rows with a true value count; manual tags use
/// the `manual:` prefix.
pub fn read_tags(path: &Path) -> Result<BTreeMap<String, TagSet>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["pair_id", "tag", "value"])?;
    let mut out: BTreeMap<String, TagSet> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let on = match row[2].to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => return Err(parse(path, line, format!("bad tag value {other:?}"))),
        };
        let set = out.entry(row[0].to_string()).or_default();
        if on {
            set.insert_name(&row[1]).map_err(|e| parse(path, line, e.to_string()))?;
        }
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["pair_id", "gold", "predicted"]).map_err(|e| csv_error(path, e))?;
    for p in preds {
        w.write_record([p.pair_id.as_str(), p.gold.name(), p.predicted.name()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["pair_id", "gold", "predicted"])?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let label = |s: &str| Label::parse(s).ok_or_else(|| parse(path, i + 2, format!("unknown label {s:?}")));
        out.push(PredictionRecord {
            pair_id: row[0].to_string(),
            gold: label(&row[1])?,
            predicted: label(&row[2])?,
        });
    }
    Ok(out)
}

pub fn read_lexicon(path: &Path) -> Result<LexicalResource> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    LexicalResource::parse(&text).map_err(|e| IoError::Core {
        path: path.to_path_buf(),
        source: e,
    })
}

/// POS tags as `token TAB tag` lines; each record contributes its premise
/// then its hypothesis, separated by blank lines.
pub fn read_pos_file(path: &Path) -> Result<Vec<Vec<(String, String)>>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    parse_pos_file(&text).map_err(|e| IoError::Core {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Annotator names and one row of labels per item.
pub type AnnotationTable = (Vec<String>, Vec<Vec<Option<String>>>);

/// Items × annotators; the first column is the item id, empty cells are missing labels.
pub fn read_annotation_table(path: &Path) -> Result<AnnotationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 3 {
        return Err(parse(path, 1, "expected an item column and at least two annotator columns"));
    }
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        rows.push(
            row.iter()
                .skip(1)
                .map(|c| (!c.is_empty()).then(|| c.to_string()))
                .collect(),
        );
    }
    Ok((headers.iter().skip(1).map(String::from).collect(), rows))
}
