//! Pretrained word vectors in the whitespace-separated text format
//! (`word v1 v2 ... vd` per line).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use gte_core::encoders::Vocabulary;

use crate::error::{io, parse, Result};

/// Vectors for the vocabulary entries found in `path`, keyed by token index.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<BTreeMap<usize, Vec<f64>>> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let Some(index) = vocab.get(word) else { continue };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse(path, i + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(parse(path, i + 1, format!("expected {dim} values, found {}", values.len())));
        }
        out.entry(index).or_insert(values);
    }
    log::info!("{}: {} of {} vocabulary entries have vectors", path.display(), out.len(), vocab.len());
    Ok(out)
}
