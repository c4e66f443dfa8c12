#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gte::snli::write_vsnli;
use gte::store::FeatureStore;
use gte_core::data::{synthetic_dataset, Example, SnliRecord, SyntheticSpec, VsnliRecord};
use gte_core::encoders::Vocabulary;
use gte_core::features::{synth_features, FeatureVariant};

/// Synthetic pairs turned back into V-SNLI records.
pub fn synthetic_records(spec: &SyntheticSpec) -> Vec<VsnliRecord> {
    let (vocab, examples) = synthetic_dataset(spec).unwrap();
    examples.iter().map(|e| to_record(&vocab, e)).collect()
}

pub fn to_record(vocab: &Vocabulary, e: &Example) -> VsnliRecord {
    let words = |ids: &[usize]| ids.iter().map(|&i| vocab.token(i).unwrap().to_string()).collect::<Vec<_>>();
    let image_id = e.image_id.clone().unwrap();
    VsnliRecord {
        record: SnliRecord {
            pair_id: e.pair_id.clone(),
            caption_id: format!("{image_id}#0"),
            premise: words(&e.premise),
            hypothesis: words(&e.hypothesis),
            gold: Some(e.label),
            annotator_labels: vec![e.label.name().to_string()],
            premise_parse: None,
            hypothesis_parse: None,
        },
        image_id,
    }
}

/// Writes `train.jsonl`, `dev.jsonl` and a feature store of `variant` under `dir`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_split(&self, name: &str, records: &[VsnliRecord]) -> PathBuf {
        let p = self.path(name);
        write_vsnli(&p, records).unwrap();
        p
    }

    pub fn write_store(&self, name: &str, records: &[VsnliRecord], variant: FeatureVariant, width: usize) -> PathBuf {
        let ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
        let p = self.path(name);
        FeatureStore::new(synth_features(17, &ids, variant, width).unwrap()).write(&p).unwrap();
        p
    }
}

/// Owned argument list, so path temporaries can be passed inline.
macro_rules! argv {
    ($($a:expr),* $(,)?) => { [$(String::from($a)),*] };
}

pub fn run(args: &[String]) -> i32 {
    gte::cli::main_with_args(std::iter::once("gte".to_string()).chain(args.iter().cloned()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
