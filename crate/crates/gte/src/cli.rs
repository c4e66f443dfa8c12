//! Command-line surface.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gte_core::data::{examples_from_vsnli, image_ids, Example, VsnliRecord};
use gte_core::encoders::Vocabulary;
use gte_core::eval::{evaluate, flags_implausible, foil_map, EvaluationReport, ReportMetadata};
use gte_core::features::{synth_features, FeatureVariant, ImageLookup, NoImages};
use gte_core::models::{Architecture, Grounding, Model};
use gte_core::stats::agreement_metrics;
use gte_core::tagging::{auto_tag, pos_from_parse, LexicalResource, PairPos, Tag};
use gte_core::train::fit;

use crate::config::RunConfig;
use crate::store::FeatureStore;
use crate::{checkpoint, report, snli, tables};

#[derive(Parser, Debug)]
#[command(name = "gte", version, about = "Grounded textual entailment: data preparation, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Align SNLI splits with an image list and write V-SNLI splits.
    Prepare(PrepareArgs),
    /// Assign automatic linguistic tags and write them as CSV.
    Tag(TagArgs),
    /// Validate or generate a feature store.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a prediction file) and write a report.
    Eval(EvalArgs),
    /// Inter-annotator agreement for a label table.
    Agreement(AgreementArgs),
    /// Collate report JSON files into markdown tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Directory holding snli_1.0_{train,dev,test}.jsonl.
    #[arg(long)]
    pub snli_dir: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Image file names, one per line.
    #[arg(long)]
    pub images: PathBuf,
    /// Hard-subset pair ids, one per line.
    #[arg(long)]
    pub hard_ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    /// V-SNLI JSONL (as written by `prepare`).
    #[arg(long)]
    pub input: PathBuf,
    /// Lemma pairs: word1 TAB word2 TAB syn|ant.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// token TAB tag lines; premise then hypothesis per record, blank-line separated.
    #[arg(long)]
    pub pos: Option<PathBuf>,
    /// Fail instead of using the rule tagger when no POS tags are available.
    #[arg(long)]
    pub no_fallback: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum FeaturesCommand {
    /// Check a store's manifest, payload and every entry.
    Validate {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write deterministic pseudo-random features.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Global,
    Grid,
    Regions,
}

impl From<VariantArg> for FeatureVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Global => FeatureVariant::Global,
            VariantArg::Grid => FeatureVariant::Grid,
            VariantArg::Regions => FeatureVariant::Regions,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    /// Vector width; the variant's nominal width when omitted.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image ids, one per line.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Take image ids from these V-SNLI files.
    #[arg(long = "from")]
    pub from: Vec<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// LSTM, V_LSTM, BIMPM, V_BIMPM or VQA.
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long)]
    pub grounding: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub perspectives: Option<usize>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub image_width: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Encode the premise with its own LSTM weights.
    #[arg(long)]
    pub separate_encoders: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a `pair_id,gold,predicted` file instead of running a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "foil"])]
    pub predictions: Option<PathBuf>,
    /// V-SNLI JSONL split.
    #[arg(long, required_unless_present = "predictions")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Replace each image with the most dissimilar image of the split.
    #[arg(long)]
    pub foil: bool,
    /// Store used for foil similarity (defaults to --features, which must then be global).
    #[arg(long)]
    pub foil_features: Option<PathBuf>,
    /// Which sentences see the image: none, h or ph.
    #[arg(long)]
    pub grounding: Option<String>,
    /// Drop the premise.
    #[arg(long)]
    pub hypothesis_only: bool,
    /// Tag CSV for a per-tag breakdown.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Dataset name recorded in the report.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
    /// Write per-pair predictions as CSV.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AgreementArgs {
    /// CSV: item column then one column per annotator; empty cells are missing.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// NAME=report.json, repeatable; order is kept.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` and runs the command, returning the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Tag(a) => tag(a),
        Command::Features(FeaturesCommand::Validate { dir }) => {
            let store = FeatureStore::read(&dir)?;
            let variant = store.variant().map_or("mixed", |v| v.name());
            let shape = store.features.values().next().map(|f| f.data.shape().to_vec());
            println!("{}: {} images, variant {variant}, shape {shape:?}", dir.display(), store.len());
            Ok(())
        }
        Command::Features(FeaturesCommand::Synth(a)) => synth(a),
        Command::Train(a) => train(a).map(|_| ()),
        Command::Eval(a) => eval(a).map(|_| ()),
        Command::Agreement(a) => agreement(a),
        Command::Report(a) => collate(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let path = |given: Option<PathBuf>, split: &str| -> Result<PathBuf> {
        given
            .or_else(|| a.snli_dir.as_ref().map(|d| d.join(format!("snli_1.0_{split}.jsonl"))))
            .ok_or_else(|| anyhow!("no {split} file: pass --{split} or --snli-dir"))
    };
    let files = [
        ("train", path(a.train.clone(), "train")?),
        ("dev", path(a.dev.clone(), "dev")?),
        ("test", path(a.test.clone(), "test")?),
    ];
    let images: BTreeSet<String> = snli::read_id_list(&a.images)?.into_iter().collect();
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut summaries = Vec::new();
    let mut test_records = Vec::new();
    for (name, file) in &files {
        let records = snli::ingest_snli(file)?;
        let (summary, kept) = snli::prepare_split(name, records, &images);
        snli::write_vsnli(&a.out.join(format!("{name}.jsonl")), &kept)?;
        summaries.push(summary);
        if *name == "test" {
            test_records = kept;
        }
    }
    let hard = match &a.hard_ids {
        Some(p) => {
            let ids = snli::read_id_list(p)?;
            let (summary, records, missing) = snli::hard_split(&test_records, &ids);
            if missing > 0 {
                log::warn!("{missing} hard-subset ids are not in the aligned test split");
            }
            snli::write_vsnli(&a.out.join("test_hard.jsonl"), &records)?;
            Some((summary, missing))
        }
        None => None,
    };
    let summary = snli::PrepareSummary::from_splits(summaries, hard);
    let spath = a.out.join("summary.json");
    std::fs::write(&spath, serde_json::to_vec_pretty(&summary)?).with_context(|| spath.display().to_string())?;
    print!("{}", summary.to_markdown());
    Ok(())
}

fn tag(a: TagArgs) -> Result<()> {
    let records = snli::read_vsnli(&a.input)?;
    let lexicon = match &a.lexicon {
        Some(p) => tables::read_lexicon(p)?,
        None => {
            log::warn!("no lexicon given: SYNONYM and ANTONYM will never fire");
            LexicalResource::new()
        }
    };
    let pos_file = a.pos.as_deref().map(tables::read_pos_file).transpose()?;
    if let Some(p) = &pos_file {
        if p.len() != 2 * records.len() {
            bail!(
                "{}: {} tagged sentences for {} records (expected premise and hypothesis per record)",
                a.pos.as_ref().unwrap().display(),
                p.len(),
                records.len()
            );
        }
    }
    let mut out = Vec::with_capacity(records.len());
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let rec = &r.record;
        let from_file = pos_file.as_ref().map(|p| {
            let tags = |s: &[(String, String)]| s.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>();
            (tags(&p[2 * i]), tags(&p[2 * i + 1]))
        });
        let from_parse = || -> Option<(Vec<String>, Vec<String>)> {
            let leaves = |p: &Option<String>| -> Option<Vec<String>> {
                let l = pos_from_parse(p.as_deref()?).ok()?;
                Some(l.into_iter().map(|(_, t)| t).collect())
            };
            let (pp, hp) = (leaves(&rec.premise_parse)?, leaves(&rec.hypothesis_parse)?);
            (pp.len() == rec.premise.len() && hp.len() == rec.hypothesis.len()).then_some((pp, hp))
        };
        let pos = from_file.or_else(from_parse);
        let set = auto_tag(
            &rec.premise,
            &rec.hypothesis,
            &lexicon,
            pos.as_ref().map(|(p, h)| PairPos { premise: p, hypothesis: h }),
            !a.no_fallback,
        )
        .with_context(|| format!("tagging pair {}", rec.pair_id))?;
        for t in Tag::ALL {
            if set.has(t) {
                *counts.entry(t.name()).or_default() += 1;
            }
        }
        out.push((rec.pair_id.clone(), set));
    }
    tables::write_tags(&a.out, &out)?;
    println!("| Tag | Freq | % |\n|---|---:|---:|");
    for t in Tag::ALL {
        let n = counts.get(t.name()).copied().unwrap_or(0);
        let share = if out.is_empty() { 0.0 } else { 100.0 * n as f64 / out.len() as f64 };
        println!("| {} | {n} | {share:.2} |", t.name());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut ids: BTreeSet<String> = BTreeSet::new();
    if let Some(p) = &a.ids {
        ids.extend(snli::read_id_list(p)?);
    }
    for p in &a.from {
        ids.extend(snli::read_vsnli(p)?.into_iter().map(|r| r.image_id));
    }
    if ids.is_empty() {
        bail!("no image ids: pass --ids or --from");
    }
    let variant: FeatureVariant = a.variant.into();
    let width = a.width.unwrap_or(variant.nominal_width());
    let ids: Vec<String> = ids.into_iter().collect();
    let store = FeatureStore::new(synth_features(a.seed, &ids, variant, width)?);
    store.write(&a.out)?;
    println!("wrote {} {} features of width {width} to {}", store.len(), variant.name(), a.out.display());
    Ok(())
}

fn load_examples(path: &Path, vocab: &Vocabulary) -> Result<(Vec<VsnliRecord>, Vec<Example>)> {
    let records = snli::read_vsnli(path)?;
    let ex = examples_from_vsnli(&records, vocab);
    Ok((records, ex))
}

/// Builds the run configuration from file and flags.
pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $v:expr) => {
            if let Some(v) = $v.clone() {
                $field = v;
            }
        };
    }
    if let Some(name) = &a.architecture {
        let arch = Architecture::parse(name).ok_or_else(|| anyhow!("unknown architecture {name:?}"))?;
        c.model.architecture = arch;
        if gte_core::models::check_grounding(arch, c.model.grounding).is_err() {
            c.model.grounding = gte_core::models::ModelConfig::new(arch).grounding;
        }
    }
    if let Some(g) = &a.grounding {
        c.model.grounding = Grounding::parse(g).ok_or_else(|| anyhow!("unknown grounding {g:?}"))?;
    }
    if a.train.is_some() {
        c.data.train = a.train.clone();
    }
    if a.dev.is_some() {
        c.data.dev = a.dev.clone();
    }
    if a.features.is_some() {
        c.data.features = a.features.clone();
    }
    if a.embeddings.is_some() {
        c.data.embeddings = a.embeddings.clone();
    }
    if a.checkpoint.is_some() {
        c.output.checkpoint = a.checkpoint.clone();
    }
    if a.log.is_some() {
        c.output.log = a.log.clone();
    }
    set!(c.train.max_epochs, a.epochs);
    set!(c.train.batch_size, a.batch_size);
    set!(c.train.adam.learning_rate, a.lr);
    set!(c.train.patience, a.patience);
    if let Some(s) = a.seed {
        c.train.seed = s;
        c.model.seed = s;
    }
    set!(c.model.embed_dim, a.embed_dim);
    set!(c.model.hidden_dim, a.hidden_dim);
    set!(c.model.perspectives, a.perspectives);
    set!(c.model.keep_prob, a.keep_prob);
    if a.image_width.is_some() {
        c.model.image_width = a.image_width;
    }
    if a.separate_encoders {
        c.model.separate_encoders = true;
    }
    c.model.validate()?;
    Ok(c)
}

fn open_store(path: Option<&Path>, needed: bool) -> Result<Option<FeatureStore>> {
    match path {
        Some(p) => Ok(Some(FeatureStore::read(p)?)),
        None if needed => bail!("this model needs image features: pass --features"),
        None => Ok(None),
    }
}

/// Trains and saves; returns the final dev accuracy when a dev set is given.
pub fn train(a: TrainArgs) -> Result<Option<f64>> {
    let c = train_config(&a)?;
    let train_path = c.data.train.clone().ok_or_else(|| anyhow!("no training data: set data.train or --train"))?;
    let ckpt = c.output.checkpoint.clone().ok_or_else(|| anyhow!("no checkpoint path: set output.checkpoint or --checkpoint"))?;
    let records = snli::read_vsnli(&train_path)?;
    let tokens = records
        .iter()
        .filter(|r| r.record.gold.is_some())
        .flat_map(|r| r.record.premise.iter().chain(&r.record.hypothesis))
        .map(String::as_str);
    let vocab = Vocabulary::build(tokens, c.data.max_vocab)?;
    let train_ex = examples_from_vsnli(&records, &vocab);
    let dev_ex = match &c.data.dev {
        Some(p) => Some(load_examples(p, &vocab)?.1),
        None => None,
    };
    let needs_image = c.model.architecture.uses_image() && c.model.grounding.uses_image();
    let store = open_store(c.data.features.as_deref(), needs_image)?;
    let images: &dyn ImageLookup = match &store {
        Some(s) => s,
        None => &NoImages,
    };
    let mut model = match &c.data.embeddings {
        Some(p) => {
            let vectors = crate::embeddings::load_embeddings(p, &vocab, c.model.embed_dim)?;
            Model::with_pretrained(&c.model, vocab, |i| vectors.get(&i).cloned())?
        }
        None => Model::new(&c.model, vocab)?,
    };
    let mut log_file = match &c.output.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| p.display().to_string())?)),
        None => None,
    };
    let mut log_err = None;
    let outcome = fit(&mut model, &train_ex, dev_ex.as_deref(), images, &c.train, |m| {
        log::info!(
            "epoch {} loss {:.4} train {:.4} dev {}",
            m.epoch,
            m.loss,
            m.train_accuracy,
            m.dev_accuracy.map_or("-".into(), |d| format!("{d:.4}"))
        );
        if let Some(w) = log_file.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *w, m).map_err(std::io::Error::from).and_then(|_| w.write_all(b"\n")) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    if let Some(mut w) = log_file {
        w.flush().context("writing training log")?;
    }
    let training = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_dev_accuracy": outcome.best_dev_accuracy,
        "stopped_early": outcome.stopped_early,
        "history": outcome.history,
        "train": train_path,
    });
    checkpoint::save(&ckpt, &model, training)?;
    match outcome.best_dev_accuracy {
        Some(d) => println!("saved {} (best epoch {}, dev accuracy {:.2}%)", ckpt.display(), outcome.best_epoch, d * 100.0),
        None => println!("saved {} after epoch {}", ckpt.display(), outcome.best_epoch),
    }
    Ok(outcome.best_dev_accuracy)
}

pub fn eval(a: EvalArgs) -> Result<EvaluationReport> {
    let grounding_override = match (&a.grounding, a.hypothesis_only) {
        (Some(g), h) => Some(Grounding::from_cli(g, h)?),
        (None, true) => Some(Grounding::HypothesisOnly),
        (None, false) => None,
    };
    let tags = a.tags.as_deref().map(tables::read_tags).transpose()?;
    let dataset = a
        .dataset
        .clone()
        .or_else(|| a.data.as_ref().or(a.predictions.as_ref()).map(|p| p.display().to_string()))
        .unwrap_or_default();

    let (report, predictions) = if let Some(p) = &a.predictions {
        let preds = tables::read_predictions(p)?;
        let flag = grounding_override.is_some_and(flags_implausible);
        let meta = ReportMetadata {
            model: None,
            dataset,
            foil: false,
            foil_checksum: None,
        };
        (EvaluationReport::from_predictions(&preds, flag, tags.as_ref(), meta)?, preds)
    } else {
        let ckpt = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
        let (mut model, _) = checkpoint::load(ckpt)?;
        if let Some(g) = grounding_override {
            model.set_grounding(g)?;
        }
        let (_, examples) = load_examples(a.data.as_ref().expect("clap enforces --data"), model.vocab())?;
        let config = model.config();
        let needs_image = config.architecture.uses_image() && config.grounding.uses_image();
        let store = open_store(a.features.as_deref(), needs_image)?;
        let foils = if a.foil {
            if !needs_image {
                bail!("--foil needs a model that sees the image");
            }
            let own;
            let sim: &FeatureStore = match &a.foil_features {
                Some(p) => {
                    own = FeatureStore::read(p)?;
                    &own
                }
                None => {
                    let s = store.as_ref().expect("checked above");
                    if s.variant() != Some(FeatureVariant::Global) {
                        bail!("foil similarity uses global features: pass --foil-features with a global store");
                    }
                    s
                }
            };
            Some(foil_map(sim, &image_ids(&examples))?)
        } else {
            None
        };
        let images: &dyn ImageLookup = match &store {
            Some(s) => s,
            None => &NoImages,
        };
        let e = evaluate(&model, &examples, images, foils.as_ref(), tags.as_ref(), &dataset)?;
        (e.report, e.predictions)
    };

    if let Some(p) = &a.out {
        report::write_json(p, &report)?;
    }
    if let Some(p) = &a.predictions_out {
        tables::write_predictions(p, &predictions)?;
    }
    let name = report
        .metadata
        .model
        .as_ref()
        .map_or_else(|| "predictions".to_string(), |m| format!("{} [{}]", m.architecture.name(), m.grounding.name()));
    let md = report::markdown(&[(name, report.clone())]);
    if let Some(p) = &a.markdown {
        std::fs::write(p, &md).with_context(|| p.display().to_string())?;
    }
    print!("{md}");
    Ok(report)
}

fn agreement(a: AgreementArgs) -> Result<()> {
    let (annotators, rows) = tables::read_annotation_table(&a.table)?;
    let r = agreement_metrics(&rows).with_context(|| a.table.display().to_string())?;
    let json = serde_json::to_string_pretty(&r)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &json).with_context(|| p.display().to_string())?;
    }
    println!(
        "{} items, {} annotators ({}): kappa {:.4}, pi {:.4}, alpha {:.4}",
        r.items,
        r.annotators,
        annotators.join(", "),
        r.kappa,
        r.pi,
        r.alpha
    );
    Ok(())
}

fn collate(a: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for spec in &a.runs {
        let (name, path) = spec.split_once('=').ok_or_else(|| anyhow!("--run expects NAME=PATH, got {spec:?}"))?;
        runs.push((name.to_string(), report::read_json(Path::new(path))?));
    }
    let md = report::markdown(&runs);
    if let Some(p) = &a.out {
        std::fs::write(p, &md).with_context(|| p.display().to_string())?;
    }
    print!("{md}");
    Ok(())
}
