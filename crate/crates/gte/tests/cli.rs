//! End-to-end runs of the `gte` command line.

#[macro_use]
mod common;

use std::process::Command;

use common::{run, s, synthetic_records, Workspace};
use gte::cli::{train, TrainArgs};
use gte::report::read_json;
use gte::snli::read_vsnli;
use gte::tables::read_tags;
use gte_core::data::{Label, SyntheticSpec};
use gte_core::features::FeatureVariant;
use gte_core::tagging::Tag;

fn snli_line(pair: &str, caption: &str, gold: &str, s1: &str, s2: &str) -> String {
    serde_json::json!({
        "annotator_labels": [gold],
        "captionID": caption,
        "gold_label": gold,
        "pairID": pair,
        "sentence1": s1,
        "sentence2": s2,
    })
    .to_string()
}

#[test]
fn prepare_drops_pairs_without_a_flickr_image() {
    let ws = Workspace::new();
    let train: Vec<String> = vec![
        snli_line("1.jpg#0r1e", "1.jpg#0", "entailment", "A dog runs.", "An animal runs."),
        snli_line("1.jpg#0r1c", "1.jpg#0", "contradiction", "A dog runs.", "A dog sleeps."),
        snli_line("2.jpg#1r1n", "2.jpg#1", "neutral", "Two men talk.", "Two men argue."),
        snli_line("3.jpg#2r1e", "3.jpg#2", "entailment", "A girl sings.", "A girl makes noise."),
        snli_line("vg_77.jpg#0r1c", "vg_77.jpg#0", "contradiction", "A cat sits.", "A cat runs."),
        snli_line("4.jpg#3r1n", "4.jpg#3", "neutral", "A boy swims.", "A boy swims fast."),
    ];
    std::fs::write(ws.path("train.jsonl.in"), train.join("\n")).unwrap();
    let small = [
        snli_line("5.jpg#0r1e", "5.jpg#0", "entailment", "A man cooks.", "A man makes food."),
        snli_line("5.jpg#0r1x", "5.jpg#0", "-", "A man cooks.", "A man eats."),
    ]
    .join("\n");
    std::fs::write(ws.path("dev.jsonl.in"), &small).unwrap();
    std::fs::write(ws.path("test.jsonl.in"), &small).unwrap();
    std::fs::write(ws.path("images.txt"), "1.jpg\n2.jpg\n3.jpg\n4.jpg\n5.jpg\n").unwrap();
    std::fs::write(ws.path("hard.txt"), "5.jpg#0r1e\nmissing#0\n").unwrap();
    let out = ws.path("vsnli");
    let code = run(&argv![
        "prepare",
        "--train", s(&ws.path("train.jsonl.in")),
        "--dev", s(&ws.path("dev.jsonl.in")),
        "--test", s(&ws.path("test.jsonl.in")),
        "--images", s(&ws.path("images.txt")),
        "--hard-ids", s(&ws.path("hard.txt")),
        "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let kept = read_vsnli(&out.join("train.jsonl")).unwrap();
    assert_eq!(kept.len(), 5);
    assert!(kept.iter().all(|r| r.image_id != "vg_77.jpg"));
    assert_eq!(kept[0].record.premise, ["a", "dog", "runs", "."]);
    // the no-consensus pair is aligned but not written
    assert_eq!(read_vsnli(&out.join("dev.jsonl")).unwrap().len(), 1);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 7);
    assert_eq!(summary["splits"][0]["no_image"], 1);
    assert_eq!(summary["splits"][1]["no_gold"], 1);
    assert_eq!(summary["hard"]["kept"], 1);
    assert_eq!(summary["hard_missing"], 1);
}

#[test]
fn prepare_reports_the_bad_line() {
    let ws = Workspace::new();
    let good = snli_line("1.jpg#0r1e", "1.jpg#0", "entailment", "A dog runs.", "An animal runs.");
    std::fs::write(ws.path("t.jsonl"), format!("{good}\n{{\"gold_label\": \"entailment\"}}\n")).unwrap();
    std::fs::write(ws.path("images.txt"), "1.jpg\n").unwrap();
    let t = s(&ws.path("t.jsonl")).to_string();
    let argv = std::iter::once("gte".to_string()).chain(argv![
        "prepare", "--train", &t, "--dev", &t, "--test", &t, "--images", s(&ws.path("images.txt")), "--out", s(&ws.path("o")),
    ]);
    let e = gte::cli::run(clap::Parser::parse_from(argv)).unwrap_err();
    assert!(format!("{e:#}").contains("t.jsonl:2"), "{e:#}");
}

fn train_args(ws: &Workspace, arch: &str, ckpt: &str) -> TrainArgs {
    TrainArgs {
        train: Some(ws.path("train.jsonl")),
        dev: Some(ws.path("dev.jsonl")),
        features: Some(ws.path("store")),
        checkpoint: Some(ws.path(ckpt)),
        log: Some(ws.path(&format!("{ckpt}.log"))),
        architecture: Some(arch.into()),
        epochs: Some(3),
        batch_size: Some(8),
        lr: Some(1e-3),
        seed: Some(5),
        embed_dim: Some(8),
        hidden_dim: Some(8),
        perspectives: Some(2),
        image_width: Some(8),
        ..Default::default()
    }
}

fn toy_workspace(variant: FeatureVariant) -> Workspace {
    let ws = Workspace::new();
    let train = synthetic_records(&SyntheticSpec { pairs: 32, vocab_size: 20, seed: 1, ..Default::default() });
    let dev = synthetic_records(&SyntheticSpec { pairs: 12, vocab_size: 20, seed: 2, ..Default::default() });
    ws.write_split("train.jsonl", &train);
    ws.write_split("dev.jsonl", &dev);
    let all: Vec<_> = train.iter().chain(&dev).cloned().collect();
    ws.write_store("store", &all, variant, 8);
    ws
}

#[test]
fn same_config_trains_identically() {
    let ws = toy_workspace(FeatureVariant::Global);
    let a = train(train_args(&ws, "V_LSTM", "a.ckpt")).unwrap();
    let b = train(train_args(&ws, "V_LSTM", "b.ckpt")).unwrap();
    assert!(a.is_some());
    assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    assert_eq!(std::fs::read(ws.path("a.ckpt")).unwrap(), std::fs::read(ws.path("b.ckpt")).unwrap());
    let log = std::fs::read_to_string(ws.path("a.ckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
}

#[test]
fn eval_with_foil_records_it_in_the_report() {
    let ws = toy_workspace(FeatureVariant::Global);
    train(train_args(&ws, "V_LSTM", "m.ckpt")).unwrap();
    let (plain, foiled) = (ws.path("plain.json"), ws.path("foil.json"));
    let base = argv!["eval", "--checkpoint", s(&ws.path("m.ckpt")), "--data", s(&ws.path("dev.jsonl")), "--features", s(&ws.path("store"))];
    let mut args = base.to_vec();
    args.extend(argv!["--out", s(&plain)]);
    assert_eq!(run(&args), 0);
    let mut args = base.to_vec();
    args.extend(argv!["--foil", "--out", s(&foiled), "--predictions-out", s(&ws.path("p.csv"))]);
    assert_eq!(run(&args), 0);
    let (p, f) = (read_json(&plain).unwrap(), read_json(&foiled).unwrap());
    assert!(!p.metadata.foil && p.metadata.foil_checksum.is_none());
    assert!(f.metadata.foil);
    assert_eq!(f.metadata.foil_checksum.as_ref().map(String::len), Some(16));
    assert_eq!(f.examples, 12);
    assert_eq!(std::fs::read_to_string(ws.path("p.csv")).unwrap().lines().count(), 13);
}

#[test]
fn foil_needs_global_similarity_features() {
    let ws = toy_workspace(FeatureVariant::Regions);
    train(train_args(&ws, "VQA", "m.ckpt")).unwrap();
    let base = argv!["eval", "--checkpoint", s(&ws.path("m.ckpt")), "--data", s(&ws.path("dev.jsonl")), "--features", s(&ws.path("store")), "--foil"];
    assert_eq!(run(&base), 1);
    let all = read_vsnli(&ws.path("train.jsonl")).unwrap().into_iter().chain(read_vsnli(&ws.path("dev.jsonl")).unwrap()).collect::<Vec<_>>();
    ws.write_store("global", &all, FeatureVariant::Global, 8);
    let mut args = base.to_vec();
    args.extend(argv!["--foil-features", s(&ws.path("global"))]);
    assert_eq!(run(&args), 0);
}

#[test]
fn hypothesis_only_report_ignores_premises() {
    let ws = toy_workspace(FeatureVariant::Global);
    train(train_args(&ws, "V_LSTM", "m.ckpt")).unwrap();
    let out = ws.path("h.json");
    let code = run(&argv![
        "eval", "--checkpoint", s(&ws.path("m.ckpt")), "--data", s(&ws.path("dev.jsonl")),
        "--features", s(&ws.path("store")), "--grounding", "h", "--hypothesis-only", "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let r = read_json(&out).unwrap();
    assert_eq!(r.implausible.len(), 2);
    assert_eq!(r.metadata.model.unwrap().grounding, gte_core::models::Grounding::HypothesisImage);
}

#[test]
fn tag_agreement_and_report_commands() {
    let ws = Workspace::new();
    let records = synthetic_records(&SyntheticSpec { pairs: 6, vocab_size: 12, ..Default::default() });
    let mut records = records;
    records[0].record.premise = "the man is not sitting".split(' ').map(String::from).collect();
    records[0].record.hypothesis = "a woman is sitting".split(' ').map(String::from).collect();
    ws.write_split("d.jsonl", &records);
    std::fs::write(ws.path("lex.tsv"), "# lemma pairs\nman\twoman\tant\n").unwrap();
    let tags = ws.path("tags.csv");
    assert_eq!(run(&argv!["tag", "--input", s(&ws.path("d.jsonl")), "--lexicon", s(&ws.path("lex.tsv")), "--out", s(&tags)]), 0);
    let t = read_tags(&tags).unwrap();
    assert_eq!(t.len(), 6);
    let first = &t[&records[0].record.pair_id];
    assert!(first.has(Tag::Negation) && first.has(Tag::Antonym) && !first.has(Tag::BareNp));
    assert_eq!(run(&argv!["tag", "--input", s(&ws.path("d.jsonl")), "--no-fallback", "--out", s(&tags)]), 1);

    std::fs::write(ws.path("ann.csv"), "item,a,b\n1,E,E\n2,E,C\n3,C,C\n4,N,N\n5,N,E\n").unwrap();
    assert_eq!(run(&argv!["agreement", "--table", s(&ws.path("ann.csv")), "--out", s(&ws.path("ann.json"))]), 0);
    let ann: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("ann.json")).unwrap()).unwrap();
    assert!(ann["kappa"].as_f64().unwrap() > 0.0 && ann["kappa"].as_f64().unwrap() < 1.0);

    let preds = ws.path("p.csv");
    let mut csv = String::from("pair_id,gold,predicted\n");
    for (i, r) in records.iter().enumerate() {
        let pred = if i % 2 == 0 { r.record.gold.unwrap() } else { Label::Neutral };
        csv.push_str(&format!("{},{},{}\n", r.record.pair_id, r.record.gold.unwrap().name(), pred.name()));
    }
    std::fs::write(&preds, csv).unwrap();
    let (ra, rb) = (ws.path("a.json"), ws.path("b.json"));
    assert_eq!(run(&argv!["eval", "--predictions", s(&preds), "--tags", s(&tags), "--out", s(&ra)]), 0);
    assert_eq!(run(&argv!["eval", "--predictions", s(&preds), "--out", s(&rb)]), 0);
    let md = ws.path("r.md");
    let ra_arg = format!("A={}", s(&ra));
    let rb_arg = format!("B={}", s(&rb));
    assert_eq!(run(&argv!["report", "--run", &ra_arg, "--run", &rb_arg, "--out", s(&md)]), 0);
    let md = std::fs::read_to_string(md).unwrap();
    assert!(md.contains("| A |") && md.contains("| B |") && md.contains("NEGATION"), "{md}");
}

#[test]
fn features_synth_and_validate() {
    let ws = Workspace::new();
    std::fs::write(ws.path("ids.txt"), "a.jpg\nb.jpg\nc.jpg\n").unwrap();
    let dir = ws.path("grid");
    assert_eq!(run(&argv!["features", "synth", "--out", s(&dir), "--variant", "grid", "--width", "6", "--ids", s(&ws.path("ids.txt"))]), 0);
    assert_eq!(run(&argv!["features", "validate", "--dir", s(&dir)]), 0);
    let payload = dir.join(gte::store::PAYLOAD);
    let mut bytes = std::fs::read(&payload).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&payload, bytes).unwrap();
    assert_eq!(run(&argv!["features", "validate", "--dir", s(&dir)]), 1);
}

#[test]
fn usage_errors_exit_nonzero_with_usage() {
    let bin = env!("CARGO_BIN_EXE_gte");
    for args in [&["frobnicate"][..], &["train", "--no-such-flag"], &[]] {
        let out = Command::new(bin).args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage"), "{args:?}: {err}");
    }
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("prepare"));
}

#[test]
fn ph_with_hypothesis_only_is_rejected() {
    let ws = Workspace::new();
    std::fs::write(ws.path("p.csv"), "pair_id,gold,predicted\nx,entailment,neutral\n").unwrap();
    assert_eq!(run(&argv!["eval", "--predictions", s(&ws.path("p.csv")), "--grounding", "ph", "--hypothesis-only"]), 1);
    assert_eq!(run(&argv!["eval", "--predictions", s(&ws.path("p.csv")), "--grounding", "ph"]), 0);
}
