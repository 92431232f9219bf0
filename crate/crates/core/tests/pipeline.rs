use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use dgu_core::pipeline::stages::load_dataset;
use dgu_core::pipeline::{
    cmd_evaluate, cmd_gen_data, cmd_sample_refs, cmd_train, cmd_train_lm, Layout, Manifest,
    RunConfig,
};
use dgu_core::Error;

fn tiny() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.conf")).unwrap()
}

fn run_all(cfg: &RunConfig, out: &Path) {
    cmd_gen_data(cfg, out).unwrap();
    cmd_train_lm(cfg, out).unwrap();
    cmd_sample_refs(cfg, out, 1).unwrap();
    cmd_train(cfg, out, &[], 1).unwrap();
    cmd_evaluate(cfg, out, None).unwrap();
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_stage_is_idempotent_and_reproducible() {
    let cfg = tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&cfg, a.path());
    let first = snapshot(a.path());
    run_all(&cfg, a.path());
    run_all(&cfg, b.path());
    for other in [snapshot(a.path()), snapshot(b.path())] {
        assert_eq!(first.keys().collect::<Vec<_>>(), other.keys().collect::<Vec<_>>());
        let differing: Vec<_> = first.iter().filter(|(k, v)| other[*k] != **v).map(|(k, _)| k).collect();
        assert!(differing.is_empty(), "{differing:?}");
    }
    assert!(first.keys().any(|k| k.starts_with("train/checkpoints")));
}

#[test]
fn manifest_counts_and_disjoint_sides() {
    let mut cfg = tiny();
    cfg.set("n_train", "200").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_gen_data(&cfg, dir.path()).unwrap();
    assert_eq!(summary.utterances["train"], 200);
    let text = fs::read_to_string(Layout::new(dir.path()).manifest()).unwrap();
    let manifest = Manifest::parse(&text).unwrap();
    assert_eq!(manifest.count("train"), 200);
    assert!(text.contains(&cfg.hash()));

    let data = load_dataset(&cfg, dir.path()).unwrap();
    let sil = data.inventory().sil();
    let text_side: BTreeSet<Vec<usize>> = data.corpus.iter().map(|s| s.concat()).collect();
    for split in ["train", "dev", "eval"] {
        for u in data.split(split) {
            let spoken: Vec<usize> = u.hidden_phonemes.iter().copied().filter(|&p| p != sil).collect();
            assert!(!text_side.contains(&spoken), "{} also appears as text", u.id);
        }
    }
}

#[test]
fn stages_name_missing_inputs_and_refuse_foreign_hashes() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    match cmd_sample_refs(&cfg, dir.path(), 1) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("manifest.txt"), "{}", p.display()),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    cmd_gen_data(&cfg, dir.path()).unwrap();
    match cmd_sample_refs(&cfg, dir.path(), 1) {
        Err(Error::MissingArtifact(p)) => assert_eq!(p, Layout::new(dir.path()).lm()),
        other => panic!("expected a missing LM, got {other:?}"),
    }
    cmd_train_lm(&cfg, dir.path()).unwrap();
    let other = cfg.clone().with_seed(cfg.seed + 1);
    assert!(matches!(cmd_train_lm(&other, dir.path()), Err(Error::Config(_))));
    assert!(matches!(cmd_train(&cfg, dir.path(), &[], 1), Err(Error::MissingArtifact(_))));
}
