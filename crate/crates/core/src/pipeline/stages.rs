use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::RunConfig;
use super::dataset::{read_corpus, read_split, write_corpus, write_split, Inventory, Manifest};
use super::grammar::Grammar;
use crate::adversarial::{generate, Generator};
use crate::error::{Error, Result};
use crate::evaluation::{decode, per, random_decode_baseline, PerReport};
use crate::features::{
    kmeans_fit, pca_fit, stack_frames, synth_features, FeaturePipeline, PhonemeEmbeddings,
    SegmentSequence, Utterance,
};
use crate::numerics::ParamStore;
use crate::phoneme_lm::{build_ref_pool, train_mlm, MaskedLm, RefPool};
use crate::rng::stream;
use crate::training::{
    read_sidecar, save_checkpoint, silence_insert, train, Ablation, TrainConfig, TrainData,
    TrainOutcome,
};

pub const SPLITS: [&str; 3] = ["train", "dev", "eval"];
const STAMP: &str = "STAMP";

/// File layout of one pipeline output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split(&self, split: &str) -> PathBuf {
        self.data_dir().join(format!("{split}.dgud"))
    }

    pub fn corpus(&self) -> PathBuf {
        self.data_dir().join("text.txt")
    }

    pub fn lm_dir(&self) -> PathBuf {
        self.root.join("lm")
    }

    pub fn lm(&self) -> PathBuf {
        self.lm_dir().join("lm.dgum")
    }

    pub fn refs_dir(&self) -> PathBuf {
        self.root.join("refs")
    }

    pub fn refs(&self) -> PathBuf {
        self.refs_dir().join("train.dgur")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn metrics(&self) -> PathBuf {
        self.train_dir().join("metrics.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.train_dir().join("checkpoints")
    }

    pub fn selected(&self) -> PathBuf {
        self.train_dir().join("selected.txt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.root.join("ablate")
    }
}

/// Records which configuration produced a stage directory.
fn write_stamp(dir: &Path, stage: &str, hash: &str, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!("stage={stage}\nconfig_hash={hash}\n");
    for (k, v) in extra {
        let _ = writeln!(text, "{k}={v}");
    }
    fs::write(dir.join(STAMP), text)?;
    Ok(())
}

fn stamp_hash(dir: &Path) -> Result<Option<String>> {
    let p = dir.join(STAMP);
    if !p.exists() {
        return Ok(None);
    }
    Ok(fs::read_to_string(&p)?
        .lines()
        .find_map(|l| l.strip_prefix("config_hash="))
        .map(str::to_string))
}

/// Fails unless `artifact` exists and its stage directory was written under `hash`.
fn require(artifact: &Path, hash: &str) -> Result<()> {
    if !artifact.exists() {
        return Err(Error::MissingArtifact(artifact.to_path_buf()));
    }
    let dir = artifact.parent().unwrap_or(Path::new("."));
    match stamp_hash(dir)? {
        Some(h) if h == hash => Ok(()),
        Some(h) => Err(Error::Config(format!(
            "{} was produced under config hash {h}, current config hash is {hash}",
            artifact.display()
        ))),
        None => Err(Error::MissingArtifact(dir.join(STAMP))),
    }
}

fn utt_id(split: &str, i: usize) -> String {
    format!("{split}-{i:04}")
}

/// Counts of what `cmd_gen_data` wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSummary {
    pub utterances: BTreeMap<String, usize>,
    pub text_sentences: usize,
}

/// Synthetic audio splits and a disjoint unlabeled text corpus from one
/// random grammar.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<DataSummary> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let hash = cfg.hash();
    let seed = cfg.seed;
    let grammar = Grammar::random(&cfg.grammar, &mut stream(seed, "data/grammar"))?;
    let counts = [cfg.n_train, cfg.n_dev, cfg.n_eval];
    let (audio, text) = grammar.disjoint_sides(
        counts.iter().sum(),
        cfg.n_text,
        &mut stream(seed, "data/sentences"),
    )?;
    let inv = Inventory::standard(cfg.grammar.n_phonemes)?;
    let sil = inv.sil();
    let table = PhonemeEmbeddings::random(inv.len(), cfg.synth.d_raw, &mut stream(seed, "data/embeddings"));

    fs::create_dir_all(lay.data_dir())?;
    let mut records = Vec::new();
    let mut summary = DataSummary {
        utterances: BTreeMap::new(),
        text_sentences: text.len(),
    };
    let mut sentences = audio.iter();
    for (split, &n) in SPLITS.iter().zip(&counts) {
        let mut utts = Vec::with_capacity(n);
        for i in 0..n {
            let id = utt_id(split, i);
            let words = sentences.next().expect("sentence count matches split sizes");
            let mut rng = stream(seed, &format!("data/utt/{id}"));
            let phonemes = silence_insert(words, sil, cfg.audio_p_sil, &mut rng);
            utts.push(synth_features(&id, &phonemes, &table, &cfg.synth, &mut rng)?);
        }
        write_split(&lay.split(split), &utts, &inv)?;
        let rel = PathBuf::from("data").join(format!("{split}.dgud"));
        records.extend(utts.iter().map(|u| (split.to_string(), u.id.clone(), rel.clone())));
        summary.utterances.insert(split.to_string(), n);
    }
    write_corpus(&lay.corpus(), &text, &inv)?;
    let manifest = Manifest {
        seed,
        config_hash: hash.clone(),
        inventory: inv,
        records,
    };
    fs::write(lay.manifest(), manifest.to_text())?;
    write_stamp(&lay.data_dir(), "gen-data", &hash, &[])?;
    info!("gen-data: {:?}, {} text sentences", summary.utterances, summary.text_sentences);
    Ok(summary)
}

/// Everything `cmd_gen_data` produced, read back.
pub struct Dataset {
    pub manifest: Manifest,
    pub splits: BTreeMap<String, Vec<Utterance>>,
    pub corpus: Vec<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn inventory(&self) -> &Inventory {
        &self.manifest.inventory
    }

    pub fn split(&self, name: &str) -> &[Utterance] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Reference phonemes per utterance with silence removed.
    pub fn references(&self, split: &str) -> BTreeMap<String, Vec<usize>> {
        let sil = self.inventory().sil();
        self.split(split)
            .iter()
            .map(|u| {
                let ids = u.hidden_phonemes.iter().copied().filter(|&p| p != sil).collect();
                (u.id.clone(), ids)
            })
            .collect()
    }
}

pub fn load_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let lay = Layout::new(out);
    if !lay.manifest().exists() {
        return Err(Error::MissingArtifact(lay.manifest()));
    }
    let manifest = Manifest::parse(&fs::read_to_string(lay.manifest())?)?;
    if manifest.config_hash != cfg.hash() {
        return Err(Error::Config(format!(
            "{} was produced under config hash {}, current config hash is {}",
            lay.manifest().display(),
            manifest.config_hash,
            cfg.hash()
        )));
    }
    let mut splits = BTreeMap::new();
    for split in SPLITS {
        let path = lay.split(split);
        require(&path, &cfg.hash())?;
        let utts = read_split(&path, &manifest.inventory)?;
        if utts.len() != manifest.count(split) {
            return Err(Error::Format(format!(
                "{} holds {} utterances, manifest lists {}",
                path.display(),
                utts.len(),
                manifest.count(split)
            )));
        }
        splits.insert(split.to_string(), utts);
    }
    require(&lay.corpus(), &cfg.hash())?;
    let corpus = read_corpus(&lay.corpus(), &manifest.inventory)?;
    Ok(Dataset {
        manifest,
        splits,
        corpus,
    })
}

/// Heldout pseudo-likelihood of the phoneme LM before and after training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmSummary {
    pub heldout_nll_initial: f64,
    pub heldout_nll_final: f64,
}

pub fn cmd_train_lm(cfg: &RunConfig, out: &Path) -> Result<LmSummary> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let data = load_dataset(cfg, out)?;
    let inv = data.inventory();
    let mut rng = stream(cfg.seed, "lm/silence");
    let corpus: Vec<Vec<usize>> = data
        .corpus
        .iter()
        .map(|s| silence_insert(s, inv.sil(), cfg.train.p_sil, &mut rng))
        .collect();
    let (lm, report) = train_mlm(&corpus, inv.len(), Some(inv.sil()), &cfg.lm, &mut stream(cfg.seed, "lm/train"))?;
    fs::create_dir_all(lay.lm_dir())?;
    lm.save(&lay.lm())?;
    let summary = LmSummary {
        heldout_nll_initial: report.heldout_nll_initial,
        heldout_nll_final: report.heldout_nll_final,
    };
    write_stamp(
        &lay.lm_dir(),
        "train-lm",
        &cfg.hash(),
        &[
            ("heldout_nll_initial", summary.heldout_nll_initial.to_string()),
            ("heldout_nll_final", summary.heldout_nll_final.to_string()),
        ],
    )?;
    info!("train-lm: heldout NLL {:.4} -> {:.4}", summary.heldout_nll_initial, summary.heldout_nll_final);
    Ok(summary)
}

pub fn load_lm(cfg: &RunConfig, out: &Path) -> Result<MaskedLm> {
    let path = Layout::new(out).lm();
    require(&path, &cfg.hash())?;
    MaskedLm::load(&path)
}

/// k-means and PCA fitted on the training frames; deterministic given the config.
pub fn fit_features(cfg: &RunConfig, train_utts: &[Utterance]) -> Result<FeaturePipeline> {
    let frames = stack_frames(train_utts)?;
    let kmeans = kmeans_fit(&frames, cfg.k, cfg.kmeans_iters, &mut stream(cfg.seed, "features/kmeans"))?;
    let pca = pca_fit(&frames, cfg.d_pca)?;
    Ok(FeaturePipeline { kmeans, pca })
}

/// Segment sequences for every split.
pub fn segment_splits(cfg: &RunConfig, data: &Dataset) -> Result<BTreeMap<String, Vec<SegmentSequence>>> {
    let fp = fit_features(cfg, data.split("train"))?;
    SPLITS
        .iter()
        .map(|&s| {
            let segs = data.split(s).iter().map(|u| fp.segments(u)).collect::<Result<_>>()?;
            Ok((s.to_string(), segs))
        })
        .collect()
}

fn pool_for(
    cfg: &TrainConfig,
    lm: &MaskedLm,
    corpus: &[Vec<Vec<usize>>],
    train: &[SegmentSequence],
    sweeps: usize,
    threads: usize,
) -> Result<RefPool> {
    let ids: Vec<String> = train.iter().map(|s| s.source_id.clone()).collect();
    let targets: BTreeMap<String, usize> = train.iter().map(|s| (s.source_id.clone(), s.len())).collect();
    build_ref_pool(
        lm,
        corpus,
        &ids,
        &targets,
        &cfg.pool_config(sweeps, threads),
        &mut stream(cfg.seed, "refpool"),
    )
}

/// References whose length differs from the utterance's pooled segment count.
pub fn length_mismatches(pool: &RefPool, train: &[SegmentSequence]) -> usize {
    train
        .iter()
        .map(|s| {
            pool.get(&s.source_id)
                .map_or(0, |list| list.iter().filter(|e| e.len() != s.len()).count())
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefsSummary {
    pub utterances: usize,
    pub entries: usize,
    pub length_mismatches: usize,
}

pub fn cmd_sample_refs(cfg: &RunConfig, out: &Path, threads: usize) -> Result<RefsSummary> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let data = load_dataset(cfg, out)?;
    let lm = load_lm(cfg, out)?;
    let segs = segment_splits(cfg, &data)?;
    let train_segs = &segs["train"];
    let pool = pool_for(&cfg.train, &lm, &data.corpus, train_segs, cfg.sweeps, threads)?;
    fs::create_dir_all(lay.refs_dir())?;
    pool.save(&lay.refs())?;
    let summary = RefsSummary {
        utterances: pool.entries.len(),
        entries: pool.entries.values().map(Vec::len).sum(),
        length_mismatches: length_mismatches(&pool, train_segs),
    };
    write_stamp(
        &lay.refs_dir(),
        "sample-refs",
        &cfg.hash(),
        &[
            ("entries", summary.entries.to_string()),
            ("length_mismatches", summary.length_mismatches.to_string()),
        ],
    )?;
    info!("sample-refs: {} entries for {} utterances", summary.entries, summary.utterances);
    Ok(summary)
}

fn ablation_names(which: &[Ablation]) -> String {
    if which.is_empty() {
        "none".into()
    } else {
        which.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
    }
}

fn touches_sampling(which: &[Ablation]) -> bool {
    which.iter().any(|a| matches!(a, Ablation::NoBert | Ablation::NoLength))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub selected_step: usize,
    pub selected_file: PathBuf,
    pub warning: Option<String>,
    pub metrics_rows: usize,
}

fn write_training_outputs(
    dir: &Path,
    outcome: &TrainOutcome,
    hash: &str,
    which: &[Ablation],
) -> Result<TrainSummary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), outcome.history.to_csv())?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut files = Vec::with_capacity(outcome.checkpoints.len());
    for c in &outcome.checkpoints {
        files.push(save_checkpoint(&ckpt_dir, c.eval.step, &c.gen, hash)?);
    }
    let sel = &outcome.selection;
    let file = files[sel.index].clone();
    let rel = file.strip_prefix(dir).unwrap_or(&file).to_path_buf();
    let mut text = format!("step={}\nfile={}\n", sel.step, rel.display());
    if let Some(w) = &sel.warning {
        let _ = writeln!(text, "warning={w}");
    }
    fs::write(dir.join("selected.txt"), text)?;
    let steps = outcome
        .history
        .rows()
        .iter()
        .filter(|r| !r.is_controller_event())
        .count();
    write_stamp(dir, "train", hash, &[("ablations", ablation_names(which))])?;
    Ok(TrainSummary {
        steps,
        selected_step: sel.step,
        selected_file: file,
        warning: sel.warning.clone(),
        metrics_rows: outcome.history.len(),
    })
}

/// Inputs shared by `train`, `evaluate` and `ablate`.
struct Loaded {
    data: Dataset,
    lm: MaskedLm,
    segs: BTreeMap<String, Vec<SegmentSequence>>,
}

fn load_upstream(cfg: &RunConfig, out: &Path) -> Result<Loaded> {
    let data = load_dataset(cfg, out)?;
    let lm = load_lm(cfg, out)?;
    let segs = segment_splits(cfg, &data)?;
    Ok(Loaded { data, lm, segs })
}

fn load_refs(cfg: &RunConfig, out: &Path) -> Result<RefPool> {
    let path = Layout::new(out).refs();
    require(&path, &cfg.hash())?;
    RefPool::load(&path)
}

/// GAN training with optional ablations. Ablations that change reference
/// sampling provision their own pool in memory.
pub fn cmd_train(cfg: &RunConfig, out: &Path, which: &[Ablation], threads: usize) -> Result<TrainSummary> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let up = load_upstream(cfg, out)?;
    let tcfg = cfg.train.clone().with_ablations(which);
    tcfg.validate()?;
    let train_segs = &up.segs["train"];
    let refs = if touches_sampling(which) {
        pool_for(&tcfg, &up.lm, &up.data.corpus, train_segs, cfg.sweeps, threads)?
    } else {
        load_refs(cfg, out)?
    };
    let outcome = train(
        &tcfg,
        &TrainData {
            train: train_segs,
            refs: &refs,
            heldout: &up.segs["dev"],
            lm: &up.lm,
        },
    )?;
    let summary = write_training_outputs(&lay.train_dir(), &outcome, &cfg.hash(), which)?;
    info!(
        "train: {} steps, selected step {} ({})",
        summary.steps,
        summary.selected_step,
        summary.selected_file.display()
    );
    Ok(summary)
}

fn generator_from(params: ParamStore, d_in: usize, v_out: usize) -> Generator {
    Generator { d_in, v_out, params }
}

fn split_per(gen: &Generator, segs: &[SegmentSequence], refs: &BTreeMap<String, Vec<usize>>, sil: usize) -> Result<PerReport> {
    let hyps = segs
        .iter()
        .map(|s| Ok(decode(&s.source_id, &generate(gen, s)?, Some(sil))))
        .collect::<Result<Vec<_>>>()?;
    per(&hyps, refs)
}

/// Monte-Carlo PER of random decoding at each utterance's output length.
pub fn baseline_per(cfg: &RunConfig, segs: &[SegmentSequence], refs: &BTreeMap<String, Vec<usize>>, inv: &Inventory) -> Result<f64> {
    let cases: Vec<(usize, Vec<usize>)> = segs
        .iter()
        .map(|s| (s.len(), refs.get(&s.source_id).cloned().unwrap_or_default()))
        .collect();
    random_decode_baseline(&cases, inv.len(), Some(inv.sil()), cfg.baseline_trials, &mut stream(cfg.seed, "eval/baseline"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub split: String,
    pub per: f64,
    pub baseline_per: f64,
    pub utterances: usize,
}

/// Reads `train/selected.txt` and returns the chosen weight file.
pub fn selected_checkpoint(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let lay = Layout::new(out);
    let sel = lay.selected();
    require(&sel, &cfg.hash())?;
    let text = fs::read_to_string(&sel)?;
    let rel = text
        .lines()
        .find_map(|l| l.strip_prefix("file="))
        .ok_or_else(|| Error::Format(format!("{} has no file= line", sel.display())))?;
    Ok(lay.train_dir().join(rel))
}

/// PER of a generator checkpoint on dev and eval next to the random-decode baseline.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<Vec<SplitResult>> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let up = load_upstream(cfg, out)?;
    let weights = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => selected_checkpoint(cfg, out)?,
    };
    if !weights.exists() {
        return Err(Error::MissingArtifact(weights));
    }
    let (hash, _) = read_sidecar(&weights)?;
    if hash != cfg.hash() {
        return Err(Error::Config(format!(
            "{} was produced under config hash {hash}, current config hash is {}",
            weights.display(),
            cfg.hash()
        )));
    }
    let inv = up.data.inventory();
    let gen = generator_from(ParamStore::load(&weights)?, cfg.d_pca, inv.len());
    fs::create_dir_all(lay.eval_dir())?;
    let mut results = Vec::new();
    let mut summary = String::from("split,per,baseline_per,utterances\n");
    for split in ["dev", "eval"] {
        let refs = up.data.references(split);
        let segs = &up.segs[split];
        let report = split_per(&gen, segs, &refs, inv.sil())?;
        fs::write(lay.eval_dir().join(format!("{split}_per.csv")), report.to_csv())?;
        let baseline = baseline_per(cfg, segs, &refs, inv)?;
        let _ = writeln!(summary, "{split},{},{baseline},{}", report.per, segs.len());
        info!("evaluate {split}: PER {:.4} (random baseline {:.4})", report.per, baseline);
        results.push(SplitResult {
            split: split.to_string(),
            per: report.per,
            baseline_per: baseline,
            utterances: segs.len(),
        });
    }
    fs::write(lay.eval_dir().join("summary.csv"), summary)?;
    let shown = weights.strip_prefix(out).unwrap_or(&weights);
    write_stamp(&lay.eval_dir(), "evaluate", &cfg.hash(), &[("checkpoint", shown.display().to_string())])?;
    Ok(results)
}

/// One row of the ablation comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub selected_step: usize,
    pub lm_nll: Option<f64>,
    pub vocab_usage: f64,
    pub dev_per: f64,
}

pub const COMPARISON_HEADER: &str = "variant,selected_step,lm_nll,vocab_usage,dev_per,full_le_variant";

/// Full model plus each single ablation, trained on the same data and LM.
/// Variants that leave reference sampling alone share one pool.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let lay = Layout::new(out);
    let up = load_upstream(cfg, out)?;
    let inv = up.data.inventory();
    let train_segs = &up.segs["train"];
    let dev_refs = up.data.references("dev");
    let shared = pool_for(&cfg.train, &up.lm, &up.data.corpus, train_segs, cfg.sweeps, threads)?;
    let mut variants: Vec<(String, Vec<Ablation>)> = vec![("full".into(), vec![])];
    variants.extend(Ablation::ALL.iter().map(|&a| (a.name().to_string(), vec![a])));

    let mut rows = Vec::with_capacity(variants.len());
    for (name, which) in &variants {
        let tcfg = cfg.train.clone().with_ablations(which);
        tcfg.validate()?;
        let own;
        let refs = if touches_sampling(which) {
            own = pool_for(&tcfg, &up.lm, &up.data.corpus, train_segs, cfg.sweeps, threads)?;
            &own
        } else {
            &shared
        };
        let outcome = train(
            &tcfg,
            &TrainData {
                train: train_segs,
                refs,
                heldout: &up.segs["dev"],
                lm: &up.lm,
            },
        )?;
        write_training_outputs(&lay.ablate_dir().join(name), &outcome, &cfg.hash(), which)?;
        let sel = &outcome.checkpoints[outcome.selection.index];
        let gen = generator_from(sel.gen.clone(), cfg.d_pca, inv.len());
        let dev_per = split_per(&gen, &up.segs["dev"], &dev_refs, inv.sil())?.per;
        info!("ablate {name}: selected step {}, dev PER {dev_per:.4}", sel.eval.step);
        rows.push(AblationRow {
            variant: name.clone(),
            selected_step: sel.eval.step,
            lm_nll: sel.eval.lm_nll,
            vocab_usage: sel.eval.vocab_usage,
            dev_per,
        });
    }
    fs::write(lay.ablate_dir().join("comparison.csv"), comparison_csv(&rows))?;
    write_stamp(&lay.ablate_dir(), "ablate", &cfg.hash(), &[])?;
    Ok(rows)
}

/// The last column reports whether the full model's dev PER is at most the
/// variant's; it is left empty on the full model's own row.
pub fn comparison_csv(rows: &[AblationRow]) -> String {
    let full = rows.iter().find(|r| r.variant == "full").map(|r| r.dev_per);
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let nll = r.lm_nll.map(|v| v.to_string()).unwrap_or_default();
        let le = match full {
            Some(f) if r.variant != "full" => (f <= r.dev_per).to_string(),
            _ => String::new(),
        };
        let _ = writeln!(out, "{},{},{nll},{},{},{le}", r.variant, r.selected_step, r.vocab_usage, r.dev_per);
    }
    out
}
