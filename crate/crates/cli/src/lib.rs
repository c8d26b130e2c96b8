//! Commands behind the `lane` binary: corpus synthesis, pair preparation,
//! training and evaluation. Every command writes plain files into an output
//! directory together with a `manifest.json` recording inputs and settings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lane_core::corpus::{
    build_pairs, ingest_usages, lexicographic_split, lexicographic_split_by_lemma, synth_corpus, ContrastivePair,
    CorpusError, DatasetSplits, SynthConfig, DEFAULT_CAP_PER_LEMMA, DEFAULT_DEV_SIZE,
};
use lane_core::eval::{self, adversarial_counterparts, evaluate, pca_project, similarity_report, MetricsReport};
use lane_core::model::{encode, Checkpoint, EncoderParams};
use lane_core::train::{fit, tune_on, TrainConfig};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bad or missing input: reported with exit status 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Inputs whose current content no longer matches the recorded digest
    /// (including inputs that have disappeared).
    pub fn drifted_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|d| sha256_file(Path::new(&d.path)).map_or(true, |h| h != d.sha256))
            .map(|d| d.path.clone())
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.display().to_string());
        write_json(&path, &self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| input_error(format!("cannot open {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_pairs(path: &Path, pairs: &[ContrastivePair]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines pair file, rejecting malformed or inconsistent records
/// with their 1-based line number.
pub fn read_pairs(path: &Path) -> Result<Vec<ContrastivePair>> {
    let reader = open_input(path)?;
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ContrastivePair = serde_json::from_str(&line)
            .map_err(|e| input_error(format!("{}:{}: malformed pair: {e}", path.display(), i + 1)))?;
        pair.validate().map_err(|e| input_error(format!("{}:{}: invalid pair: {e}", path.display(), i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub config: SynthConfig,
    pub out: PathBuf,
}

/// Writes `usages.jsonl` for a synthetic corpus.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let usages = synth_corpus(&args.config).map_err(|e| input_error(e.to_string()))?;
    create_dir(&args.out)?;
    let path = args.out.join("usages.jsonl");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for u in &usages {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    info!("wrote {} usages to {}", usages.len(), path.display());
    let mut manifest = RunManifest::new("synth", args.config.seed, serde_json::to_value(&args.config)?);
    manifest.outputs.push(path.display().to_string());
    manifest.write(&args.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DevSampling {
    /// Uniform sample of train-side pairs.
    Pairs,
    /// Whole train-side lemmas.
    Lemmas,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareArgs {
    pub usages: PathBuf,
    pub out: PathBuf,
    pub cap_per_lemma: Option<usize>,
    pub dev_size: usize,
    pub dev_sampling: DevSampling,
    pub seed: u64,
}

impl PrepareArgs {
    pub fn new(usages: PathBuf, out: PathBuf) -> Self {
        PrepareArgs {
            usages,
            out,
            cap_per_lemma: Some(DEFAULT_CAP_PER_LEMMA),
            dev_size: DEFAULT_DEV_SIZE,
            dev_sampling: DevSampling::Pairs,
            seed: 0,
        }
    }
}

/// Pair counts per split and part of speech.
pub fn split_stats(splits: &DatasetSplits) -> String {
    let mut out = String::from("split,pos,pairs,positive,negative\n");
    for (name, pairs) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        let mut by_pos: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for p in pairs {
            let entry = by_pos.entry(p.pos.as_deref().unwrap_or("-")).or_default();
            if p.label == 1.0 {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        let (mut pos_total, mut neg_total) = (0, 0);
        for (pos, (positive, negative)) in &by_pos {
            out.push_str(&format!("{name},{pos},{},{positive},{negative}\n", positive + negative));
            pos_total += positive;
            neg_total += negative;
        }
        out.push_str(&format!("{name},all,{},{pos_total},{neg_total}\n", pos_total + neg_total));
    }
    out
}

/// Builds pairs from a usage file and writes `train.jsonl`, `dev.jsonl`,
/// `test.jsonl` and `stats.csv`.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<DatasetSplits> {
    let usages = ingest_usages(open_input(&args.usages)?).map_err(|e| match e {
        CorpusError::Io(io) => input_error(format!("{}: {io}", args.usages.display())),
        other => input_error(format!("{}: {other}", args.usages.display())),
    })?;
    let pairs = build_pairs(&usages, args.cap_per_lemma, args.seed);
    let splits = match args.dev_sampling {
        DevSampling::Pairs => lexicographic_split(&pairs, args.dev_size, args.seed),
        DevSampling::Lemmas => lexicographic_split_by_lemma(&pairs, args.dev_size, args.seed),
    }
    .map_err(|e| input_error(e.to_string()))?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("prepare", args.seed, serde_json::to_value(args)?);
    manifest.add_input(&args.usages)?;
    for (name, pairs) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        let path = args.out.join(format!("{name}.jsonl"));
        write_pairs(&path, pairs)?;
        manifest.outputs.push(path.display().to_string());
    }
    let stats = args.out.join("stats.csv");
    write_text(&stats, &split_stats(&splits))?;
    manifest.outputs.push(stats.display().to_string());
    info!(
        "{} usages -> train {} / dev {} / test {} pairs",
        usages.len(),
        splits.train.len(),
        splits.dev.len(),
        splits.test.len()
    );
    manifest.write(&args.out)?;
    Ok(splits)
}

/// Parses a run config; absent fields take their defaults.
pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    let config: TrainConfig =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(config)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub threshold: f64,
}

/// Trains on `<data>/train.jsonl` with model selection on `<data>/dev.jsonl` and
/// writes `checkpoint.json`, `curves.csv` and `manifest.json`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    args.config.validate().map_err(|e| input_error(e.to_string()))?;
    let train_path = args.data.join("train.jsonl");
    let dev_path = args.data.join("dev.jsonl");
    let splits = DatasetSplits { train: read_pairs(&train_path)?, dev: read_pairs(&dev_path)?, test: Vec::new() };
    if splits.train.is_empty() || splits.dev.is_empty() {
        return Err(input_error(format!("{}: train and dev pairs are both required", args.data.display())));
    }
    let outcome = fit(&splits, &args.config)?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("train", args.config.seed, serde_json::to_value(&args.config)?);
    if let Some(path) = &args.config_path {
        manifest.add_input(path)?;
    }
    manifest.add_input(&train_path)?;
    manifest.add_input(&dev_path)?;

    let checkpoint = args.out.join("checkpoint.json");
    write_json(&checkpoint, &outcome.params.to_checkpoint(Some(outcome.threshold)))?;
    let curves = args.out.join("curves.csv");
    write_text(&curves, &outcome.log.to_csv())?;
    manifest.outputs.push(checkpoint.display().to_string());
    manifest.outputs.push(curves.display().to_string());
    manifest.write(&args.out)?;
    info!("best epoch {} with threshold {}", outcome.best_epoch, outcome.threshold);
    Ok(TrainSummary { best_epoch: outcome.best_epoch, threshold: outcome.threshold })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub pairs: PathBuf,
    pub out: PathBuf,
    /// Re-tune the decision threshold on these pairs instead of using the stored one.
    pub dev: Option<PathBuf>,
    /// Second checkpoint to compare against in `deltas.csv`.
    pub baseline: Option<PathBuf>,
    pub seed: u64,
}

/// Number of principal components written to `pca.csv`.
pub const PCA_COMPONENTS: usize = 2;

fn load_model(path: &Path) -> Result<(EncoderParams, Option<f64>)> {
    let ck = read_checkpoint(path)?;
    let threshold = ck.threshold;
    let params = EncoderParams::from_checkpoint(ck).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok((params, threshold))
}

fn threshold_for(params: &EncoderParams, stored: Option<f64>, dev: Option<&[ContrastivePair]>) -> Result<f64> {
    match (dev, stored) {
        (Some(dev), _) => Ok(tune_on(params, dev)?.0),
        (None, Some(t)) => Ok(t),
        (None, None) => Ok(0.5),
    }
}

fn pca_csv(params: &EncoderParams, pairs: &[ContrastivePair]) -> Result<String> {
    let mut header = String::from("pair,side,label,origin");
    for c in 1..=PCA_COMPONENTS {
        header.push_str(&format!(",pc{c}"));
    }
    header.push('\n');
    let vectors: Vec<Vec<f64>> = eval::marked_sentences(pairs).iter().map(|(t, i)| encode(params, t, *i).0).collect();
    if vectors.len() < 2 {
        return Ok(header);
    }
    let k = PCA_COMPONENTS.min(params.dim());
    let pca = pca_project(&vectors, k)?;
    let mut out = header;
    for (row, coords) in pca.projected.iter().enumerate() {
        let p = &pairs[row / 2];
        out.push_str(&format!("{},{},{},{:?}", row / 2, row % 2 + 1, p.label, p.origin));
        for c in coords {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Evaluates a checkpoint on a pair file and writes `metrics.json`,
/// `similarity.csv` (including each pair's adversarial counterpart), `pca.csv`
/// and, given a baseline checkpoint, `deltas.csv`.
pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let (params, stored) = load_model(&args.checkpoint)?;
    let pairs = read_pairs(&args.pairs)?;
    if pairs.is_empty() {
        return Err(input_error(format!("{}: no pairs to evaluate", args.pairs.display())));
    }
    let dev = args.dev.as_deref().map(read_pairs).transpose()?;
    let threshold = threshold_for(&params, stored, dev.as_deref())?;
    let metrics = evaluate(&params, &pairs, threshold, args.seed)?;

    create_dir(&args.out)?;
    let config = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "pairs": args.pairs.display().to_string(),
        "dev": args.dev.as_ref().map(|p| p.display().to_string()),
        "baseline": args.baseline.as_ref().map(|p| p.display().to_string()),
        "threshold": threshold,
    });
    let mut manifest = RunManifest::new("eval", args.seed, config);
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.pairs)?;
    if let Some(dev) = &args.dev {
        manifest.add_input(dev)?;
    }

    let metrics_path = args.out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    let mut with_adversarial = pairs.clone();
    with_adversarial.extend(adversarial_counterparts(&pairs, args.seed));
    let similarity = args.out.join("similarity.csv");
    write_text(&similarity, &similarity_report(&params, &with_adversarial)?.to_csv())?;
    let pca = args.out.join("pca.csv");
    write_text(&pca, &pca_csv(&params, &pairs)?)?;
    manifest.outputs.extend([metrics_path, similarity, pca].iter().map(|p| p.display().to_string()));

    if let Some(baseline_path) = &args.baseline {
        manifest.add_input(baseline_path)?;
        let (base_params, base_stored) = load_model(baseline_path)?;
        let base_threshold = threshold_for(&base_params, base_stored, dev.as_deref())?;
        let base = evaluate(&base_params, &pairs, base_threshold, args.seed)?;
        let deltas = args.out.join("deltas.csv");
        write_text(&deltas, &deltas_csv(&base, &metrics))?;
        manifest.outputs.push(deltas.display().to_string());
    }
    manifest.write(&args.out)?;
    Ok(metrics)
}

/// Side-by-side metrics of a baseline and a candidate model.
pub fn deltas_csv(baseline: &MetricsReport, candidate: &MetricsReport) -> String {
    let mut out = String::from("metric,baseline,candidate,delta\n");
    for (name, b, c) in [
        ("accuracy", baseline.accuracy, candidate.accuracy),
        ("f1", baseline.f1, candidate.f1),
        ("collapse_mean_cos", baseline.collapse_mean_cos, candidate.collapse_mean_cos),
        ("anisotropy", baseline.anisotropy, candidate.anisotropy),
        ("threshold", baseline.threshold, candidate.threshold),
    ] {
        out.push_str(&format!("{name},{b},{c},{}\n", c - b));
    }
    out
}
