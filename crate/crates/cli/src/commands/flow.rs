use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use spectra_dx::attention::FeatureGrid;
use spectra_dx::features::{decode_binary, encode_binary};
use spectra_dx::flow::{
    euler_refine, gen_mask_corpus, train_flow, Architecture, ConditioningFeatures, CorpusSpec, Corruption,
    FlowExample, TrainHyper, VectorFieldModel,
};
use spectra_dx::metrics::dice_iou;
use spectra_dx::rng::trial_seed;
use spectra_dx::Mask;

use crate::config::{echo, out_dir, resolve, write_json, Common};
use crate::CliError;

const MANIFEST: &str = "manifest.json";
const MODEL_BIN: &str = "model.bin";
const MODEL_JSON: &str = "model.json";

#[derive(Debug, Subcommand)]
pub enum FlowCommand {
    /// Write train/test splits of coarse/ground-truth PGM pairs + manifest.
    GenCorpus(GenCorpusArgs),
    /// Fit the velocity-field model on a corpus split.
    Train(TrainArgs),
    /// Euler-integrate coarse masks of a split with a trained model.
    Refine(RefineArgs),
    /// Dice/IoU of coarse (and refined) masks against ground truth.
    Eval(EvalArgs),
}

pub fn run(common: &Common, cmd: &FlowCommand) -> Result<(), CliError> {
    match cmd {
        FlowCommand::GenCorpus(a) => gen_corpus(common, a),
        FlowCommand::Train(a) => train(common, a),
        FlowCommand::Refine(a) => refine(common, a),
        FlowCommand::Eval(a) => eval(common, a),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    height: usize,
    width: usize,
    channels: usize,
    train: Vec<PairEntry>,
    test: Vec<PairEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairEntry {
    id: String,
    coarse: PathBuf,
    gt: PathBuf,
    /// `(H·W) × c` image-feature grid in the binary feature format.
    cond: PathBuf,
    text_vec: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Manifest {
    fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    fn split(&self, s: Split) -> &[PairEntry] {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn load_pair(dir: &Path, m: &Manifest, e: &PairEntry) -> Result<FlowExample, CliError> {
    let coarse = Mask::read_pgm(&dir.join(&e.coarse))?;
    let gt = Mask::read_pgm(&dir.join(&e.gt))?;
    if coarse.shape() != (m.height, m.width) || gt.shape() != (m.height, m.width) {
        return Err(CliError::usage(format!("pair {} does not match the manifest shape", e.id)));
    }
    let (rows, cols, data) = decode_binary(&fs::read(dir.join(&e.cond))?)?;
    if rows != m.height * m.width || cols != m.channels || e.text_vec.len() != m.channels {
        return Err(CliError::usage(format!("conditioning of pair {} has the wrong shape", e.id)));
    }
    let cond = ConditioningFeatures::new(e.text_vec.clone(), FeatureGrid::new(m.height, m.width, m.channels, data)?)?;
    Ok(FlowExample { coarse, gt, cond })
}

fn load_split(dir: &Path, split: Split) -> Result<(Manifest, Vec<FlowExample>), CliError> {
    let m = Manifest::load(dir)?;
    let pairs = m.split(split).iter().map(|e| load_pair(dir, &m, e)).collect::<Result<Vec<_>, _>>()?;
    if pairs.is_empty() {
        return Err(CliError::usage(format!("split {split:?} of {} is empty", dir.display())));
    }
    Ok((m, pairs))
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    /// Side of the square masks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Conditioning channels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenCorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    pub channels: usize,
    pub corruption: Corruption,
    pub seed: u64,
}

impl Default for GenCorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 200,
            size: 32,
            channels: Architecture::default().cond_dim,
            corruption: Corruption::default(),
            seed: 7,
        }
    }
}

fn gen_corpus(common: &Common, args: &GenCorpusArgs) -> Result<(), CliError> {
    let (cfg, _): (GenCorpusConfig, _) = resolve(common, args)?;
    let out = out_dir(common)?;
    let mut splits = Vec::new();
    for (k, (name, n)) in [("train", cfg.n_train), ("test", cfg.n_test)].into_iter().enumerate() {
        let spec = CorpusSpec {
            n,
            height: cfg.size,
            width: cfg.size,
            channels: cfg.channels,
            corruption: cfg.corruption,
            seed: trial_seed(cfg.seed, k as u64),
        };
        let corpus = gen_mask_corpus(&spec)?;
        fs::create_dir_all(out.join(name))?;
        let mut entries = Vec::with_capacity(n);
        for (i, ex) in corpus.iter().enumerate() {
            let id = format!("{name}_{i:04}");
            let entry = PairEntry {
                coarse: Path::new(name).join(format!("{i:04}_coarse.pgm")),
                gt: Path::new(name).join(format!("{i:04}_gt.pgm")),
                cond: Path::new(name).join(format!("{i:04}_cond.bin")),
                text_vec: ex.cond.text_vec.clone(),
                id,
            };
            ex.coarse.write_pgm(&out.join(&entry.coarse))?;
            ex.gt.write_pgm(&out.join(&entry.gt))?;
            let g = &ex.cond.img_grid;
            fs::write(out.join(&entry.cond), encode_binary(g.height() * g.width(), g.channels(), g.as_slice()))?;
            entries.push(entry);
        }
        splits.push(entries);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let manifest = Manifest {
        height: cfg.size,
        width: cfg.size,
        channels: cfg.channels,
        train,
        test,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Corpus directory written by `flow gen-corpus`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_per_sample: Option<usize>,
    /// Stencil radius of the velocity model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    /// Hidden units of the velocity model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    #[serde(default = "train_split")]
    pub split: Split,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_tps")]
    pub t_per_sample: usize,
    #[serde(default = "default_radius")]
    pub radius: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn train_split() -> Split {
    Split::Train
}
fn test_split() -> Split {
    Split::Test
}
fn default_lr() -> f64 {
    TrainHyper::default().lr
}
fn default_steps() -> usize {
    TrainHyper::default().steps
}
fn default_batch() -> usize {
    TrainHyper::default().batch
}
fn default_tps() -> usize {
    TrainHyper::default().t_per_sample
}
fn default_radius() -> usize {
    Architecture::default().radius
}
fn default_hidden() -> usize {
    Architecture::default().hidden
}
fn default_seed() -> u64 {
    TrainHyper::default().seed
}
fn default_euler_steps() -> usize {
    10
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    param_count: usize,
    initial_loss: f64,
    final_loss: f64,
    init_checksum: String,
    checksum: String,
}

fn train(common: &Common, args: &TrainArgs) -> Result<(), CliError> {
    let (cfg, _): (TrainConfig, _) = resolve(common, args)?;
    let (manifest, corpus) = load_split(&cfg.corpus, cfg.split)?;
    let arch = Architecture {
        radius: cfg.radius,
        hidden: cfg.hidden,
        cond_dim: manifest.channels,
    };
    let hyper = TrainHyper {
        lr: cfg.lr,
        steps: cfg.steps,
        batch: cfg.batch,
        t_per_sample: cfg.t_per_sample,
        seed: cfg.seed,
    };
    let out = out_dir(common)?;
    let outcome = train_flow(&corpus, arch, &hyper)?;
    let init = VectorFieldModel::init(arch, trial_seed(hyper.seed, 0))?;
    outcome.model.save(&out.join(MODEL_BIN), &out.join(MODEL_JSON))?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in outcome.step_losses.iter().enumerate() {
        curve.push_str(&format!("{i},{l}\n"));
    }
    fs::write(out.join("loss_curve.csv"), curve)?;
    let summary = TrainSummary {
        param_count: arch.param_count(),
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        init_checksum: format!("{:016x}", init.checksum()),
        checksum: format!("{:016x}", outcome.model.checksum()),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Directory holding `model.bin` and `model.json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Euler steps T.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub corpus: PathBuf,
    pub model: PathBuf,
    #[serde(default = "test_split")]
    pub split: Split,
    #[serde(default = "default_euler_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RefinedEntry {
    id: String,
    refined: PathBuf,
}

fn refine(common: &Common, args: &RefineArgs) -> Result<(), CliError> {
    let (cfg, _): (RefineConfig, _) = resolve(common, args)?;
    let model = VectorFieldModel::load(&cfg.model.join(MODEL_BIN), &cfg.model.join(MODEL_JSON))?;
    let (manifest, corpus) = load_split(&cfg.corpus, cfg.split)?;
    if model.architecture().cond_dim != manifest.channels {
        return Err(CliError::usage(format!(
            "model expects {} conditioning channels, corpus has {}",
            model.architecture().cond_dim,
            manifest.channels
        )));
    }
    let out = out_dir(common)?;
    fs::create_dir_all(out.join("refined"))?;
    let refined = corpus
        .par_iter()
        .map(|ex| euler_refine(&model, &ex.coarse, &ex.cond, cfg.steps))
        .collect::<Result<Vec<_>, _>>()?;
    let mut entries = Vec::with_capacity(refined.len());
    for (entry, mask) in manifest.split(cfg.split).iter().zip(&refined) {
        let rel = Path::new("refined").join(format!("{}.pgm", entry.id));
        mask.write_pgm(&out.join(&rel))?;
        entries.push(RefinedEntry {
            id: entry.id.clone(),
            refined: rel,
        });
    }
    write_json(&out.join("refined.json"), &entries)?;
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Output directory of `flow refine`; omit to score coarse masks only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Binarization threshold for soft masks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub refined: Option<PathBuf>,
    #[serde(default = "test_split")]
    pub split: Split,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct PairScore {
    id: String,
    coarse_dice: f64,
    coarse_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined_iou: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    n_pairs: usize,
    threshold: f64,
    mean_coarse_dice: f64,
    mean_coarse_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_refined_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_refined_iou: Option<f64>,
    pairs: Vec<PairScore>,
}

fn eval(common: &Common, args: &EvalArgs) -> Result<(), CliError> {
    let (cfg, _): (EvalConfig, _) = resolve(common, args)?;
    let (manifest, corpus) = load_split(&cfg.corpus, cfg.split)?;
    let refined: Option<Vec<RefinedEntry>> = match &cfg.refined {
        Some(dir) => {
            let path = dir.join("refined.json");
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::usage(e.to_string()))?)
        }
        None => None,
    };
    let mut pairs = Vec::with_capacity(corpus.len());
    for (k, (entry, ex)) in manifest.split(cfg.split).iter().zip(&corpus).enumerate() {
        let gt = ex.gt.binarize(cfg.threshold)?;
        let (coarse_dice, coarse_iou) = dice_iou(&ex.coarse.binarize(cfg.threshold)?, &gt)?;
        let (refined_dice, refined_iou) = match (&refined, &cfg.refined) {
            (Some(list), Some(dir)) => {
                let r = list
                    .get(k)
                    .filter(|r| r.id == entry.id)
                    .ok_or_else(|| CliError::usage(format!("no refined mask for pair {}", entry.id)))?;
                let mask = Mask::read_pgm(&dir.join(&r.refined))?;
                let (d, i) = dice_iou(&mask.binarize(cfg.threshold)?, &gt)?;
                (Some(d), Some(i))
            }
            _ => (None, None),
        };
        pairs.push(PairScore {
            id: entry.id.clone(),
            coarse_dice,
            coarse_iou,
            refined_dice,
            refined_iou,
        });
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&PairScore) -> Option<f64>| -> Option<f64> {
        pairs.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    let report = EvalReport {
        n_pairs: pairs.len(),
        threshold: cfg.threshold,
        mean_coarse_dice: mean(&|p| Some(p.coarse_dice)).unwrap_or(0.0),
        mean_coarse_iou: mean(&|p| Some(p.coarse_iou)).unwrap_or(0.0),
        mean_refined_dice: mean(&|p| p.refined_dice),
        mean_refined_iou: mean(&|p| p.refined_iou),
        pairs,
    };
    let out = out_dir(common)?;
    write_json(&out.join("eval.json"), &report)?;
    echo(&out, &cfg)
}
