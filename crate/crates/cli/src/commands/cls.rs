use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use spectra_dx::classifier::{predict_prob, train_classifier, ClassifierHyper, LabeledScore};
use spectra_dx::metrics::{classification_metrics, pr_curve, roc_curve, ClassificationMetrics, ConfusionCounts};
use spectra_dx::Error;

use crate::config::{echo, out_dir, resolve, write_json, Common};
use crate::CliError;

/// Reads `value,label` rows; a non-numeric first line is taken as header.
/// Labels are `0/1` or `false/true`.
pub fn read_labeled(path: &Path) -> Result<Vec<(f64, bool)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(CliError::usage(format!("{}:{}: expected two columns", path.display(), k + 1))),
        };
        let value = match a.parse::<f64>() {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(CliError::usage(format!("{}:{}: bad number {a:?}", path.display(), k + 1))),
        };
        let label = match b {
            "0" | "false" => false,
            "1" | "true" => true,
            _ => return Err(CliError::usage(format!("{}:{}: bad label {b:?}", path.display(), k + 1))),
        };
        if !value.is_finite() {
            return Err(Error::DataIntegrity(format!("{}:{}: non-finite value", path.display(), k + 1)).into());
        }
        rows.push((value, label));
    }
    if rows.is_empty() {
        return Err(CliError::usage(format!("{} has no data rows", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// CSV of `sas,label` rows (e.g. `scores.csv` from `synth-dx`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Mini-batch size; full batch when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: PathBuf,
    #[serde(flatten)]
    pub hyper: ClassifierHyper,
}

/// Writes `classifier.json` and `train_probs.csv` (`prob,label`).
pub fn train(common: &Common, args: &TrainArgs) -> Result<(), CliError> {
    let (cfg, _): (TrainConfig, _) = resolve(common, args)?;
    let rows = read_labeled(&cfg.data)?;
    let data = rows
        .iter()
        .map(|&(s, l)| LabeledScore::new(s, l))
        .collect::<Result<Vec<_>, _>>()?;
    let model = train_classifier(&data, &cfg.hyper)?;
    let out = out_dir(common)?;
    fs::write(out.join("classifier.json"), model.to_json() + "\n")?;
    let mut csv = String::from("prob,label\n");
    for d in &data {
        csv.push_str(&format!("{},{}\n", predict_prob(&model, d.sas), d.label as u8));
    }
    fs::write(out.join("train_probs.csv"), csv)?;
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// CSV of `prob,label` rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Decision threshold: positive when `prob ≥ threshold`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub data: PathBuf,
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Serialize)]
struct EvalReport {
    n: usize,
    threshold: f64,
    counts: ConfusionCounts,
    #[serde(flatten)]
    metrics: ClassificationMetrics,
    roc_auc: f64,
    average_precision: f64,
}

/// Writes `metrics.json`, `roc.csv` and `pr.csv`.
pub fn eval(common: &Common, args: &EvalArgs) -> Result<(), CliError> {
    let (cfg, _): (EvalConfig, _) = resolve(common, args)?;
    let rows = read_labeled(&cfg.data)?;
    let positives = rows.iter().filter(|r| r.1).count();
    if positives == 0 || positives == rows.len() {
        return Err(CliError::usage("evaluation needs both positive and negative rows"));
    }
    let counts = ConfusionCounts::from_scores(&rows, cfg.threshold);
    let metrics = classification_metrics(&counts)?;
    let roc = roc_curve(&rows)?;
    let pr = pr_curve(&rows)?;
    let out = out_dir(common)?;
    fs::write(out.join("roc.csv"), roc.to_csv())?;
    fs::write(out.join("pr.csv"), pr.to_csv())?;
    let report = EvalReport {
        n: rows.len(),
        threshold: cfg.threshold,
        counts,
        metrics,
        roc_auc: roc.area,
        average_precision: pr.area,
    };
    write_json(&out.join("metrics.json"), &report)?;
    echo(&out, &cfg)
}
