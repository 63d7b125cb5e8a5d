use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use spectra_dx::rmt::{mp_cdf, spectral_report_with, SpectralOptions};
use spectra_dx::spiked::{bbp_oracle, generate, run_trial, EnsembleConfig, SpikeSpec};
use spectra_dx::{FeatureMatrix, MPParams};

use crate::config::{echo, out_dir, print_json, resolve, write_json, Common};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Samples per trial (N).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Features per trial (p).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Population spike strengths (repeatable); none means pure noise.
    #[arg(long = "spike")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<f64>,
    /// Relative margin above λ₊ before an eigenvalue counts as an outlier.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_tolerance: Option<f64>,
    /// Bins of the pooled ESD histogram.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub spikes: Vec<f64>,
    #[serde(default)]
    pub edge_tolerance: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    20
}

fn default_bins() -> usize {
    50
}

#[derive(Debug, Serialize)]
struct Summary {
    n: usize,
    p: usize,
    trials: usize,
    aspect_ratio: f64,
    lambda_plus: f64,
    mean_sas: f64,
    detection_rate: f64,
    mean_largest_eigenvalue: f64,
    mean_fraction_above_edge: f64,
    bbp_oracle: Option<f64>,
}

impl SimulateConfig {
    fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_samples: self.n,
            n_features: self.p,
            spike: (!self.spikes.is_empty()).then(|| SpikeSpec::new(self.spikes.clone())),
            seed: self.seed,
            n_trials: self.trials,
        }
    }
}

pub fn simulate(common: &Common, args: &SimulateArgs) -> Result<(), CliError> {
    let (cfg, _): (SimulateConfig, _) = resolve(common, args)?;
    let ens = cfg.ensemble();
    ens.validate()?;
    if cfg.bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let out = out_dir(common)?;
    let options = SpectralOptions { edge_tolerance: cfg.edge_tolerance };
    let reports = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(&ens, i, &options))
        .collect::<Result<Vec<_>, _>>()?;

    let mut lines = Vec::new();
    for r in &reports {
        writeln!(lines, "{}", serde_json::to_string(r).map_err(|e| CliError::usage(e.to_string()))?)?;
    }
    fs::write(out.join("reports.jsonl"), lines)?;

    let t = reports.len() as f64;
    let mp = reports[0].mp;
    let above = |e: &[f64]| e.iter().filter(|&&l| l > mp.lambda_plus).count() as f64 / e.len() as f64;
    let summary = Summary {
        n: cfg.n,
        p: cfg.p,
        trials: cfg.trials,
        aspect_ratio: mp.aspect_ratio,
        lambda_plus: mp.lambda_plus,
        mean_sas: reports.iter().map(|r| r.sas).sum::<f64>() / t,
        detection_rate: reports.iter().filter(|r| r.has_outlier()).count() as f64 / t,
        mean_largest_eigenvalue: reports.iter().map(|r| r.largest_eigenvalue()).sum::<f64>() / t,
        mean_fraction_above_edge: reports.iter().map(|r| above(&r.eigenvalues)).sum::<f64>() / t,
        bbp_oracle: cfg.spikes.iter().copied().fold(None, |acc: Option<f64>, l| {
            match (acc, bbp_oracle(l, mp.aspect_ratio)) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            }
        }),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.eigenvalues.iter().copied()).collect();
    fs::write(out.join("esd_histogram.csv"), esd_histogram(&pooled, &mp, cfg.bins))?;
    echo(&out, &cfg)
}

/// Histogram of pooled eigenvalues over `[0, max(λ_max, λ₊)]` alongside the
/// Marchenko-Pastur probability mass of each bin.
fn esd_histogram(eigs: &[f64], mp: &MPParams, bins: usize) -> String {
    let hi = eigs.iter().copied().fold(mp.lambda_plus, f64::max) * 1.0001;
    let width = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for &e in eigs {
        counts[((e / width) as usize).min(bins - 1)] += 1;
    }
    let mut s = String::from("bin_lo,bin_hi,count,empirical_mass,mp_mass\n");
    for (k, &c) in counts.iter().enumerate() {
        let (lo, hi) = (k as f64 * width, (k + 1) as f64 * width);
        let lo_cdf = if k == 0 { 0.0 } else { mp_cdf(lo, mp) };
        let mass = mp_cdf(hi, mp) - lo_cdf;
        s.push_str(&format!("{lo},{hi},{c},{},{mass}\n", c as f64 / eigs.len() as f64));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Args, Serialize)]
pub struct GenFeaturesArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[arg(long = "spike")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenFeaturesConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub spikes: Vec<f64>,
    #[serde(default = "default_format")]
    pub format: Format,
    #[serde(default)]
    pub seed: u64,
}

fn default_format() -> Format {
    Format::Csv
}

pub fn gen_features(common: &Common, args: &GenFeaturesArgs) -> Result<(), CliError> {
    let (cfg, _): (GenFeaturesConfig, _) = resolve(common, args)?;
    let ens = EnsembleConfig {
        n_samples: cfg.n,
        n_features: cfg.p,
        spike: (!cfg.spikes.is_empty()).then(|| SpikeSpec::new(cfg.spikes.clone())),
        seed: cfg.seed,
        n_trials: 1,
    };
    let f = generate(&ens)?;
    let out = out_dir(common)?;
    match cfg.format {
        Format::Csv => f.write_csv(&out.join("features.csv"))?,
        Format::Binary => f.write_binary(&out.join("features.bin"))?,
    }
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct SasArgs {
    /// Feature file: CSV with header, or binary (`SPDX` magic).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_tolerance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub edge_tolerance: f64,
    /// Unused; accepted so that shared config files work.
    #[serde(default)]
    pub seed: u64,
}

/// Writes `report.json` into `--out`, or prints the report when no output
/// directory is given.
pub fn sas(common: &Common, args: &SasArgs) -> Result<(), CliError> {
    let (cfg, _): (SasConfig, _) = resolve(common, args)?;
    let features = FeatureMatrix::read(&cfg.input)?;
    let report = spectral_report_with(&features, &SpectralOptions { edge_tolerance: cfg.edge_tolerance })?;
    match &common.out {
        Some(_) => {
            let out = out_dir(common)?;
            write_json(&out.join("report.json"), &report)?;
            echo(&out, &cfg)
        }
        None => {
            print_json(&report)
        }
    }
}
