use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use spectra_dx::classifier::ClassifierModel;
use spectra_dx::pipeline::{diagnose_image, gen_case_set, region_report, CaseSpec, PatchProjector};
use spectra_dx::rmt::SpectralOptions;
use spectra_dx::{Grid, Mask};

use crate::config::{echo, out_dir, print_json, resolve, write_json, Common};
use crate::CliError;

fn default_patch() -> usize {
    16
}
fn default_p_out() -> usize {
    32
}
fn default_proj_seed() -> u64 {
    5
}

/// Feature-extractor settings shared by `synth-dx` and `diagnose`; both
/// must agree for scores and diagnoses to be comparable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_p_out")]
    pub p_out: usize,
    #[serde(default = "default_proj_seed")]
    pub proj_seed: u64,
    #[serde(default)]
    pub edge_tolerance: f64,
}

impl ProviderConfig {
    fn build(&self) -> Result<(PatchProjector, SpectralOptions), CliError> {
        Ok((
            PatchProjector::new(self.patch_size, self.p_out, self.proj_seed)?,
            SpectralOptions { edge_tolerance: self.edge_tolerance },
        ))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ProviderArgs {
    /// Patch side s.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    /// Feature dimension p of the patch projection.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_out: Option<usize>,
    /// Seed of the fixed patch projection.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proj_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_tolerance: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of cases.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Healthy cases per diseased case.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<usize>,
    /// Amplitude of the injected stripe pattern.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stripe_amp: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    #[serde(default = "default_amp")]
    pub stripe_amp: f64,
    #[serde(flatten)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    500
}
fn default_ratio() -> usize {
    4
}
fn default_amp() -> f64 {
    CaseSpec::default().stripe_amp
}

#[derive(Debug, Serialize)]
struct CaseEntry {
    id: String,
    image: PathBuf,
    mask: PathBuf,
    label: u8,
    sas: f64,
    n_patches: usize,
}

/// Writes `cases/NNNN_{image,mask}.pgm`, `manifest.json` and `scores.csv`
/// (`sas,label`). Scores are computed from the written (8-bit) images so
/// that they agree with `diagnose` on the same files.
pub fn synth(common: &Common, args: &SynthArgs) -> Result<(), CliError> {
    let (cfg, _): (SynthConfig, _) = resolve(common, args)?;
    let spec = CaseSpec {
        size: 224,
        patch_size: cfg.provider.patch_size,
        stripe_amp: cfg.stripe_amp,
        ..CaseSpec::default()
    };
    spec.validate()?;
    let (provider, options) = cfg.provider.build()?;
    let cases = gen_case_set(&spec, cfg.n, cfg.ratio, cfg.seed)?;
    let out = out_dir(common)?;
    fs::create_dir_all(out.join("cases"))?;
    let entries = cases
        .par_iter()
        .enumerate()
        .map(|(i, (case, diseased))| -> Result<CaseEntry, CliError> {
            let image_bytes = case.image.to_pgm();
            let image = Grid::from_pgm(&image_bytes)?;
            let report = region_report(&image, &case.mask, &provider, &options)?;
            let entry = CaseEntry {
                id: format!("{i:04}"),
                image: Path::new("cases").join(format!("{i:04}_image.pgm")),
                mask: Path::new("cases").join(format!("{i:04}_mask.pgm")),
                label: *diseased as u8,
                sas: report.sas,
                n_patches: report.n_samples,
            };
            fs::write(out.join(&entry.image), image_bytes)?;
            case.mask.write_pgm(&out.join(&entry.mask))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("sas,label\n");
    for e in &entries {
        csv.push_str(&format!("{},{}\n", e.sas, e.label));
    }
    fs::write(out.join("scores.csv"), csv)?;
    write_json(&out.join("manifest.json"), &entries)?;
    echo(&out, &cfg)
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Image (PGM, P5).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Region mask (PGM); binarized at 0.5.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Classifier JSON from `train-cls`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub model: PathBuf,
    #[serde(flatten)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Prints the diagnosis JSON, or writes `diagnosis.json` under `--out`.
pub fn diagnose(common: &Common, args: &DiagnoseArgs) -> Result<(), CliError> {
    let (cfg, _): (DiagnoseConfig, _) = resolve(common, args)?;
    let image = Grid::read_pgm(&cfg.image)?;
    let mask = Mask::read_pgm(&cfg.mask)?.binarize(0.5)?;
    let clf = ClassifierModel::from_json(&fs::read_to_string(&cfg.model)?)?;
    let (provider, options) = cfg.provider.build()?;
    let d = diagnose_image(&image, &mask, &provider, &clf, &options)?;
    let summary = d.summary();
    match &common.out {
        Some(_) => {
            let out = out_dir(common)?;
            write_json(&out.join("diagnosis.json"), &summary)?;
            echo(&out, &cfg)
        }
        None => {
            print_json(&summary)
        }
    }
}
