//! Synthetic null and spiked feature ensembles.
//!
//! Under the null, rows are i.i.d. `N(0, I_p)`. Under the spiked
//! alternative each row is `w + Σₖ √(ℓₖ − 1) gₖ uₖ` with `w ~ N(0, I_p)`,
//! `gₖ ~ N(0, 1)` and orthonormal directions `uₖ`, which gives population
//! covariance `I + Σₖ (ℓₖ − 1) uₖuₖᵀ`.
//!
//! Draw order is fixed: the noise block first (row-major), then random
//! directions (if not supplied), then the per-row signal coefficients.
//! With no spikes the stream is therefore identical to [`gen_noise`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rmt::{spectral_report_with, SpectralOptions, SpectralReport};
use crate::rng::{trial_seed, SeededStream};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeSpec {
    /// Population eigenvalues `ℓₖ > 1` of the spiked directions.
    pub strengths: Vec<f64>,
    /// Orthonormal directions, one per strength. Drawn at random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
}

impl SpikeSpec {
    pub fn new(strengths: Vec<f64>) -> Self {
        Self {
            strengths,
            directions: None,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if let Some(bad) = self.strengths.iter().find(|&&l| !(l > 1.0) || !l.is_finite()) {
            return Err(Error::Config(format!("spike strength must be > 1, got {bad}")));
        }
        if self.strengths.len() > p {
            return Err(Error::Config(format!(
                "{} spikes exceed feature dimension {p}",
                self.strengths.len()
            )));
        }
        if let Some(dirs) = &self.directions {
            if dirs.len() != self.strengths.len() {
                return Err(Error::Config("one direction per spike strength required".into()));
            }
            for (a, u) in dirs.iter().enumerate() {
                if u.len() != p {
                    return Err(Error::Shape(format!("direction {a} has length {}, expected {p}", u.len())));
                }
                for (b, v) in dirs.iter().enumerate().skip(a) {
                    let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    if (dot - want).abs() > 1e-8 {
                        return Err(Error::Config(format!(
                            "directions {a},{b} not orthonormal: <u,v> = {dot}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_samples: usize,
    pub n_features: usize,
    #[serde(default)]
    pub spike: Option<SpikeSpec>,
    pub seed: u64,
    pub n_trials: usize,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.n_features < 1 || self.n_trials < 1 {
            return Err(Error::Config(format!(
                "ensemble needs N >= 2, p >= 1, trials >= 1 (got N={}, p={}, trials={})",
                self.n_samples, self.n_features, self.n_trials
            )));
        }
        if let Some(spike) = &self.spike {
            spike.validate(self.n_features)?;
        }
        Ok(())
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.n_features as f64 / self.n_samples as f64
    }

    /// Copy of this config targeting trial `index`.
    pub fn for_trial(&self, index: usize) -> Self {
        Self {
            seed: trial_seed(self.seed, index as u64),
            n_trials: 1,
            ..self.clone()
        }
    }
}

fn noise_block(n: usize, p: usize, stream: &mut SeededStream) -> Vec<f64> {
    (0..n * p).map(|_| stream.gaussian()).collect()
}

/// `N × p` i.i.d. standard normal entries from `cfg.seed`.
pub fn gen_noise(cfg: &EnsembleConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let mut stream = SeededStream::new(cfg.seed);
    let data = noise_block(cfg.n_samples, cfg.n_features, &mut stream);
    FeatureMatrix::from_rows(cfg.n_samples, cfg.n_features, data)
}

/// Draws `k` orthonormal `p`-vectors (Gaussian draws, Gram-Schmidt).
pub fn random_orthonormal(k: usize, p: usize, stream: &mut SeededStream) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..p).map(|_| stream.gaussian()).collect();
        // two passes of classical Gram-Schmidt for stability
        for _ in 0..2 {
            for u in &out {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

/// Rows from `N(0, I + Σ (ℓₖ − 1) uₖuₖᵀ)`; reproducible under `cfg.seed`.
pub fn gen_spiked(cfg: &EnsembleConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let spike = cfg
        .spike
        .as_ref()
        .ok_or_else(|| Error::Config("gen_spiked requires a spike specification".into()))?;
    let (n, p) = (cfg.n_samples, cfg.n_features);
    let mut stream = SeededStream::new(cfg.seed);
    let mut data = noise_block(n, p, &mut stream);
    if spike.strengths.is_empty() {
        return FeatureMatrix::from_rows(n, p, data);
    }
    let directions = match &spike.directions {
        Some(d) => d.clone(),
        None => random_orthonormal(spike.strengths.len(), p, &mut stream),
    };
    let gains: Vec<f64> = spike.strengths.iter().map(|l| (l - 1.0).sqrt()).collect();
    for row in data.chunks_exact_mut(p) {
        for (u, gain) in directions.iter().zip(&gains) {
            let g = gain * stream.gaussian();
            row.iter_mut().zip(u).for_each(|(x, ui)| *x += g * ui);
        }
    }
    FeatureMatrix::from_rows(n, p, data)
}

/// Generates the matrix `cfg` describes: spiked if a spike is present.
pub fn generate(cfg: &EnsembleConfig) -> Result<FeatureMatrix> {
    match cfg.spike {
        Some(_) => gen_spiked(cfg),
        None => gen_noise(cfg),
    }
}

/// Asymptotic location `ℓ(1 + y/(ℓ − 1))` of the sample eigenvalue produced
/// by a population spike `ℓ`, or `None` at or below the BBP threshold
/// `1 + √y`, where the spike is absorbed into the bulk.
pub fn bbp_oracle(strength: f64, aspect_ratio: f64) -> Option<f64> {
    if strength > 1.0 + aspect_ratio.sqrt() {
        Some(strength * (1.0 + aspect_ratio / (strength - 1.0)))
    } else {
        None
    }
}

/// Trial `index` of an ensemble: generation under the derived seed, then
/// spectral analysis.
pub fn run_trial(cfg: &EnsembleConfig, index: usize, options: &SpectralOptions) -> Result<SpectralReport> {
    let f = generate(&cfg.for_trial(index))?;
    spectral_report_with(&f, options)
}

/// All `cfg.n_trials` reports, in trial order.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<Vec<SpectralReport>> {
    run_ensemble_with(cfg, &SpectralOptions::default())
}

pub fn run_ensemble_with(cfg: &EnsembleConfig, options: &SpectralOptions) -> Result<Vec<SpectralReport>> {
    cfg.validate()?;
    (0..cfg.n_trials).map(|i| run_trial(cfg, i, options)).collect()
}
