//! Image-level diagnosis: purify the image with the mask, extract per-patch
//! features, score the spectrum and classify.
//!
//! The pretrained visual encoder is replaced by [`PatchProjector`], a fixed
//! seeded linear projection of flattened patches. Its rows are
//! orthonormalized so that i.i.d. pixel noise maps to isotropic features,
//! keeping the Marchenko-Pastur null exact for healthy tissue.

use serde::{Deserialize, Serialize};

use crate::classifier::{diagnose, ClassifierModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::grid::{Grid, Mask};
use crate::rmt::{spectral_report_with, Outlier, SpectralOptions, SpectralReport};
use crate::rng::{trial_seed, SeededStream};

/// `X ⊙ M`: zero everything outside the mask.
pub fn purify(image: &Grid, mask: &Mask) -> Result<Grid> {
    image.zip_map(mask.grid(), |x, m| x * m)
}

/// Maps a purified image and its mask to an `N × p` feature matrix.
pub trait FeatureProvider {
    fn dim(&self) -> usize;
    fn features(&self, image: &Grid, mask: &Mask) -> Result<FeatureMatrix>;
}

/// Random-projection patch encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchProjector {
    patch_size: usize,
    p_out: usize,
    seed: u64,
    /// `p_out × s²`, row-major.
    projection: Vec<f64>,
}

impl PatchProjector {
    /// Draws a `p_out × s²` matrix with `N(0, 1/s²)` entries; when
    /// `p_out ≤ s²` its rows are then orthonormalized (Gram-Schmidt in
    /// draw order).
    pub fn new(patch_size: usize, p_out: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 || p_out == 0 {
            return Err(Error::Config("patch size and output dimension must be positive".into()));
        }
        let d = patch_size * patch_size;
        let mut s = SeededStream::new(seed);
        let sd = 1.0 / patch_size as f64;
        let mut rows: Vec<Vec<f64>> = (0..p_out).map(|_| (0..d).map(|_| sd * s.gaussian()).collect()).collect();
        if p_out <= d {
            for k in 0..p_out {
                for _ in 0..2 {
                    for m in 0..k {
                        let dot: f64 = rows[k].iter().zip(&rows[m]).map(|(a, b)| a * b).sum();
                        let (head, tail) = rows.split_at_mut(k);
                        tail[0].iter_mut().zip(&head[m]).for_each(|(x, y)| *x -= dot * y);
                    }
                }
                let norm = rows[k].iter().map(|x| x * x).sum::<f64>().sqrt();
                rows[k].iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(Self {
            patch_size,
            p_out,
            seed,
            projection: rows.concat(),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }
}

impl FeatureProvider for PatchProjector {
    fn dim(&self) -> usize {
        self.p_out
    }

    fn features(&self, image: &Grid, mask: &Mask) -> Result<FeatureMatrix> {
        image.ensure_same_shape(mask.grid(), "image/mask")?;
        let s = self.patch_size;
        let (h, w) = image.shape();
        if h % s != 0 || w % s != 0 {
            return Err(Error::Config(format!("{h}x{w} image is not divisible into {s}x{s} patches")));
        }
        let focus = purify(image, mask)?;
        let d = s * s;
        let mut flat = vec![0.0; d];
        let mut rows = Vec::new();
        let mut kept = 0;
        for pi in 0..h / s {
            for pj in 0..w / s {
                let mut covered = false;
                for a in 0..s {
                    for b in 0..s {
                        let (i, j) = (pi * s + a, pj * s + b);
                        covered |= mask.grid().get(i, j) > 0.0;
                        flat[a * s + b] = focus.get(i, j);
                    }
                }
                if !covered {
                    continue;
                }
                kept += 1;
                for r in 0..self.p_out {
                    let row = &self.projection[r * d..(r + 1) * d];
                    rows.push(row.iter().zip(&flat).map(|(x, y)| x * y).sum::<f64>());
                }
            }
        }
        if kept < 2 {
            return Err(Error::TooSmallRegion { kept });
        }
        FeatureMatrix::from_rows(kept, self.p_out, rows)
    }
}

/// Tiles into `s × s` patches, keeps those with any mask coverage and
/// projects each to `p_out` features.
pub fn patch_features(image: &Grid, mask: &Mask, patch_size: usize, p_out: usize, seed: u64) -> Result<FeatureMatrix> {
    PatchProjector::new(patch_size, p_out, seed)?.features(image, mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDiagnosis {
    pub label: bool,
    pub probability: f64,
    pub sas: f64,
    pub report: SpectralReport,
}

/// Wire form of an image diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub label: u8,
    pub probability: f64,
    pub sas: f64,
    pub lambda_plus: f64,
    pub outliers: Vec<Outlier>,
    pub n_patches: usize,
}

impl ImageDiagnosis {
    pub fn summary(&self) -> DiagnosisSummary {
        DiagnosisSummary {
            label: self.label as u8,
            probability: self.probability,
            sas: self.sas,
            lambda_plus: self.report.mp.lambda_plus,
            outliers: self.report.outliers.clone(),
            n_patches: self.report.n_samples,
        }
    }
}

/// Spectral report of the masked image region.
pub fn region_report<P: FeatureProvider + ?Sized>(
    image: &Grid,
    mask: &Mask,
    provider: &P,
    options: &SpectralOptions,
) -> Result<SpectralReport> {
    let features = provider.features(image, mask)?;
    spectral_report_with(&features, options)
}

/// purify → features → spectral report → classifier.
pub fn diagnose_image<P: FeatureProvider + ?Sized>(
    image: &Grid,
    mask: &Mask,
    provider: &P,
    clf: &ClassifierModel,
    options: &SpectralOptions,
) -> Result<ImageDiagnosis> {
    clf.validate()?;
    let report = region_report(image, mask, provider, options)?;
    let d = diagnose(clf, &report);
    Ok(ImageDiagnosis {
        label: d.label,
        probability: d.probability,
        sas: d.sas,
        report,
    })
}

/// Parameters of the synthetic radiograph-like cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseSpec {
    /// Square image side, a multiple of `patch_size`.
    pub size: usize,
    pub patch_size: usize,
    /// Mask side range, in patches.
    pub region_min: usize,
    pub region_max: usize,
    /// Mean intensity and pixel noise of the tissue inside the region.
    pub tissue_level: f64,
    pub tissue_noise: f64,
    /// Amplitude of the injected stripe pattern in diseased cases.
    pub stripe_amp: f64,
    /// Stripe periods per patch.
    pub stripe_periods: usize,
}

impl Default for CaseSpec {
    fn default() -> Self {
        Self {
            size: 224,
            patch_size: 16,
            region_min: 9,
            region_max: 13,
            tissue_level: 0.5,
            tissue_noise: 0.08,
            stripe_amp: 0.1,
            stripe_periods: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchRect {
    pub fn contains(&self, pr: usize, pc: usize) -> bool {
        pr >= self.row && pr < self.row + self.rows && pc >= self.col && pc < self.col + self.cols
    }

    pub fn to_mask(&self, size: usize, patch: usize) -> Mask {
        let g = Grid::from_fn(size, size, |i, j| if self.contains(i / patch, j / patch) { 1.0 } else { 0.0 });
        Mask::new(g).expect("binary")
    }
}

/// A synthetic case: image, region mask and (for diseased cases) the
/// patch rectangle that carries the injected signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub image: Grid,
    pub mask: Mask,
    pub region: PatchRect,
    pub lesion: Option<PatchRect>,
}

impl CaseSpec {
    pub fn validate(&self) -> Result<()> {
        let grid = self.size / self.patch_size.max(1);
        if self.patch_size == 0 || self.size % self.patch_size != 0 {
            return Err(Error::Config(format!("size {} not a multiple of patch {}", self.size, self.patch_size)));
        }
        if self.region_min < 2 || self.region_min > self.region_max || self.region_max > grid {
            return Err(Error::Config(format!(
                "region range {}..={} invalid for a {grid}-patch grid",
                self.region_min, self.region_max
            )));
        }
        Ok(())
    }
}

/// Generates one case. Healthy tissue is i.i.d. Gaussian noise around a
/// constant level. Diseased cases add, on a sub-rectangle of the region,
/// a vertical stripe pattern `A·cos(2π k x/s + φ)` with a fresh random
/// phase per patch: a rank-2 structure shared by those patches. Outside
/// the region the image holds smooth bright background with its own noise.
pub fn gen_case(spec: &CaseSpec, diseased: bool, seed: u64) -> Result<SyntheticCase> {
    spec.validate()?;
    let mut s = SeededStream::new(seed);
    let (n, ps) = (spec.size, spec.patch_size);
    let grid = n / ps;
    let span = spec.region_max - spec.region_min + 1;
    let rows = spec.region_min + s.below(span);
    let cols = spec.region_min + s.below(span);
    let region = PatchRect {
        row: s.below(grid - rows + 1),
        col: s.below(grid - cols + 1),
        rows,
        cols,
    };
    let lesion = if diseased {
        let lr = (rows / 2).max(1) + s.below(rows - rows / 2);
        let lc = (cols / 2).max(1) + s.below(cols - cols / 2);
        Some(PatchRect {
            row: region.row + s.below(rows - lr + 1),
            col: region.col + s.below(cols - lc + 1),
            rows: lr,
            cols: lc,
        })
    } else {
        None
    };
    let phases: Vec<f64> = (0..grid * grid).map(|_| s.uniform_range(0.0, std::f64::consts::TAU)).collect();
    let mut image = Grid::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (pr, pc) = (i / ps, j / ps);
            let v = if region.contains(pr, pc) {
                let mut v = spec.tissue_level + spec.tissue_noise * s.gaussian();
                if lesion.is_some_and(|l| l.contains(pr, pc)) {
                    let x = (j % ps) as f64 / ps as f64;
                    let phase = phases[pr * grid + pc];
                    v += spec.stripe_amp
                        * (std::f64::consts::TAU * spec.stripe_periods as f64 * x + phase).cos();
                }
                v
            } else {
                let y = i as f64 / n as f64;
                0.7 + 0.2 * (3.0 * std::f64::consts::TAU * y).sin() + 0.03 * s.gaussian()
            };
            image.set(i, j, v.clamp(0.0, 1.0));
        }
    }
    Ok(SyntheticCase {
        image,
        mask: region.to_mask(n, ps),
        region,
        lesion,
    })
}

/// `n` cases with healthy:diseased ratio `ratio:1`; case `i` is seeded by
/// `trial_seed(seed, i)`. Diseased cases occupy every `(ratio+1)`-th slot.
pub fn gen_case_set(spec: &CaseSpec, n: usize, ratio: usize, seed: u64) -> Result<Vec<(SyntheticCase, bool)>> {
    (0..n)
        .map(|i| {
            let diseased = i % (ratio + 1) == ratio;
            gen_case(spec, diseased, trial_seed(seed, i as u64)).map(|c| (c, diseased))
        })
        .collect()
}
