//! Spectral statistics of feature matrices under the Marchenko-Pastur null.
//!
//! The analysis pipeline is
//! `standardize → sample_covariance → eigenvalues_sym → mp_bounds → outliers → SAS`,
//! wrapped by [`spectral_report`].
//!
//! Standardization is per column with the population divisor `N`, so that
//! `trace(S) = p` exactly (minus constant columns) and the null spectrum is
//! calibrated against the MP law with unit variance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Eigenvalues within this distance below zero are round-off and clamped.
pub const NEGATIVE_CLAMP: f64 = 1e-10;

/// Largest tolerated `|S_ij - S_ji|` for input to [`eigenvalues_sym`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Result of column standardization.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub matrix: FeatureMatrix,
    /// Columns with zero spread, set to all zeros.
    pub constant_columns: Vec<usize>,
}

/// Centers each column and scales it to unit population standard deviation.
///
/// Constant columns (e.g. masked-out background) become all zeros and are
/// reported in [`Standardized::constant_columns`] rather than failing.
pub fn standardize(f: &FeatureMatrix) -> Standardized {
    let n = f.n_samples();
    let p = f.n_features();
    let mut out = f.as_slice().to_vec();
    let mut constant_columns = Vec::new();
    for j in 0..p {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for i in 0..n {
            let v = f.get(i, j);
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        let mean = sum / n as f64;
        let var = (0..n).map(|i| (f.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if lo == hi || sd <= 1e-12 * mean.abs().max(1.0) {
            constant_columns.push(j);
            for i in 0..n {
                out[i * p + j] = 0.0;
            }
            continue;
        }
        for i in 0..n {
            out[i * p + j] = (f.get(i, j) - mean) / sd;
        }
    }
    Standardized {
        matrix: FeatureMatrix::from_parts_unchecked(n, p, out),
        constant_columns,
    }
}

/// `S = (1/N) FᵀF`, without re-centering. The result is exactly symmetric.
pub fn sample_covariance(f: &FeatureMatrix) -> DMatrix<f64> {
    let n = f.n_samples();
    let fm = DMatrix::from_row_slice(n, f.n_features(), f.as_slice());
    let mut s = fm.transpose() * &fm;
    s /= n as f64;
    let p = s.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    s
}

/// Eigenvalues of a real symmetric matrix, sorted descending.
///
/// Round-off negatives with `|λ| < 1e-10 · max(1, max|S_ij|)` are clamped to 0.
pub fn eigenvalues_sym(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !s.is_square() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", s.nrows(), s.ncols())));
    }
    let p = s.nrows();
    if p == 0 {
        return Ok(Vec::new());
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::DataIntegrity("non-finite covariance entry".into()));
    }
    let scale = s.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::Contract(format!(
            "matrix is not symmetric: max |S_ij - S_ji| = {worst:e}"
        )));
    }
    let mut eig: Vec<f64> = s.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let clamp = NEGATIVE_CLAMP * scale;
    for v in &mut eig {
        if *v < 0.0 && *v > -clamp {
            *v = 0.0;
        }
    }
    let trace = s.trace();
    let total: f64 = eig.iter().sum();
    if (total - trace).abs() > 1e-8 * p as f64 * scale {
        return Err(Error::Contract(format!(
            "eigensolve failed trace check: sum {total} vs trace {trace}"
        )));
    }
    Ok(eig)
}

/// Marchenko-Pastur parameters for ratio `y = p/N` and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MPParams {
    pub aspect_ratio: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// Atom at zero, `max(0, 1 - 1/y)`.
    pub zero_mass: f64,
}

impl MPParams {
    pub fn from_ratio(y: f64) -> Self {
        let r = y.sqrt();
        Self {
            aspect_ratio: y,
            lambda_minus: (1.0 - r).powi(2),
            lambda_plus: (1.0 + r).powi(2),
            zero_mass: (1.0 - 1.0 / y).max(0.0),
        }
    }

    /// Density of the continuous part. Integrates to `1 - zero_mass`.
    pub fn density(&self, x: f64) -> f64 {
        let (a, b, y) = (self.lambda_minus, self.lambda_plus, self.aspect_ratio);
        if x <= a || x >= b || x <= 0.0 {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * y * x)
    }
}

/// Support edges `λ± = (1 ± √(p/N))²` and the zero atom.
pub fn mp_bounds(n_samples: usize, n_features: usize) -> MPParams {
    MPParams::from_ratio(n_features as f64 / n_samples as f64)
}

/// CDF of the MP law, zero atom included.
///
/// The density `√((λ₊−x)(x−λ₋)) / (2π y x)` is the standard unit-variance
/// MP density. It is integrated after the substitution
/// `x = λ₋ + (λ₊−λ₋)(1 − cos θ)/2`, which cancels both square-root edge
/// singularities (and the `1/x` pole when `λ₋ = 0`), leaving a smooth
/// integrand handled by adaptive Simpson quadrature.
pub fn mp_cdf(x: f64, mp: &MPParams) -> f64 {
    let (a, b, y) = (mp.lambda_minus, mp.lambda_plus, mp.aspect_ratio);
    let atom = if x >= 0.0 { mp.zero_mass } else { 0.0 };
    if x <= a {
        return atom;
    }
    if x >= b {
        return 1.0;
    }
    let half = 0.5 * (b - a);
    let integrand = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let xv = a + half * (1.0 - c);
        if xv <= 0.0 {
            // λ₋ = 0 limit: sin²θ / x → 4/b as θ → 0.
            return half * half * 4.0 / (b * 2.0 * std::f64::consts::PI * y);
        }
        half * half * s * s / (2.0 * std::f64::consts::PI * y * xv)
    };
    let theta_x = (1.0 - (x - a) / half).clamp(-1.0, 1.0).acos();
    let cont = adaptive_simpson(&integrand, 0.0, theta_x, 1e-12, 40);
    (atom + cont).clamp(0.0, 1.0)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Kolmogorov distance between the empirical spectral CDF and the MP CDF.
///
/// When `y > 1` the `p − N` structural zeros are dropped and the remaining
/// eigenvalues are compared against the continuous part, renormalized.
pub fn esd_ks_distance(eigenvalues: &[f64], mp: &MPParams) -> f64 {
    let mut eig: Vec<f64> = eigenvalues.to_vec();
    eig.sort_by(f64::total_cmp);
    let atom = mp.zero_mass;
    if atom > 0.0 {
        let zeros = ((atom * eig.len() as f64).round() as usize).min(eig.len());
        eig.drain(..zeros);
    }
    let n = eig.len();
    if n == 0 {
        return 0.0;
    }
    let cdf = |x: f64| {
        if atom > 0.0 {
            ((mp_cdf(x, mp) - atom) / (1.0 - atom)).clamp(0.0, 1.0)
        } else {
            mp_cdf(x, mp)
        }
    };
    let mut worst = 0.0f64;
    for (i, &x) in eig.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n as f64).abs());
        worst = worst.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    worst
}

/// One eigenvalue above the MP edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    /// Position in the descending eigenvalue list.
    pub index: usize,
    pub eigenvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Multiplicative buffer on the edge: outliers satisfy `λ > λ₊(1 + ε)`.
    /// SAS always measures excess over `λ₊` itself.
    pub edge_tolerance: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { edge_tolerance: 0.0 }
    }
}

/// Spectrum, MP fit and anomaly score for one feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    #[serde(flatten)]
    pub mp: MPParams,
    pub outliers: Vec<Outlier>,
    pub sas: f64,
    pub n_samples: usize,
    pub n_features: usize,
    #[serde(default)]
    pub edge_tolerance: f64,
    /// Non-fatal notes, e.g. constant columns zeroed during standardization.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SpectralReport {
    pub fn largest_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn has_outlier(&self) -> bool {
        !self.outliers.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Outliers `λᵢ > λ₊(1+ε)` in a descending spectrum and their score
/// `SAS = Σ (λᵢ − λ₊)`.
pub fn score_eigenvalues(eigenvalues: &[f64], mp: &MPParams, edge_tolerance: f64) -> (Vec<Outlier>, f64) {
    let cut = mp.lambda_plus * (1.0 + edge_tolerance);
    let outliers: Vec<Outlier> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > cut)
        .map(|(index, &eigenvalue)| Outlier { index, eigenvalue })
        .collect();
    // fold from +0.0: an empty f64 `sum()` yields -0.0
    let sas = outliers.iter().fold(0.0, |acc, o| acc + (o.eigenvalue - mp.lambda_plus));
    (outliers, sas)
}

/// Assembles a report from an already computed descending spectrum.
pub fn report_from_eigenvalues(
    eigenvalues: Vec<f64>,
    n_samples: usize,
    n_features: usize,
    options: &SpectralOptions,
) -> SpectralReport {
    let mp = mp_bounds(n_samples, n_features);
    let (outliers, sas) = score_eigenvalues(&eigenvalues, &mp, options.edge_tolerance);
    SpectralReport {
        eigenvalues,
        mp,
        outliers,
        sas,
        n_samples,
        n_features,
        edge_tolerance: options.edge_tolerance,
        warnings: Vec::new(),
    }
}

pub fn spectral_report(f: &FeatureMatrix) -> Result<SpectralReport> {
    spectral_report_with(f, &SpectralOptions::default())
}

pub fn spectral_report_with(f: &FeatureMatrix, options: &SpectralOptions) -> Result<SpectralReport> {
    if options.edge_tolerance < 0.0 || !options.edge_tolerance.is_finite() {
        return Err(Error::Config(format!(
            "edge tolerance must be finite and >= 0, got {}",
            options.edge_tolerance
        )));
    }
    let std = standardize(f);
    let s = sample_covariance(&std.matrix);
    let eig = eigenvalues_sym(&s)?;
    let mut report = report_from_eigenvalues(eig, f.n_samples(), f.n_features(), options);
    if !std.constant_columns.is_empty() {
        report.warnings.push(format!(
            "{} constant column(s) set to zero: {:?}",
            std.constant_columns.len(),
            std.constant_columns
        ));
    }
    Ok(report)
}
