//! Logistic diagnosis from the scalar anomaly score, trained with focal loss.
//!
//! Focal loss for a predicted probability `p` and label `y`:
//!
//! ```text
//! p_t = p (y = 1),  1 − p (y = 0)
//! α_t = α (y = 1),  1 − α (y = 0)
//! FL  = −α_t (1 − p_t)^γ ln p_t
//! ```
//!
//! Training works on the logit `z = w·sas + b` and uses the stable
//! `ln σ(z) = −softplus(−z)`, so the objective and its gradient stay
//! finite for any `(w, b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, ConfusionCounts};
use crate::rmt::SpectralReport;
use crate::rng::SeededStream;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub w: f64,
    pub b: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub threshold: f64,
}

impl ClassifierModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.w, self.b, self.alpha, self.gamma, self.threshold]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("classifier parameters must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "need alpha in (0, 1] and gamma >= 0, got alpha={} gamma={}",
                self.alpha, self.gamma
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    pub fn logit(&self, sas: f64) -> f64 {
        self.w * sas + self.b
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// One training or evaluation case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub sas: f64,
    pub label: bool,
}

impl LabeledScore {
    pub fn new(sas: f64, label: bool) -> Result<Self> {
        if !(sas >= 0.0) || !sas.is_finite() {
            return Err(Error::DataIntegrity(format!("SAS must be finite and >= 0, got {sas}")));
        }
        Ok(Self { sas, label })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn predict_prob(model: &ClassifierModel, sas: f64) -> f64 {
    sigmoid(model.logit(sas))
}

/// Focal loss of probability `p` for `label`, with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn focal_loss(p: f64, label: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (pt, at) = if label { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Focal loss as a function of the logit, with `d loss / d z`.
fn focal_on_logit(z: f64, label: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    // With s = ±z (sign chosen so p_t = σ(s)), ln p_t = −softplus(−s) and
    // 1 − p_t = σ(−s).
    let (s, at, sign) = if label { (z, alpha, 1.0) } else { (-z, 1.0 - alpha, -1.0) };
    let ln_pt = -softplus(-s);
    let pt = sigmoid(s);
    let qt = sigmoid(-s);
    let mod_ = if gamma == 0.0 { 1.0 } else { qt.powf(gamma) };
    let loss = -at * mod_ * ln_pt;
    // d/ds [−α (1−p)^γ ln p] = α (1−p)^γ [γ p ln p − (1 − p)]
    let dlds = at * mod_ * (gamma * pt * ln_pt - qt);
    (loss, sign * dlds)
}

/// Mean focal loss over `data` for logit `w·sas + b`, and its gradient
/// `(∂/∂w, ∂/∂b)`.
pub fn focal_objective(data: &[LabeledScore], w: f64, b: f64, alpha: f64, gamma: f64) -> (f64, [f64; 2]) {
    let n = data.len() as f64;
    let (mut loss, mut gw, mut gb) = (0.0, 0.0, 0.0);
    for d in data {
        let (l, dz) = focal_on_logit(w * d.sas + b, d.label, alpha, gamma);
        loss += l;
        gw += dz * d.sas;
        gb += dz;
    }
    (loss / n, [gw / n, gb / n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub steps: usize,
    /// Mini-batch size; `None` means full-batch descent.
    pub batch: Option<usize>,
    /// Drives mini-batch sampling. Full-batch descent draws nothing.
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            lr: 0.5,
            steps: 2000,
            batch: None,
            seed: 7,
        }
    }
}

/// Fits `(w, b)` by gradient descent on the mean focal loss, then picks the
/// F1-maximizing threshold over the unique training probabilities (ties go
/// to the smaller threshold).
///
/// The score is standardized internally (`z = (sas − μ)/σ`) and the fitted
/// coefficients are mapped back, which makes predictions invariant to the
/// scale of the score. Descent starts from `w = b = 0`.
pub fn train_classifier(data: &[LabeledScore], hyper: &ClassifierHyper) -> Result<ClassifierModel> {
    let positives = data.iter().filter(|d| d.label).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Contract("training data must contain both labels".into()));
    }
    if !(hyper.alpha > 0.0 && hyper.alpha <= 1.0) || hyper.gamma < 0.0 || !(hyper.lr >= 0.0) {
        return Err(Error::Config(format!("invalid classifier hyper-parameters {hyper:?}")));
    }
    if let Some(d) = data.iter().find(|d| !(d.sas >= 0.0) || !d.sas.is_finite()) {
        return Err(Error::DataIntegrity(format!("invalid SAS {}", d.sas)));
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|d| d.sas).sum::<f64>() / n;
    let sd = (data.iter().map(|d| (d.sas - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let scaled: Vec<LabeledScore> = data
        .iter()
        .map(|d| LabeledScore {
            sas: (d.sas - mean) / scale,
            label: d.label,
        })
        .collect();

    let mut stream = SeededStream::new(hyper.seed);
    let mut batch_buf = Vec::new();
    let (mut w, mut b) = (0.0, 0.0);
    for step in 0..hyper.steps {
        let slice: &[LabeledScore] = match hyper.batch {
            Some(k) if k > 0 && k < scaled.len() => {
                batch_buf.clear();
                batch_buf.extend((0..k).map(|_| scaled[stream.below(scaled.len())]));
                &batch_buf
            }
            _ => &scaled,
        };
        let (loss, [gw, gb]) = focal_objective(slice, w, b, hyper.alpha, hyper.gamma);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        w -= hyper.lr * gw;
        b -= hyper.lr * gb;
    }
    // back to raw-score coordinates: w·(sas − μ)/σ + b
    let mut model = ClassifierModel {
        w: w / scale,
        b: b - w * mean / scale,
        alpha: hyper.alpha,
        gamma: hyper.gamma,
        threshold: 0.5,
    };
    model.threshold = best_f1_threshold(&model, data);
    Ok(model)
}

/// F1-maximizing threshold among the unique predicted probabilities.
fn best_f1_threshold(model: &ClassifierModel, data: &[LabeledScore]) -> f64 {
    let scored: Vec<(f64, bool)> = data.iter().map(|d| (predict_prob(model, d.sas), d.label)).collect();
    let mut candidates: Vec<f64> = scored.iter().map(|s| s.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, 0.5);
    for &tau in &candidates {
        let f1 = classification_metrics(&ConfusionCounts::from_scores(&scored, tau))
            .map(|m| m.f1)
            .unwrap_or(0.0);
        // ascending sweep + strict improvement keeps the smaller τ on ties
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    best.1.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub label: bool,
    pub probability: f64,
    pub sas: f64,
}

/// Label 1 iff `σ(w·sas + b) ≥ τ`.
pub fn diagnose(model: &ClassifierModel, report: &SpectralReport) -> Diagnosis {
    diagnose_score(model, report.sas)
}

pub fn diagnose_score(model: &ClassifierModel, sas: f64) -> Diagnosis {
    let probability = predict_prob(model, sas);
    Diagnosis {
        label: probability >= model.threshold,
        probability,
        sas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmt::{report_from_eigenvalues, SpectralOptions};

    fn model(w: f64, b: f64) -> ClassifierModel {
        ClassifierModel { w, b, alpha: 0.25, gamma: 2.0, threshold: 0.5 }
    }

    fn overlapping(seed: u64, n_neg: usize, n_pos: usize) -> Vec<LabeledScore> {
        let mut s = SeededStream::new(seed);
        let mut out = Vec::new();
        for _ in 0..n_neg {
            out.push(LabeledScore::new((0.3 + 0.3 * s.gaussian()).abs(), false).unwrap());
        }
        for _ in 0..n_pos {
            out.push(LabeledScore::new((1.0 + 0.5 * s.gaussian()).abs(), true).unwrap());
        }
        out
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_prob(&model(0.0, 0.0), 17.0), 0.5);
        assert_eq!(predict_prob(&model(1.0, 0.0), 0.0), 0.5);
        assert_eq!(predict_prob(&model(1.0, -2.0), 2.0), 0.5);
        assert!(predict_prob(&model(1.0, 0.0), 800.0) <= 1.0);
        assert!(predict_prob(&model(1.0, 0.0), -800.0) >= 0.0);
    }

    #[test]
    fn focal_examples() {
        assert!((focal_loss(0.5, true, 1.0, 0.0) - 2f64.ln()).abs() < 1e-12);
        let want = -0.25 * 0.1f64.powi(2) * 0.9f64.ln();
        assert!((focal_loss(0.9, true, 0.25, 2.0) - want).abs() < 1e-15);
        assert!((want - 2.634e-4).abs() < 1e-7);
        // y = 0 uses 1 − α and 1 − p
        assert!((focal_loss(0.1, false, 0.75, 2.0) - want).abs() < 1e-15);
    }

    #[test]
    fn focal_properties() {
        let mut prev = f64::INFINITY;
        for k in 1..1000 {
            let pt = k as f64 / 1000.0;
            let l = focal_loss(pt, true, 0.25, 2.0);
            assert!(l >= 0.0 && l < prev);
            prev = l;
            // γ = 0 is α-weighted cross-entropy
            assert!((focal_loss(pt, true, 0.25, 0.0) + 0.25 * pt.ln()).abs() < 1e-12);
            assert!((focal_loss(pt, false, 0.5, 0.0) + 0.5 * (1.0 - pt).ln()).abs() < 1e-12);
        }
        assert!(focal_loss(1.0 - 1e-9, true, 0.25, 2.0) < 1e-12);
        // modulating factor ratio is exactly (1 − p_t)^γ
        let ratio = focal_loss(0.9, true, 0.25, 2.0) / focal_loss(0.9, true, 0.25, 0.0);
        assert!((ratio - 0.01).abs() < 1e-15);
    }

    #[test]
    fn logit_form_matches_probability_form() {
        for &z in &[-4.0, -0.3, 0.0, 0.7, 3.0] {
            for &label in &[true, false] {
                let (l, _) = focal_on_logit(z, label, 0.3, 1.5);
                assert!((l - focal_loss(sigmoid(z), label, 0.3, 1.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = overlapping(3, 40, 10);
        let mut s = SeededStream::new(4);
        for _ in 0..10 {
            let (w, b) = (2.0 * s.gaussian(), 2.0 * s.gaussian());
            let (_, g) = focal_objective(&data, w, b, 0.25, 2.0);
            let h = 1e-6;
            let fw = (focal_objective(&data, w + h, b, 0.25, 2.0).0 - focal_objective(&data, w - h, b, 0.25, 2.0).0)
                / (2.0 * h);
            let fb = (focal_objective(&data, w, b + h, 0.25, 2.0).0 - focal_objective(&data, w, b - h, 0.25, 2.0).0)
                / (2.0 * h);
            assert!((fw - g[0]).abs() / g[0].abs().max(1e-8) < 1e-6, "{fw} vs {}", g[0]);
            assert!((fb - g[1]).abs() / g[1].abs().max(1e-8) < 1e-6, "{fb} vs {}", g[1]);
        }
    }

    #[test]
    fn separable_data_reaches_perfect_f1() {
        let mut data: Vec<LabeledScore> = (0..40).map(|_| LabeledScore::new(0.0, false).unwrap()).collect();
        data.extend((0..10).map(|k| LabeledScore::new(1.0 + k as f64 * 0.3, true).unwrap()));
        let m = train_classifier(&data, &ClassifierHyper::default()).unwrap();
        let scored: Vec<(f64, bool)> = data.iter().map(|d| (predict_prob(&m, d.sas), d.label)).collect();
        let f1 = classification_metrics(&ConfusionCounts::from_scores(&scored, m.threshold)).unwrap().f1;
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn flipped_labels_flip_the_weight() {
        let data = overlapping(5, 30, 20);
        let flipped: Vec<LabeledScore> = data.iter().map(|d| LabeledScore { label: !d.label, ..*d }).collect();
        let hyper = ClassifierHyper { alpha: 0.5, ..ClassifierHyper::default() };
        let a = train_classifier(&data, &hyper).unwrap();
        let b = train_classifier(&flipped, &hyper).unwrap();
        assert!(a.w > 0.0 && b.w < 0.0);
        assert!((a.w + b.w).abs() < 1e-6);
        assert!((a.b + b.b).abs() < 1e-6);
    }

    #[test]
    fn rescaled_scores_give_same_predictions() {
        let data = overlapping(6, 40, 10);
        let hyper = ClassifierHyper::default();
        let base = train_classifier(&data, &hyper).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let scaled: Vec<LabeledScore> = data.iter().map(|d| LabeledScore { sas: d.sas * c, ..*d }).collect();
            let m = train_classifier(&scaled, &hyper).unwrap();
            for (d, s) in data.iter().zip(&scaled) {
                assert!((predict_prob(&base, d.sas) - predict_prob(&m, s.sas)).abs() < 1e-3);
            }
            assert!((m.w * c - base.w).abs() < 1e-6 * base.w.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_single_class() {
        let data = vec![LabeledScore::new(0.1, false).unwrap(); 5];
        assert!(matches!(train_classifier(&data, &ClassifierHyper::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn minibatch_training_is_seeded() {
        let data = overlapping(7, 40, 10);
        let hyper = ClassifierHyper { batch: Some(8), steps: 300, ..ClassifierHyper::default() };
        assert_eq!(train_classifier(&data, &hyper).unwrap(), train_classifier(&data, &hyper).unwrap());
    }

    #[test]
    fn diagnose_rules() {
        let m = ClassifierModel { w: 2.0, b: -3.0, alpha: 0.25, gamma: 2.0, threshold: 0.5 };
        let quiet = report_from_eigenvalues(vec![1.0, 0.5], 100, 2, &SpectralOptions::default());
        let d = diagnose(&m, &quiet);
        assert!(!d.label && d.sas == 0.0);
        let mut last = false;
        for k in 0..100 {
            let d = diagnose_score(&m, k as f64 * 0.05);
            assert!(!(last && !d.label), "label fell back to 0");
            last = d.label;
        }
        assert!(last);
    }

    #[test]
    fn threshold_semantics_under_monotone_transform() {
        // Labels depend only on the order of the decision value relative to τ.
        let m = ClassifierModel { w: 1.3, b: -0.8, alpha: 0.25, gamma: 2.0, threshold: 0.62 };
        let g = |p: f64| (5.0 * p).exp() + p;
        for k in 0..200 {
            let sas = k as f64 * 0.02;
            let p = predict_prob(&m, sas);
            assert_eq!(diagnose_score(&m, sas).label, g(p) >= g(m.threshold));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = model(1.5, -0.25);
        assert_eq!(ClassifierModel::from_json(&m.to_json()).unwrap(), m);
        let bad = ClassifierModel { threshold: 1.0, ..m };
        assert!(ClassifierModel::from_json(&bad.to_json()).is_err());
    }
}
