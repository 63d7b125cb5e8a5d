use crate::error::Result;
use crate::grid::{Grid, Mask};

pub const DICE_EPS: f64 = 1e-6;
pub const BCE_CLAMP: f64 = 1e-7;

/// Hybrid segmentation loss `L_Dice + λ_bce · L_BCE` on a soft prediction.
///
/// `L_Dice = 1 − (2Σpg + ε)/(Σp + Σg + ε)` with `ε = 1e-6`, and `L_BCE` is
/// the pixel-mean binary cross-entropy. Predictions are clamped to
/// `[1e-7, 1 − 1e-7]` before both terms.
pub fn seg_loss(pred: &Mask, gt: &Mask, lambda_bce: f64) -> Result<f64> {
    Ok(seg_loss_with_grad(pred, gt, lambda_bce)?.0)
}

/// [`seg_loss`] and its gradient with respect to each prediction pixel.
/// The gradient is zero where the clamp is active.
pub fn seg_loss_with_grad(pred: &Mask, gt: &Mask, lambda_bce: f64) -> Result<(f64, Grid)> {
    pred.grid().ensure_same_shape(gt.grid(), "segmentation loss")?;
    let n = pred.as_slice().len() as f64;
    let p: Vec<f64> = pred.as_slice().iter().map(|v| v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)).collect();
    let g = gt.as_slice();
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let denom = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    let dice_loss = 1.0 - num / denom;
    let bce = -p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| gi * pi.ln() + (1.0 - gi) * (1.0 - pi).ln())
        .sum::<f64>()
        / n;
    let grad: Vec<f64> = p
        .iter()
        .zip(g)
        .zip(pred.as_slice())
        .map(|((&pi, &gi), &raw)| {
            if raw < BCE_CLAMP || raw > 1.0 - BCE_CLAMP {
                return 0.0;
            }
            let d_dice = -(2.0 * gi * denom - num) / (denom * denom);
            let d_bce = -(gi / pi - (1.0 - gi) / (1.0 - pi)) / n;
            d_dice + lambda_bce * d_bce
        })
        .collect();
    let (h, w) = pred.shape();
    Ok((dice_loss + lambda_bce * bce, Grid::new(h, w, grad)?))
}
