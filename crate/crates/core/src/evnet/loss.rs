use super::Tensor5;
use crate::volume::LabelMask;
use crate::{Error, Result};

/// Stabilizer in the soft-Dice denominator.
pub const SOFT_DICE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean of `per_example`.
    pub value: f64,
    pub per_example: Vec<f64>,
}

/// Stack masks into a `(batch, 1, x, y, z)` target tensor.
pub fn masks_to_target(masks: &[LabelMask]) -> Result<Tensor5> {
    let items: Vec<Tensor5> = masks
        .iter()
        .map(|m| Tensor5::from_array3(&m.data().mapv(f64::from)))
        .collect();
    Tensor5::stack(&items)
}

fn check(pred: &Tensor5, target: &Tensor5) -> Result<()> {
    let (p, t) = (pred.shape(), target.shape());
    if p[1] < 2 || t[1] != 1 || p[0] != t[0] || p[2..] != t[2..] {
        return Err(Error::Shape(format!(
            "prediction {p:?} and target {t:?} are incompatible"
        )));
    }
    Ok(())
}

/// Numerator and denominator of the per-example Dice ratio.
fn terms(pred: &Tensor5, target: &Tensor5, b: usize) -> (f64, f64) {
    let p = pred.plane(b, 1);
    let g = target.plane(b, 0);
    let mut pg = 0.0;
    let mut pp = 0.0;
    let mut gg = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        pg += pi * gi;
        pp += pi * pi;
        gg += gi * gi;
    }
    (2.0 * pg, pp + gg + SOFT_DICE_EPS)
}

/// `1 − 2Σpg / (Σp² + Σg² + ε)` on the foreground channel, averaged over the batch.
pub fn soft_dice_loss(pred: &Tensor5, target: &Tensor5) -> Result<LossReport> {
    check(pred, target)?;
    let per_example: Vec<f64> = (0..pred.batch())
        .map(|b| {
            let (n, d) = terms(pred, target, b);
            1.0 - n / d
        })
        .collect();
    let value = per_example.iter().sum::<f64>() / per_example.len().max(1) as f64;
    Ok(LossReport { value, per_example })
}

/// Gradient of [`soft_dice_loss`]'s value w.r.t. `pred` (zero on non-foreground channels).
pub fn soft_dice_grad(pred: &Tensor5, target: &Tensor5) -> Result<Tensor5> {
    check(pred, target)?;
    let mut grad = Tensor5::zeros(pred.shape());
    let scale = 1.0 / pred.batch() as f64;
    for b in 0..pred.batch() {
        let (n, d) = terms(pred, target, b);
        let p = pred.plane(b, 1).to_vec();
        let g = target.plane(b, 0);
        for ((o, &pi), &gi) in grad.plane_mut(b, 1).iter_mut().zip(&p).zip(g) {
            *o = -scale * (2.0 * gi * d - n * 2.0 * pi) / (d * d);
        }
    }
    Ok(grad)
}
