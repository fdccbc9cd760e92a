//! Class-weighted pixel cross-entropy and argmax decoding.

use crate::error::{Error, Result};
use crate::model::{ClassProbabilityMap, Grid, LabelMap, PixelMask};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Weighted mean negative log-likelihood over unmasked pixels.
    pub loss: f64,
    /// Sum of per-pixel weights over unmasked pixels (the normalizer).
    pub weight_sum: f64,
    /// Gradient of `loss` with respect to the softmax logits, class-major.
    pub grad_logits: Vec<f64>,
}

/// Unnormalized per-pixel terms `weight[label] * -ln(prob[label])`, row-major;
/// ignored pixels are 0.
pub fn weighted_nll_terms(
    probs: &ClassProbabilityMap,
    labels: &LabelMap,
    weights: &[f64],
    ignore: Option<&PixelMask>,
) -> Result<Vec<f64>> {
    check_inputs(probs, labels, weights, ignore)?;
    let n = labels.as_slice().len();
    Ok((0..n)
        .map(|i| {
            if ignore.is_some_and(|m| m.as_slice()[i]) {
                return 0.0;
            }
            let l = labels.as_slice()[i] as usize;
            let p = probs.class_plane(l)[i].max(PROB_FLOOR);
            -weights[l] * p.ln()
        })
        .collect())
}

/// Loss is `sum(w[label] * -ln p[label]) / sum(w[label])` over pixels not in
/// `ignore`. The logit gradient at pixel `i` is `w_i (p_i - onehot_i) / W`.
pub fn weighted_cross_entropy(
    probs: &ClassProbabilityMap,
    labels: &LabelMap,
    weights: &[f64],
    ignore: Option<&PixelMask>,
) -> Result<LossOutput> {
    let terms = weighted_nll_terms(probs, labels, weights, ignore)?;
    let n = terms.len();
    let k = probs.num_classes();
    let pixel_weight = |i: usize| {
        if ignore.is_some_and(|m| m.as_slice()[i]) {
            0.0
        } else {
            weights[labels.as_slice()[i] as usize]
        }
    };
    let weight_sum: f64 = (0..n).map(pixel_weight).sum();
    let mut grad_logits = vec![0.0; k * n];
    if weight_sum == 0.0 {
        return Ok(LossOutput {
            loss: 0.0,
            weight_sum,
            grad_logits,
        });
    }
    let loss = terms.iter().sum::<f64>() / weight_sum;
    for i in 0..n {
        let wi = pixel_weight(i);
        if wi == 0.0 {
            continue;
        }
        let label = labels.as_slice()[i] as usize;
        let scale = wi / weight_sum;
        for c in 0..k {
            let target = if c == label { 1.0 } else { 0.0 };
            grad_logits[c * n + i] = scale * (probs.class_plane(c)[i] - target);
        }
    }
    Ok(LossOutput {
        loss,
        weight_sum,
        grad_logits,
    })
}

fn check_inputs(
    probs: &ClassProbabilityMap,
    labels: &LabelMap,
    weights: &[f64],
    ignore: Option<&PixelMask>,
) -> Result<()> {
    if (probs.height(), probs.width()) != labels.shape() {
        return Err(Error::Shape(format!(
            "probabilities {}x{} vs labels {}x{}",
            probs.height(),
            probs.width(),
            labels.height(),
            labels.width()
        )));
    }
    if let Some(m) = ignore {
        if m.shape() != labels.shape() {
            return Err(Error::Shape("ignore mask shape differs from labels".into()));
        }
    }
    if weights.len() != probs.num_classes() {
        return Err(Error::Shape(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.num_classes()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::Config("class weights must be positive and finite".into()));
    }
    if let Some(&l) = labels.as_slice().iter().find(|&&l| l as usize >= probs.num_classes()) {
        return Err(Error::Shape(format!("label {l} out of range")));
    }
    Ok(())
}

/// Per-pixel argmax; ties go to the smaller class index.
pub fn predict_labels(probs: &ClassProbabilityMap) -> LabelMap {
    let (h, w) = (probs.height(), probs.width());
    let n = h * w;
    let mut best = vec![0u8; n];
    let mut best_p = probs.class_plane(0).to_vec();
    for k in 1..probs.num_classes() {
        for (i, &p) in probs.class_plane(k).iter().enumerate() {
            if p > best_p[i] {
                best_p[i] = p;
                best[i] = k as u8;
            }
        }
    }
    Grid::from_vec(h, w, best).expect("label grid matches probability map")
}
