//! Training objectives: combined L2+L1 score regression, summed cross-entropy
//! over the five factorized sub-labels, teacher-forced caption NLL, and the
//! weighted multitask total.
//!
//! Everything here is pure `f64` arithmetic on plain arrays; the training
//! loop converts network outputs into these shapes, evaluates value and
//! gradient, and feeds the gradient back to the layers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{DiveLabel, PAD};
use crate::error::AqaError;
use crate::mtl::TaskConfig;
use crate::Result;

/// Relative weights of the three task losses in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub aqa: f64,
    pub classification: f64,
    pub caption: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            aqa: 1.0,
            classification: 1.0,
            caption: 0.01,
        }
    }
}

/// Per-batch loss values: unweighted components (zero for tasks that are
/// inactive or zero-weighted) plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub aqa: f64,
    pub classification: f64,
    pub caption: f64,
}

fn check_same_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(AqaError::Data(format!(
            "{context}: length mismatch ({a} vs {b})"
        )));
    }
    if a == 0 {
        return Err(AqaError::Data(format!("{context}: empty batch")));
    }
    Ok(())
}

/// Score-regression loss: mean over the batch of squared error plus absolute
/// error, `(1/N) Σ ((x−y)² + |x−y|)`.
pub fn aqa_loss(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
    check_same_len("aqa_loss", pred.len(), target.len())?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(&x, &y)| {
            let d = x - y;
            d * d + d.abs()
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`aqa_loss`] with respect to the predictions:
/// `(2(x−y) + sign(x−y)) / N`, with the subgradient of `|·|` at 0 taken as 0.
pub fn aqa_loss_grad(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_same_len("aqa_loss", pred.len(), target.len())?;
    let n = pred.len() as f64;
    Ok(ndarray::Zip::from(&pred)
        .and(&target)
        .map_collect(|&x, &y| {
            let d = x - y;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (2.0 * d + sign) / n
        }))
}

fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn check_targets(context: &str, logits: ArrayView2<f64>, targets: &[usize]) -> Result<()> {
    check_same_len(context, logits.nrows(), targets.len())?;
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(AqaError::Data(format!(
            "{context}: target class {bad} out of range ({} classes)",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of one classifier: `(1/N) Σ −ln softmax(logits)[y]`.
pub fn cross_entropy_mean(logits: ArrayView2<f64>, targets: &[usize]) -> Result<f64> {
    check_targets("cross_entropy", logits, targets)?;
    let n = logits.nrows() as f64;
    let sum: f64 = logits
        .rows()
        .into_iter()
        .zip(targets.iter())
        .map(|(row, &t)| -log_softmax_row(row)[t])
        .sum();
    Ok(sum / n)
}

/// Gradient of [`cross_entropy_mean`] with respect to the logits:
/// `(softmax − onehot) / N`.
pub fn cross_entropy_grad(logits: ArrayView2<f64>, targets: &[usize]) -> Result<Array2<f64>> {
    check_targets("cross_entropy", logits, targets)?;
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    for (i, (row, &t)) in logits.rows().into_iter().zip(targets.iter()).enumerate() {
        let log_probs = log_softmax_row(row);
        for (j, &lp) in log_probs.iter().enumerate() {
            grad[(i, j)] = (lp.exp() - if j == t { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok(grad)
}

/// Factorized classification loss: the sum over the five sub-tasks of each
/// sub-task's mean cross-entropy. `logits` holds one `(N, k)` matrix per
/// sub-task in schema order.
pub fn classification_loss(logits: &[Array2<f64>], labels: &[DiveLabel]) -> Result<f64> {
    if logits.len() != 5 {
        return Err(AqaError::Data(format!(
            "classification_loss expects 5 sub-task logit matrices, got {}",
            logits.len()
        )));
    }
    let mut total = 0.0;
    for (s, sub_logits) in logits.iter().enumerate() {
        let targets: Vec<usize> = labels.iter().map(|l| l.indices()[s]).collect();
        total += cross_entropy_mean(sub_logits.view(), &targets)?;
    }
    Ok(total)
}

/// Per-sub-task logit gradients for [`classification_loss`].
pub fn classification_loss_grad(
    logits: &[Array2<f64>],
    labels: &[DiveLabel],
) -> Result<Vec<Array2<f64>>> {
    if logits.len() != 5 {
        return Err(AqaError::Data(format!(
            "classification_loss expects 5 sub-task logit matrices, got {}",
            logits.len()
        )));
    }
    let mut grads = Vec::with_capacity(5);
    for (s, sub_logits) in logits.iter().enumerate() {
        let targets: Vec<usize> = labels.iter().map(|l| l.indices()[s]).collect();
        grads.push(cross_entropy_grad(sub_logits.view(), &targets)?);
    }
    Ok(grads)
}

/// How the caption NLL is reduced over decoding steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionNorm {
    /// Sum over steps, mean over the batch (the double summation as printed).
    #[default]
    SumSteps,
    /// Mean over all scored tokens in the batch.
    MeanTokens,
}

fn checked_caption_pairs<'a>(
    step_logits: &'a [Array2<f64>],
    targets: &[&[usize]],
) -> Result<usize> {
    check_same_len("captioning_loss", step_logits.len(), targets.len())?;
    let mut scored = 0usize;
    for (i, (logits, target)) in step_logits.iter().zip(targets.iter()).enumerate() {
        if logits.nrows() != target.len() {
            return Err(AqaError::Data(format!(
                "captioning_loss: sample {i} has {} logit rows but {} target tokens",
                logits.nrows(),
                target.len()
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= logits.ncols()) {
            return Err(AqaError::Data(format!(
                "captioning_loss: sample {i} target token {bad} out of vocabulary ({})",
                logits.ncols()
            )));
        }
        scored += target.iter().filter(|&&t| t != PAD).count();
    }
    if scored == 0 {
        return Err(AqaError::Data(
            "captioning_loss: no non-pad tokens to score".to_string(),
        ));
    }
    Ok(scored)
}

/// Caption NLL under teacher forcing. Each sample contributes the sum over
/// its decoding steps of `−ln softmax(logits_t)[y_t]`; PAD targets are
/// skipped. The default reduction averages those per-sample sums over the
/// batch; [`CaptionNorm::MeanTokens`] divides by the scored-token count
/// instead.
pub fn captioning_loss(
    step_logits: &[Array2<f64>],
    targets: &[&[usize]],
    norm: CaptionNorm,
) -> Result<f64> {
    let scored = checked_caption_pairs(step_logits, targets)?;
    let mut total = 0.0;
    for (logits, target) in step_logits.iter().zip(targets.iter()) {
        for (row, &t) in logits.rows().into_iter().zip(target.iter()) {
            if t != PAD {
                total -= log_softmax_row(row)[t];
            }
        }
    }
    Ok(match norm {
        CaptionNorm::SumSteps => total / step_logits.len() as f64,
        CaptionNorm::MeanTokens => total / scored as f64,
    })
}

/// Per-sample step-logit gradients for [`captioning_loss`]. PAD steps get
/// zero rows.
pub fn captioning_loss_grad(
    step_logits: &[Array2<f64>],
    targets: &[&[usize]],
    norm: CaptionNorm,
) -> Result<Vec<Array2<f64>>> {
    let scored = checked_caption_pairs(step_logits, targets)?;
    let denom = match norm {
        CaptionNorm::SumSteps => step_logits.len() as f64,
        CaptionNorm::MeanTokens => scored as f64,
    };
    let mut grads = Vec::with_capacity(step_logits.len());
    for (logits, target) in step_logits.iter().zip(targets.iter()) {
        let mut grad = Array2::zeros(logits.dim());
        for (t_step, (row, &t)) in logits.rows().into_iter().zip(target.iter()).enumerate() {
            if t == PAD {
                continue;
            }
            let log_probs = log_softmax_row(row);
            for (j, &lp) in log_probs.iter().enumerate() {
                grad[(t_step, j)] = (lp.exp() - if j == t { 1.0 } else { 0.0 }) / denom;
            }
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Combines per-task losses into the training objective. Components of
/// inactive or zero-weighted tasks are reported as zero and contribute
/// nothing; the total is the weighted sum of what remains.
pub fn total_loss(
    aqa: f64,
    classification: f64,
    caption: f64,
    weights: &LossWeights,
    active: &TaskConfig,
) -> LossReport {
    let keep = |value: f64, on: bool, w: f64| if on && w != 0.0 { value } else { 0.0 };
    let aqa = keep(aqa, true, weights.aqa);
    let classification = keep(classification, active.classification, weights.classification);
    let caption = keep(caption, active.captioning, weights.caption);
    LossReport {
        total: weights.aqa * aqa
            + weights.classification * classification
            + weights.caption * caption,
        aqa,
        classification,
        caption,
    }
}
