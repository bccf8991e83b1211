use crate::autodiff::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("probability {0} outside (0, 1]")]
    Domain(f64),
    #[error("AUROC needs both classes; got {positives} positive and {negatives} negative")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// `-α_t (1 - p)^γ ln p` for the probability `p` of the true class.
pub fn focal_loss(p: f64, alpha_t: f64, gamma: f64) -> Result<f64, MetricError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricError::Domain(p));
    }
    Ok(-alpha_t * (1.0 - p).powf(gamma) * p.ln())
}

/// Batch mean of [`focal_loss`].
pub fn focal_loss_mean(ps: &[f64], alpha_ts: &[f64], gamma: f64) -> Result<f64, MetricError> {
    if ps.len() != alpha_ts.len() {
        return Err(MetricError::LengthMismatch(ps.len(), alpha_ts.len()));
    }
    if ps.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut s = 0.0;
    for (&p, &a) in ps.iter().zip(alpha_ts) {
        s += focal_loss(p, a, gamma)?;
    }
    Ok(s / ps.len() as f64)
}

/// Class weight: `alpha` for positives, `1 - alpha` for negatives.
pub fn alpha_for(label: bool, alpha: f64) -> f64 {
    if label {
        alpha
    } else {
        1.0 - alpha
    }
}

/// Differentiable focal loss of the `n × 1` true-class probabilities `p`,
/// averaged over rows.
pub fn focal_loss_var(g: &mut Graph<'_>, p: Var, alpha_ts: &[f64], gamma: f64) -> crate::autodiff::Result<Var> {
    let one_minus = g.neg(p);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let modulating = g.powf(one_minus, gamma);
    let logp = g.log(p);
    let per = g.mul(modulating, logp)?;
    let w = Tensor::from_vec(alpha_ts.len(), 1, alpha_ts.to_vec());
    let per = g.mul_const(per, w)?;
    let m = g.mean(per);
    Ok(g.neg(m))
}

/// Area under the ROC curve via average ranks; ties count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateLabels { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled 1-based ranks of positives, kept integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                rank2_sum += rank2;
            }
        }
        i = j + 1;
    }
    let p = positives as u128;
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2.0 * positives as f64 * negatives as f64))
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}
