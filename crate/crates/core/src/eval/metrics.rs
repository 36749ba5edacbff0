use crate::error::{Error, Result};

/// Average precision: scores sorted descending, precision summed at every
/// recall increment. Equal scores form one threshold and enter together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auprc scores vs labels", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Validation(format!("auprc got non-numeric score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("auprc with no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                group_tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if group_tp > 0 {
            tp += group_tp;
            ap += group_tp as f64 / positives as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap.clamp(0.0, 1.0))
}
