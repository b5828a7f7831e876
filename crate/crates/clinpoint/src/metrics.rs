//! Binary classification metrics: AUROC by rank statistic (ties take the
//! average rank), AUPRC by average-precision step integration over
//! descending distinct thresholds, and F1 at threshold 0.5.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
}

fn check_two_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metrics(format!(
            "need both classes, got {pos} positive / {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney form: `(sum of positive ranks - P(P+1)/2) / (P*N)` with
/// average ranks for tied scores.
pub fn auroc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; probs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged across the tie group
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: walk distinct scores descending, accumulating
/// `(recall_k - recall_{k-1}) * precision_k`.
pub fn auprc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// F1 with positives predicted at `p >= 0.5`; zero when the denominator is
/// empty.
pub fn f1_at_half(probs: &[f64], labels: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p >= 0.5;
        match (pred, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn compute(probs: &[f64], labels: &[u8]) -> Result<Metrics> {
    Ok(Metrics {
        auroc: auroc(probs, labels)?,
        auprc: auprc(probs, labels)?,
        f1: f1_at_half(probs, labels),
    })
}

/// All-pairs AUROC: wins plus half-ties over positive x negative pairs.
/// Independent of the rank-statistic route; exact agreement is asserted in
/// tests.
pub fn auroc_bruteforce(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_two_classes(labels)?;
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            total += 1.0;
            if probs[i] > probs[j] {
                wins += 1.0;
            } else if probs[i] == probs[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / total)
}

/// All-thresholds AUPRC: for every distinct score, rescan the whole array
/// for TP/FP counts. Independent of the single-pass route.
pub fn auprc_bruteforce(probs: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_two_classes(labels)?;
    let mut thresholds: Vec<f64> = probs.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&p, &y) in probs.iter().zip(labels) {
            if p >= t {
                if y == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_separation() {
        let probs = [0.9, 0.8, 0.1];
        let labels = [1, 1, 0];
        let m = compute(&probs, &labels).unwrap();
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.auprc, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn all_tied_scores_give_half_auroc() {
        let probs = [0.3; 6];
        let labels = [1, 0, 1, 0, 0, 1];
        assert_eq!(auroc(&probs, &labels).unwrap(), 0.5);
    }

    #[test]
    fn random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 4000;
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        let a = auroc(&probs, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.05, "auroc {a}");
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(compute(&[0.3, 0.7], &[1, 1]).is_err());
        assert!(compute(&[0.3, 0.7], &[0, 0]).is_err());
    }

    #[test]
    fn matches_bruteforce_on_exhaustive_small_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for n in 2..=8usize {
            // random scores with deliberate ties
            let probs: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..4) as f64) / 4.0).collect();
            for bits in 1..(1u32 << n) - 1 {
                let labels: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
                let a1 = auroc(&probs, &labels).unwrap();
                let a2 = auroc_bruteforce(&probs, &labels).unwrap();
                assert_eq!(a1, a2, "auroc n={n} bits={bits} probs={probs:?}");
                let p1 = auprc(&probs, &labels).unwrap();
                let p2 = auprc_bruteforce(&probs, &labels).unwrap();
                assert_eq!(p1, p2, "auprc n={n} bits={bits} probs={probs:?}");
            }
        }
    }
}
