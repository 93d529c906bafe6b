use std::cmp::Ordering;

use super::EvalError;

/// ROC-AUC by the midrank (Mann–Whitney) method: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { positives: n_pos, negatives: n_neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum_pos += twice_mid * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    // 2U = 2R − n_pos(n_pos + 1)
    let twice_u = twice_rank_sum_pos - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// ROC curve points `(fpr, tpr, threshold)`, thresholds descending.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>, EvalError> {
    roc_auc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / n_neg, tp / n_pos, thr));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts pairwise orderings directly, as an exact rational.
    fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u128;
        let (mut np, mut nn) = (0u128, 0u128);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                np += 1;
            } else {
                nn += 1;
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if !lj {
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        Ordering::Greater => 2,
                        Ordering::Equal => 1,
                        Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2.0 * np as f64 * nn as f64)
    }

    #[test]
    fn worked_example() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(brute_force(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), 0.75);
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn curve_ends_at_one_one() {
        let pts = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(pts.first().unwrap().0, 0.0);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0, 0.1));
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            data in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let np = labels.iter().filter(|&&l| l).count();
            prop_assume!(np > 0 && np < labels.len());
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_force(&scores, &labels));
        }

        #[test]
        fn monotone_transform_invariance(
            data in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let np = labels.iter().filter(|&&l| l).count();
            prop_assume!(np > 0 && np < labels.len());
            let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert_eq!(a, roc_auc(&squashed, &labels).unwrap());
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == scores.len() {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
            }
        }
    }
}
