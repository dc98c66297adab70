use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting half.
///
/// Ranks are accumulated in doubled integer units, so the result is exactly
/// `(2 * wins + ties) / (2 * n_pos * n_neg)` for every input.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum over positives of twice their average (1-based) rank.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        let doubled_rank = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_sum += doubled_rank * pos_in_group;
        i = j;
    }
    let u2 = rank2_sum - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[1, 1, 0, 0]).unwrap(), 0.25);
    }

    #[test]
    fn ties_and_perfect_order() {
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(auc(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass)));
        assert!(auc(&[1.0], &[1, 0]).is_err());
    }
}
