//! Shift-detection statistics over a per-unit uncertainty score.

use super::average_ranks;
use crate::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "scores and labels differ in length: {a} vs {b}"
        )));
    }
    Ok(())
}

/// Mann–Whitney ROC-AUC: P(score of a positive > score of a negative), ties ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("roc_auc needs both classes"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Δσ² = mean over flagged units − mean over the rest.
pub fn delta_sigma(sigmas: &[f64], ood: &[bool]) -> Result<f64> {
    check_lengths(sigmas.len(), ood.len())?;
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &o) in sigmas.iter().zip(ood) {
        if o {
            s_out += s;
            n_out += 1;
        } else {
            s_in += s;
            n_in += 1;
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(Error::Empty("delta_sigma group"));
    }
    Ok(s_out / n_out as f64 - s_in / n_in as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_give_one() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(roc_auc(&[3.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn one_inversion_gives_three_quarters() {
        // Scores (1,3,2,4) against labels (-,-,+,+): 3 of 4 pairs concordant.
        assert_eq!(roc_auc(&[1.0, 3.0, 2.0, 4.0], &[false, false, true, true]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(roc_auc(&[1.0, 2.0], &[true, true]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn delta_sigma_examples() {
        assert_eq!(delta_sigma(&[1.0, 2.0, 3.0, 10.0], &[false, false, false, true]).unwrap(), 8.0);
        assert_eq!(delta_sigma(&[1.0, 3.0, 2.0, 2.0], &[false, false, true, true]).unwrap(), 0.0);
        let c = 0.25;
        let d = delta_sigma(&[1.0, 2.0, 1.0 + c, 2.0 + c], &[false, false, true, true]).unwrap();
        assert!((d - c).abs() < 1e-15);
        assert!(delta_sigma(&[1.0], &[false]).is_err());
    }
}
