use crate::{Error, Result};

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `Degenerate` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation of a constant vector"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
///
/// A constant input has no defined correlation and yields
/// [`Error::Degenerate`] rather than a number.
pub fn spearman(u: &[f64], e: &[f64]) -> Result<f64> {
    if u.len() != e.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman inputs differ in length: {} vs {}",
            u.len(),
            e.len()
        )));
    }
    if u.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs at least 3 points, got {}",
            u.len()
        )));
    }
    if u.iter().chain(e).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("spearman input"));
    }
    pearson(&average_ranks(u), &average_ranks(e))
}
