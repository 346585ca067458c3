use std::cmp::Ordering;

use crate::error::{FedError, Result};
use crate::numerics::Tensor;

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation into sorted data at fractional rank `t`.
fn interp(sorted: &[f64], t: f64) -> f64 {
    let lo = t.floor() as usize;
    let hi = t.ceil() as usize;
    let frac = t - lo as f64;
    sorted[lo] + frac * (sorted[hi.min(sorted.len() - 1)] - sorted[lo])
}

/// Maps `src` onto the value distribution of `reference` by rank.
///
/// Element of rank `r` in `src` (stable by flat index) receives the value of
/// `reference` at fractional rank `r (m - 1) / (n - 1)`. Runs of equal
/// source values share their mid-rank, so equal inputs stay equal.
pub fn quantile_map(src: &Tensor, reference: &Tensor) -> Result<Tensor> {
    quantile_map_slice(src.data(), reference.data())
        .map(|data| Tensor::from_parts(src.shape().to_vec(), data))
}

pub(crate) fn quantile_map_slice(src: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(FedError::Empty("quantile_map reference".into()));
    }
    if src.is_empty() {
        return Err(FedError::Empty("quantile_map source".into()));
    }
    let n = src.len();
    let ref_sorted = sorted(reference);
    let m = ref_sorted.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| match src[a].total_cmp(&src[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let scale = if n > 1 {
        (m - 1) as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && src[order[end]] == src[order[start]] {
            end += 1;
        }
        let rank = if n > 1 {
            (start + end - 1) as f64 / 2.0
        } else {
            0.0
        };
        let t = if n > 1 { rank * scale } else { (m - 1) as f64 / 2.0 };
        let value = interp(&ref_sorted, t);
        for &i in &order[start..end] {
            out[i] = value;
        }
        start = end;
    }
    Ok(out)
}

/// Kolmogorov (sup-norm) distance between two empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let sa = sorted(a);
    let sb = sorted(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn identity_on_same_multiset() {
        let x = t(&[0.3, 0.1, 0.9, 0.5]);
        assert_eq!(quantile_map(&x, &x).unwrap(), x);
        let y = t(&[1.0, 1.0, 2.0, 0.0]);
        assert_eq!(quantile_map(&y, &y).unwrap(), y);
    }

    #[test]
    fn two_point_example() {
        let out = quantile_map(&t(&[0.0, 1.0]), &t(&[0.5, 0.5])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn constant_source_takes_median_rank_value() {
        // reference sorted [1, 2, 4, 8]; mid rank 1.5 -> 3.0
        let out = quantile_map(&t(&[7.0; 5]), &t(&[8.0, 1.0, 4.0, 2.0])).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
        let single = quantile_map(&t(&[7.0]), &t(&[8.0, 1.0, 4.0])).unwrap();
        assert_eq!(single.data(), &[4.0]);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(quantile_map_slice(&[1.0], &[]).is_err());
    }

    #[test]
    fn ks_distance_basic() {
        assert_eq!(ks_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((ks_distance(&[0.0, 0.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((ks_distance(&[0.0, 1.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
    }
}
