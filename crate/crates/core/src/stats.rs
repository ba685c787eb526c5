//! Descriptive statistics over generic scalars.

use crate::scalar::Scalar;

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().copied().sum::<T>() / T::from_count(v.len())
}

/// Sample standard deviation (denominator `n - 1`); zero below two values.
pub fn sample_std<T: Scalar>(v: &[T]) -> T {
    if v.len() < 2 {
        return T::zero();
    }
    let m = mean(v);
    let ss: T = v.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_count(v.len() - 1)).sqrt()
}

/// Nearest-rank quantile: the value at 1-based rank `ceil(p * n)` of the sorted data.
pub fn nearest_rank_quantile<T: Scalar>(v: &[T], p: f64) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = s.len();
    // the epsilon absorbs representation error in p (0.95 * 20 must give rank 19)
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(s[rank - 1])
}

pub fn median<T: Scalar>(v: &[T]) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / T::lit(2.0)
    })
}

/// Pearson correlation; `None` when either side is constant or lengths differ.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return None;
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

pub fn rmse<T: Scalar>(a: &[T], b: &[T]) -> T {
    mse(a, b).sqrt()
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    s / T::from_count(a.len())
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r2<T: Scalar>(truth: &[T], pred: &[T]) -> T {
    let m = mean(truth);
    let ss_tot: T = truth.iter().map(|&y| (y - m) * (y - m)).sum();
    let ss_res: T = truth.iter().zip(pred).map(|(&y, &p)| (y - p) * (y - p)).sum();
    if ss_tot <= T::zero() {
        if ss_res <= T::zero() {
            T::one()
        } else {
            T::zero()
        }
    } else {
        T::one() - ss_res / ss_tot
    }
}
