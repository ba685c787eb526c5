use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;

/// Extensions whose conditional variance falls below this are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Greedy MAP inference for a DPP with kernel `k`.
///
/// Starting from the empty set, repeatedly adds the item with the largest
/// marginal gain in `det(K_S)`, tracked through an incremental Cholesky
/// factorisation. Ties go to the smallest index. Items whose extension would
/// be numerically singular are skipped, so fewer than `size` indices come back
/// when the kernel has lower rank. Indices are returned in selection order.
pub fn dpp_greedy_select<T: Scalar>(k: &SymMatrix<T>, size: usize) -> Result<Vec<usize>> {
    let n = k.n();
    if size == 0 || size > n {
        return Err(Error::invalid(format!("subset size {size} outside 1..={n}")));
    }
    let eps = T::lit(SINGULAR_EPS);
    // d2[i]: squared Cholesky pivot of i given the current selection
    let mut d2: Vec<T> = (0..n).map(|i| k.get(i, i)).collect();
    let mut chol: Vec<Vec<T>> = vec![Vec::with_capacity(size); n];
    let mut taken = vec![false; n];
    let mut selected = Vec::with_capacity(size);

    while selected.len() < size {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] || !(d2[i] > eps) {
                continue;
            }
            if best.is_none_or(|b| d2[i] > d2[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else {
            log::debug!("dpp greedy: remaining items are singular after {} picks", selected.len());
            break;
        };
        taken[j] = true;
        selected.push(j);
        let dj = d2[j].sqrt();
        let cj = chol[j].clone();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dot: T = cj.iter().zip(&chol[i]).map(|(&a, &b)| a * b).sum();
            let e = (k.get(j, i) - dot) / dj;
            chol[i].push(e);
            d2[i] = d2[i] - e * e;
        }
    }
    Ok(selected)
}

/// `log det(K_S)` via Cholesky; `None` when the submatrix is not positive definite.
pub fn log_det<T: Scalar>(k: &SymMatrix<T>, subset: &[usize]) -> Option<T> {
    let m = subset.len();
    let mut l = vec![T::zero(); m * m];
    let mut acc = T::zero();
    for i in 0..m {
        for j in 0..=i {
            let mut s = k.get(subset[i], subset[j]);
            for p in 0..j {
                s = s - l[i * m + p] * l[j * m + p];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * m + i] = s.sqrt();
                acc = acc + s.ln();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(acc)
}
