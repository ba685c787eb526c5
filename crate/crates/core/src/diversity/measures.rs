use crate::error::Result;
use crate::linalg::{psd_eigenvalues, SymMatrix};
use crate::scalar::Scalar;

/// Exponential of the Shannon entropy of the eigenvalues of `K / n`.
///
/// The effective number of distinct elements: `n` for an identity kernel,
/// 1 when every point is identical.
pub fn vendi_score<T: Scalar>(k: &SymMatrix<T>) -> Result<T> {
    let n = k.n();
    if n == 0 {
        return Ok(T::zero());
    }
    let ev = psd_eigenvalues(&k.scaled(T::one() / T::from_count(n)))?;
    let entropy: T = ev
        .iter()
        .filter(|&&l| l > T::zero())
        .map(|&l| -l * l.ln())
        .sum();
    Ok(entropy.exp())
}

/// One minus the mean off-diagonal kernel value; zero for fewer than two points.
pub fn int_div<T: Scalar>(k: &SymMatrix<T>) -> T {
    let n = k.n();
    if n < 2 {
        return T::zero();
    }
    let mut off = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off = off + k.get(i, j);
            }
        }
    }
    T::one() - off / T::from_count(n * (n - 1))
}
