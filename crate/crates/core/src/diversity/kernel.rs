use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::Scalar;
use crate::stats;

/// RBF kernel over a point set, with the bandwidth it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    pub matrix: SymMatrix<T>,
    pub bandwidth: T,
}

impl<T: Scalar> KernelMatrix<T> {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    /// Kernel restricted to `idx`, keeping the bandwidth.
    pub fn subset(&self, idx: &[usize]) -> Self {
        KernelMatrix {
            matrix: self.matrix.submatrix(idx),
            bandwidth: self.bandwidth,
        }
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn check_points<T: Scalar>(points: &[Vec<T>]) -> Result<()> {
    let Some(first) = points.first() else {
        return Err(Error::invalid("rbf kernel over an empty point set"));
    };
    if points.iter().any(|p| p.len() != first.len()) {
        return Err(Error::invalid("rbf kernel points have unequal lengths"));
    }
    Ok(())
}

/// Median of all pairwise Euclidean distances (`i < j`); `None` below two points.
pub fn median_pairwise_distance<T: Scalar>(points: &[Vec<T>]) -> Option<T> {
    let n = points.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    stats::median(&d)
}

/// `K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2))` with sigma the median pairwise distance.
///
/// A zero median (or a single point) falls back to `sigma = 1`; identical points
/// then produce the all-ones kernel.
pub fn rbf_kernel<T: Scalar>(points: &[Vec<T>]) -> Result<KernelMatrix<T>> {
    check_points(points)?;
    let sigma = match median_pairwise_distance(points) {
        Some(m) if m > T::zero() => m,
        _ => T::one(),
    };
    rbf_kernel_with_bandwidth(points, sigma)
}

pub fn rbf_kernel_with_bandwidth<T: Scalar>(points: &[Vec<T>], sigma: T) -> Result<KernelMatrix<T>> {
    check_points(points)?;
    if !(sigma > T::zero()) {
        return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    let denom = T::lit(2.0) * sigma * sigma;
    let matrix = SymMatrix::from_fn(points.len(), |i, j| {
        if i == j {
            T::one()
        } else {
            (-sq_dist(&points[i], &points[j]) / denom).exp()
        }
    });
    Ok(KernelMatrix {
        matrix,
        bandwidth: sigma,
    })
}
