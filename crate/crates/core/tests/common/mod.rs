//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabqual::corpus::{Cell, TableGrid};
use tabqual::geometry::Rect;
use tabqual::linalg::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform 20x10 cells starting at the origin.
pub fn grid(rows: &[&[&str]]) -> TableGrid {
    let owned: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
    grid_owned(&owned)
}

pub fn grid_owned(rows: &[Vec<String>]) -> TableGrid {
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), n_cols);
        for (c, text) in row.iter().enumerate() {
            let (x, y) = (c as f64 * 20.0, r as f64 * 10.0);
            cells.push(Cell {
                text: text.clone(),
                bbox: Rect::new(x, y, x + 20.0, y + 10.0),
                is_header: r == 0,
            });
        }
    }
    TableGrid {
        bbox: Rect::new(0.0, 0.0, n_cols as f64 * 20.0, n_rows as f64 * 10.0),
        n_rows,
        n_cols,
        cells,
    }
}

/// Random grid with texts from a small alphabet, so partial matches are common.
pub fn random_grid(rng: &mut impl Rng, max_rows: usize, max_cols: usize) -> TableGrid {
    let rows = rng.random_range(1..=max_rows);
    let cols = rng.random_range(1..=max_cols);
    let words = ["", "a", "ab", "abc", "b", "ba", "cab", "c", "bb", "ca"];
    let cells: Vec<Vec<String>> = (0..rows)
        .map(|_| (0..cols).map(|_| words[rng.random_range(0..words.len())].to_string()).collect())
        .collect();
    grid_owned(&cells)
}

fn lcs(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for &x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS similarity on whitespace-collapsed lowercase text; two empty strings match fully.
pub fn similarity(a: &str, b: &str) -> f64 {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let (a, b): (Vec<char>, Vec<char>) = (norm(a).chars().collect(), norm(b).chars().collect());
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * lcs(&a, &b) as f64 / (a.len() + b.len()) as f64
}

/// Every strictly increasing pairing between `0..n` and `0..m`.
fn monotone_matchings(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        out.push(cur.clone());
        for a in i..n {
            for b in j..m {
                cur.push((a, b));
                rec(a + 1, b + 1, n, m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, 0, n, m, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive 2D alignment: best joint order-preserving row and column matching.
/// Returns `(precision, recall, f1)`.
pub fn grits_oracle(gt: &TableGrid, pred: &TableGrid) -> (f64, f64, f64) {
    let rows = monotone_matchings(gt.n_rows, pred.n_rows);
    let cols = monotone_matchings(gt.n_cols, pred.n_cols);
    let mut best = 0.0f64;
    for rm in &rows {
        for cm in &cols {
            let mut credit = 0.0;
            for &(r, q) in rm {
                for &(a, b) in cm {
                    credit += similarity(&gt.cell(r, a).text, &pred.cell(q, b).text);
                }
            }
            best = best.max(credit);
        }
    }
    let p = best / pred.n_cells() as f64;
    let r = best / gt.n_cells() as f64;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(k: &SymMatrix<f64>, subset: &[usize]) -> f64 {
    let m = subset.len();
    let mut a: Vec<Vec<f64>> = subset.iter().map(|&i| subset.iter().map(|&j| k.get(i, j)).collect()).collect();
    let mut d = 1.0;
    for c in 0..m {
        let p = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..m {
            let f = a[r][c] / a[c][c];
            for j in c..m {
                a[r][j] -= f * a[c][j];
            }
        }
    }
    d
}

/// Largest determinant over all `size`-subsets of `0..n`.
pub fn max_det(k: &SymMatrix<f64>, size: usize) -> f64 {
    let n = k.n();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        best = best.max(det(k, &s));
    }
    best
}

/// Random PSD matrix `B B^T` with an `n x rank` factor.
pub fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> SymMatrix<f64> {
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    SymMatrix::from_fn(n, |i, j| b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum())
}

/// Unit diagonal with off-diagonal entries in `[0, bound)`; positive definite for `bound * (n - 1) < 1`.
pub fn diagonally_dominant(rng: &mut impl Rng, n: usize, bound: f64) -> SymMatrix<f64> {
    let mut off = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.0..bound);
            off[i][j] = v;
            off[j][i] = v;
        }
    }
    SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { off[i][j] })
}

/// Eigenvalues by plain cyclic Jacobi rotations, kept separate from the library solver.
pub fn jacobi_eigenvalues(k: &SymMatrix<f64>) -> Vec<f64> {
    let n = k.n();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| k.get(i, j)).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Vendi score from independently computed eigenvalues.
pub fn vendi_oracle(k: &SymMatrix<f64>) -> f64 {
    let n = k.n() as f64;
    let h: f64 = jacobi_eigenvalues(k)
        .into_iter()
        .map(|l| l / n)
        .filter(|&l| l > 1e-15)
        .map(|l| -l * l.ln())
        .sum();
    h.exp()
}
