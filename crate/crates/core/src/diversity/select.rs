use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dpp::dpp_greedy_select;
use super::kernel::rbf_kernel;
use super::measures::{int_div, vendi_score};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Largest subset size considered.
    pub k_max: usize,
    /// Candidate pools up to this size are searched exhaustively instead of greedily.
    pub exhaustive_max: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_max: 32,
            exhaustive_max: 6,
        }
    }
}

/// Score of one evaluated candidate subset `S_k` joined with the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SubsetScore<T> {
    pub k: usize,
    pub vendi: T,
    pub int_div: T,
    pub diversity: T,
    /// Candidate ids of `S_k`, in selection order.
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiversityDecision<T> {
    /// Best subset per `k`, ascending `k`.
    pub trace: Vec<SubsetScore<T>>,
    /// Index into `trace` of the chosen subset; `None` when there were no candidates.
    pub best: Option<usize>,
}

impl<T: Scalar> DiversityDecision<T> {
    pub fn empty() -> Self {
        DiversityDecision {
            trace: Vec::new(),
            best: None,
        }
    }

    /// Ids of the chosen subset.
    pub fn selected(&self) -> &[String] {
        self.best.map_or(&[], |b| self.trace[b].ids.as_slice())
    }

    pub fn best_score(&self) -> Option<&SubsetScore<T>> {
        self.best.map(|b| &self.trace[b])
    }
}

/// `VS(T) * IntDiv(T)` with the kernel rebuilt over `T` (own median bandwidth).
pub fn set_diversity<T: Scalar>(points: &[&[T]]) -> Result<(T, T)> {
    let owned: Vec<Vec<T>> = points.iter().map(|p| p.to_vec()).collect();
    let k = rbf_kernel(&owned)?;
    Ok((vendi_score(&k.matrix)?, int_div(&k.matrix)))
}

fn score_subset<T: Scalar>(
    train: &[Vec<T>],
    candidates: &[(String, Vec<T>)],
    subset: &[usize],
) -> Result<SubsetScore<T>> {
    let pts: Vec<&[T]> = train
        .iter()
        .map(Vec::as_slice)
        .chain(subset.iter().map(|&i| candidates[i].1.as_slice()))
        .collect();
    let (vendi, int_div) = set_diversity(&pts)?;
    Ok(SubsetScore {
        k: subset.len(),
        vendi,
        int_div,
        diversity: vendi * int_div,
        ids: subset.iter().map(|&i| candidates[i].0.clone()).collect(),
    })
}

fn sorted_ids(s: &SubsetScore<impl Scalar>) -> Vec<&str> {
    let mut v: Vec<&str> = s.ids.iter().map(String::as_str).collect();
    v.sort_unstable();
    v
}

/// `a` beats `b`: larger diversity, then smaller `k`, then lexicographically smaller ids.
fn better<T: Scalar>(a: &SubsetScore<T>, b: &SubsetScore<T>) -> bool {
    if a.diversity != b.diversity {
        return a.diversity > b.diversity;
    }
    if a.k != b.k {
        return a.k < b.k;
    }
    sorted_ids(a) < sorted_ids(b)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else {
            break;
        };
        cur[i] += 1;
        for j in (i + 1)..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    out
}

/// Choose the candidate subset that maximises `VS * IntDiv` of the training
/// points joined with it.
///
/// For each `k` in `1..=min(k_max, |candidates|)`, `S_k` is the greedy DPP
/// MAP subset of size `k` over the candidate kernel. Pools no larger than
/// `exhaustive_max` evaluate every subset of each size instead.
pub fn select_diverse_subset<T: Scalar>(
    train: &[Vec<T>],
    candidates: &[(String, Vec<T>)],
    config: &SelectionConfig,
) -> Result<DiversityDecision<T>> {
    let m = candidates.len();
    if m == 0 || config.k_max == 0 {
        return Ok(DiversityDecision::empty());
    }
    let k_top = config.k_max.min(m);

    let trace: Vec<SubsetScore<T>> = if m <= config.exhaustive_max {
        (1..=k_top)
            .into_par_iter()
            .map(|k| {
                let mut best: Option<SubsetScore<T>> = None;
                for subset in combinations(m, k) {
                    let s = score_subset(train, candidates, &subset)?;
                    if best.as_ref().is_none_or(|b| better(&s, b)) {
                        best = Some(s);
                    }
                }
                Ok(best.expect("k <= m yields at least one subset"))
            })
            .collect::<Result<_>>()?
    } else {
        let pts: Vec<Vec<T>> = candidates.iter().map(|c| c.1.clone()).collect();
        let kernel = rbf_kernel(&pts)?;
        let order = dpp_greedy_select(&kernel.matrix, k_top)?;
        (1..=order.len())
            .into_par_iter()
            .map(|k| score_subset(train, candidates, &order[..k]))
            .collect::<Result<_>>()?
    };

    let best = (0..trace.len()).reduce(|b, i| if better(&trace[i], &trace[b]) { i } else { b });
    Ok(DiversityDecision { trace, best })
}
