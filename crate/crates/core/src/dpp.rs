//! L-ensembles and exact k-DPP sampling.
//!
//! A k-DPP over ground set `Y` draws a size-`k` subset `A` with probability
//! `det(L_A) / sum_{|B| = k} det(L_B)`. When `L = Psi^T Psi` the principal
//! minor `det(L_A)` is the squared volume spanned by the feature vectors of
//! `A`, so the sampler favours sets of near-orthogonal, long vectors.
//!
//! Sampling is exact and runs in two phases on the eigendecomposition
//! `L = sum_n lambda_n v_n v_n^T`:
//!
//! 1. choose `k` eigenvectors, including index `n` (walking `n = N..1`) with
//!    probability `lambda_n e_{l-1}^{n-1} / e_l^n`, where `e_l^n` is the
//!    elementary symmetric polynomial of order `l` over the first `n`
//!    eigenvalues and `l` is the number of slots still open;
//! 2. draw items one at a time from the span `V` of the chosen vectors, item
//!    `i` with probability proportional to `||V_i||^2`, then restrict `V` to
//!    the subspace orthogonal to `e_i` and re-orthonormalize.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::episodes::{ClassLabel, EmbeddingTable};
use crate::error::{Error, Result};
use crate::geometry::{dot, psd_det};
use crate::rng::StreamRng;
use crate::stats::{chi_square_gof, ChiSquare};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Default cap on the number of subsets [`kdpp_distribution`] will enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 200_000;
/// Largest ground set the enumeration oracle accepts.
pub const MAX_ENUMERATION_ITEMS: usize = 20;

/// A symmetric PSD kernel over labelled items, with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct LEnsemble {
    l: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// `eigenvectors[j]` is the unit eigenvector for `eigenvalues[j]`.
    eigenvectors: Vec<Vec<f64>>,
    item_ids: Vec<ClassLabel>,
    rank: usize,
}

impl LEnsemble {
    /// `L[i][j] = <psi_i, psi_j>` over the embeddings of `items`.
    pub fn build(table: &EmbeddingTable, items: &[ClassLabel]) -> Result<Self> {
        let psi = items
            .iter()
            .map(|c| table.require(c).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::MissingEmbedding(c) => Error::UnknownClass(c),
                other => other,
            })?;
        let n = psi.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = dot(&psi[i], &psi[j]);
                l[i][j] = v;
                l[j][i] = v;
            }
        }
        Self::from_matrix(l, items.to_vec())
    }

    /// Wraps an explicit symmetric PSD matrix.
    pub fn from_matrix(l: Vec<Vec<f64>>, item_ids: Vec<ClassLabel>) -> Result<Self> {
        let n = l.len();
        if n == 0 {
            return Err(Error::EmptyInput("L-ensemble over no items"));
        }
        if item_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: item_ids.len(),
            });
        }
        for row in &l {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
        }
        for i in 0..n {
            for j in 0..i {
                if (l[i][j] - l[j][i]).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "L is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (l[i][j] + l[j][i]));
        let eig = SymmetricEigen::new(m);
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if eig.eigenvalues.iter().any(|&v| v < -1e-9 * lambda_max.max(1.0)) {
            return Err(Error::InvalidArgument("L is not positive semi-definite".into()));
        }
        let cutoff = RANK_TOL * lambda_max;
        let eigenvalues: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&v| if v > cutoff { v } else { 0.0 })
            .collect();
        let eigenvectors = (0..n)
            .map(|j| eig.eigenvectors.column(j).iter().cloned().collect())
            .collect();
        let rank = eigenvalues.iter().filter(|&&v| v > 0.0).count();
        Ok(Self {
            l,
            eigenvalues,
            eigenvectors,
            item_ids,
            rank,
        })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.l
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[Vec<f64>] {
        &self.eigenvectors
    }

    pub fn item_ids(&self) -> &[ClassLabel] {
        &self.item_ids
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn index_of(&self, label: &ClassLabel) -> Result<usize> {
        self.item_ids
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    /// `det(L_A)` for the item indices in `subset`.
    pub fn principal_minor(&self, subset: &[usize]) -> f64 {
        let sub = subset
            .iter()
            .map(|&i| subset.iter().map(|&j| self.l[i][j]).collect())
            .collect();
        psd_det(sub)
    }

    /// Exact k-DPP draw, returned as item indices in draw order.
    pub fn sample_indices(&self, k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
        if k == 0 || k > self.rank {
            return Err(Error::InfeasibleK { k, rank: self.rank });
        }
        let chosen = select_eigenvectors(&self.eigenvalues, k, rng);
        let n = self.len();
        // Columns of V, each a vector over items.
        let mut basis: Vec<Vec<f64>> = chosen.iter().map(|&j| self.eigenvectors[j].clone()).collect();
        let mut picked = Vec::with_capacity(k);
        while !basis.is_empty() {
            let weights: Vec<f64> = (0..n)
                .map(|i| {
                    if picked.contains(&i) {
                        0.0
                    } else {
                        basis.iter().map(|v| v[i] * v[i]).sum()
                    }
                })
                .collect();
            let item = draw_weighted(&weights, rng);
            picked.push(item);

            let pivot = (0..basis.len())
                .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()))
                .expect("non-empty basis");
            let pv = basis.swap_remove(pivot);
            for v in &mut basis {
                let f = v[item] / pv[item];
                for (x, p) in v.iter_mut().zip(&pv) {
                    *x -= f * p;
                }
                v[item] = 0.0;
            }
            orthonormalize(&mut basis);
        }
        Ok(picked)
    }

    /// Exact k-DPP draw of item labels.
    pub fn kdpp_sample(&self, k: usize, rng: &mut StreamRng) -> Result<Vec<ClassLabel>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.item_ids[i].clone())
            .collect())
    }
}

/// Elementary symmetric polynomials: `table[l][n] = e_l` over the first `n`
/// eigenvalues, for `0 <= l <= k` and `0 <= n <= N`.
pub fn elementary_symmetric(eigenvalues: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = eigenvalues.len();
    let mut e = vec![vec![0.0; n + 1]; k + 1];
    e[0].iter_mut().for_each(|x| *x = 1.0);
    for l in 1..=k {
        for m in 1..=n {
            e[l][m] = e[l][m - 1] + eigenvalues[m - 1] * e[l - 1][m - 1];
        }
    }
    e
}

fn select_eigenvectors(eigenvalues: &[f64], k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let e = elementary_symmetric(eigenvalues, k);
    let mut remaining = k;
    let mut chosen = Vec::with_capacity(k);
    for n in (1..=eigenvalues.len()).rev() {
        if remaining == 0 {
            break;
        }
        let denom = e[remaining][n];
        let p = if denom > 0.0 {
            eigenvalues[n - 1] * e[remaining - 1][n - 1] / denom
        } else {
            0.0
        };
        if rng.random::<f64>() < p {
            chosen.push(n - 1);
            remaining -= 1;
        }
    }
    chosen
}

fn draw_weighted(weights: &[f64], rng: &mut StreamRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Modified Gram-Schmidt, run twice for stability.
fn orthonormalize(basis: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..basis.len() {
            let (done, rest) = basis.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let proj = dot(u, v);
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= proj * y;
                }
            }
            let norm = dot(v, v).sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every `k`-subset with its exact k-DPP probability, by enumeration.
pub fn kdpp_distribution(e: &LEnsemble, k: usize, cap: u128) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = e.len();
    let count = binomial(n, k);
    if n > MAX_ENUMERATION_ITEMS || count > cap {
        return Err(Error::EnumerationTooLarge { n, k, count, cap });
    }
    let subsets = combinations(n, k);
    let dets: Vec<f64> = subsets.iter().map(|s| e.principal_minor(s)).collect();
    let total: f64 = dets.iter().sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleK { k, rank: e.rank() });
    }
    Ok(subsets
        .into_iter()
        .zip(dets)
        .map(|(s, d)| (s, d / total))
        .collect())
}

/// Exact probability that a k-DPP draws exactly `subset`.
pub fn kdpp_prob(e: &LEnsemble, subset: &[ClassLabel], k: usize) -> Result<f64> {
    if subset.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: subset.len(),
        });
    }
    let mut idx = subset
        .iter()
        .map(|c| e.index_of(c))
        .collect::<Result<Vec<_>>>()?;
    idx.sort_unstable();
    if idx.windows(2).any(|w| w[0] == w[1]) {
        return Ok(0.0);
    }
    let n = e.len();
    let count = binomial(n, k);
    if n > MAX_ENUMERATION_ITEMS || count > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge {
            n,
            k,
            count,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let total: f64 = combinations(n, k).iter().map(|s| e.principal_minor(s)).sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleK { k, rank: e.rank() });
    }
    Ok(e.principal_minor(&idx) / total)
}

/// Outcome of comparing a sampler's empirical subset frequencies with the
/// exact k-DPP distribution.
#[derive(Debug, Clone, Serialize)]
pub struct DppCheck {
    pub n: usize,
    pub k: usize,
    pub draws: usize,
    pub chi_square: ChiSquare,
    /// Per-subset `(subset, expected probability, observed count)`.
    pub cells: Vec<(Vec<usize>, f64, u64)>,
}

impl DppCheck {
    pub fn passed(&self, alpha: f64) -> bool {
        self.chi_square.p_value > alpha
    }
}

/// Draws `draws` subsets with `sampler` and runs a chi-square test against
/// the enumerated k-DPP distribution.
pub fn check_sampler<F>(
    e: &LEnsemble,
    k: usize,
    draws: usize,
    rng: &mut StreamRng,
    mut sampler: F,
) -> Result<DppCheck>
where
    F: FnMut(&LEnsemble, usize, &mut StreamRng) -> Result<Vec<usize>>,
{
    let dist = kdpp_distribution(e, k, DEFAULT_ENUMERATION_CAP)?;
    let mut counts = vec![0u64; dist.len()];
    for _ in 0..draws {
        let mut s = sampler(e, k, rng)?;
        s.sort_unstable();
        let cell = dist
            .binary_search_by(|(subset, _)| subset.as_slice().cmp(&s))
            .map_err(|_| Error::InvalidArgument(format!("sampler returned an invalid subset {s:?}")))?;
        counts[cell] += 1;
    }
    let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
    let chi_square = chi_square_gof(&counts, &probs)?;
    Ok(DppCheck {
        n: e.len(),
        k,
        draws,
        chi_square,
        cells: dist
            .into_iter()
            .zip(counts)
            .map(|((s, p), c)| (s, p, c))
            .collect(),
    })
}

/// [`check_sampler`] with the exact sampler.
pub fn check_exact(e: &LEnsemble, k: usize, draws: usize, rng: &mut StreamRng) -> Result<DppCheck> {
    check_sampler(e, k, draws, rng, |e, k, r| e.sample_indices(k, r))
}
