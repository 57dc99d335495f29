//! Array-decomposition identification: three-way arrays built from observed
//! margins, their rank structure, and latent-factor recovery.

pub mod align;
pub mod als;
pub mod eigen;
pub mod labels;

use nalgebra::DMatrix;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::prob::{multi_range, Assignment, CategoricalDomain, FullLaw};

/// Three-way array of joint probabilities with named axes.
#[derive(Debug, Clone)]
pub struct ThreeWayArray {
    pub axes: [CategoricalDomain; 3],
    pub entries: Array3<f64>,
}

impl ThreeWayArray {
    pub fn new(axes: [CategoricalDomain; 3], entries: Array3<f64>) -> Result<Self> {
        let dims = entries.dim();
        let expected = (
            axes[0].cardinality(),
            axes[1].cardinality(),
            axes[2].cardinality(),
        );
        if dims != expected {
            return Err(Error::Domain(format!(
                "tensor shape {dims:?} does not match axis cardinalities {expected:?}"
            )));
        }
        for &v in entries.iter() {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite tensor entry {v}")));
            }
        }
        Ok(ThreeWayArray { axes, entries })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.entries.dim()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mode-k unfolding with the remaining axes flattened last-fastest:
    /// mode 0 gives rows w and columns z * J + j, mode 1 rows z and columns
    /// w * J + j, mode 2 rows j and columns w * N + z.
    pub fn unfold(&self, mode: usize) -> DMatrix<f64> {
        let (m, n, j) = self.dims();
        match mode {
            0 => {
                let mut out = DMatrix::zeros(m, n * j);
                for ((w, z, y), &v) in self.entries.indexed_iter() {
                    out[(w, z * j + y)] = v;
                }
                out
            }
            1 => {
                let mut out = DMatrix::zeros(n, m * j);
                for ((w, z, y), &v) in self.entries.indexed_iter() {
                    out[(z, w * j + y)] = v;
                }
                out
            }
            2 => {
                let mut out = DMatrix::zeros(j, m * n);
                for ((w, z, y), &v) in self.entries.indexed_iter() {
                    out[(y, w * n + z)] = v;
                }
                out
            }
            _ => panic!("mode must be 0, 1 or 2"),
        }
    }
}

/// Joint-probability slices f(outcome, row-proxy, column-proxy | context)
/// arranged as a three-way array with axes (row proxy, column proxy,
/// outcome).
///
/// The context typically fixes the treatment level; an empty context builds
/// the unconditional array. Entries are nonnegative and sum to one.
pub fn build_slices(
    law: &FullLaw,
    row: &str,
    col: &str,
    outcome: &str,
    context: &Assignment,
) -> Result<ThreeWayArray> {
    let cond = law.condition(&[row, col, outcome], context)?;
    let axes = [
        cond.domain(row)?.clone(),
        cond.domain(col)?.clone(),
        cond.domain(outcome)?.clone(),
    ];
    let (m, n, j) = (
        axes[0].cardinality(),
        axes[1].cardinality(),
        axes[2].cardinality(),
    );
    let mut entries = Array3::zeros((m, n, j));
    for idx in multi_range(&[m, n, j]) {
        let mut cell = Assignment::new();
        cell.insert(row.to_string(), idx[0]);
        cell.insert(col.to_string(), idx[1]);
        cell.insert(outcome.to_string(), idx[2]);
        entries[(idx[0], idx[1], idx[2])] = cond.event_mass(&cell)?;
    }
    ThreeWayArray::new(axes, entries)
}

/// Largest k such that every k-column subset of `m` is linearly independent,
/// judged by the smallest singular value of the subset exceeding
/// `rank_rel` times its largest.
pub fn k_rank(m: &DMatrix<f64>, tol: &Tolerances) -> usize {
    let n = m.ncols();
    let cap = n.min(m.nrows());
    let mut k = 0;
    for size in 1..=cap {
        let mut all_independent = true;
        for subset in combinations(n, size) {
            let sub = m.select_columns(subset.iter());
            let svd = sub.svd(false, false);
            let sigma_max = svd.singular_values.max();
            let sigma_min = svd.singular_values.min();
            if !(sigma_max > 0.0 && sigma_min > tol.rank_rel * sigma_max) {
                all_independent = false;
                break;
            }
        }
        if all_independent {
            k = size;
        } else {
            break;
        }
    }
    k
}

/// All size-k index subsets of 0..n in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// Rank condition for uniqueness of a rank-R three-way decomposition:
/// the k-ranks of the three factor matrices must sum to at least 2R + 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KruskalReport {
    pub rank: usize,
    pub k_rank_row: usize,
    pub k_rank_col: usize,
    pub k_rank_outcome: usize,
    /// k_rank sum minus (2 rank + 2); nonnegative means the condition holds.
    pub margin: i64,
    pub holds: bool,
    /// Total category count across the three axes.
    pub category_count: usize,
    /// Category count minus (2 rank + 2). A negative value already rules the
    /// condition out regardless of the matrices.
    pub category_margin: i64,
}

/// Evaluates the Kruskal uniqueness condition for the given factor matrices,
/// each with R columns.
pub fn check_kruskal(
    row_factor: &DMatrix<f64>,
    col_factor: &DMatrix<f64>,
    outcome_factor: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<KruskalReport> {
    let r = row_factor.ncols();
    if col_factor.ncols() != r || outcome_factor.ncols() != r {
        return Err(Error::Domain(
            "factor matrices must share a common column count".into(),
        ));
    }
    if r == 0 {
        return Err(Error::Domain("factor matrices need at least one column".into()));
    }
    let k_row = k_rank(row_factor, tol);
    let k_col = k_rank(col_factor, tol);
    let k_out = k_rank(outcome_factor, tol);
    let needed = 2 * r + 2;
    let margin = (k_row + k_col + k_out) as i64 - needed as i64;
    let category_count = row_factor.nrows() + col_factor.nrows() + outcome_factor.nrows();
    Ok(KruskalReport {
        rank: r,
        k_rank_row: k_row,
        k_rank_col: k_col,
        k_rank_outcome: k_out,
        margin,
        holds: margin >= 0,
        category_count,
        category_margin: category_count as i64 - needed as i64,
    })
}

/// Factor matrices of a rank-R three-way decomposition:
/// T[w, z, j] = sum_r row[w, r] col[z, r] outcome[j, r].
#[derive(Debug, Clone)]
pub struct CpFactors {
    pub row: DMatrix<f64>,
    pub col: DMatrix<f64>,
    pub outcome: DMatrix<f64>,
}

impl CpFactors {
    pub fn rank(&self) -> usize {
        self.row.ncols()
    }

    pub fn reconstruct(&self) -> Array3<f64> {
        let (m, n, j) = (self.row.nrows(), self.col.nrows(), self.outcome.nrows());
        let mut out = Array3::zeros((m, n, j));
        for r in 0..self.rank() {
            for w in 0..m {
                for z in 0..n {
                    for y in 0..j {
                        out[(w, z, y)] += self.row[(w, r)] * self.col[(z, r)] * self.outcome[(y, r)];
                    }
                }
            }
        }
        out
    }

    /// Relative Frobenius error of the reconstruction against `tensor`.
    pub fn relative_error(&self, tensor: &ThreeWayArray) -> f64 {
        let recon = self.reconstruct();
        let mut num = 0.0;
        for (a, b) in tensor.entries.iter().zip(recon.iter()) {
            num += (a - b) * (a - b);
        }
        num.sqrt() / tensor.frobenius_norm()
    }
}

/// Column-wise Khatri-Rao product: rows indexed by (i, j) with i from `x`
/// varying slowest, matching the unfolding column order used here.
pub(crate) fn khatri_rao(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let r = x.ncols();
    assert_eq!(y.ncols(), r, "khatri-rao needs equal column counts");
    let mut out = DMatrix::zeros(x.nrows() * y.nrows(), r);
    for c in 0..r {
        for i in 0..x.nrows() {
            for j in 0..y.nrows() {
                out[(i * y.nrows() + j, c)] = x[(i, c)] * y[(j, c)];
            }
        }
    }
    out
}
