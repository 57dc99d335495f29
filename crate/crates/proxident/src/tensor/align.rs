//! Column alignment between factor matrices recovered up to permutation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Assignment minimizing total cost: returns `perm` with `perm[col] = row`
/// assigned to that column, together with the total cost. Exhaustive search
/// for small square matrices, shortest augmenting paths beyond that.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Domain("assignment needs a square cost matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    for &v in cost.iter() {
        if !v.is_finite() {
            return Err(Error::Numerical("assignment cost is not finite".into()));
        }
    }
    if n <= 8 {
        Ok(exhaustive_assignment(cost))
    } else {
        Ok(hungarian(cost))
    }
}

fn exhaustive_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    // Heap's algorithm over permutations of rows assigned to columns 0..n.
    let mut stack = vec![0usize; n];
    let eval = |perm: &[usize], best: &mut Vec<usize>, best_cost: &mut f64| {
        let total: f64 = perm.iter().enumerate().map(|(col, &row)| cost[(row, col)]).sum();
        if total < *best_cost {
            *best_cost = total;
            best.copy_from_slice(perm);
        }
    };
    eval(&perm, &mut best, &mut best_cost);
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            eval(&perm, &mut best, &mut best_cost);
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    (best, best_cost)
}

/// Shortest-augmenting-path assignment with potentials, O(n^3).
fn hungarian(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    // 1-based potentials; way[j] is the previous column on the path to j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut match_row = vec![0usize; n + 1]; // row matched to column j (1-based, 0 = none)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        match_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_row[j0] = match_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        perm[j - 1] = match_row[j] - 1;
        total += cost[(match_row[j] - 1, j - 1)];
    }
    (perm, total)
}

/// Total-variation cost between every column pair of two stochastic
/// matrices: entry (i, j) is half the L1 distance between column i of
/// `candidate` and column j of `reference`.
pub fn column_tv_costs(candidate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if candidate.nrows() != reference.nrows() || candidate.ncols() != reference.ncols() {
        return Err(Error::Domain("column cost needs equal shapes".into()));
    }
    let n = candidate.ncols();
    let mut cost = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut l1 = 0.0;
            for r in 0..candidate.nrows() {
                l1 += (candidate[(r, i)] - reference[(r, j)]).abs();
            }
            cost[(i, j)] = 0.5 * l1;
        }
    }
    Ok(cost)
}

/// Permutation aligning `candidate` columns onto `reference` columns by
/// minimal total variation: `perm[target] = source` means candidate column
/// `source` plays reference column `target`. Also returns the total cost.
pub fn align_columns(
    candidate: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<(Vec<usize>, f64)> {
    let cost = column_tv_costs(candidate, reference)?;
    min_cost_assignment(&cost)
}

/// Reorders columns: output column `t` is input column `perm[t]`.
pub fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (target, &source) in perm.iter().enumerate() {
        out.set_column(target, &m.column(source));
    }
    out
}

/// Largest elementwise deviation between two factor lists after one shared
/// column permutation chosen to minimize it. All matrices in a pair must
/// have equal shapes and all pairs share the column count.
///
/// The permutation is chosen by minimal summed column distance over all
/// pairs jointly, so a single relabeling of the latent states is applied
/// consistently across every compared matrix.
pub fn factor_match_error(
    recovered: &[&DMatrix<f64>],
    reference: &[&DMatrix<f64>],
) -> Result<f64> {
    if recovered.len() != reference.len() || recovered.is_empty() {
        return Err(Error::Domain("factor lists must pair up".into()));
    }
    let r = recovered[0].ncols();
    let mut cost = DMatrix::zeros(r, r);
    for (cand, refm) in recovered.iter().zip(reference) {
        if cand.ncols() != r || refm.ncols() != r || cand.nrows() != refm.nrows() {
            return Err(Error::Domain("factor shapes do not pair up".into()));
        }
        for i in 0..r {
            for j in 0..r {
                let mut l1 = 0.0;
                for row in 0..cand.nrows() {
                    l1 += (cand[(row, i)] - refm[(row, j)]).abs();
                }
                cost[(i, j)] += l1;
            }
        }
    }
    let (perm, _) = min_cost_assignment(&cost)?;
    let mut worst: f64 = 0.0;
    for (cand, refm) in recovered.iter().zip(reference) {
        for (target, &source) in perm.iter().enumerate() {
            for row in 0..cand.nrows() {
                worst = worst.max((cand[(row, source)] - refm[(row, target)]).abs());
            }
        }
    }
    Ok(worst)
}
