//! Rank-constrained three-way decomposition by alternating least squares.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::tensor::eigen::eigenvector_for;
use crate::tensor::{khatri_rao, CpFactors, ThreeWayArray};

const MAX_SWEEPS: usize = 2000;

/// Result of the best restart.
#[derive(Debug, Clone)]
pub struct CpRecovery {
    pub factors: CpFactors,
    /// Relative Frobenius reconstruction error.
    pub fit: f64,
    /// Index of the restart that produced the result.
    pub restart: usize,
    pub sweeps: usize,
    pub converged: bool,
}

struct SingleRun {
    factors: CpFactors,
    fit: f64,
    sweeps: usize,
    converged: bool,
}

/// Decomposes `tensor` into `rank` components by alternating least squares
/// with multiple restarts.
///
/// The first restart initializes each factor from the leading left singular
/// vectors of the matching unfolding, which sidesteps the slow plateaus that
/// plague random starts on near-boundary tensors; the remaining restarts are
/// random, from seeds derived deterministically from `seed`. The returned
/// solution is the converged restart with the best fit, ties broken by the
/// lowest restart index, so the output is reproducible regardless of
/// scheduling. Errs when no restart converges, reporting the best fit
/// attained anywhere.
pub fn recover_cp(
    tensor: &ThreeWayArray,
    rank: usize,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CpRecovery> {
    let (m, n, j) = tensor.dims();
    if rank == 0 {
        return Err(Error::Domain("decomposition rank must be positive".into()));
    }
    if restarts == 0 {
        return Err(Error::Domain("at least one restart is required".into()));
    }
    let norm = tensor.frobenius_norm();
    if norm <= 0.0 {
        return Err(Error::Domain("cannot decompose a zero tensor".into()));
    }
    if rank > m.min(n * j).min(n.min(m * j)).min(j.min(m * n)) {
        return Err(Error::Domain(format!(
            "rank {rank} exceeds what shape {m}x{n}x{j} supports"
        )));
    }

    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let restart_seeds: Vec<u64> = (0..restarts).map(|_| seeder.gen()).collect();

    let unfold0 = tensor.unfold(0);
    let unfold1 = tensor.unfold(1);
    let unfold2 = tensor.unfold(2);

    let runs: Vec<SingleRun> = restart_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let init = if i == 0 { Init::Algebraic } else { Init::Random(s) };
            single_run(tensor, &unfold0, &unfold1, &unfold2, rank, init, tol)
        })
        .collect();

    let mut best: Option<(usize, &SingleRun)> = None;
    for (i, run) in runs.iter().enumerate() {
        if !run.converged {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => run.fit < b.fit,
        };
        if better {
            best = Some((i, run));
        }
    }
    match best {
        Some((restart, run)) => Ok(CpRecovery {
            factors: run.factors.clone(),
            fit: run.fit,
            restart,
            sweeps: run.sweeps,
            converged: true,
        }),
        None => {
            let best_fit = runs
                .iter()
                .map(|r| r.fit)
                .fold(f64::INFINITY, f64::min);
            Err(Error::Convergence { best_fit })
        }
    }
}

enum Init {
    /// Generalized eigendecomposition of compressed slice mixtures, falling
    /// back to the leading singular vectors of each unfolding.
    Algebraic,
    Random(u64),
}

fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

/// First `rank` left singular vectors of `unfolding`; the rank bound checked
/// upfront guarantees that many exist.
fn leading_left_singular(unfolding: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let svd = unfolding.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    u.columns(0, rank).into_owned()
}

/// Algebraic start: compress the first two modes to rank-sized bases, form
/// two mixtures of the compressed outcome slices, and read both compressed
/// factors off the eigendecompositions of one mixture against the other.
/// Exact in exact arithmetic when the decomposition is unique and the rank
/// fits inside the first two modes, so the sweeps that follow only polish.
/// Random starts instead crawl through long plateaus on such tensors.
fn algebraic_init(
    tensor: &ThreeWayArray,
    unfold0: &DMatrix<f64>,
    unfold1: &DMatrix<f64>,
    unfold2: &DMatrix<f64>,
    rank: usize,
) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (m, n, j) = tensor.dims();
    if rank < 2 || rank > m.min(n) || j.min(m * n) < 2 {
        return None;
    }
    let u_a = leading_left_singular(unfold0, rank);
    let u_b = leading_left_singular(unfold1, rank);
    // Mixture weights from the two dominant outcome-mode directions.
    let u_c = leading_left_singular(unfold2, 2);
    let mut s_p = DMatrix::zeros(rank, rank);
    let mut s_q = DMatrix::zeros(rank, rank);
    for y in 0..j {
        let slice = DMatrix::from_fn(m, n, |w, z| tensor.entries[(w, z, y)]);
        let compressed = u_a.transpose() * slice * &u_b;
        s_p += &compressed * u_c[(y, 0)];
        s_q += compressed * u_c[(y, 1)];
    }
    // S_p S_q^{-1} has the compressed row factor for eigenvectors and
    // (S_q^{-1} S_p)^T the compressed column factor, on a shared spectrum.
    let g = s_q
        .transpose()
        .full_piv_lu()
        .solve(&s_p.transpose())?
        .transpose();
    let h = s_q.clone().full_piv_lu().solve(&s_p)?.transpose();
    let mut lambdas: Vec<f64> = g.complex_eigenvalues().iter().map(|v| v.re).collect();
    lambdas.sort_by(f64::total_cmp);
    let mut d_hat = DMatrix::zeros(rank, rank);
    let mut e_hat = DMatrix::zeros(rank, rank);
    for (r, lambda) in lambdas.iter().enumerate() {
        d_hat.set_column(r, &eigenvector_for(&g, *lambda).ok()?);
        e_hat.set_column(r, &eigenvector_for(&h, *lambda).ok()?);
    }
    let row = u_a * d_hat;
    let col = u_b * e_hat;
    let gram = (row.transpose() * &row).component_mul(&(col.transpose() * &col));
    let out = solve_against_gram(&gram, &(unfold2 * khatri_rao(&row, &col))).ok()?;
    Some((row, col, out))
}

/// Solves X G = B for X given the symmetric Gram matrix G, in the
/// least-squares sense through an SVD so rank-deficient Grams cannot panic.
fn solve_against_gram(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = gram.clone().svd(true, true);
    let eps = f64::EPSILON * svd.singular_values.max().max(1.0) * gram.nrows() as f64;
    let solved = svd
        .solve(&rhs.transpose(), eps)
        .map_err(|e| Error::Numerical(format!("least-squares update failed: {e}")))?;
    Ok(solved.transpose())
}

fn single_run(
    tensor: &ThreeWayArray,
    unfold0: &DMatrix<f64>,
    unfold1: &DMatrix<f64>,
    unfold2: &DMatrix<f64>,
    rank: usize,
    init: Init,
    tol: &Tolerances,
) -> SingleRun {
    let (m, n, j) = tensor.dims();
    let (mut row, mut col, mut out) = match init {
        Init::Algebraic => algebraic_init(tensor, unfold0, unfold1, unfold2, rank)
            .unwrap_or_else(|| {
                (
                    leading_left_singular(unfold0, rank),
                    leading_left_singular(unfold1, rank),
                    leading_left_singular(unfold2, rank),
                )
            }),
        Init::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                random_factor(&mut rng, m, rank),
                random_factor(&mut rng, n, rank),
                random_factor(&mut rng, j, rank),
            )
        }
    };

    let mut previous_fit = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    let mut fit = f64::INFINITY;

    for sweep in 1..=MAX_SWEEPS {
        sweeps = sweep;
        let step = (|| -> Result<()> {
            let gram = (col.transpose() * &col).component_mul(&(out.transpose() * &out));
            row = solve_against_gram(&gram, &(unfold0 * khatri_rao(&col, &out)))?;
            let gram = (row.transpose() * &row).component_mul(&(out.transpose() * &out));
            col = solve_against_gram(&gram, &(unfold1 * khatri_rao(&row, &out)))?;
            let gram = (row.transpose() * &row).component_mul(&(col.transpose() * &col));
            out = solve_against_gram(&gram, &(unfold2 * khatri_rao(&row, &col)))?;
            Ok(())
        })();
        if step.is_err() {
            break;
        }
        normalize_into_outcome(&mut row, &mut col, &mut out);

        let factors = CpFactors {
            row: row.clone(),
            col: col.clone(),
            outcome: out.clone(),
        };
        fit = factors.relative_error(tensor);
        if !fit.is_finite() {
            break;
        }
        if (previous_fit - fit).abs() <= tol.als_rel_change || fit <= 1e-14 {
            converged = true;
            break;
        }
        previous_fit = fit;
    }

    SingleRun {
        factors: CpFactors { row, col, outcome: out },
        fit,
        sweeps,
        converged,
    }
}

/// Scales row and column factors to unit Euclidean columns, pushing the
/// magnitude into the outcome factor. Keeps the iteration well scaled
/// without changing the reconstruction.
fn normalize_into_outcome(row: &mut DMatrix<f64>, col: &mut DMatrix<f64>, out: &mut DMatrix<f64>) {
    for r in 0..row.ncols() {
        let nr = row.column(r).norm();
        let nc = col.column(r).norm();
        if nr > 1e-300 {
            for i in 0..row.nrows() {
                row[(i, r)] /= nr;
            }
        }
        if nc > 1e-300 {
            for i in 0..col.nrows() {
                col[(i, r)] /= nc;
            }
        }
        let scale = nr.max(1e-300) * nc.max(1e-300);
        for i in 0..out.nrows() {
            out[(i, r)] *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::CategoricalDomain;
    use crate::tensor::align::factor_match_error;
    use ndarray::Array3;

    fn domain(name: &str, k: usize) -> CategoricalDomain {
        CategoricalDomain::indexed(name, k).unwrap()
    }

    fn tensor_from(factors: &CpFactors, names: [&str; 3]) -> ThreeWayArray {
        ThreeWayArray::new(
            [
                domain(names[0], factors.row.nrows()),
                domain(names[1], factors.col.nrows()),
                domain(names[2], factors.outcome.nrows()),
            ],
            factors.reconstruct(),
        )
        .unwrap()
    }

    #[test]
    fn rank_one_tensor_is_recovered_exactly() {
        let truth = CpFactors {
            row: DMatrix::from_row_slice(3, 1, &[0.2, 0.3, 0.5]),
            col: DMatrix::from_row_slice(2, 1, &[0.6, 0.4]),
            outcome: DMatrix::from_row_slice(2, 1, &[0.7, 0.3]),
        };
        let tensor = tensor_from(&truth, ["W", "Z", "Y"]);
        let rec = recover_cp(&tensor, 1, 4, 11, &Tolerances::default()).unwrap();
        assert!(rec.fit < 1e-10, "fit {}", rec.fit);
        assert!(rec.converged);
    }

    #[test]
    fn separated_rank_two_factors_are_recovered_up_to_permutation_and_scale() {
        let truth = CpFactors {
            row: DMatrix::from_row_slice(3, 2, &[0.8, 0.1, 0.15, 0.2, 0.05, 0.7]),
            col: DMatrix::from_row_slice(3, 2, &[0.7, 0.2, 0.2, 0.3, 0.1, 0.5]),
            outcome: DMatrix::from_row_slice(3, 2, &[0.6, 0.1, 0.3, 0.2, 0.1, 0.7]),
        };
        let tensor = tensor_from(&truth, ["W", "Z", "Y"]);
        let rec = recover_cp(&tensor, 2, 8, 3, &Tolerances::default()).unwrap();
        assert!(rec.fit < 1e-9, "fit {}", rec.fit);

        // Compare on a scale-free normalization: unit-sum columns.
        let normalize = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for c in 0..out.ncols() {
                let s: f64 = out.column(c).sum();
                for r in 0..out.nrows() {
                    out[(r, c)] /= s;
                }
            }
            out
        };
        let rec_row = normalize(&rec.factors.row);
        let rec_col = normalize(&rec.factors.col);
        let rec_out = normalize(&rec.factors.outcome);
        let err = factor_match_error(
            &[&rec_row, &rec_col, &rec_out],
            &[
                &normalize(&truth.row),
                &normalize(&truth.col),
                &normalize(&truth.outcome),
            ],
        )
        .unwrap();
        assert!(err < 1e-6, "factor error {err}");
    }

    #[test]
    fn restarts_are_deterministic() {
        let truth = CpFactors {
            row: DMatrix::from_row_slice(3, 2, &[0.8, 0.1, 0.15, 0.2, 0.05, 0.7]),
            col: DMatrix::from_row_slice(3, 2, &[0.7, 0.2, 0.2, 0.3, 0.1, 0.5]),
            outcome: DMatrix::from_row_slice(3, 2, &[0.6, 0.1, 0.3, 0.2, 0.1, 0.7]),
        };
        let tensor = tensor_from(&truth, ["W", "Z", "Y"]);
        let a = recover_cp(&tensor, 2, 6, 42, &Tolerances::default()).unwrap();
        let b = recover_cp(&tensor, 2, 6, 42, &Tolerances::default()).unwrap();
        assert_eq!(a.restart, b.restart);
        assert_eq!(a.fit.to_bits(), b.fit.to_bits());
        assert_eq!(a.factors.row, b.factors.row);
    }

    #[test]
    fn zero_tensor_is_rejected() {
        let t = ThreeWayArray::new(
            [domain("W", 2), domain("Z", 2), domain("Y", 2)],
            Array3::zeros((2, 2, 2)),
        )
        .unwrap();
        assert!(matches!(
            recover_cp(&t, 1, 2, 0, &Tolerances::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn impossible_rank_is_rejected() {
        let truth = CpFactors {
            row: DMatrix::from_row_slice(2, 1, &[0.2, 0.8]),
            col: DMatrix::from_row_slice(2, 1, &[0.5, 0.5]),
            outcome: DMatrix::from_row_slice(2, 1, &[0.9, 0.1]),
        };
        let tensor = tensor_from(&truth, ["W", "Z", "Y"]);
        assert!(recover_cp(&tensor, 5, 2, 0, &Tolerances::default()).is_err());
    }
}
