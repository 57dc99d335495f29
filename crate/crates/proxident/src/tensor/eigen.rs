//! Latent-factor recovery by slice eigendecomposition, and the array-route
//! identifiers built on top of it.
//!
//! For a square, invertible outcome-proxy conditional P[W | Z, a] the slice
//! matrices M_y = P[y, W | Z, a] P[W | Z, a]^{-1} are jointly diagonalized by
//! P[W | latent]: each M_y has eigenvalue f(y | latent state i, a) attached
//! to the i-th column of P[W | latent]. Recovering the eigenvectors of one
//! well-separated slice therefore pins down the latent mixture, after which
//! the remaining conditionals follow from one linear solve against the
//! observed joint. Latent states come out in arbitrary order per treatment
//! level and are aligned across levels by minimal total variation.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::oracle::CounterfactualLaw;
use crate::prob::{
    sanitize_probability_vector, Assignment, CategoricalDomain, CondMatrix, FullLaw,
};
use crate::tensor::align::{align_columns, permute_columns};
use crate::tensor::als::recover_cp;
use crate::tensor::build_slices;
use crate::ProxyRoles;

const MAX_COMBINATION_ATTEMPTS: usize = 5;

/// How the slice used for the eigendecomposition was chosen at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceChoice {
    /// A single outcome state's slice had well-separated eigenvalues.
    Outcome { state: usize },
    /// Slices were mixed with random weights; `attempt` counts the draws
    /// needed before the spectrum separated.
    RandomCombination { attempt: usize },
}

/// Numerical bookkeeping from one latent recovery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    pub method: String,
    /// Slice choice per treatment level (eigendecomposition only).
    pub chosen_slices: Vec<SliceChoice>,
    /// Smallest pairwise eigenvalue gap of the chosen slice, per level.
    pub eigenvalue_gaps: Vec<f64>,
    /// Smallest singular value of P[W | Z, a] per level.
    pub min_singular_values: Vec<f64>,
    /// Largest imaginary part encountered in any spectrum, absolute.
    pub max_imaginary: f64,
    /// Total negative mass clipped across all recovered vectors.
    pub clipped_mass: f64,
    /// Total-variation cost of aligning each level onto the first.
    pub alignment_costs: Vec<f64>,
    /// Relative reconstruction error per level (decomposition route only).
    pub cp_fits: Vec<f64>,
}

/// Latent conditionals recovered from an observed margin, aligned across
/// treatment levels. State order is arbitrary but consistent between fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentRecovery {
    pub latent_cardinality: usize,
    /// P[outcome proxy | latent], averaged over levels after alignment.
    pub outcome_proxy_given_latent: CondMatrix,
    /// P[outcome | latent, level], one matrix per treatment level.
    pub outcome_given_latent: Vec<CondMatrix>,
    /// Latent distribution at each treatment level.
    pub latent_given_treatment: Vec<Vec<f64>>,
    /// Latent marginal, mixed over the observed treatment distribution.
    pub latent_marginal: Vec<f64>,
    /// Ordinal label per recovered state, filled in by label recovery.
    pub labels: Option<Vec<usize>>,
    pub diagnostics: RecoveryDiagnostics,
}

/// Which recovery engine the array identifier uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayMode {
    Eigen,
    Cp,
}

impl ArrayMode {
    pub fn name(&self) -> &'static str {
        match self {
            ArrayMode::Eigen => "eigen",
            ArrayMode::Cp => "cp",
        }
    }
}

/// An identified interventional law plus the latent factors behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayIdentification {
    pub recovery: LatentRecovery,
    pub counterfactual: CounterfactualLaw,
}

struct LevelRecovery {
    p_w_given_u: DMatrix<f64>,
    p_y_given_u: DMatrix<f64>,
    f_u: Vec<f64>,
    slice: SliceChoice,
    gap: f64,
    min_singular: f64,
    max_imag: f64,
    clipped: f64,
    fit: f64,
}

fn observed_margin(observed: &FullLaw, roles: &ProxyRoles) -> Result<FullLaw> {
    observed.marginalize(&[
        roles.treatment.as_str(),
        roles.outcome.as_str(),
        roles.treatment_proxy.as_str(),
        roles.outcome_proxy.as_str(),
    ])
}

/// Minimal pairwise modulus gap; a single eigenvalue is vacuously separated.
fn min_pairwise_gap(values: &DVector<Complex<f64>>) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    gap
}

fn spectral_radius(values: &DVector<Complex<f64>>) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Uniteigenvector for an approximately real eigenvalue, computed as the
/// right singular vector of M - lambda I with smallest singular value.
pub(crate) fn eigenvector_for(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let k = m.nrows();
    let shifted = m - DMatrix::identity(k, k) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("singular value decomposition lost V".into()))?;
    Ok(v_t.row(k - 1).transpose())
}

fn recover_level_eigen(
    margin: &FullLaw,
    roles: &ProxyRoles,
    level: usize,
    rng: &mut ChaCha8Rng,
    tol: &Tolerances,
) -> Result<LevelRecovery> {
    let w_card = margin.cardinality(&roles.outcome_proxy)?;
    let z_card = margin.cardinality(&roles.treatment_proxy)?;
    let y_card = margin.cardinality(&roles.outcome)?;
    if w_card != z_card {
        return Err(Error::NotIdentifiable(format!(
            "eigendecomposition needs equal proxy cardinalities, got {w_card} and {z_card}"
        )));
    }
    let k = w_card;
    let mut context = Assignment::new();
    context.insert(roles.treatment.clone(), level);
    let joint = build_slices(
        margin,
        &roles.outcome_proxy,
        &roles.treatment_proxy,
        &roles.outcome,
        &context,
    )?;

    // P[W | Z, a] and its conditioning.
    let mut f_z = vec![0.0; k];
    for ((_, z, _), &v) in joint.entries.indexed_iter() {
        f_z[z] += v;
    }
    for (z, &mass) in f_z.iter().enumerate() {
        if mass <= 0.0 {
            return Err(Error::PositivityViolation {
                stratum: format!(
                    "{{{}={}, {}=#{}}}",
                    roles.treatment, level, roles.treatment_proxy, z
                ),
                mass,
            });
        }
    }
    let mut p_wz = DMatrix::zeros(k, k);
    for ((w, z, _), &v) in joint.entries.indexed_iter() {
        p_wz[(w, z)] += v / f_z[z];
    }
    let svd = p_wz.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_max > 0.0 && sigma_min > tol.rank_rel * sigma_max) {
        return Err(Error::NotIdentifiable(format!(
            "proxy conditional P[{} | {}] is singular at treatment level {level} \
             (smallest singular value {sigma_min:e})",
            roles.outcome_proxy, roles.treatment_proxy
        )));
    }
    let p_wz_inv = p_wz.clone().try_inverse().ok_or_else(|| {
        Error::Numerical(format!(
            "failed to invert proxy conditional at treatment level {level}"
        ))
    })?;

    // One slice per outcome state: M_y = P[y, W | Z, a] P[W | Z, a]^{-1}.
    let mut slices = Vec::with_capacity(y_card);
    for y in 0..y_card {
        let mut joint_y = DMatrix::zeros(k, k);
        for w in 0..k {
            for z in 0..k {
                joint_y[(w, z)] = joint.entries[(w, z, y)] / f_z[z];
            }
        }
        slices.push(joint_y * &p_wz_inv);
    }

    // Prefer the single slice with the widest eigenvalue separation; fall
    // back to random slice mixtures, which share the eigenvectors.
    let mut best_state = 0;
    let mut best_gap = f64::NEG_INFINITY;
    let mut best_eigs = None;
    for (y, m) in slices.iter().enumerate() {
        let eigs = m.complex_eigenvalues();
        let gap = min_pairwise_gap(&eigs);
        if gap > best_gap {
            best_gap = gap;
            best_state = y;
            best_eigs = Some(eigs);
        }
    }
    let (chosen, choice, gap, eigs) = if best_gap >= tol.eigen_gap {
        (
            slices[best_state].clone(),
            SliceChoice::Outcome { state: best_state },
            best_gap,
            best_eigs.expect("nonempty slice list"),
        )
    } else {
        let mut found = None;
        for attempt in 1..=MAX_COMBINATION_ATTEMPTS {
            let weights: Vec<f64> = (0..y_card).map(|_| rng.gen::<f64>()).collect();
            let mut mixed = DMatrix::zeros(k, k);
            for (m, &wt) in slices.iter().zip(&weights) {
                mixed += m * wt;
            }
            let eigs = mixed.complex_eigenvalues();
            let gap = min_pairwise_gap(&eigs);
            if gap >= tol.eigen_gap {
                found = Some((mixed, SliceChoice::RandomCombination { attempt }, gap, eigs));
                break;
            }
        }
        found.ok_or_else(|| {
            Error::NotIdentifiable(format!(
                "no slice or random slice combination separated the spectrum at \
                 treatment level {level}; outcome conditionals of distinct latent \
                 states appear identical"
            ))
        })?
    };

    let radius = spectral_radius(&eigs);
    let max_imag = eigs.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if max_imag > tol.complex_rel * radius.max(1.0) {
        return Err(Error::Numerical(format!(
            "slice spectrum at treatment level {level} has imaginary part {max_imag:e} \
             beyond tolerance"
        )));
    }

    // Eigenvalues in descending real order for a deterministic state order
    // before cross-level alignment.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eigs[j].re.partial_cmp(&eigs[i].re).unwrap());

    let mut clipped_total = 0.0;
    let mut p_wu = DMatrix::zeros(k, k);
    for (col, &idx) in order.iter().enumerate() {
        let v = eigenvector_for(&chosen, eigs[idx].re)?;
        let total: f64 = v.iter().sum();
        if total.abs() < 1e-9 {
            return Err(Error::Numerical(format!(
                "eigenvector at treatment level {level} has vanishing sum and cannot \
                 be scaled to a distribution"
            )));
        }
        let mut column: Vec<f64> = v.iter().map(|x| x / total).collect();
        let (clipped, _) = sanitize_probability_vector(
            &mut column,
            &format!("recovered proxy conditional at treatment level {level}"),
            tol,
        )?;
        clipped_total += clipped;
        for (row, &x) in column.iter().enumerate() {
            p_wu[(row, col)] = x;
        }
    }

    // Joint f(W, Y | a) decomposes as P[W | latent] times the latent-outcome
    // joint; one solve returns f(Y, latent | a).
    let mut g = DMatrix::zeros(k, y_card);
    for ((w, _, y), &v) in joint.entries.indexed_iter() {
        g[(w, y)] += v;
    }
    let x = p_wu.clone().full_piv_lu().solve(&g).ok_or_else(|| {
        Error::Numerical(format!(
            "recovered proxy conditional is singular at treatment level {level}"
        ))
    })?;

    let mut f_u: Vec<f64> = (0..k).map(|i| x.row(i).sum()).collect();
    let (clipped, _) = sanitize_probability_vector(
        &mut f_u,
        &format!("recovered latent distribution at treatment level {level}"),
        tol,
    )?;
    clipped_total += clipped;

    let mut p_yu = DMatrix::zeros(y_card, k);
    for i in 0..k {
        if f_u[i] <= 0.0 {
            return Err(Error::Recovery(format!(
                "recovered latent state {i} has no mass at treatment level {level}"
            )));
        }
        let mut column: Vec<f64> = (0..y_card).map(|y| x[(i, y)] / f_u[i]).collect();
        let (clipped, _) = sanitize_probability_vector(
            &mut column,
            &format!("recovered outcome conditional at treatment level {level}"),
            tol,
        )?;
        clipped_total += clipped;
        for (y, &p) in column.iter().enumerate() {
            p_yu[(y, i)] = p;
        }
    }

    Ok(LevelRecovery {
        p_w_given_u: p_wu,
        p_y_given_u: p_yu,
        f_u,
        slice: choice,
        gap,
        min_singular: sigma_min,
        max_imag,
        clipped: clipped_total,
        fit: 0.0,
    })
}

fn recover_level_cp(
    margin: &FullLaw,
    roles: &ProxyRoles,
    level: usize,
    rank: usize,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<LevelRecovery> {
    let mut context = Assignment::new();
    context.insert(roles.treatment.clone(), level);
    let tensor = build_slices(
        margin,
        &roles.outcome_proxy,
        &roles.treatment_proxy,
        &roles.outcome,
        &context,
    )?;
    let rec = recover_cp(&tensor, rank, restarts, seed, tol)?;

    // Scale indeterminacy: the row and outcome factors are conditionals and
    // must have unit-sum columns; the leftover scale lands in the column
    // factor, whose column sums are then the latent distribution.
    let mut row = rec.factors.row.clone();
    let mut col = rec.factors.col.clone();
    let mut out = rec.factors.outcome.clone();
    for r in 0..rank {
        let s_row: f64 = row.column(r).sum();
        let s_out: f64 = out.column(r).sum();
        if s_row.abs() < 1e-9 || s_out.abs() < 1e-9 {
            return Err(Error::Recovery(format!(
                "decomposition component {r} at treatment level {level} has a \
                 vanishing column sum and cannot be normalized"
            )));
        }
        for i in 0..row.nrows() {
            row[(i, r)] /= s_row;
        }
        for i in 0..out.nrows() {
            out[(i, r)] /= s_out;
        }
        for i in 0..col.nrows() {
            col[(i, r)] *= s_row * s_out;
        }
    }
    let mut clipped_total = 0.0;
    let mut f_u: Vec<f64> = (0..rank).map(|r| col.column(r).sum()).collect();
    let (clipped, _) = sanitize_probability_vector(
        &mut f_u,
        &format!("recovered latent distribution at treatment level {level}"),
        tol,
    )?;
    clipped_total += clipped;
    for (matrix, what) in [(&mut row, "proxy"), (&mut out, "outcome")] {
        for r in 0..rank {
            let mut column: Vec<f64> = matrix.column(r).iter().copied().collect();
            let (clipped, _) = sanitize_probability_vector(
                &mut column,
                &format!("recovered {what} conditional at treatment level {level}"),
                tol,
            )?;
            clipped_total += clipped;
            for (i, &p) in column.iter().enumerate() {
                matrix[(i, r)] = p;
            }
        }
    }

    Ok(LevelRecovery {
        p_w_given_u: row,
        p_y_given_u: out,
        f_u,
        slice: SliceChoice::Outcome { state: 0 },
        gap: f64::NAN,
        min_singular: f64::NAN,
        max_imag: 0.0,
        clipped: clipped_total,
        fit: rec.fit,
    })
}

/// Recovers aligned latent conditionals from the observed margin alone.
///
/// `seed` drives the random slice combinations (eigendecomposition) or the
/// restart initializations (decomposition); identical inputs and seed give
/// identical output. In decomposition mode `rank` must supply the number of
/// latent states, which the observed margin does not reveal.
pub fn recover_latent(
    observed: &FullLaw,
    roles: &ProxyRoles,
    mode: ArrayMode,
    rank: Option<usize>,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<LatentRecovery> {
    let margin = observed_margin(observed, roles)?;
    let t_card = margin.cardinality(&roles.treatment)?;
    let w_dom = margin.domain(&roles.outcome_proxy)?.clone();
    let y_dom = margin.domain(&roles.outcome)?.clone();

    let k = match mode {
        ArrayMode::Eigen => {
            if rank.is_some_and(|r| r != w_dom.cardinality()) {
                return Err(Error::Domain(
                    "eigendecomposition fixes the latent cardinality to the proxy \
                     cardinality; drop the rank argument"
                        .into(),
                ));
            }
            w_dom.cardinality()
        }
        ArrayMode::Cp => rank.ok_or_else(|| {
            Error::Domain("decomposition mode needs an explicit rank".into())
        })?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level_seeds: Vec<u64> = (0..t_card).map(|_| rng.gen()).collect();
    let mut levels = Vec::with_capacity(t_card);
    for a in 0..t_card {
        let level = match mode {
            ArrayMode::Eigen => recover_level_eigen(&margin, roles, a, &mut rng, tol)?,
            ArrayMode::Cp => {
                recover_level_cp(&margin, roles, a, k, restarts, level_seeds[a], tol)?
            }
        };
        levels.push(level);
    }

    // The proxy conditional does not depend on the treatment; aligning each
    // level's copy onto the first gives one consistent latent state order.
    let mut alignment_costs = vec![0.0];
    let reference = levels[0].p_w_given_u.clone();
    for level in levels.iter_mut().skip(1) {
        let (perm, cost) = align_columns(&level.p_w_given_u, &reference)?;
        level.p_w_given_u = permute_columns(&level.p_w_given_u, &perm);
        level.p_y_given_u = permute_columns(&level.p_y_given_u, &perm);
        level.f_u = perm.iter().map(|&s| level.f_u[s]).collect();
        alignment_costs.push(cost);
    }

    let mut p_wu_mean = DMatrix::zeros(w_dom.cardinality(), k);
    for level in &levels {
        p_wu_mean += &level.p_w_given_u;
    }
    p_wu_mean /= t_card as f64;
    let mut clipped_total: f64 = levels.iter().map(|l| l.clipped).sum();
    for c in 0..k {
        let mut column: Vec<f64> = p_wu_mean.column(c).iter().copied().collect();
        let (clipped, _) =
            sanitize_probability_vector(&mut column, "averaged proxy conditional", tol)?;
        clipped_total += clipped;
        for (r, &p) in column.iter().enumerate() {
            p_wu_mean[(r, c)] = p;
        }
    }

    let f_t = margin.marginal_vector(&roles.treatment)?;
    let mut latent_marginal = vec![0.0; k];
    for (level, &pa) in levels.iter().zip(&f_t) {
        for i in 0..k {
            latent_marginal[i] += pa * level.f_u[i];
        }
    }
    sanitize_probability_vector(&mut latent_marginal, "recovered latent marginal", tol)?;

    let latent_dom = CategoricalDomain::indexed("latent", k)?;
    let outcome_proxy_given_latent = CondMatrix::new(
        w_dom,
        latent_dom.clone(),
        Assignment::new(),
        p_wu_mean,
        tol,
    )?;
    let mut outcome_given_latent = Vec::with_capacity(t_card);
    for (a, level) in levels.iter().enumerate() {
        let mut context = Assignment::new();
        context.insert(roles.treatment.clone(), a);
        outcome_given_latent.push(CondMatrix::new(
            y_dom.clone(),
            latent_dom.clone(),
            context,
            level.p_y_given_u.clone(),
            tol,
        )?);
    }

    Ok(LatentRecovery {
        latent_cardinality: k,
        outcome_proxy_given_latent,
        outcome_given_latent,
        latent_given_treatment: levels.iter().map(|l| l.f_u.clone()).collect(),
        latent_marginal,
        labels: None,
        diagnostics: RecoveryDiagnostics {
            method: mode.name().to_string(),
            chosen_slices: levels.iter().map(|l| l.slice.clone()).collect(),
            eigenvalue_gaps: levels.iter().map(|l| l.gap).collect(),
            min_singular_values: levels.iter().map(|l| l.min_singular).collect(),
            max_imaginary: levels.iter().map(|l| l.max_imag).fold(0.0, f64::max),
            clipped_mass: clipped_total,
            alignment_costs,
            cp_fits: levels.iter().map(|l| l.fit).collect(),
        },
    })
}

/// Latent recovery by slice eigendecomposition alone.
pub fn recover_eigen(
    observed: &FullLaw,
    roles: &ProxyRoles,
    seed: u64,
    tol: &Tolerances,
) -> Result<LatentRecovery> {
    recover_latent(observed, roles, ArrayMode::Eigen, None, 1, seed, tol)
}

/// Identifies the interventional outcome law by recovering latent factors
/// and averaging the recovered outcome conditionals over the recovered
/// latent marginal.
pub fn identify_array(
    observed: &FullLaw,
    roles: &ProxyRoles,
    mode: ArrayMode,
    rank: Option<usize>,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<ArrayIdentification> {
    let margin = observed_margin(observed, roles)?;
    let recovery = recover_latent(&margin, roles, mode, rank, restarts, seed, tol)?;
    let t_dom = margin.domain(&roles.treatment)?.clone();
    let y_dom = margin.domain(&roles.outcome)?.clone();
    let k = recovery.latent_cardinality;

    let mut table = DMatrix::zeros(y_dom.cardinality(), t_dom.cardinality());
    for a in 0..t_dom.cardinality() {
        let p_yu = &recovery.outcome_given_latent[a].entries;
        let mut column = vec![0.0; y_dom.cardinality()];
        for i in 0..k {
            for (y, slot) in column.iter_mut().enumerate() {
                *slot += p_yu[(y, i)] * recovery.latent_marginal[i];
            }
        }
        sanitize_probability_vector(
            &mut column,
            &format!("identified counterfactual column at level {a}"),
            tol,
        )?;
        for (y, &p) in column.iter().enumerate() {
            table[(y, a)] = p;
        }
    }
    Ok(ArrayIdentification {
        counterfactual: CounterfactualLaw::new(t_dom, y_dom, table, tol)?,
        recovery,
    })
}

/// Identifies the interventional outcome law when the proxied latent is a
/// mediator rather than a confounder: the recovered mediator distribution at
/// the intervened level is propagated through the recovered outcome
/// conditionals, averaged over the natural treatment distribution.
pub fn identify_mediator_array(
    observed: &FullLaw,
    roles: &ProxyRoles,
    mode: ArrayMode,
    rank: Option<usize>,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<ArrayIdentification> {
    let margin = observed_margin(observed, roles)?;
    let recovery = recover_latent(&margin, roles, mode, rank, restarts, seed, tol)?;
    let t_dom = margin.domain(&roles.treatment)?.clone();
    let y_dom = margin.domain(&roles.outcome)?.clone();
    let f_t = margin.marginal_vector(&roles.treatment)?;
    let k = recovery.latent_cardinality;

    let mut table = DMatrix::zeros(y_dom.cardinality(), t_dom.cardinality());
    for a in 0..t_dom.cardinality() {
        let f_m_at_a = &recovery.latent_given_treatment[a];
        let mut column = vec![0.0; y_dom.cardinality()];
        for (a_prime, &pa) in f_t.iter().enumerate() {
            let p_ym = &recovery.outcome_given_latent[a_prime].entries;
            for i in 0..k {
                for (y, slot) in column.iter_mut().enumerate() {
                    *slot += pa * p_ym[(y, i)] * f_m_at_a[i];
                }
            }
        }
        sanitize_probability_vector(
            &mut column,
            &format!("identified counterfactual column at level {a}"),
            tol,
        )?;
        for (y, &p) in column.iter().enumerate() {
            table[(y, a)] = p;
        }
    }
    Ok(ArrayIdentification {
        counterfactual: CounterfactualLaw::new(t_dom, y_dom, table, tol)?,
        recovery,
    })
}
