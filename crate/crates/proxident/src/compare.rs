//! Side-by-side audit and execution of the identification frameworks.
//!
//! The harness sees the full law including latents, which the identifiers
//! never do; that asymmetry is the point. Audits check each framework's
//! assumptions against ground truth with a numeric margin, classification
//! sorts confounder models into the four overlap cells, the identifiers
//! run on the observed margin alone, and their output is scored against
//! the brute-force oracle. A budgeted search then exhibits one witness
//! model per cell, demonstrating that neither framework's assumption set
//! contains the other.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{check_completeness_discrete, identify_bridge, solve_bridge, CompletenessReport};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::models::{
    best_row_gap, generate, latent_factors, observed_margin, ConstraintFlags, Degeneracy,
    ModelSpec, Structure,
};
use crate::oracle::{adjust, frontdoor, CounterfactualLaw};
use crate::prob::{describe_assignment, multi_range, Assignment, FullLaw};
use crate::tensor::align::factor_match_error;
use crate::tensor::eigen::{identify_array, identify_mediator_array, ArrayMode};
use crate::tensor::{check_kruskal, KruskalReport};

const CP_RESTARTS: usize = 8;

/// One Markov restriction checked against the law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiVerdict {
    pub id: String,
    pub description: String,
    pub frameworks: Vec<String>,
    pub deviation: f64,
    pub pass: bool,
}

/// Smallest mass among the strata the identifiers condition on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositivityAudit {
    pub min_mass: f64,
    pub worst_stratum: String,
    pub pass: bool,
}

/// Completeness and bridge-equation solvability per treatment level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeAudit {
    pub completeness: Vec<CompletenessReport>,
    pub residuals: Vec<f64>,
    pub pass: bool,
}

/// Spectral conditions the eigendecomposition route needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenAudit {
    /// Proxies and latent share one cardinality.
    pub square: bool,
    pub treatment_proxy_min_singular: Vec<f64>,
    pub outcome_proxy_min_singular: f64,
    /// Best outcome row's smallest pairwise entry gap, per context.
    pub distinct_row_margins: Vec<f64>,
    pub pass: bool,
}

/// Uniqueness condition for the three-way decomposition, per context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KruskalAudit {
    pub per_level: Vec<KruskalReport>,
    pub pass: bool,
}

/// Everything the ground-truth audit establishes about one law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub structure: Structure,
    pub markov: Vec<CiVerdict>,
    /// All bridge-tagged restrictions pass; None when the structure has
    /// none.
    pub markov_bridge_pass: Option<bool>,
    pub markov_array_pass: Option<bool>,
    pub positivity: PositivityAudit,
    pub bridge: Option<BridgeAudit>,
    pub eigen: Option<EigenAudit>,
    pub kruskal: Option<KruskalAudit>,
}

/// Which framework's assumption set a confounder model falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentificationCell {
    Both,
    BridgeOnly,
    ArrayOnly,
    Neither,
}

impl IdentificationCell {
    pub const ALL: [IdentificationCell; 4] = [
        IdentificationCell::Both,
        IdentificationCell::BridgeOnly,
        IdentificationCell::ArrayOnly,
        IdentificationCell::Neither,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IdentificationCell::Both => "both",
            IdentificationCell::BridgeOnly => "bridge-only",
            IdentificationCell::ArrayOnly => "array-only",
            IdentificationCell::Neither => "neither",
        }
    }
}

/// What one identifier did on the observed margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifierOutcome {
    pub attempted: bool,
    /// Why the identifier was not attempted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_deviation_from_oracle: Option<f64>,
    /// Column-aligned error of the recovered latent factors against the
    /// generator's, when the recovered cardinality matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_recovery_error: Option<f64>,
}

impl IdentifierOutcome {
    fn skipped(reason: &str) -> IdentifierOutcome {
        IdentifierOutcome {
            attempted: false,
            reason: Some(reason.to_string()),
            method: None,
            error: None,
            counterfactual: None,
            max_deviation_from_oracle: None,
            latent_recovery_error: None,
        }
    }
}

/// Audit, classification, oracle and identifier results for one law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub audit: AssumptionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<IdentificationCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<CounterfactualLaw>,
    pub bridge: IdentifierOutcome,
    pub array: IdentifierOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontdoor: Option<IdentifierOutcome>,
    pub seed: u64,
}

/// Zero when the matrix cannot have full column rank, else the smallest
/// singular value.
fn column_rank_margin(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// Variables the identifiers condition on, whose joint must carry mass.
fn positivity_strata(structure: Structure) -> Vec<&'static str> {
    match structure {
        Structure::ConfounderStrict
        | Structure::ConfounderPermissive
        | Structure::MediatorProxies => vec!["Z", "A"],
        Structure::TripleProxy => vec!["Z"],
        Structure::FrontDoor => vec!["A", "M"],
    }
}

fn audit_positivity(law: &FullLaw, structure: Structure) -> Result<PositivityAudit> {
    let strata = positivity_strata(structure);
    let margin = law.marginalize(&strata)?;
    let cards: Vec<usize> = strata
        .iter()
        .map(|v| margin.cardinality(v))
        .collect::<Result<_>>()?;
    let mut min_mass = f64::INFINITY;
    let mut worst = Assignment::new();
    for (index, &mass) in multi_range(&cards).zip(margin.probabilities().iter()) {
        if mass < min_mass {
            min_mass = mass;
            worst = strata
                .iter()
                .zip(&index)
                .map(|(v, &i)| (v.to_string(), i))
                .collect();
        }
    }
    Ok(PositivityAudit {
        min_mass,
        worst_stratum: describe_assignment(&margin, &worst),
        pass: min_mass > 0.0,
    })
}

/// Checks every framework assumption against the full law. The report is
/// ground truth: identifiers never get to look at it.
pub fn audit(law: &FullLaw, structure: Structure, tol: &Tolerances) -> Result<AssumptionReport> {
    let mut markov = Vec::new();
    for stmt in structure.ci_statements() {
        let deviation = law.ci_deviation(&stmt.x, &stmt.y, &stmt.given)?;
        markov.push(CiVerdict {
            id: stmt.id.to_string(),
            description: stmt.description(),
            frameworks: stmt.frameworks.iter().map(|f| f.to_string()).collect(),
            deviation,
            pass: deviation <= tol.ci,
        });
    }
    let framework_pass = |name: &str| {
        let tagged: Vec<&CiVerdict> = markov
            .iter()
            .filter(|v| v.frameworks.iter().any(|f| f == name))
            .collect();
        if tagged.is_empty() {
            None
        } else {
            Some(tagged.iter().all(|v| v.pass))
        }
    };
    let markov_bridge_pass = framework_pass("bridge");
    let markov_array_pass = framework_pass("array");

    let positivity = audit_positivity(law, structure)?;

    let bridge_applies = matches!(
        structure,
        Structure::ConfounderStrict | Structure::ConfounderPermissive
    );
    let bridge = if bridge_applies {
        let latent = structure.latent_role().expect("confounder structure");
        let treatment = structure.treatment().expect("confounder structure");
        let levels = law.cardinality(treatment)?;
        let mut completeness = Vec::with_capacity(levels);
        for a in 0..levels {
            completeness.push(check_completeness_discrete(
                law, latent, "Z", treatment, a, tol,
            )?);
        }
        let margin = observed_margin(law, structure)?;
        let roles = structure.proxy_roles().expect("confounder structure");
        let mut residuals = Vec::with_capacity(levels);
        for a in 0..levels {
            let (_, residual) = solve_bridge(&margin, &roles, a, tol)?;
            residuals.push(residual);
        }
        let pass = completeness.iter().all(|c| c.complete)
            && residuals.iter().all(|&r| r <= tol.audit_bridge_residual);
        Some(BridgeAudit {
            completeness,
            residuals,
            pass,
        })
    } else {
        None
    };

    let (eigen, kruskal) = if structure.latent_role().is_some() {
        let factors = latent_factors(law, structure)?;
        let latent_card = factors.latent_marginal.len();
        let w_card = factors.outcome_proxy_given_latent.entries.nrows();
        let z_card = factors.treatment_proxy_given_latent[0].entries.nrows();
        let square = w_card == z_card && w_card == latent_card;
        let outcome_proxy_min_singular =
            column_rank_margin(&factors.outcome_proxy_given_latent.entries);
        let treatment_proxy_min_singular: Vec<f64> = factors
            .treatment_proxy_given_latent
            .iter()
            .map(|m| column_rank_margin(&m.entries))
            .collect();
        let distinct_row_margins: Vec<f64> = factors
            .outcome_given_latent
            .iter()
            .map(|m| best_row_gap(&m.entries))
            .collect();
        let eigen_pass = square
            && outcome_proxy_min_singular >= tol.audit_invertibility
            && treatment_proxy_min_singular
                .iter()
                .all(|&s| s >= tol.audit_invertibility)
            && distinct_row_margins.iter().all(|&g| g >= tol.distinct_rows);

        let mut per_level = Vec::new();
        for (level, pz) in factors.treatment_proxy_given_latent.iter().enumerate() {
            let mut col_factor = pz.entries.clone();
            for (i, &mass) in factors.latent_given_treatment[level].iter().enumerate() {
                for r in 0..col_factor.nrows() {
                    col_factor[(r, i)] *= mass;
                }
            }
            per_level.push(check_kruskal(
                &factors.outcome_proxy_given_latent.entries,
                &col_factor,
                &factors.outcome_given_latent[level].entries,
                tol,
            )?);
        }
        let kruskal_pass = per_level.iter().all(|r| r.holds);
        (
            Some(EigenAudit {
                square,
                treatment_proxy_min_singular,
                outcome_proxy_min_singular,
                distinct_row_margins,
                pass: eigen_pass,
            }),
            Some(KruskalAudit {
                per_level,
                pass: kruskal_pass,
            }),
        )
    } else {
        (None, None)
    };

    Ok(AssumptionReport {
        structure,
        markov,
        markov_bridge_pass,
        markov_array_pass,
        positivity,
        bridge,
        eigen,
        kruskal,
    })
}

/// Sorts a confounder audit into the overlap cell its assumptions land
/// in; None for structures outside the two-framework comparison.
pub fn classify(report: &AssumptionReport) -> Option<IdentificationCell> {
    if !matches!(
        report.structure,
        Structure::ConfounderStrict | Structure::ConfounderPermissive
    ) {
        return None;
    }
    let bridge_ok = report.markov_bridge_pass == Some(true)
        && report.positivity.pass
        && report.bridge.as_ref().map(|b| b.pass) == Some(true);
    let array_assumptions = report.eigen.as_ref().map(|e| e.pass) == Some(true)
        || report.kruskal.as_ref().map(|k| k.pass) == Some(true);
    let array_ok =
        report.markov_array_pass == Some(true) && report.positivity.pass && array_assumptions;
    Some(match (bridge_ok, array_ok) {
        (true, true) => IdentificationCell::Both,
        (true, false) => IdentificationCell::BridgeOnly,
        (false, true) => IdentificationCell::ArrayOnly,
        (false, false) => IdentificationCell::Neither,
    })
}

fn deviation_against(
    counterfactual: &CounterfactualLaw,
    oracle: Option<&CounterfactualLaw>,
) -> Result<Option<f64>> {
    match oracle {
        Some(truth) => Ok(Some(counterfactual.max_abs_difference(truth)?)),
        None => Ok(None),
    }
}

/// Runs every applicable identifier on the observed margin and scores it
/// against the brute-force oracle on the full law.
pub fn run_comparison(
    law: &FullLaw,
    structure: Structure,
    seed: u64,
    tol: &Tolerances,
) -> Result<ComparisonReport> {
    let audit = audit(law, structure, tol)?;
    let cell = classify(&audit);
    let margin = observed_margin(law, structure)?;

    let oracle = match structure.treatment() {
        Some(t) => Some(adjust(law, t, structure.outcome(), structure.adjustment_set())?),
        None => None,
    };

    let truth_factors = if structure.latent_role().is_some() {
        Some(latent_factors(law, structure)?)
    } else {
        None
    };

    let bridge = match structure {
        Structure::ConfounderStrict | Structure::ConfounderPermissive => {
            let roles = structure.proxy_roles().expect("confounder structure");
            match identify_bridge(&margin, &roles, tol) {
                Ok(solution) => IdentifierOutcome {
                    attempted: true,
                    reason: None,
                    method: Some("bridge".into()),
                    error: None,
                    max_deviation_from_oracle: deviation_against(
                        &solution.counterfactual,
                        oracle.as_ref(),
                    )?,
                    counterfactual: Some(solution.counterfactual),
                    latent_recovery_error: None,
                },
                Err(e) => IdentifierOutcome {
                    attempted: true,
                    reason: None,
                    method: Some("bridge".into()),
                    error: Some(e.to_string()),
                    counterfactual: None,
                    max_deviation_from_oracle: None,
                    latent_recovery_error: None,
                },
            }
        }
        Structure::TripleProxy => IdentifierOutcome::skipped("no treatment variable"),
        Structure::FrontDoor => IdentifierOutcome::skipped("no proxy variables"),
        Structure::MediatorProxies => {
            IdentifierOutcome::skipped("the bridge framework does not cover hidden mediators")
        }
    };

    let array = match structure {
        Structure::ConfounderStrict
        | Structure::ConfounderPermissive
        | Structure::MediatorProxies => {
            let roles = structure.proxy_roles().expect("proxy structure");
            let latent = structure.latent_role().expect("proxy structure");
            let eigen_passes = audit.eigen.as_ref().map(|e| e.pass) == Some(true);
            let (mode, rank) = if eigen_passes {
                (ArrayMode::Eigen, None)
            } else {
                (ArrayMode::Cp, Some(law.cardinality(latent)?))
            };
            let run = if structure == Structure::MediatorProxies {
                identify_mediator_array(&margin, &roles, mode, rank, CP_RESTARTS, seed, tol)
            } else {
                identify_array(&margin, &roles, mode, rank, CP_RESTARTS, seed, tol)
            };
            match run {
                Ok(result) => {
                    let truth = truth_factors.as_ref().expect("proxy structure");
                    let latent_recovery_error = if result.recovery.latent_cardinality
                        == truth.latent_marginal.len()
                    {
                        let mut recovered: Vec<&DMatrix<f64>> =
                            vec![&result.recovery.outcome_proxy_given_latent.entries];
                        recovered.extend(
                            result.recovery.outcome_given_latent.iter().map(|m| &m.entries),
                        );
                        let mut reference: Vec<&DMatrix<f64>> =
                            vec![&truth.outcome_proxy_given_latent.entries];
                        reference
                            .extend(truth.outcome_given_latent.iter().map(|m| &m.entries));
                        Some(factor_match_error(&recovered, &reference)?)
                    } else {
                        None
                    };
                    IdentifierOutcome {
                        attempted: true,
                        reason: None,
                        method: Some(result.recovery.diagnostics.method.clone()),
                        error: None,
                        max_deviation_from_oracle: deviation_against(
                            &result.counterfactual,
                            oracle.as_ref(),
                        )?,
                        counterfactual: Some(result.counterfactual),
                        latent_recovery_error,
                    }
                }
                Err(e) => IdentifierOutcome {
                    attempted: true,
                    reason: None,
                    method: Some(mode.name().to_string()),
                    error: Some(e.to_string()),
                    counterfactual: None,
                    max_deviation_from_oracle: None,
                    latent_recovery_error: None,
                },
            }
        }
        Structure::TripleProxy => IdentifierOutcome::skipped("no treatment variable"),
        Structure::FrontDoor => IdentifierOutcome::skipped("no proxy variables"),
    };

    let frontdoor_outcome = if structure == Structure::FrontDoor {
        Some(match frontdoor(&margin, "A", "M", "Y") {
            Ok(counterfactual) => IdentifierOutcome {
                attempted: true,
                reason: None,
                method: Some("front-door".into()),
                error: None,
                max_deviation_from_oracle: deviation_against(&counterfactual, oracle.as_ref())?,
                counterfactual: Some(counterfactual),
                latent_recovery_error: None,
            },
            Err(e) => IdentifierOutcome {
                attempted: true,
                reason: None,
                method: Some("front-door".into()),
                error: Some(e.to_string()),
                counterfactual: None,
                max_deviation_from_oracle: None,
                latent_recovery_error: None,
            },
        })
    } else {
        None
    };

    Ok(ComparisonReport {
        audit,
        cell,
        oracle,
        bridge,
        array,
        frontdoor: frontdoor_outcome,
        seed,
    })
}

fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn csv_opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn csv_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat per-model summary, one row per report.
pub fn comparison_csv(reports: &[ComparisonReport]) -> String {
    let mut out = String::from(
        "seed,structure,cell,markov_bridge_pass,markov_array_pass,positivity_pass,\
         bridge_audit_pass,eigen_audit_pass,kruskal_audit_pass,bridge_attempted,\
         bridge_error,bridge_deviation,array_attempted,array_method,array_error,\
         array_deviation,array_factor_error,frontdoor_deviation\n",
    );
    for r in reports {
        let row = [
            r.seed.to_string(),
            r.audit.structure.name().to_string(),
            r.cell.map(|c| c.name().to_string()).unwrap_or_default(),
            csv_opt_bool(r.audit.markov_bridge_pass),
            csv_opt_bool(r.audit.markov_array_pass),
            r.audit.positivity.pass.to_string(),
            csv_opt_bool(r.audit.bridge.as_ref().map(|b| b.pass)),
            csv_opt_bool(r.audit.eigen.as_ref().map(|e| e.pass)),
            csv_opt_bool(r.audit.kruskal.as_ref().map(|k| k.pass)),
            r.bridge.attempted.to_string(),
            csv_field(r.bridge.error.as_deref().unwrap_or("")),
            csv_opt_f64(r.bridge.max_deviation_from_oracle),
            r.array.attempted.to_string(),
            r.array.method.clone().unwrap_or_default(),
            csv_field(r.array.error.as_deref().unwrap_or("")),
            csv_opt_f64(r.array.max_deviation_from_oracle),
            csv_opt_f64(r.array.latent_recovery_error),
            csv_opt_f64(
                r.frontdoor
                    .as_ref()
                    .and_then(|f| f.max_deviation_from_oracle),
            ),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One model exhibiting a cell, reproducible from its spec alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub cell: IdentificationCell,
    pub spec: ModelSpec,
    pub report: ComparisonReport,
}

/// Result of the witness search across the four overlap cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub witnesses: Vec<Witness>,
    pub examined: usize,
    pub budget: usize,
    pub complete: bool,
    pub missing: Vec<IdentificationCell>,
    pub seed: u64,
}

/// Cardinalities and constraints aimed at one cell. The shapes make the
/// failing framework infeasible structurally, so hits come fast.
fn cell_template(cell: IdentificationCell, seed: u64) -> ModelSpec {
    let cards = |u: usize, z: usize, w: usize, y: usize| -> BTreeMap<String, usize> {
        [
            ("U".to_string(), u),
            ("Z".to_string(), z),
            ("W".to_string(), w),
            ("A".to_string(), 2),
            ("Y".to_string(), y),
        ]
        .into_iter()
        .collect()
    };
    let mut spec = match cell {
        // Square, invertible, separated outcomes: everything works.
        IdentificationCell::Both => {
            let mut s = ModelSpec::new(Structure::ConfounderStrict, cards(2, 2, 2, 2), seed);
            s.constraints = ConstraintFlags {
                force_invertible: true,
                force_distinct_rows: true,
                ..ConstraintFlags::default()
            };
            s
        }
        // Outcome detached from the latent kills eigenvalue separation and
        // the decomposition condition; the bridge equation still holds.
        IdentificationCell::BridgeOnly => {
            let mut s = ModelSpec::new(Structure::ConfounderStrict, cards(2, 2, 2, 3), seed);
            s.constraints.force_invertible = true;
            s.degeneracy = Some(Degeneracy::OutcomeDetachedFromLatent);
            s
        }
        // Treatment proxy too coarse for completeness, but the three axes
        // together still reach the decomposition threshold.
        IdentificationCell::ArrayOnly => {
            let mut s = ModelSpec::new(Structure::ConfounderStrict, cards(3, 2, 3, 3), seed);
            s.constraints = ConstraintFlags {
                force_kruskal: true,
                force_distinct_rows: true,
                ..ConstraintFlags::default()
            };
            s
        }
        // Both proxies too coarse for a three-state latent.
        IdentificationCell::Neither => {
            ModelSpec::new(Structure::ConfounderStrict, cards(3, 2, 2, 2), seed)
        }
    };
    spec.dotted_edges = true;
    spec
}

/// A witness must land in its cell by classification; where a framework's
/// audit passes and its identifier is numerically reliable, the identifier
/// must also reproduce the oracle.
fn corroborated(cell: IdentificationCell, report: &ComparisonReport, tol: &Tolerances) -> bool {
    let bridge_ok = report
        .bridge
        .max_deviation_from_oracle
        .map(|d| d <= tol.identification);
    let array_ok = report
        .array
        .max_deviation_from_oracle
        .map(|d| d <= tol.identification);
    match cell {
        IdentificationCell::Both => bridge_ok == Some(true) && array_ok == Some(true),
        IdentificationCell::BridgeOnly => bridge_ok == Some(true),
        IdentificationCell::ArrayOnly | IdentificationCell::Neither => true,
    }
}

fn evaluate_candidate(
    cell: IdentificationCell,
    candidate_seed: u64,
    tol: &Tolerances,
) -> Result<Option<Witness>> {
    let spec = cell_template(cell, candidate_seed);
    let law = match generate(&spec, tol) {
        Ok(law) => law,
        // A rejection-cap failure just spends budget.
        Err(Error::Generation { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let report = run_comparison(&law, spec.structure, candidate_seed, tol)?;
    if report.cell == Some(cell) && corroborated(cell, &report, tol) {
        Ok(Some(Witness { cell, spec, report }))
    } else {
        Ok(None)
    }
}

/// Searches for one witness model per overlap cell within a budget of
/// generated models. Candidate seeds derive from the master seed, one
/// round-robin batch across unfilled cells per round; batches run on the
/// rayon pool, and the result is identical at any thread count.
pub fn search_nonnested(budget: usize, seed: u64, tol: &Tolerances) -> Result<SearchReport> {
    let mut witnesses: Vec<Option<Witness>> = vec![None; IdentificationCell::ALL.len()];
    let mut examined = 0;
    let mut attempt = 0u64;
    while examined < budget && witnesses.iter().any(|w| w.is_none()) {
        let mut batch = Vec::new();
        for (idx, &cell) in IdentificationCell::ALL.iter().enumerate() {
            if witnesses[idx].is_none() && examined + batch.len() < budget {
                batch.push((idx, cell, seed.wrapping_add(attempt * 4 + idx as u64)));
            }
        }
        if batch.is_empty() {
            break;
        }
        examined += batch.len();
        let results: Vec<(usize, Result<Option<Witness>>)> = batch
            .into_par_iter()
            .map(|(idx, cell, candidate_seed)| {
                (idx, evaluate_candidate(cell, candidate_seed, tol))
            })
            .collect();
        for (idx, outcome) in results {
            if let Some(witness) = outcome? {
                witnesses[idx] = Some(witness);
            }
        }
        attempt += 1;
    }
    let missing: Vec<IdentificationCell> = IdentificationCell::ALL
        .iter()
        .zip(&witnesses)
        .filter(|(_, w)| w.is_none())
        .map(|(c, _)| *c)
        .collect();
    Ok(SearchReport {
        witnesses: witnesses.into_iter().flatten().collect(),
        examined,
        budget,
        complete: missing.is_empty(),
        missing,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cards(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn well_posed_confounder_lands_in_both() {
        let tol = Tolerances::default();
        let spec = cell_template(IdentificationCell::Both, 41);
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 41, &tol).unwrap();
        assert_eq!(report.cell, Some(IdentificationCell::Both));
        assert_eq!(report.audit.markov_bridge_pass, Some(true));
        assert_eq!(report.audit.markov_array_pass, Some(true));
        assert!(report.audit.positivity.pass);
        let bridge_dev = report.bridge.max_deviation_from_oracle.unwrap();
        assert!(bridge_dev <= 1e-8, "bridge dev {bridge_dev:e}");
        assert_eq!(report.array.method.as_deref(), Some("eigen"));
        let array_dev = report.array.max_deviation_from_oracle.unwrap();
        assert!(array_dev <= 1e-8, "array dev {array_dev:e}");
        assert!(report.array.latent_recovery_error.unwrap() <= 1e-6);
        assert!(report.frontdoor.is_none());
    }

    #[test]
    fn detached_outcome_lands_in_bridge_only() {
        let tol = Tolerances::default();
        let spec = cell_template(IdentificationCell::BridgeOnly, 7);
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 7, &tol).unwrap();
        assert_eq!(report.cell, Some(IdentificationCell::BridgeOnly));
        // The Markov restrictions all hold; the failure is spectral.
        assert_eq!(report.audit.markov_array_pass, Some(true));
        let eigen = report.audit.eigen.as_ref().unwrap();
        assert!(!eigen.pass);
        assert!(eigen.distinct_row_margins.iter().all(|&g| g < 1e-6));
        assert!(!report.audit.kruskal.as_ref().unwrap().pass);
        let bridge_dev = report.bridge.max_deviation_from_oracle.unwrap();
        assert!(bridge_dev <= 1e-8, "bridge dev {bridge_dev:e}");
        assert!(report.array.attempted);
    }

    #[test]
    fn coarse_treatment_proxy_lands_in_array_only() {
        let tol = Tolerances::default();
        let spec = cell_template(IdentificationCell::ArrayOnly, 19);
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 19, &tol).unwrap();
        assert_eq!(report.cell, Some(IdentificationCell::ArrayOnly));
        let bridge_audit = report.audit.bridge.as_ref().unwrap();
        assert!(!bridge_audit.pass);
        assert!(bridge_audit.completeness.iter().any(|c| !c.complete));
        assert!(report.audit.kruskal.as_ref().unwrap().pass);
        assert!(!report.audit.eigen.as_ref().unwrap().pass);
        assert_eq!(report.array.method.as_deref(), Some("cp"));
    }

    #[test]
    fn coarse_proxies_land_in_neither() {
        let tol = Tolerances::default();
        let spec = cell_template(IdentificationCell::Neither, 3);
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 3, &tol).unwrap();
        assert_eq!(report.cell, Some(IdentificationCell::Neither));
        assert_eq!(report.audit.markov_bridge_pass, Some(true));
        assert_eq!(report.audit.markov_array_pass, Some(true));
    }

    #[test]
    fn permissive_dotted_edges_classify_as_bridge_only() {
        let tol = Tolerances::default();
        let spec = ModelSpec::new(
            Structure::ConfounderPermissive,
            cards(&[("U", 2), ("Z", 2), ("W", 2), ("A", 2), ("Y", 2)]),
            23,
        );
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 23, &tol).unwrap();
        // The outcome listens to its proxy, so the array restrictions fail
        // while the bridge restrictions and equation survive.
        assert_eq!(report.audit.markov_bridge_pass, Some(true));
        assert_eq!(report.audit.markov_array_pass, Some(false));
        assert_eq!(report.cell, Some(IdentificationCell::BridgeOnly));
        let bridge_dev = report.bridge.max_deviation_from_oracle.unwrap();
        assert!(bridge_dev <= 1e-8, "bridge dev {bridge_dev:e}");
    }

    #[test]
    fn front_door_runs_only_the_frontdoor_identifier() {
        let tol = Tolerances::default();
        let spec = ModelSpec::new(
            Structure::FrontDoor,
            cards(&[("U", 2), ("A", 2), ("M", 3), ("Y", 2)]),
            31,
        );
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 31, &tol).unwrap();
        assert!(report.cell.is_none());
        assert!(report.audit.bridge.is_none());
        assert!(report.audit.eigen.is_none());
        assert!(report.audit.kruskal.is_none());
        assert!(report.audit.markov_bridge_pass.is_none());
        assert!(!report.bridge.attempted);
        assert!(!report.array.attempted);
        let fd = report.frontdoor.as_ref().unwrap();
        let dev = fd.max_deviation_from_oracle.unwrap();
        assert!(dev <= 1e-12, "front-door dev {dev:e}");
    }

    #[test]
    fn triple_proxy_is_audit_only() {
        let tol = Tolerances::default();
        let spec = ModelSpec::new(
            Structure::TripleProxy,
            cards(&[("L", 2), ("Z", 2), ("W", 2), ("Y", 2)]),
            13,
        );
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 13, &tol).unwrap();
        assert!(report.cell.is_none());
        assert!(report.oracle.is_none());
        assert!(!report.bridge.attempted);
        assert!(!report.array.attempted);
        assert_eq!(report.bridge.reason.as_deref(), Some("no treatment variable"));
        // Single-context audits still run against the latent.
        assert!(report.audit.eigen.is_some());
        assert_eq!(report.audit.kruskal.as_ref().unwrap().per_level.len(), 1);
        assert!(report.audit.bridge.is_none());
    }

    #[test]
    fn hidden_mediator_identifies_through_the_array_route() {
        let tol = Tolerances::default();
        let mut spec = ModelSpec::new(
            Structure::MediatorProxies,
            cards(&[("U", 2), ("A", 2), ("M", 2), ("Z", 2), ("W", 2), ("Y", 2)]),
            29,
        );
        spec.constraints = ConstraintFlags {
            force_invertible: true,
            force_distinct_rows: true,
            ..ConstraintFlags::default()
        };
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 29, &tol).unwrap();
        assert!(report.cell.is_none());
        assert!(!report.bridge.attempted);
        assert!(report.audit.eigen.as_ref().unwrap().pass);
        let dev = report.array.max_deviation_from_oracle.unwrap();
        assert!(dev <= 1e-8, "mediator array dev {dev:e}");
    }

    #[test]
    fn search_finds_all_four_cells_and_witnesses_replay() {
        let tol = Tolerances::default();
        let report = search_nonnested(100, 2026, &tol).unwrap();
        assert!(report.complete, "missing cells: {:?}", report.missing);
        assert_eq!(report.witnesses.len(), 4);
        assert!(report.examined <= 100);
        for witness in &report.witnesses {
            let law = generate(&witness.spec, &tol).unwrap();
            let replay = run_comparison(&law, witness.spec.structure, witness.spec.seed, &tol)
                .unwrap();
            assert_eq!(replay.cell, Some(witness.cell));
        }
        let cells: Vec<IdentificationCell> =
            report.witnesses.iter().map(|w| w.cell).collect();
        assert_eq!(cells, IdentificationCell::ALL.to_vec());
    }

    #[test]
    fn exhausted_budget_reports_missing_cells() {
        let tol = Tolerances::default();
        let report = search_nonnested(2, 5, &tol).unwrap();
        assert_eq!(report.examined, 2);
        assert!(!report.complete);
        assert!(!report.missing.is_empty());
    }

    #[test]
    fn csv_rows_align_with_reports() {
        let tol = Tolerances::default();
        let mut reports = Vec::new();
        for cell in [IdentificationCell::Both, IdentificationCell::Neither] {
            let spec = cell_template(cell, 61);
            let law = generate(&spec, &tol).unwrap();
            reports.push(run_comparison(&law, spec.structure, 61, &tol).unwrap());
        }
        let csv = comparison_csv(&reports);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        let header_cols = lines[0].split(',').count();
        assert_eq!(lines[1].split(',').count(), header_cols);
        assert!(lines[1].contains("both"));
        assert!(lines[2].contains("neither"));
    }

    #[test]
    fn comparison_report_round_trips_through_json() {
        let tol = Tolerances::default();
        let spec = cell_template(IdentificationCell::Both, 77);
        let law = generate(&spec, &tol).unwrap();
        let report = run_comparison(&law, spec.structure, 77, &tol).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: ComparisonReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.cell, report.cell);
        assert_eq!(back.seed, report.seed);
        assert_eq!(
            back.bridge.max_deviation_from_oracle,
            report.bridge.max_deviation_from_oracle
        );
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
