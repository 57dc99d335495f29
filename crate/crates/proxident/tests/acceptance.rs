//! Acceptance gate for the toolkit. Each test covers one criterion and
//! prints a single `ACCEPTANCE n: PASS` or `ACCEPTANCE n: FAIL` line; run
//! with `--nocapture` to see the lines as they complete.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxident::compare::{audit, run_comparison, search_nonnested, IdentificationCell};
use proxident::bridge::identify_bridge;
use proxident::models::{
    generate, latent_factors, observed_margin, ConstraintFlags, ModelSpec, Structure,
};
use proxident::oracle::{adjust, frontdoor};
use proxident::prob::CategoricalDomain;
use proxident::sem::GaussianSem;
use proxident::tensor::align::factor_match_error;
use proxident::tensor::als::recover_cp;
use proxident::tensor::eigen::{identify_array, recover_eigen, ArrayMode};
use proxident::tensor::eigen::identify_mediator_array;
use proxident::tensor::labels::{
    recover_labels, LabelFunctional, LabelMode, ProxyAxis,
};
use proxident::tensor::{check_kruskal, k_rank, CpFactors, ThreeWayArray};
use proxident::{Error, ProxyRoles, Tolerances};

fn criterion(n: usize, what: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("ACCEPTANCE {n}: PASS ({what}; {detail})"),
        Err(e) => {
            println!("ACCEPTANCE {n}: FAIL ({what}): {e}");
            panic!("acceptance criterion {n} failed: {e}");
        }
    }
}

fn cards(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn confounder_spec(cardinalities: BTreeMap<String, usize>, seed: u64) -> ModelSpec {
    ModelSpec {
        structure: Structure::ConfounderStrict,
        cardinalities,
        seed,
        dotted_edges: true,
        constraints: ConstraintFlags::default(),
        degeneracy: None,
    }
}

/// Unit-sum column normalization, the scale-free form used to compare
/// decomposition factors.
fn unit_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for c in 0..out.ncols() {
        let s: f64 = out.column(c).sum();
        for r in 0..out.nrows() {
            out[(r, c)] /= s;
        }
    }
    out
}

#[test]
fn bridge_identification_matches_the_oracle_on_audited_models() {
    criterion(1, "bridge identifier vs oracle on 200 audited models", || {
        let started = Instant::now();
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        let mut worst: f64 = 0.0;
        while accepted < 200 {
            attempts += 1;
            if attempts > 2000 {
                return Err(format!("only {accepted} audited models in {attempts} attempts"));
            }
            let u = rng.gen_range(2..=4);
            let spec = confounder_spec(
                cards(&[
                    ("U", u),
                    ("Z", rng.gen_range(u..=4)),
                    ("W", rng.gen_range(u..=4)),
                    ("A", rng.gen_range(2..=4)),
                    ("Y", rng.gen_range(2..=4)),
                ]),
                rng.gen(),
            );
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let report = audit(&law, spec.structure, &tol).map_err(|e| e.to_string())?;
            let bridge_audit = report.bridge.as_ref().expect("confounder audit");
            if !bridge_audit.pass {
                continue;
            }
            accepted += 1;
            let margin = observed_margin(&law, spec.structure).map_err(|e| e.to_string())?;
            let solution = identify_bridge(&margin, &ProxyRoles::default(), &tol)
                .map_err(|e| format!("identification failed on audited model: {e}"))?;
            let oracle = adjust(&law, "A", "Y", spec.structure.adjustment_set())
                .map_err(|e| e.to_string())?;
            let dev = solution
                .counterfactual
                .max_abs_difference(&oracle)
                .map_err(|e| e.to_string())?;
            worst = worst.max(dev);
            if dev > 1e-8 {
                return Err(format!("deviation {dev} on seed {}", spec.seed));
            }
        }
        let elapsed = started.elapsed();
        if elapsed.as_secs() >= 60 {
            return Err(format!("took {elapsed:?}, budget 60s"));
        }
        Ok(format!(
            "{accepted} models, worst deviation {worst:.3e}, {elapsed:?}"
        ))
    });
}

#[test]
fn eigendecomposition_recovers_generator_factors_and_the_oracle() {
    criterion(2, "latent factor recovery and identification on 200 models", || {
        let started = Instant::now();
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1002);
        let mut worst_factor: f64 = 0.0;
        let mut worst_cf: f64 = 0.0;
        for _ in 0..200 {
            let k = rng.gen_range(2..=3);
            let spec = ModelSpec {
                structure: Structure::ConfounderStrict,
                cardinalities: cards(&[
                    ("U", k),
                    ("Z", k),
                    ("W", k),
                    ("A", rng.gen_range(2..=3)),
                    ("Y", rng.gen_range(2..=4)),
                ]),
                seed: rng.gen(),
                dotted_edges: true,
                constraints: ConstraintFlags {
                    force_invertible: true,
                    force_distinct_rows: true,
                    ..ConstraintFlags::default()
                },
                degeneracy: None,
            };
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let report = audit(&law, spec.structure, &tol).map_err(|e| e.to_string())?;
            if !report.eigen.as_ref().expect("latent audit").pass {
                return Err(format!("forced model fails its own audit, seed {}", spec.seed));
            }

            let rec = recover_eigen(&law, &ProxyRoles::default(), spec.seed, &tol)
                .map_err(|e| e.to_string())?;
            let truth = latent_factors(&law, spec.structure).map_err(|e| e.to_string())?;
            let treatment_rows: Vec<DMatrix<f64>> = rec
                .latent_given_treatment
                .iter()
                .map(|f| DMatrix::from_row_slice(1, f.len(), f))
                .collect();
            let truth_rows: Vec<DMatrix<f64>> = truth
                .latent_given_treatment
                .iter()
                .map(|f| DMatrix::from_row_slice(1, f.len(), f))
                .collect();
            let mut recovered: Vec<&DMatrix<f64>> = vec![&rec.outcome_proxy_given_latent.entries];
            recovered.extend(rec.outcome_given_latent.iter().map(|m| &m.entries));
            recovered.extend(treatment_rows.iter());
            let mut reference: Vec<&DMatrix<f64>> = vec![&truth.outcome_proxy_given_latent.entries];
            reference.extend(truth.outcome_given_latent.iter().map(|m| &m.entries));
            reference.extend(truth_rows.iter());
            let factor_err =
                factor_match_error(&recovered, &reference).map_err(|e| e.to_string())?;
            worst_factor = worst_factor.max(factor_err);
            if factor_err > 1e-8 {
                return Err(format!("factor error {factor_err} on seed {}", spec.seed));
            }

            let margin = observed_margin(&law, spec.structure).map_err(|e| e.to_string())?;
            let run = identify_array(
                &margin,
                &ProxyRoles::default(),
                ArrayMode::Eigen,
                None,
                1,
                spec.seed,
                &tol,
            )
            .map_err(|e| e.to_string())?;
            let oracle = adjust(&law, "A", "Y", spec.structure.adjustment_set())
                .map_err(|e| e.to_string())?;
            let dev = run
                .counterfactual
                .max_abs_difference(&oracle)
                .map_err(|e| e.to_string())?;
            worst_cf = worst_cf.max(dev);
            if dev > 1e-8 {
                return Err(format!("identification deviation {dev} on seed {}", spec.seed));
            }
        }
        let elapsed = started.elapsed();
        if elapsed.as_secs() >= 120 {
            return Err(format!("took {elapsed:?}, budget 120s"));
        }
        Ok(format!(
            "worst factor error {worst_factor:.3e}, worst deviation {worst_cf:.3e}, {elapsed:?}"
        ))
    });
}

#[test]
fn every_model_passing_the_spectral_audit_also_passes_the_bridge_audit() {
    criterion(3, "spectral-audit passers all bridge-solvable over 1000 samples", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1003);
        let mut passers = 0usize;
        for _ in 0..1000 {
            let k = rng.gen_range(2..=3);
            let spec = confounder_spec(
                cards(&[
                    ("U", k),
                    ("Z", k),
                    ("W", k),
                    ("A", rng.gen_range(2..=3)),
                    ("Y", rng.gen_range(2..=3)),
                ]),
                rng.gen(),
            );
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let report = audit(&law, spec.structure, &tol).map_err(|e| e.to_string())?;
            let eigen_pass = report.eigen.as_ref().is_some_and(|e| e.pass);
            if !eigen_pass {
                continue;
            }
            passers += 1;
            let bridge_audit = report.bridge.as_ref().expect("confounder audit");
            if !bridge_audit.pass {
                let residual = bridge_audit
                    .residuals
                    .iter()
                    .cloned()
                    .fold(0.0f64, f64::max);
                return Err(format!(
                    "counterexample at seed {}: spectral audit passes but bridge \
                     residual {residual:.3e}",
                    spec.seed
                ));
            }
        }
        if passers == 0 {
            return Err("no sampled model passed the spectral audit".into());
        }
        Ok(format!("{passers} of 1000 samples passed, zero counterexamples"))
    });
}

#[test]
fn the_witness_search_fills_all_four_cells_reproducibly() {
    criterion(4, "witness search over four overlap cells", || {
        let tol = Tolerances::default();
        let report = search_nonnested(10_000, 41, &tol).map_err(|e| e.to_string())?;
        if !report.complete {
            return Err(format!("missing cells: {:?}", report.missing));
        }
        let mut seen = Vec::new();
        for witness in &report.witnesses {
            // Re-verify from the recorded spec alone.
            let law = generate(&witness.spec, &tol).map_err(|e| e.to_string())?;
            let rerun = run_comparison(&law, witness.spec.structure, witness.spec.seed, &tol)
                .map_err(|e| e.to_string())?;
            if rerun.cell != Some(witness.cell) {
                return Err(format!(
                    "witness for {:?} reclassified as {:?} on regeneration",
                    witness.cell, rerun.cell
                ));
            }
            seen.push(witness.cell);
        }
        for cell in [
            IdentificationCell::Both,
            IdentificationCell::BridgeOnly,
            IdentificationCell::ArrayOnly,
            IdentificationCell::Neither,
        ] {
            if !seen.contains(&cell) {
                return Err(format!("no witness for {cell:?}"));
            }
        }
        Ok(format!(
            "4 witnesses re-verified after examining {} candidates",
            report.examined
        ))
    });
}

/// Exact rank by fraction-free integer elimination; entries stay well
/// inside i128 for the sizes used here.
fn exact_rank(mut m: Vec<Vec<i128>>) -> usize {
    let rows = m.len();
    if rows == 0 || m[0].is_empty() {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut r = 0;
    for c in 0..cols {
        if r >= rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(r, p);
        for i in (r + 1)..rows {
            for j in (c + 1)..cols {
                m[i][j] = m[i][j] * m[r][c] - m[i][c] * m[r][j];
            }
            m[i][c] = 0;
        }
        rank += 1;
        r += 1;
    }
    rank
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn recurse(start: usize, n: usize, size: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(i + 1, n, size, current, out);
            current.pop();
        }
    }
    recurse(0, n, size, &mut current, &mut out);
    out
}

/// Largest k such that every k-column subset has exact rank k.
fn exact_k_rank(matrix: &[Vec<i128>]) -> usize {
    let rows = matrix.len();
    let n = matrix[0].len();
    let mut k = 0;
    for size in 1..=n.min(rows) {
        for subset in subsets(n, size) {
            let sub: Vec<Vec<i128>> = matrix
                .iter()
                .map(|row| subset.iter().map(|&j| row[j]).collect())
                .collect();
            if exact_rank(sub) < size {
                return k;
            }
        }
        k = size;
    }
    k
}

#[test]
fn kruskal_rank_agrees_with_an_exact_integer_oracle() {
    criterion(5, "k-rank vs exact subset oracle on 500 matrices", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1005);
        for trial in 0..500 {
            let rows = rng.gen_range(1..=6);
            let ncols = rng.gen_range(1..=6);
            let ints: Vec<Vec<i128>> = (0..rows)
                .map(|_| (0..ncols).map(|_| rng.gen_range(-3..=3)).collect())
                .collect();
            let m = DMatrix::from_fn(rows, ncols, |r, c| ints[r][c] as f64);
            let fast = k_rank(&m, &tol);
            let exact = exact_k_rank(&ints);
            if fast != exact {
                return Err(format!(
                    "trial {trial}: k-rank {fast} but exact oracle {exact} on {ints:?}"
                ));
            }
        }

        // Margins are integer arithmetic on the same k-ranks.
        for _ in 0..50 {
            let r = rng.gen_range(1..=3);
            let dim = |rng: &mut ChaCha8Rng| rng.gen_range(r.max(2)..=5);
            let (i, j, k) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
            let sample = |rng: &mut ChaCha8Rng, rows: usize| -> (Vec<Vec<i128>>, DMatrix<f64>) {
                let ints: Vec<Vec<i128>> = (0..rows)
                    .map(|_| (0..r).map(|_| rng.gen_range(0..=3)).collect())
                    .collect();
                let m = DMatrix::from_fn(rows, r, |a, b| ints[a][b] as f64);
                (ints, m)
            };
            let (ai, a) = sample(&mut rng, i);
            let (bi, b) = sample(&mut rng, j);
            let (ci, c) = sample(&mut rng, k);
            let report = check_kruskal(&a, &b, &c, &tol).map_err(|e| e.to_string())?;
            let expected = exact_k_rank(&ai) as i64 + exact_k_rank(&bi) as i64
                + exact_k_rank(&ci) as i64
                - 2 * r as i64
                - 2;
            if i64::from(report.margin) != expected {
                return Err(format!(
                    "margin {} but exact arithmetic gives {expected}",
                    report.margin
                ));
            }
        }
        Ok("500 matrices and 50 factor triples agree".into())
    });
}

#[test]
fn certified_tensors_decompose_to_their_generating_factors() {
    criterion(6, "decomposition uniqueness on 50 certified tensors", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1006);
        let mut done = 0usize;
        let mut worst_fit: f64 = 0.0;
        let mut worst_match: f64 = 0.0;
        while done < 50 {
            let rank = rng.gen_range(2..=4);
            let dims = [
                rng.gen_range(4..=8),
                rng.gen_range(4..=8),
                rng.gen_range(4..=8),
            ];
            let factor = |rng: &mut ChaCha8Rng, rows: usize| {
                DMatrix::from_fn(rows, rank, |_, _| rng.gen_range(0.05..1.0))
            };
            let truth = CpFactors {
                row: factor(&mut rng, dims[0]),
                col: factor(&mut rng, dims[1]),
                outcome: factor(&mut rng, dims[2]),
            };
            let certificate = check_kruskal(&truth.row, &truth.col, &truth.outcome, &tol)
                .map_err(|e| e.to_string())?;
            if !certificate.holds {
                continue;
            }
            done += 1;
            let tensor = ThreeWayArray::new(
                [
                    CategoricalDomain::indexed("row", dims[0]).map_err(|e| e.to_string())?,
                    CategoricalDomain::indexed("col", dims[1]).map_err(|e| e.to_string())?,
                    CategoricalDomain::indexed("outcome", dims[2]).map_err(|e| e.to_string())?,
                ],
                truth.reconstruct(),
            )
            .map_err(|e| e.to_string())?;
            let reference = [
                unit_columns(&truth.row),
                unit_columns(&truth.col),
                unit_columns(&truth.outcome),
            ];
            for seed in [7u64, 5417u64] {
                let rec = recover_cp(&tensor, rank, 3, seed, &tol).map_err(|e| e.to_string())?;
                worst_fit = worst_fit.max(rec.fit);
                if rec.fit > 1e-6 {
                    return Err(format!("fit {} at dims {dims:?} rank {rank}", rec.fit));
                }
                let recovered = [
                    unit_columns(&rec.factors.row),
                    unit_columns(&rec.factors.col),
                    unit_columns(&rec.factors.outcome),
                ];
                let err = factor_match_error(
                    &[&recovered[0], &recovered[1], &recovered[2]],
                    &[&reference[0], &reference[1], &reference[2]],
                )
                .map_err(|e| e.to_string())?;
                worst_match = worst_match.max(err);
                if err > 1e-5 {
                    return Err(format!(
                        "factor mismatch {err} at dims {dims:?} rank {rank} seed {seed}"
                    ));
                }
            }
        }
        Ok(format!(
            "50 tensors, two seeds each, worst fit {worst_fit:.3e}, worst factor error {worst_match:.3e}"
        ))
    });
}

#[test]
fn frontdoor_equals_latent_adjustment_on_generated_laws() {
    criterion(7, "front-door vs latent adjustment on 200 laws", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1007);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let spec = ModelSpec {
                structure: Structure::FrontDoor,
                cardinalities: cards(&[
                    ("U", rng.gen_range(2..=3)),
                    ("A", rng.gen_range(2..=3)),
                    ("M", rng.gen_range(2..=4)),
                    ("Y", rng.gen_range(2..=3)),
                ]),
                seed: rng.gen(),
                dotted_edges: true,
                constraints: ConstraintFlags::default(),
                degeneracy: None,
            };
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let via_mediator = frontdoor(&law, "A", "M", "Y").map_err(|e| e.to_string())?;
            let via_latent = adjust(&law, "A", "Y", &["U"]).map_err(|e| e.to_string())?;
            let dev = via_mediator
                .max_abs_difference(&via_latent)
                .map_err(|e| e.to_string())?;
            worst = worst.max(dev);
            if dev > 1e-12 {
                return Err(format!("deviation {dev} on seed {}", spec.seed));
            }
        }
        Ok(format!("200 laws, worst deviation {worst:.3e}"))
    });
}

#[test]
fn the_mediator_pipeline_matches_the_oracle_on_audited_models() {
    criterion(8, "mediator-proxy identification on 100 audited models", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1008);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.gen_range(2..=3);
            let spec = ModelSpec {
                structure: Structure::MediatorProxies,
                cardinalities: cards(&[
                    ("U", rng.gen_range(2..=3)),
                    ("A", rng.gen_range(2..=3)),
                    ("M", k),
                    ("Z", k),
                    ("W", k),
                    ("Y", rng.gen_range(2..=3)),
                ]),
                seed: rng.gen(),
                dotted_edges: true,
                constraints: ConstraintFlags {
                    force_invertible: true,
                    force_distinct_rows: true,
                    ..ConstraintFlags::default()
                },
                degeneracy: None,
            };
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let report = audit(&law, spec.structure, &tol).map_err(|e| e.to_string())?;
            if !report.eigen.as_ref().is_some_and(|e| e.pass) {
                return Err(format!("forced model fails its own audit, seed {}", spec.seed));
            }
            let margin = observed_margin(&law, spec.structure).map_err(|e| e.to_string())?;
            let run = identify_mediator_array(
                &margin,
                &ProxyRoles::default(),
                ArrayMode::Eigen,
                None,
                1,
                spec.seed,
                &tol,
            )
            .map_err(|e| e.to_string())?;
            let oracle = adjust(&law, "A", "Y", spec.structure.adjustment_set())
                .map_err(|e| e.to_string())?;
            let dev = run
                .counterfactual
                .max_abs_difference(&oracle)
                .map_err(|e| e.to_string())?;
            worst = worst.max(dev);
            if dev > 1e-8 {
                return Err(format!("deviation {dev} on seed {}", spec.seed));
            }
        }
        Ok(format!("100 models, worst deviation {worst:.3e}"))
    });
}

#[test]
fn closed_form_gaussian_means_sit_inside_the_monte_carlo_band() {
    criterion(9, "closed form vs simulation across 20 coefficient settings", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1009);
        let mut worst_z: f64 = 0.0;
        for setting in 0..20 {
            let sem = GaussianSem::random(&mut rng);
            if sem.ace() != sem.effect_a_on_y {
                return Err("effect slope is not returned exactly".into());
            }
            let level = rng.gen_range(-1.5..1.5);
            let check = sem
                .monte_carlo_check(level, 1_000_000, 90_000 + setting)
                .map_err(|e| e.to_string())?;
            worst_z = worst_z.max(check.z_score.abs());
            if check.z_score.abs() > 3.0 {
                return Err(format!(
                    "setting {setting}: z score {} at level {level}",
                    check.z_score
                ));
            }
        }
        Ok(format!("20 settings, worst |z| {worst_z:.2}"))
    });
}

#[test]
fn ordinal_labels_are_restored_whenever_proxy_means_separate() {
    criterion(10, "ordinal label recovery over 100 trials plus a tie case", || {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1010);
        let mut trials = 0usize;
        let mut attempts = 0usize;
        let mut last_good = None;
        while trials < 100 {
            attempts += 1;
            if attempts > 600 {
                return Err(format!("only {trials} separated models in {attempts} attempts"));
            }
            let k = rng.gen_range(2..=3);
            let spec = ModelSpec {
                structure: Structure::ConfounderStrict,
                cardinalities: cards(&[
                    ("U", k),
                    ("Z", k),
                    ("W", k),
                    ("A", 2),
                    ("Y", rng.gen_range(2..=3)),
                ]),
                seed: rng.gen(),
                dotted_edges: true,
                constraints: ConstraintFlags {
                    force_invertible: true,
                    force_distinct_rows: true,
                    ..ConstraintFlags::default()
                },
                degeneracy: None,
            };
            let law = generate(&spec, &tol).map_err(|e| e.to_string())?;
            let truth = latent_factors(&law, spec.structure).map_err(|e| e.to_string())?;
            let proxy = &truth.outcome_proxy_given_latent.entries;
            let values: Vec<f64> = (0..proxy.nrows()).map(|w| w as f64).collect();
            let true_means: Vec<f64> = (0..k)
                .map(|u| (0..proxy.nrows()).map(|w| proxy[(w, u)] * values[w]).sum())
                .collect();
            // The generator does not separate proxy means, so enforce the
            // monotonicity premise before counting the trial.
            let mut gap = f64::INFINITY;
            for a in 0..k {
                for b in a + 1..k {
                    gap = gap.min((true_means[a] - true_means[b]).abs());
                }
            }
            if gap < 1e-2 {
                continue;
            }
            trials += 1;

            // Ordinal label of each generator state: its rank by mean.
            let rank_of = |mean: f64| true_means.iter().filter(|&&m| m < mean).count();
            let rec = recover_eigen(&law, &ProxyRoles::default(), spec.seed, &tol)
                .map_err(|e| e.to_string())?;
            let map = recover_labels(
                &rec,
                ProxyAxis::OutcomeProxy,
                LabelFunctional::Mean,
                LabelMode::Monotonicity,
                &values,
                None,
                &tol,
            )
            .map_err(|e| e.to_string())?;

            let recovered_proxy = &rec.outcome_proxy_given_latent.entries;
            for state in 0..k {
                // Match the recovered state back to the generator state it
                // reproduces, then compare ordinal labels.
                let (truth_state, distance) = (0..k)
                    .map(|u| {
                        let d: f64 = (0..recovered_proxy.nrows())
                            .map(|w| (recovered_proxy[(w, state)] - proxy[(w, u)]).abs())
                            .sum();
                        (u, d)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty");
                if distance > 1e-6 {
                    return Err(format!(
                        "recovered state {state} matches no generator state, \
                         distance {distance} on seed {}",
                        spec.seed
                    ));
                }
                let expected = rank_of(true_means[truth_state]);
                if map.assignment[state] != expected {
                    return Err(format!(
                        "state {state} labeled {} but generator rank is {expected} \
                         on seed {}",
                        map.assignment[state], spec.seed
                    ));
                }
            }
            last_good = Some((law, spec));
        }

        // Equal proxy values collapse every mean to the same number: the
        // tie must be reported, not silently broken.
        let (law, spec) = last_good.expect("at least one trial ran");
        let rec = recover_eigen(&law, &ProxyRoles::default(), spec.seed, &tol)
            .map_err(|e| e.to_string())?;
        let w_card = rec.outcome_proxy_given_latent.entries.nrows();
        let tied = recover_labels(
            &rec,
            ProxyAxis::OutcomeProxy,
            LabelFunctional::Mean,
            LabelMode::Monotonicity,
            &vec![1.0; w_card],
            None,
            &tol,
        );
        match tied {
            Err(Error::LabelAmbiguity(_)) => {}
            other => {
                return Err(format!(
                    "tie case returned {other:?} instead of a label ambiguity error"
                ))
            }
        }
        Ok(format!("100 trials restored, tie case rejected, {attempts} attempts"))
    });
}
