//! Ground-truth interventional targets computed from a fully specified law.
//!
//! Identification procedures elsewhere in the crate only ever see observed
//! margins; the functions here are allowed to read latent variables and are
//! used as the reference the identifiers are compared against.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::prob::{describe_assignment, multi_range, Assignment, CategoricalDomain, FullLaw};

/// Interventional outcome distribution, one column per treatment level.
#[derive(Debug, Clone)]
pub struct CounterfactualLaw {
    treatment: CategoricalDomain,
    outcome: CategoricalDomain,
    /// Entry (y, a) is the probability of outcome state y under an
    /// intervention setting the treatment to state a.
    table: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CounterfactualJson {
    treatment: CategoricalDomain,
    outcome: CategoricalDomain,
    /// columns[a][y], one simplex per treatment level.
    columns: Vec<Vec<f64>>,
}

impl Serialize for CounterfactualLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let columns = (0..self.table.ncols())
            .map(|a| self.table.column(a).iter().copied().collect())
            .collect();
        CounterfactualJson {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            columns,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CounterfactualLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = CounterfactualJson::deserialize(d)?;
        let ka = raw.treatment.cardinality();
        let ky = raw.outcome.cardinality();
        if raw.columns.len() != ka || raw.columns.iter().any(|c| c.len() != ky) {
            return Err(D::Error::custom("counterfactual column shape mismatch"));
        }
        let mut table = DMatrix::zeros(ky, ka);
        for (a, col) in raw.columns.iter().enumerate() {
            for (y, &p) in col.iter().enumerate() {
                table[(y, a)] = p;
            }
        }
        CounterfactualLaw::new(raw.treatment, raw.outcome, table, &Tolerances::default())
            .map_err(D::Error::custom)
    }
}

impl CounterfactualLaw {
    pub fn new(
        treatment: CategoricalDomain,
        outcome: CategoricalDomain,
        table: DMatrix<f64>,
        tol: &Tolerances,
    ) -> Result<Self> {
        if table.nrows() != outcome.cardinality() || table.ncols() != treatment.cardinality() {
            return Err(Error::InvalidLaw(format!(
                "counterfactual table has shape {}x{}, expected {}x{}",
                table.nrows(),
                table.ncols(),
                outcome.cardinality(),
                treatment.cardinality()
            )));
        }
        for a in 0..table.ncols() {
            let mut total = 0.0;
            for y in 0..table.nrows() {
                let p = table[(y, a)];
                if !(0.0..=1.0 + tol.normalization).contains(&p) {
                    return Err(Error::InvalidLaw(format!(
                        "counterfactual probability {p} out of range at outcome {y}, level {a}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > tol.normalization.max(1e-9) {
                return Err(Error::InvalidLaw(format!(
                    "counterfactual column {a} sums to {total} instead of 1"
                )));
            }
        }
        Ok(CounterfactualLaw {
            treatment,
            outcome,
            table,
        })
    }

    pub fn treatment(&self) -> &CategoricalDomain {
        &self.treatment
    }

    pub fn outcome(&self) -> &CategoricalDomain {
        &self.outcome
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    /// Outcome distribution under the intervention fixing treatment to `level`.
    pub fn column(&self, level: usize) -> Result<Vec<f64>> {
        if level >= self.table.ncols() {
            return Err(Error::Domain(format!(
                "treatment level {level} out of range (cardinality {})",
                self.table.ncols()
            )));
        }
        Ok(self.table.column(level).iter().copied().collect())
    }

    /// Expected outcome under the intervention, with `values[y]` the numeric
    /// value attached to outcome state y.
    pub fn expectation(&self, level: usize, values: &[f64]) -> Result<f64> {
        if values.len() != self.outcome.cardinality() {
            return Err(Error::Domain(format!(
                "{} outcome values supplied for cardinality {}",
                values.len(),
                self.outcome.cardinality()
            )));
        }
        let col = self.column(level)?;
        Ok(col.iter().zip(values).map(|(p, v)| p * v).sum())
    }

    /// Average causal effect for a binary treatment: the expected outcome
    /// under the second treatment state minus the first.
    pub fn ace(&self, values: &[f64]) -> Result<f64> {
        if self.treatment.cardinality() != 2 {
            return Err(Error::Domain(format!(
                "average causal effect needs a binary treatment; `{}` has cardinality {}",
                self.treatment.name,
                self.treatment.cardinality()
            )));
        }
        Ok(self.expectation(1, values)? - self.expectation(0, values)?)
    }

    /// Largest elementwise difference to another counterfactual law over the
    /// same treatment and outcome shapes.
    pub fn max_abs_difference(&self, other: &CounterfactualLaw) -> Result<f64> {
        if self.table.shape() != other.table.shape() {
            return Err(Error::Domain(
                "counterfactual laws have different shapes".into(),
            ));
        }
        let mut worst: f64 = 0.0;
        for a in 0..self.table.ncols() {
            for y in 0..self.table.nrows() {
                worst = worst.max((self.table[(y, a)] - other.table[(y, a)]).abs());
            }
        }
        Ok(worst)
    }
}

/// Interventional outcome law by adjustment over the given confounder set:
/// the outcome conditional given treatment and confounders, averaged over the
/// confounder marginal.
///
/// The confounders may include latent variables; this is the brute-force
/// reference, not an identification procedure. An empty confounder set
/// returns the plain outcome conditional given treatment.
pub fn adjust(
    law: &FullLaw,
    treatment: &str,
    outcome: &str,
    confounders: &[&str],
) -> Result<CounterfactualLaw> {
    if confounders.contains(&treatment) || confounders.contains(&outcome) {
        return Err(Error::Domain(
            "treatment and outcome cannot be confounders".into(),
        ));
    }
    let t_dom = law.domain(treatment)?.clone();
    let y_dom = law.domain(outcome)?.clone();
    let c_cards: Vec<usize> = confounders
        .iter()
        .map(|n| law.cardinality(n))
        .collect::<Result<_>>()?;

    let mut table = DMatrix::zeros(y_dom.cardinality(), t_dom.cardinality());
    for a in 0..t_dom.cardinality() {
        for c_states in multi_range(&c_cards) {
            let mut stratum = Assignment::new();
            stratum.insert(treatment.to_string(), a);
            for (name, &state) in confounders.iter().zip(&c_states) {
                stratum.insert(name.to_string(), state);
            }
            let mass = law.event_mass(&stratum)?;
            if mass <= 0.0 {
                return Err(Error::PositivityViolation {
                    stratum: describe_assignment(law, &stratum),
                    mass,
                });
            }
            let mut c_only = stratum.clone();
            c_only.remove(treatment);
            let weight = if c_only.is_empty() {
                1.0
            } else {
                law.event_mass(&c_only)?
            };
            let cond = law.condition(&[outcome], &stratum)?;
            for y in 0..y_dom.cardinality() {
                let mut cell = Assignment::new();
                cell.insert(outcome.to_string(), y);
                table[(y, a)] += weight * cond.prob(&cell)?;
            }
        }
    }
    CounterfactualLaw::new(t_dom, y_dom, table, &Tolerances::default())
}

/// Interventional outcome law through a fully observed mediator:
/// sum over mediator states of the mediator conditional at the intervened
/// treatment, times the outcome conditional given mediator and treatment,
/// averaged over the natural treatment marginal.
pub fn frontdoor(
    law: &FullLaw,
    treatment: &str,
    mediator: &str,
    outcome: &str,
) -> Result<CounterfactualLaw> {
    let t_dom = law.domain(treatment)?.clone();
    let m_dom = law.domain(mediator)?.clone();
    let y_dom = law.domain(outcome)?.clone();

    let f_t = law.marginal_vector(treatment)?;
    for (a, &p) in f_t.iter().enumerate() {
        if p <= 0.0 {
            let mut stratum = Assignment::new();
            stratum.insert(treatment.to_string(), a);
            return Err(Error::PositivityViolation {
                stratum: describe_assignment(law, &stratum),
                mass: p,
            });
        }
    }
    // f(y | a', m) for every (a', m), with positivity of each stratum.
    let mut y_given_tm = vec![vec![vec![0.0; y_dom.cardinality()]; m_dom.cardinality()]; t_dom.cardinality()];
    for a_prime in 0..t_dom.cardinality() {
        for m in 0..m_dom.cardinality() {
            let mut stratum = Assignment::new();
            stratum.insert(treatment.to_string(), a_prime);
            stratum.insert(mediator.to_string(), m);
            let mass = law.event_mass(&stratum)?;
            if mass <= 0.0 {
                return Err(Error::PositivityViolation {
                    stratum: describe_assignment(law, &stratum),
                    mass,
                });
            }
            let cond = law.condition(&[outcome], &stratum)?;
            for y in 0..y_dom.cardinality() {
                let mut cell = Assignment::new();
                cell.insert(outcome.to_string(), y);
                y_given_tm[a_prime][m][y] = cond.prob(&cell)?;
            }
        }
    }
    let m_given_t = law.cond_matrix(mediator, treatment, &Assignment::new())?;

    let mut table = DMatrix::zeros(y_dom.cardinality(), t_dom.cardinality());
    for a in 0..t_dom.cardinality() {
        for m in 0..m_dom.cardinality() {
            let p_m = m_given_t.entries[(m, a)];
            for (a_prime, &p_a) in f_t.iter().enumerate() {
                for y in 0..y_dom.cardinality() {
                    table[(y, a)] += y_given_tm[a_prime][m][y] * p_m * p_a;
                }
            }
        }
    }
    CounterfactualLaw::new(t_dom, y_dom, table, &Tolerances::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn domain(name: &str, k: usize) -> CategoricalDomain {
        CategoricalDomain::indexed(name, k).unwrap()
    }

    /// f(u, a, y) = f(u) f(a|u) f(y|a,u) for hand-picked factors.
    fn confounded_law() -> FullLaw {
        let f_u = [0.5, 0.5];
        // f(a | u): rows by u.
        let f_a = [[0.8, 0.2], [0.4, 0.6]];
        // f(y | u, a): indexed [u][a], each a simplex over y.
        let f_y = [
            [[1.0, 0.0], [0.0, 1.0]],
            [[0.5, 0.5], [0.25, 0.75]],
        ];
        let mut cells = Vec::with_capacity(8);
        for u in 0..2 {
            for a in 0..2 {
                for y in 0..2 {
                    cells.push(f_u[u] * f_a[u][a] * f_y[u][a][y]);
                }
            }
        }
        let table = ArrayD::from_shape_vec(IxDyn(&[2, 2, 2]), cells).unwrap();
        FullLaw::new(vec![domain("U", 2), domain("A", 2), domain("Y", 2)], table, None).unwrap()
    }

    #[test]
    fn adjust_matches_hand_computation() {
        // With the factors above: averaging f(y|a,u) over f(u) gives
        // (0.75, 0.25) at level 0 and (0.125, 0.875) at level 1.
        let law = confounded_law();
        let cf = adjust(&law, "A", "Y", &["U"]).unwrap();
        let c0 = cf.column(0).unwrap();
        let c1 = cf.column(1).unwrap();
        assert!((c0[0] - 0.75).abs() < 1e-14 && (c0[1] - 0.25).abs() < 1e-14);
        assert!((c1[0] - 0.125).abs() < 1e-14 && (c1[1] - 0.875).abs() < 1e-14);
        let ace = cf.ace(&[0.0, 1.0]).unwrap();
        assert!((ace - 0.625).abs() < 1e-14, "ace {ace}");
    }

    #[test]
    fn adjust_without_confounders_is_the_conditional() {
        let law = confounded_law();
        let cf = adjust(&law, "A", "Y", &[]).unwrap();
        for a in 0..2 {
            let mut given = Assignment::new();
            given.insert("A".into(), a);
            let cond = law.condition(&["Y"], &given).unwrap();
            for y in 0..2 {
                let mut cell = Assignment::new();
                cell.insert("Y".into(), y);
                let expect = cond.prob(&cell).unwrap();
                assert!((cf.column(a).unwrap()[y] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjust_over_constant_confounder_is_the_conditional() {
        // A one-state confounder carries no information.
        let base = confounded_law();
        let mut cells = Vec::new();
        for &p in base.probabilities().iter() {
            cells.push(p);
        }
        let table = ArrayD::from_shape_vec(IxDyn(&[2, 2, 2, 1]), cells).unwrap();
        let law = FullLaw::new(
            vec![domain("U", 2), domain("A", 2), domain("Y", 2), domain("C", 1)],
            table,
            None,
        )
        .unwrap();
        let with_c = adjust(&law, "A", "Y", &["C"]).unwrap();
        let plain = adjust(&law, "A", "Y", &[]).unwrap();
        assert!(with_c.max_abs_difference(&plain).unwrap() < 1e-14);
    }

    #[test]
    fn adjust_reports_positivity_violations() {
        // f(a=1 | u=0) = 0 makes the (A=1, U=0) stratum empty.
        let f_u = [0.5, 0.5];
        let f_a = [[1.0, 0.0], [0.4, 0.6]];
        let mut cells = Vec::new();
        for u in 0..2 {
            for a in 0..2 {
                for _y in 0..2 {
                    cells.push(f_u[u] * f_a[u][a] * 0.5);
                }
            }
        }
        let table = ArrayD::from_shape_vec(IxDyn(&[2, 2, 2]), cells).unwrap();
        let law =
            FullLaw::new(vec![domain("U", 2), domain("A", 2), domain("Y", 2)], table, None)
                .unwrap();
        let err = adjust(&law, "A", "Y", &["U"]).unwrap_err();
        match err {
            Error::PositivityViolation { stratum, .. } => {
                assert!(stratum.contains("A=a1") && stratum.contains("U=u0"), "{stratum}");
            }
            other => panic!("expected positivity violation, got {other}"),
        }
    }

    #[test]
    fn frontdoor_on_chain_equals_conditional() {
        // A -> M -> Y with no confounding: the mediator formula must agree
        // with the plain conditional f(y | a).
        let f_a = [0.3, 0.7];
        let f_m = [[0.9, 0.1], [0.2, 0.8]];
        let f_y = [[0.6, 0.4], [0.1, 0.9]];
        let mut cells = Vec::new();
        for a in 0..2 {
            for m in 0..2 {
                for y in 0..2 {
                    cells.push(f_a[a] * f_m[a][m] * f_y[m][y]);
                }
            }
        }
        let table = ArrayD::from_shape_vec(IxDyn(&[2, 2, 2]), cells).unwrap();
        let law =
            FullLaw::new(vec![domain("A", 2), domain("M", 2), domain("Y", 2)], table, None)
                .unwrap();
        let fd = frontdoor(&law, "A", "M", "Y").unwrap();
        let plain = adjust(&law, "A", "Y", &[]).unwrap();
        assert!(fd.max_abs_difference(&plain).unwrap() < 1e-12);
    }

    #[test]
    fn ace_requires_binary_treatment() {
        let t = domain("A", 3);
        let y = domain("Y", 2);
        let table = DMatrix::from_row_slice(2, 3, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let cf = CounterfactualLaw::new(t, y, table, &Tolerances::default()).unwrap();
        assert!(matches!(cf.ace(&[0.0, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn counterfactual_json_round_trip() {
        let law = confounded_law();
        let cf = adjust(&law, "A", "Y", &["U"]).unwrap();
        let text = serde_json::to_string(&cf).unwrap();
        let back: CounterfactualLaw = serde_json::from_str(&text).unwrap();
        assert!(cf.max_abs_difference(&back).unwrap() == 0.0);
    }
}
