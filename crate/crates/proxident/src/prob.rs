//! Finite probability tables addressed by variable name.
//!
//! A [`FullLaw`] stores the joint distribution of finitely many categorical
//! variables as a dense array, one axis per variable in a fixed order.
//! All operations (marginalization, conditioning, conditional matrices,
//! conditional-independence checks) address variables by name so that callers
//! never juggle raw axis numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Map from variable name to a state index into that variable's label list.
pub type Assignment = BTreeMap<String, usize>;

/// Renders an assignment as `{A=a1, Z=z0}` using state labels where possible.
pub fn describe_assignment(law: &FullLaw, assignment: &Assignment) -> String {
    let mut out = String::from("{");
    let mut first = true;
    for (name, &state) in assignment {
        if !first {
            out.push_str(", ");
        }
        first = false;
        match law.domain(name) {
            Ok(d) if state < d.labels.len() => {
                let _ = write!(out, "{}={}", name, d.labels[state]);
            }
            _ => {
                let _ = write!(out, "{}=#{}", name, state);
            }
        }
    }
    out.push('}');
    out
}

/// A named categorical variable together with its state labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalDomain {
    pub name: String,
    pub labels: Vec<String>,
}

impl CategoricalDomain {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidDomain(format!(
                "variable `{name}` has an empty label list"
            )));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::InvalidDomain(format!(
                    "variable `{name}` repeats label `{l}`"
                )));
            }
        }
        Ok(CategoricalDomain { name, labels })
    }

    /// Convenience constructor with labels `name0, name1, ...` in lowercase.
    pub fn indexed(name: &str, cardinality: usize) -> Result<Self> {
        let prefix = name.to_lowercase();
        let labels = (0..cardinality).map(|i| format!("{prefix}{i}")).collect();
        CategoricalDomain::new(name, labels)
    }

    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    pub fn state_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Conditional probability matrix P[row | col] under an optional context.
///
/// Columns are indexed by the conditioning variable's states and each column
/// sums to one (within the normalization tolerance at construction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondMatrix {
    pub row: CategoricalDomain,
    pub col: CategoricalDomain,
    pub context: Assignment,
    #[serde(with = "dmatrix_serde")]
    pub entries: DMatrix<f64>,
}

pub(crate) mod dmatrix_serde {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Raw {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let raw = Raw::deserialize(d)?;
        if raw.data.len() != raw.rows * raw.cols {
            return Err(D::Error::custom("matrix entry count does not match shape"));
        }
        Ok(DMatrix::from_row_iterator(raw.rows, raw.cols, raw.data))
    }
}

impl CondMatrix {
    pub fn new(
        row: CategoricalDomain,
        col: CategoricalDomain,
        context: Assignment,
        entries: DMatrix<f64>,
        tol: &Tolerances,
    ) -> Result<Self> {
        if entries.nrows() != row.cardinality() || entries.ncols() != col.cardinality() {
            return Err(Error::InvalidLaw(format!(
                "conditional matrix for {} given {} has shape {}x{}, expected {}x{}",
                row.name,
                col.name,
                entries.nrows(),
                entries.ncols(),
                row.cardinality(),
                col.cardinality()
            )));
        }
        for j in 0..entries.ncols() {
            let s: f64 = entries.column(j).sum();
            if (s - 1.0).abs() > tol.normalization {
                return Err(Error::InvalidLaw(format!(
                    "column {} of P[{} | {}] sums to {} instead of 1",
                    j, row.name, col.name, s
                )));
            }
            for i in 0..entries.nrows() {
                if entries[(i, j)] < 0.0 {
                    return Err(Error::InvalidLaw(format!(
                        "P[{} | {}] has negative entry {} at ({}, {})",
                        row.name,
                        col.name,
                        entries[(i, j)],
                        i,
                        j
                    )));
                }
            }
        }
        Ok(CondMatrix {
            row,
            col,
            context,
            entries,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FullLawJson {
    domains: Vec<CategoricalDomain>,
    /// Row-major flattening: the last listed domain varies fastest.
    probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dag: Option<Vec<(String, String)>>,
}

/// Joint distribution of finitely many categorical variables.
#[derive(Debug, Clone)]
pub struct FullLaw {
    domains: Vec<CategoricalDomain>,
    probabilities: ArrayD<f64>,
    dag: Option<Vec<(String, String)>>,
}

impl FullLaw {
    /// Validates shapes, nonnegativity and normalization.
    pub fn new(
        domains: Vec<CategoricalDomain>,
        probabilities: ArrayD<f64>,
        dag: Option<Vec<(String, String)>>,
    ) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::InvalidLaw("a law needs at least one variable".into()));
        }
        let mut names = BTreeSet::new();
        for d in &domains {
            if !names.insert(d.name.clone()) {
                return Err(Error::InvalidLaw(format!(
                    "variable `{}` appears twice",
                    d.name
                )));
            }
        }
        let expected: Vec<usize> = domains.iter().map(|d| d.cardinality()).collect();
        if probabilities.shape() != expected.as_slice() {
            return Err(Error::InvalidLaw(format!(
                "probability table has shape {:?}, expected {:?}",
                probabilities.shape(),
                expected
            )));
        }
        let mut total = 0.0;
        for &p in probabilities.iter() {
            if p < 0.0 {
                return Err(Error::InvalidLaw(format!("negative probability {p}")));
            }
            if !p.is_finite() {
                return Err(Error::InvalidLaw(format!("non-finite probability {p}")));
            }
            total += p;
        }
        let tol = Tolerances::default();
        if (total - 1.0).abs() > tol.normalization {
            return Err(Error::InvalidLaw(format!(
                "probability table sums to {total} instead of 1"
            )));
        }
        if let Some(edges) = &dag {
            for (a, b) in edges {
                for v in [a, b] {
                    if !domains.iter().any(|d| &d.name == v) {
                        return Err(Error::InvalidLaw(format!(
                            "dag edge ({a}, {b}) references unknown variable `{v}`"
                        )));
                    }
                }
            }
        }
        Ok(FullLaw {
            domains,
            probabilities,
            dag,
        })
    }

    pub fn domains(&self) -> &[CategoricalDomain] {
        &self.domains
    }

    pub fn dag(&self) -> Option<&[(String, String)]> {
        self.dag.as_deref()
    }

    pub fn probabilities(&self) -> &ArrayD<f64> {
        &self.probabilities
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn axis(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn domain(&self, name: &str) -> Result<&CategoricalDomain> {
        let axis = self.axis(name)?;
        Ok(&self.domains[axis])
    }

    pub fn cardinality(&self, name: &str) -> Result<usize> {
        Ok(self.domain(name)?.cardinality())
    }

    /// Probability of one fully specified cell.
    pub fn prob(&self, assignment: &Assignment) -> Result<f64> {
        if assignment.len() != self.domains.len() {
            return Err(Error::Domain(format!(
                "assignment fixes {} of {} variables; use event_mass for partial events",
                assignment.len(),
                self.domains.len()
            )));
        }
        let mut idx = vec![0usize; self.domains.len()];
        for (name, &state) in assignment {
            let axis = self.axis(name)?;
            self.check_state(axis, state)?;
            idx[axis] = state;
        }
        Ok(self.probabilities[IxDyn(&idx)])
    }

    /// Total mass of the event fixing a subset of variables.
    pub fn event_mass(&self, partial: &Assignment) -> Result<f64> {
        let mut view = self.probabilities.view();
        // Fix axes in descending order so earlier indices stay valid.
        let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(partial.len());
        for (name, &state) in partial {
            let axis = self.axis(name)?;
            self.check_state(axis, state)?;
            fixed.push((axis, state));
        }
        fixed.sort_by(|a, b| b.0.cmp(&a.0));
        for (axis, state) in fixed {
            view = view.index_axis_move(Axis(axis), state);
        }
        Ok(view.sum())
    }

    fn check_state(&self, axis: usize, state: usize) -> Result<()> {
        let d = &self.domains[axis];
        if state >= d.cardinality() {
            return Err(Error::Domain(format!(
                "state index {state} out of range for `{}` (cardinality {})",
                d.name,
                d.cardinality()
            )));
        }
        Ok(())
    }

    /// Builds an assignment from labels instead of state indices.
    pub fn assignment_from_labels(&self, pairs: &[(&str, &str)]) -> Result<Assignment> {
        let mut out = Assignment::new();
        for (name, label) in pairs {
            let d = self.domain(name)?;
            let state = d.state_of(label).ok_or_else(|| {
                Error::Domain(format!("variable `{name}` has no label `{label}`"))
            })?;
            out.insert(name.to_string(), state);
        }
        Ok(out)
    }

    /// Marginal law of the `keep` variables, in the order they appear here.
    ///
    /// DAG metadata survives only when nothing is summed out; a marginal of a
    /// Markov law has no canonical edge set.
    pub fn marginalize(&self, keep: &[&str]) -> Result<FullLaw> {
        let mut keep_axes = BTreeSet::new();
        for name in keep {
            keep_axes.insert(self.axis(name)?);
        }
        if keep_axes.len() != keep.len() {
            return Err(Error::Domain("duplicate variable in marginalize".into()));
        }
        if keep_axes.is_empty() {
            return Err(Error::Domain("marginalize needs at least one variable".into()));
        }
        let mut table = self.probabilities.clone();
        for axis in (0..self.domains.len()).rev() {
            if !keep_axes.contains(&axis) {
                table = table.sum_axis(Axis(axis));
            }
        }
        let domains: Vec<CategoricalDomain> = keep_axes
            .iter()
            .map(|&a| self.domains[a].clone())
            .collect();
        let dag = if keep_axes.len() == self.domains.len() {
            self.dag.clone()
        } else {
            None
        };
        FullLaw::new(domains, table, dag)
    }

    /// Conditional law of `target` given the event `given`, normalized.
    pub fn condition(&self, target: &[&str], given: &Assignment) -> Result<FullLaw> {
        for name in target {
            if given.contains_key(*name) {
                return Err(Error::Domain(format!(
                    "variable `{name}` appears both as target and conditioning event"
                )));
            }
        }
        let mass = self.event_mass(given)?;
        if mass <= 0.0 {
            return Err(Error::ZeroProbabilityEvent {
                event: describe_assignment(self, given),
            });
        }
        let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(given.len());
        for (name, &state) in given {
            fixed.push((self.axis(name)?, state));
        }
        fixed.sort_by(|a, b| b.0.cmp(&a.0));
        let mut view = self.probabilities.view();
        for (axis, state) in &fixed {
            view = view.index_axis_move(Axis(*axis), *state);
        }
        let remaining: Vec<&CategoricalDomain> = self
            .domains
            .iter()
            .filter(|d| !given.contains_key(&d.name))
            .collect();
        let sliced = FullLaw::new(
            remaining.into_iter().cloned().collect(),
            view.to_owned() / mass,
            None,
        )?;
        sliced.marginalize(target)
    }

    /// Conditional matrix P[row | col] in a fixed context.
    pub fn cond_matrix(&self, row: &str, col: &str, context: &Assignment) -> Result<CondMatrix> {
        if row == col {
            return Err(Error::Domain(
                "conditional matrix needs two distinct variables".into(),
            ));
        }
        for name in [row, col] {
            if context.contains_key(name) {
                return Err(Error::Domain(format!(
                    "context fixes `{name}` which is a matrix axis"
                )));
            }
        }
        let row_dom = self.domain(row)?.clone();
        let col_dom = self.domain(col)?.clone();
        let mut entries = DMatrix::zeros(row_dom.cardinality(), col_dom.cardinality());
        for j in 0..col_dom.cardinality() {
            let mut given = context.clone();
            given.insert(col.to_string(), j);
            let column = self.condition(&[row], &given)?;
            for i in 0..row_dom.cardinality() {
                let mut cell = Assignment::new();
                cell.insert(row.to_string(), i);
                entries[(i, j)] = column.prob(&cell)?;
            }
        }
        CondMatrix::new(row_dom, col_dom, context.clone(), entries, &Tolerances::default())
    }

    /// Marginal distribution of one variable as a dense vector.
    pub fn marginal_vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.marginalize(&[name])?;
        Ok(m.probabilities.iter().copied().collect())
    }

    /// Largest deviation |f(x,y|g) - f(x|g) f(y|g)| over all cells and all
    /// positive-probability strata of `given`. Zero-mass strata are skipped.
    pub fn ci_deviation(&self, x: &[&str], y: &[&str], given: &[&str]) -> Result<f64> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Domain(
                "conditional independence needs nonempty variable sets".into(),
            ));
        }
        let xs: BTreeSet<&str> = x.iter().copied().collect();
        let ys: BTreeSet<&str> = y.iter().copied().collect();
        let gs: BTreeSet<&str> = given.iter().copied().collect();
        if !xs.is_disjoint(&ys) || !xs.is_disjoint(&gs) || !ys.is_disjoint(&gs) {
            return Err(Error::Domain(
                "conditional independence needs disjoint variable sets".into(),
            ));
        }
        let mut keep: Vec<&str> = Vec::new();
        keep.extend(x.iter());
        keep.extend(y.iter());
        keep.extend(given.iter());
        let law = self.marginalize(&keep)?;

        let g_cards: Vec<usize> = given
            .iter()
            .map(|n| law.cardinality(n))
            .collect::<Result<_>>()?;
        let mut worst: f64 = 0.0;
        for g_states in multi_range(&g_cards) {
            let mut stratum = Assignment::new();
            for (name, &state) in given.iter().zip(&g_states) {
                stratum.insert(name.to_string(), state);
            }
            let mass = law.event_mass(&stratum)?;
            if mass <= 0.0 {
                continue;
            }
            let mut xy: Vec<&str> = Vec::new();
            xy.extend(x.iter());
            xy.extend(y.iter());
            let joint = law.condition(&xy, &stratum)?;
            let px = joint.marginalize(x)?;
            let py = joint.marginalize(y)?;
            let x_cards: Vec<usize> = x
                .iter()
                .map(|n| joint.cardinality(n))
                .collect::<Result<_>>()?;
            let y_cards: Vec<usize> = y
                .iter()
                .map(|n| joint.cardinality(n))
                .collect::<Result<_>>()?;
            for x_states in multi_range(&x_cards) {
                let mut ax = Assignment::new();
                for (name, &state) in x.iter().zip(&x_states) {
                    ax.insert(name.to_string(), state);
                }
                let pxv = px.event_mass(&ax)?;
                for y_states in multi_range(&y_cards) {
                    let mut cell = ax.clone();
                    for (name, &state) in y.iter().zip(&y_states) {
                        cell.insert(name.to_string(), state);
                    }
                    let mut ay = Assignment::new();
                    for (name, &state) in y.iter().zip(&y_states) {
                        ay.insert(name.to_string(), state);
                    }
                    let dev = (joint.event_mass(&cell)? - pxv * py.event_mass(&ay)?).abs();
                    worst = worst.max(dev);
                }
            }
        }
        Ok(worst)
    }

    /// Whether `x` and `y` are conditionally independent given `given`
    /// at the bundle's CI tolerance.
    pub fn check_ci(&self, x: &[&str], y: &[&str], given: &[&str], tol: &Tolerances) -> Result<bool> {
        Ok(self.ci_deviation(x, y, given)? <= tol.ci)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let raw = FullLawJson {
            domains: self.domains.clone(),
            probabilities: self.probabilities.iter().copied().collect(),
            dag: self.dag.clone(),
        };
        serde_json::to_string_pretty(&raw)
            .map_err(|e| Error::InvalidLaw(format!("serialization failed: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: FullLawJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidLaw(format!("json parse failed: {e}")))?;
        FullLaw::from_raw(raw)
    }

    fn from_raw(raw: FullLawJson) -> Result<Self> {
        for d in &raw.domains {
            // Re-run domain validation; serde bypasses the constructor.
            CategoricalDomain::new(d.name.clone(), d.labels.clone())?;
        }
        let shape: Vec<usize> = raw.domains.iter().map(|d| d.cardinality()).collect();
        let expected: usize = shape.iter().product();
        if raw.probabilities.len() != expected {
            return Err(Error::InvalidLaw(format!(
                "probability list has {} entries, expected {} for shape {:?}",
                raw.probabilities.len(),
                expected,
                shape
            )));
        }
        let table = ArrayD::from_shape_vec(IxDyn(&shape), raw.probabilities)
            .map_err(|e| Error::InvalidLaw(format!("shape mismatch: {e}")))?;
        FullLaw::new(raw.domains, table, raw.dag)
    }
}

impl Serialize for FullLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FullLawJson {
            domains: self.domains.clone(),
            probabilities: self.probabilities.iter().copied().collect(),
            dag: self.dag.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FullLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = FullLawJson::deserialize(d)?;
        FullLaw::from_raw(raw).map_err(D::Error::custom)
    }
}

/// Clips tiny negative entries of a recovered probability vector to zero and
/// renormalizes when the total drifts. Entries below the negative-probability
/// bound, or non-finite entries, are a genuine recovery failure. Returns the
/// clipped mass and the drift absorbed.
pub(crate) fn sanitize_probability_vector(
    v: &mut [f64],
    what: &str,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let mut clipped = 0.0;
    for x in v.iter_mut() {
        if !x.is_finite() {
            return Err(Error::Recovery(format!("{what} has non-finite entry {x}")));
        }
        if *x < -tol.negative_probability {
            return Err(Error::Recovery(format!(
                "{what} has entry {x}, below the negative-probability bound"
            )));
        }
        if *x < 0.0 {
            clipped += -*x;
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::Recovery(format!("{what} has no positive mass")));
    }
    let drift = (total - 1.0).abs();
    if drift > tol.renormalization_drift {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
    Ok((clipped, drift))
}

/// Iterates over all multi-indices for the given cardinalities, last axis
/// fastest. An empty shape yields exactly one empty index.
pub fn multi_range(cards: &[usize]) -> MultiRange {
    MultiRange {
        cards: cards.to_vec(),
        next: if cards.iter().any(|&c| c == 0) {
            None
        } else {
            Some(vec![0; cards.len()])
        },
    }
}

pub struct MultiRange {
    cards: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for MultiRange {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.clone()?;
        let mut bump = current.clone();
        let mut done = true;
        for axis in (0..self.cards.len()).rev() {
            bump[axis] += 1;
            if bump[axis] < self.cards[axis] {
                done = false;
                break;
            }
            bump[axis] = 0;
        }
        self.next = if done { None } else { Some(bump) };
        Some(current)
    }
}
