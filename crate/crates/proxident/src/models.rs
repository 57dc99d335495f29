//! Synthetic ground-truth generators for the discrete structures under
//! study.
//!
//! Each structure is a small DAG over categorical variables with one or two
//! hidden nodes. Models are built by sampling every conditional factor of
//! the DAG factorization from the uniform simplex, so the structure's
//! conditional independences hold exactly by construction; optional
//! rejection constraints keep the sampled law inside an identifier's
//! assumption set with a quantitative margin rather than almost surely.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::bridge::solve_bridge;
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::prob::{multi_range, Assignment, CategoricalDomain, CondMatrix, FullLaw};
use crate::tensor::check_kruskal;
use crate::ProxyRoles;

const GENERATION_ATTEMPT_CAP: usize = 10_000;
/// Margins the rejection constraints enforce; deliberately far above the
/// audit thresholds so accepted models never sit on an audit boundary.
const SINGULAR_VALUE_MARGIN: f64 = 0.05;
const ROW_GAP_MARGIN: f64 = 0.05;

/// One conditional factor of a DAG factorization.
#[derive(Debug, Clone)]
pub struct Factor {
    pub child: &'static str,
    pub parents: Vec<&'static str>,
}

/// A conditional independence statement `x` independent of `y` given
/// `given`, tagged with the identification frameworks that assume it.
#[derive(Debug, Clone)]
pub struct CiStatement {
    pub id: &'static str,
    pub x: Vec<&'static str>,
    pub y: Vec<&'static str>,
    pub given: Vec<&'static str>,
    pub frameworks: &'static [&'static str],
}

impl CiStatement {
    pub fn description(&self) -> String {
        let fmt = |v: &[&str]| {
            if v.len() == 1 {
                v[0].to_string()
            } else {
                format!("{{{}}}", v.join(", "))
            }
        };
        if self.given.is_empty() {
            format!("{} independent of {}", fmt(&self.x), fmt(&self.y))
        } else {
            format!(
                "{} independent of {} given {}",
                fmt(&self.x),
                fmt(&self.y),
                fmt(&self.given)
            )
        }
    }
}

/// The causal structures the generators and the comparison harness know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Latent confounder with one proxy on each side; the treatment may
    /// depend on the treatment-side proxy, the outcome only on the latent
    /// and the treatment.
    ConfounderStrict,
    /// Same skeleton with two optional extra edges: treatment-side proxy
    /// into the treatment and outcome-side proxy into the outcome.
    ConfounderPermissive,
    /// One latent with three mutually screened proxies and no treatment.
    TripleProxy,
    /// Latent confounder with a fully observed mediator and no proxies.
    FrontDoor,
    /// Hidden mediator carrying two proxies, confounded treatment.
    MediatorProxies,
}

impl Structure {
    pub const ALL: [Structure; 5] = [
        Structure::ConfounderStrict,
        Structure::ConfounderPermissive,
        Structure::TripleProxy,
        Structure::FrontDoor,
        Structure::MediatorProxies,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Structure::ConfounderStrict => "confounder-strict",
            Structure::ConfounderPermissive => "confounder-permissive",
            Structure::TripleProxy => "triple-proxy",
            Structure::FrontDoor => "front-door",
            Structure::MediatorProxies => "mediator-proxies",
        }
    }

    pub fn parse(text: &str) -> Result<Structure> {
        Structure::ALL
            .into_iter()
            .find(|s| s.name() == text)
            .ok_or_else(|| {
                let known: Vec<&str> = Structure::ALL.iter().map(|s| s.name()).collect();
                Error::Domain(format!(
                    "unknown structure `{text}`, expected one of {}",
                    known.join(", ")
                ))
            })
    }

    /// Conditional factors in sampling order; children double as the
    /// canonical variable order of generated laws.
    pub fn factors(&self, dotted_edges: bool) -> Vec<Factor> {
        let f = |child, parents: &[&'static str]| Factor {
            child,
            parents: parents.to_vec(),
        };
        match self {
            Structure::ConfounderStrict => vec![
                f("U", &[]),
                f("Z", &["U"]),
                f("W", &["U"]),
                f("A", &["U", "Z"]),
                f("Y", &["U", "A"]),
            ],
            Structure::ConfounderPermissive => {
                let a_parents: &[&str] = if dotted_edges { &["U", "Z"] } else { &["U"] };
                let y_parents: &[&str] = if dotted_edges {
                    &["U", "A", "W"]
                } else {
                    &["U", "A"]
                };
                vec![
                    f("U", &[]),
                    f("Z", &["U"]),
                    f("W", &["U"]),
                    f("A", a_parents),
                    f("Y", y_parents),
                ]
            }
            Structure::TripleProxy => vec![
                f("L", &[]),
                f("Z", &["L"]),
                f("W", &["L"]),
                f("Y", &["L"]),
            ],
            Structure::FrontDoor => vec![
                f("U", &[]),
                f("A", &["U"]),
                f("M", &["A"]),
                f("Y", &["U", "M"]),
            ],
            Structure::MediatorProxies => {
                let z_parents: &[&str] = if dotted_edges { &["M", "A"] } else { &["M"] };
                vec![
                    f("U", &[]),
                    f("A", &["U"]),
                    f("M", &["A"]),
                    f("Z", z_parents),
                    f("W", &["M"]),
                    f("Y", &["U", "M"]),
                ]
            }
        }
    }

    pub fn variables(&self) -> Vec<&'static str> {
        self.factors(true).into_iter().map(|f| f.child).collect()
    }

    pub fn hidden(&self) -> &'static [&'static str] {
        match self {
            Structure::ConfounderStrict | Structure::ConfounderPermissive => &["U"],
            Structure::TripleProxy => &["L"],
            Structure::FrontDoor => &["U"],
            Structure::MediatorProxies => &["U", "M"],
        }
    }

    pub fn observed(&self) -> Vec<&'static str> {
        let hidden = self.hidden();
        self.variables()
            .into_iter()
            .filter(|v| !hidden.contains(v))
            .collect()
    }

    /// The hidden variable whose proxies drive identification, if any.
    pub fn latent_role(&self) -> Option<&'static str> {
        match self {
            Structure::ConfounderStrict | Structure::ConfounderPermissive => Some("U"),
            Structure::TripleProxy => Some("L"),
            Structure::FrontDoor => None,
            Structure::MediatorProxies => Some("M"),
        }
    }

    pub fn treatment(&self) -> Option<&'static str> {
        match self {
            Structure::TripleProxy => None,
            _ => Some("A"),
        }
    }

    pub fn outcome(&self) -> &'static str {
        "Y"
    }

    /// Confounder set the oracle adjusts for.
    pub fn adjustment_set(&self) -> &'static [&'static str] {
        match self {
            Structure::TripleProxy => &[],
            _ => &["U"],
        }
    }

    /// Observed roles the identifiers consume; None when the structure has
    /// no proxy pair or no treatment.
    pub fn proxy_roles(&self) -> Option<ProxyRoles> {
        match self {
            Structure::ConfounderStrict
            | Structure::ConfounderPermissive
            | Structure::MediatorProxies => Some(ProxyRoles::default()),
            Structure::TripleProxy | Structure::FrontDoor => None,
        }
    }

    pub fn dag_edges(&self, dotted_edges: bool) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        for factor in self.factors(dotted_edges) {
            for parent in factor.parents {
                edges.push((parent.to_string(), factor.child.to_string()));
            }
        }
        edges
    }

    /// The structure's Markov restrictions, decomposed into pairwise-set
    /// statements so each can be checked as one conditional independence.
    pub fn ci_statements(&self) -> Vec<CiStatement> {
        let s = |id, x: &[&'static str], y: &[&'static str], given: &[&'static str], fw| {
            CiStatement {
                id,
                x: x.to_vec(),
                y: y.to_vec(),
                given: given.to_vec(),
                frameworks: fw,
            }
        };
        const BRIDGE: &[&str] = &["bridge"];
        const ARRAY: &[&str] = &["array"];
        const BOTH: &[&str] = &["bridge", "array"];
        const FRONTDOOR: &[&str] = &["frontdoor"];
        match self {
            Structure::ConfounderStrict | Structure::ConfounderPermissive => vec![
                s("outcome-proxy-exogenous", &["W"], &["Z", "A"], &["U"], BRIDGE),
                s("treatment-proxy-screened", &["Z"], &["Y"], &["U", "A"], BOTH),
                s("outcome-proxy-unaffected", &["W"], &["A"], &["U"], ARRAY),
                s(
                    "proxies-mutually-screened",
                    &["W"],
                    &["Z", "Y"],
                    &["U", "A"],
                    ARRAY,
                ),
            ],
            Structure::TripleProxy => vec![
                s("proxies-pairwise-screened", &["Z"], &["Y"], &["L"], ARRAY),
                s("proxies-mutually-screened", &["W"], &["Z", "Y"], &["L"], ARRAY),
            ],
            Structure::FrontDoor => vec![
                s("mediator-unconfounded", &["M"], &["U"], &["A"], FRONTDOOR),
                s(
                    "outcome-screened-by-mediator",
                    &["Y"],
                    &["A"],
                    &["U", "M"],
                    FRONTDOOR,
                ),
            ],
            Structure::MediatorProxies => vec![
                s("outcome-proxy-unaffected", &["W"], &["A"], &["M"], ARRAY),
                s("treatment-proxy-screened", &["Z"], &["Y"], &["M", "A"], ARRAY),
                s(
                    "proxies-mutually-screened",
                    &["W"],
                    &["Z", "Y"],
                    &["M", "A"],
                    ARRAY,
                ),
            ],
        }
    }
}

/// Rejection constraints enforced on generated models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintFlags {
    /// Proxy-given-latent matrices keep their smallest relevant singular
    /// value at or above 0.05 in every treatment context.
    pub force_invertible: bool,
    /// Some row of the outcome-given-latent matrix has pairwise entry gaps
    /// of at least 0.05 in every treatment context.
    pub force_distinct_rows: bool,
    /// Bridge residual at most the audit threshold in every context.
    pub force_bridge_solvable: bool,
    /// Kruskal margin nonnegative in every context.
    pub force_kruskal: bool,
}

impl ConstraintFlags {
    fn any(&self) -> bool {
        self.force_invertible
            || self.force_distinct_rows
            || self.force_bridge_solvable
            || self.force_kruskal
    }
}

/// Deliberate assumption violations the generator can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// The outcome conditional ignores the latent: identical
    /// outcome-given-latent columns in every treatment context.
    OutcomeDetachedFromLatent,
}

/// Everything needed to reproduce one generated model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub structure: Structure,
    pub cardinalities: BTreeMap<String, usize>,
    pub seed: u64,
    /// Include the structure's optional edges (default true).
    #[serde(default = "default_true")]
    pub dotted_edges: bool,
    #[serde(default)]
    pub constraints: ConstraintFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<Degeneracy>,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(
        structure: Structure,
        cardinalities: BTreeMap<String, usize>,
        seed: u64,
    ) -> ModelSpec {
        ModelSpec {
            structure,
            cardinalities,
            seed,
            dotted_edges: true,
            constraints: ConstraintFlags::default(),
            degeneracy: None,
        }
    }

    pub fn card(&self, variable: &str) -> Result<usize> {
        self.cardinalities
            .get(variable)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(variable.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.structure.variables();
        for v in &expected {
            match self.cardinalities.get(*v) {
                None => {
                    return Err(Error::Domain(format!(
                        "structure `{}` needs a cardinality for `{v}`",
                        self.structure.name()
                    )))
                }
                Some(0) => {
                    return Err(Error::Domain(format!("cardinality of `{v}` must be >= 1")))
                }
                Some(_) => {}
            }
        }
        for v in self.cardinalities.keys() {
            if !expected.contains(&v.as_str()) {
                return Err(Error::Domain(format!(
                    "structure `{}` has no variable `{v}`",
                    self.structure.name()
                )));
            }
        }
        let has_latent = self.structure.latent_role().is_some();
        if (self.constraints.force_invertible
            || self.constraints.force_distinct_rows
            || self.constraints.force_kruskal)
            && !has_latent
        {
            return Err(Error::Domain(format!(
                "latent-factor constraints do not apply to structure `{}`",
                self.structure.name()
            )));
        }
        let bridge_applies = matches!(
            self.structure,
            Structure::ConfounderStrict | Structure::ConfounderPermissive
        );
        if self.constraints.force_bridge_solvable && !bridge_applies {
            return Err(Error::Domain(format!(
                "bridge solvability does not apply to structure `{}`",
                self.structure.name()
            )));
        }
        if self.degeneracy.is_some() {
            if !bridge_applies {
                return Err(Error::Domain(format!(
                    "degeneracy injection is defined for the confounder structures, \
                     not `{}`",
                    self.structure.name()
                )));
            }
            if self.constraints.force_distinct_rows {
                return Err(Error::Domain(
                    "detaching the outcome from the latent contradicts forcing \
                     distinct outcome rows"
                        .into(),
                ));
            }
            if self.constraints.force_kruskal {
                return Err(Error::Domain(
                    "detaching the outcome from the latent caps the outcome factor's \
                     column rank at one, so the decomposition condition can never hold"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Factors actually sampled: the declared factorization, with the
    /// outcome factor cut down to the treatment alone under degeneracy.
    fn effective_factors(&self) -> Vec<Factor> {
        let mut factors = self.structure.factors(self.dotted_edges);
        if self.degeneracy == Some(Degeneracy::OutcomeDetachedFromLatent) {
            let treatment = self.structure.treatment().expect("validated structure");
            for f in &mut factors {
                if f.child == self.structure.outcome() {
                    f.parents = vec![treatment];
                }
            }
        }
        factors
    }
}

/// Latent-side conditionals read off a full law, the ground truth the
/// recovered factors are compared against. One entry per treatment level,
/// or a single entry with an empty context when the structure has no
/// treatment.
#[derive(Debug, Clone)]
pub struct LatentFactors {
    pub latent: String,
    pub outcome_proxy_given_latent: CondMatrix,
    pub treatment_proxy_given_latent: Vec<CondMatrix>,
    pub outcome_given_latent: Vec<CondMatrix>,
    pub latent_given_treatment: Vec<Vec<f64>>,
    pub latent_marginal: Vec<f64>,
}

fn treatment_contexts(law: &FullLaw, structure: Structure) -> Result<Vec<Assignment>> {
    match structure.treatment() {
        Some(t) => (0..law.cardinality(t)?)
            .map(|a| {
                let mut c = Assignment::new();
                c.insert(t.to_string(), a);
                Ok(c)
            })
            .collect(),
        None => Ok(vec![Assignment::new()]),
    }
}

/// Reads the proxied latent's conditionals off the full law. Auditing-side
/// only: identifiers never see these.
pub fn latent_factors(law: &FullLaw, structure: Structure) -> Result<LatentFactors> {
    let latent = structure.latent_role().ok_or_else(|| {
        Error::Domain(format!(
            "structure `{}` has no proxied latent",
            structure.name()
        ))
    })?;
    let contexts = treatment_contexts(law, structure)?;
    let mut treatment_proxy_given_latent = Vec::with_capacity(contexts.len());
    let mut outcome_given_latent = Vec::with_capacity(contexts.len());
    let mut latent_given_treatment = Vec::with_capacity(contexts.len());
    for context in &contexts {
        treatment_proxy_given_latent.push(law.cond_matrix("Z", latent, context)?);
        outcome_given_latent.push(law.cond_matrix("Y", latent, context)?);
        let f_l = law.condition(&[latent], context)?;
        latent_given_treatment.push(f_l.probabilities().iter().copied().collect());
    }
    Ok(LatentFactors {
        latent: latent.to_string(),
        outcome_proxy_given_latent: law.cond_matrix("W", latent, &Assignment::new())?,
        treatment_proxy_given_latent,
        outcome_given_latent,
        latent_given_treatment,
        latent_marginal: law.marginal_vector(latent)?,
    })
}

/// The law the identifiers are allowed to see.
pub fn observed_margin(law: &FullLaw, structure: Structure) -> Result<FullLaw> {
    law.marginalize(&structure.observed())
}

fn sample_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let dirichlet = Dirichlet::new_with_size(1.0, k).expect("flat Dirichlet, k >= 2");
    let mut v: Vec<f64> = dirichlet.sample(rng);
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total.max(1e-300);
    }
    v
}

struct SampledFactor {
    child_position: usize,
    parent_positions: Vec<usize>,
    parent_cards: Vec<usize>,
    child_card: usize,
    /// One simplex point per parent combination, last parent fastest.
    table: Vec<f64>,
}

impl SampledFactor {
    fn value(&self, index: &[usize]) -> f64 {
        let mut combo = 0;
        for (pos, card) in self.parent_positions.iter().zip(&self.parent_cards) {
            combo = combo * card + index[*pos];
        }
        self.table[combo * self.child_card + index[self.child_position]]
    }
}

fn sample_law(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<FullLaw> {
    let variables = spec.structure.variables();
    let position: BTreeMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, i))
        .collect();
    let cards: Vec<usize> = variables
        .iter()
        .map(|v| spec.card(v))
        .collect::<Result<_>>()?;

    let mut sampled = Vec::new();
    for factor in spec.effective_factors() {
        let parent_cards: Vec<usize> = factor
            .parents
            .iter()
            .map(|p| spec.card(p))
            .collect::<Result<_>>()?;
        let child_card = spec.card(factor.child)?;
        let combos: usize = parent_cards.iter().product::<usize>().max(1);
        let mut table = Vec::with_capacity(combos * child_card);
        for _ in 0..combos {
            table.extend(sample_simplex(rng, child_card));
        }
        sampled.push(SampledFactor {
            child_position: position[factor.child],
            parent_positions: factor.parents.iter().map(|p| position[*p]).collect(),
            parent_cards,
            child_card,
            table,
        });
    }

    let mut cells = Vec::with_capacity(cards.iter().product());
    for index in multi_range(&cards) {
        let mut p = 1.0;
        for factor in &sampled {
            p *= factor.value(&index);
        }
        cells.push(p);
    }
    let domains: Vec<CategoricalDomain> = variables
        .iter()
        .zip(&cards)
        .map(|(v, &k)| CategoricalDomain::indexed(v, k))
        .collect::<Result<_>>()?;
    let table = ArrayD::from_shape_vec(IxDyn(&cards), cells)
        .map_err(|e| Error::Domain(format!("table assembly failed: {e}")))?;
    FullLaw::new(
        domains,
        table,
        Some(spec.structure.dag_edges(spec.dotted_edges)),
    )
}

fn smallest_relevant_singular(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}

/// Largest over rows of the smallest pairwise entry gap; infinite when the
/// matrix has fewer than two columns.
pub(crate) fn best_row_gap(m: &DMatrix<f64>) -> f64 {
    if m.ncols() < 2 {
        return f64::INFINITY;
    }
    let mut best = f64::NEG_INFINITY;
    for r in 0..m.nrows() {
        let mut row_gap = f64::INFINITY;
        for i in 0..m.ncols() {
            for j in i + 1..m.ncols() {
                row_gap = row_gap.min((m[(r, i)] - m[(r, j)]).abs());
            }
        }
        best = best.max(row_gap);
    }
    best
}

/// Rejects constraint sets no sampled table can ever satisfy, so the
/// generator fails immediately instead of burning the whole retry budget.
fn feasibility_check(spec: &ModelSpec) -> Result<()> {
    let flags = &spec.constraints;
    if !flags.any() {
        return Ok(());
    }
    let latent = match spec.structure.latent_role() {
        Some(l) => l,
        None => return Ok(()),
    };
    let r = spec.card(latent)?;
    let (w, z, y) = (spec.card("W")?, spec.card("Z")?, spec.card("Y")?);
    if flags.force_invertible && (z < r || w < r) {
        return Err(Error::Generation {
            attempts: 0,
            constraint: format!(
                "invertible: a proxy has fewer states ({}) than the latent ({r})",
                z.min(w)
            ),
        });
    }
    if flags.force_distinct_rows && y == 1 && r > 1 {
        return Err(Error::Generation {
            attempts: 0,
            constraint: "distinct-rows: a one-state outcome cannot separate latent \
                         states"
                .into(),
        });
    }
    if flags.force_kruskal {
        let best = w.min(r) + z.min(r) + y.min(r);
        let needed = 2 * r + 2;
        if best < needed {
            return Err(Error::Generation {
                attempts: 0,
                constraint: format!(
                    "kruskal: attainable k-rank sum {best} cannot reach {needed}"
                ),
            });
        }
    }
    Ok(())
}

/// Name of the first violated constraint, or None when all requested
/// constraints hold.
fn violated_constraint(
    spec: &ModelSpec,
    law: &FullLaw,
    tol: &Tolerances,
) -> Result<Option<&'static str>> {
    let flags = &spec.constraints;
    let needs_factors =
        flags.force_invertible || flags.force_distinct_rows || flags.force_kruskal;
    let factors = if needs_factors {
        Some(latent_factors(law, spec.structure)?)
    } else {
        None
    };
    if let Some(f) = &factors {
        if flags.force_invertible {
            if smallest_relevant_singular(&f.outcome_proxy_given_latent.entries)
                < SINGULAR_VALUE_MARGIN
            {
                return Ok(Some("invertible"));
            }
            for m in &f.treatment_proxy_given_latent {
                if smallest_relevant_singular(&m.entries) < SINGULAR_VALUE_MARGIN {
                    return Ok(Some("invertible"));
                }
            }
        }
        if flags.force_distinct_rows {
            for m in &f.outcome_given_latent {
                if best_row_gap(&m.entries) < ROW_GAP_MARGIN {
                    return Ok(Some("distinct-rows"));
                }
            }
        }
        if flags.force_kruskal {
            for (level, pz) in f.treatment_proxy_given_latent.iter().enumerate() {
                let mut col_factor = pz.entries.clone();
                for (i, &mass) in f.latent_given_treatment[level].iter().enumerate() {
                    for r in 0..col_factor.nrows() {
                        col_factor[(r, i)] *= mass;
                    }
                }
                let report = check_kruskal(
                    &f.outcome_proxy_given_latent.entries,
                    &col_factor,
                    &f.outcome_given_latent[level].entries,
                    tol,
                )?;
                if !report.holds {
                    return Ok(Some("kruskal"));
                }
            }
        }
    }
    if flags.force_bridge_solvable {
        let margin = observed_margin(law, spec.structure)?;
        let roles = spec.structure.proxy_roles().expect("validated structure");
        for a in 0..margin.cardinality(&roles.treatment)? {
            let (_, residual) = solve_bridge(&margin, &roles, a, tol)?;
            if residual > tol.audit_bridge_residual {
                return Ok(Some("bridge-solvable"));
            }
        }
    }
    Ok(None)
}

/// Samples a full law Markov to the spec's structure, retrying until the
/// requested constraints hold. Deterministic given the spec (the seed
/// drives every draw, including retries).
pub fn generate(spec: &ModelSpec, tol: &Tolerances) -> Result<FullLaw> {
    spec.validate()?;
    feasibility_check(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut failures: BTreeMap<&'static str, usize> = BTreeMap::new();
    for _ in 0..GENERATION_ATTEMPT_CAP {
        let law = sample_law(spec, &mut rng)?;
        match violated_constraint(spec, &law, tol)? {
            None => return Ok(law),
            Some(name) => *failures.entry(name).or_insert(0) += 1,
        }
    }
    let constraint = failures
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(name, count)| format!("{name} ({count} of {GENERATION_ATTEMPT_CAP} attempts)"))
        .unwrap_or_else(|| "none".into());
    Err(Error::Generation {
        attempts: GENERATION_ATTEMPT_CAP,
        constraint,
    })
}
