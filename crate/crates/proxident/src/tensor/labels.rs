//! Ordinal label recovery for latent states.
//!
//! Array recovery returns latent factors in an arbitrary state order. When
//! the latent is declared ordinal, two extra assumptions pin the labels
//! down: either a known functional of a proxy conditional equals the latent
//! value itself (unbiasedness), or the functional is strictly ordered across
//! latent categories (monotonicity). Both reduce to computing one summary
//! number per recovered state and matching or sorting.

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::tensor::eigen::LatentRecovery;

/// Summary functional applied to a recovered conditional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFunctional {
    Mean,
    Median,
}

impl LabelFunctional {
    pub fn name(&self) -> &'static str {
        match self {
            LabelFunctional::Mean => "mean",
            LabelFunctional::Median => "median",
        }
    }
}

/// Which labeling assumption justifies the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// The functional of the proxy conditional equals the latent value.
    Unbiasedness,
    /// The functional is strictly ordered across latent categories.
    Monotonicity,
}

impl LabelMode {
    pub fn name(&self) -> &'static str {
        match self {
            LabelMode::Unbiasedness => "unbiasedness",
            LabelMode::Monotonicity => "monotonicity",
        }
    }
}

/// Which recovered conditional the functional is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyAxis {
    OutcomeProxy,
    Outcome { treatment_level: usize },
}

/// Sort convention used by monotonicity labeling. The data cannot tell the
/// two directions apart, so ascending is applied and reported; callers with
/// outside knowledge of a descending relation flip the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDirection {
    Ascending,
    Descending,
}

/// Recovered-state-to-ordinal-label assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMap {
    /// `assignment[i]` is the ordinal label of recovered latent state i.
    pub assignment: Vec<usize>,
    /// Functional value per recovered state, in recovered order.
    pub functional_values: Vec<f64>,
    /// Sort convention, monotonicity mode only.
    pub direction: Option<LabelDirection>,
}

fn functional_value(
    column: &[f64],
    values: &[f64],
    functional: LabelFunctional,
) -> f64 {
    match functional {
        LabelFunctional::Mean => column
            .iter()
            .zip(values)
            .map(|(&p, &v)| p * v)
            .sum(),
        LabelFunctional::Median => {
            // Smallest state value whose cumulative mass reaches one half,
            // accumulating in increasing value order.
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
            let mut cumulative = 0.0;
            for &i in &order {
                cumulative += column[i];
                if cumulative >= 0.5 {
                    return values[i];
                }
            }
            values[*order.last().expect("nonempty domain")]
        }
    }
}

/// Assigns ordinal labels to recovered latent states.
///
/// `proxy_values` gives the numeric value of each state of the chosen proxy
/// axis, in that domain's state order. Unbiasedness mode additionally needs
/// `latent_values`, the numeric value of each ordinal label; each label goes
/// to the recovered state whose functional value is nearest, and a residual
/// mismatch beyond the identification tolerance is a recovery failure.
/// Functional values closer than the identification tolerance cannot be
/// ordered or matched and raise a label-ambiguity error in either mode.
pub fn recover_labels(
    rec: &LatentRecovery,
    proxy: ProxyAxis,
    functional: LabelFunctional,
    mode: LabelMode,
    proxy_values: &[f64],
    latent_values: Option<&[f64]>,
    tol: &Tolerances,
) -> Result<LabelMap> {
    let conditional = match proxy {
        ProxyAxis::OutcomeProxy => &rec.outcome_proxy_given_latent,
        ProxyAxis::Outcome { treatment_level } => {
            rec.outcome_given_latent.get(treatment_level).ok_or_else(|| {
                Error::Domain(format!(
                    "treatment level {treatment_level} out of range, law has {}",
                    rec.outcome_given_latent.len()
                ))
            })?
        }
    };
    let entries = &conditional.entries;
    if proxy_values.len() != entries.nrows() {
        return Err(Error::Domain(format!(
            "expected {} proxy state values, got {}",
            entries.nrows(),
            proxy_values.len()
        )));
    }
    if proxy_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("proxy state values must be finite".into()));
    }
    let k = rec.latent_cardinality;

    let values: Vec<f64> = (0..k)
        .map(|i| {
            let column: Vec<f64> = entries.column(i).iter().copied().collect();
            functional_value(&column, proxy_values, functional)
        })
        .collect();

    match mode {
        LabelMode::Monotonicity => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
            for pair in order.windows(2) {
                let gap = values[pair[1]] - values[pair[0]];
                if gap <= tol.identification {
                    return Err(Error::LabelAmbiguity(format!(
                        "functional values {} and {} are too close to order \
                         (gap {gap:e})",
                        values[pair[0]], values[pair[1]]
                    )));
                }
            }
            let mut assignment = vec![0; k];
            for (label, &state) in order.iter().enumerate() {
                assignment[state] = label;
            }
            Ok(LabelMap {
                assignment,
                functional_values: values,
                direction: Some(LabelDirection::Ascending),
            })
        }
        LabelMode::Unbiasedness => {
            let latent_values = latent_values.ok_or_else(|| {
                Error::Domain(
                    "unbiasedness labeling needs the numeric value of each \
                     ordinal label"
                        .into(),
                )
            })?;
            if latent_values.len() != k {
                return Err(Error::Domain(format!(
                    "expected {k} latent label values, got {}",
                    latent_values.len()
                )));
            }
            if latent_values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("latent label values must be finite".into()));
            }
            let mut assignment = vec![usize::MAX; k];
            let mut taken = vec![false; k];
            for (label, &target) in latent_values.iter().enumerate() {
                let mut best = 0;
                let mut best_dist = f64::INFINITY;
                let mut second_dist = f64::INFINITY;
                for (state, &v) in values.iter().enumerate() {
                    let d = (v - target).abs();
                    if d < best_dist {
                        second_dist = best_dist;
                        best_dist = d;
                        best = state;
                    } else if d < second_dist {
                        second_dist = d;
                    }
                }
                if (second_dist - best_dist).abs() <= tol.identification {
                    return Err(Error::LabelAmbiguity(format!(
                        "label value {target} is equally close to two recovered \
                         states (distances {best_dist:e} and {second_dist:e})"
                    )));
                }
                if best_dist > tol.identification {
                    return Err(Error::LabelRecovery(format!(
                        "label value {target} is {best_dist:e} away from the \
                         nearest recovered functional value, beyond tolerance"
                    )));
                }
                if taken[best] {
                    return Err(Error::LabelRecovery(format!(
                        "two label values matched recovered state {best}"
                    )));
                }
                taken[best] = true;
                assignment[best] = label;
            }
            Ok(LabelMap {
                assignment,
                functional_values: values,
                direction: None,
            })
        }
    }
}
