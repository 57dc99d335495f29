//! Linear-Gaussian companion model for the confounder structure.
//!
//! In the linear case the counterfactual mean has a closed form, so the
//! structural model doubles as an end-to-end check on the causal
//! semantics: simulate under an intervention and compare the Monte Carlo
//! mean against the formula. The module also exposes the exact average
//! causal effect, which a naive regression misses by a computable bias
//! term whenever the latent path is active.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear structural model over U -> {Z, W, A, Y}, Z -> A, A -> Y with
/// independent Gaussian noise on every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSem {
    pub mean_u: f64,
    pub intercept_z: f64,
    pub effect_u_on_z: f64,
    pub intercept_a: f64,
    pub effect_u_on_a: f64,
    pub effect_z_on_a: f64,
    pub intercept_w: f64,
    pub effect_u_on_w: f64,
    pub intercept_y: f64,
    pub effect_a_on_y: f64,
    pub effect_u_on_y: f64,
    pub var_u: f64,
    pub var_z: f64,
    pub var_a: f64,
    pub var_w: f64,
    pub var_y: f64,
}

/// Columns of one simulated dataset, index-aligned across variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemSample {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

/// Closed form against simulation, with the discrepancy in standard
/// errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub treatment_level: f64,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z_score: f64,
    pub draws: usize,
    pub seed: u64,
}

impl GaussianSem {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mean_u", self.mean_u),
            ("intercept_z", self.intercept_z),
            ("effect_u_on_z", self.effect_u_on_z),
            ("intercept_a", self.intercept_a),
            ("effect_u_on_a", self.effect_u_on_a),
            ("effect_z_on_a", self.effect_z_on_a),
            ("intercept_w", self.intercept_w),
            ("effect_u_on_w", self.effect_u_on_w),
            ("intercept_y", self.intercept_y),
            ("effect_a_on_y", self.effect_a_on_y),
            ("effect_u_on_y", self.effect_u_on_y),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::Domain(format!("`{name}` must be finite")));
            }
        }
        let variances = [
            ("var_u", self.var_u),
            ("var_z", self.var_z),
            ("var_a", self.var_a),
            ("var_w", self.var_w),
            ("var_y", self.var_y),
        ];
        for (name, value) in variances {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Domain(format!("`{name}` must be a positive \
                                                  finite variance")));
            }
        }
        Ok(())
    }

    /// Coefficients uniform on [-2, 2], variances uniform on [0.5, 2].
    pub fn random(rng: &mut ChaCha8Rng) -> GaussianSem {
        let mut coeff = || rng.gen_range(-2.0..2.0);
        let (mean_u, intercept_z, effect_u_on_z) = (coeff(), coeff(), coeff());
        let (intercept_a, effect_u_on_a, effect_z_on_a) = (coeff(), coeff(), coeff());
        let (intercept_w, effect_u_on_w) = (coeff(), coeff());
        let (intercept_y, effect_a_on_y, effect_u_on_y) = (coeff(), coeff(), coeff());
        let mut var = || rng.gen_range(0.5..2.0);
        GaussianSem {
            mean_u,
            intercept_z,
            effect_u_on_z,
            intercept_a,
            effect_u_on_a,
            effect_z_on_a,
            intercept_w,
            effect_u_on_w,
            intercept_y,
            effect_a_on_y,
            effect_u_on_y,
            var_u: var(),
            var_z: var(),
            var_a: var(),
            var_w: var(),
            var_y: var(),
        }
    }

    /// E[Y | do(A = a)]: the latent enters only through its mean because
    /// the intervention severs every other path into Y.
    pub fn counterfactual_mean(&self, a: f64) -> f64 {
        self.intercept_y + self.effect_a_on_y * a + self.effect_u_on_y * self.mean_u
    }

    /// Difference of counterfactual means per unit of treatment.
    pub fn ace(&self) -> f64 {
        self.effect_a_on_y
    }

    /// Ancestral simulation; `intervention` replaces the treatment
    /// assignment with a constant and leaves everything upstream alone.
    pub fn simulate(&self, n: usize, seed: u64, intervention: Option<f64>) -> Result<SemSample> {
        self.validate()?;
        if let Some(a) = intervention {
            if !a.is_finite() {
                return Err(Error::Domain("intervention level must be finite".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |mean: f64, var: f64, rng: &mut ChaCha8Rng| {
            let noise: f64 = StandardNormal.sample(rng);
            mean + var.sqrt() * noise
        };
        let mut sample = SemSample {
            u: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let u = draw(self.mean_u, self.var_u, &mut rng);
            let z = draw(self.intercept_z + self.effect_u_on_z * u, self.var_z, &mut rng);
            let a = match intervention {
                Some(level) => level,
                None => draw(
                    self.intercept_a + self.effect_u_on_a * u + self.effect_z_on_a * z,
                    self.var_a,
                    &mut rng,
                ),
            };
            let w = draw(self.intercept_w + self.effect_u_on_w * u, self.var_w, &mut rng);
            let y = draw(
                self.intercept_y + self.effect_a_on_y * a + self.effect_u_on_y * u,
                self.var_y,
                &mut rng,
            );
            sample.u.push(u);
            sample.z.push(z);
            sample.a.push(a);
            sample.w.push(w);
            sample.y.push(y);
        }
        Ok(sample)
    }

    /// Simulates under do(A = level) and reports the closed form next to
    /// the Monte Carlo mean with its standard error.
    pub fn monte_carlo_check(
        &self,
        treatment_level: f64,
        draws: usize,
        seed: u64,
    ) -> Result<MonteCarloCheck> {
        if draws < 2 {
            return Err(Error::Domain(
                "a standard error needs at least two draws".into(),
            ));
        }
        let sample = self.simulate(draws, seed, Some(treatment_level))?;
        let mc_mean = sample.y.iter().sum::<f64>() / draws as f64;
        let ss: f64 = sample.y.iter().map(|y| (y - mc_mean).powi(2)).sum();
        let mc_se = (ss / (draws as f64 - 1.0)).sqrt() / (draws as f64).sqrt();
        let closed_form = self.counterfactual_mean(treatment_level);
        Ok(MonteCarloCheck {
            treatment_level,
            closed_form,
            mc_mean,
            mc_se,
            z_score: (mc_mean - closed_form) / mc_se,
            draws,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn confounded_sem() -> GaussianSem {
        GaussianSem {
            mean_u: 0.5,
            intercept_z: 0.1,
            effect_u_on_z: 1.2,
            intercept_a: -0.3,
            effect_u_on_a: 0.9,
            effect_z_on_a: 0.6,
            intercept_w: 0.2,
            effect_u_on_w: 1.1,
            intercept_y: 0.4,
            effect_a_on_y: 0.8,
            effect_u_on_y: 1.5,
            var_u: 1.0,
            var_z: 0.7,
            var_a: 0.9,
            var_w: 0.8,
            var_y: 1.1,
        }
    }

    #[test]
    fn counterfactual_mean_is_affine_with_slope_ace() {
        let sem = confounded_sem();
        assert_eq!(sem.ace(), sem.effect_a_on_y);
        let at0 = sem.counterfactual_mean(0.0);
        let at1 = sem.counterfactual_mean(1.0);
        let at3 = sem.counterfactual_mean(3.0);
        assert!((at1 - at0 - sem.ace()).abs() < 1e-12);
        assert!((at3 - at0 - 3.0 * sem.ace()).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_the_closed_form() {
        let sem = confounded_sem();
        let check = sem.monte_carlo_check(1.5, 40_000, 17).unwrap();
        assert!(
            check.z_score.abs() <= 3.0,
            "z = {}, mc {} vs closed {}",
            check.z_score,
            check.mc_mean,
            check.closed_form
        );
        assert!(check.mc_se > 0.0);
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let sem = confounded_sem();
        let a = sem.simulate(100, 5, None).unwrap();
        let b = sem.simulate(100, 5, None).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.w, b.w);
        let c = sem.simulate(100, 6, None).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn intervention_pins_the_treatment_column() {
        let sem = confounded_sem();
        let sample = sem.simulate(50, 3, Some(2.5)).unwrap();
        assert!(sample.a.iter().all(|&a| a == 2.5));
    }

    #[test]
    fn naive_regression_recovers_the_confounded_slope_not_the_ace() {
        let sem = confounded_sem();
        let sample = sem.simulate(200_000, 11, None).unwrap();
        let n = sample.a.len() as f64;
        let mean_a = sample.a.iter().sum::<f64>() / n;
        let mean_y = sample.y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (a, y) in sample.a.iter().zip(&sample.y) {
            cov += (a - mean_a) * (y - mean_y);
            var += (a - mean_a).powi(2);
        }
        let ols = cov / var;
        // Total latent-to-treatment effect, direct plus through Z.
        let gamma = sem.effect_u_on_a + sem.effect_z_on_a * sem.effect_u_on_z;
        let var_a = gamma.powi(2) * sem.var_u
            + sem.effect_z_on_a.powi(2) * sem.var_z
            + sem.var_a;
        let confounded = sem.effect_a_on_y + sem.effect_u_on_y * gamma * sem.var_u / var_a;
        assert!((ols - confounded).abs() < 0.02, "ols {ols} vs {confounded}");
        assert!(
            (ols - sem.ace()).abs() > 0.2,
            "confounding should bias the regression, ols {ols} vs ace {}",
            sem.ace()
        );
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut sem = confounded_sem();
        sem.var_y = 0.0;
        assert!(sem.validate().is_err());
        sem.var_y = -1.0;
        assert!(sem.validate().is_err());
        let mut sem = confounded_sem();
        sem.effect_a_on_y = f64::NAN;
        assert!(sem.validate().is_err());
        assert!(confounded_sem().simulate(10, 1, Some(f64::INFINITY)).is_err());
        assert!(confounded_sem().monte_carlo_check(0.0, 1, 1).is_err());
    }

    #[test]
    fn random_models_are_valid_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = GaussianSem::random(&mut rng);
        a.validate().unwrap();
        assert!(a.var_u >= 0.5 && a.var_u < 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let b = GaussianSem::random(&mut rng);
        assert_eq!(a, b);
    }
}
