//! Time-varying gains that blow up at a prescribed deadline.
//!
//! A class-`K_T` gain `mu(t)` is defined on `[t0, T + t0)`, starts at
//! `b = mu(t0)`, is strictly increasing, and satisfies `mu_dot <= b_tilde * mu^2`.
//! Two closed forms are supported: a (scaled) power form and an exponential form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default numerical ceiling on `mu`.
pub const DEFAULT_MU_CAP: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("time {t} outside the gain domain [{t0}, {deadline})")]
    Domain { t: f64, t0: f64, deadline: f64 },
    #[error("invalid gain parameters: {0}")]
    InvalidParameters(String),
    #[error("kappa integral overflows the floating point range at t = {t}")]
    Overflow { t: f64 },
}

/// Closed form of the gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum GainForm {
    /// `scale * (T / (T + t0 - t))^m` with `m >= 1`.
    Power { m: f64, scale: f64 },
    /// `exp(1 / (T + t0 - t))`.
    Exp,
}

/// Anything that behaves like a prescribed-time gain on `[t0, T + t0)`.
///
/// [`verify_class_kt`] works against this trait so that hand-built test
/// functions can be checked the same way as [`GainFunction`].
pub trait PrescribedGain {
    fn t0(&self) -> f64;
    fn horizon(&self) -> f64;
    fn mu(&self, t: f64) -> Result<f64, GainError>;
    fn mu_dot(&self, t: f64) -> Result<f64, GainError>;
    fn b_tilde(&self) -> f64;

    /// Numerical ceiling applied to `mu`; samples at the ceiling are not
    /// checked against the derivative bound.
    fn mu_cap(&self) -> f64 {
        f64::INFINITY
    }

    fn deadline(&self) -> f64 {
        self.t0() + self.horizon()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainFunction {
    form: GainForm,
    t0: f64,
    horizon: f64,
    mu_cap: f64,
    b: f64,
    b_prime: f64,
    b_tilde: f64,
}

impl GainFunction {
    pub fn new(form: GainForm, t0: f64, horizon: f64, mu_cap: f64) -> Result<Self, GainError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(GainError::InvalidParameters(format!(
                "horizon T must be positive and finite, got {horizon}"
            )));
        }
        if !t0.is_finite() {
            return Err(GainError::InvalidParameters("t0 must be finite".into()));
        }
        if !(mu_cap > 0.0) {
            return Err(GainError::InvalidParameters(format!(
                "mu_cap must be positive, got {mu_cap}"
            )));
        }
        let (b, b_prime, b_tilde) = match form {
            GainForm::Power { m, scale } => {
                if !(m >= 1.0) || !m.is_finite() {
                    return Err(GainError::InvalidParameters(format!(
                        "power exponent m must be >= 1, got {m}"
                    )));
                }
                if !(scale > 0.0) || !scale.is_finite() {
                    return Err(GainError::InvalidParameters(format!(
                        "power scale must be positive, got {scale}"
                    )));
                }
                // mu_dot / mu^2 = m * tau^(m-1) / (scale * T^m), largest at tau = T.
                (scale, scale * m / horizon, m / (scale * horizon))
            }
            GainForm::Exp => {
                let b = (1.0 / horizon).exp();
                // mu_dot / mu^2 = u^2 exp(-u) with u = 1/tau >= 1/T; peak at u = 2.
                let u_min = 1.0 / horizon;
                let b_tilde = if u_min <= 2.0 {
                    4.0 / 2f64.exp()
                } else {
                    u_min * u_min * (-u_min).exp()
                };
                (b, b * u_min * u_min, b_tilde)
            }
        };
        Ok(Self {
            form,
            t0,
            horizon,
            mu_cap,
            b,
            b_prime,
            b_tilde,
        })
    }

    /// Unit power form `(T / (T + t0 - t))^m`.
    pub fn power(m: f64, t0: f64, horizon: f64) -> Result<Self, GainError> {
        Self::new(GainForm::Power { m, scale: 1.0 }, t0, horizon, DEFAULT_MU_CAP)
    }

    pub fn form(&self) -> GainForm {
        self.form
    }

    /// `mu(t0)`.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// `mu_dot(t0)`.
    pub fn b_prime(&self) -> f64 {
        self.b_prime
    }

    fn remaining(&self, t: f64) -> Result<f64, GainError> {
        let deadline = self.t0 + self.horizon;
        if t < self.t0 || t >= deadline || t.is_nan() {
            return Err(GainError::Domain {
                t,
                t0: self.t0,
                deadline,
            });
        }
        Ok(deadline - t)
    }

    fn raw_mu(&self, tau: f64) -> f64 {
        match self.form {
            GainForm::Power { m, scale } => scale * (self.horizon / tau).powf(m),
            GainForm::Exp => (1.0 / tau).exp(),
        }
    }

    /// `mu(t)` clamped at `mu_cap`.
    pub fn eval_mu(&self, t: f64) -> Result<f64, GainError> {
        let tau = self.remaining(t)?;
        Ok(self.raw_mu(tau).min(self.mu_cap))
    }

    /// Analytic `d mu / dt`.
    pub fn eval_mu_dot(&self, t: f64) -> Result<f64, GainError> {
        let tau = self.remaining(t)?;
        let raw = match self.form {
            GainForm::Power { m, scale } => scale * m * self.horizon.powf(m) / tau.powf(m + 1.0),
            GainForm::Exp => (1.0 / tau).exp() / (tau * tau),
        };
        Ok(raw)
    }

    /// `mu_dot / mu`, evaluated analytically (no differencing).
    pub fn eval_mu_tilde(&self, t: f64) -> Result<f64, GainError> {
        let tau = self.remaining(t)?;
        Ok(match self.form {
            GainForm::Power { m, .. } => m / tau,
            GainForm::Exp => 1.0 / (tau * tau),
        })
    }

    /// `exp(iota * int_{t0}^{t} alpha(mu(s)) ds)` by the trapezoidal rule with
    /// the given step (the last panel is shortened to land on `t`).
    pub fn kappa<F>(&self, iota: f64, alpha: F, t: f64, step: f64) -> Result<f64, GainError>
    where
        F: Fn(f64) -> f64,
    {
        self.remaining(t)?;
        if !(step > 0.0) {
            return Err(GainError::InvalidParameters(format!(
                "quadrature step must be positive, got {step}"
            )));
        }
        if iota == 0.0 {
            return Ok(1.0);
        }
        let span = t - self.t0;
        let panels = (span / step).ceil() as usize;
        let mut integral = 0.0;
        let mut prev = alpha(self.eval_mu(self.t0)?);
        for k in 1..=panels {
            let s = if k == panels {
                t
            } else {
                self.t0 + k as f64 * step
            };
            let s_prev = if k == 1 {
                self.t0
            } else {
                self.t0 + (k - 1) as f64 * step
            };
            let cur = alpha(self.eval_mu(s)?);
            integral += 0.5 * (prev + cur) * (s - s_prev);
            prev = cur;
        }
        let exponent = iota * integral;
        if exponent > f64::MAX.ln() {
            return Err(GainError::Overflow { t });
        }
        Ok(exponent.exp())
    }
}

impl PrescribedGain for GainFunction {
    fn t0(&self) -> f64 {
        self.t0
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn mu(&self, t: f64) -> Result<f64, GainError> {
        self.eval_mu(t)
    }

    fn mu_dot(&self, t: f64) -> Result<f64, GainError> {
        self.eval_mu_dot(t)
    }

    fn b_tilde(&self) -> f64 {
        self.b_tilde
    }

    fn mu_cap(&self) -> f64 {
        self.mu_cap
    }
}

impl GainFunction {
    /// Constant with `mu_dot <= b_tilde * mu^2` on the whole domain.
    pub fn b_tilde(&self) -> f64 {
        self.b_tilde
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassKtReport {
    pub grid_points: usize,
    /// Largest `mu(t_k) - mu(t_{k+1})` over the grid (positive means a decrease).
    pub max_monotonicity_violation: f64,
    /// Largest `(mu_dot - b_tilde mu^2) / mu^2` over the grid.
    pub max_derivative_bound_violation: f64,
    pub b: f64,
    pub b_tilde: f64,
    /// `mu(t0) < 1`. Admissible but outside the usual examples.
    pub b_below_one: bool,
    pub pass: bool,
}

const CLASS_KT_TOL: f64 = 1e-12;

/// Samples `[t0, T + t0 - eps_stop]` uniformly and checks monotonicity and the
/// derivative bound. Samples where `mu` reaches its cap are skipped for the
/// derivative bound (the cap is numerical, not part of the gain).
pub fn verify_class_kt<G: PrescribedGain + ?Sized>(
    gain: &G,
    grid_points: usize,
) -> Result<ClassKtReport, GainError> {
    if grid_points < 2 {
        return Err(GainError::InvalidParameters(
            "verify_class_kt needs at least two grid points".into(),
        ));
    }
    let eps_stop = gain.horizon() * 1e-6;
    let t0 = gain.t0();
    let t_last = gain.deadline() - eps_stop;
    let dt = (t_last - t0) / (grid_points - 1) as f64;

    let mut max_mono = f64::NEG_INFINITY;
    let mut max_bound = f64::NEG_INFINITY;
    let mut prev_mu: Option<f64> = None;
    let b = gain.mu(t0)?;
    for k in 0..grid_points {
        let t = if k + 1 == grid_points {
            t_last
        } else {
            t0 + k as f64 * dt
        };
        let mu = gain.mu(t)?;
        let mu_dot = gain.mu_dot(t)?;
        if let Some(p) = prev_mu {
            max_mono = max_mono.max(p - mu);
        }
        if mu < gain.mu_cap() {
            let rel = (mu_dot - gain.b_tilde() * mu * mu) / (mu * mu);
            max_bound = max_bound.max(rel);
        }
        max_mono = max_mono.max(-mu_dot);
        prev_mu = Some(mu);
    }
    let pass = max_mono <= CLASS_KT_TOL && max_bound <= CLASS_KT_TOL;
    Ok(ClassKtReport {
        grid_points,
        max_monotonicity_violation: max_mono,
        max_derivative_bound_violation: max_bound,
        b,
        b_tilde: gain.b_tilde(),
        b_below_one: b < 1.0,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(m: f64, horizon: f64) -> GainFunction {
        GainFunction::power(m, 0.0, horizon).unwrap()
    }

    fn scaled(m: f64, scale: f64, horizon: f64) -> GainFunction {
        GainFunction::new(GainForm::Power { m, scale }, 0.0, horizon, DEFAULT_MU_CAP).unwrap()
    }

    #[test]
    fn power_form_values() {
        assert_eq!(unit(1.0, 2.0).eval_mu(0.0).unwrap(), 1.0);
        assert_eq!(unit(1.0, 2.0).eval_mu(1.0).unwrap(), 2.0);
        assert_eq!(scaled(1.0, 5.0, 2.0).eval_mu(0.0).unwrap(), 5.0);
    }

    #[test]
    fn power_form_derivatives() {
        assert_relative_eq!(unit(1.0, 2.0).eval_mu_dot(0.0).unwrap(), 0.5);
        assert_relative_eq!(scaled(1.0, 5.0, 2.0).eval_mu_dot(0.0).unwrap(), 2.5);
        assert_relative_eq!(unit(2.0, 1.0).eval_mu_dot(0.0).unwrap(), 2.0);
        assert_relative_eq!(unit(1.0, 2.0).eval_mu_tilde(0.0).unwrap(), 0.5);
        assert_relative_eq!(scaled(1.0, 5.0, 2.0).eval_mu_tilde(1.0).unwrap(), 1.0);
    }

    #[test]
    fn unit_power_constants() {
        let g = unit(3.0, 2.0);
        assert_eq!(g.b(), 1.0);
        assert_relative_eq!(g.b_prime(), 1.5);
        assert_relative_eq!(g.b_tilde(), 1.5);
        let s = scaled(1.0, 5.0, 2.0);
        assert_relative_eq!(s.b(), 5.0);
        assert_relative_eq!(s.b_prime(), 2.5);
        assert_relative_eq!(s.b_tilde(), 0.1);
    }

    #[test]
    fn exp_form_constants() {
        let g = GainFunction::new(GainForm::Exp, 0.0, 1.0, DEFAULT_MU_CAP).unwrap();
        assert_relative_eq!(g.b(), 1f64.exp());
        assert_relative_eq!(g.b_prime(), 1f64.exp());
        assert_relative_eq!(g.b_tilde(), 4.0 / 2f64.exp());
    }

    #[test]
    fn domain_errors() {
        let g = unit(1.0, 2.0);
        assert!(matches!(g.eval_mu(-0.1), Err(GainError::Domain { .. })));
        assert!(matches!(g.eval_mu(2.0), Err(GainError::Domain { .. })));
        assert!(matches!(g.eval_mu_dot(2.5), Err(GainError::Domain { .. })));
        assert!(matches!(g.eval_mu_tilde(f64::NAN), Err(GainError::Domain { .. })));
    }

    #[test]
    fn cap_applies_near_deadline() {
        let g = unit(1.0, 2.0);
        assert_eq!(g.eval_mu(2.0 - 1e-12).unwrap(), DEFAULT_MU_CAP);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GainFunction::power(0.5, 0.0, 1.0).is_err());
        assert!(GainFunction::power(1.0, 0.0, 0.0).is_err());
        assert!(GainFunction::new(GainForm::Power { m: 1.0, scale: -1.0 }, 0.0, 1.0, 1e9).is_err());
    }

    #[test]
    fn kappa_closed_form() {
        let g = unit(1.0, 2.0);
        assert_eq!(g.kappa(0.0, |s| s, 1.3, 1e-3).unwrap(), 1.0);
        // exp(-int_0^1 2/(2 - s) ds) = exp(-2 ln 2)
        let k = g.kappa(-1.0, |s| s, 1.0, 1e-4).unwrap();
        assert!((k - 0.25).abs() < 1e-6, "{k}");
        let late = g.kappa(-1.0, |s| s, 2.0 - 1e-6, 1e-4).unwrap();
        assert!(late < 1e-10);
    }

    #[test]
    fn kappa_overflow_signalled() {
        let g = unit(1.0, 2.0);
        let r = g.kappa(1e4, |s| s, 2.0 - 1e-9, 1e-3);
        assert!(matches!(r, Err(GainError::Overflow { .. })));
    }

    #[test]
    fn class_kt_reports() {
        for m in [1.0, 2.0, 3.0] {
            let r = verify_class_kt(&unit(m, 2.0), 2000).unwrap();
            assert!(r.pass, "{r:?}");
            assert!(!r.b_below_one);
        }
        let e = GainFunction::new(GainForm::Exp, 0.0, 1.0, DEFAULT_MU_CAP).unwrap();
        assert!(verify_class_kt(&e, 2000).unwrap().pass);
        let small = scaled(1.0, 0.5, 2.0);
        let r = verify_class_kt(&small, 100).unwrap();
        assert!(r.pass && r.b_below_one);
    }

    struct Decreasing;

    impl PrescribedGain for Decreasing {
        fn t0(&self) -> f64 {
            0.0
        }
        fn horizon(&self) -> f64 {
            1.0
        }
        fn mu(&self, t: f64) -> Result<f64, GainError> {
            Ok(2.0 - t)
        }
        fn mu_dot(&self, _t: f64) -> Result<f64, GainError> {
            Ok(-1.0)
        }
        fn b_tilde(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn decreasing_function_fails() {
        let r = verify_class_kt(&Decreasing, 50).unwrap();
        assert!(!r.pass);
        assert!(r.max_monotonicity_violation > 0.0);
    }

    #[test]
    fn too_few_grid_points() {
        assert!(verify_class_kt(&unit(1.0, 1.0), 1).is_err());
    }
}
