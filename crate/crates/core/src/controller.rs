//! Per-agent control laws: optimum-seeking auxiliary dynamics, the adaptive
//! prescribed-time tracking torque and the parameter-estimate update.
//!
//! All functions are pure. During the [`Phase::Frozen`] phase the auxiliary
//! states and the torque are identically zero and the estimate is not updated.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::Point;
use crate::plant::regression;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("the parameter estimate is only defined before the deadline")]
    FrozenAdaptive,
    #[error("invalid control gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Active,
    Frozen,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Active => "active",
            Phase::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentControllerState {
    pub varpi: Point,
    pub v: Point,
    pub theta_hat: Vector3<f64>,
}

/// Per-agent tracking gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGains {
    pub k1: f64,
    pub k2: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    pub c: f64,
    pub iota: f64,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ControlGains {
    pub fn uniform(n: usize, c: f64, iota: f64, k1: f64, k2: f64, sigma: f64) -> Self {
        Self {
            c,
            iota,
            k1: vec![k1; n],
            k2: vec![k2; n],
            sigma: vec![sigma; n],
        }
    }

    pub fn agent_count(&self) -> usize {
        self.k1.len()
    }

    pub fn agent(&self, i: usize) -> AgentGains {
        AgentGains {
            k1: self.k1[i],
            k2: self.k2[i],
            sigma: self.sigma[i],
        }
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn k1_max(&self) -> f64 {
        self.k1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Hard errors for unusable gains; returns warnings for gains that run but
    /// fall outside the convergence guarantees.
    pub fn validate(&self, agents: usize, b_tilde: f64) -> Result<Vec<String>, ControllerError> {
        for (name, v) in [("k1", &self.k1), ("k2", &self.k2), ("sigma", &self.sigma)] {
            if v.len() != agents {
                return Err(ControllerError::InvalidGains(format!(
                    "{name} has {} entries, expected {agents}",
                    v.len()
                )));
            }
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.c) {
            return Err(ControllerError::InvalidGains(format!("c must be positive, got {}", self.c)));
        }
        if !self.iota.is_finite() || self.iota < 1.0 {
            return Err(ControllerError::InvalidGains(format!(
                "iota must be at least 1, got {}",
                self.iota
            )));
        }
        for i in 0..agents {
            if !positive(self.k1[i]) || !positive(self.k2[i]) || !positive(self.sigma[i]) {
                return Err(ControllerError::InvalidGains(format!(
                    "agent {i}: k1, k2 and sigma must be positive"
                )));
            }
        }
        let mut warnings = Vec::new();
        if self.iota <= 2.0 {
            warnings.push(format!("iota = {} does not satisfy iota > 2", self.iota));
        }
        if self.sigma_min() < b_tilde {
            warnings.push(format!(
                "sigma_min = {} is below b_tilde = {b_tilde}",
                self.sigma_min()
            ));
        }
        Ok(warnings)
    }
}

/// `(d varpi, d v)` for one agent. `chi` is the agent's row of `(L ⊗ I) ybar`.
pub fn auxiliary_rhs(c: f64, v: &Point, grad: &Point, chi: &Point, mu: f64, phase: Phase) -> (Point, Point) {
    match phase {
        Phase::Active => (-c * mu * (grad + chi + v), c * mu * chi),
        Phase::Frozen => (Point::zeros(), Point::zeros()),
    }
}

/// Intermediate signals `(z1, z2)` feeding the regression term of the torque.
pub fn z_intermediates(
    k1: f64,
    iota: f64,
    mu: f64,
    mu_tilde: f64,
    qdot: &Vector2<f64>,
    e_y: &Vector2<f64>,
) -> (Vector2<f64>, Vector2<f64>) {
    let z1 = ((iota - 1.0) * mu_tilde + k1 * mu) * qdot + iota * k1 * mu * mu_tilde * e_y;
    let z2 = k1 * mu * e_y;
    (z1, z2)
}

/// Reference for the tracking loop in a formation: `varpi + omega`.
pub fn formation_shift(varpi: &Point, omega: &Point) -> Point {
    varpi + omega
}

/// Inputs shared by the torque and the estimate update of one agent.
///
/// The tracking error is stored rather than recomputed from `q` so that a
/// caller holding it to full relative precision keeps that precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingInput {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
    /// `y - reference`, with the reference shifted by [`formation_shift`].
    pub e_y: Vector2<f64>,
    pub theta_hat: Vector3<f64>,
    pub mu: f64,
    pub mu_tilde: f64,
}

impl TrackingInput {
    pub fn new(
        q: Vector2<f64>,
        qdot: Vector2<f64>,
        reference: Vector2<f64>,
        theta_hat: Vector3<f64>,
        mu: f64,
        mu_tilde: f64,
    ) -> Self {
        Self {
            q,
            qdot,
            e_y: q - reference,
            theta_hat,
            mu,
            mu_tilde,
        }
    }

    /// `qdot + k1 mu e_y`, the filtered tracking error.
    pub fn sliding(&self, k1: f64) -> Vector2<f64> {
        self.qdot + k1 * self.mu * self.e_y
    }
}

pub fn tracking_torque(input: &TrackingInput, gains: AgentGains, iota: f64, phase: Phase) -> Vector2<f64> {
    if phase == Phase::Frozen {
        return Vector2::zeros();
    }
    let e_y = input.e_y;
    let (z1, z2) = z_intermediates(gains.k1, iota, input.mu, input.mu_tilde, &input.qdot, &e_y);
    -gains.k2 * input.mu * input.sliding(gains.k1) - regression(&input.q, &input.qdot, &z1, &z2) * input.theta_hat
}

/// `d theta_hat = 2 mu^(2 iota - 2) Omega^T (qdot + k1 mu e_y) - sigma mu theta_hat`.
pub fn adaptive_rhs(
    input: &TrackingInput,
    gains: AgentGains,
    iota: f64,
    phase: Phase,
) -> Result<Vector3<f64>, ControllerError> {
    if phase == Phase::Frozen {
        return Err(ControllerError::FrozenAdaptive);
    }
    let e_y = input.e_y;
    let (z1, z2) = z_intermediates(gains.k1, iota, input.mu, input.mu_tilde, &input.qdot, &e_y);
    let omega = regression(&input.q, &input.qdot, &z1, &z2);
    let weight = 2.0 * input.mu.powf(2.0 * iota - 2.0);
    Ok(weight * omega.transpose() * input.sliding(gains.k1) - gains.sigma * input.mu * input.theta_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const GAINS: AgentGains = AgentGains {
        k1: 5.0,
        k2: 30.0,
        sigma: 4.0,
    };

    fn input(q: Vector2<f64>, qdot: Vector2<f64>, reference: Vector2<f64>) -> TrackingInput {
        TrackingInput::new(q, qdot, reference, Vector3::new(2.0, 2.0, 2.0), 5.0, 0.5)
    }

    #[test]
    fn auxiliary_examples() {
        let v = Point::new(0.3, -0.2);
        let any = Point::new(1.0, 2.0);
        assert_eq!(
            auxiliary_rhs(1.3, &v, &any, &any, 7.0, Phase::Frozen),
            (Point::zeros(), Point::zeros())
        );
        let (dw, dv) = auxiliary_rhs(1.0, &Point::zeros(), &Point::new(1.0, 0.0), &Point::zeros(), 1.0, Phase::Active);
        assert_eq!(dw, Point::new(-1.0, 0.0));
        assert_eq!(dv, Point::zeros());
        // consensus at the optimum with v = -grad
        let grad = Point::new(0.4, -1.1);
        let (dw, dv) = auxiliary_rhs(1.3, &(-grad), &grad, &Point::zeros(), 12.0, Phase::Active);
        assert_eq!((dw, dv), (Point::zeros(), Point::zeros()));
    }

    #[test]
    fn z_examples() {
        let (z1, z2) = z_intermediates(5.0, 2.44, 5.0, 2.5, &Vector2::new(1.0, 0.0), &Vector2::new(0.0, 1.0));
        assert_abs_diff_eq!(z1, Vector2::new(28.6, 152.5), epsilon = 1e-12);
        assert_abs_diff_eq!(z2, Vector2::new(0.0, 25.0), epsilon = 1e-12);

        let (z1, z2) = z_intermediates(5.0, 2.44, 3.0, 0.7, &Vector2::zeros(), &Vector2::zeros());
        assert_eq!((z1, z2), (Vector2::zeros(), Vector2::zeros()));

        let qd = Vector2::new(0.3, 0.4);
        let ey = Vector2::new(-1.0, 2.0);
        let (z1, z2) = z_intermediates(2.0, 3.0, 4.0, 0.0, &qd, &ey);
        assert_eq!(z1, 8.0 * qd);
        assert_eq!(z2, 8.0 * ey);
    }

    #[test]
    fn torque_vanishes_at_reference() {
        let r = Vector2::new(0.9, -0.4);
        for mu in [5.0, 1e3, 1e9] {
            let mut inp = input(r, Vector2::zeros(), r);
            inp.mu = mu;
            inp.theta_hat = Vector3::new(-3.0, 7.0, 0.1);
            assert_eq!(tracking_torque(&inp, GAINS, 2.44, Phase::Active), Vector2::zeros());
        }
    }

    #[test]
    fn torque_frozen_and_feedback_only() {
        let inp = input(Vector2::new(1.0, 2.0), Vector2::new(0.5, -0.5), Vector2::zeros());
        assert_eq!(tracking_torque(&inp, GAINS, 2.44, Phase::Frozen), Vector2::zeros());
        let mut bare = inp;
        bare.theta_hat = Vector3::zeros();
        let expected = -GAINS.k2 * bare.mu * (bare.qdot + GAINS.k1 * bare.mu * bare.e_y);
        assert_eq!(tracking_torque(&bare, GAINS, 2.44, Phase::Active), expected);
    }

    #[test]
    fn adaptive_examples() {
        let r = Vector2::new(0.2, 0.1);
        let inp = input(r, Vector2::zeros(), r);
        let d = adaptive_rhs(&inp, GAINS, 2.44, Phase::Active).unwrap();
        assert_abs_diff_eq!(d, -GAINS.sigma * inp.mu * inp.theta_hat, epsilon = 1e-14);

        let mut zero = inp;
        zero.theta_hat = Vector3::zeros();
        assert_eq!(adaptive_rhs(&zero, GAINS, 2.44, Phase::Active).unwrap(), Vector3::zeros());

        assert_eq!(
            adaptive_rhs(&inp, GAINS, 2.44, Phase::Frozen),
            Err(ControllerError::FrozenAdaptive)
        );
    }

    #[test]
    fn formation_shift_examples() {
        let w = Point::new(0.3, 0.4);
        assert_eq!(formation_shift(&w, &Point::zeros()), w);
        let z = Point::new(-1.0 / 12.0, -1.0 / 6.0);
        assert_abs_diff_eq!(
            formation_shift(&z, &Point::new(1.0, 0.0)),
            Point::new(11.0 / 12.0, -1.0 / 6.0),
            epsilon = 1e-15
        );
        let omega = Point::new(-0.5, 3f64.sqrt() / 2.0);
        assert_abs_diff_eq!(formation_shift(&w, &omega) - omega, w, epsilon = 1e-15);
    }

    #[test]
    fn validation() {
        let g = ControlGains::uniform(6, 1.3, 2.44, 5.0, 30.0, 4.0);
        assert!(g.validate(6, 0.1).unwrap().is_empty());
        let low_iota = ControlGains { iota: 1.5, ..g.clone() };
        assert_eq!(low_iota.validate(6, 0.1).unwrap().len(), 1);
        assert!(g.validate(5, 0.1).is_err());
        let bad = ControlGains { c: 0.0, ..g };
        assert!(bad.validate(6, 0.1).is_err());
    }
}
