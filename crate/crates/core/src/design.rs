//! Gain synthesis, design-criteria checks and the small-gain certificate.
//!
//! The four design criteria are:
//! - `iota`: `iota > 2`;
//! - `coupling`: `c = 2 delta_bar c* + 4 iota b_tilde + 4 delta_bar iota b_tilde` for some `c* > 0`;
//! - `leak`: `sigma_min > max{b_tilde, c_delta c_s / (c* delta_lower)}`;
//! - `tracking`: `k1 = k1* + b_tilde iota + 1`, `k2 = k2* + k1^2 k_m_upper^2 / 2 + 1/2` with
//!   `min k1* > c_s (c_delta / (c* delta_lower) + 1) / 2` and
//!   `k2* > c_delta c_s k_m_upper / (2 c* delta_lower)`.

use serde::Serialize;
use thiserror::Error;

use crate::controller::ControlGains;

/// Relative tolerance for the coupling-gain equality.
pub const COUPLING_REL_TOL: f64 = 1e-9;

pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid network constants: {0}")]
    InvalidConstants(String),
    #[error("iota must exceed 2, got {0}")]
    IotaTooSmall(f64),
    #[error("c* must be positive, got {0}")]
    NonPositiveCStar(f64),
    #[error("margin must be positive, got {0}")]
    NonPositiveMargin(f64),
    #[error("tracking gain margin violated: k_tilde = {0} is not positive")]
    KTildeNonPositive(f64),
    #[error("gain vectors have {got} agents, network has {expected}")]
    AgentCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConstants {
    pub lambda2: f64,
    pub lambda_n: f64,
    pub rho_c: f64,
    pub varrho_c: f64,
    /// Smallest lower mass bound over agents.
    pub k_m_lower_min: f64,
    /// Largest upper mass bound over agents.
    pub k_m_upper_max: f64,
    pub k_m_upper: Vec<f64>,
    pub b_tilde: f64,
}

impl NetworkConstants {
    pub fn validate(&self) -> Result<(), DesignError> {
        let named = [
            ("lambda2", self.lambda2),
            ("lambda_n", self.lambda_n),
            ("rho_c", self.rho_c),
            ("varrho_c", self.varrho_c),
            ("k_m_lower_min", self.k_m_lower_min),
            ("k_m_upper_max", self.k_m_upper_max),
            ("b_tilde", self.b_tilde),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DesignError::InvalidConstants(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.lambda2 <= crate::graph::CONNECTIVITY_TOL {
            return Err(DesignError::InvalidConstants("graph is disconnected".into()));
        }
        if self.varrho_c < self.rho_c {
            return Err(DesignError::InvalidConstants("varrho_c < rho_c".into()));
        }
        if self.lambda_n < self.lambda2 {
            return Err(DesignError::InvalidConstants("lambda_n < lambda2".into()));
        }
        if self.k_m_upper.is_empty() || self.k_m_upper.iter().any(|&k| !(k > 0.0)) {
            return Err(DesignError::InvalidConstants(
                "per-agent upper mass bounds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.k_m_upper.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub delta: f64,
    pub delta_bar: f64,
    pub delta_underbar: f64,
    pub eps_bar: f64,
    pub eps_underbar: f64,
    pub c_delta: f64,
    pub c_s: f64,
    pub k1_star: Vec<f64>,
    pub k2_star: Vec<f64>,
    pub k_tilde1: f64,
    pub k_tilde2: f64,
    pub k_tilde: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub l1: f64,
    pub l2: f64,
}

impl DerivedConstants {
    pub fn small_gain_product(&self) -> f64 {
        self.l1 * self.l2
    }
}

fn delta(nc: &NetworkConstants) -> f64 {
    (4.0 / nc.lambda2).max((4.0 * nc.varrho_c * nc.varrho_c + 1.0) / nc.rho_c)
}

fn delta_bar(nc: &NetworkConstants, delta: f64) -> f64 {
    delta * 1f64.max(1.0 / nc.lambda2) / 2.0 + 0.5
}

fn delta_underbar(nc: &NetworkConstants, delta: f64) -> f64 {
    delta * 1f64.min(1.0 / nc.lambda_n) / 2.0
}

fn c_delta(nc: &NetworkConstants, c: f64, delta: f64) -> f64 {
    let (r, q) = (nc.rho_c, nc.varrho_c);
    c * (q * q * delta / (2.0 * r)
        + nc.lambda_n * nc.lambda_n * delta / (2.0 * nc.lambda2)
        + 2.0 * delta * delta
        + q * q / (2.0 * r)
        + 2.0 * q * q)
}

fn c_s(nc: &NetworkConstants, c: f64) -> f64 {
    let s = 2.0 * nc.lambda_n + nc.varrho_c + 1.0;
    4.0 * c * c * s * s
}

/// Coupling-gain rule as `c = coef * c* + offset`.
fn coupling_affine(nc: &NetworkConstants, iota: f64) -> (f64, f64) {
    let db = delta_bar(nc, delta(nc));
    (2.0 * db, 4.0 * iota * nc.b_tilde + 4.0 * db * iota * nc.b_tilde)
}

/// `c` required by the coupling-gain rule for a given `c*`.
pub fn coupling_gain_for(nc: &NetworkConstants, iota: f64, c_star: f64) -> f64 {
    let (coef, offset) = coupling_affine(nc, iota);
    coef * c_star + offset
}

/// `c*` that makes the coupling-gain rule hold with equality for the given `c` (may be nonpositive).
pub fn implied_c_star(nc: &NetworkConstants, c: f64, iota: f64) -> f64 {
    let (coef, offset) = coupling_affine(nc, iota);
    (c - offset) / coef
}

/// Every constant evaluated literally, without positivity checks.
pub fn compute_constants(nc: &NetworkConstants, gains: &ControlGains, c_star: f64) -> DerivedConstants {
    let d = delta(nc);
    let db = delta_bar(nc, d);
    let du = delta_underbar(nc, d);
    let cd = c_delta(nc, gains.c, d);
    let cs = c_s(nc, gains.c);
    let k1_star: Vec<f64> = gains
        .k1
        .iter()
        .map(|k1| k1 - nc.b_tilde * gains.iota - 1.0)
        .collect();
    let k2_star: Vec<f64> = gains
        .k2
        .iter()
        .zip(&gains.k1)
        .zip(&nc.k_m_upper)
        .map(|((k2, k1), km)| k2 - 0.5 * k1 * k1 * km * km - 0.5)
        .collect();
    let k1_star_min = k1_star.iter().copied().fold(f64::INFINITY, f64::min);
    let k_tilde1 = 2.0 * k1_star_min - cs;
    let k_tilde2 = 2.0
        * k2_star
            .iter()
            .zip(&nc.k_m_upper)
            .map(|(k, km)| k / km)
            .fold(f64::INFINITY, f64::min);
    let sigma_min = gains.sigma_min();
    let k_tilde = k_tilde1.min(k_tilde2).min(sigma_min);
    DerivedConstants {
        delta: d,
        delta_bar: db,
        delta_underbar: du,
        eps_bar: 1f64.max(nc.k_m_upper_max),
        eps_underbar: 1f64.min(nc.k_m_lower_min),
        c_delta: cd,
        c_s: cs,
        k1_star,
        k2_star,
        k_tilde1,
        k_tilde2,
        k_tilde,
        sigma_min,
        sigma_max: gains.sigma_max(),
        l1: cd / k_tilde,
        l2: cs / (c_star * du),
    }
}

pub fn derive_constants(
    nc: &NetworkConstants,
    gains: &ControlGains,
    c_star: f64,
) -> Result<DerivedConstants, DesignError> {
    nc.validate()?;
    check_agent_count(nc, gains)?;
    if !(c_star > 0.0) {
        return Err(DesignError::NonPositiveCStar(c_star));
    }
    let d = compute_constants(nc, gains, c_star);
    if !(d.k_tilde > 0.0) {
        return Err(DesignError::KTildeNonPositive(d.k_tilde));
    }
    Ok(d)
}

fn check_agent_count(nc: &NetworkConstants, gains: &ControlGains) -> Result<(), DesignError> {
    let n = nc.agent_count();
    for len in [gains.k1.len(), gains.k2.len(), gains.sigma.len()] {
        if len != n {
            return Err(DesignError::AgentCountMismatch { expected: n, got: len });
        }
    }
    Ok(())
}

/// Gains satisfying all four design criteria with every strict inequality met by a
/// multiplicative slack of `1 + margin`. All agents share one `sigma` and one `k1*`.
pub fn synthesize(
    nc: &NetworkConstants,
    c_star: f64,
    iota: f64,
    margin: f64,
) -> Result<ControlGains, DesignError> {
    nc.validate()?;
    if !(iota > 2.0) {
        return Err(DesignError::IotaTooSmall(iota));
    }
    if !(c_star > 0.0) || !c_star.is_finite() {
        return Err(DesignError::NonPositiveCStar(c_star));
    }
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(DesignError::NonPositiveMargin(margin));
    }
    let d = delta(nc);
    let du = delta_underbar(nc, d);
    let c = coupling_gain_for(nc, iota, c_star);
    let cd = c_delta(nc, c, d);
    let cs = c_s(nc, c);
    let ratio = cd / (c_star * du);
    let coupling = ratio * cs;
    let slack = 1.0 + margin;

    let sigma = nc.b_tilde.max(coupling) * slack;
    let k1_bound = cs * (ratio + 1.0) / 2.0;
    let k1_star = k1_bound * slack;
    let k1 = raise_until(k1_star + nc.b_tilde * iota + 1.0, k1_star * margin, |k1| {
        k1 - nc.b_tilde * iota - 1.0 > k1_bound
    });
    let k2: Vec<f64> = nc
        .k_m_upper
        .iter()
        .map(|km| {
            let bound = coupling * km / 2.0;
            let nominal = bound * slack + 0.5 * k1 * k1 * km * km + 0.5;
            raise_until(nominal, bound * margin, |k2| k2 - 0.5 * k1 * k1 * km * km - 0.5 > bound)
        })
        .collect();
    let n = nc.agent_count();
    Ok(ControlGains {
        c,
        iota,
        k1: vec![k1; n],
        k2,
        sigma: vec![sigma; n],
    })
}

/// Increases `value` by doubling steps until `ok` holds. With large gains the
/// margin of a difference can vanish in rounding; this restores it.
fn raise_until(mut value: f64, step: f64, ok: impl Fn(f64) -> bool) -> f64 {
    let mut step = step.max(f64::EPSILON * value.abs()).max(f64::MIN_POSITIVE);
    while !ok(value) && value.is_finite() {
        value += step;
        step *= 2.0;
    }
    value
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Positive when satisfied. For `coupling` this is minus the relative mismatch.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub c_star: f64,
    pub checks: Vec<CriterionCheck>,
    pub constants: DerivedConstants,
    pub small_gain_product: f64,
    pub small_gain_pass: bool,
    pub all_pass: bool,
}

/// Evaluates the four design criteria individually plus `l1 l2 < 1`. Never fails: problems are
/// reported as failed checks.
pub fn verify_design(nc: &NetworkConstants, gains: &ControlGains, c_star: f64) -> DesignReport {
    let mut checks = Vec::new();
    let structural = nc
        .validate()
        .and_then(|_| check_agent_count(nc, gains))
        .err();
    if let Some(e) = &structural {
        checks.push(CriterionCheck {
            name: "inputs",
            pass: false,
            margin: f64::NAN,
            detail: e.to_string(),
        });
    }

    checks.push(CriterionCheck {
        name: "iota",
        pass: gains.iota > 2.0,
        margin: gains.iota - 2.0,
        detail: format!("iota = {}", gains.iota),
    });

    let required_c = coupling_gain_for(nc, gains.iota, c_star);
    let mismatch = (gains.c - required_c).abs() / required_c.abs().max(f64::MIN_POSITIVE);
    checks.push(CriterionCheck {
        name: "coupling",
        pass: c_star > 0.0 && mismatch <= COUPLING_REL_TOL,
        margin: -mismatch,
        detail: format!(
            "c = {}, required {required_c} for c* = {c_star}; implied c* = {}",
            gains.c,
            implied_c_star(nc, gains.c, gains.iota)
        ),
    });

    let dc = compute_constants(nc, gains, c_star);
    let coupling = dc.c_delta * dc.c_s / (c_star * dc.delta_underbar);
    let sigma_bound = nc.b_tilde.max(coupling);
    checks.push(CriterionCheck {
        name: "leak",
        pass: c_star > 0.0 && dc.sigma_min > sigma_bound,
        margin: dc.sigma_min - sigma_bound,
        detail: format!("sigma_min = {}, bound {sigma_bound}", dc.sigma_min),
    });

    let k1_bound = dc.c_s * (dc.c_delta / (c_star * dc.delta_underbar) + 1.0) / 2.0;
    let k1_margin = dc.k1_star.iter().copied().fold(f64::INFINITY, f64::min) - k1_bound;
    let k2_margin = dc
        .k2_star
        .iter()
        .zip(&nc.k_m_upper)
        .map(|(k, km)| k - coupling * km / 2.0)
        .fold(f64::INFINITY, f64::min);
    checks.push(CriterionCheck {
        name: "tracking",
        pass: c_star > 0.0 && k1_margin > 0.0 && k2_margin > 0.0,
        margin: k1_margin.min(k2_margin),
        detail: format!("k1* margin {k1_margin}, k2* margin {k2_margin}"),
    });

    let product = dc.small_gain_product();
    let small_gain_pass = c_star > 0.0 && dc.k_tilde > 0.0 && product < 1.0;
    let all_pass = structural.is_none() && small_gain_pass && checks.iter().all(|c| c.pass);
    DesignReport {
        c_star,
        checks,
        constants: dc,
        small_gain_product: product,
        small_gain_pass,
        all_pass,
    }
}

/// `coef * s` or `coef * s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", content = "coef", rename_all = "lowercase")]
pub enum ScalarMap {
    Linear(f64),
    Quadratic(f64),
}

impl ScalarMap {
    pub fn coef(self) -> f64 {
        match self {
            ScalarMap::Linear(c) | ScalarMap::Quadratic(c) => c,
        }
    }

    pub fn degree(self) -> u32 {
        match self {
            ScalarMap::Linear(_) => 1,
            ScalarMap::Quadratic(_) => 2,
        }
    }

    pub fn eval(self, s: f64) -> f64 {
        self.coef() * s.powi(self.degree() as i32)
    }
}

/// Prescribed-time ISS data of one subsystem: sandwich bounds, convergent gain,
/// coupling constant, ISS gain and disturbance gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IssGainDescriptor {
    pub alpha_lower: ScalarMap,
    pub alpha_upper: ScalarMap,
    pub alpha: ScalarMap,
    pub l: f64,
    pub gamma: ScalarMap,
    pub epsilon: ScalarMap,
    /// Bound on the disturbance entering `epsilon`.
    pub disturbance_norm: f64,
}

/// `alpha_tilde(s) = offset + slope * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaTilde {
    pub offset: f64,
    pub slope: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

impl AlphaTilde {
    pub fn eval(&self, s: f64) -> f64 {
        self.offset + self.slope * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallGainResult {
    pub pass: bool,
    pub l1l2: f64,
    /// `sup_s (gamma1 + gamma2) / min(alpha1, alpha2)`; infinite when the
    /// families have different orders.
    pub gain_ratio: f64,
    pub alpha_tilde: Option<AlphaTilde>,
}

pub fn smallgain_check(d1: &IssGainDescriptor, d2: &IssGainDescriptor) -> SmallGainResult {
    let l1l2 = d1.l * d2.l;
    let maps = [d1.alpha, d2.alpha, d1.gamma, d2.gamma];
    let same_order = maps.iter().all(|m| m.degree() == maps[0].degree());
    let positive = maps.iter().all(|m| m.coef() > 0.0);
    let gain_ratio = if same_order && positive {
        (d1.gamma.coef() + d2.gamma.coef()) / d1.alpha.coef().min(d2.alpha.coef())
    } else {
        f64::INFINITY
    };
    let pass = d1.l >= 0.0 && d2.l >= 0.0 && l1l2 < 1.0 && gain_ratio.is_finite();
    let alpha_tilde = pass.then(|| {
        let eta1 = l1l2.sqrt();
        let min_alpha = d1.alpha.coef().min(d2.alpha.coef());
        let eta2 = 2.0 * eta1 * d2.epsilon.coef() / (min_alpha * (1.0 - eta1));
        let eta3 = d2.l.max(eta1) * (d1.alpha_upper.coef() + d2.alpha_upper.coef());
        let lead = d1.alpha_lower.coef().powf(-0.5) + d2.alpha_lower.coef().powf(-0.5);
        AlphaTilde {
            offset: lead * eta2.sqrt() * d2.disturbance_norm,
            slope: lead * eta3.sqrt(),
            eta1,
            eta2,
            eta3,
        }
    });
    SmallGainResult {
        pass,
        l1l2,
        gain_ratio,
        alpha_tilde,
    }
}

/// Descriptors of the optimizer-error and tracking-error subsystems for a given design.
pub fn subsystem_descriptors(
    dc: &DerivedConstants,
    c_star: f64,
    theta_norm: f64,
) -> (IssGainDescriptor, IssGainDescriptor) {
    let optimizer = IssGainDescriptor {
        alpha_lower: ScalarMap::Quadratic(dc.delta_underbar),
        alpha_upper: ScalarMap::Quadratic(dc.delta_bar),
        alpha: ScalarMap::Linear(c_star),
        l: dc.l1,
        gamma: ScalarMap::Linear(1.0),
        epsilon: ScalarMap::Quadratic(0.0),
        disturbance_norm: 0.0,
    };
    let tracking = IssGainDescriptor {
        alpha_lower: ScalarMap::Quadratic(dc.eps_underbar),
        alpha_upper: ScalarMap::Quadratic(dc.eps_bar),
        alpha: ScalarMap::Linear(dc.k_tilde),
        l: dc.l2,
        gamma: ScalarMap::Linear(1.0),
        epsilon: ScalarMap::Quadratic(dc.sigma_max),
        disturbance_norm: theta_norm,
    };
    (optimizer, tracking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ring_constants() -> NetworkConstants {
        NetworkConstants {
            lambda2: 1.0,
            lambda_n: 4.0,
            rho_c: 4.0,
            varrho_c: 4.0,
            k_m_lower_min: 0.0789,
            k_m_upper_max: 2.63,
            k_m_upper: vec![2.63; 6],
            b_tilde: 0.1,
        }
    }

    fn six_robot_gains() -> ControlGains {
        ControlGains::uniform(6, 1.3, 2.44, 5.0, 30.0, 4.0)
    }

    #[test]
    fn delta_examples() {
        let nc = ring_constants();
        let d = compute_constants(&nc, &six_robot_gains(), 1.0);
        assert_relative_eq!(d.delta, 16.25);
        assert_relative_eq!(d.delta_bar, 16.25 / 2.0 + 0.5);
        assert_relative_eq!(d.delta_underbar, 16.25 / 8.0);

        let two = NetworkConstants {
            lambda2: 2.0,
            lambda_n: 2.0,
            ..ring_constants()
        };
        let d = compute_constants(&two, &six_robot_gains(), 1.0);
        assert_relative_eq!(d.delta_bar, d.delta / 2.0 + 0.5);
        assert_relative_eq!(d.delta_underbar, d.delta / 4.0);
    }

    #[test]
    fn zero_c_gives_zero_couplings() {
        let gains = ControlGains {
            c: 0.0,
            ..six_robot_gains()
        };
        let d = compute_constants(&ring_constants(), &gains, 1.0);
        assert_eq!((d.c_delta, d.c_s), (0.0, 0.0));
    }

    #[test]
    fn synthesized_design_passes() {
        let nc = ring_constants();
        let gains = synthesize(&nc, 0.5, 2.5, DEFAULT_MARGIN).unwrap();
        let report = verify_design(&nc, &gains, 0.5);
        assert!(report.all_pass, "{report:#?}");
        assert!(report.small_gain_product < 1.0);
        assert!(derive_constants(&nc, &gains, 0.5).is_ok());
    }

    #[test]
    fn synthesize_rejects_iota_two() {
        assert_eq!(
            synthesize(&ring_constants(), 1.0, 2.0, 0.1),
            Err(DesignError::IotaTooSmall(2.0))
        );
    }

    #[test]
    fn c_star_term_is_linear() {
        let nc = ring_constants();
        let offset = coupling_gain_for(&nc, 2.5, 0.0);
        let one = synthesize(&nc, 0.7, 2.5, 0.1).unwrap().c - offset;
        let two = synthesize(&nc, 1.4, 2.5, 0.1).unwrap().c - offset;
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-14);
    }

    #[test]
    fn six_robot_gains_reported() {
        let nc = ring_constants();
        let gains = six_robot_gains();
        let c_star = implied_c_star(&nc, gains.c, gains.iota);
        assert!(c_star < 0.0);
        let report = verify_design(&nc, &gains, c_star);
        assert_eq!(report.checks.len(), 4);
        assert!(report.checks[0].pass);
        assert!(!report.all_pass);
    }

    #[test]
    fn zero_k2_fails_tracking_criterion() {
        let nc = ring_constants();
        let mut gains = synthesize(&nc, 0.5, 2.5, 0.1).unwrap();
        gains.k2 = vec![0.0; 6];
        let report = verify_design(&nc, &gains, 0.5);
        let tracking = report.checks.iter().find(|c| c.name == "tracking").unwrap();
        assert!(!tracking.pass);
        assert!(matches!(
            derive_constants(&nc, &gains, 0.5),
            Err(DesignError::KTildeNonPositive(_))
        ));
    }

    #[test]
    fn smallgain_trivial_cases() {
        let d = |l| IssGainDescriptor {
            alpha_lower: ScalarMap::Quadratic(1.0),
            alpha_upper: ScalarMap::Quadratic(1.0),
            alpha: ScalarMap::Linear(1.0),
            l,
            gamma: ScalarMap::Linear(1.0),
            epsilon: ScalarMap::Quadratic(1.0),
            disturbance_norm: 1.0,
        };
        let r = smallgain_check(&d(0.5), &d(0.5));
        assert!(r.pass);
        assert_relative_eq!(r.l1l2, 0.25);
        assert_relative_eq!(r.gain_ratio, 2.0);
        assert!(!smallgain_check(&d(2.0), &d(1.0)).pass);

        let mut mixed = d(0.1);
        mixed.alpha = ScalarMap::Quadratic(1.0);
        let r = smallgain_check(&mixed, &d(0.1));
        assert!(!r.pass && r.gain_ratio.is_infinite());
    }

    #[test]
    fn subsystem_descriptors_agree_with_constants() {
        let nc = ring_constants();
        let gains = synthesize(&nc, 0.5, 2.5, 0.1).unwrap();
        let dc = derive_constants(&nc, &gains, 0.5).unwrap();
        let (d1, d2) = subsystem_descriptors(&dc, 0.5, 1.33);
        let r = smallgain_check(&d1, &d2);
        assert!(r.pass);
        assert_relative_eq!(r.l1l2, dc.small_gain_product(), max_relative = 1e-12);
        let a = r.alpha_tilde.unwrap();
        assert!(a.eval(0.0) > 0.0 && a.eval(1.0) > a.eval(0.0));
    }

    #[test]
    fn invalid_constants_rejected() {
        let nc = NetworkConstants {
            lambda2: 0.0,
            ..ring_constants()
        };
        assert!(synthesize(&nc, 1.0, 2.5, 0.1).is_err());
        assert!(derive_constants(&nc, &six_robot_gains(), 1.0).is_err());
    }
}
