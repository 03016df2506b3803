//! Two-link revolute manipulator moving in the horizontal plane (no gravity).

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest condition number of `M(q)` accepted by [`forward_dynamics`].
pub const MAX_MASS_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("mass matrix is singular or ill-conditioned (condition number {0:e})")]
    SingularMass(f64),
    #[error("invalid parameter box: {0}")]
    InvalidBox(String),
}

/// Inertia parameters `[p1, p2, p3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl ManipulatorParams {
    pub const fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    /// Values used for every robot of the six-robot scenario.
    pub const fn nominal() -> Self {
        Self::new(1.301, 0.056, 0.296)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.p1, self.p2, self.p3)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantBounds {
    pub k_m_lower: f64,
    pub k_m_upper: f64,
    /// Regression constant with `|Omega| <= rho (|w| + |w|^2)`.
    pub rho: f64,
}

impl PlantBounds {
    pub const fn nominal() -> Self {
        Self {
            k_m_lower: 0.0789,
            k_m_upper: 2.63,
            rho: 4.24,
        }
    }
}

impl Default for PlantBounds {
    fn default() -> Self {
        Self::nominal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub p3: (f64, f64),
}

impl ParamBox {
    pub const fn nominal() -> Self {
        Self {
            p1: (1.0, 2.0),
            p2: (0.05, 0.2),
            p3: (0.2, 0.5),
        }
    }

    pub fn point(p: ManipulatorParams) -> Self {
        Self {
            p1: (p.p1, p.p1),
            p2: (p.p2, p.p2),
            p3: (p.p3, p.p3),
        }
    }

    pub fn contains(&self, p: &ManipulatorParams) -> bool {
        let inside = |(lo, hi): (f64, f64), v: f64| lo <= v && v <= hi;
        inside(self.p1, p.p1) && inside(self.p2, p.p2) && inside(self.p3, p.p3)
    }
}

pub fn mass_matrix(theta: &ManipulatorParams, q: &Vector2<f64>) -> Matrix2<f64> {
    let c2 = q[1].cos();
    let off = theta.p3 + theta.p2 * c2;
    Matrix2::new(theta.p1 + 2.0 * theta.p2 * c2, off, off, theta.p3)
}

pub fn coriolis_matrix(theta: &ManipulatorParams, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Matrix2<f64> {
    let ps = theta.p2 * q[1].sin();
    Matrix2::new(
        -ps * qdot[1],
        -ps * (qdot[0] + qdot[1]),
        ps * qdot[0],
        0.0,
    )
}

/// Time derivative of `M(q)` along a trajectory with velocity `qdot`.
pub fn mass_matrix_dot(theta: &ManipulatorParams, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Matrix2<f64> {
    let d = -theta.p2 * q[1].sin() * qdot[1];
    Matrix2::new(2.0 * d, d, d, 0.0)
}

/// `Omega(q, qdot, x, y)` with `M(q) x + C(q, qdot) y = Omega * [p1, p2, p3]`.
pub fn regression(q: &Vector2<f64>, qdot: &Vector2<f64>, x: &Vector2<f64>, y: &Vector2<f64>) -> Matrix2x3<f64> {
    let (s2, c2) = q[1].sin_cos();
    #[rustfmt::skip]
    let omega = Matrix2x3::new(
        x[0], c2 * (2.0 * x[0] + x[1]) - s2 * (qdot[1] * y[0] + qdot[0] * y[1] + qdot[1] * y[1]), x[1],
        0.0,  c2 * x[0] + s2 * qdot[0] * y[0],                                                   x[0] + x[1],
    );
    omega
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix.
pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let r = half_diff.hypot(m[(0, 1)]);
    (mean - r, mean + r)
}

/// `qddot = M(q)^{-1} (tau - C(q, qdot) qdot)`.
pub fn forward_dynamics(
    theta: &ManipulatorParams,
    q: &Vector2<f64>,
    qdot: &Vector2<f64>,
    tau: &Vector2<f64>,
) -> Result<Vector2<f64>, PlantError> {
    let m = mass_matrix(theta, q);
    let (lo, hi) = sym2_eigenvalues(&m);
    if !(lo > 0.0) || hi / lo > MAX_MASS_CONDITION {
        return Err(PlantError::SingularMass(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
    }
    let rhs = tau - coriolis_matrix(theta, q, qdot) * qdot;
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Ok(Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    ))
}

/// `z^T (Mdot - 2C) z`, which vanishes identically for this model.
pub fn check_skew_symmetry(
    theta: &ManipulatorParams,
    q: &Vector2<f64>,
    qdot: &Vector2<f64>,
    z: &Vector2<f64>,
) -> f64 {
    let n = mass_matrix_dot(theta, q, qdot) - 2.0 * coriolis_matrix(theta, q, qdot);
    z.dot(&(n * z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassBounds {
    pub k_m_lower: f64,
    pub k_m_upper: f64,
}

/// Extreme eigenvalues of `M` over a regular grid of the parameter box and of
/// the elbow angle `q2 in [0, pi]` (M depends on `q2` through `cos q2` only).
/// Grid endpoints are always included.
pub fn estimate_bounds(param_box: &ParamBox, samples: usize) -> Result<MassBounds, PlantError> {
    for (name, (lo, hi)) in [("p1", param_box.p1), ("p2", param_box.p2), ("p3", param_box.p3)] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PlantError::InvalidBox(format!("{name} range [{lo}, {hi}]")));
        }
    }
    let per_axis = (samples.max(1) as f64).powf(0.25).ceil().max(2.0) as usize;
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if lo == hi {
            vec![lo]
        } else {
            (0..per_axis)
                .map(|k| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64)
                .collect()
        }
    };
    let angles: Vec<f64> = (0..per_axis)
        .map(|k| std::f64::consts::PI * k as f64 / (per_axis - 1) as f64)
        .collect();

    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for &p1 in &axis(param_box.p1) {
        for &p2 in &axis(param_box.p2) {
            for &p3 in &axis(param_box.p3) {
                let theta = ManipulatorParams::new(p1, p2, p3);
                let qs: &[f64] = if p2 == 0.0 { &[0.0] } else { &angles };
                for &q2 in qs {
                    let (lo, hi) = sym2_eigenvalues(&mass_matrix(&theta, &Vector2::new(0.0, q2)));
                    lower = lower.min(lo);
                    upper = upper.max(hi);
                }
            }
        }
    }
    Ok(MassBounds {
        k_m_lower: lower,
        k_m_upper: upper,
    })
}
