//! Error variables, time-varying mappings, conservation and Lyapunov functions.
//!
//! In a formation every output is compared through its shift: `e_y = y - omega - varpi`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use serde::Serialize;

use crate::design::DerivedConstants;
use crate::graph::Spectrum;
use crate::objective::Point;

use super::AgentState;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector {
    pub e_varpi: Vec<Point>,
    pub e_v: Vec<Point>,
    pub e_y: Vec<Point>,
    pub qdot: Vec<Vector2<f64>>,
}

fn stack(parts: &[&[Point]]) -> DVector<f64> {
    let len: usize = parts.iter().map(|p| 2 * p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut k = 0;
    for part in parts {
        for p in *part {
            out[k] = p[0];
            out[k + 1] = p[1];
            k += 2;
        }
    }
    out
}

impl ErrorVector {
    /// `[e_varpi; e_v]`.
    pub fn e_r(&self) -> DVector<f64> {
        stack(&[&self.e_varpi, &self.e_v])
    }

    /// `[e_y; qdot]`.
    pub fn e_s(&self) -> DVector<f64> {
        stack(&[&self.e_y, &self.qdot])
    }

    pub fn e_r_norm(&self) -> f64 {
        (sum_sq(&self.e_varpi) + sum_sq(&self.e_v)).sqrt()
    }

    pub fn e_s_norm(&self) -> f64 {
        (sum_sq(&self.e_y) + sum_sq(&self.qdot)).sqrt()
    }
}

fn sum_sq(v: &[Point]) -> f64 {
    v.iter().map(|p| p.norm_squared()).sum()
}

/// `grad_star[i]` is agent `i`'s gradient at the common optimum.
pub fn compute_errors(
    agents: &[AgentState],
    z_star: &Point,
    grad_star: &[Point],
    omega: &[Point],
) -> ErrorVector {
    ErrorVector {
        e_varpi: agents.iter().map(|a| a.varpi - z_star).collect(),
        e_v: agents.iter().zip(grad_star).map(|(a, g)| a.v + g).collect(),
        e_y: agents
            .iter()
            .zip(omega)
            .map(|(a, w)| a.q - w - a.varpi)
            .collect(),
        qdot: agents.iter().map(|a| a.qdot).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedError {
    pub er_varpi: Vec<Point>,
    pub er_v: Vec<Point>,
    /// `mu^iota e_y`.
    pub es1: Vec<Point>,
    /// `mu^(iota-1) (qdot + k1 mu e_y)`.
    pub es2: Vec<Vector2<f64>>,
    /// `theta - theta_hat` per agent.
    pub theta_tilde: Vec<Vector3<f64>>,
}

impl MappedError {
    pub fn er_norm(&self) -> f64 {
        (sum_sq(&self.er_varpi) + sum_sq(&self.er_v)).sqrt()
    }

    pub fn es_norm(&self) -> f64 {
        (sum_sq(&self.es1) + sum_sq(&self.es2)).sqrt()
    }

    pub fn theta_tilde_sq(&self) -> f64 {
        self.theta_tilde.iter().map(|t| t.norm_squared()).sum()
    }
}

pub fn compute_mapped(
    errors: &ErrorVector,
    agents: &[AgentState],
    theta: &[Vector3<f64>],
    mu: f64,
    iota: f64,
    k1: &[f64],
) -> MappedError {
    let a = mu.powf(iota);
    let b = mu.powf(iota - 1.0);
    MappedError {
        er_varpi: errors.e_varpi.iter().map(|e| a * e).collect(),
        er_v: errors.e_v.iter().map(|e| a * e).collect(),
        es1: errors.e_y.iter().map(|e| a * e).collect(),
        es2: errors
            .e_y
            .iter()
            .zip(&errors.qdot)
            .zip(k1)
            .map(|((ey, qd), k)| a * k * ey + b * qd)
            .collect(),
        theta_tilde: theta
            .iter()
            .zip(agents)
            .map(|(t, s)| t - s.theta_hat)
            .collect(),
    }
}

/// Coefficient of the linear map bounding `|e_s|` by the mapped error:
/// `1 + |K1| + 1/b`.
pub fn gamma_s_coefficient(k1_max: f64, b: f64) -> f64 {
    1.0 + k1_max + 1.0 / b
}

/// `|sum_i v_i|`.
pub fn conservation_residual(agents: &[AgentState]) -> f64 {
    agents.iter().map(|a| a.v).sum::<Point>().norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovDiagnostics {
    pub u: f64,
    pub w: f64,
    pub v_combined: f64,
}

/// Orthonormal split of the mapped optimizer error.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameComponents {
    /// `R^T er_varpi`, `R^T er_v`, `R^T es1` with the consensus direction first.
    pub xi: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
}

/// Weights and constants needed to evaluate `U`, `W` and their decrease bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovModel {
    delta: f64,
    /// `11^T / N + L^+`, applied per coordinate.
    weight: DMatrix<f64>,
    /// Columns: `1/sqrt(N)` then the Laplacian eigenvectors of the nonzero eigenvalues.
    frame: DMatrix<f64>,
    /// `1` for the consensus direction, then `1 / lambda_k`.
    frame_inverse_weights: Vec<f64>,
    pub rates: Option<DecreaseRates>,
}

/// Constants of the two decrease inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecreaseRates {
    pub c_star: f64,
    pub c_delta: f64,
    pub k_tilde: f64,
    pub sigma_max: f64,
    pub c_s: f64,
    pub delta_underbar: f64,
    pub theta_norm_sq: f64,
    pub l1: f64,
    pub l2: f64,
}

impl DecreaseRates {
    pub fn from_constants(dc: &DerivedConstants, c_star: f64, theta_norm_sq: f64) -> Self {
        Self {
            c_star,
            c_delta: dc.c_delta,
            k_tilde: dc.k_tilde,
            sigma_max: dc.sigma_max,
            c_s: dc.c_s,
            delta_underbar: dc.delta_underbar,
            theta_norm_sq,
            l1: dc.l1,
            l2: dc.l2,
        }
    }

    /// Terms of the `U` bound: `(-c* mu U, c_delta mu W)`.
    pub fn u_terms(&self, mu: f64, u: f64, w: f64) -> [f64; 2] {
        [-self.c_star * mu * u, self.c_delta * mu * w]
    }

    /// Terms of the `W` bound: `(-k_tilde mu W, sigma_max mu |theta|^2, c_s / delta_underbar mu U)`.
    pub fn w_terms(&self, mu: f64, u: f64, w: f64) -> [f64; 3] {
        [
            -self.k_tilde * mu * w,
            self.sigma_max * mu * self.theta_norm_sq,
            self.c_s / self.delta_underbar * mu * u,
        ]
    }
}

impl LyapunovModel {
    pub fn new(delta: f64, spectrum: &Spectrum, rates: Option<DecreaseRates>) -> Self {
        let n = spectrum.eigenvalues.len();
        let weight = DMatrix::from_element(n, n, 1.0 / n as f64) + spectrum.laplacian_pinv();
        let mut frame = DMatrix::zeros(n, n);
        frame.column_mut(0).fill(1.0 / (n as f64).sqrt());
        let mut frame_inverse_weights = vec![1.0];
        for k in 1..n {
            let mut col = spectrum.eigenvectors.column(k).into_owned();
            // Orthogonalise against the consensus vector to absorb eigensolver round-off.
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            col /= col.norm();
            frame.set_column(k, &col);
            frame_inverse_weights.push(1.0 / spectrum.eigenvalues[k]);
        }
        Self {
            delta,
            weight,
            frame,
            frame_inverse_weights,
            rates,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn weighted(&self, x: &[Point]) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                acc += self.weight[(i, j)] * x[i].dot(&x[j]);
            }
        }
        acc
    }

    /// `delta/2 (|er_varpi|^2 + er_v^T W er_v) + 1/2 |er_varpi + er_v|^2`.
    pub fn u(&self, m: &MappedError) -> f64 {
        let cross: f64 = m
            .er_varpi
            .iter()
            .zip(&m.er_v)
            .map(|(a, b)| (a + b).norm_squared())
            .sum();
        0.5 * self.delta * (sum_sq(&m.er_varpi) + self.weighted(&m.er_v)) + 0.5 * cross
    }

    /// Projects stacked points onto the orthonormal frame, coordinate by coordinate.
    pub fn project(&self, x: &[Point]) -> DVector<f64> {
        let n = x.len();
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            for (i, p) in x.iter().enumerate() {
                out[2 * k] += self.frame[(i, k)] * p[0];
                out[2 * k + 1] += self.frame[(i, k)] * p[1];
            }
        }
        out
    }

    pub fn frame_components(&self, m: &MappedError) -> FrameComponents {
        FrameComponents {
            xi: self.project(&m.er_varpi),
            psi: self.project(&m.er_v),
            phi: self.project(&m.es1),
        }
    }

    /// `U` evaluated in the frame: `delta/2 (|xi|^2 + psi^T Lr^-1 psi) + 1/2 |xi + psi|^2`.
    pub fn u_from_frame(&self, f: &FrameComponents) -> f64 {
        let psi_weighted: f64 = f
            .psi
            .iter()
            .enumerate()
            .map(|(k, p)| self.frame_inverse_weights[k / 2] * p * p)
            .sum();
        0.5 * self.delta * (f.xi.norm_squared() + psi_weighted) + 0.5 * (&f.xi + &f.psi).norm_squared()
    }

    /// `|es1|^2 + sum_i es2_i^T M_i es2_i + 1/2 |theta_tilde|^2`.
    pub fn w(&self, m: &MappedError, masses: &[Matrix2<f64>]) -> f64 {
        let inertial: f64 = m
            .es2
            .iter()
            .zip(masses)
            .map(|(e, mass)| e.dot(&(mass * e)))
            .sum();
        sum_sq(&m.es1) + inertial + 0.5 * m.theta_tilde_sq()
    }

    pub fn evaluate(&self, m: &MappedError, masses: &[Matrix2<f64>]) -> LyapunovDiagnostics {
        let u = self.u(m);
        let w = self.w(m, masses);
        let v_combined = match &self.rates {
            Some(r) => r.l2 * u + (r.l1 * r.l2).sqrt() * w,
            None => f64::NAN,
        };
        LyapunovDiagnostics { u, w, v_combined }
    }
}

/// Relative residual of one discrete decrease check: signed excess of the
/// finite-difference rate over the trapezoidal average of the bound, divided
/// by the total magnitude of all terms involved.
pub fn relative_residual(rate: f64, bound_start: &[f64], bound_end: &[f64]) -> f64 {
    let avg: f64 = 0.5 * (bound_start.iter().sum::<f64>() + bound_end.iter().sum::<f64>());
    let scale: f64 = rate.abs()
        + 0.5 * bound_start.iter().map(|x| x.abs()).sum::<f64>()
        + 0.5 * bound_end.iter().map(|x| x.abs()).sum::<f64>();
    if scale == 0.0 {
        0.0
    } else {
        (rate - avg) / scale
    }
}
