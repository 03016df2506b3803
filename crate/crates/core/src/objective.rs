//! Local quadratic objectives for formation source seeking, their measured
//! gradients, convexity constants and an independent optimum oracle.
//!
//! Agent `i` minimises, over its shifted output `ybar = y - omega_i`,
//! `s1 * |ybar + omega_i - d_star|^2 + s2 * |ybar + omega_i - anchor_i|^2`.

use nalgebra::Vector2;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{spectrum, Topology};

pub type Point = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("agent {0} has s1 + s2 = 0 (objective not strictly convex)")]
    NotStrictlyConvex(usize),
    #[error("agent {agent} has a negative or non-finite weight")]
    InvalidWeight { agent: usize },
    #[error("objective set is empty")]
    Empty,
    #[error("expected {expected} agents, got {got}")]
    AgentCountMismatch { expected: usize, got: usize },
    #[error("optimum oracle did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentObjective {
    pub s1: f64,
    pub s2: f64,
    pub omega: Point,
    pub anchor: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    d_star: Point,
    agents: Vec<AgentObjective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityConstants {
    pub rho_c: f64,
    pub varrho_c: f64,
}

/// Gradient access by measurement only: the value at the agent's current
/// shifted output. Controllers depend on this trait, never on the objective data.
pub trait MeasuredGradient {
    fn agent_count(&self) -> usize;
    fn measured_gradient(&self, agent: usize, ybar: &Point) -> Point;
}

impl QuadraticObjective {
    pub fn new(d_star: Point, agents: Vec<AgentObjective>) -> Result<Self, ObjectiveError> {
        if agents.is_empty() {
            return Err(ObjectiveError::Empty);
        }
        for (i, a) in agents.iter().enumerate() {
            if !(a.s1 >= 0.0 && a.s2 >= 0.0 && a.s1.is_finite() && a.s2.is_finite()) {
                return Err(ObjectiveError::InvalidWeight { agent: i });
            }
            if a.s1 + a.s2 <= 0.0 {
                return Err(ObjectiveError::NotStrictlyConvex(i));
            }
        }
        Ok(Self { d_star, agents })
    }

    pub fn d_star(&self) -> Point {
        self.d_star
    }

    pub fn agents(&self) -> &[AgentObjective] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// `f_i(ybar)`; used by finite-difference checks.
    pub fn local_value(&self, agent: usize, ybar: &Point) -> f64 {
        let a = &self.agents[agent];
        let y = ybar + a.omega;
        a.s1 * (y - self.d_star).norm_squared() + a.s2 * (y - a.anchor).norm_squared()
    }

    pub fn local_gradient(&self, agent: usize, ybar: &Point) -> Point {
        let a = &self.agents[agent];
        let y = ybar + a.omega;
        2.0 * a.s1 * (y - self.d_star) + 2.0 * a.s2 * (y - a.anchor)
    }

    /// The Hessian of `f_i` is this value times the identity.
    pub fn local_curvature(&self, agent: usize) -> f64 {
        let a = &self.agents[agent];
        2.0 * (a.s1 + a.s2)
    }

    pub fn constants(&self) -> ConvexityConstants {
        let curv = self.agents.iter().map(|a| 2.0 * (a.s1 + a.s2));
        let rho_c = curv.clone().fold(f64::INFINITY, f64::min);
        let varrho_c = curv.fold(0.0, f64::max);
        ConvexityConstants { rho_c, varrho_c }
    }

    /// `|sum_i grad f_i(ybar_i)|`.
    pub fn global_gradient_norm(&self, ybar: &[Point]) -> Result<f64, ObjectiveError> {
        self.check_len(ybar.len())?;
        let sum: Point = ybar
            .iter()
            .enumerate()
            .map(|(i, y)| self.local_gradient(i, y))
            .sum();
        Ok(sum.norm())
    }

    /// `sum_i grad f_i(z)` at a common point `z`.
    pub fn gradient_sum(&self, z: &Point) -> Point {
        (0..self.len()).map(|i| self.local_gradient(i, z)).sum()
    }

    /// Stacked `grad F(1 ⊗ z)`.
    pub fn stacked_gradient_at(&self, z: &Point) -> Vec<Point> {
        (0..self.len()).map(|i| self.local_gradient(i, z)).collect()
    }

    fn check_len(&self, got: usize) -> Result<(), ObjectiveError> {
        if got != self.len() {
            return Err(ObjectiveError::AgentCountMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

impl MeasuredGradient for QuadraticObjective {
    fn agent_count(&self) -> usize {
        self.len()
    }

    fn measured_gradient(&self, agent: usize, ybar: &Point) -> Point {
        self.local_gradient(agent, ybar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optimum {
    pub z_star: Point,
    /// `|sum_i grad f_i(z_star)|`.
    pub residual: f64,
    pub method: OracleMethod,
}

pub const ORACLE_RESIDUAL_TOL: f64 = 1e-10;

/// Closed-form minimiser of the quadratic sum.
pub fn optimum_closed_form(obj: &QuadraticObjective) -> Point {
    let mut weight = 0.0;
    let mut acc = Point::zeros();
    for a in obj.agents() {
        weight += a.s1 + a.s2;
        acc += a.s1 * (obj.d_star() - a.omega) + a.s2 * (a.anchor - a.omega);
    }
    acc / weight
}

/// Damped gradient descent on the sum, driven by gradient evaluations only.
pub fn optimum_gradient_descent(
    obj: &QuadraticObjective,
    max_iterations: usize,
) -> Result<Optimum, ObjectiveError> {
    let ConvexityConstants { varrho_c, .. } = obj.constants();
    let lipschitz = varrho_c * obj.len() as f64;
    let step = 0.9 / lipschitz;
    let mut z = Point::zeros();
    let mut residual = obj.gradient_sum(&z).norm();
    for k in 0..max_iterations {
        if residual <= ORACLE_RESIDUAL_TOL {
            return Ok(Optimum {
                z_star: z,
                residual,
                method: OracleMethod::GradientDescent,
            });
        }
        z -= step * obj.gradient_sum(&z);
        residual = obj.gradient_sum(&z).norm();
        if !residual.is_finite() {
            return Err(ObjectiveError::NoConvergence {
                residual,
                iterations: k + 1,
            });
        }
    }
    if residual <= ORACLE_RESIDUAL_TOL {
        Ok(Optimum {
            z_star: z,
            residual,
            method: OracleMethod::GradientDescent,
        })
    } else {
        Err(ObjectiveError::NoConvergence {
            residual,
            iterations: max_iterations,
        })
    }
}

/// Minimiser of `sum_i f_i` over a connected network. Uses the closed form and
/// falls back to gradient descent if the residual misses the tolerance.
pub fn optimum_oracle(obj: &QuadraticObjective, top: &Topology) -> Result<Optimum, ObjectiveError> {
    if top.node_count() != obj.len() {
        return Err(ObjectiveError::AgentCountMismatch {
            expected: obj.len(),
            got: top.node_count(),
        });
    }
    spectrum(&top.laplacian())?.require_connected()?;
    let z = optimum_closed_form(obj);
    let residual = obj.gradient_sum(&z).norm();
    if residual <= ORACLE_RESIDUAL_TOL {
        return Ok(Optimum {
            z_star: z,
            residual,
            method: OracleMethod::ClosedForm,
        });
    }
    optimum_gradient_descent(obj, 100_000)
}

/// Regular hexagon offsets with unit radius, starting on the positive x axis.
pub fn hexagon_offsets() -> Vec<Point> {
    (0..6)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / 3.0;
            Point::new(a.cos(), a.sin())
        })
        .collect()
}
