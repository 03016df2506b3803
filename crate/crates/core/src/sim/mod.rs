//! Closed-loop simulation of the whole network.
//!
//! The run integrates the active phase on the fixed grid `t0 + k h` up to the
//! last sample before the deadline, then switches: optimizer states and the
//! estimate freeze, the torque drops to zero, and the plants coast to `t_end`.
//!
//! The loop gain grows like `mu(t)`, so the dynamics become arbitrarily stiff
//! near the deadline. Each active step of length `h` is therefore split into
//! equal RK4 substeps whose count follows a local stiffness estimate, while
//! samples stay on the fixed grid.

pub mod diagnostics;
pub mod integrator;
pub mod trace;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    adaptive_rhs, auxiliary_rhs, formation_shift, tracking_torque, z_intermediates, ControlGains,
    ControllerError, Phase, TrackingInput,
};
use crate::design::{compute_constants, verify_design, DesignReport, NetworkConstants};
use crate::gain::{GainError, GainFunction, PrescribedGain};
use crate::graph::{spectrum, GraphError, Spectrum, Topology};
use crate::objective::{optimum_oracle, ObjectiveError, Optimum, Point, QuadraticObjective};
use crate::plant::{
    coriolis_matrix, forward_dynamics, mass_matrix, regression, sym2_eigenvalues, ManipulatorParams,
    PlantBounds, PlantError,
};

use diagnostics::{
    compute_errors, compute_mapped, conservation_residual, gamma_s_coefficient, relative_residual,
    DecreaseRates, ErrorVector, LyapunovModel, MappedError,
};
use integrator::Rk4;
pub use trace::{Metrics, Sample, Trace};

/// Flat state entries per agent: e_y (2), qdot (2), e_varpi (2), e_v (2), theta_hat (3).
///
/// The integrator works in error coordinates: `e_y = q - omega - varpi`,
/// `e_varpi = varpi - z*` and `e_v = v + grad f_i(z*)`. Near the deadline these
/// are many orders of magnitude below `q`, `varpi` and `v`, and the adaptive
/// law amplifies absolute rounding errors by `mu^(2 iota - 2)`. Storing the
/// differences keeps them to full relative precision. The closed loop is the
/// same; only its floating-point representation changes.
pub const STATE_PER_AGENT: usize = 11;

/// Tolerance on `|sum_i v_i(t0)|`.
pub const INITIAL_SUM_TOL: f64 = 1e-12;

/// Multiplicative slack on the mapping bounds.
pub const MAPPING_SLACK: f64 = 1e-9;

/// Relative tolerance of the discrete decrease checks.
pub const LYAPUNOV_REL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("plant failure at t = {t}: {source}")]
    Plant { t: f64, source: PlantError },
    #[error("step from t = {t} with h = {h} would cross the deadline {deadline}")]
    StepAcrossDeadline { t: f64, h: f64, deadline: f64 },
    #[error("numerical abort at t = {t}: {reason}")]
    NumericalAbort { t: f64, reason: String },
}

impl SimError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SimError::NumericalAbort { .. } | SimError::Plant { .. } | SimError::StepAcrossDeadline { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
    pub varpi: Point,
    pub v: Point,
    pub theta_hat: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub phase: Phase,
    pub agents: Vec<AgentState>,
}

impl NetworkState {
    pub fn outputs(&self) -> Vec<Vector2<f64>> {
        self.agents.iter().map(|a| a.q).collect()
    }
}

/// Time derivative of one agent's state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentDerivative {
    pub dq: Vector2<f64>,
    pub dqdot: Vector2<f64>,
    pub dvarpi: Point,
    pub dv: Point,
    pub dtheta_hat: Vector3<f64>,
}

/// Error coordinates held by the integrator for one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ExactErrors {
    e_y: Vector2<f64>,
    e_varpi: Point,
    e_v: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstepPolicy {
    pub enabled: bool,
    /// Target value of `substep * stiffness` (RK4 is stable up to about 2.8).
    pub target: f64,
    pub max_per_step: usize,
}

impl Default for SubstepPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            target: 0.5,
            max_per_step: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub step: f64,
    pub t_end: f64,
    pub record_interval: f64,
    /// Number of final active steps recorded densely.
    pub dense_tail: usize,
    pub abort_norm: f64,
    pub substeps: SubstepPolicy,
    /// Steps before the deadline excluded from the decrease checks.
    pub lyapunov_guard_steps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            step: 1e-4,
            t_end: 5.0,
            record_interval: 1e-2,
            dense_tail: 100,
            abort_norm: 1e12,
            substeps: SubstepPolicy::default(),
            lyapunov_guard_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub gain: GainFunction,
    pub topology: Topology,
    pub objective: QuadraticObjective,
    pub theta: Vec<ManipulatorParams>,
    pub bounds: PlantBounds,
    pub gains: ControlGains,
    /// Decay constant used for the decrease checks; `None` skips them.
    pub c_star: Option<f64>,
    pub initial: Vec<AgentState>,
    pub settings: SimSettings,
}

/// Network constants of a scenario, as used by the design rules.
pub fn network_constants(
    spectrum: &Spectrum,
    objective: &QuadraticObjective,
    bounds: &PlantBounds,
    b_tilde: f64,
) -> NetworkConstants {
    let cc = objective.constants();
    NetworkConstants {
        lambda2: spectrum.lambda2(),
        lambda_n: spectrum.lambda_max(),
        rho_c: cc.rho_c,
        varrho_c: cc.varrho_c,
        k_m_lower_min: bounds.k_m_lower,
        k_m_upper_max: bounds.k_m_upper,
        k_m_upper: vec![bounds.k_m_upper; objective.len()],
        b_tilde,
    }
}

/// Outcome of the mapping-bound check over the active phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MappingCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `|e_r| / (mu^-iota sup|er_tilde|)`.
    pub worst_ratio_r: f64,
    /// Largest `|e_s| / (mu^(1-iota) gamma_s(sup|es_tilde|))`.
    pub worst_ratio_s: f64,
    pub sup_er_tilde: f64,
    pub sup_es_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovCheck {
    pub samples: usize,
    pub passing: usize,
    pub fraction: f64,
    pub worst_u: f64,
    pub worst_w: f64,
    pub window_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub max_qdot: f64,
    pub max_torque: f64,
    pub max_theta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub z_star: [f64; 2],
    pub deadline: f64,
    pub last_active_time: f64,
    pub active_steps: usize,
    pub total_steps: usize,
    pub total_substeps: u64,
    pub grad_norm_initial: f64,
    pub grad_norm_last_active: f64,
    /// Largest value over every frozen-phase step (NaN without a frozen phase).
    pub grad_norm_max_frozen: f64,
    pub torque_last_active: f64,
    pub max_torque_frozen: f64,
    pub max_qdot_frozen: f64,
    /// Largest per-coordinate drift of any output from its value at the first frozen step.
    pub frozen_output_drift: f64,
    /// Largest per-coordinate distance of a final output from `z* + omega_i`.
    pub final_output_error: f64,
    pub max_conservation: f64,
    pub mapping: MappingCheck,
    pub bounds: Bounds,
    pub lyapunov: Option<LyapunovCheck>,
    pub design: Option<DesignReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub summary: RunSummary,
}

pub struct Simulator {
    scenario: Scenario,
    omega: Vec<Point>,
    neighbors: Vec<Vec<(usize, f64)>>,
    optimum: Optimum,
    grad_star: Vec<Point>,
    lyapunov: LyapunovModel,
    design: Option<DesignReport>,
    theta_vec: Vec<Vector3<f64>>,
    active_steps: usize,
    total_steps: usize,
    aux_rate: f64,
    warnings: Vec<String>,
}

fn grid_steps(span: f64, h: f64) -> usize {
    (span / h - 1e-6).ceil().max(0.0) as usize
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let n = scenario.topology.node_count();
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        if scenario.objective.len() != n {
            return invalid(format!("objective has {} agents, graph has {n}", scenario.objective.len()));
        }
        if scenario.theta.len() != n || scenario.initial.len() != n {
            return invalid(format!("plant parameters and initial states need {n} entries"));
        }
        let warnings = scenario.gains.validate(n, scenario.gain.b_tilde())?;
        let sum_v: Point = scenario.initial.iter().map(|a| a.v).sum();
        if sum_v.norm() > INITIAL_SUM_TOL {
            return invalid(format!("initial v must sum to zero, |sum| = {:e}", sum_v.norm()));
        }
        let s = &scenario.settings;
        if !(s.step > 0.0) || !s.step.is_finite() {
            return invalid(format!("step must be positive, got {}", s.step));
        }
        if !(s.t_end > scenario.gain.t0()) {
            return invalid("t_end must be after t0".into());
        }
        if !(s.record_interval > 0.0) {
            return invalid("record interval must be positive".into());
        }
        if !(s.substeps.target > 0.0) || s.substeps.max_per_step == 0 {
            return invalid("substep policy needs a positive target and limit".into());
        }
        let eig = spectrum(&scenario.topology.laplacian())?;
        eig.require_connected()?;
        let optimum = optimum_oracle(&scenario.objective, &scenario.topology)?;
        let grad_star = scenario.objective.stacked_gradient_at(&optimum.z_star);
        let omega = scenario.objective.agents().iter().map(|a| a.omega).collect();
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| scenario.topology.weight(i, j) != 0.0)
                    .map(|j| (j, scenario.topology.weight(i, j)))
                    .collect()
            })
            .collect();
        let theta_vec: Vec<Vector3<f64>> = scenario.theta.iter().map(|p| p.to_vector()).collect();

        let nc = network_constants(&eig, &scenario.objective, &scenario.bounds, scenario.gain.b_tilde());
        let c_star_for_constants = scenario.c_star.unwrap_or(1.0);
        let dc = compute_constants(&nc, &scenario.gains, c_star_for_constants);
        let (rates, design) = match scenario.c_star {
            Some(cs) if cs > 0.0 => {
                let theta_sq = theta_vec.iter().map(|t| t.norm_squared()).sum();
                (
                    Some(DecreaseRates::from_constants(&dc, cs, theta_sq)),
                    Some(verify_design(&nc, &scenario.gains, cs)),
                )
            }
            _ => (None, None),
        };
        let lyapunov = LyapunovModel::new(dc.delta, &eig, rates);

        let active_steps = grid_steps(scenario.gain.horizon(), s.step).saturating_sub(1);
        let total_steps = grid_steps(s.t_end - scenario.gain.t0(), s.step);
        let aux_rate = scenario.gains.c
            * (nc.varrho_c + 2.0 * scenario.topology.max_degree() + 1.0);
        Ok(Self {
            scenario,
            omega,
            neighbors,
            optimum,
            grad_star,
            lyapunov,
            design,
            theta_vec,
            active_steps,
            total_steps,
            aux_rate,
            warnings,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn optimum(&self) -> &Optimum {
        &self.optimum
    }

    pub fn gradient_at_optimum(&self) -> &[Point] {
        &self.grad_star
    }

    pub fn lyapunov_model(&self) -> &LyapunovModel {
        &self.lyapunov
    }

    pub fn deadline(&self) -> f64 {
        self.scenario.gain.deadline()
    }

    pub fn active_steps(&self) -> usize {
        self.active_steps
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Grid time of step `k`; the last step lands exactly on `t_end`.
    pub fn time_at(&self, k: usize) -> f64 {
        if k >= self.total_steps {
            self.scenario.settings.t_end
        } else {
            self.scenario.gain.t0() + k as f64 * self.scenario.settings.step
        }
    }

    pub fn phase_at_step(&self, k: usize) -> Phase {
        if k <= self.active_steps {
            Phase::Active
        } else {
            Phase::Frozen
        }
    }

    pub fn initial_state(&self) -> NetworkState {
        NetworkState {
            t: self.scenario.gain.t0(),
            phase: Phase::Active,
            agents: self.scenario.initial.clone(),
        }
    }

    /// Agent `i` of a flat state in original coordinates, plus its exact errors.
    fn read_agent(&self, x: &[f64], i: usize) -> (AgentState, ExactErrors) {
        let s = &x[i * STATE_PER_AGENT..(i + 1) * STATE_PER_AGENT];
        let exact = ExactErrors {
            e_y: Vector2::new(s[0], s[1]),
            e_varpi: Point::new(s[4], s[5]),
            e_v: Point::new(s[6], s[7]),
        };
        let varpi = exact.e_varpi + self.optimum.z_star;
        let agent = AgentState {
            q: exact.e_y + formation_shift(&varpi, &self.omega[i]),
            qdot: Vector2::new(s[2], s[3]),
            varpi,
            v: exact.e_v - self.grad_star[i],
            theta_hat: Vector3::new(s[8], s[9], s[10]),
        };
        (agent, exact)
    }

    fn write_agent(&self, a: &AgentState, x: &mut [f64], i: usize) {
        let e_y = a.q - formation_shift(&a.varpi, &self.omega[i]);
        let e_varpi = a.varpi - self.optimum.z_star;
        let e_v = a.v + self.grad_star[i];
        let s = &mut x[i * STATE_PER_AGENT..(i + 1) * STATE_PER_AGENT];
        s[0..2].copy_from_slice(e_y.as_slice());
        s[2..4].copy_from_slice(a.qdot.as_slice());
        s[4..6].copy_from_slice(e_varpi.as_slice());
        s[6..8].copy_from_slice(e_v.as_slice());
        s[8..11].copy_from_slice(a.theta_hat.as_slice());
    }

    /// Flat integrator state of `state`.
    pub fn pack(&self, state: &NetworkState) -> Vec<f64> {
        let mut x = vec![0.0; state.agents.len() * STATE_PER_AGENT];
        for (i, a) in state.agents.iter().enumerate() {
            self.write_agent(a, &mut x, i);
        }
        x
    }

    pub fn unpack(&self, t: f64, phase: Phase, x: &[f64]) -> NetworkState {
        NetworkState {
            t,
            phase,
            agents: (0..self.omega.len()).map(|i| self.read_agent(x, i).0).collect(),
        }
    }

    /// `ybar_i - z*` of agent `i`.
    fn output_offset(x: &[f64], i: usize) -> Point {
        let o = i * STATE_PER_AGENT;
        Point::new(x[o] + x[o + 4], x[o + 1] + x[o + 5])
    }

    fn chi(&self, x: &[f64], i: usize) -> Point {
        let ybar = |j: usize| Self::output_offset(x, j);
        let yi = ybar(i);
        self.neighbors[i]
            .iter()
            .map(|&(j, a)| a * (yi - ybar(j)))
            .sum()
    }

    fn tracking_input(&self, a: &AgentState, e_y: Vector2<f64>, mu: f64, mu_tilde: f64) -> TrackingInput {
        TrackingInput {
            q: a.q,
            qdot: a.qdot,
            e_y,
            theta_hat: a.theta_hat,
            mu,
            mu_tilde,
        }
    }

    fn agent_derivative(
        &self,
        x: &[f64],
        i: usize,
        t: f64,
        phase: Phase,
        gain_values: Option<(f64, f64)>,
    ) -> Result<AgentDerivative, SimError> {
        let (a, exact) = self.read_agent(x, i);
        let theta = &self.scenario.theta[i];
        match (phase, gain_values) {
            (Phase::Active, Some((mu, mu_tilde))) => {
                let g = self.scenario.gains.agent(i);
                let iota = self.scenario.gains.iota;
                // The auxiliary law only sees grad + v, which equals
                // (grad - grad(z*)) + (v + grad(z*)); both parts are small here.
                let grad_offset = self.scenario.objective.local_curvature(i) * Self::output_offset(x, i);
                let chi = self.chi(x, i);
                let (dvarpi, dv) =
                    auxiliary_rhs(self.scenario.gains.c, &exact.e_v, &grad_offset, &chi, mu, phase);
                let input = self.tracking_input(&a, exact.e_y, mu, mu_tilde);
                let tau = tracking_torque(&input, g, iota, phase);
                let dqdot = forward_dynamics(theta, &a.q, &a.qdot, &tau)
                    .map_err(|source| SimError::Plant { t, source })?;
                let dtheta_hat = adaptive_rhs(&input, g, iota, phase)?;
                Ok(AgentDerivative {
                    dq: a.qdot,
                    dqdot,
                    dvarpi,
                    dv,
                    dtheta_hat,
                })
            }
            _ => {
                let dqdot = forward_dynamics(theta, &a.q, &a.qdot, &Vector2::zeros())
                    .map_err(|source| SimError::Plant { t, source })?;
                Ok(AgentDerivative {
                    dq: a.qdot,
                    dqdot,
                    dvarpi: Point::zeros(),
                    dv: Point::zeros(),
                    dtheta_hat: Vector3::zeros(),
                })
            }
        }
    }

    fn rhs_flat(&self, t: f64, x: &[f64], dx: &mut [f64], phase: Phase) -> Result<(), SimError> {
        let gain_values = match phase {
            Phase::Active => Some((
                self.scenario.gain.eval_mu(t)?,
                self.scenario.gain.eval_mu_tilde(t)?,
            )),
            Phase::Frozen => None,
        };
        for i in 0..self.omega.len() {
            let d = self.agent_derivative(x, i, t, phase, gain_values)?;
            let s = &mut dx[i * STATE_PER_AGENT..(i + 1) * STATE_PER_AGENT];
            s[0..2].copy_from_slice((d.dq - d.dvarpi).as_slice());
            s[2..4].copy_from_slice(d.dqdot.as_slice());
            s[4..6].copy_from_slice(d.dvarpi.as_slice());
            s[6..8].copy_from_slice(d.dv.as_slice());
            s[8..11].copy_from_slice(d.dtheta_hat.as_slice());
        }
        Ok(())
    }

    /// Derivative of every agent for the phase carried by `state`.
    pub fn closed_loop_rhs(&self, state: &NetworkState) -> Result<Vec<AgentDerivative>, SimError> {
        let x = self.pack(state);
        let gain_values = match state.phase {
            Phase::Active => Some((
                self.scenario.gain.eval_mu(state.t)?,
                self.scenario.gain.eval_mu_tilde(state.t)?,
            )),
            Phase::Frozen => None,
        };
        (0..self.omega.len())
            .map(|i| self.agent_derivative(&x, i, state.t, state.phase, gain_values))
            .collect()
    }

    /// One plain RK4 step. Active steps must end strictly before the deadline.
    pub fn rk4_step(&self, state: &NetworkState, h: f64) -> Result<NetworkState, SimError> {
        if !(h > 0.0) {
            return Err(SimError::InvalidScenario(format!("step must be positive, got {h}")));
        }
        let deadline = self.deadline();
        if state.phase == Phase::Active && state.t + h >= deadline - 1e-9 * h {
            return Err(SimError::StepAcrossDeadline {
                t: state.t,
                h,
                deadline,
            });
        }
        let mut x = self.pack(state);
        let mut rk = Rk4::new(x.len());
        let phase = state.phase;
        let mut f = |t: f64, x: &[f64], dx: &mut [f64]| self.rhs_flat(t, x, dx, phase);
        rk.step(&mut f, state.t, &mut x, h)?;
        let t = state.t + h;
        let phase = if t < deadline { phase } else { Phase::Frozen };
        Ok(self.unpack(t, phase, &x))
    }

    /// Rough largest decay rate of the closed loop at `t`, used to size substeps.
    pub fn stiffness_estimate(&self, state: &NetworkState) -> Result<f64, SimError> {
        self.stiffness_flat(&self.pack(state), state.t)
    }

    fn stiffness_flat(&self, x: &[f64], t: f64) -> Result<f64, SimError> {
        let mu = self.scenario.gain.eval_mu(t)?;
        let mt = self.scenario.gain.eval_mu_tilde(t)?;
        let iota = self.scenario.gains.iota;
        let mut worst: f64 = 0.0;
        for i in 0..self.omega.len() {
            let (a, exact) = self.read_agent(x, i);
            let e_y = exact.e_y;
            let g = self.scenario.gains.agent(i);
            let theta = &self.scenario.theta[i];
            let estimate = ManipulatorParams::from_vector(&a.theta_hat);
            let lam = sym2_eigenvalues(&mass_matrix(theta, &a.q)).0.max(1e-12);
            let m_hat = mass_matrix(&estimate, &a.q).norm();
            let c_hat = coriolis_matrix(&estimate, &a.q, &a.qdot).norm();
            let c_true = coriolis_matrix(theta, &a.q, &a.qdot).norm();
            let velocity = (g.k2 * mu + m_hat * (g.k1 * mu + (iota - 1.0) * mt) + c_hat + c_true) / lam;
            let position = g.k1 * mu + iota * mt + (m_hat * iota * g.k1 * mu * mt / lam).sqrt();
            let sliding = a.qdot + g.k1 * mu * e_y;
            let (z1, z2) = z_intermediates(g.k1, iota, mu, mt, &a.qdot, &e_y);
            let omega_norm = regression(&a.q, &a.qdot, &z1, &z2).norm();
            let spread = g.k1 * mu + (iota - 1.0) * mt + iota * g.k1 * mu * mt + 1.0;
            let coupling = 2.0 * mu.powf(2.0 * iota - 2.0) * omega_norm * (omega_norm + spread * sliding.norm()) / lam;
            let rate = velocity + position + coupling.sqrt() + g.sigma * mu + self.aux_rate * mu;
            worst = worst.max(rate);
        }
        Ok(worst)
    }

    fn substeps_for(&self, x: &[f64], t_next: f64, h: f64) -> Result<usize, SimError> {
        let policy = self.scenario.settings.substeps;
        if !policy.enabled {
            return Ok(1);
        }
        let rate = self.stiffness_flat(x, t_next)?;
        let k = (h * rate / policy.target).ceil();
        if !k.is_finite() || k > policy.max_per_step as f64 {
            return Err(SimError::NumericalAbort {
                t: t_next - h,
                reason: format!("stiffness requires {k} substeps, limit {}", policy.max_per_step),
            });
        }
        Ok((k as usize).max(1))
    }

    fn masses(&self, agents: &[AgentState]) -> Vec<Matrix2<f64>> {
        agents
            .iter()
            .zip(&self.scenario.theta)
            .map(|(a, p)| mass_matrix(p, &a.q))
            .collect()
    }

    pub fn errors(&self, agents: &[AgentState]) -> ErrorVector {
        compute_errors(agents, &self.optimum.z_star, &self.grad_star, &self.omega)
    }

    pub fn mapped(&self, errors: &ErrorVector, agents: &[AgentState], mu: f64) -> MappedError {
        compute_mapped(
            errors,
            agents,
            &self.theta_vec,
            mu,
            self.scenario.gains.iota,
            &self.scenario.gains.k1,
        )
    }

    fn torques(
        &self,
        agents: &[AgentState],
        e_y: &[Vector2<f64>],
        phase: Phase,
        t: f64,
    ) -> Result<Vec<Vector2<f64>>, SimError> {
        match phase {
            Phase::Frozen => Ok(vec![Vector2::zeros(); agents.len()]),
            Phase::Active => {
                let mu = self.scenario.gain.eval_mu(t)?;
                let mt = self.scenario.gain.eval_mu_tilde(t)?;
                Ok(agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        tracking_torque(
                            &self.tracking_input(a, e_y[i], mu, mt),
                            self.scenario.gains.agent(i),
                            self.scenario.gains.iota,
                            phase,
                        )
                    })
                    .collect())
            }
        }
    }

    fn grad_norm(&self, agents: &[AgentState]) -> f64 {
        let ybar: Vec<Point> = agents.iter().zip(&self.omega).map(|(a, w)| a.q - w).collect();
        self.scenario
            .objective
            .global_gradient_norm(&ybar)
            .expect("agent count checked at construction")
    }

    fn should_record(&self, k: usize) -> bool {
        let s = &self.scenario.settings;
        let every = ((s.record_interval / s.step).round() as usize).max(1);
        k == 0
            || k.is_multiple_of(every)
            || k == self.total_steps
            || (k <= self.active_steps && k + s.dense_tail > self.active_steps)
    }

    pub fn run(&self) -> Result<RunOutput, SimError> {
        let settings = self.scenario.settings;
        let n = self.omega.len();
        let mut x = self.pack(&self.initial_state());
        let mut rk = Rk4::new(x.len());
        let iota = self.scenario.gains.iota;
        let gamma_s = gamma_s_coefficient(self.scenario.gains.k1_max(), self.scenario.gain.b());
        let h = settings.step;
        let window = self.deadline() - settings.lyapunov_guard_steps as f64 * h - self.scenario.gain.t0();
        let lyapunov_last_step = if window < 0.0 {
            0
        } else {
            ((window / h + 1e-6).floor() as usize).min(self.active_steps)
        };

        let mut trace = Trace::default();
        let mut total_substeps: u64 = 0;
        let mut mapping = MappingCheck {
            samples: 0,
            violations: 0,
            worst_ratio_r: 0.0,
            worst_ratio_s: 0.0,
            sup_er_tilde: 0.0,
            sup_es_tilde: 0.0,
        };
        let mut bounds = Bounds {
            max_qdot: 0.0,
            max_torque: 0.0,
            max_theta_hat: 0.0,
        };
        let mut lyap = self.lyapunov.rates.map(|_| LyapunovCheck {
            samples: 0,
            passing: 0,
            fraction: f64::NAN,
            worst_u: f64::NEG_INFINITY,
            worst_w: f64::NEG_INFINITY,
            window_end: self.time_at(lyapunov_last_step),
        });
        let mut prev_uw: Option<(f64, f64, f64)> = None;
        let mut grad_norm_initial = f64::NAN;
        let mut grad_norm_last_active = f64::NAN;
        let mut torque_last_active = f64::NAN;
        let mut grad_norm_max_frozen = f64::NAN;
        let mut max_torque_frozen: f64 = 0.0;
        let mut max_qdot_frozen: f64 = 0.0;
        let mut frozen_reference: Option<Vec<Vector2<f64>>> = None;
        let mut frozen_output_drift: f64 = 0.0;
        let mut max_conservation: f64 = 0.0;

        for k in 0..=self.total_steps {
            let t = self.time_at(k);
            if k > 0 {
                let t_prev = self.time_at(k - 1);
                let h = t - t_prev;
                let step_phase = self.phase_at_step(k);
                let substeps = match step_phase {
                    Phase::Active => self.substeps_for(&x, t, h)?,
                    Phase::Frozen => 1,
                };
                total_substeps += substeps as u64;
                let mut f = |tt: f64, xx: &[f64], dx: &mut [f64]| self.rhs_flat(tt, xx, dx, step_phase);
                rk.step_split(&mut f, t_prev, &mut x, h, substeps)?;
                if let Some(bad) = x.iter().find(|v| !v.is_finite() || v.abs() > settings.abort_norm) {
                    return Err(SimError::NumericalAbort {
                        t,
                        reason: format!("state entry {bad:e} exceeds the abort threshold"),
                    });
                }
            }

            let phase = self.phase_at_step(k);
            let (agents, exact): (Vec<AgentState>, Vec<ExactErrors>) =
                (0..n).map(|i| self.read_agent(&x, i)).unzip();
            let mut errors = self.errors(&agents);
            errors.e_y = exact.iter().map(|e| e.e_y).collect();
            errors.e_varpi = exact.iter().map(|e| e.e_varpi).collect();
            errors.e_v = exact.iter().map(|e| e.e_v).collect();
            let torques = self.torques(&agents, &errors.e_y, phase, t)?;
            let grad_norm = self.grad_norm(&agents);
            let conservation = conservation_residual(&agents);
            max_conservation = max_conservation.max(conservation);
            let qdot_norm = errors.qdot.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            let torque_norm = torques.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            let theta_norm = agents.iter().map(|a| a.theta_hat.norm_squared()).sum::<f64>().sqrt();
            bounds.max_qdot = bounds.max_qdot.max(qdot_norm);
            bounds.max_torque = bounds.max_torque.max(torque_norm);
            bounds.max_theta_hat = bounds.max_theta_hat.max(theta_norm);
            if k == 0 {
                grad_norm_initial = grad_norm;
            }

            let mut metrics = Metrics {
                grad_norm,
                e_r_norm: errors.e_r_norm(),
                e_s_norm: errors.e_s_norm(),
                er_tilde_norm: f64::NAN,
                es_tilde_norm: f64::NAN,
                u: f64::NAN,
                w: f64::NAN,
                conservation,
            };

            match phase {
                Phase::Active => {
                    let mu = self.scenario.gain.eval_mu(t)?;
                    let mapped = self.mapped(&errors, &agents, mu);
                    let lv = self.lyapunov.evaluate(&mapped, &self.masses(&agents));
                    metrics.er_tilde_norm = mapped.er_norm();
                    metrics.es_tilde_norm = mapped.es_norm();
                    metrics.u = lv.u;
                    metrics.w = lv.w;

                    mapping.samples += 1;
                    mapping.sup_er_tilde = mapping.sup_er_tilde.max(metrics.er_tilde_norm);
                    mapping.sup_es_tilde = mapping.sup_es_tilde.max(metrics.es_tilde_norm);
                    let bound_r = mu.powf(-iota) * mapping.sup_er_tilde;
                    let bound_s = mu.powf(1.0 - iota) * gamma_s * mapping.sup_es_tilde;
                    let ratio_r = ratio(metrics.e_r_norm, bound_r);
                    let ratio_s = ratio(metrics.e_s_norm, bound_s);
                    mapping.worst_ratio_r = mapping.worst_ratio_r.max(ratio_r);
                    mapping.worst_ratio_s = mapping.worst_ratio_s.max(ratio_s);
                    if ratio_r > 1.0 + MAPPING_SLACK || ratio_s > 1.0 + MAPPING_SLACK {
                        mapping.violations += 1;
                    }

                    if let (Some(rates), Some(check)) = (&self.lyapunov.rates, lyap.as_mut()) {
                        if let Some((t_prev, u_prev, w_prev)) = prev_uw {
                            if k <= lyapunov_last_step {
                                let dt = t - t_prev;
                                let mu_prev = self.scenario.gain.eval_mu(t_prev)?;
                                let ru = relative_residual(
                                    (lv.u - u_prev) / dt,
                                    &rates.u_terms(mu_prev, u_prev, w_prev),
                                    &rates.u_terms(mu, lv.u, lv.w),
                                );
                                let rw = relative_residual(
                                    (lv.w - w_prev) / dt,
                                    &rates.w_terms(mu_prev, u_prev, w_prev),
                                    &rates.w_terms(mu, lv.u, lv.w),
                                );
                                check.samples += 1;
                                if ru <= LYAPUNOV_REL_TOL && rw <= LYAPUNOV_REL_TOL {
                                    check.passing += 1;
                                }
                                check.worst_u = check.worst_u.max(ru);
                                check.worst_w = check.worst_w.max(rw);
                            }
                        }
                        prev_uw = Some((t, lv.u, lv.w));
                    }
                    if k == self.active_steps {
                        grad_norm_last_active = grad_norm;
                        torque_last_active = torque_norm;
                    }
                }
                Phase::Frozen => {
                    grad_norm_max_frozen = if grad_norm_max_frozen.is_nan() {
                        grad_norm
                    } else {
                        grad_norm_max_frozen.max(grad_norm)
                    };
                    max_torque_frozen = max_torque_frozen.max(torque_norm);
                    max_qdot_frozen = max_qdot_frozen.max(qdot_norm);
                    let outputs: Vec<Vector2<f64>> = agents.iter().map(|a| a.q).collect();
                    match &frozen_reference {
                        None => frozen_reference = Some(outputs),
                        Some(r) => {
                            for (a, b) in outputs.iter().zip(r) {
                                frozen_output_drift = frozen_output_drift.max((a - b).amax());
                            }
                        }
                    }
                }
            }

            if self.should_record(k) {
                trace.samples.push(Sample {
                    t,
                    phase,
                    agents,
                    torques,
                    metrics,
                });
            }
        }

        if let Some(c) = lyap.as_mut() {
            c.fraction = if c.samples == 0 {
                f64::NAN
            } else {
                c.passing as f64 / c.samples as f64
            };
        }
        let z = self.optimum.z_star;
        let final_output_error = (0..n)
            .map(|i| (self.read_agent(&x, i).0.q - (z + self.omega[i])).amax())
            .fold(0.0, f64::max);
        let summary = RunSummary {
            z_star: [z[0], z[1]],
            deadline: self.deadline(),
            last_active_time: self.time_at(self.active_steps.min(self.total_steps)),
            active_steps: self.active_steps,
            total_steps: self.total_steps,
            total_substeps,
            grad_norm_initial,
            grad_norm_last_active,
            grad_norm_max_frozen,
            torque_last_active,
            max_torque_frozen,
            max_qdot_frozen,
            frozen_output_drift,
            final_output_error,
            max_conservation,
            mapping,
            bounds,
            lyapunov: lyap,
            design: self.design.clone(),
            warnings: self.warnings.clone(),
        };
        Ok(RunOutput { trace, summary })
    }
}

fn ratio(value: f64, bound: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if bound == 0.0 {
        f64::INFINITY
    } else {
        value / bound
    }
}
