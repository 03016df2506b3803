//! TOML scenario files.
//!
//! Every key is optional; missing keys take the six-robot source-seeking
//! values, so an empty file describes that scenario.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlGains;
use crate::design::{synthesize, DesignError, NetworkConstants, DEFAULT_MARGIN};
use crate::gain::{GainError, GainForm, GainFunction, PrescribedGain, DEFAULT_MU_CAP};
use crate::graph::{spectrum, GraphError, Topology};
use crate::objective::{hexagon_offsets, AgentObjective, ObjectiveError, Point, QuadraticObjective};
use crate::plant::{ManipulatorParams, PlantBounds};
use crate::sim::{network_constants, AgentState, Scenario, SimSettings, SubstepPolicy, INITIAL_SUM_TOL};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("disconnected graph: {0}")]
    Disconnected(String),
}

impl From<GainError> for ConfigError {
    fn from(e: GainError) -> Self {
        ConfigError::Validation(e.to_string())
    }
}

impl From<ObjectiveError> for ConfigError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::Graph(g) => g.into(),
            other => ConfigError::Validation(other.to_string()),
        }
    }
}

impl From<GraphError> for ConfigError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Disconnected { .. } => ConfigError::Disconnected(e.to_string()),
            other => ConfigError::Validation(other.to_string()),
        }
    }
}

impl From<DesignError> for ConfigError {
    fn from(e: DesignError) -> Self {
        ConfigError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    Power,
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSection {
    pub form: GainKind,
    pub m: f64,
    pub scale: f64,
    pub t0: f64,
    pub horizon: f64,
    pub mu_cap: f64,
}

impl Default for GainSection {
    fn default() -> Self {
        Self {
            form: GainKind::Power,
            m: 1.0,
            scale: 5.0,
            t0: 0.0,
            horizon: 2.0,
            mu_cap: DEFAULT_MU_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Ring,
    Complete,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub kind: GraphKind,
    pub nodes: usize,
    /// Row-major adjacency weights, used when `kind = "custom"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            kind: GraphKind::Ring,
            nodes: 6,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub d_star: [f64; 2],
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub omega: Vec<[f64; 2]>,
    /// Use the initial outputs as anchors.
    pub anchor_from_initial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<[f64; 2]>>,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            d_star: [0.0, 0.0],
            s1: vec![1.0; 6],
            s2: vec![1.0; 6],
            omega: hexagon_offsets().iter().map(|p| [p[0], p[1]]).collect(),
            anchor_from_initial: true,
            anchors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// True `(p1, p2, p3)` per agent.
    pub theta: Vec<[f64; 3]>,
    pub k_m_lower: f64,
    pub k_m_upper: f64,
    pub rho: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = ManipulatorParams::nominal();
        let b = PlantBounds::nominal();
        Self {
            theta: vec![[p.p1, p.p2, p.p3]; 6],
            k_m_lower: b.k_m_lower,
            k_m_upper: b.k_m_upper,
            rho: b.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub c: f64,
    pub iota: f64,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Replace `c`, `k1`, `k2`, `sigma` by gains synthesized for `c_star`.
    pub synthesize: bool,
    /// Decay constant for the design report and the decrease checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_star: Option<f64>,
    pub margin: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            c: 1.3,
            iota: 2.44,
            k1: vec![5.0; 6],
            k2: vec![30.0; 6],
            sigma: vec![4.0; 6],
            synthesize: false,
            c_star: None,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub q: Vec<[f64; 2]>,
    pub qdot: Vec<[f64; 2]>,
    /// Defaults to `q`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varpi: Option<Vec<[f64; 2]>>,
    /// Defaults to zero; must sum to zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<[f64; 2]>>,
    pub theta_hat: Vec<[f64; 3]>,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            q: vec![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [-2.0, -3.0], [-2.0, -2.0], [-3.0, -3.0]],
            qdot: vec![[0.0, 0.0]; 6],
            varpi: None,
            v: None,
            theta_hat: vec![[2.0, 2.0, 2.0]; 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub step: f64,
    pub t_end: f64,
    pub record_interval: f64,
    pub dense_tail: usize,
    pub abort_norm: f64,
    pub substeps: bool,
    pub substep_target: f64,
    pub max_substeps: usize,
    pub lyapunov_guard_steps: usize,
    /// Seed for randomized checks driven by this scenario.
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSettings::default();
        Self {
            step: s.step,
            t_end: s.t_end,
            record_interval: s.record_interval,
            dense_tail: s.dense_tail,
            abort_norm: s.abort_norm,
            substeps: s.substeps.enabled,
            substep_target: s.substeps.target,
            max_substeps: s.substeps.max_per_step,
            lyapunov_guard_steps: s.lyapunov_guard_steps,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub gain: GainSection,
    pub graph: GraphSection,
    pub objective: ObjectiveSection,
    pub plant: PlantSection,
    pub control: ControlSection,
    pub init: InitSection,
    pub sim: SimSection,
}

/// A validated scenario plus the values derived while building it.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub constants: NetworkConstants,
    pub warnings: Vec<String>,
}

fn point(p: &[f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

fn check_len<T>(name: &str, v: &[T], n: usize) -> Result<(), ConfigError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(ConfigError::Validation(format!(
            "{name} has {} entries, expected one per agent ({n})",
            v.len()
        )))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn agent_count(&self) -> usize {
        self.graph.nodes
    }

    pub fn gain_function(&self) -> Result<GainFunction, ConfigError> {
        let form = match self.gain.form {
            GainKind::Power => GainForm::Power {
                m: self.gain.m,
                scale: self.gain.scale,
            },
            GainKind::Exp => GainForm::Exp,
        };
        Ok(GainFunction::new(form, self.gain.t0, self.gain.horizon, self.gain.mu_cap)?)
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let n = self.graph.nodes;
        let top = match self.graph.kind {
            GraphKind::Ring => Topology::ring(n)?,
            GraphKind::Complete => Topology::complete(n)?,
            GraphKind::Custom => {
                let w = self.graph.weights.as_ref().ok_or_else(|| {
                    ConfigError::Validation("graph.weights is required for a custom graph".into())
                })?;
                Topology::from_row_major(n, w)?
            }
        };
        Ok(top)
    }

    pub fn objective(&self) -> Result<QuadraticObjective, ConfigError> {
        let n = self.agent_count();
        let o = &self.objective;
        check_len("objective.s1", &o.s1, n)?;
        check_len("objective.s2", &o.s2, n)?;
        check_len("objective.omega", &o.omega, n)?;
        let anchors: Vec<[f64; 2]> = if o.anchor_from_initial {
            check_len("init.q", &self.init.q, n)?;
            self.init.q.clone()
        } else {
            let a = o.anchors.as_ref().ok_or_else(|| {
                ConfigError::Validation(
                    "objective.anchors is required when anchor_from_initial = false".into(),
                )
            })?;
            check_len("objective.anchors", a, n)?;
            a.clone()
        };
        let agents = (0..n)
            .map(|i| AgentObjective {
                s1: o.s1[i],
                s2: o.s2[i],
                omega: point(&o.omega[i]),
                anchor: point(&anchors[i]),
            })
            .collect();
        Ok(QuadraticObjective::new(point(&o.d_star), agents)?)
    }

    pub fn plant_bounds(&self) -> PlantBounds {
        PlantBounds {
            k_m_lower: self.plant.k_m_lower,
            k_m_upper: self.plant.k_m_upper,
            rho: self.plant.rho,
        }
    }

    pub fn settings(&self) -> SimSettings {
        let s = &self.sim;
        SimSettings {
            step: s.step,
            t_end: s.t_end,
            record_interval: s.record_interval,
            dense_tail: s.dense_tail,
            abort_norm: s.abort_norm,
            substeps: SubstepPolicy {
                enabled: s.substeps,
                target: s.substep_target,
                max_per_step: s.max_substeps,
            },
            lyapunov_guard_steps: s.lyapunov_guard_steps,
        }
    }

    fn initial_states(&self) -> Result<Vec<AgentState>, ConfigError> {
        let n = self.agent_count();
        let init = &self.init;
        check_len("init.q", &init.q, n)?;
        check_len("init.qdot", &init.qdot, n)?;
        check_len("init.theta_hat", &init.theta_hat, n)?;
        let varpi = init.varpi.clone().unwrap_or_else(|| init.q.clone());
        check_len("init.varpi", &varpi, n)?;
        let v = init.v.clone().unwrap_or_else(|| vec![[0.0, 0.0]; n]);
        check_len("init.v", &v, n)?;
        let sum: Point = v.iter().map(point).sum();
        if sum.norm() > INITIAL_SUM_TOL {
            return Err(ConfigError::Validation(format!(
                "init.v must sum to zero across agents, |sum| = {:e}",
                sum.norm()
            )));
        }
        Ok((0..n)
            .map(|i| AgentState {
                q: point(&init.q[i]),
                qdot: Vector2::new(init.qdot[i][0], init.qdot[i][1]),
                varpi: point(&varpi[i]),
                v: point(&v[i]),
                theta_hat: Vector3::from(init.theta_hat[i]),
            })
            .collect())
    }

    /// Network constants of the configured graph, objective and plant bounds.
    pub fn network_constants(&self) -> Result<NetworkConstants, ConfigError> {
        let gain = self.gain_function()?;
        let top = self.topology()?;
        let objective = self.objective()?;
        let eig = spectrum(&top.laplacian())?;
        eig.require_connected()?;
        Ok(network_constants(&eig, &objective, &self.plant_bounds(), gain.b_tilde()))
    }

    pub fn configured_gains(&self) -> ControlGains {
        let c = &self.control;
        ControlGains {
            c: c.c,
            iota: c.iota,
            k1: c.k1.clone(),
            k2: c.k2.clone(),
            sigma: c.sigma.clone(),
        }
    }

    /// Configured gains, or synthesized ones when `control.synthesize` is set.
    pub fn gains(&self, nc: &NetworkConstants) -> Result<ControlGains, ConfigError> {
        if !self.control.synthesize {
            return Ok(self.configured_gains());
        }
        let c_star = self.control.c_star.ok_or_else(|| {
            ConfigError::Validation("control.c_star is required when control.synthesize = true".into())
        })?;
        Ok(synthesize(nc, c_star, self.control.iota, self.control.margin)?)
    }

    pub fn build(&self) -> Result<BuiltScenario, ConfigError> {
        let n = self.agent_count();
        let gain = self.gain_function()?;
        let topology = self.topology()?;
        let objective = self.objective()?;
        check_len("plant.theta", &self.plant.theta, n)?;
        let bounds = self.plant_bounds();
        if !(bounds.k_m_lower > 0.0) || !(bounds.k_m_upper >= bounds.k_m_lower) {
            return Err(ConfigError::Validation(
                "plant bounds need 0 < k_m_lower <= k_m_upper".into(),
            ));
        }
        let initial = self.initial_states()?;
        let constants = self.network_constants()?;
        let gains = self.gains(&constants)?;
        let warnings = gains
            .validate(n, gain.b_tilde())
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        let settings = self.settings();
        if !(settings.step > 0.0) || !(settings.t_end > gain.t0()) || !(settings.record_interval > 0.0) {
            return Err(ConfigError::Validation(
                "sim needs step > 0, t_end > t0 and record_interval > 0".into(),
            ));
        }
        if !(settings.substeps.target > 0.0) || settings.substeps.max_per_step == 0 {
            return Err(ConfigError::Validation(
                "sim needs substep_target > 0 and max_substeps >= 1".into(),
            ));
        }
        let scenario = Scenario {
            gain,
            topology,
            objective,
            theta: self
                .plant
                .theta
                .iter()
                .map(|p| ManipulatorParams::new(p[0], p[1], p[2]))
                .collect(),
            bounds,
            gains,
            c_star: self.control.c_star,
            initial,
            settings,
        };
        Ok(BuiltScenario {
            scenario,
            constants,
            warnings,
        })
    }
}

/// Reads and validates a scenario file; returns it with its warnings.
pub fn load_config(path: &Path) -> Result<(ScenarioConfig, Vec<String>), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = ScenarioConfig::from_toml_str(&text)?;
    let built = config.build()?;
    Ok((config, built.warnings))
}
