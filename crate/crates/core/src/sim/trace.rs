//! Recorded samples and their CSV form.

use std::io::{self, BufRead, Write};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use super::AgentState;
use crate::controller::Phase;
use crate::objective::Point;

pub const TRACE_HEADER: &str = "t,phase,agent,q1,q2,qd1,qd2,varpi1,varpi2,v1,v2,th1,th2,th3,tau1,tau2";
pub const METRICS_HEADER: &str = "t,grad_norm,e_r_norm,e_s_norm,er_tilde_norm,es_tilde_norm,U,W,conservation";

/// Scalar diagnostics of one sample. Mapped quantities are NaN once frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub grad_norm: f64,
    pub e_r_norm: f64,
    pub e_s_norm: f64,
    pub er_tilde_norm: f64,
    pub es_tilde_norm: f64,
    pub u: f64,
    pub w: f64,
    pub conservation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub phase: Phase,
    pub agents: Vec<AgentState>,
    pub torques: Vec<Vector2<f64>>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trace {
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for s in &self.samples {
            for (i, (a, tau)) in s.agents.iter().zip(&s.torques).enumerate() {
                let values = [
                    a.q[0],
                    a.q[1],
                    a.qdot[0],
                    a.qdot[1],
                    a.varpi[0],
                    a.varpi[1],
                    a.v[0],
                    a.v[1],
                    a.theta_hat[0],
                    a.theta_hat[1],
                    a.theta_hat[2],
                    tau[0],
                    tau[1],
                ];
                let row: Vec<String> = values.iter().map(|&x| fmt(x)).collect();
                writeln!(out, "{},{},{},{}", fmt(s.t), s.phase.as_str(), i, row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn write_metrics_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for s in &self.samples {
            let m = &s.metrics;
            let values = [
                s.t,
                m.grad_norm,
                m.e_r_norm,
                m.e_s_norm,
                m.er_tilde_norm,
                m.es_tilde_norm,
                m.u,
                m.w,
                m.conservation,
            ];
            let row: Vec<String> = values.iter().map(|&x| fmt(x)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub phase: Phase,
    pub agent: usize,
    pub state: AgentState,
    pub torque: Vector2<f64>,
}

/// Trace rows grouped by sample time, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub phase: Phase,
    pub agents: Vec<AgentState>,
    pub torques: Vec<Vector2<f64>>,
}

fn parse_f64(field: &str, line: usize) -> Result<f64, TraceError> {
    field.trim().parse().map_err(|_| TraceError::Malformed {
        line,
        reason: format!("not a number: {field:?}"),
    })
}

fn parse_phase(field: &str, line: usize) -> Result<Phase, TraceError> {
    match field.trim() {
        "active" => Ok(Phase::Active),
        "frozen" => Ok(Phase::Frozen),
        other => Err(TraceError::Malformed {
            line,
            reason: format!("unknown phase {other:?}"),
        }),
    }
}

fn check_header(first: Option<io::Result<String>>, expected: &str) -> Result<(), TraceError> {
    match first {
        Some(Ok(h)) if h.trim() == expected => Ok(()),
        Some(Err(e)) => Err(e.into()),
        _ => Err(TraceError::Malformed {
            line: 1,
            reason: format!("expected header {expected:?}"),
        }),
    }
}

pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceSample>, TraceError> {
    let mut lines = input.lines();
    check_header(lines.next(), TRACE_HEADER)?;
    let mut samples: Vec<TraceSample> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 16 {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: format!("expected 16 fields, found {}", fields.len()),
            });
        }
        let t = parse_f64(fields[0], line_no)?;
        let phase = parse_phase(fields[1], line_no)?;
        let agent: usize = fields[2].trim().parse().map_err(|_| TraceError::Malformed {
            line: line_no,
            reason: format!("bad agent index {:?}", fields[2]),
        })?;
        let v: Vec<f64> = fields[3..]
            .iter()
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<_, _>>()?;
        let state = AgentState {
            q: Vector2::new(v[0], v[1]),
            qdot: Vector2::new(v[2], v[3]),
            varpi: Point::new(v[4], v[5]),
            v: Point::new(v[6], v[7]),
            theta_hat: Vector3::new(v[8], v[9], v[10]),
        };
        let torque = Vector2::new(v[11], v[12]);
        let new_sample = agent == 0;
        if new_sample {
            samples.push(TraceSample {
                t,
                phase,
                agents: Vec::new(),
                torques: Vec::new(),
            });
        }
        let current = samples.last_mut().ok_or_else(|| TraceError::Malformed {
            line: line_no,
            reason: "sample does not start with agent 0".into(),
        })?;
        if current.t.to_bits() != t.to_bits() || current.phase != phase || current.agents.len() != agent {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: "agent rows out of order".into(),
            });
        }
        current.agents.push(state);
        current.torques.push(torque);
    }
    Ok(samples)
}

/// One parsed row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub metrics: Metrics,
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<MetricsRow>, TraceError> {
    let mut lines = input.lines();
    check_header(lines.next(), METRICS_HEADER)?;
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<_, _>>()?;
        if v.len() != 9 {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: format!("expected 9 fields, found {}", v.len()),
            });
        }
        rows.push(MetricsRow {
            t: v[0],
            metrics: Metrics {
                grad_norm: v[1],
                e_r_norm: v[2],
                e_s_norm: v[3],
                er_tilde_norm: v[4],
                es_tilde_norm: v[5],
                u: v[6],
                w: v[7],
                conservation: v[8],
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, phase: Phase) -> Sample {
        let a = AgentState {
            q: Vector2::new(0.1, -0.2),
            qdot: Vector2::new(1e-3, 2e-3),
            varpi: Point::new(0.3, 0.4),
            v: Point::new(0.5, -0.5),
            theta_hat: Vector3::new(2.0, 2.0, 2.0),
        };
        Sample {
            t,
            phase,
            agents: vec![a, a],
            torques: vec![Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0)],
            metrics: Metrics {
                grad_norm: 1.0,
                e_r_norm: 2.0,
                e_s_norm: 3.0,
                er_tilde_norm: f64::NAN,
                es_tilde_norm: f64::NAN,
                u: f64::NAN,
                w: f64::NAN,
                conservation: 0.0,
            },
        }
    }

    #[test]
    fn trace_round_trips_through_csv() {
        let trace = Trace {
            samples: vec![sample(0.0, Phase::Active), sample(0.1, Phase::Frozen)],
        };
        let mut buf = Vec::new();
        trace.write_trace_csv(&mut buf).unwrap();
        let parsed = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].phase, Phase::Frozen);
        assert_eq!(parsed[0].agents, trace.samples[0].agents);
        assert_eq!(parsed[0].torques, trace.samples[0].torques);
    }

    #[test]
    fn metrics_keep_nan() {
        let trace = Trace {
            samples: vec![sample(0.0, Phase::Frozen)],
        };
        let mut buf = Vec::new();
        trace.write_metrics_csv(&mut buf).unwrap();
        let rows = read_metrics_csv(buf.as_slice()).unwrap();
        assert!(rows[0].metrics.u.is_nan());
        assert_eq!(rows[0].metrics.e_s_norm, 3.0);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(
            read_trace_csv("t,x\n".as_bytes()),
            Err(TraceError::Malformed { line: 1, .. })
        ));
    }
}
