use nalgebra::DVector;
use serde::Serialize;

use super::model::BusKindModel;
use super::{CertificateMap, SimError, TimeSeries};
use crate::dqframe::instantaneous_power;
use crate::network::line_energy;

/// Composite storage along a run.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovTrace {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub segment: Vec<usize>,
    /// Largest increase between consecutive samples of one segment,
    /// relative to the storage at the start of that segment (floored at
    /// machine precision times the storage of the equilibrium itself).
    pub worst_increase: f64,
    pub nonincreasing: bool,
}

/// Allowed increase between samples, relative to the storage right after
/// the preceding event.
pub const MONOTONE_REL_TOL: f64 = 1e-6;

/// Evaluates `V = V_lines + Σ ½ x̃ᵀP x̃ + Σ E_RLC` in deviation coordinates
/// about the equilibrium of each interval between events.
pub fn lyapunov_trace(ts: &TimeSeries, certificates: &CertificateMap) -> Result<LyapunovTrace, SimError> {
    let mut equilibria = Vec::with_capacity(ts.segments.len());
    for seg in &ts.segments {
        let eq = seg.system.equilibrium().ok_or(SimError::NoEquilibrium(seg.t_start))?;
        for bus in &seg.system.buses {
            if bus.is_inverter() && !certificates.contains_key(&bus.id) {
                return Err(SimError::MissingCertificate(bus.id));
            }
        }
        equilibria.push(eq);
    }
    let mut out = LyapunovTrace {
        t: Vec::with_capacity(ts.samples.len()),
        v: Vec::with_capacity(ts.samples.len()),
        segment: Vec::with_capacity(ts.samples.len()),
        worst_increase: f64::NEG_INFINITY,
        nonincreasing: true,
    };
    let storage = |sys: &super::InterconnectedSystem, x: &[f64], eq: &[f64]| -> Result<f64, SimError> {
        let mut v = line_energy(&sys.network, sys.line_state(x), sys.line_state(eq))?;
        for (k, bus) in sys.buses.iter().enumerate() {
            let dx = DVector::from_column_slice(sys.bus_state(x, k)) - DVector::from_column_slice(sys.bus_state(eq, k));
            let weight = match (&bus.kind, &bus.energy) {
                (BusKindModel::Inverter { .. }, _) => &certificates[&bus.id].p,
                (_, Some(e)) => e,
                (_, None) => continue,
            };
            v += 0.5 * dx.dot(&(weight * &dx));
        }
        Ok(v)
    };
    // storage of the equilibrium itself, measured from zero; sets the rounding floor
    let mut floors = Vec::with_capacity(ts.segments.len());
    for (seg, eq) in ts.segments.iter().zip(&equilibria) {
        let zero = vec![0.0; eq.len()];
        floors.push(f64::EPSILON * storage(&seg.system, eq.as_slice(), &zero)?);
    }
    for s in &ts.samples {
        let sys = &ts.segments[s.segment].system;
        let v = storage(sys, &s.state, equilibria[s.segment].as_slice())?;
        out.t.push(s.t);
        out.v.push(v);
        out.segment.push(s.segment);
    }
    let mut seg_start = 0;
    for k in 0..out.v.len() {
        if k == 0 || out.segment[k] != out.segment[k - 1] {
            seg_start = k;
            continue;
        }
        let base = out.v[seg_start].abs().max(floors[out.segment[k]]).max(f64::MIN_POSITIVE);
        let rel = (out.v[k] - out.v[k - 1]) / base;
        out.worst_increase = out.worst_increase.max(rel);
        if rel > MONOTONE_REL_TOL {
            out.nonincreasing = false;
        }
    }
    if out.worst_increase == f64::NEG_INFINITY {
        out.worst_increase = 0.0;
    }
    Ok(out)
}

/// `P(t)`, `Q(t)` of one bus (generator convention at inverters, load
/// convention elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusPower {
    pub bus: usize,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn power_trace(ts: &TimeSeries) -> Vec<BusPower> {
    let mut out: Vec<BusPower> = Vec::new();
    for s in &ts.samples {
        for b in &s.buses {
            let (p, q) = instantaneous_power(b.v, b.i);
            let entry = match out.iter_mut().position(|e| e.bus == b.bus) {
                Some(k) => &mut out[k],
                None => {
                    out.push(BusPower { bus: b.bus, t: Vec::new(), p: Vec::new(), q: Vec::new() });
                    out.last_mut().expect("just pushed")
                }
            };
            entry.t.push(s.t);
            entry.p.push(p);
            entry.q.push(q);
        }
    }
    out.sort_by_key(|e| e.bus);
    out
}
