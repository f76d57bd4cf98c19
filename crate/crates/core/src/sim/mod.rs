//! Time-domain simulation of the microgrid as the feedback interconnection
//! of bus dynamics and line dynamics.
//!
//! Between events the composite system is LTI,
//!
//! ```text
//! ẋ = [ A_net          B_net·C_bus ] x + [ 0     ]
//!     [ −B_bus·C_net   A_bus       ]     [ f_bus ]
//! ```
//!
//! where every bus takes the negated network injection current as input and
//! returns its voltage.

mod model;
mod trace;

pub use model::{build_closed_system, BusKindModel, BusModel, InterconnectedSystem};
pub use trace::{lyapunov_trace, power_trace, BusPower, LyapunovTrace};

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqframe::{instantaneous_power, DQPair, SyncFrame};
use crate::inverter::{ControllerGains, InverterParams, VirtualImpedance};
use crate::network::{Line, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("divergence at t = {time:.6} s in {location}")]
    Divergence { time: f64, location: String },
    #[error("singular composite system at t = {0:.6} s: no equilibrium")]
    NoEquilibrium(f64),
    #[error("bus {0} has no passivity certificate")]
    MissingCertificate(usize),
}

/// One constant-impedance load: parallel `R‖L` sized from its rating at
/// the bus's nominal DQ voltage magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadElement {
    pub p_rated: f64,
    #[serde(default)]
    pub q_rated: f64,
    #[serde(default = "yes")]
    pub connected: bool,
}

fn yes() -> bool {
    true
}

fn default_c_shunt() -> f64 {
    10e-6
}

fn default_v_nom() -> f64 {
    380.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadBus {
    #[serde(default = "default_v_nom")]
    pub v_nom: f64,
    #[serde(default = "default_c_shunt")]
    pub c_shunt: f64,
    pub elements: Vec<LoadElement>,
}

impl LoadElement {
    pub fn conductance(&self, v_nom: f64) -> f64 {
        self.p_rated / (v_nom * v_nom)
    }

    /// Parallel inductance, `None` for a purely resistive element.
    pub fn inductance(&self, v_nom: f64, omega_s: f64) -> Option<f64> {
        (self.q_rated > 0.0).then(|| v_nom * v_nom / (omega_s * self.q_rated))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterBus {
    pub v_ref: DQPair,
    /// Overrides the scenario-wide controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<ControllerGains>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BusSpec {
    Inverter(InverterBus),
    Load(LoadBus),
    Passive {
        #[serde(default = "default_c_shunt")]
        c_shunt: f64,
    },
}

/// Series connector used by plug-in events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connector {
    pub r: f64,
    pub l: f64,
}

impl Default for Connector {
    fn default() -> Self {
        Self { r: 0.01, l: 0.1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    LoadOn {
        bus: usize,
        element: usize,
    },
    LoadOff {
        bus: usize,
        element: usize,
    },
    /// New setpoint for the listed inverter buses (all inverters when empty).
    BroadcastVref {
        v_ref: DQPair,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        buses: Vec<usize>,
    },
    /// Adds a new inverter bus joined to `bus` through `connector`.
    PlugIn {
        bus: usize,
        #[serde(default)]
        connector: Connector,
        v_ref: DQPair,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gains: Option<ControllerGains>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            EventKind::LoadOn { bus, element } => write!(f, "load {element} on at bus {bus}"),
            EventKind::LoadOff { bus, element } => write!(f, "load {element} off at bus {bus}"),
            EventKind::BroadcastVref { v_ref, buses } if buses.is_empty() => {
                write!(f, "v_ref = ({}, {}) to all inverters", v_ref.d, v_ref.q)
            }
            EventKind::BroadcastVref { v_ref, buses } => {
                write!(f, "v_ref = ({}, {}) to buses {buses:?}", v_ref.d, v_ref.q)
            }
            EventKind::PlugIn { bus, .. } => write!(f, "inverter plugged in at bus {bus}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Steady state of the first interval.
    #[default]
    Equilibrium,
    /// All states zero (cold start).
    Zero,
}

/// Everything needed to run a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub frame: SyncFrame,
    pub bus_count: usize,
    pub lines: Vec<Line>,
    pub inverter: InverterParams,
    pub impedance: VirtualImpedance,
    pub gains: ControllerGains,
    /// `buses[k]` describes bus `k + 1`.
    pub buses: Vec<BusSpec>,
    pub events: Vec<Event>,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub initial: InitialState,
}

impl Scenario {
    /// Structural checks that do not need the assembled model.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.buses.len() != self.bus_count {
            return bad(format!("network has {} buses but {} bus entries are given", self.bus_count, self.buses.len()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        for (k, bus) in self.buses.iter().enumerate() {
            match bus {
                BusSpec::Load(l) => {
                    if !(l.c_shunt > 0.0) || !(l.v_nom > 0.0) {
                        return bad(format!("bus {}: c_shunt and v_nom must be positive", k + 1));
                    }
                    if l.elements.iter().any(|e| !(e.p_rated >= 0.0) || !(e.q_rated >= 0.0)) {
                        return bad(format!("bus {}: load ratings must be nonnegative", k + 1));
                    }
                }
                BusSpec::Passive { c_shunt } if !(*c_shunt > 0.0) => {
                    return bad(format!("bus {}: c_shunt must be positive", k + 1));
                }
                BusSpec::Inverter(inv) if !inv.v_ref.is_finite() => {
                    return bad(format!("bus {}: v_ref must be finite", k + 1));
                }
                _ => {}
            }
        }
        let mut prev = f64::NEG_INFINITY;
        let mut buses = self.buses.clone();
        for (k, ev) in self.events.iter().enumerate() {
            if !(ev.time >= 0.0) {
                return bad(format!("event {k} at negative time {}", ev.time));
            }
            if ev.time <= prev {
                return bad(format!("event {k} at t = {} is not after the previous event", ev.time));
            }
            if ev.time > self.t_end {
                return bad(format!("event {k} at t = {} is after t_end = {}", ev.time, self.t_end));
            }
            prev = ev.time;
            match &ev.kind {
                EventKind::LoadOn { bus, element } | EventKind::LoadOff { bus, element } => {
                    match buses.get(bus.wrapping_sub(1)) {
                        Some(BusSpec::Load(l)) if *element < l.elements.len() => {}
                        Some(BusSpec::Load(_)) => return bad(format!("event {k}: bus {bus} has no load element {element}")),
                        Some(_) => return bad(format!("event {k}: bus {bus} is not a load bus")),
                        None => return bad(format!("event {k} references unknown bus {bus}")),
                    }
                }
                EventKind::BroadcastVref { v_ref, buses: targets } => {
                    if !v_ref.is_finite() {
                        return bad(format!("event {k}: v_ref must be finite"));
                    }
                    for b in targets {
                        if !matches!(buses.get(b.wrapping_sub(1)), Some(BusSpec::Inverter(_))) {
                            return bad(format!("event {k}: bus {b} is not an inverter bus"));
                        }
                    }
                }
                EventKind::PlugIn { bus, connector, v_ref, gains } => {
                    if *bus == 0 || *bus > buses.len() {
                        return bad(format!("event {k} references unknown bus {bus}"));
                    }
                    if !(connector.r > 0.0 && connector.l > 0.0) {
                        return bad(format!("event {k}: connector r and l must be positive"));
                    }
                    buses.push(BusSpec::Inverter(InverterBus { v_ref: *v_ref, gains: gains.clone() }));
                }
            }
        }
        Ok(())
    }
}

/// One recorded bus quantity. Currents follow the generator convention at
/// inverter buses and the load convention elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusSample {
    pub bus: usize,
    pub v: DQPair,
    pub i: DQPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub segment: usize,
    pub buses: Vec<BusSample>,
    pub state: Vec<f64>,
}

/// An interval between events with its LTI model.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub system: InterconnectedSystem,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub description: String,
    pub state_dim_before: usize,
    pub state_dim_after: usize,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub samples: Vec<Sample>,
    pub segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
    pub dt: f64,
}

impl TimeSeries {
    pub fn final_state(&self) -> &[f64] {
        &self.samples.last().expect("at least one sample").state
    }

    /// Rows `t,bus,vd,vq,id,iq,p,q`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,bus,vd,vq,id,iq,p,q")?;
        for s in &self.samples {
            for b in &s.buses {
                let (p, q) = instantaneous_power(b.v, b.i);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    s.t, b.bus, b.v.d, b.v.q, b.i.d, b.i.q, p, q
                )?;
            }
        }
        Ok(())
    }

    /// `‖ẋ‖` of the recorded state under the model active at that sample.
    pub fn derivative_norm(&self, k: usize) -> f64 {
        let s = &self.samples[k];
        let sys = &self.segments[s.segment].system;
        sys.derivative(&DVector::from_column_slice(&s.state)).norm()
    }
}

/// One classical fourth-order Runge–Kutta step of the interconnected system.
pub fn step(system: &InterconnectedSystem, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = system.derivative(x);
    let k2 = system.derivative(&(x + &k1 * (0.5 * h)));
    let k3 = system.derivative(&(x + &k2 * (0.5 * h)));
    let k4 = system.derivative(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Exact solution of `ẋ = Ax + f` after time `t`, for cross-checking the integrator.
pub fn propagate_exact(system: &InterconnectedSystem, x: &DVector<f64>, t: f64) -> DVector<f64> {
    let n = system.dim();
    let mut aug = nalgebra::DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&system.a * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&system.forcing * t));
    let e = aug.exp();
    let mut xa = DVector::zeros(n + 1);
    xa.rows_mut(0, n).copy_from(x);
    xa[n] = 1.0;
    (e * xa).rows(0, n).into_owned()
}

/// Live, mutable description of the grid while a run is in progress.
#[derive(Debug, Clone)]
pub(crate) struct GridState {
    pub bus_count: usize,
    pub lines: Vec<Line>,
    pub buses: Vec<BusSpec>,
}

fn sample(system: &InterconnectedSystem, x: &DVector<f64>, t: f64, segment: usize) -> Sample {
    Sample { t, segment, buses: system.bus_samples(x), state: x.iter().copied().collect() }
}

fn check_state(system: &InterconnectedSystem, x: &DVector<f64>, t: f64) -> Result<(), SimError> {
    if let Some(k) = x.iter().position(|v| !v.is_finite() || v.abs() > 1e9) {
        return Err(SimError::Divergence { time: t, location: system.describe_state(k) });
    }
    Ok(())
}

fn apply_event(grid: &mut GridState, ev: &Event, x: &mut DVector<f64>, old: &InterconnectedSystem) {
    match &ev.kind {
        EventKind::LoadOn { bus, element } | EventKind::LoadOff { bus, element } => {
            let on = matches!(ev.kind, EventKind::LoadOn { .. });
            if let BusSpec::Load(l) = &mut grid.buses[bus - 1] {
                l.elements[*element].connected = on;
            }
            if !on {
                if let Some(range) = old.load_element_states(*bus, *element) {
                    for k in range {
                        x[k] = 0.0;
                    }
                }
            }
        }
        EventKind::BroadcastVref { v_ref, buses } => {
            for (k, b) in grid.buses.iter_mut().enumerate() {
                if let BusSpec::Inverter(inv) = b {
                    if buses.is_empty() || buses.contains(&(k + 1)) {
                        inv.v_ref = *v_ref;
                    }
                }
            }
        }
        EventKind::PlugIn { bus, connector, v_ref, gains } => {
            grid.bus_count += 1;
            grid.lines.push(Line::lumped(grid.bus_count, *bus, connector.r, connector.l));
            grid.buses.push(BusSpec::Inverter(InverterBus { v_ref: *v_ref, gains: gains.clone() }));
        }
    }
}

/// Integrates the scenario through all of its events.
pub fn run_scenario(scenario: &Scenario) -> Result<TimeSeries, SimError> {
    scenario.validate()?;
    let mut grid = GridState {
        bus_count: scenario.bus_count,
        lines: scenario.lines.clone(),
        buses: scenario.buses.clone(),
    };
    let mut system = model::build_from_grid(scenario, &grid)?;
    let mut x = match scenario.initial {
        InitialState::Equilibrium => system.equilibrium().ok_or(SimError::NoEquilibrium(0.0))?,
        InitialState::Zero => DVector::zeros(system.dim()),
    };
    let mut samples = Vec::new();
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut boundaries: Vec<f64> = scenario.events.iter().map(|e| e.time).collect();
    boundaries.push(scenario.t_end);
    for (k, &t_next) in boundaries.iter().enumerate() {
        let seg_index = segments.len();
        let span = t_next - t;
        let steps = if span > 0.0 { (span / scenario.dt - 1e-9).ceil().max(1.0) as usize } else { 0 };
        let h = if steps > 0 { span / steps as f64 } else { 0.0 };
        if steps > 0 {
            let rate = crate::linalg::spectral_radius(&system.a);
            if h * rate >= 2.5 {
                log::warn!("step {h:.3e} s times spectral radius {rate:.3e} exceeds 2.5; RK4 may be unstable");
            }
        }
        samples.push(sample(&system, &x, t, seg_index));
        for s in 1..=steps {
            x = step(&system, &x, h);
            let ts = if s == steps { t_next } else { t + h * s as f64 };
            check_state(&system, &x, ts)?;
            if s % scenario.record_stride == 0 || s == steps {
                samples.push(sample(&system, &x, ts, seg_index));
            }
        }
        segments.push(Segment { t_start: t, t_end: t_next, system: system.clone(), step: h });
        t = t_next;
        if let Some(ev) = scenario.events.get(k) {
            let before = system.dim();
            let old = system.clone();
            apply_event(&mut grid, ev, &mut x, &old);
            system = model::build_from_grid(scenario, &grid)?;
            x = model::remap_state(&old, &system, &x, t)?;
            events.push(EventRecord {
                time: ev.time,
                description: ev.to_string(),
                state_dim_before: before,
                state_dim_after: system.dim(),
            });
            log::info!("t = {:.4} s: {}", ev.time, ev);
        }
    }
    // The final boundary is t_end; an event exactly at t_end leaves a zero-length tail.
    Ok(TimeSeries { samples, segments, events, dt: scenario.dt })
}

/// Per-bus certificates keyed by bus id (1-based).
pub type CertificateMap = BTreeMap<usize, crate::certify::PassivityCertificate>;
