//! JSON scenario files: schema, defaults and validation.
//!
//! Omitted blocks take the case-study values: the LC filter and virtual
//! impedance, the published controller, the tuning specification, and a
//! 5 s run at 10 µs steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::TuningSpec;
use crate::dqframe::{DQPair, SyncFrame, OMEGA_50HZ};
use crate::inverter::{ControllerGains, InverterParams, VirtualImpedance};
use crate::network::{assemble_network, validate_network, Line, LineSection};
use crate::sim::{BusSpec, Event, EventKind, InitialState, InverterBus, LoadBus, LoadElement, Scenario};
use crate::synthesize::SynthesisConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub omega_s: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { omega_s: OMEGA_50HZ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub bus_count: usize,
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub initial: InitialState,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self { t_end: 5.0, dt: 1e-5, record_stride: 100, initial: InitialState::Equilibrium }
    }
}

fn default_inverter() -> InverterParams {
    InverterParams::case_study()
}

fn default_impedance() -> VirtualImpedance {
    VirtualImpedance::case_study()
}

fn default_gains() -> ControllerGains {
    ControllerGains::published()
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub frame: FrameSpec,
    pub network: NetworkSpec,
    #[serde(default = "default_inverter")]
    pub inverter: InverterParams,
    #[serde(default = "default_impedance")]
    pub virtual_impedance: VirtualImpedance,
    #[serde(default = "default_gains")]
    pub controller: ControllerGains,
    #[serde(default)]
    pub tuning: TuningSpec,
    #[serde(default)]
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
}

/// Validated domain objects read from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub scenario: Scenario,
    pub tuning: TuningSpec,
    pub synthesis: SynthesisConfig,
}

impl ScenarioFile {
    /// Checks every block and collects all problems found.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.frame.omega_s > 0.0) {
            errs.push(format!("frame.omega_s must be positive, got {}", self.frame.omega_s));
        }
        match assemble_network(self.network.bus_count, self.network.lines.clone()) {
            Ok(net) => errs.extend(validate_network(&net).iter().map(|d| format!("network: {d}"))),
            Err(e) => errs.push(format!("network: {e}")),
        }
        if let Err(e) = self.inverter.validate() {
            errs.push(format!("inverter: {e}"));
        }
        if let Err(e) = self.virtual_impedance.validate() {
            errs.push(format!("virtual_impedance: {e}"));
        }
        if let Err(e) = self.tuning.validate() {
            errs.push(format!("tuning: {e}"));
        }
        let mut synth = self.synthesis.clone();
        synth.spec = self.tuning;
        if let Err(e) = synth.validate() {
            errs.push(format!("synthesis: {e}"));
        }
        if errs.is_empty() {
            if let Err(e) = self.to_scenario().validate() {
                errs.push(e.to_string());
            }
        }
        errs
    }

    fn to_scenario(&self) -> Scenario {
        Scenario {
            frame: SyncFrame::new(self.frame.omega_s).unwrap_or_default(),
            bus_count: self.network.bus_count,
            lines: self.network.lines.clone(),
            inverter: self.inverter,
            impedance: self.virtual_impedance,
            gains: self.controller.clone(),
            buses: self.buses.clone(),
            events: self.events.clone(),
            t_end: self.simulation.t_end,
            dt: self.simulation.dt,
            record_stride: self.simulation.record_stride,
            initial: self.simulation.initial,
        }
    }

    pub fn into_bundle(self) -> Result<ScenarioBundle, ConfigError> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let scenario = self.to_scenario();
        let mut synthesis = self.synthesis;
        synthesis.spec = self.tuning;
        Ok(ScenarioBundle { scenario, tuning: self.tuning, synthesis })
    }

    pub fn from_bundle(b: &ScenarioBundle) -> Self {
        let s = &b.scenario;
        ScenarioFile {
            frame: FrameSpec { omega_s: s.frame.omega_s() },
            network: NetworkSpec { bus_count: s.bus_count, lines: s.lines.clone() },
            inverter: s.inverter,
            virtual_impedance: s.impedance,
            controller: s.gains.clone(),
            tuning: b.tuning,
            buses: s.buses.clone(),
            events: s.events.clone(),
            simulation: SimulationSpec { t_end: s.t_end, dt: s.dt, record_stride: s.record_stride, initial: s.initial },
            synthesis: b.synthesis.clone(),
        }
    }
}

/// Parses without validating. Whitespace-only input reads as `{}`.
pub fn parse_file_text(text: &str, path: &str) -> Result<ScenarioFile, ConfigError> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn parse_scenario_str(text: &str, path: &str) -> Result<ScenarioBundle, ConfigError> {
    parse_file_text(text, path)?.into_bundle()
}

pub fn parse_scenario(path: &std::path::Path) -> Result<ScenarioBundle, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
    parse_scenario_str(&text, &shown)
}

pub fn to_json(bundle: &ScenarioBundle) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_bundle(bundle)).expect("scenario serializes")
}

/// Nominal DQ voltage magnitude used by the case study (311 V peak).
pub const V_NOMINAL: f64 = 380.9;

/// The 4-bus case-study network: inverters at buses 1 and 4, loads at 2 and 3.
pub fn case_study_lines() -> Vec<Line> {
    vec![
        Line { from_bus: 1, to_bus: 2, sections: vec![LineSection::series(0.1, 0.6e-3)] },
        Line { from_bus: 2, to_bus: 3, sections: vec![LineSection::series(0.1, 5e-3)] },
        Line { from_bus: 3, to_bus: 4, sections: vec![LineSection::series(0.1, 0.6e-3)] },
    ]
}

/// Load step at bus 2 (t = 1 s) and load drop at bus 3 (t = 3 s).
pub fn case_study() -> ScenarioFile {
    let v_ref = DQPair::new(V_NOMINAL, 0.0);
    let static_load = LoadElement { p_rated: 3000.0, q_rated: 500.0, connected: true };
    let switched = |on: bool| LoadElement { p_rated: 4500.0, q_rated: 0.0, connected: on };
    let load = |on: bool| {
        BusSpec::Load(LoadBus { v_nom: V_NOMINAL, c_shunt: 10e-6, elements: vec![static_load, switched(on)] })
    };
    ScenarioFile {
        frame: FrameSpec::default(),
        network: NetworkSpec { bus_count: 4, lines: case_study_lines() },
        inverter: default_inverter(),
        virtual_impedance: default_impedance(),
        controller: default_gains(),
        tuning: TuningSpec::default(),
        buses: vec![
            BusSpec::Inverter(InverterBus { v_ref, gains: None }),
            load(false),
            load(true),
            BusSpec::Inverter(InverterBus { v_ref, gains: None }),
        ],
        events: vec![
            Event { time: 1.0, kind: EventKind::LoadOn { bus: 2, element: 1 } },
            Event { time: 3.0, kind: EventKind::LoadOff { bus: 3, element: 1 } },
        ],
        simulation: SimulationSpec::default(),
        synthesis: SynthesisConfig::default(),
    }
}

/// Case-study network with a third inverter joining next to bus 4 at t = 2 s.
pub fn plug_and_play() -> ScenarioFile {
    let mut f = case_study();
    f.events = vec![Event {
        time: 2.0,
        kind: EventKind::PlugIn {
            bus: 4,
            connector: Default::default(),
            v_ref: DQPair::new(V_NOMINAL, 0.0),
            gains: None,
        },
    }];
    f.simulation.t_end = 4.5;
    f
}

/// One inverter feeding a static load over a short line.
pub fn single_inverter() -> ScenarioFile {
    let mut f = case_study();
    f.network = NetworkSpec { bus_count: 2, lines: vec![Line::lumped(1, 2, 0.1, 0.6e-3)] };
    f.buses = vec![
        BusSpec::Inverter(InverterBus { v_ref: DQPair::new(V_NOMINAL, 0.0), gains: None }),
        BusSpec::Load(LoadBus {
            v_nom: V_NOMINAL,
            c_shunt: 10e-6,
            elements: vec![LoadElement { p_rated: 3000.0, q_rated: 500.0, connected: true }],
        }),
    ];
    f.events = Vec::new();
    f.simulation.t_end = 2.0;
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_names_network() {
        let err = parse_scenario_str("", "empty.json").unwrap_err();
        assert!(err.to_string().contains("missing field `network`"), "{err}");
    }

    #[test]
    fn defaults_fill_omitted_blocks() {
        let text = r#"{"network": {"bus_count": 2, "lines": [{"from_bus": 1, "to_bus": 2,
            "sections": [{"r": 0.1, "l": 0.0006}]}]},
            "buses": [{"kind": "inverter", "v_ref": {"d": 380.9, "q": 0.0}}, {"kind": "passive"}]}"#;
        let b = parse_scenario_str(text, "t.json").unwrap();
        assert_eq!(b.scenario.inverter, InverterParams::case_study());
        assert_eq!(b.scenario.gains, ControllerGains::published());
        assert_eq!(b.tuning, TuningSpec::default());
        assert_eq!(b.scenario.dt, 1e-5);
        assert_eq!(b.scenario.buses[1], BusSpec::Passive { c_shunt: 10e-6 });
    }

    #[test]
    fn negative_event_time_rejected() {
        let mut f = case_study();
        f.events[0].time = -1.0;
        let errs = f.validate();
        assert!(errs.iter().any(|e| e.contains("negative time")), "{errs:?}");
    }

    #[test]
    fn unknown_bus_rejected() {
        let mut f = case_study();
        f.events[0].kind = EventKind::LoadOn { bus: 9, element: 0 };
        assert!(f.validate().iter().any(|e| e.contains("unknown bus 9")));
    }

    #[test]
    fn zero_inductance_diagnostic() {
        let mut f = case_study();
        f.network.lines[1].sections[0].l = 0.0;
        assert!(f.validate().iter().any(|e| e.contains("nonpositive inductance")));
    }

    #[test]
    fn parse_error_has_position() {
        let err = parse_scenario_str("{\n  \"network\": [1,\n", "bad.json").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert!(line >= 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn round_trip_presets() {
        for f in [case_study(), plug_and_play(), single_inverter()] {
            let b = f.into_bundle().unwrap();
            let text = to_json(&b);
            let back = parse_scenario_str(&text, "rt.json").unwrap();
            assert_eq!(back, b);
        }
    }
}
