//! Report artifacts and the hashed file manifest written next to them.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::certify::CertificationReport;
use crate::inverter::ControllerGains;
use crate::sim::{EventRecord, TimeSeries};
use crate::synthesize::{SynthesisConfig, SynthesisResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A named file body waiting to be written.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
        bytes.push(b'\n');
        Self { name: name.to_string(), bytes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub size: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Writes every artifact into `dir` (created if needed) followed by
/// `manifest.json` listing their sizes and hashes.
pub fn write_outputs(dir: &Path, artifacts: &[Artifact]) -> std::io::Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
        files.push(ManifestEntry { name: a.name.clone(), size: a.bytes.len() as u64, sha256: sha256_hex(&a.bytes) });
    }
    let manifest = Manifest { files };
    let m = Artifact::json("manifest.json", &manifest);
    std::fs::write(dir.join(&m.name), &m.bytes)?;
    Ok(manifest)
}

pub fn certificate_artifact(report: &CertificationReport) -> Artifact {
    Artifact::json("certificate.json", report)
}

#[derive(Serialize)]
struct GainsDoc<'a> {
    gains: &'a ControllerGains,
    feasible: bool,
    start_index: usize,
    objective: f64,
    evaluations: usize,
    report: &'a CertificationReport,
    config: &'a SynthesisConfig,
    spec: &'a crate::certify::TuningSpec,
}

pub fn gains_artifact(result: &SynthesisResult, cfg: &SynthesisConfig) -> Artifact {
    Artifact::json(
        "gains.json",
        &GainsDoc {
            gains: &result.gains,
            feasible: result.feasible,
            start_index: result.start_index,
            objective: result.objective,
            evaluations: result.evaluations,
            report: &result.report,
            config: cfg,
            spec: &cfg.spec,
        },
    )
}

#[derive(Serialize)]
struct RunDoc<'a> {
    scenario_sha256: String,
    dt: f64,
    t_end: f64,
    samples: usize,
    events: &'a [EventRecord],
}

/// `timeseries.csv` and its `run.json` sidecar.
pub fn simulation_artifacts(ts: &TimeSeries, scenario_text: &[u8]) -> Vec<Artifact> {
    let mut csv = Vec::new();
    ts.write_csv(&mut csv).expect("writing to memory");
    let run = RunDoc {
        scenario_sha256: sha256_hex(scenario_text),
        dt: ts.dt,
        t_end: ts.samples.last().map_or(0.0, |s| s.t),
        samples: ts.samples.len(),
        events: &ts.events,
    };
    vec![Artifact { name: "timeseries.csv".into(), bytes: csv }, Artifact::json("run.json", &run)]
}
