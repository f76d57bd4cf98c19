//! Line network graph, incidence matrices and the assembled line
//! state-space in the common DQ frame.
//!
//! Node ordering: node `j < bus_count` is bus `j + 1`; internal capacitor
//! nodes follow in enumeration order (line by line, section by section).
//! Edge ordering follows the same enumeration, each edge directed from the
//! line's `from_bus` side towards its `to_bus` side.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqframe::{rotation_j, SyncFrame};
use crate::linalg::kron;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular {0} matrix (zero entry on the diagonal)")]
    Singular(&'static str),
}

/// One RLGC subsection. `g` and `c` describe the capacitor node at the
/// section's right-hand end and are ignored for the last section of a line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSection {
    pub r: f64,
    pub l: f64,
    #[serde(default)]
    pub g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl LineSection {
    pub fn series(r: f64, l: f64) -> Self {
        Self { r, l, g: 0.0, c: None }
    }

    pub fn with_shunt(r: f64, l: f64, g: f64, c: f64) -> Self {
        Self { r, l, g, c: Some(c) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub sections: Vec<LineSection>,
}

impl Line {
    pub fn lumped(from_bus: usize, to_bus: usize, r: f64, l: f64) -> Self {
        Self { from_bus, to_bus, sections: vec![LineSection::series(r, l)] }
    }
}

/// One violated network invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn diag(code: &'static str, message: String) -> Diagnostic {
    Diagnostic { code, message }
}

/// Where an edge of the line graph came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeOrigin {
    pub line: usize,
    pub section: usize,
}

/// The line graph with its incidence matrix and diagonal parameter matrices.
///
/// Fields are public so that diagnostics can be run on hand-edited models;
/// use [`build_network`] to obtain a validated one.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub bus_count: usize,
    pub lines: Vec<Line>,
    /// `|N_L| × |E_L|` incidence, `+1` where an edge leaves a node.
    pub incidence: DMatrix<f64>,
    pub resistance: Vec<f64>,
    pub inductance: Vec<f64>,
    pub conductance: Vec<f64>,
    pub capacitance: Vec<f64>,
    pub edges: Vec<EdgeOrigin>,
}

impl NetworkModel {
    pub fn edge_count(&self) -> usize {
        self.resistance.len()
    }

    pub fn cap_count(&self) -> usize {
        self.capacitance.len()
    }

    pub fn node_count(&self) -> usize {
        self.bus_count + self.cap_count()
    }

    /// Bus rows `H_B` of the incidence matrix.
    pub fn h_bus(&self) -> DMatrix<f64> {
        self.incidence.rows(0, self.bus_count).into_owned()
    }

    /// Capacitor rows `H_C` of the incidence matrix.
    pub fn h_cap(&self) -> DMatrix<f64> {
        self.incidence.rows(self.bus_count, self.cap_count()).into_owned()
    }

    /// Dimension of the line state `[I^N; V^C]`.
    pub fn state_dim(&self) -> usize {
        2 * (self.edge_count() + self.cap_count())
    }
}

/// Builds the incidence and parameter matrices without checking parameter
/// signs. Structural problems that make the graph unbuildable (bad bus ids,
/// empty lines) are still reported as errors.
pub fn assemble_network(bus_count: usize, lines: Vec<Line>) -> Result<NetworkModel, NetworkError> {
    let mut structural = Vec::new();
    for (k, line) in lines.iter().enumerate() {
        for bus in [line.from_bus, line.to_bus] {
            if bus == 0 || bus > bus_count {
                structural.push(diag(
                    "unknown-bus",
                    format!("line {k} references bus {bus}, valid ids are 1..={bus_count}"),
                ));
            }
        }
        if line.sections.is_empty() {
            structural.push(diag("empty-line", format!("line {k} has no sections")));
        }
    }
    if !structural.is_empty() {
        return Err(NetworkError::Invalid(structural));
    }

    let edge_count: usize = lines.iter().map(|l| l.sections.len()).sum();
    let cap_count: usize = lines.iter().map(|l| l.sections.len() - 1).sum();
    let mut h = DMatrix::zeros(bus_count + cap_count, edge_count);
    let mut resistance = Vec::with_capacity(edge_count);
    let mut inductance = Vec::with_capacity(edge_count);
    let mut conductance = Vec::with_capacity(cap_count);
    let mut capacitance = Vec::with_capacity(cap_count);
    let mut edges = Vec::with_capacity(edge_count);

    let mut edge = 0;
    let mut next_cap = bus_count;
    for (li, line) in lines.iter().enumerate() {
        let n = line.sections.len();
        let mut left = line.from_bus - 1;
        for (k, sec) in line.sections.iter().enumerate() {
            let right = if k + 1 == n {
                line.to_bus - 1
            } else {
                let node = next_cap;
                next_cap += 1;
                conductance.push(sec.g);
                capacitance.push(sec.c.unwrap_or(0.0));
                node
            };
            h[(left, edge)] += 1.0;
            h[(right, edge)] -= 1.0;
            resistance.push(sec.r);
            inductance.push(sec.l);
            edges.push(EdgeOrigin { line: li, section: k });
            edge += 1;
            left = right;
        }
    }

    Ok(NetworkModel {
        bus_count,
        lines,
        incidence: h,
        resistance,
        inductance,
        conductance,
        capacitance,
        edges,
    })
}

/// Builds and validates the line network.
pub fn build_network(bus_count: usize, lines: Vec<Line>) -> Result<NetworkModel, NetworkError> {
    let net = assemble_network(bus_count, lines)?;
    let report = validate_network(&net);
    if report.is_empty() {
        Ok(net)
    } else {
        Err(NetworkError::Invalid(report))
    }
}

/// Lists every violated invariant; an empty list means the model is valid.
pub fn validate_network(net: &NetworkModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let (rows, cols) = net.incidence.shape();
    if rows != net.node_count() || cols != net.edge_count() {
        out.push(diag(
            "incidence-shape",
            format!("incidence is {rows}×{cols}, expected {}×{}", net.node_count(), net.edge_count()),
        ));
        return out;
    }
    for (k, line) in net.lines.iter().enumerate() {
        if line.from_bus == line.to_bus {
            out.push(diag("self-loop", format!("line {k} connects bus {} to itself", line.from_bus)));
        }
        if line.sections.is_empty() {
            out.push(diag("empty-line", format!("line {k} has no sections")));
        }
        let n = line.sections.len();
        for (s, sec) in line.sections.iter().enumerate() {
            if !(sec.r > 0.0) {
                out.push(diag("nonpositive resistance", format!("line {k} section {s}: r = {}", sec.r)));
            }
            if !(sec.l > 0.0) {
                out.push(diag("nonpositive inductance", format!("line {k} section {s}: l = {}", sec.l)));
            }
            if s + 1 < n {
                if !(sec.g >= 0.0) {
                    out.push(diag("negative conductance", format!("line {k} section {s}: g = {}", sec.g)));
                }
                match sec.c {
                    Some(c) if c > 0.0 => {}
                    other => out.push(diag(
                        "nonpositive capacitance",
                        format!("line {k} section {s}: internal node needs c > 0, got {other:?}"),
                    )),
                }
            }
        }
    }
    for z in 0..cols {
        let col = net.incidence.column(z);
        let plus = col.iter().filter(|&&v| v == 1.0).count();
        let minus = col.iter().filter(|&&v| v == -1.0).count();
        let other = col.iter().filter(|&&v| v != 0.0 && v != 1.0 && v != -1.0).count();
        if col.sum() != 0.0 {
            out.push(diag("incidence column sum ≠ 0", format!("edge {z}: column sums to {}", col.sum())));
        }
        if plus != 1 || minus != 1 || other != 0 {
            out.push(diag(
                "incidence column pattern",
                format!("edge {z}: {plus} entries +1, {minus} entries −1, {other} others"),
            ));
        }
    }
    // Parameter ordering must match the enumeration of edges and capacitor nodes.
    if let Ok(reference) = assemble_network(net.bus_count, net.lines.clone()) {
        if reference.incidence != net.incidence {
            out.push(diag("incidence mismatch", "incidence differs from the line enumeration".into()));
        }
        if reference.resistance != net.resistance || reference.inductance != net.inductance {
            out.push(diag("edge ordering", "series parameters do not follow edge order".into()));
        }
        if reference.conductance != net.conductance || reference.capacitance != net.capacitance {
            out.push(diag("node ordering", "shunt parameters do not follow capacitor order".into()));
        }
    }
    out
}

/// Linear line dynamics with input `V_DQ` (stacked bus voltages) and output
/// `I_DQ` (stacked current injections). State layout `[I^N (2|E_L|); V^C (2|N_C|)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub edge_count: usize,
    pub cap_count: usize,
}

impl LineStateSpace {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

pub fn assemble_line_statespace(net: &NetworkModel, frame: &SyncFrame) -> Result<LineStateSpace, NetworkError> {
    if net.inductance.iter().any(|&l| l == 0.0) {
        return Err(NetworkError::Singular("inductance"));
    }
    if net.capacitance.iter().any(|&c| c == 0.0) {
        return Err(NetworkError::Singular("capacitance"));
    }
    let ne = net.edge_count();
    let nc = net.cap_count();
    let nb = net.bus_count;
    let w = frame.omega_s();
    let j = DMatrix::from_row_slice(2, 2, rotation_j().transpose().as_slice());
    let i2 = DMatrix::<f64>::identity(2, 2);
    let hb = net.h_bus();
    let hc = net.h_cap();
    let l_inv = DMatrix::from_diagonal(&DVector::from_iterator(ne, net.inductance.iter().map(|l| 1.0 / l)));
    let c_inv = DMatrix::from_diagonal(&DVector::from_iterator(nc, net.capacitance.iter().map(|c| 1.0 / c)));
    let r = DMatrix::from_diagonal(&DVector::from_vec(net.resistance.clone()));
    let g = DMatrix::from_diagonal(&DVector::from_vec(net.conductance.clone()));

    let n = 2 * (ne + nc);
    let mut a = DMatrix::zeros(n, n);
    let e2 = 2 * ne;
    let c2 = 2 * nc;
    // L İ = −R I + ω L J I + H_Cᵀ V^C + H_Bᵀ V
    a.view_mut((0, 0), (e2, e2)).copy_from(
        &(kron(&(-&l_inv * &r), &i2) + kron(&DMatrix::identity(ne, ne), &j) * w),
    );
    if nc > 0 {
        a.view_mut((0, e2), (e2, c2)).copy_from(&kron(&(&l_inv * hc.transpose()), &i2));
        // C V̇^C = −G V^C + ω C J V^C − H_C I   (current into a node counts positive)
        a.view_mut((e2, 0), (c2, e2)).copy_from(&kron(&(-&c_inv * &hc), &i2));
        a.view_mut((e2, e2), (c2, c2)).copy_from(
            &(kron(&(-&c_inv * &g), &i2) + kron(&DMatrix::identity(nc, nc), &j) * w),
        );
    }
    let mut b = DMatrix::zeros(n, 2 * nb);
    b.view_mut((0, 0), (e2, 2 * nb)).copy_from(&kron(&(&l_inv * hb.transpose()), &i2));
    let mut c = DMatrix::zeros(2 * nb, n);
    c.view_mut((0, 0), (2 * nb, e2)).copy_from(&kron(&hb, &i2));
    Ok(LineStateSpace { a, b, c, edge_count: ne, cap_count: nc })
}

/// Stored magnetic plus electric energy of the deviation `state − state_eq`.
pub fn line_energy(net: &NetworkModel, state: &[f64], state_eq: &[f64]) -> Result<f64, NetworkError> {
    let n = net.state_dim();
    for len in [state.len(), state_eq.len()] {
        if len != n {
            return Err(NetworkError::Dimension { expected: n, got: len });
        }
    }
    let ne = net.edge_count();
    let mut e = 0.0;
    for (k, l) in net.inductance.iter().enumerate() {
        let dd = state[2 * k] - state_eq[2 * k];
        let dq = state[2 * k + 1] - state_eq[2 * k + 1];
        e += 0.5 * l * (dd * dd + dq * dq);
    }
    for (k, c) in net.capacitance.iter().enumerate() {
        let o = 2 * (ne + k);
        let dd = state[o] - state_eq[o];
        let dq = state[o + 1] - state_eq[o + 1];
        e += 0.5 * c * (dd * dd + dq * dq);
    }
    Ok(e)
}

/// Ohmic dissipation `(x−x*)ᵀ diag(R⊗I₂, G⊗I₂)(x−x*)` of a line-state deviation.
pub fn line_dissipation(net: &NetworkModel, state: &[f64], state_eq: &[f64]) -> f64 {
    let ne = net.edge_count();
    let mut p = 0.0;
    for (k, r) in net.resistance.iter().enumerate() {
        let dd = state[2 * k] - state_eq[2 * k];
        let dq = state[2 * k + 1] - state_eq[2 * k + 1];
        p += r * (dd * dd + dq * dq);
    }
    for (k, g) in net.conductance.iter().enumerate() {
        let o = 2 * (ne + k);
        let dd = state[o] - state_eq[o];
        let dq = state[o + 1] - state_eq[o + 1];
        p += g * (dd * dd + dq * dq);
    }
    p
}
