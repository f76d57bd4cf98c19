use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{BusSample, BusSpec, GridState, LoadElement, Scenario, SimError};
use crate::dqframe::{rotation_j, DQPair, SyncFrame};
use crate::inverter::{augmented_plant, close_loop, ClosedLoopBus, ControllerGains};
use crate::network::{assemble_line_statespace, build_network, LineStateSpace, NetworkModel};

/// Decay rate given to the state of a disconnected load inductor so that
/// the composite matrix stays invertible. The state is held at zero.
const OFF_DECAY: f64 = 100.0;

#[derive(Debug, Clone)]
pub enum BusKindModel {
    Inverter { clb: ClosedLoopBus, gains: ControllerGains, v_ref: DQPair },
    /// `inductor_states[k]` is the local offset of element `k`'s inductor current.
    Load { elements: Vec<LoadElement>, inductor_states: Vec<Option<usize>>, c_shunt: f64, v_nom: f64 },
    Passive { c_shunt: f64 },
}

/// Local model of one bus: `ẋ = A x + B w + f`, `v = C x`.
#[derive(Debug, Clone)]
pub struct BusModel {
    pub id: usize,
    pub kind: BusKindModel,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Physical storage `½ xᵀ E x` of RLC buses.
    pub energy: Option<DMatrix<f64>>,
}

impl BusModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_inverter(&self) -> bool {
        matches!(self.kind, BusKindModel::Inverter { .. })
    }
}

#[derive(Debug, Clone)]
pub struct InterconnectedSystem {
    pub frame: SyncFrame,
    pub network: NetworkModel,
    pub line: LineStateSpace,
    pub buses: Vec<BusModel>,
    /// Global offset of each bus's local state.
    pub offsets: Vec<usize>,
    pub a: DMatrix<f64>,
    pub forcing: DVector<f64>,
}

fn j_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, rotation_j().transpose().as_slice())
}

fn load_model(load: &super::LoadBus, omega: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<Option<usize>>) {
    let j = j_matrix();
    let i2 = DMatrix::<f64>::identity(2, 2);
    let mut inductor_states = Vec::new();
    let mut n = 2;
    for e in &load.elements {
        if e.inductance(load.v_nom, omega).is_some() {
            inductor_states.push(Some(n));
            n += 2;
        } else {
            inductor_states.push(None);
        }
    }
    let c = load.c_shunt;
    let g_on: f64 = load.elements.iter().filter(|e| e.connected).map(|e| e.conductance(load.v_nom)).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut energy = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (2, 2)).copy_from(&(&i2 * (-g_on / c) + &j * omega));
    energy.view_mut((0, 0), (2, 2)).copy_from(&(&i2 * c));
    for (e, slot) in load.elements.iter().zip(&inductor_states) {
        let Some(k) = *slot else { continue };
        let l = e.inductance(load.v_nom, omega).expect("slot implies inductance");
        if e.connected {
            // c v̇ = … − i_k,   l i̇_k = v + ω l J i_k
            a.view_mut((0, k), (2, 2)).copy_from(&(&i2 * (-1.0 / c)));
            a.view_mut((k, 0), (2, 2)).copy_from(&(&i2 * (1.0 / l)));
            a.view_mut((k, k), (2, 2)).copy_from(&(&j * omega));
            energy.view_mut((k, k), (2, 2)).copy_from(&(&i2 * l));
        } else {
            a.view_mut((k, k), (2, 2)).copy_from(&(&i2 * -OFF_DECAY));
        }
    }
    let mut b = DMatrix::zeros(n, 2);
    b.view_mut((0, 0), (2, 2)).copy_from(&(&i2 * (1.0 / c)));
    let mut cm = DMatrix::zeros(2, n);
    cm.view_mut((0, 0), (2, 2)).copy_from(&i2);
    (a, b, cm, energy, inductor_states)
}

fn bus_model(id: usize, spec: &BusSpec, scenario: &Scenario) -> Result<BusModel, SimError> {
    let omega = scenario.frame.omega_s();
    match spec {
        BusSpec::Inverter(inv) => {
            let plant = augmented_plant(&scenario.inverter, &scenario.impedance, &scenario.frame)
                .map_err(|e| SimError::Invalid(format!("bus {id}: {e}")))?;
            let gains = inv.gains.clone().unwrap_or_else(|| scenario.gains.clone());
            let clb = close_loop(&plant, &gains);
            let f = &clb.b_ref * DVector::from_column_slice(&inv.v_ref.to_array());
            Ok(BusModel {
                id,
                a: clb.a.clone(),
                b: clb.b.clone(),
                c: clb.c.clone(),
                f,
                energy: None,
                kind: BusKindModel::Inverter { clb, gains, v_ref: inv.v_ref },
            })
        }
        BusSpec::Load(load) => {
            let (a, b, c, energy, inductor_states) = load_model(load, omega);
            let n = a.nrows();
            Ok(BusModel {
                id,
                a,
                b,
                c,
                f: DVector::zeros(n),
                energy: Some(energy),
                kind: BusKindModel::Load {
                    elements: load.elements.clone(),
                    inductor_states,
                    c_shunt: load.c_shunt,
                    v_nom: load.v_nom,
                },
            })
        }
        BusSpec::Passive { c_shunt } => {
            let i2 = DMatrix::<f64>::identity(2, 2);
            Ok(BusModel {
                id,
                a: j_matrix() * omega,
                b: &i2 / *c_shunt,
                c: i2.clone(),
                f: DVector::zeros(2),
                energy: Some(&i2 * *c_shunt),
                kind: BusKindModel::Passive { c_shunt: *c_shunt },
            })
        }
    }
}

pub(crate) fn build_from_grid(scenario: &Scenario, grid: &GridState) -> Result<InterconnectedSystem, SimError> {
    let network = build_network(grid.bus_count, grid.lines.clone())?;
    let line = assemble_line_statespace(&network, &scenario.frame)?;
    let buses = grid
        .buses
        .iter()
        .enumerate()
        .map(|(k, spec)| bus_model(k + 1, spec, scenario))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(scenario.frame, network, line, buses))
}

fn assemble(frame: SyncFrame, network: NetworkModel, line: LineStateSpace, buses: Vec<BusModel>) -> InterconnectedSystem {
    let nn = line.state_dim();
    let mut offsets = Vec::with_capacity(buses.len());
    let mut n = nn;
    for b in &buses {
        offsets.push(n);
        n += b.dim();
    }
    let mut a = DMatrix::zeros(n, n);
    let mut forcing = DVector::zeros(n);
    a.view_mut((0, 0), (nn, nn)).copy_from(&line.a);
    for (j, (bus, &off)) in buses.iter().zip(&offsets).enumerate() {
        let nb = bus.dim();
        let b_net = line.b.columns(2 * j, 2);
        let c_net = line.c.rows(2 * j, 2);
        a.view_mut((0, off), (nn, nb)).copy_from(&(b_net * &bus.c));
        a.view_mut((off, 0), (nb, nn)).copy_from(&(-(&bus.b * c_net)));
        a.view_mut((off, off), (nb, nb)).copy_from(&bus.a);
        forcing.rows_mut(off, nb).copy_from(&bus.f);
    }
    InterconnectedSystem { frame, network, line, buses, offsets, a, forcing }
}

/// Builds the composite model for the scenario's initial configuration.
pub fn build_closed_system(scenario: &Scenario) -> Result<InterconnectedSystem, SimError> {
    scenario.validate()?;
    let grid = GridState { bus_count: scenario.bus_count, lines: scenario.lines.clone(), buses: scenario.buses.clone() };
    let sys = build_from_grid(scenario, &grid)?;
    for bus in &sys.buses {
        if let BusKindModel::Inverter { clb, .. } = &bus.kind {
            if crate::linalg::spectral_abscissa(&clb.a) >= 0.0 {
                log::warn!("bus {}: closed loop is not Hurwitz", bus.id);
            }
        }
    }
    Ok(sys)
}

impl InterconnectedSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn derivative(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.forcing
    }

    /// Steady state of the current configuration.
    pub fn equilibrium(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&(-&self.forcing))
    }

    pub fn bus_state<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        &x[self.offsets[k]..self.offsets[k] + self.buses[k].dim()]
    }

    pub fn line_state<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.line.state_dim()]
    }

    /// Current leaving each bus into the network, in bus order.
    pub fn injections(&self, x: &[f64]) -> Vec<DQPair> {
        let xn = DVector::from_column_slice(self.line_state(x));
        let inj = &self.line.c * xn;
        (0..self.buses.len()).map(|j| DQPair::new(inj[2 * j], inj[2 * j + 1])).collect()
    }

    pub fn voltages(&self, x: &[f64]) -> Vec<DQPair> {
        self.buses
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let v = &b.c * DVector::from_column_slice(self.bus_state(x, k));
                DQPair::new(v[0], v[1])
            })
            .collect()
    }

    pub fn bus_samples(&self, x: &DVector<f64>) -> Vec<BusSample> {
        let xs = x.as_slice();
        let inj = self.injections(xs);
        self.voltages(xs)
            .into_iter()
            .zip(inj)
            .zip(&self.buses)
            .map(|((v, i), b)| BusSample { bus: b.id, v, i: if b.is_inverter() { i } else { -i } })
            .collect()
    }

    pub fn describe_state(&self, k: usize) -> String {
        if k < self.line.state_dim() {
            let edge = k / 2;
            if edge < self.line.edge_count {
                let o = self.network.edges[edge];
                let line = &self.network.lines[o.line];
                return format!("line {}-{} current", line.from_bus, line.to_bus);
            }
            return "line capacitor voltage".into();
        }
        let pos = self.offsets.iter().rposition(|&o| o <= k).unwrap_or(0);
        format!("bus {}", self.buses[pos].id)
    }

    /// Global state indices of a load element's inductor current.
    pub fn load_element_states(&self, bus: usize, element: usize) -> Option<Range<usize>> {
        let k = self.buses.iter().position(|b| b.id == bus)?;
        match &self.buses[k].kind {
            BusKindModel::Load { inductor_states, .. } => {
                let local = (*inductor_states.get(element)?)?;
                Some(self.offsets[k] + local..self.offsets[k] + local + 2)
            }
            _ => None,
        }
    }
}

/// Carries a state across a reconfiguration. Lines and buses are only ever
/// appended, so existing edges, capacitor nodes and buses keep their
/// indices; new inverter buses start at their isolated equilibrium and new
/// connector currents at zero.
pub(crate) fn remap_state(
    old: &InterconnectedSystem,
    new: &InterconnectedSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, SimError> {
    let mut y = DVector::zeros(new.dim());
    let (oe, ne) = (2 * old.line.edge_count, 2 * new.line.edge_count);
    let oc = 2 * old.line.cap_count;
    y.rows_mut(0, oe).copy_from(&x.rows(0, oe));
    y.rows_mut(ne, oc).copy_from(&x.rows(oe, oc));
    for (k, bus) in new.buses.iter().enumerate() {
        let off = new.offsets[k];
        if let Some(j) = old.buses.iter().position(|b| b.id == bus.id) {
            y.rows_mut(off, bus.dim()).copy_from(&x.rows(old.offsets[j], old.buses[j].dim()));
        } else if let BusKindModel::Inverter { clb, v_ref, .. } = &bus.kind {
            let eq = clb.equilibrium(DQPair::ZERO, *v_ref)
                .ok_or(SimError::NoEquilibrium(t))?;
            y.rows_mut(off, bus.dim()).copy_from(&eq);
        }
    }
    Ok(y)
}
