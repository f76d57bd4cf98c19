//! LC-filtered grid-forming inverter: the 4-state filter plant, its
//! augmentation with the setpoint integrator and virtual impedance, and the
//! state-feedback closed loop `u = −K·x̃ − M·w`.
//!
//! Augmented state layout: `x̃ = [i_iDQ; v_DQ; ζ_DQ]`. The disturbance input is
//! `w = −i_DQ` (current drawn by the network) and the output is `z = v_DQ`.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqframe::{rotation_j, DQPair, SyncFrame};
use crate::lti::LtiSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverterError {
    #[error("filter parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("virtual impedance needs r_v > 0 and x_v ≥ 0, got ({r_v}, {x_v})")]
    VirtualImpedance { r_v: f64, x_v: f64 },
    #[error("gain matrix {name} must be {rows}×{cols}")]
    GainShape { name: &'static str, rows: usize, cols: usize },
    #[error("gain matrix {0} has non-finite entries")]
    NonFinite(&'static str),
}

/// LC filter between the switching bridge and the bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverterParams {
    pub r_f: f64,
    pub l_f: f64,
    pub g_f: f64,
    pub c_f: f64,
}

impl InverterParams {
    /// Filter of the published case study: 0.1 Ω, 8 mH, 1/350 S, 50 µF.
    pub fn case_study() -> Self {
        Self { r_f: 0.1, l_f: 8e-3, g_f: 1.0 / 350.0, c_f: 50e-6 }
    }

    pub fn validate(&self) -> Result<(), InverterError> {
        for (name, value) in [("r_f", self.r_f), ("l_f", self.l_f), ("g_f", self.g_f), ("c_f", self.c_f)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(InverterError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

impl Default for InverterParams {
    fn default() -> Self {
        Self::case_study()
    }
}

/// `Z = R_V·I₂ + X_V·J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualImpedance {
    pub r_v: f64,
    pub x_v: f64,
}

impl VirtualImpedance {
    pub fn case_study() -> Self {
        Self { r_v: 0.5, x_v: 1.0 }
    }

    /// Zero impedance (pure integral action); not admissible for
    /// certification but useful as a reference plant.
    pub fn zero() -> Self {
        Self { r_v: 0.0, x_v: 0.0 }
    }

    pub fn validate(&self) -> Result<(), InverterError> {
        if self.r_v > 0.0 && self.x_v >= 0.0 && self.r_v.is_finite() && self.x_v.is_finite() {
            Ok(())
        } else {
            Err(InverterError::VirtualImpedance { r_v: self.r_v, x_v: self.x_v })
        }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.r_v + rotation_j() * self.x_v
    }

    /// `Z·i`.
    pub fn apply(&self, i: DQPair) -> DQPair {
        i * self.r_v + i.rotate_j() * self.x_v
    }
}

impl Default for VirtualImpedance {
    fn default() -> Self {
        Self::case_study()
    }
}

/// The 4-state filter model `ẋ = 𝒜x + ℬ_u u + ℬ_w w`, `z = 𝒞x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPlant {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn put2(m: &mut DMatrix<f64>, row: usize, col: usize, block: &Matrix2<f64>) {
    for i in 0..2 {
        for j in 0..2 {
            m[(row + i, col + j)] = block[(i, j)];
        }
    }
}

pub fn assemble_plant(p: &InverterParams, frame: &SyncFrame) -> Result<FilterPlant, InverterError> {
    p.validate()?;
    let w = frame.omega_s();
    let j = rotation_j();
    let i2 = Matrix2::identity();
    let mut a = DMatrix::zeros(4, 4);
    put2(&mut a, 0, 0, &(i2 * (-p.r_f / p.l_f) + j * w));
    put2(&mut a, 0, 2, &(i2 * (-1.0 / p.l_f)));
    put2(&mut a, 2, 0, &(i2 * (1.0 / p.c_f)));
    put2(&mut a, 2, 2, &(i2 * (-p.g_f / p.c_f) + j * w));
    let mut b_u = DMatrix::zeros(4, 2);
    put2(&mut b_u, 0, 0, &(i2 / p.l_f));
    let mut b_w = DMatrix::zeros(4, 2);
    put2(&mut b_w, 2, 0, &(i2 / p.c_f));
    let mut c = DMatrix::zeros(2, 4);
    put2(&mut c, 0, 2, &i2);
    Ok(FilterPlant { a, b_u, b_w, c })
}

impl FilterPlant {
    /// The open filter as a `w → z` system (u held at zero).
    pub fn disturbance_channel(&self) -> LtiSystem {
        LtiSystem::new(self.a.clone(), self.b_w.clone(), self.c.clone(), DMatrix::zeros(2, 2))
    }
}

/// Filter plus setpoint integrator `ζ̇ = v − v_ref + Z·i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub b_ref: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub impedance: VirtualImpedance,
}

/// Augments the filter with the integrator. `Z` enters the ζ-rows of `B̃_w`
/// as `−Z` because `w = −i_DQ`.
pub fn augment(plant: &FilterPlant, zv: &VirtualImpedance) -> AugmentedPlant {
    let i2 = Matrix2::identity();
    let mut a = DMatrix::zeros(6, 6);
    a.view_mut((0, 0), (4, 4)).copy_from(&plant.a);
    put2(&mut a, 4, 2, &i2);
    let mut b_u = DMatrix::zeros(6, 2);
    b_u.view_mut((0, 0), (4, 2)).copy_from(&plant.b_u);
    let mut b_w = DMatrix::zeros(6, 2);
    b_w.view_mut((0, 0), (4, 2)).copy_from(&plant.b_w);
    put2(&mut b_w, 4, 0, &(-zv.matrix()));
    let mut b_ref = DMatrix::zeros(6, 2);
    put2(&mut b_ref, 4, 0, &(-i2));
    let mut c = DMatrix::zeros(2, 6);
    c.view_mut((0, 0), (2, 4)).copy_from(&plant.c);
    AugmentedPlant { a, b_u, b_w, b_ref, c, impedance: *zv }
}

/// Convenience: filter + augmentation in one call.
pub fn augmented_plant(
    p: &InverterParams,
    zv: &VirtualImpedance,
    frame: &SyncFrame,
) -> Result<AugmentedPlant, InverterError> {
    zv.validate()?;
    Ok(augment(&assemble_plant(p, frame)?, zv))
}

/// State feedback `u = −K·x̃ − M·w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainsRepr", into = "GainsRepr")]
pub struct ControllerGains {
    pub k: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GainsRepr {
    k: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &'static str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>, InverterError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(InverterError::GainShape { name, rows: nr, cols: nc });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(InverterError::NonFinite(name));
    }
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}

impl TryFrom<GainsRepr> for ControllerGains {
    type Error = InverterError;
    fn try_from(r: GainsRepr) -> Result<Self, Self::Error> {
        Ok(Self { k: from_rows("K", &r.k, 2, 6)?, m: from_rows("M", &r.m, 2, 2)? })
    }
}

impl From<ControllerGains> for GainsRepr {
    fn from(g: ControllerGains) -> Self {
        GainsRepr { k: rows_of(&g.k), m: rows_of(&g.m) }
    }
}

impl ControllerGains {
    pub fn new(k: DMatrix<f64>, m: DMatrix<f64>) -> Result<Self, InverterError> {
        if k.shape() != (2, 6) {
            return Err(InverterError::GainShape { name: "K", rows: 2, cols: 6 });
        }
        if m.shape() != (2, 2) {
            return Err(InverterError::GainShape { name: "M", rows: 2, cols: 2 });
        }
        if k.iter().chain(m.iter()).any(|v| !v.is_finite()) {
            return Err(InverterError::NonFinite("K/M"));
        }
        Ok(Self { k, m })
    }

    pub fn zero() -> Self {
        Self { k: DMatrix::zeros(2, 6), m: DMatrix::zeros(2, 2) }
    }

    /// The published controller for the case-study filter and tuning spec.
    pub fn published() -> Self {
        Self {
            k: DMatrix::from_row_slice(
                2,
                6,
                &[124.0, 1.54, 10.2, -0.94, 57.2, -16.8, -1.09, 124.0, 1.20, 9.68, 16.7, 57.4],
            ),
            m: DMatrix::from_row_slice(2, 2, &[111.0, -0.07, 0.06, 112.0]),
        }
    }

    /// All 16 gains, K row-major then M row-major.
    pub fn to_vec(&self) -> Vec<f64> {
        self.k.transpose().iter().chain(self.m.transpose().iter()).copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 16, "expected 12 K entries and 4 M entries");
        Self {
            k: DMatrix::from_row_slice(2, 6, &v[..12]),
            m: DMatrix::from_row_slice(2, 2, &v[12..]),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.k.iter().chain(self.m.iter()).fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Closed-loop bus model `ẋ̃ = A_c x̃ + B_c w + B̃_ref v_ref`, `z = C_c x̃ + D_c w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopBus {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub b_ref: DMatrix<f64>,
    pub impedance: VirtualImpedance,
}

/// `A_c = Ã − B̃_u K`, `B_c = B̃_w − B̃_u M`, `C_c = C̃`, `D_c = 0`
/// (the feedthrough terms of the augmented plant vanish).
pub fn close_loop(plant: &AugmentedPlant, gains: &ControllerGains) -> ClosedLoopBus {
    ClosedLoopBus {
        a: &plant.a - &plant.b_u * &gains.k,
        b: &plant.b_w - &plant.b_u * &gains.m,
        c: plant.c.clone(),
        d: DMatrix::zeros(2, 2),
        b_ref: plant.b_ref.clone(),
        impedance: plant.impedance,
    }
}

impl ClosedLoopBus {
    /// The `w → z` channel used by every passivity check.
    pub fn lti(&self) -> LtiSystem {
        LtiSystem::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone())
    }

    /// Equilibrium state for constant `w` and `v_ref`, or `None` if `A_c` is singular.
    pub fn equilibrium(&self, w: DQPair, v_ref: DQPair) -> Option<DMatrix<f64>> {
        let rhs = -(&self.b * DMatrix::from_column_slice(2, 1, &w.to_array())
            + &self.b_ref * DMatrix::from_column_slice(2, 1, &v_ref.to_array()));
        self.a.clone().lu().solve(&rhs)
    }
}

/// Steady-state voltage `v* = v_ref − Z·i*` implied by the integrator.
pub fn droop_voltage(v_ref: DQPair, i: DQPair, zv: &VirtualImpedance) -> DQPair {
    v_ref - zv.apply(i)
}
