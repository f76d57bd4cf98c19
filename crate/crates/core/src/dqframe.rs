//! Park/Clarke transforms into the common synchronous DQ frame and the
//! small amount of DQ algebra the rest of the crate leans on.
//!
//! The transform is the power-invariant one, so `vᵀi` in the DQ frame equals
//! the instantaneous three-phase power. Reactive power uses the convention
//! `q = v_q·i_d − v_d·i_q`.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

/// Default synchronous frequency (50 Hz).
pub const OMEGA_50HZ: f64 = 100.0 * PI;

/// The quarter-turn rotation `J = [[0, 1], [-1, 0]]`.
pub fn rotation_j() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// A two-vector in the common DQ frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DQPair {
    pub d: f64,
    pub q: f64,
}

impl DQPair {
    pub const ZERO: DQPair = DQPair { d: 0.0, q: 0.0 };

    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn dot(self, other: DQPair) -> f64 {
        self.d * other.d + self.q * other.q
    }

    pub fn norm(self) -> f64 {
        self.d.hypot(self.q)
    }

    /// `J·x`.
    pub fn rotate_j(self) -> DQPair {
        DQPair::new(self.q, -self.d)
    }

    pub fn is_finite(self) -> bool {
        self.d.is_finite() && self.q.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.d, self.q]
    }
}

impl From<[f64; 2]> for DQPair {
    fn from(v: [f64; 2]) -> Self {
        DQPair::new(v[0], v[1])
    }
}

impl Add for DQPair {
    type Output = DQPair;
    fn add(self, rhs: DQPair) -> DQPair {
        DQPair::new(self.d + rhs.d, self.q + rhs.q)
    }
}

impl AddAssign for DQPair {
    fn add_assign(&mut self, rhs: DQPair) {
        self.d += rhs.d;
        self.q += rhs.q;
    }
}

impl Sub for DQPair {
    type Output = DQPair;
    fn sub(self, rhs: DQPair) -> DQPair {
        DQPair::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl Neg for DQPair {
    type Output = DQPair;
    fn neg(self) -> DQPair {
        DQPair::new(-self.d, -self.q)
    }
}

impl Mul<f64> for DQPair {
    type Output = DQPair;
    fn mul(self, k: f64) -> DQPair {
        DQPair::new(self.d * k, self.q * k)
    }
}

/// Common reference frame rotating at a constant synchronous frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncFrame {
    omega_s: f64,
}

impl SyncFrame {
    /// Returns `None` unless `omega_s` is finite and positive.
    pub fn new(omega_s: f64) -> Option<Self> {
        (omega_s.is_finite() && omega_s > 0.0).then_some(Self { omega_s })
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    fn rows(&self, t: f64) -> [[f64; 3]; 2] {
        let th = self.omega_s * t;
        let s = (2.0f64 / 3.0).sqrt();
        let a = 2.0 * PI / 3.0;
        [
            [s * th.cos(), s * (th - a).cos(), s * (th + a).cos()],
            [s * th.sin(), s * (th - a).sin(), s * (th + a).sin()],
        ]
    }
}

impl Default for SyncFrame {
    fn default() -> Self {
        Self { omega_s: OMEGA_50HZ }
    }
}

/// `x_DQ = T(ω_s t)·x_abc` with the power-invariant `sqrt(2/3)` scaling.
pub fn park_transform(x_abc: [f64; 3], frame: &SyncFrame, t: f64) -> DQPair {
    let [rd, rq] = frame.rows(t);
    let d = rd.iter().zip(&x_abc).map(|(a, b)| a * b).sum();
    let q = rq.iter().zip(&x_abc).map(|(a, b)| a * b).sum();
    DQPair::new(d, q)
}

/// `x_abc = T(ω_s t)ᵀ·x_DQ`; a right inverse of [`park_transform`] whose
/// output is always a balanced (zero-sequence-free) set.
pub fn inverse_park(x_dq: DQPair, frame: &SyncFrame, t: f64) -> [f64; 3] {
    let [rd, rq] = frame.rows(t);
    [0, 1, 2].map(|k| rd[k] * x_dq.d + rq[k] * x_dq.q)
}

/// Instantaneous active and reactive power `(p, q)` of a DQ voltage/current pair.
pub fn instantaneous_power(v: DQPair, i: DQPair) -> (f64, f64) {
    (v.dot(i), v.q * i.d - v.d * i.q)
}
