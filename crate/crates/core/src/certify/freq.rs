//! Frequency grids and the closed-loop gain bound
//! `σ̄(G(jω)) ≤ |γ·ω_c / (jω + ω_c)|`.

use serde::{Deserialize, Serialize};

use super::CertifyError;
use crate::lti::LtiSystem;

/// Log-spaced sweep plus local refinement around the worst sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Golden-section iterations spent on each local extremum.
    pub refine_iters: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 400, omega_min: 1e-1, omega_max: 1e7, refine_iters: 40 }
    }
}

impl GridSpec {
    pub fn with_points(points: usize) -> Self {
        Self { points, ..Self::default() }
    }

    pub fn omegas(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let (lo, hi) = (self.omega_min.log10(), self.omega_max.log10());
        (0..n)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Largest value of `f` over the grid, refined by golden-section search in
/// `log ω` around every sampled local maximum. Returns `(ω, f(ω))`.
pub(crate) fn refined_max<F>(grid: &GridSpec, mut f: F) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let omegas = grid.omegas();
    let vals: Vec<f64> = omegas.iter().map(|&w| f(w)).collect();
    let mut best = (omegas[0], vals[0]);
    for (k, (&w, &v)) in omegas.iter().zip(&vals).enumerate() {
        if v > best.1 || v.is_nan() {
            best = (w, v);
        }
        let left = if k == 0 { f64::NEG_INFINITY } else { vals[k - 1] };
        let right = vals.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if v >= left && v >= right && grid.refine_iters > 0 {
            let lo = omegas[k.saturating_sub(1)].ln();
            let hi = omegas[(k + 1).min(omegas.len() - 1)].ln();
            let cand = golden_max(&mut f, lo, hi, grid.refine_iters);
            if cand.1 > best.1 {
                best = cand;
            }
        }
    }
    best
}

fn golden_max<F: FnMut(f64) -> f64>(f: &mut F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    for _ in 0..iters {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2.exp());
        }
    }
    if f1 >= f2 {
        (x1.exp(), f1)
    } else {
        (x2.exp(), f2)
    }
}

/// `|γ·ω_c / (jω + ω_c)|`.
pub fn gain_envelope(gamma: f64, omega_c: f64, omega: f64) -> f64 {
    gamma * omega_c / omega.hypot(omega_c)
}

/// Outcome of the gain-bound sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqBoundResult {
    pub ok: bool,
    pub worst_omega: f64,
    /// `max_ω σ̄(G(jω)) − envelope(ω)`; nonpositive when the bound holds.
    pub worst_gap: f64,
}

pub fn max_singular_value(sys: &LtiSystem, omega: f64) -> f64 {
    match sys.freq_response(omega) {
        Some(g) => g.singular_values().max(),
        None => f64::INFINITY,
    }
}

/// Checks the closed-loop gain bound over the grid. `A` must be Hurwitz.
pub fn check_freq_bound(
    sys: &LtiSystem,
    gamma: f64,
    omega_c: f64,
    grid: &GridSpec,
) -> Result<FreqBoundResult, CertifyError> {
    super::require_hurwitz(sys)?;
    let (worst_omega, worst_gap) = refined_max(grid, |w| {
        max_singular_value(sys, w) - gain_envelope(gamma, omega_c, w)
    });
    Ok(FreqBoundResult { ok: worst_gap <= 0.0, worst_omega, worst_gap })
}
