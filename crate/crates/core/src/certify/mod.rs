//! Constraint checks for a candidate controller: Hurwitz margin, gain
//! bounds, the closed-loop gain envelope and output strict passivity.

pub mod freq;
pub mod lmi;
pub mod popov;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use freq::{check_freq_bound, gain_envelope, max_singular_value, FreqBoundResult, GridSpec};
pub use lmi::{lmi_feasibility, lmi_matrix, lmi_search, verify_certificate, LmiOutcome, PassivityCertificate};
pub use popov::{max_osp_index, osp_freq_analysis, osp_freq_test, OspFreqReport};

use crate::inverter::{ClosedLoopBus, ControllerGains};
use crate::linalg::spectral_abscissa;
use crate::lti::LtiSystem;
use nalgebra::DMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("unbounded response: A is not Hurwitz (max Re λ = {max_re})")]
    NotHurwitz { max_re: f64 },
    #[error("not passive")]
    NotPassive,
    #[error("passivity index is unbounded")]
    IndexUnbounded,
    #[error("system must have as many outputs as inputs")]
    NotSquare,
    #[error("invalid tuning spec: {0}")]
    InvalidSpec(String),
}

pub(crate) fn require_hurwitz(sys: &LtiSystem) -> Result<(), CertifyError> {
    if sys.states() == 0 {
        return Ok(());
    }
    let max_re = spectral_abscissa(&sys.a);
    if max_re < 0.0 {
        Ok(())
    } else {
        Err(CertifyError::NotHurwitz { max_re })
    }
}

/// Requirements a controller must meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningSpec {
    pub p_max: f64,
    pub lambda_max: f64,
    pub gamma: f64,
    pub omega_c: f64,
    pub rho_min: f64,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self { p_max: 125.0, lambda_max: -5.0, gamma: 1.5, omega_c: 1e5, rho_min: 0.39 }
    }
}

impl TuningSpec {
    pub fn validate(&self) -> Result<(), CertifyError> {
        let bad = |m: &str| Err(CertifyError::InvalidSpec(m.to_string()));
        if !(self.p_max > 0.0) {
            return bad("p_max must be positive");
        }
        if !(self.lambda_max < 0.0) {
            return bad("lambda_max must be negative");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.omega_c > 0.0) {
            return bad("omega_c must be positive");
        }
        if !(self.rho_min >= 0.0) {
            return bad("rho_min must be nonnegative");
        }
        Ok(())
    }
}

/// `(ok, λ_max − max Re λ(A))`.
pub fn check_hurwitz(a: &DMatrix<f64>, lambda_max: f64) -> (bool, f64) {
    let margin = lambda_max - spectral_abscissa(a);
    (margin >= 0.0, margin)
}

/// `(ok, largest |entry| over K and M)`.
pub fn check_gain_bounds(gains: &ControllerGains, p_max: f64) -> (bool, f64) {
    let m = gains.max_abs();
    (m <= p_max, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub hurwitz_ok: bool,
    pub hurwitz_margin: f64,
    pub gains_ok: bool,
    pub max_abs_gain: f64,
    pub freq_ok: bool,
    pub worst_omega: Option<f64>,
    pub worst_gap: Option<f64>,
    pub osp_ok: bool,
    /// Largest ρ passing the frequency test (`None` when the loop is not
    /// Hurwitz or not passive).
    pub certified_rho: Option<f64>,
    pub rho_min: f64,
    /// Frequency test at `rho_min`.
    pub osp_freq_ok: bool,
    /// LMI search at `rho_min` returned a certificate.
    pub lmi_ok: bool,
    /// The two passivity paths disagree.
    pub inconsistent: bool,
    pub certificate: Option<PassivityCertificate>,
    pub grid: GridSpec,
}

impl CertificationReport {
    pub fn all_ok(&self) -> bool {
        self.hurwitz_ok && self.gains_ok && self.freq_ok && self.osp_ok
    }
}

pub fn certify_bus(clb: &ClosedLoopBus, gains: &ControllerGains, spec: &TuningSpec) -> CertificationReport {
    certify_bus_with(clb, gains, spec, &GridSpec::default(), 1e-4)
}

/// [`certify_bus`] with an explicit grid and bisection tolerance.
pub fn certify_bus_with(
    clb: &ClosedLoopBus,
    gains: &ControllerGains,
    spec: &TuningSpec,
    grid: &GridSpec,
    rho_tol: f64,
) -> CertificationReport {
    let sys = clb.lti();
    let (hurwitz_ok, hurwitz_margin) = check_hurwitz(&clb.a, spec.lambda_max);
    let (gains_ok, max_abs_gain) = check_gain_bounds(gains, spec.p_max);
    let stable = require_hurwitz(&sys).is_ok();

    let (freq_ok, worst_omega, worst_gap) = match check_freq_bound(&sys, spec.gamma, spec.omega_c, grid) {
        Ok(r) => (r.ok, Some(r.worst_omega), Some(r.worst_gap)),
        Err(_) => (false, None, None),
    };
    let mut report = CertificationReport {
        hurwitz_ok,
        hurwitz_margin,
        gains_ok,
        max_abs_gain,
        freq_ok,
        worst_omega,
        worst_gap,
        osp_ok: false,
        certified_rho: None,
        rho_min: spec.rho_min,
        osp_freq_ok: false,
        lmi_ok: false,
        inconsistent: false,
        certificate: None,
        grid: *grid,
    };
    if !stable {
        return report;
    }
    report.certified_rho = max_osp_index(&sys, rho_tol, grid).ok();
    report.osp_freq_ok = osp_freq_test(&sys, spec.rho_min, grid).unwrap_or(false);
    let lmi = lmi_search(&sys, spec.rho_min);
    report.lmi_ok = lmi.is_feasible();
    report.certificate = lmi.clone().certificate();
    report.inconsistent = match lmi {
        LmiOutcome::Feasible(_) => !report.osp_freq_ok,
        LmiOutcome::Infeasible { .. } => report.osp_freq_ok,
        LmiOutcome::Indeterminate { .. } => false,
    };
    report.osp_ok = report.osp_freq_ok && report.lmi_ok;
    if report.inconsistent {
        log::warn!(
            "passivity paths disagree at rho = {}: frequency test {}, LMI {}",
            spec.rho_min,
            report.osp_freq_ok,
            report.lmi_ok
        );
    }
    report
}
