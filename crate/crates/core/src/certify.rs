//! Stability certificates for the event-triggered loop.
//!
//! A gain `K` with Lyapunov matrix `P` is certified against scalars
//! `(beta, phi, rho)` by three conditions:
//!
//! ```text
//! beta P - (A + BK)' P (A + BK) >= 0     (contraction on success)
//! phi P  - A' P A               >= 0     (growth cap on failure)
//! (1 - rho) ln beta + rho ln phi < 0     (drift)
//! ```
//!
//! The first two also have an equivalent linear-matrix-inequality form in
//! the variables `Q = P^{-1}`, `M = K Q`, obtained via Schur complements:
//!
//! ```text
//! [[beta Q, (AQ + BM)'], [AQ + BM, Q]] >= 0
//! [[phi Q,  (AQ)'],      [AQ,      Q]] >= 0
//! ```
//!
//! which is the form the synthesizer searches over. Both checkers report
//! the minimum eigenvalue of every tested matrix so margins are visible,
//! and accept when each margin clears `-tol * (1 + ||.||_F)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{self, Mat};
use crate::sim::SysModel;

/// Tolerance for solutions we computed ourselves at full precision.
pub const TOL_STRICT: f64 = 1e-9;
/// Tolerance for externally supplied values rounded to a few decimals.
pub const TOL_LOOSE: f64 = 1e-3;
/// The drift must clear zero by at least this much.
pub const DRIFT_MAX: f64 = -1e-12;

/// Which pair of matrix conditions a certificate evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertForm {
    /// Conditions on (P, K) directly.
    Direct,
    /// Block LMI conditions on (Q, M).
    Lmi,
}

/// Margins and verdicts for one stability check.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityCertificate {
    pub form: CertForm,
    pub beta: f64,
    pub phi: f64,
    pub rho: f64,
    pub tol: f64,
    /// lambda_min of the contraction condition matrix.
    pub margin_contraction: f64,
    /// lambda_min of the growth-cap condition matrix.
    pub margin_growth: f64,
    pub drift: f64,
    pub contraction_ok: bool,
    pub growth_ok: bool,
    pub drift_ok: bool,
    pub passes: bool,
    /// For LMI-form checks: the direct-form certificate obtained through
    /// the `P = Q^{-1}`, `K = M Q^{-1}` map (Schur-complement equivalence).
    pub cross: Option<Box<StabilityCertificate>>,
}

fn validate_scalars(beta: f64, phi: f64, rho: f64, tol: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain("beta must lie in (0, 1)"));
    }
    if !phi.is_finite() || phi < 1.0 {
        return Err(Error::domain("phi must be finite and >= 1"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain("rho must lie in [0, 1]"));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::domain("tolerance must be finite and > 0"));
    }
    Ok(())
}

pub fn drift(beta: f64, phi: f64, rho: f64) -> f64 {
    (1.0 - rho) * beta.ln() + rho * phi.ln()
}

/// Certify `(P, K)` directly.
pub fn check_gain(
    sys: &SysModel,
    gain: &Mat,
    p: &Mat,
    beta: f64,
    phi: f64,
    rho: f64,
    tol: f64,
) -> Result<StabilityCertificate> {
    validate_scalars(beta, phi, rho, tol)?;
    let n = sys.n();
    p.check_symmetric("Lyapunov matrix P")?;
    if p.rows() != n || gain.rows() != sys.m() || gain.cols() != n {
        return Err(Error::domain("P/K dimensions do not match the plant"));
    }
    let p_eig = matrix::sym_eig(p)?;
    if !p_eig.values[0].is_finite() || p_eig.values[0] <= 0.0 {
        return Err(Error::domain(format!(
            "P must be positive definite (lambda_min = {})",
            p_eig.values[0]
        )));
    }
    let a_cl = sys.a.add(&sys.b.matmul(gain));
    let contraction = p.scale(beta).sub(&a_cl.transpose().matmul(&p.matmul(&a_cl))).symmetrize();
    let growth = p.scale(phi).sub(&sys.a.transpose().matmul(&p.matmul(&sys.a))).symmetrize();
    let (contraction_ok, margin_contraction) = matrix::min_eig_psd(&contraction, tol)?;
    let (growth_ok, margin_growth) = matrix::min_eig_psd(&growth, tol)?;
    let d = drift(beta, phi, rho);
    let drift_ok = d <= DRIFT_MAX;
    Ok(StabilityCertificate {
        form: CertForm::Direct,
        beta,
        phi,
        rho,
        tol,
        margin_contraction,
        margin_growth,
        drift: d,
        contraction_ok,
        growth_ok,
        drift_ok,
        passes: contraction_ok && growth_ok && drift_ok,
        cross: None,
    })
}

/// Certify `(Q, M)` in LMI form and cross-validate the recovered `(P, K)`.
pub fn check_lmi(
    sys: &SysModel,
    q: &Mat,
    m: &Mat,
    beta: f64,
    phi: f64,
    rho: f64,
    tol: f64,
) -> Result<StabilityCertificate> {
    validate_scalars(beta, phi, rho, tol)?;
    let n = sys.n();
    q.check_symmetric("LMI variable Q")?;
    if q.rows() != n || m.rows() != sys.m() || m.cols() != n {
        return Err(Error::domain("Q/M dimensions do not match the plant"));
    }
    let aq_bm = sys.a.matmul(q).add(&sys.b.matmul(m));
    let aq = sys.a.matmul(q);
    let l_contraction = matrix::block2x2(&q.scale(beta), &aq_bm, q)?;
    let l_growth = matrix::block2x2(&q.scale(phi), &aq, q)?;
    let (contraction_ok, margin_contraction) = matrix::min_eig_psd(&l_contraction, tol)?;
    let (growth_ok, margin_growth) = matrix::min_eig_psd(&l_growth, tol)?;
    let d = drift(beta, phi, rho);
    let drift_ok = d <= DRIFT_MAX;

    let p = matrix::inverse(q)?.symmetrize();
    let gain = m.matmul(&p);
    let cross = check_gain(sys, &gain, &p, beta, phi, rho, tol)?;

    Ok(StabilityCertificate {
        form: CertForm::Lmi,
        beta,
        phi,
        rho,
        tol,
        margin_contraction,
        margin_growth,
        drift: d,
        contraction_ok,
        growth_ok,
        drift_ok,
        passes: contraction_ok && growth_ok && drift_ok,
        cross: Some(Box::new(cross)),
    })
}

impl StabilityCertificate {
    /// Plain-text report, one `key: value` per line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        self.render(&mut out, "");
        out
    }

    fn render(&self, out: &mut String, prefix: &str) {
        let form = match self.form {
            CertForm::Direct => "direct",
            CertForm::Lmi => "lmi",
        };
        out.push_str(&format!("{prefix}form: {form}\n"));
        out.push_str(&format!("{prefix}beta: {}\n", self.beta));
        out.push_str(&format!("{prefix}phi: {}\n", self.phi));
        out.push_str(&format!("{prefix}rho: {}\n", self.rho));
        out.push_str(&format!("{prefix}tolerance: {}\n", self.tol));
        out.push_str(&format!(
            "{prefix}margin_contraction: {}\n",
            self.margin_contraction
        ));
        out.push_str(&format!("{prefix}margin_growth: {}\n", self.margin_growth));
        out.push_str(&format!("{prefix}drift: {}\n", self.drift));
        out.push_str(&format!("{prefix}contraction_ok: {}\n", self.contraction_ok));
        out.push_str(&format!("{prefix}growth_ok: {}\n", self.growth_ok));
        out.push_str(&format!("{prefix}drift_ok: {}\n", self.drift_ok));
        out.push_str(&format!("{prefix}passes: {}\n", self.passes));
        if let Some(cross) = &self.cross {
            cross.render(out, &format!("{prefix}cross."));
        }
    }
}
