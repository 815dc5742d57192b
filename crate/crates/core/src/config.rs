//! JSON experiment configuration.
//!
//! One file describes a complete experiment: the plant, the loss model, the
//! trigger (either explicit gains to certify or synthesis settings), and the
//! Monte Carlo run parameters. Matrices are nested row-major arrays. Unknown
//! keys are rejected at every level, and every module-level invariant the
//! fields feed into is checked at load time, so a config that loads is a
//! config that runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{AttackerCase, BoundParams};
use crate::error::{Error, Result};
use crate::loss::{JamSpec, MarkovLossSpec};
use crate::matrix::{self, Mat};
use crate::sim::SysModel;
use crate::synth::SynthesisConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub loss: LossConfig,
    pub trigger: TriggerConfig,
    pub run: RunConfig,
}

/// Plant matrices `x(t+1) = A x(t) + B u(t)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub markov: MarkovLossSpec,
    pub jamming: JamSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    /// Hard cap on the time between exchange attempts.
    pub theta: u64,
    /// Failure rate targeted by every certificate built from this config.
    pub rho: f64,
    pub mode: TriggerMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerMode {
    /// Certify and simulate explicitly given gains.
    Given(GivenGains),
    /// Search the drift curve for `(beta, phi)` and a gain first.
    Synthesize(SynthesizeSettings),
}

/// Explicit certificate data: `(beta, phi)` plus exactly one matrix pair,
/// either the convexified `(q, m)` or the direct `(k, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GivenGains {
    pub beta: f64,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    /// Numerical slack for the certificate check.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    crate::certify::TOL_LOOSE
}

/// The matrix pair a [`GivenGains`] block resolved to.
#[derive(Clone, Debug)]
pub enum GainForm {
    /// Convexified variables; recover `P = Q^{-1}`, `K = M Q^{-1}`.
    Qm { q: Mat, m: Mat },
    /// Direct feedback gain and Lyapunov matrix.
    Kp { k: Mat, p: Mat },
}

/// Synthesis knobs; every field is optional in JSON and falls back to the
/// solver defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeSettings {
    pub delta: f64,
    pub grid_points: usize,
    pub beta_min: f64,
    pub max_iters: usize,
    pub eps_feas: Option<f64>,
    pub conv_tol: f64,
    pub stall_window: usize,
}

impl Default for SynthesizeSettings {
    fn default() -> SynthesizeSettings {
        let c = SynthesisConfig::new(0.5);
        SynthesizeSettings {
            delta: c.delta,
            grid_points: c.grid_points,
            beta_min: c.beta_min,
            max_iters: c.max_iters,
            eps_feas: c.eps_feas,
            conv_tol: c.conv_tol,
            stall_window: c.stall_window,
        }
    }
}

impl SynthesizeSettings {
    pub fn to_synthesis_config(&self, rho: f64) -> SynthesisConfig {
        SynthesisConfig {
            rho,
            delta: self.delta,
            grid_points: self.grid_points,
            beta_min: self.beta_min,
            max_iters: self.max_iters,
            eps_feas: self.eps_feas,
            conv_tol: self.conv_tol,
            stall_window: self.stall_window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Simulation horizon; a run covers `t = 0..=t_max`.
    pub t_max: u64,
    pub trajectories: u64,
    pub base_seed: u64,
    pub x0: Vec<f64>,
    /// Output directory for artifacts; the CLI `--out` flag overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Horizon of the tail-bound certificate (`gamma_k` for `k <= this`).
    #[serde(default = "default_bounds_k_max")]
    pub bounds_k_max: u64,
    /// Fraction of Monte Carlo runs allowed to hit the divergence guard
    /// before the simulate command reports failure.
    #[serde(default)]
    pub allowed_divergence_fraction: f64,
}

fn default_bounds_k_max() -> u64 {
    1000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self)
            .expect("config serialization cannot fail");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        self.loss.markov.validate()?;
        self.loss.jamming.validate()?;

        if self.trigger.theta < 1 {
            return Err(Error::Config("trigger.theta must be >= 1".into()));
        }
        let rho = self.trigger.rho;
        if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
            return Err(Error::Config("trigger.rho must lie in [0, 1]".into()));
        }
        match &self.trigger.mode {
            TriggerMode::Given(g) => g.validate(&sys)?,
            TriggerMode::Synthesize(s) => s.to_synthesis_config(rho).validate()?,
        }

        if self.run.t_max < 1 {
            return Err(Error::Config("run.t_max must be >= 1".into()));
        }
        if self.run.trajectories < 1 {
            return Err(Error::Config("run.trajectories must be >= 1".into()));
        }
        if self.run.x0.len() != sys.n() {
            return Err(Error::Config(format!(
                "run.x0 has dimension {}, plant expects {}",
                self.run.x0.len(),
                sys.n()
            )));
        }
        if self.run.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("run.x0 entries must be finite".into()));
        }
        if self.run.bounds_k_max < 1 {
            return Err(Error::Config("run.bounds_k_max must be >= 1".into()));
        }
        let adf = self.run.allowed_divergence_fraction;
        if !(0.0..=1.0).contains(&adf) || !adf.is_finite() {
            return Err(Error::Config(
                "run.allowed_divergence_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The plant, with dimension checks applied.
    pub fn system(&self) -> Result<SysModel> {
        let a = mat_from(&self.system.a, "system.a")?;
        let b = mat_from(&self.system.b, "system.b")?;
        SysModel::new(a, b).map_err(into_config)
    }

    /// Tail-bound parameters implied by the loss model: `p1`/`p0` are the
    /// exact failure/success probability sups of the Markov spec.
    pub fn bound_params(&self) -> BoundParams {
        let (p1, p0) = self.loss.markov.fail_prob_bounds();
        BoundParams {
            p1,
            p0,
            tau: self.loss.jamming.tau,
            kappa: self.loss.jamming.kappa,
            rho: self.trigger.rho,
        }
    }

    /// Which tail-bound regime applies: an attacker that observes the
    /// realized channel losses voids the independence assumption.
    pub fn attacker_case(&self) -> AttackerCase {
        if self.loss.jamming.observes_channel() {
            AttackerCase::Dependent
        } else {
            AttackerCase::Independent
        }
    }
}

impl GivenGains {
    fn validate(&self, sys: &SysModel) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config("trigger beta must lie in (0, 1)".into()));
        }
        if !self.phi.is_finite() || self.phi < 1.0 {
            return Err(Error::Config("trigger phi must be finite and >= 1".into()));
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(Error::Config("certificate tolerance must be finite and > 0".into()));
        }
        self.form(sys)?;
        Ok(())
    }

    /// Resolve to a matrix pair, enforcing that exactly one of `(q, m)` and
    /// `(k, p)` is present and dimensioned for the plant.
    pub fn form(&self, sys: &SysModel) -> Result<GainForm> {
        let qm = (self.q.as_ref(), self.m.as_ref());
        let kp = (self.k.as_ref(), self.p.as_ref());
        match (qm, kp) {
            ((Some(q), Some(m)), (None, None)) => {
                let q = mat_from(q, "trigger q")?;
                let m = mat_from(m, "trigger m")?;
                check_pair_dims(sys, &q, &m, "q", "m")?;
                Ok(GainForm::Qm { q, m })
            }
            ((None, None), (Some(k), Some(p))) => {
                let k = mat_from(k, "trigger k")?;
                let p = mat_from(p, "trigger p")?;
                check_pair_dims(sys, &p, &k, "p", "k")?;
                Ok(GainForm::Kp { k, p })
            }
            ((None, None), (None, None)) => Err(Error::Config(
                "given gains need either (q, m) or (k, p)".into(),
            )),
            _ => Err(Error::Config(
                "given gains must provide exactly one complete pair, (q, m) or (k, p)".into(),
            )),
        }
    }
}

impl GainForm {
    /// The `(P, K)` pair driving simulation: identity for the direct form,
    /// `P = Q^{-1}`, `K = M Q^{-1}` for the convexified one.
    pub fn to_pk(&self) -> Result<(Mat, Mat)> {
        match self {
            GainForm::Kp { k, p } => Ok((p.clone(), k.clone())),
            GainForm::Qm { q, m } => {
                let p = matrix::inverse(q)?.symmetrize();
                let gain = m.matmul(&p);
                Ok((p, gain))
            }
        }
    }
}

fn mat_from(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let mat = Mat::from_rows(rows)
        .map_err(|e| Error::Config(format!("{what}: {e}")))?;
    if mat.to_rows().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what}: entries must be finite")));
    }
    Ok(mat)
}

fn check_pair_dims(sys: &SysModel, square: &Mat, rect: &Mat, sq_name: &str, rect_name: &str) -> Result<()> {
    let n = sys.n();
    if square.rows() != n || square.cols() != n {
        return Err(Error::Config(format!(
            "trigger {sq_name} must be {n} x {n} for this plant"
        )));
    }
    if rect.rows() != sys.m() || rect.cols() != n {
        return Err(Error::Config(format!(
            "trigger {rect_name} must be {} x {n} for this plant",
            sys.m()
        )));
    }
    Ok(())
}

fn into_config(e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Config(msg),
        other => other,
    }
}
