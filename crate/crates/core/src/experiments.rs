//! Experiment harness behind the `jamsure` binary: certificate, synthesis,
//! tail-bound and Monte Carlo commands plus the packaged reference study.
//!
//! Every command takes an already-validated [`ExperimentConfig`] and an output
//! directory, writes its artifacts there, prints a short report, and returns
//! the analytic outcome as a value. Analytic failures (a certificate that does
//! not pass, an infeasible rate, too many diverged runs) surface as
//! [`Error::Infeasible`] so the binary exits with status 1; usage problems
//! exit with status 2.
//!
//! Monte Carlo trajectories fan out over a work-stealing thread pool (capped
//! by the `JAMSURE_THREADS` environment variable). Each trajectory is a pure
//! function of `(base_seed, index)`, and all files are written by the calling
//! thread in index order, so outputs are byte-identical across thread counts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::bounds::{self, AttackerCase, BoundCertificate};
use crate::certify::{self, StabilityCertificate};
use crate::config::{ExperimentConfig, GainForm, TriggerMode};
use crate::error::{Error, Result};
use crate::loss::budget_ok;
use crate::sim::{self, SysModel, TrajectoryRecord, TriggerParams};
use crate::synth::{self, ScanEntry, SynthesisConfig, SynthesisReport};

/// State sup-norm below which a trajectory counts as settled.
///
/// This and the two constants after it are calibration constants: frozen
/// after a pilot run and used only to summarize simulations, never inside a
/// certificate.
pub const SETTLE_NORM: f64 = 1e-6;
/// Settling deadline used by the summary (`settled_by_deadline`).
pub const SETTLE_DEADLINE: u64 = 200;
/// Fraction of runs expected to settle by the deadline.
pub const REQUIRED_SETTLE_FRACTION: f64 = 0.99;
/// Multiplicative slack allowed when checking `V(x(tau_k)) <= eta(k) V(x0)`.
pub const ENVELOPE_SLACK: f64 = 1e-9;

/// The packaged reference study, stored verbatim in the repository.
pub const REFERENCE_CONFIG_JSON: &str = include_str!("../configs/reference.json");

/// Parse the packaged reference configuration.
pub fn reference_config() -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(REFERENCE_CONFIG_JSON)
}

/// Per-trajectory summary row.
#[derive(Clone, Debug, Serialize)]
pub struct RunRow {
    /// Trajectory index; doubles as the per-trajectory RNG stream selector.
    pub seed: u64,
    /// First time from which the state sup-norm stays below the settle
    /// threshold; -1 when the run never settles (or diverged).
    pub t_settle: i64,
    /// Max of `V(x(t))` over the run.
    pub max_v: f64,
    /// Exchanges attempted.
    pub triggers: u64,
    /// Failed exchanges among those attempted.
    pub failures: u64,
    /// max over `k = 1..=triggers` of `L(k)/k`.
    pub max_ratio: f64,
    pub diverged: bool,
    pub budget_ok: bool,
    pub envelope_ok: bool,
}

/// Quantiles of the per-trajectory metrics at the probabilities in `probs`
/// (nearest-rank; `t_settle` is over settled runs only, -1 when none).
#[derive(Clone, Debug, Serialize)]
pub struct QuantileTable {
    pub probs: Vec<f64>,
    pub t_settle: Vec<f64>,
    pub max_v: Vec<f64>,
    pub triggers: Vec<f64>,
    pub failures: Vec<f64>,
    pub max_ratio: Vec<f64>,
}

/// Calibration constants echoed into every summary so readers can tell
/// frozen reporting thresholds from certified quantities.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub settle_norm: f64,
    pub settle_deadline: u64,
    pub required_settle_fraction: f64,
    pub envelope_slack: f64,
    pub note: &'static str,
}

impl Calibration {
    fn current() -> Calibration {
        Calibration {
            settle_norm: SETTLE_NORM,
            settle_deadline: SETTLE_DEADLINE,
            required_settle_fraction: REQUIRED_SETTLE_FRACTION,
            envelope_slack: ENVELOPE_SLACK,
            note: "calibration constants frozen after a pilot run; \
                   they summarize simulations and are not certified quantities",
        }
    }
}

/// Aggregate view of a Monte Carlo run.
#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloSummary {
    pub trajectories: u64,
    pub base_seed: u64,
    pub t_max: u64,
    pub theta: u64,
    pub beta: f64,
    pub phi: f64,
    pub rho: f64,
    pub settled: u64,
    pub settled_by_deadline: u64,
    pub settle_fraction: f64,
    pub diverged: u64,
    pub diverged_fraction: f64,
    pub budget_violations: u64,
    pub envelope_violations: u64,
    /// Runs whose transient failure ratio `max_k L(k)/k` exceeded `rho`.
    pub transient_ratio_above_rho: u64,
    pub quantiles: QuantileTable,
    pub calibration: Calibration,
}

/// Everything a Monte Carlo run produces, records included.
#[derive(Debug)]
pub struct SimulationOutput {
    pub rows: Vec<RunRow>,
    pub records: Vec<TrajectoryRecord>,
    pub summary: MonteCarloSummary,
}

/// Resolve the trigger parameters a simulation needs: either the explicitly
/// given gains or a fresh synthesis. Returns the parameters and the growth
/// factor `phi` used by envelope checks.
pub fn resolve_trigger(cfg: &ExperimentConfig, sys: &SysModel) -> Result<(TriggerParams, f64)> {
    match &cfg.trigger.mode {
        TriggerMode::Given(g) => {
            let (p, gain) = g.form(sys)?.to_pk()?;
            let params = TriggerParams::new(p, g.beta, cfg.trigger.theta, gain)?;
            Ok((params, g.phi))
        }
        TriggerMode::Synthesize(s) => {
            let scfg = s.to_synthesis_config(cfg.trigger.rho);
            let report = synth::synthesize_gain(sys, &scfg)?;
            let result = report.result.ok_or_else(|| {
                Error::Infeasible(format!(
                    "no LMI-feasible point on the {}-point beta grid",
                    report.scan.len()
                ))
            })?;
            let params =
                TriggerParams::new(result.p, result.beta, cfg.trigger.theta, result.gain)?;
            Ok((params, result.phi))
        }
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return -1.0;
    }
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn quantile_column<F: Fn(&RunRow) -> f64>(rows: &[RunRow], probs: &[f64], f: F) -> Vec<f64> {
    let mut values: Vec<f64> = rows.iter().map(f).collect();
    values.sort_by(|a, b| a.total_cmp(b));
    probs.iter().map(|&q| nearest_rank(&values, q)).collect()
}

fn summarize(rows: &[RunRow], cfg: &ExperimentConfig, beta: f64, phi: f64) -> MonteCarloSummary {
    let n = rows.len() as u64;
    let settled = rows.iter().filter(|r| r.t_settle >= 0).count() as u64;
    let settled_by_deadline = rows
        .iter()
        .filter(|r| (0..=SETTLE_DEADLINE as i64).contains(&r.t_settle))
        .count() as u64;
    let diverged = rows.iter().filter(|r| r.diverged).count() as u64;
    let probs = vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0];
    let settle_values: Vec<RunRow> = rows.iter().filter(|r| r.t_settle >= 0).cloned().collect();
    MonteCarloSummary {
        trajectories: n,
        base_seed: cfg.run.base_seed,
        t_max: cfg.run.t_max,
        theta: cfg.trigger.theta,
        beta,
        phi,
        rho: cfg.trigger.rho,
        settled,
        settled_by_deadline,
        settle_fraction: settled as f64 / n as f64,
        diverged,
        diverged_fraction: diverged as f64 / n as f64,
        budget_violations: rows.iter().filter(|r| !r.budget_ok).count() as u64,
        envelope_violations: rows.iter().filter(|r| !r.envelope_ok).count() as u64,
        transient_ratio_above_rho: rows
            .iter()
            .filter(|r| r.max_ratio > cfg.trigger.rho)
            .count() as u64,
        quantiles: QuantileTable {
            t_settle: quantile_column(&settle_values, &probs, |r| r.t_settle as f64),
            max_v: quantile_column(rows, &probs, |r| r.max_v),
            triggers: quantile_column(rows, &probs, |r| r.triggers as f64),
            failures: quantile_column(rows, &probs, |r| r.failures as f64),
            max_ratio: quantile_column(rows, &probs, |r| r.max_ratio),
            probs,
        },
        calibration: Calibration::current(),
    }
}

/// First time index from which the state stays below [`SETTLE_NORM`];
/// -1 for runs that never settle or tripped the divergence guard.
fn settle_time(rec: &TrajectoryRecord) -> i64 {
    if rec.diverged.is_some() {
        return -1;
    }
    let mut t = rec.states.len();
    while t > 0 && sim::sup_norm(&rec.states[t - 1]) < SETTLE_NORM {
        t -= 1;
    }
    if t == rec.states.len() {
        -1
    } else {
        t as i64
    }
}

/// Check `V(x(tau_k)) <= eta(k) V(x0) (1 + slack)` at every trigger, in log
/// space so huge diverging values cannot overflow the comparison.
fn envelope_holds(rec: &TrajectoryRecord, beta: f64, phi: f64) -> Result<bool> {
    let ln_eta = rec.ln_envelope(beta, phi)?;
    let v0 = rec.v_at_triggers[0];
    if v0 == 0.0 {
        return Ok(rec.v_at_triggers.iter().all(|&v| v == 0.0));
    }
    let slack = ENVELOPE_SLACK.ln_1p();
    Ok(rec
        .v_at_triggers
        .iter()
        .zip(&ln_eta)
        .all(|(&v, &e)| v.ln() <= v0.ln() + e + slack))
}

fn measure(
    rec: TrajectoryRecord,
    params: &TriggerParams,
    phi: f64,
    cfg: &ExperimentConfig,
    traj: u64,
) -> Result<(RunRow, TrajectoryRecord)> {
    let triggers = rec.num_triggers() as u64;
    let max_v = rec
        .states
        .iter()
        .map(|x| sim::lyapunov(&params.p, x))
        .fold(f64::NEG_INFINITY, f64::max);
    let row = RunRow {
        seed: traj,
        t_settle: settle_time(&rec),
        max_v,
        triggers,
        failures: rec.failures_used(),
        max_ratio: rec.loss.max_failure_ratio(triggers as usize),
        diverged: rec.diverged.is_some(),
        budget_ok: budget_ok(&rec.loss.l_j, cfg.loss.jamming.kappa, cfg.loss.jamming.tau),
        envelope_ok: envelope_holds(&rec, params.beta, phi)?,
    };
    Ok((row, rec))
}

fn thread_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("JAMSURE_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(hw);
    cap.min(hw).min(jobs).max(1)
}

type TrajectorySlot = Mutex<Option<Result<(RunRow, TrajectoryRecord)>>>;

/// Run the full Monte Carlo experiment in memory.
pub fn run_monte_carlo(
    cfg: &ExperimentConfig,
    sys: &SysModel,
    params: &TriggerParams,
    phi: f64,
) -> Result<SimulationOutput> {
    let n_traj = cfg.run.trajectories as usize;
    let next = AtomicUsize::new(0);
    let slots: Vec<TrajectorySlot> = (0..n_traj).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..thread_count(n_traj) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= n_traj {
                    break;
                }
                let out = sim::simulate_sampled(
                    sys,
                    params,
                    &cfg.loss.markov,
                    &cfg.loss.jamming,
                    cfg.run.t_max,
                    &cfg.run.x0,
                    cfg.run.base_seed,
                    j as u64,
                )
                .and_then(|rec| measure(rec, params, phi, cfg, j as u64));
                *slots[j].lock().unwrap() = Some(out);
            });
        }
    });

    let mut rows = Vec::with_capacity(n_traj);
    let mut records = Vec::with_capacity(n_traj);
    for slot in slots {
        let (row, rec) = slot
            .into_inner()
            .expect("worker thread panicked")
            .expect("every trajectory index is claimed exactly once")?;
        rows.push(row);
        records.push(rec);
    }
    let summary = summarize(&rows, cfg, params.beta, phi);
    Ok(SimulationOutput { rows, records, summary })
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_string(path, &text)
}

/// Check the configured certificate; exit 0 iff it passes.
pub fn cmd_certify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<StabilityCertificate> {
    let sys = cfg.system()?;
    let TriggerMode::Given(given) = &cfg.trigger.mode else {
        return Err(Error::Config(
            "certify needs explicit gains: set trigger.mode.given".into(),
        ));
    };
    let rho = cfg.trigger.rho;
    let cert = match given.form(&sys)? {
        GainForm::Qm { q, m } => {
            certify::check_lmi(&sys, &q, &m, given.beta, given.phi, rho, given.tolerance)?
        }
        GainForm::Kp { k, p } => {
            certify::check_gain(&sys, &k, &p, given.beta, given.phi, rho, given.tolerance)?
        }
    };
    fs::create_dir_all(out_dir)?;
    write_string(&out_dir.join("certificate.txt"), &cert.report())?;
    write_json(&out_dir.join("certificate.json"), &cert)?;
    print!("{}", cert.report());
    println!("wrote {}", out_dir.join("certificate.json").display());
    if cert.passes {
        Ok(cert)
    } else {
        Err(Error::Infeasible(
            "stability certificate failed; see the report for which condition broke".into(),
        ))
    }
}

/// Serializable view of a synthesis run (matrices as nested arrays).
#[derive(Serialize)]
struct SynthesisArtifact<'a> {
    eps_feas: f64,
    config: &'a SynthesisConfig,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<SynthesisResultArtifact>,
    scan: &'a [ScanEntry],
}

#[derive(Serialize)]
struct SynthesisResultArtifact {
    beta: f64,
    phi: f64,
    q: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    gain: Vec<Vec<f64>>,
    iterations: usize,
    residual: f64,
    certificate: StabilityCertificate,
}

/// Search the drift curve for a feasible `(beta, phi)` and gain.
pub fn cmd_synthesize(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SynthesisReport> {
    let sys = cfg.system()?;
    let scfg = match &cfg.trigger.mode {
        TriggerMode::Synthesize(s) => s.to_synthesis_config(cfg.trigger.rho),
        TriggerMode::Given(_) => SynthesisConfig::new(cfg.trigger.rho),
    };
    let report = synth::synthesize_gain(&sys, &scfg)?;

    fs::create_dir_all(out_dir)?;
    let artifact = SynthesisArtifact {
        eps_feas: report.eps_feas,
        config: &report.config,
        feasible: report.result.is_some(),
        result: report.result.as_ref().map(|r| SynthesisResultArtifact {
            beta: r.beta,
            phi: r.phi,
            q: r.q.to_rows(),
            m: r.m.to_rows(),
            p: r.p.to_rows(),
            gain: r.gain.to_rows(),
            iterations: r.iterations,
            residual: r.residual,
            certificate: r.certificate.clone(),
        }),
        scan: &report.scan,
    };
    write_json(&out_dir.join("synthesis.json"), &artifact)?;
    println!(
        "scanned {} grid points (eps_feas = {})",
        report.scan.len(),
        report.eps_feas
    );
    match &report.result {
        Some(r) => {
            println!("feasible at beta = {}, phi = {}", r.beta, r.phi);
            println!("gain K = {:?}", r.gain.to_rows());
            print!("{}", r.certificate.report());
            println!("wrote {}", out_dir.join("synthesis.json").display());
            Ok(report)
        }
        None => {
            println!("no feasible point on the grid");
            println!("wrote {}", out_dir.join("synthesis.json").display());
            Err(Error::Infeasible(format!(
                "no LMI-feasible point on the {}-point beta grid",
                report.scan.len()
            )))
        }
    }
}

/// Build the tail-bound certificate implied by the loss model.
pub fn cmd_bounds(cfg: &ExperimentConfig, out_dir: &Path) -> Result<BoundCertificate> {
    let params = cfg.bound_params();
    let case = cfg.attacker_case();
    let range = match case {
        AttackerCase::Independent => {
            bounds::rho_range_independent(params.p1, params.p0, params.tau)?
        }
        AttackerCase::Dependent => bounds::rho_range_dependent(params.p1, params.tau)?,
    };
    println!(
        "attacker case {case:?}: admissible rates ({}, {}), requested rho = {}",
        range.0, range.1, params.rho
    );
    let cert = BoundCertificate::build(&params, case, cfg.run.bounds_k_max)?;

    fs::create_dir_all(out_dir)?;
    let mut csv = Vec::new();
    cert.write_csv(&mut csv)?;
    fs::write(out_dir.join("bounds.csv"), &csv)?;
    write_json(&out_dir.join("bounds.json"), &cert)?;

    let k_max = cert.k_max();
    println!(
        "ln gamma_k decreasing from k0 = {}, asymptotic slope {}",
        cert.k0, cert.asymptotic_slope
    );
    println!(
        "ln gamma at k = {k_max}: {}; ln sum upper estimate: {}",
        cert.ln_gamma[k_max as usize - 1],
        cert.ln_sum_upper
    );
    println!("wrote {}", out_dir.join("bounds.csv").display());
    Ok(cert)
}

/// Monte Carlo simulation; writes per-trajectory CSVs and the summary.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MonteCarloSummary> {
    let sys = cfg.system()?;
    let (params, phi) = resolve_trigger(cfg, &sys)?;
    let output = run_monte_carlo(cfg, &sys, &params, phi)?;

    let traj_dir = out_dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for (j, rec) in output.records.iter().enumerate() {
        let mut buf = Vec::new();
        sim::write_trajectory_csv(rec, &params.p, &mut buf)?;
        fs::write(traj_dir.join(format!("traj_{j:03}.csv")), &buf)?;
    }

    let mut csv = Vec::new();
    writeln!(csv, "seed,T_settle,max_V,triggers,failures,max_ratio")?;
    for r in &output.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.seed, r.t_settle, r.max_v, r.triggers, r.failures, r.max_ratio
        )?;
    }
    fs::write(out_dir.join("summary.csv"), &csv)?;
    write_json(&out_dir.join("summary.json"), &output.summary)?;

    let s = &output.summary;
    println!(
        "{} trajectories, horizon {}, base seed {}: settled {} ({} by t = {}), diverged {}",
        s.trajectories,
        s.t_max,
        s.base_seed,
        s.settled,
        s.settled_by_deadline,
        SETTLE_DEADLINE,
        s.diverged
    );
    println!(
        "budget violations {}, envelope violations {}, transient ratio above rho in {} runs",
        s.budget_violations, s.envelope_violations, s.transient_ratio_above_rho
    );
    println!(
        "wrote {} and {} trajectory files",
        out_dir.join("summary.csv").display(),
        s.trajectories
    );

    if s.diverged_fraction > cfg.run.allowed_divergence_fraction {
        return Err(Error::Infeasible(format!(
            "{} of {} runs hit the divergence guard (allowed fraction {})",
            s.diverged, s.trajectories, cfg.run.allowed_divergence_fraction
        )));
    }
    Ok(output.summary)
}

fn rename_step(step: &str, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("step {step}: {m}")),
        Error::Singular(m) => Error::Singular(format!("step {step}: {m}")),
        Error::Infeasible(m) => Error::Infeasible(format!("step {step}: {m}")),
        Error::SizeLimit(m) => Error::SizeLimit(format!("step {step}: {m}")),
        Error::Config(m) => Error::Config(format!("step {step}: {m}")),
        Error::Io(m) => Error::Config(format!("step {step}: io error: {m}")),
    }
}

fn run_step(
    name: &str,
    verdicts: &mut Vec<(String, bool)>,
    f: impl FnOnce() -> Result<()>,
) -> Result<()> {
    println!("== step {name} ==");
    match f() {
        Ok(()) => {
            println!("step {name}: pass");
            verdicts.push((name.into(), true));
            Ok(())
        }
        Err(e) => {
            println!("step {name}: FAIL ({e})");
            verdicts.push((name.into(), false));
            Err(rename_step(name, e))
        }
    }
}

fn write_verdict(out_dir: &Path, verdicts: &[(String, bool)], ok: bool) -> Result<()> {
    let mut text = String::new();
    for (name, pass) in verdicts {
        text.push_str(&format!("{name}: {}\n", if *pass { "pass" } else { "fail" }));
    }
    text.push_str(&format!("overall: {}\n", if ok { "pass" } else { "fail" }));
    write_string(&out_dir.join("verdict.txt"), &text)
}

/// Run the full packaged study: certify the given gains, build the tail
/// bounds, simulate, and check the envelope on every run. Writes one bundle
/// directory; any failing step is named in the error.
pub fn cmd_reproduce(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut verdicts: Vec<(String, bool)> = Vec::new();
    let mut summary = None;
    let result = (|| {
        run_step("certify", &mut verdicts, || {
            cmd_certify(cfg, &out_dir.join("certify")).map(drop)
        })?;
        run_step("bounds", &mut verdicts, || {
            cmd_bounds(cfg, &out_dir.join("bounds")).map(drop)
        })?;
        run_step("simulate", &mut verdicts, || {
            summary = Some(cmd_simulate(cfg, &out_dir.join("simulate"))?);
            Ok(())
        })?;
        let summary = summary.as_ref().expect("simulate step stored its summary");
        run_step("envelope", &mut verdicts, || {
            if summary.envelope_violations == 0 {
                Ok(())
            } else {
                Err(Error::Infeasible(format!(
                    "{} of {} runs violated the Lyapunov envelope",
                    summary.envelope_violations, summary.trajectories
                )))
            }
        })
    })();
    write_verdict(out_dir, &verdicts, result.is_ok())?;
    println!(
        "verdict: {} ({})",
        if result.is_ok() { "pass" } else { "fail" },
        out_dir.join("verdict.txt").display()
    );
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{JamStrategy, LossTrace, TransitionFn};
    use crate::matrix::Mat;

    #[test]
    fn embedded_reference_matches_study_values() {
        let cfg = reference_config().unwrap();
        assert_eq!(cfg.system.a, vec![vec![1.0, 0.1], vec![-0.5, 1.1]]);
        assert_eq!(cfg.system.b, vec![vec![0.1], vec![1.2]]);
        assert_eq!(cfg.loss.markov.theta1, 1.0);
        assert_eq!(
            cfg.loss.markov.p01,
            TransitionFn::SinSq { offset: 0.2, amp: 0.03, freq: 0.1 }
        );
        assert_eq!(
            cfg.loss.markov.p11,
            TransitionFn::CosSq { offset: 0.2, amp: 0.03, freq: 0.1 }
        );
        assert_eq!(cfg.loss.jamming.kappa, 2.0);
        assert_eq!(cfg.loss.jamming.tau, 5.0);
        assert_eq!(cfg.loss.jamming.strategy, JamStrategy::Greedy);
        assert_eq!(cfg.trigger.theta, 1000);
        assert_eq!(cfg.trigger.rho, 0.4);
        let TriggerMode::Given(g) = &cfg.trigger.mode else {
            panic!("reference config must carry explicit gains");
        };
        assert_eq!(g.beta, 0.55);
        assert_eq!(g.phi, 2.4516);
        assert_eq!(
            g.q.as_deref().unwrap(),
            &[vec![0.618, -2.119], vec![-2.119, 28.214]]
        );
        assert_eq!(g.m.as_deref().unwrap(), &[vec![0.202, -20.405]]);
        assert_eq!(cfg.run.trajectories, 250);
        assert_eq!(cfg.run.base_seed, 0);
        assert_eq!(cfg.run.t_max, 300);
        assert_eq!(cfg.run.x0, vec![1.0, 1.0]);

        // Round trip through the serializer is identity.
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 0.25), 1.0);
        assert_eq!(nearest_rank(&v, 0.26), 2.0);
        assert_eq!(nearest_rank(&v, 0.5), 2.0);
        assert_eq!(nearest_rank(&v, 0.75), 3.0);
        assert_eq!(nearest_rank(&v, 1.0), 4.0);
        assert_eq!(nearest_rank(&[], 0.5), -1.0);

        // Monotone in q by construction.
        let probs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let qs: Vec<f64> = probs.iter().map(|&q| nearest_rank(&v, q)).collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    }

    fn fake_record(states: Vec<Vec<f64>>, diverged: Option<(u64, f64)>) -> TrajectoryRecord {
        let t = states.len();
        TrajectoryRecord {
            inputs: vec![vec![0.0]; t],
            trigger_times: vec![0],
            loss: LossTrace::build(vec![0; t], vec![0; t]).unwrap(),
            v_at_triggers: vec![1.0],
            states,
            diverged,
        }
    }

    #[test]
    fn settle_time_scans_backward() {
        let big = vec![1.0, 1.0];
        let small = vec![1e-9, 0.0];
        assert_eq!(
            settle_time(&fake_record(vec![big.clone(), big.clone(), small.clone()], None)),
            2
        );
        // A late excursion above the threshold resets the settle point.
        assert_eq!(
            settle_time(&fake_record(
                vec![big.clone(), small.clone(), big.clone(), small.clone()],
                None
            )),
            3
        );
        assert_eq!(settle_time(&fake_record(vec![big.clone(), big.clone()], None)), -1);
        assert_eq!(settle_time(&fake_record(vec![small.clone(), small.clone()], None)), 0);
        assert_eq!(
            settle_time(&fake_record(vec![small.clone(), small], Some((1, 1e200)))),
            -1
        );
    }

    fn zero_loss_config() -> ExperimentConfig {
        let mut cfg = reference_config().unwrap();
        cfg.loss.markov.theta1 = 0.0;
        cfg.loss.markov.p01 = TransitionFn::Constant(0.0);
        cfg.loss.markov.p11 = TransitionFn::Constant(0.0);
        cfg.loss.jamming.kappa = 0.0;
        cfg.loss.jamming.tau = 1e9;
        cfg.run.trajectories = 4;
        cfg
    }

    #[test]
    fn zero_loss_runs_settle_without_failures() {
        let cfg = zero_loss_config();
        cfg.validate().unwrap();
        let sys = cfg.system().unwrap();
        let (params, phi) = resolve_trigger(&cfg, &sys).unwrap();
        let out = run_monte_carlo(&cfg, &sys, &params, phi).unwrap();
        assert_eq!(out.summary.trajectories, 4);
        assert_eq!(out.summary.settled, 4);
        assert_eq!(out.summary.diverged, 0);
        assert_eq!(out.summary.budget_violations, 0);
        assert_eq!(out.summary.envelope_violations, 0);
        for row in &out.rows {
            assert_eq!(row.failures, 0);
            assert!(row.t_settle >= 0);
            assert!(row.envelope_ok);
        }
        // All four loss paths are identical (all zeros), so the trajectories
        // are identical too.
        assert_eq!(out.records[0].states, out.records[1].states);
    }

    #[test]
    fn simulate_command_writes_deterministic_artifacts() {
        let cfg = zero_loss_config();
        let dir = tempfile::tempdir().unwrap();
        let first = cmd_simulate(&cfg, dir.path()).unwrap();
        assert_eq!(first.settled, 4);
        let summary_csv = fs::read(dir.path().join("summary.csv")).unwrap();
        let summary_json = fs::read(dir.path().join("summary.json")).unwrap();
        for j in 0..4 {
            assert!(dir.path().join(format!("trajectories/traj_{j:03}.csv")).exists());
        }
        let text = String::from_utf8(summary_csv.clone()).unwrap();
        assert!(text.starts_with("seed,T_settle,max_V,triggers,failures,max_ratio\n"));
        assert_eq!(text.lines().count(), 5);

        // Byte-identical on a rerun into a fresh directory.
        let dir2 = tempfile::tempdir().unwrap();
        cmd_simulate(&cfg, dir2.path()).unwrap();
        assert_eq!(summary_csv, fs::read(dir2.path().join("summary.csv")).unwrap());
        assert_eq!(summary_json, fs::read(dir2.path().join("summary.json")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("trajectories/traj_002.csv")).unwrap(),
            fs::read(dir2.path().join("trajectories/traj_002.csv")).unwrap()
        );
    }

    #[test]
    fn all_loss_unstable_plant_reports_divergence() {
        let mut cfg = reference_config().unwrap();
        cfg.system.a = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        cfg.system.b = vec![vec![0.0], vec![0.0]];
        cfg.loss.markov.theta1 = 1.0;
        cfg.loss.markov.p01 = TransitionFn::Constant(1.0);
        cfg.loss.markov.p11 = TransitionFn::Constant(1.0);
        cfg.trigger.mode = TriggerMode::Given(crate::config::GivenGains {
            beta: 0.5,
            phi: 5.0,
            q: None,
            m: None,
            k: Some(vec![vec![0.0, 0.0]]),
            p: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            tolerance: 1e-3,
        });
        cfg.run.trajectories = 3;
        cfg.run.t_max = 600;
        cfg.validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let err = cmd_simulate(&cfg, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
        // Summary still written before the failure is reported.
        let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        assert!(text.contains("\"diverged\": 3"));
    }

    #[test]
    fn max_v_and_ratio_columns_are_consistent() {
        let cfg = reference_config().unwrap();
        let sys = cfg.system().unwrap();
        let (params, phi) = resolve_trigger(&cfg, &sys).unwrap();
        let rec = sim::simulate_sampled(
            &sys,
            &params,
            &cfg.loss.markov,
            &cfg.loss.jamming,
            cfg.run.t_max,
            &cfg.run.x0,
            cfg.run.base_seed,
            0,
        )
        .unwrap();
        let (row, rec) = measure(rec, &params, phi, &cfg, 0).unwrap();
        assert!(row.max_v >= sim::lyapunov(&params.p, &rec.states[0]));
        assert!(row.max_ratio >= row.failures as f64 / row.triggers as f64);
        assert!(row.max_ratio <= 1.0);
        assert!(row.budget_ok);
        assert!(row.envelope_ok);
        assert_eq!(row.seed, 0);
    }

    #[test]
    fn given_and_direct_forms_resolve_to_same_trigger() {
        let cfg = reference_config().unwrap();
        let sys = cfg.system().unwrap();
        let (params_qm, phi) = resolve_trigger(&cfg, &sys).unwrap();

        let mut direct = cfg.clone();
        let TriggerMode::Given(g) = &mut direct.trigger.mode else {
            unreachable!()
        };
        let p = params_qm.p.to_rows();
        let k = params_qm.gain.to_rows();
        g.q = None;
        g.m = None;
        g.k = Some(k);
        g.p = Some(p);
        let (params_kp, phi2) = resolve_trigger(&direct, &sys).unwrap();
        assert_eq!(phi, phi2);
        assert_eq!(params_qm.p.to_rows(), params_kp.p.to_rows());
        assert_eq!(params_qm.gain.to_rows(), params_kp.gain.to_rows());
        assert_eq!(params_qm.beta, params_kp.beta);
    }

    #[test]
    fn reproduce_fails_at_bounds_step_for_reactive_attacker() {
        let mut cfg = reference_config().unwrap();
        cfg.loss.jamming.strategy = JamStrategy::Reactive;
        // Shrink the run so the failing step is reached quickly; bounds
        // fails before simulate would run anyway.
        cfg.run.trajectories = 2;
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_reproduce(&cfg, dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Infeasible(_)), "{msg}");
        assert!(msg.contains("step bounds"), "{msg}");
        let verdict = fs::read_to_string(dir.path().join("verdict.txt")).unwrap();
        assert!(verdict.contains("certify: pass"));
        assert!(verdict.contains("bounds: fail"));
        assert!(verdict.contains("overall: fail"));

        // The independent-case range admits 0.4; the dependent one must not.
        let params = cfg.bound_params();
        let (lo_ind, _) =
            bounds::rho_range_independent(params.p1, params.p0, params.tau).unwrap();
        let (lo_dep, _) = bounds::rho_range_dependent(params.p1, params.tau).unwrap();
        assert!(lo_ind < 0.4 && 0.4 < lo_dep);
    }

    #[test]
    fn synthesize_trigger_mode_resolves_via_search() {
        // Trivially stabilizable plant keeps the search fast.
        let mut cfg = reference_config().unwrap();
        cfg.system.a = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        cfg.system.b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        cfg.run.x0 = vec![1.0, 1.0];
        cfg.trigger.mode = TriggerMode::Synthesize(crate::config::SynthesizeSettings {
            grid_points: 40,
            max_iters: 20_000,
            ..Default::default()
        });
        cfg.validate().unwrap();
        let sys = cfg.system().unwrap();
        let (params, phi) = resolve_trigger(&cfg, &sys).unwrap();
        assert!(params.beta > 0.0 && params.beta < 1.0);
        assert!(phi >= 1.0);
        assert_eq!(params.gain.rows(), 2);
        // The synthesized trigger also simulates cleanly with no losses.
        let mut quiet = cfg.clone();
        quiet.loss.markov.theta1 = 0.0;
        quiet.loss.markov.p01 = TransitionFn::Constant(0.0);
        quiet.loss.markov.p11 = TransitionFn::Constant(0.0);
        quiet.loss.jamming.kappa = 0.0;
        quiet.loss.jamming.tau = 1e9;
        quiet.run.trajectories = 2;
        let out = run_monte_carlo(&quiet, &sys, &params, phi).unwrap();
        assert_eq!(out.summary.settled, 2);
        assert_eq!(out.summary.envelope_violations, 0);
    }

    #[test]
    fn thread_count_respects_job_limit() {
        assert_eq!(thread_count(1), 1);
        assert!(thread_count(1000) >= 1);
    }

    #[test]
    fn quantile_table_is_monotone_on_reference_run() {
        let mut cfg = reference_config().unwrap();
        cfg.run.trajectories = 40;
        let sys = cfg.system().unwrap();
        let (params, phi) = resolve_trigger(&cfg, &sys).unwrap();
        let out = run_monte_carlo(&cfg, &sys, &params, phi).unwrap();
        let q = &out.summary.quantiles;
        for col in [&q.t_settle, &q.max_v, &q.triggers, &q.failures, &q.max_ratio] {
            assert!(col.windows(2).all(|w| w[0] <= w[1]), "non-monotone: {col:?}");
        }
        assert_eq!(out.summary.budget_violations, 0);
        assert_eq!(out.summary.envelope_violations, 0);
        // The transient failure ratio exceeds rho in most runs (the first
        // failed exchange alone puts L(1)/1 = 1 above 0.4).
        assert!(out.summary.transient_ratio_above_rho > 30);
    }

    #[test]
    fn rename_step_preserves_exit_codes() {
        let e = rename_step("bounds", Error::Infeasible("x".into()));
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("step bounds"));
        let e = rename_step("certify", Error::Config("y".into()));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn fake_record_helper_is_well_formed() {
        // Guards the hand-built record against drifting from the real type.
        let rec = fake_record(vec![vec![1.0, 1.0]; 3], None);
        assert_eq!(rec.states.len(), 3);
        assert_eq!(rec.num_triggers(), 1);
        let _ = Mat::identity(2);
    }
}
