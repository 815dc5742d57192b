//! Closed-loop simulation of the event-triggered control loop.
//!
//! The plant `x(t+1) = A x(t) + B u(t)` runs over an unreliable link. At
//! trigger instants the sensor sends its state and receives back a fresh
//! input; exchange `i` fails when the combined loss bit `l(i)` is 1, in
//! which case the plant applies `u = 0` until the next trigger. Between
//! triggers the last input is held. The next trigger fires at the first
//! `t > tau_i` with
//!
//! ```text
//! t >= tau_i + theta   or   V(A x(t) + B u(tau_i)) > beta V(x(tau_i))
//! ```
//!
//! with `V(x) = x' P x` and a strict inequality: ties do not fire. The
//! V-test deliberately uses the one-step prediction under the held input,
//! which coincides bitwise with the realized next state whenever the step
//! does not trigger; the simulator asserts that coincidence as a self-check.

use std::io::Write;

use crate::error::{Error, Result};
use crate::loss::{JamSpec, LossTrace, MarkovLossSpec};
use crate::matrix::Mat;

/// Growth guard: a state with sup-norm beyond this is reported as divergence
/// instead of being allowed to overflow into infinities.
pub const DIVERGENCE_NORM: f64 = 1e150;

/// Plant matrices.
#[derive(Clone, Debug)]
pub struct SysModel {
    pub a: Mat,
    pub b: Mat,
}

impl SysModel {
    pub fn new(a: Mat, b: Mat) -> Result<SysModel> {
        if !a.is_square() {
            return Err(Error::domain("state matrix A must be square"));
        }
        if b.rows() != a.rows() {
            return Err(Error::domain(format!(
                "input matrix B has {} rows, expected {}",
                b.rows(),
                a.rows()
            )));
        }
        Ok(SysModel { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }
}

/// Trigger rule and feedback parameters: Lyapunov matrix `P`, contraction
/// target `beta`, maximum inter-trigger spacing `theta`, and the gain `K`.
#[derive(Clone, Debug)]
pub struct TriggerParams {
    pub p: Mat,
    pub beta: f64,
    pub theta: u64,
    pub gain: Mat,
}

impl TriggerParams {
    pub fn new(p: Mat, beta: f64, theta: u64, gain: Mat) -> Result<TriggerParams> {
        p.check_symmetric("Lyapunov matrix P")?;
        let eig = crate::matrix::sym_eig(&p)?;
        if !eig.values[0].is_finite() || eig.values[0] <= 0.0 {
            return Err(Error::domain(format!(
                "Lyapunov matrix P must be positive definite (lambda_min = {})",
                eig.values[0]
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::domain("beta must lie in (0, 1)"));
        }
        if theta < 1 {
            return Err(Error::domain("theta must be >= 1"));
        }
        if gain.cols() != p.rows() {
            return Err(Error::domain(format!(
                "gain has {} columns, expected {}",
                gain.cols(),
                p.rows()
            )));
        }
        Ok(TriggerParams { p, beta, theta, gain })
    }
}

/// `V(x) = x' P x`.
pub fn lyapunov(p: &Mat, x: &[f64]) -> f64 {
    assert!(p.is_square() && p.rows() == x.len(), "dimension mismatch in V(x)");
    let px = p.matvec(x);
    x.iter().zip(&px).map(|(a, b)| a * b).sum()
}

fn step(sys: &SysModel, x: &[f64], u: &[f64]) -> Vec<f64> {
    let ax = sys.a.matvec(x);
    let bu = sys.b.matvec(u);
    ax.iter().zip(&bu).map(|(a, b)| a + b).collect()
}

/// Infinity norm of a state vector.
pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Trigger test at a candidate instant with `elapsed = t - tau_i >= 1`:
/// fires on the time cap or when the predicted next state under the held
/// input strictly exceeds the contraction envelope.
pub fn trigger_check(
    sys: &SysModel,
    params: &TriggerParams,
    x_t: &[f64],
    x_last: &[f64],
    u_applied: &[f64],
    elapsed: u64,
) -> bool {
    if elapsed >= params.theta {
        return true;
    }
    let pred = step(sys, x_t, u_applied);
    lyapunov(&params.p, &pred) > params.beta * lyapunov(&params.p, x_last)
}

/// One simulated closed-loop run.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    /// x(t) for t = 0..=t_end (t_end < T only if the run diverged).
    pub states: Vec<Vec<f64>>,
    /// u(t), same indexing as `states`.
    pub inputs: Vec<Vec<f64>>,
    /// Trigger instants tau_i; tau_0 = 0.
    pub trigger_times: Vec<u64>,
    /// The loss trace driving the run (exchange i uses element i).
    pub loss: LossTrace,
    /// V(x(tau_i)) per trigger.
    pub v_at_triggers: Vec<f64>,
    /// Set when the sup-norm guard tripped: (time, norm).
    pub diverged: Option<(u64, f64)>,
}

impl TrajectoryRecord {
    pub fn num_triggers(&self) -> usize {
        self.trigger_times.len()
    }

    /// Failed exchanges among those actually performed.
    pub fn failures_used(&self) -> u64 {
        self.loss.l[..self.num_triggers()].iter().map(|&v| v as u64).sum()
    }

    /// `ln eta(k)` aligned with `v_at_triggers`: entry k bounds
    /// `V(x(tau_k)) / V(x(0))`, so entry 0 is `ln eta(0) = 0`.
    pub fn ln_envelope(&self, beta: f64, phi: f64) -> Result<Vec<f64>> {
        let used = &self.loss.l[..self.num_triggers()];
        let mut out = Vec::with_capacity(used.len());
        let mut fails = 0u64;
        for (k, &li) in used.iter().enumerate() {
            out.push(ln_eta(k as u64, fails, beta, phi)?);
            fails += li as u64;
        }
        Ok(out)
    }
}

fn ln_eta(k: u64, failures: u64, beta: f64, phi: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain("beta must lie in (0, 1)"));
    }
    if !phi.is_finite() || phi < 1.0 {
        return Err(Error::domain("phi must be finite and >= 1"));
    }
    Ok((k - failures) as f64 * beta.ln() + failures as f64 * phi.ln())
}

/// Log growth envelope of a loss prefix: entry j is
/// `ln eta(j+1) = (j+1 - L(j+1)) ln beta + L(j+1) ln phi`.
pub fn log_envelope(l: &[u8], beta: f64, phi: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(l.len());
    let mut fails = 0u64;
    for (j, &li) in l.iter().enumerate() {
        if li > 1 {
            return Err(Error::domain("loss sequence must be binary"));
        }
        fails += li as u64;
        out.push(ln_eta(j as u64 + 1, fails, beta, phi)?);
    }
    Ok(out)
}

/// Run the closed loop for `t = 0..=t_max` against a pregenerated loss
/// trace. Exchange `i` consumes `loss` element `i`; the trace must cover
/// every trigger that occurs (a trace of length `t_max + 1` always does).
pub fn simulate(
    sys: &SysModel,
    params: &TriggerParams,
    loss: &LossTrace,
    t_max: u64,
    x0: &[f64],
) -> Result<TrajectoryRecord> {
    let (n, m) = (sys.n(), sys.m());
    if t_max < 1 {
        return Err(Error::domain("horizon must be >= 1"));
    }
    if x0.len() != n {
        return Err(Error::domain(format!(
            "initial state has dimension {}, expected {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("initial state must be finite"));
    }
    if params.p.rows() != n || params.gain.rows() != m || params.gain.cols() != n {
        return Err(Error::domain("trigger parameter dimensions do not match the plant"));
    }

    let mut states: Vec<Vec<f64>> = Vec::with_capacity(t_max as usize + 1);
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(t_max as usize + 1);
    let mut trigger_times: Vec<u64> = Vec::new();
    let mut v_at_triggers: Vec<f64> = Vec::new();
    let mut diverged = None;

    let mut x = x0.to_vec();
    let exchange = |x: &[f64], i: usize| -> Result<Vec<f64>> {
        let Some(&li) = loss.l.get(i) else {
            return Err(Error::domain(format!(
                "loss trace (length {}) exhausted at exchange {i}",
                loss.len()
            )));
        };
        Ok(if li == 1 { vec![0.0; m] } else { params.gain.matvec(x) })
    };

    states.push(x.clone());
    if sup_norm(&x) > DIVERGENCE_NORM {
        return Ok(TrajectoryRecord {
            states,
            inputs: vec![vec![0.0; m]],
            trigger_times,
            loss: loss.clone(),
            v_at_triggers,
            diverged: Some((0, sup_norm(&x))),
        });
    }
    trigger_times.push(0);
    v_at_triggers.push(lyapunov(&params.p, &x));
    let mut u = exchange(&x, 0)?;
    inputs.push(u.clone());
    let mut tau = 0u64;
    let mut x_tau = x.clone();
    let mut pending_pred: Option<Vec<f64>> = None;

    for t in 1..=t_max {
        let x_next = step(sys, &x, &u);
        if let Some(pred) = pending_pred.take() {
            // Held input: the realized state must equal the prediction the
            // trigger test was evaluated on.
            assert_eq!(pred, x_next, "prediction/dynamics mismatch at t = {t}");
        }
        x = x_next;
        let norm = sup_norm(&x);
        if norm > DIVERGENCE_NORM || !norm.is_finite() {
            states.push(x.clone());
            inputs.push(u.clone());
            diverged = Some((t, norm));
            break;
        }
        let fire = trigger_check(sys, params, &x, &x_tau, &u, t - tau);
        if fire {
            let i = trigger_times.len();
            trigger_times.push(t);
            v_at_triggers.push(lyapunov(&params.p, &x));
            u = exchange(&x, i)?;
            tau = t;
            x_tau = x.clone();
        } else {
            pending_pred = Some(step(sys, &x, &u));
        }
        states.push(x.clone());
        inputs.push(u.clone());
    }

    Ok(TrajectoryRecord {
        states,
        inputs,
        trigger_times,
        loss: loss.clone(),
        v_at_triggers,
        diverged,
    })
}

/// Sample per-trajectory loss processes (independent RNG streams per
/// trajectory index) and simulate.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sampled(
    sys: &SysModel,
    params: &TriggerParams,
    markov: &MarkovLossSpec,
    jam: &JamSpec,
    t_max: u64,
    x0: &[f64],
    base_seed: u64,
    traj: u64,
) -> Result<TrajectoryRecord> {
    let loss = LossTrace::sample(markov, jam, t_max as usize + 1, base_seed, traj)?;
    simulate(sys, params, &loss, t_max, x0)
}

/// CSV export, one row per time step:
/// `t,x1..xn,u1..um,is_trigger,i,l,lR,lJ,V`.
pub fn write_trajectory_csv<W: Write>(
    rec: &TrajectoryRecord,
    p: &Mat,
    w: &mut W,
) -> Result<()> {
    let n = rec.states[0].len();
    let m = rec.inputs[0].len();
    let mut header = String::from("t");
    for j in 1..=n {
        header.push_str(&format!(",x{j}"));
    }
    for j in 1..=m {
        header.push_str(&format!(",u{j}"));
    }
    header.push_str(",is_trigger,i,l,lR,lJ,V");
    writeln!(w, "{header}")?;
    let mut idx = 0usize;
    for (t, (x, u)) in rec.states.iter().zip(&rec.inputs).enumerate() {
        let t = t as u64;
        if idx + 1 < rec.trigger_times.len() && rec.trigger_times[idx + 1] == t {
            idx += 1;
        }
        let is_trigger = (rec.trigger_times.get(idx) == Some(&t)) as u8;
        let mut row = t.to_string();
        for v in x {
            row.push_str(&format!(",{v}"));
        }
        for v in u {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(
            ",{is_trigger},{idx},{},{},{},{}",
            rec.loss.l[idx],
            rec.loss.l_r[idx],
            rec.loss.l_j[idx],
            lyapunov(p, x)
        ));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{JamStrategy, TransitionFn};
    use crate::matrix;
    use proptest::prelude::*;

    fn reference_sys() -> SysModel {
        SysModel::new(
            Mat::from_rows(&[vec![1.0, 0.1], vec![-0.5, 1.1]]).unwrap(),
            Mat::from_rows(&[vec![0.1], vec![1.2]]).unwrap(),
        )
        .unwrap()
    }

    fn reference_q() -> Mat {
        Mat::from_rows(&[vec![0.618, -2.119], vec![-2.119, 28.214]]).unwrap()
    }

    fn reference_gain() -> Mat {
        // K = M Q^{-1} with M = [0.202, -20.405].
        let qinv = matrix::inverse(&reference_q()).unwrap();
        Mat::from_rows(&[vec![0.202, -20.405]]).unwrap().matmul(&qinv)
    }

    fn reference_trigger() -> TriggerParams {
        let p = matrix::inverse(&reference_q()).unwrap().symmetrize();
        TriggerParams::new(p, 0.55, 1000, reference_gain()).unwrap()
    }

    fn reference_markov() -> MarkovLossSpec {
        MarkovLossSpec::new(
            1.0,
            TransitionFn::SinSq { offset: 0.2, amp: 0.03, freq: 0.1 },
            TransitionFn::CosSq { offset: 0.2, amp: 0.03, freq: 0.1 },
        )
        .unwrap()
    }

    fn reference_jam() -> JamSpec {
        JamSpec::new(2.0, 5.0, JamStrategy::Greedy).unwrap()
    }

    fn all_zero_trace(k: usize) -> LossTrace {
        LossTrace::build(vec![0; k], vec![0; k]).unwrap()
    }

    fn all_one_trace(k: usize) -> LossTrace {
        LossTrace::build(vec![1; k], vec![0; k]).unwrap()
    }

    #[test]
    fn lyapunov_basics() {
        let p = Mat::identity(2);
        assert_eq!(lyapunov(&p, &[0.0, 0.0]), 0.0);
        assert_eq!(lyapunov(&p, &[3.0, 4.0]), 25.0);
    }

    #[test]
    fn lyapunov_reference_quadratic_form() {
        // Closed-form 2x2 inverse: P = adj(Q)/det(Q), so
        // x0' P x0 = (q22 + 2 q12_negated... ) evaluated directly.
        let p = matrix::inverse(&reference_q()).unwrap();
        let det = 0.618 * 28.214 - 2.119 * 2.119;
        let expected = (28.214 + 2.0 * 2.119 + 0.618) / det;
        let got = lyapunov(&p, &[1.0, 1.0]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got > 0.0);
    }

    #[test]
    fn trigger_time_cap_fires_regardless_of_state() {
        let sys = reference_sys();
        let params = reference_trigger();
        assert!(trigger_check(&sys, &params, &[0.0, 0.0], &[0.0, 0.0], &[0.0], 1000));
        assert!(trigger_check(&sys, &params, &[1.0, 1.0], &[1.0, 1.0], &[0.0], 1500));
    }

    #[test]
    fn trigger_strict_at_zero_state() {
        let sys = reference_sys();
        let params = reference_trigger();
        // V(pred) = 0 and beta V(x_last) = 0: 0 > 0 is false.
        assert!(!trigger_check(&sys, &params, &[0.0, 0.0], &[0.0, 0.0], &[0.0], 3));
    }

    #[test]
    fn trigger_exact_tie_does_not_fire() {
        // A = 0.5 I, u = 0: predicted V is exactly 0.25 V(x) in binary
        // arithmetic, so beta = 0.25 produces an exact tie.
        let sys = SysModel::new(
            Mat::diag(&[0.5, 0.5]),
            Mat::from_rows(&[vec![0.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        let x = [1.0, 1.0];
        let tie = TriggerParams::new(
            Mat::identity(2),
            0.25,
            10,
            Mat::from_rows(&[vec![0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert!(!trigger_check(&sys, &tie, &x, &x, &[0.0], 1));
        let below = TriggerParams { beta: 0.2499, ..tie };
        assert!(trigger_check(&sys, &below, &x, &x, &[0.0], 1));
    }

    #[test]
    fn geometric_decay_triggers_only_on_time_cap() {
        // A = 0.5 I, K = 0: V quarters every step, far below beta = 0.5, so
        // only the theta cap fires.
        let sys = SysModel::new(
            Mat::diag(&[0.5, 0.5]),
            Mat::identity(2),
        )
        .unwrap();
        let params = TriggerParams::new(
            Mat::identity(2),
            0.5,
            3,
            Mat::zeros(2, 2),
        )
        .unwrap();
        let rec = simulate(&sys, &params, &all_zero_trace(11), 10, &[1.0, 1.0]).unwrap();
        assert_eq!(rec.trigger_times, vec![0, 3, 6, 9]);
        assert!(rec.diverged.is_none());
        for (t, x) in rec.states.iter().enumerate() {
            let scale = 0.5f64.powi(t as i32);
            assert_eq!(x, &vec![scale, scale], "t = {t}");
        }
        assert!(rec.inputs.iter().all(|u| u == &vec![0.0, 0.0]));
    }

    #[test]
    fn all_losses_run_open_loop() {
        let sys = reference_sys();
        let params = TriggerParams::new(
            Mat::identity(2),
            0.9,
            2,
            Mat::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let t_max = 12u64;
        let rec = simulate(&sys, &params, &all_one_trace(13), t_max, &[1.0, 1.0]).unwrap();
        // Every exchange fails, so u stays exactly zero and x(t) = A^t x0.
        assert!(rec.inputs.iter().all(|u| u == &vec![0.0]));
        assert_eq!(rec.failures_used() as usize, rec.num_triggers());
        let mut apow = Mat::identity(2);
        for (t, x) in rec.states.iter().enumerate() {
            let expected = apow.matvec(&[1.0, 1.0]);
            for (a, b) in x.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "t = {t}");
            }
            apow = sys.a.matmul(&apow);
        }
    }

    #[test]
    fn reference_setup_converges_and_respects_envelope() {
        let sys = reference_sys();
        let params = reference_trigger();
        let (beta, phi) = (0.55, 2.4516);
        let rec = simulate_sampled(
            &sys,
            &params,
            &reference_markov(),
            &reference_jam(),
            300,
            &[1.0, 1.0],
            0,
            0,
        )
        .unwrap();
        assert!(rec.diverged.is_none());
        let x_last = rec.states.last().unwrap();
        assert!(sup_norm(x_last) < 1e-6, "final norm {}", sup_norm(x_last));

        // Envelope domination along the trigger subsequence.
        let v0 = rec.v_at_triggers[0];
        let env = rec.ln_envelope(beta, phi).unwrap();
        assert_eq!(env.len(), rec.num_triggers());
        assert_eq!(env[0], 0.0);
        for (k, (&v, &le)) in rec.v_at_triggers.iter().zip(&env).enumerate() {
            assert!(
                v <= le.exp() * v0 * (1.0 + 1e-9),
                "envelope violated at trigger {k}: V = {v}, bound = {}",
                le.exp() * v0
            );
        }

        // Inter-trigger containment and failure growth cap on each window.
        for (i, w) in rec.trigger_times.windows(2).enumerate() {
            let (tau, next) = (w[0] as usize, w[1] as usize);
            let v_tau = rec.v_at_triggers[i];
            let cap = if rec.loss.l[i] == 1 { phi } else { beta };
            for t in tau + 1..=next {
                let v = lyapunov(&params.p, &rec.states[t]);
                assert!(
                    v <= cap * v_tau * (1.0 + 1e-9),
                    "window {i}, t = {t}: V = {v} exceeds {cap} * {v_tau}"
                );
            }
        }
    }

    #[test]
    fn divergence_reported_not_crashed() {
        let sys = SysModel::new(
            Mat::diag(&[2.0, 2.0]),
            Mat::from_rows(&[vec![0.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        let params = TriggerParams::new(
            Mat::identity(2),
            0.5,
            5,
            Mat::from_rows(&[vec![0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let rec = simulate(&sys, &params, &all_one_trace(700), 600, &[1.0, 1.0]).unwrap();
        let (t, norm) = rec.diverged.expect("doubling state must trip the guard");
        // 2^t exceeds 1e150 just past t = 498.
        assert!((495..=505).contains(&t), "t = {t}");
        assert!(norm > DIVERGENCE_NORM);
        assert_eq!(rec.states.len() as u64, t + 1);
    }

    #[test]
    fn envelope_identities() {
        let beta = 0.55f64;
        let phi = 2.4516f64;
        let env = log_envelope(&[0, 0, 0], beta, phi).unwrap();
        assert!((env[2] - 3.0 * beta.ln()).abs() < 1e-15);
        let env = log_envelope(&[1, 1], beta, phi).unwrap();
        assert!((env[1] - 2.0 * phi.ln()).abs() < 1e-15);
        let env = log_envelope(&[0, 1, 0], beta, phi).unwrap();
        let product = beta * phi * beta;
        assert!((env[2] - product.ln()).abs() < 1e-12);
        assert!((env[2] - (2.0 * beta.ln() + phi.ln())).abs() < 1e-15);
    }

    #[test]
    fn trajectory_csv_shape() {
        let sys = reference_sys();
        let params = reference_trigger();
        let rec = simulate(&sys, &params, &all_zero_trace(6), 5, &[1.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&rec, &params.p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,u1,is_trigger,i,l,lR,lJ,V");
        assert_eq!(lines.len(), rec.states.len() + 1);
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[4], "1");
        assert_eq!(first[5], "0");
    }

    #[test]
    fn loss_trace_exhaustion_is_an_error() {
        let sys = reference_sys();
        let params = TriggerParams::new(Mat::identity(2), 0.9, 1, Mat::zeros(1, 2)).unwrap();
        // theta = 1 triggers every step; a 3-element trace cannot cover 10.
        let err = simulate(&sys, &params, &all_zero_trace(3), 10, &[1.0, 1.0]);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn record_invariants_hold(seed in 0u64..500, theta in 1u64..8, t_max in 4u64..60) {
            let sys = reference_sys();
            let params = TriggerParams::new(
                matrix::inverse(&reference_q()).unwrap().symmetrize(),
                0.55,
                theta,
                reference_gain(),
            ).unwrap();
            let rec = simulate_sampled(
                &sys, &params, &reference_markov(), &reference_jam(),
                t_max, &[1.0, 1.0], seed, 0,
            ).unwrap();

            prop_assert_eq!(rec.trigger_times[0], 0);
            for w in rec.trigger_times.windows(2) {
                let gap = w[1] - w[0];
                prop_assert!(gap >= 1 && gap <= theta, "gap {} vs theta {}", gap, theta);
            }
            // Zero input exactly when the exchange failed; held otherwise.
            let mut idx = 0usize;
            for (t, u) in rec.inputs.iter().enumerate() {
                if idx + 1 < rec.trigger_times.len() && rec.trigger_times[idx + 1] == t as u64 {
                    idx += 1;
                }
                let at_trigger = rec.trigger_times[idx] == t as u64;
                if at_trigger && rec.loss.l[idx] == 1 {
                    prop_assert!(u.iter().all(|&v| v == 0.0));
                }
                if !at_trigger {
                    prop_assert_eq!(u, &rec.inputs[rec.trigger_times[idx] as usize]);
                }
            }
            // Determinism: same seed reproduces the record bitwise.
            let again = simulate_sampled(
                &sys, &params, &reference_markov(), &reference_jam(),
                t_max, &[1.0, 1.0], seed, 0,
            ).unwrap();
            prop_assert_eq!(rec.states, again.states);
            prop_assert_eq!(rec.trigger_times, again.trigger_times);
        }
    }
}
