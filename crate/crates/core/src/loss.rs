//! Packet-failure processes.
//!
//! Three binary sequences describe the channel: `l_R` (random losses, a
//! time-inhomogeneous two-state Markov chain), `l_J` (jamming, prefix-budget
//! constrained), and their combination `l = l_R OR l_J`. An exchange attempt
//! `i` fails iff `l(i) = 1`, and `L(k)` counts failures among the first `k`
//! attempts.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// How far the parametric transition functions are probed for validity at
/// construction time; beyond this, every sampled step re-checks lazily.
const PROBE_HORIZON: usize = 100_000;

/// A probability as a function of the exchange index `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionFn {
    Constant(f64),
    /// offset + amp * sin^2(freq * i)
    SinSq { offset: f64, amp: f64, freq: f64 },
    /// offset + amp * cos^2(freq * i)
    CosSq { offset: f64, amp: f64, freq: f64 },
    /// Lookup table; indices past the end clamp to the last entry.
    Table(Vec<f64>),
}

impl TransitionFn {
    pub fn eval(&self, i: usize) -> f64 {
        match self {
            TransitionFn::Constant(c) => *c,
            TransitionFn::SinSq { offset, amp, freq } => {
                let s = (freq * i as f64).sin();
                offset + amp * s * s
            }
            TransitionFn::CosSq { offset, amp, freq } => {
                let c = (freq * i as f64).cos();
                offset + amp * c * c
            }
            TransitionFn::Table(t) => t[i.min(t.len() - 1)],
        }
    }

    /// The pointwise complement `i -> 1 - f(i)`, in the same parametric
    /// family (sin^2 and cos^2 swap roles).
    pub fn complement(&self) -> TransitionFn {
        match self {
            TransitionFn::Constant(c) => TransitionFn::Constant(1.0 - c),
            TransitionFn::SinSq { offset, amp, freq } => TransitionFn::CosSq {
                offset: 1.0 - offset - amp,
                amp: *amp,
                freq: *freq,
            },
            TransitionFn::CosSq { offset, amp, freq } => TransitionFn::SinSq {
                offset: 1.0 - offset - amp,
                amp: *amp,
                freq: *freq,
            },
            TransitionFn::Table(t) => {
                TransitionFn::Table(t.iter().map(|p| 1.0 - p).collect())
            }
        }
    }

    /// Exact supremum over all i >= 0.
    pub fn sup(&self) -> f64 {
        match self {
            TransitionFn::Constant(c) => *c,
            TransitionFn::SinSq { offset, amp, .. } | TransitionFn::CosSq { offset, amp, .. } => {
                if *amp >= 0.0 {
                    offset + amp
                } else {
                    *offset
                }
            }
            TransitionFn::Table(t) => t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Exact infimum over all i >= 0.
    pub fn inf(&self) -> f64 {
        match self {
            TransitionFn::Constant(c) => *c,
            TransitionFn::SinSq { offset, amp, .. } | TransitionFn::CosSq { offset, amp, .. } => {
                if *amp >= 0.0 {
                    *offset
                } else {
                    offset + amp
                }
            }
            TransitionFn::Table(t) => t.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let check = |i: usize, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "{what}: transition probability {v} at index {i} is outside [0, 1]"
                )));
            }
            Ok(())
        };
        match self {
            TransitionFn::Table(t) => {
                if t.is_empty() {
                    return Err(Error::domain(format!("{what}: empty lookup table")));
                }
                for (i, v) in t.iter().enumerate() {
                    check(i, *v)?;
                }
            }
            _ => {
                for i in 0..=PROBE_HORIZON {
                    check(i, self.eval(i))?;
                }
            }
        }
        Ok(())
    }
}

/// Two-state Markov chain over {0, 1} with time-varying transitions.
///
/// `p01` and `p11` give the probability of moving *into* state 1 from states
/// 0 and 1 respectively at step `i`; the probability of state 1 at time 0 is
/// `theta1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovLossSpec {
    pub theta1: f64,
    pub p01: TransitionFn,
    pub p11: TransitionFn,
}

impl MarkovLossSpec {
    pub fn new(theta1: f64, p01: TransitionFn, p11: TransitionFn) -> Result<MarkovLossSpec> {
        let spec = MarkovLossSpec { theta1, p01, p11 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta1) || !self.theta1.is_finite() {
            return Err(Error::domain("initial probability theta1 must lie in [0, 1]"));
        }
        self.p01.validate("p01")?;
        self.p11.validate("p11")
    }

    /// P[state(i+1) = 1 | state(i) = q], checked into [0, 1].
    pub fn trans(&self, q: u8, i: usize) -> Result<f64> {
        let f = if q == 0 { &self.p01 } else { &self.p11 };
        let v = f.eval(i);
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::domain(format!(
                "transition probability {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(v)
    }

    /// The chain of the complementary indicator `1 - state`: if this spec
    /// models failures, the result models successes.
    pub fn complement(&self) -> MarkovLossSpec {
        MarkovLossSpec {
            theta1: 1.0 - self.theta1,
            // New chain is in state 1 when the old one is in state 0, so its
            // transition out of state q mirrors the old state 1-q, negated.
            p01: self.p11.complement(),
            p11: self.p01.complement(),
        }
    }

    /// Exact (sup over i of the failure probability, sup over i of the
    /// success probability), i.e. the tightest constants p1 and p0 with
    /// p_{q,1}(i) <= p1 and p_{q,0}(i) <= p0 for all q, i.
    pub fn fail_prob_bounds(&self) -> (f64, f64) {
        let p1 = self.p01.sup().max(self.p11.sup());
        let p0 = 1.0 - self.p01.inf().min(self.p11.inf());
        (p1, p0)
    }
}

/// Jamming attacker: may corrupt at most `kappa + k/tau` of the first `k`
/// exchange attempts, for every prefix `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JamSpec {
    pub kappa: f64,
    pub tau: f64,
    pub strategy: JamStrategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum JamStrategy {
    /// Attack every time the budget permits.
    Greedy,
    /// Attack at indices divisible by `period`, when permitted.
    Periodic { period: usize },
    /// Attack with probability `rate`, when permitted.
    Random { rate: f64 },
    /// Attack when permitted and the channel did not already lose the
    /// packet (requires observing `l_R`; maximizes damage overlap).
    Reactive,
}

impl JamSpec {
    pub fn new(kappa: f64, tau: f64, strategy: JamStrategy) -> Result<JamSpec> {
        let spec = JamSpec { kappa, tau, strategy };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::domain("kappa must be finite and >= 0"));
        }
        if !self.tau.is_finite() || self.tau <= 1.0 {
            return Err(Error::domain("tau must be finite and > 1"));
        }
        match self.strategy {
            JamStrategy::Periodic { period: 0 } => {
                Err(Error::domain("periodic attacker needs period >= 1"))
            }
            JamStrategy::Random { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(Error::domain("random attacker rate must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the attacker may use the realized channel losses.
    pub fn observes_channel(&self) -> bool {
        matches!(self.strategy, JamStrategy::Reactive)
    }

    /// Budget test for attacking index `i` after `count` prior attacks:
    /// the prefix sum after the attack must still satisfy the budget.
    fn permitted(&self, count: u64, i: usize) -> bool {
        (count + 1) as f64 <= self.kappa + (i + 1) as f64 / self.tau
    }
}

/// Sample the Markov loss chain for `k` steps (helper taking an explicit
/// generator; see [`sample_markov`] for the seed-based entry point).
pub fn sample_markov_with(spec: &MarkovLossSpec, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u8>> {
    if k == 0 {
        return Err(Error::domain("sample length must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.theta1) || !spec.theta1.is_finite() {
        return Err(Error::domain("initial probability theta1 must lie in [0, 1]"));
    }
    let mut out = Vec::with_capacity(k);
    let mut state: u8 = if rng.gen::<f64>() < spec.theta1 { 1 } else { 0 };
    out.push(state);
    for i in 0..k - 1 {
        let p = spec.trans(state, i)?;
        state = if rng.gen::<f64>() < p { 1 } else { 0 };
        out.push(state);
    }
    Ok(out)
}

/// Sample `k` steps of the random-loss chain; identical `(spec, k, seed)`
/// yields an identical sequence, and a longer run extends a shorter one.
pub fn sample_markov(spec: &MarkovLossSpec, k: usize, seed: u64) -> Result<Vec<u8>> {
    sample_markov_with(spec, k, &mut rng::stream(seed, 0))
}

/// Sample the jamming indicator for `k` attempts (explicit generator).
///
/// The budget is enforced by construction: an attack at index `i` happens
/// only if `count + 1 <= kappa + (i+1)/tau`. The reactive strategy needs the
/// realized channel losses.
pub fn sample_jamming_with(
    spec: &JamSpec,
    k: usize,
    rng: &mut ChaCha8Rng,
    observed_lr: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if k == 0 {
        return Err(Error::domain("sample length must be >= 1"));
    }
    spec.validate()?;
    if spec.observes_channel() {
        match observed_lr {
            None => {
                return Err(Error::domain(
                    "reactive attacker requires the observed channel-loss sequence",
                ))
            }
            Some(lr) if lr.len() < k => {
                return Err(Error::domain(
                    "observed channel-loss sequence shorter than requested length",
                ))
            }
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(k);
    let mut count: u64 = 0;
    for i in 0..k {
        let wants = match spec.strategy {
            JamStrategy::Greedy => true,
            JamStrategy::Periodic { period } => i % period == 0,
            JamStrategy::Random { rate } => rng.gen::<f64>() < rate,
            JamStrategy::Reactive => observed_lr.unwrap()[i] == 0,
        };
        if wants && spec.permitted(count, i) {
            count += 1;
            out.push(1);
        } else {
            out.push(0);
        }
    }
    Ok(out)
}

/// Seed-based entry point for [`sample_jamming_with`].
pub fn sample_jamming(
    spec: &JamSpec,
    k: usize,
    seed: u64,
    observed_lr: Option<&[u8]>,
) -> Result<Vec<u8>> {
    sample_jamming_with(spec, k, &mut rng::stream(seed, 0), observed_lr)
}

/// Elementwise OR of the two failure indicators.
pub fn combine(l_r: &[u8], l_j: &[u8]) -> Result<Vec<u8>> {
    if l_r.len() != l_j.len() {
        return Err(Error::domain("combine: sequences differ in length"));
    }
    Ok(l_r
        .iter()
        .zip(l_j)
        .map(|(&r, &j)| if r == 1 || j == 1 { 1 } else { 0 })
        .collect())
}

/// Cumulative failure counts: L(k) = sum_{i<k} l(i) for k = 1..=len.
pub fn cumulative_failures(l: &[u8]) -> Vec<u64> {
    let mut acc = 0u64;
    l.iter()
        .map(|&v| {
            acc += v as u64;
            acc
        })
        .collect()
}

/// Exhaustive prefix check of the jamming budget.
pub fn budget_ok(l_j: &[u8], kappa: f64, tau: f64) -> bool {
    let mut count = 0u64;
    for (i, &v) in l_j.iter().enumerate() {
        count += v as u64;
        if count as f64 > kappa + (i + 1) as f64 / tau {
            return false;
        }
    }
    true
}

/// One realization of the full failure process.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTrace {
    pub l_r: Vec<u8>,
    pub l_j: Vec<u8>,
    pub l: Vec<u8>,
    /// L(k) for k = 1..=len.
    pub cumulative: Vec<u64>,
}

impl LossTrace {
    pub fn build(l_r: Vec<u8>, l_j: Vec<u8>) -> Result<LossTrace> {
        let l = combine(&l_r, &l_j)?;
        let cumulative = cumulative_failures(&l);
        Ok(LossTrace { l_r, l_j, l, cumulative })
    }

    /// Sample both processes for trajectory `traj` of a Monte Carlo run.
    pub fn sample(
        markov: &MarkovLossSpec,
        jam: &JamSpec,
        k: usize,
        base_seed: u64,
        traj: u64,
    ) -> Result<LossTrace> {
        let l_r = sample_markov_with(markov, k, &mut rng::stream(base_seed, rng::markov_stream(traj)))?;
        let l_j = sample_jamming_with(
            jam,
            k,
            &mut rng::stream(base_seed, rng::jam_stream(traj)),
            Some(&l_r),
        )?;
        LossTrace::build(l_r, l_j)
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    /// max over k = 1..=limit of L(k)/k.
    pub fn max_failure_ratio(&self, limit: usize) -> f64 {
        self.cumulative
            .iter()
            .take(limit)
            .enumerate()
            .map(|(i, &c)| c as f64 / (i + 1) as f64)
            .fold(0.0, f64::max)
    }

    /// CSV export, one row per exchange index; `L` is the count of failures
    /// through that index.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "i,l_R,l_J,l,L")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i, self.l_r[i], self.l_j[i], self.l[i], self.cumulative[i]
            )?;
        }
        Ok(())
    }
}
