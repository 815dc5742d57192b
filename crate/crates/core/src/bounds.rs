//! Summable tail certificates for the combined failure process.
//!
//! The target is a pair `(rho, gamma_k)` with `P[L(k) > rho k] <= gamma_k`
//! and `sum_k gamma_k < infinity`, where `L(k)` counts failed exchanges among
//! the first `k`. The failure count splits as
//! `L(k) <= L1(k) + L2(k)` with `L1 = sum l_R` (channel losses) and
//! `L2 = sum (1 - l_R) l_J` (jamming that hits an otherwise good exchange),
//! and a union bound reduces everything to tail bounds for sums of the form
//! `sum_{i<k} xi(i) chi(i)`: a binary Markov chain `xi` masked by a selector
//! `chi` with prefix budget `sum_{i<k'} chi(i) <= c + w k'`.
//!
//! For such sums a Chernoff-style bound `psi_k` is available whenever the
//! target rate `rho` sits strictly between `p_max * w` and `w`, where `p_max`
//! bounds the chain's transition probability into state 1:
//!
//! ```text
//! psi_k = phi^(-rho k + 1) * (((phi-1) p_max + 1)^(c + w k) - 1) / ((phi-1) p_max)
//! phi   = (rho/w) (1 - p_max) / (p_max (1 - rho/w))
//! ```
//!
//! Everything is computed and stored in natural logs; `psi_k` spans hundreds
//! of orders of magnitude. Exact small-instance enumeration oracles are
//! provided so tests can verify every bound against ground truth.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::MarkovLossSpec;

/// Scan cap for locating the decay onset of `ln gamma_k`.
const DECAY_SCAN_CAP: u64 = 100_000;

/// Parameters of the failure environment and the target rate.
///
/// `p1` bounds the probability that an exchange fails through the channel
/// (transition into state 1), `p0` bounds the probability that it succeeds
/// (transition into state 0), `(kappa, tau)` is the jamming budget and `rho`
/// the rate to certify.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub p1: f64,
    pub p0: f64,
    pub tau: f64,
    pub kappa: f64,
    pub rho: f64,
}

/// Whether the attacker acts independently of the channel or may react to
/// the realized channel losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerCase {
    Independent,
    Dependent,
}

/// The rate split `rho = rho1 + rho2` between the two failure sources, plus
/// the per-term Chernoff parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Split {
    pub eps: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub phi1: f64,
    /// Present only in the independent case; the dependent case bounds the
    /// second term by direct exponential counting instead.
    pub phi2: Option<f64>,
}

fn validate_params(p: &BoundParams, need_p0: bool) -> Result<()> {
    if !(p.p1 > 0.0 && p.p1 < 1.0) {
        return Err(Error::domain("p1 must lie in (0, 1)"));
    }
    if need_p0 && !(p.p0 > 0.0 && p.p0 < 1.0) {
        return Err(Error::domain("p0 must lie in (0, 1)"));
    }
    if !p.tau.is_finite() || p.tau <= 1.0 {
        return Err(Error::domain("tau must be finite and > 1"));
    }
    if !p.kappa.is_finite() || p.kappa < 0.0 {
        return Err(Error::domain("kappa must be finite and >= 0"));
    }
    if !(p.rho > 0.0 && p.rho <= 1.0) {
        return Err(Error::domain("rho must lie in (0, 1]"));
    }
    Ok(())
}

/// Admissible open interval of certifiable rates when the attacker is
/// independent of the channel: `(p1 + p0/tau, 1)`.
pub fn rho_range_independent(p1: f64, p0: f64, tau: f64) -> Result<(f64, f64)> {
    if !(p1 > 0.0 && p1 < 1.0 && p0 > 0.0 && p0 < 1.0) {
        return Err(Error::domain("p1 and p0 must lie in (0, 1)"));
    }
    if !tau.is_finite() || tau <= 1.0 {
        return Err(Error::domain("tau must be finite and > 1"));
    }
    let lo = p1 + p0 / tau;
    if lo >= 1.0 {
        return Err(Error::Infeasible(format!(
            "no certifiable rate: p1 + p0/tau = {lo} >= 1"
        )));
    }
    Ok((lo, 1.0))
}

/// Admissible open interval when the attacker may react to channel losses:
/// `(p1 + 1/tau, 1)`.
pub fn rho_range_dependent(p1: f64, tau: f64) -> Result<(f64, f64)> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::domain("p1 must lie in (0, 1)"));
    }
    if !tau.is_finite() || tau <= 1.0 {
        return Err(Error::domain("tau must be finite and > 1"));
    }
    let lo = p1 + 1.0 / tau;
    if lo >= 1.0 {
        return Err(Error::Infeasible(format!(
            "no certifiable rate: p1 + 1/tau = {lo} >= 1"
        )));
    }
    Ok((lo, 1.0))
}

/// Rate split for the independent case.
///
/// The margin `eps = rho - p1 - p0/tau` is divided so that both per-term
/// rates stay inside their own admissible intervals; the second term's share
/// is capped at `(1 - p0)/(2 tau)` to keep `rho2 < 1/tau`.
pub fn split_independent(params: &BoundParams) -> Result<Split> {
    validate_params(params, true)?;
    let (lo, _) = rho_range_independent(params.p1, params.p0, params.tau)?;
    if !(params.rho > lo && params.rho < 1.0) {
        return Err(Error::Infeasible(format!(
            "rho = {} outside the admissible open interval ({lo}, 1)",
            params.rho
        )));
    }
    let eps = params.rho - lo;
    let eps2 = (eps / 2.0).min((1.0 - params.p0) / (2.0 * params.tau));
    let eps1 = eps - eps2;
    let rho1 = params.p1 + eps1;
    let rho2 = params.p0 / params.tau + eps2;
    let phi1 = rho1 * (1.0 - params.p1) / (params.p1 * (1.0 - rho1));
    let phi2 =
        params.tau * rho2 * (1.0 - params.p0) / (params.p0 * (1.0 - params.tau * rho2));
    Ok(Split { eps, eps1, eps2, rho1, rho2, phi1, phi2: Some(phi2) })
}

/// Rate split for the dependent case: the margin over `p1 + 1/tau` is halved
/// between the two terms.
pub fn split_dependent(params: &BoundParams) -> Result<Split> {
    validate_params(params, false)?;
    let (lo, _) = rho_range_dependent(params.p1, params.tau)?;
    if !(params.rho > lo && params.rho < 1.0) {
        return Err(Error::Infeasible(format!(
            "rho = {} outside the admissible open interval ({lo}, 1)",
            params.rho
        )));
    }
    let eps = params.rho - lo;
    let rho1 = params.p1 + eps / 2.0;
    let rho2 = 1.0 / params.tau + eps / 2.0;
    let phi1 = rho1 * (1.0 - params.p1) / (params.p1 * (1.0 - rho1));
    Ok(Split { eps, eps1: eps / 2.0, eps2: eps / 2.0, rho1, rho2, phi1, phi2: None })
}

/// `ln psi_k`: log of the tail bound on `P[sum_{i<k} xi(i) chi(i) > rho k]`
/// for a chain with transition-to-1 probability at most `p_max` and a
/// selector with prefix budget `c + w k`.
///
/// Valid for `rho` strictly inside `(p_max * w, w)`; computed in log space,
/// so it neither overflows nor underflows for `k` up to 1e6 and far beyond.
pub fn log_psi_k(k: u64, rho: f64, p_max: f64, c: f64, w: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("log_psi_k: k must be >= 1"));
    }
    if !(p_max > 0.0 && p_max < 1.0) {
        return Err(Error::domain("log_psi_k: p_max must lie in (0, 1)"));
    }
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::domain("log_psi_k: w must lie in (0, 1]"));
    }
    if !c.is_finite() || c < 0.0 {
        return Err(Error::domain("log_psi_k: c must be finite and >= 0"));
    }
    if !(rho > p_max * w && rho < w) {
        return Err(Error::domain(format!(
            "log_psi_k: rho = {rho} outside the open interval ({}, {w})",
            p_max * w
        )));
    }
    let r = rho / w;
    let phi = r * (1.0 - p_max) / (p_max * (1.0 - r));
    let ln_phi = phi.ln();
    // a = ln((phi - 1) p_max + 1), always > 0 here since phi > 1.
    let a = ((phi - 1.0) * p_max).ln_1p();
    let e = (c + w * k as f64) * a;
    // ln(X^(c+wk) - 1) = e + ln(1 - exp(-e)).
    let ln_num = e + (-(-e).exp_m1()).ln();
    Ok((1.0 - rho * k as f64) * ln_phi + ln_num - ((phi - 1.0) * p_max).ln())
}

/// Log tail bound for the jamming term when the attacker may depend on the
/// channel: `ln gamma2_k = kappa - (rho2 - 1/tau) k`, from the almost-sure
/// budget alone.
pub fn log_gamma_dependent(k: u64, rho2: f64, kappa: f64, tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau <= 1.0 {
        return Err(Error::domain("log_gamma_dependent: tau must be finite and > 1"));
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::domain("log_gamma_dependent: kappa must be finite and >= 0"));
    }
    if !rho2.is_finite() || rho2 <= 1.0 / tau {
        return Err(Error::domain(format!(
            "log_gamma_dependent: rho2 = {rho2} must exceed 1/tau = {}",
            1.0 / tau
        )));
    }
    Ok(kappa - (rho2 - 1.0 / tau) * k as f64)
}

/// log(exp(a) + exp(b)) without leaving log space.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy, Debug)]
struct LogSumAcc {
    max: f64,
    sum: f64,
}

impl LogSumAcc {
    fn new() -> LogSumAcc {
        LogSumAcc { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            if self.max > f64::NEG_INFINITY {
                self.sum = self.sum * (self.max - x).exp() + 1.0;
            } else {
                self.sum = 1.0;
            }
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn ln_total(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// A `(rho, gamma_k)` certificate: per-k log bounds, the rate split behind
/// them, and summability evidence (decay onset plus a series upper estimate).
#[derive(Clone, Debug, Serialize)]
pub struct BoundCertificate {
    pub params: BoundParams,
    pub attacker: AttackerCase,
    /// ln gamma_k^(1) (channel-loss term) for k = 1..=k_max.
    pub ln_gamma1: Vec<f64>,
    /// ln gamma_k^(2) (jamming term) for k = 1..=k_max.
    pub ln_gamma2: Vec<f64>,
    /// ln gamma_k = ln(gamma_k^(1) + gamma_k^(2)) for k = 1..=k_max.
    pub ln_gamma: Vec<f64>,
    /// None only for the degenerate rho = 1 certificate (gamma_k = 0).
    pub split: Option<Split>,
    /// ln gamma_k is strictly decreasing for every k >= k0.
    pub k0: u64,
    /// Last index covered by the internal scan (>= max(k_max, k0)).
    pub scan_end: u64,
    /// ln of sum_{k=1..scan_end} gamma_k.
    pub ln_partial_sum: f64,
    /// ln of an upper estimate of the full series sum_{k>=1} gamma_k
    /// (scanned prefix plus per-term geometric tail majorants).
    pub ln_sum_upper: f64,
    /// Limit of ln gamma_{k+1} - ln gamma_k for the slower-decaying term;
    /// strictly negative for every constructible certificate.
    pub asymptotic_slope: f64,
}

impl BoundCertificate {
    /// Build the certificate for rates `k = 1..=k_max`.
    ///
    /// Fails with an infeasibility error if `rho` is outside the admissible
    /// interval or if no decay onset is found within the scan cap (no
    /// summability evidence). `rho = 1` yields the degenerate certificate
    /// `gamma_k = 0`.
    pub fn build(params: &BoundParams, attacker: AttackerCase, k_max: u64) -> Result<BoundCertificate> {
        if k_max == 0 {
            return Err(Error::domain("certificate needs k_max >= 1"));
        }
        validate_params(params, matches!(attacker, AttackerCase::Independent))?;
        if params.rho == 1.0 {
            // A rate-1 bound is vacuous: the failure fraction can never
            // exceed one, so gamma_k = 0.
            let neg = vec![f64::NEG_INFINITY; k_max as usize];
            return Ok(BoundCertificate {
                params: *params,
                attacker,
                ln_gamma1: neg.clone(),
                ln_gamma2: neg.clone(),
                ln_gamma: neg,
                split: None,
                k0: 1,
                scan_end: k_max,
                ln_partial_sum: f64::NEG_INFINITY,
                ln_sum_upper: f64::NEG_INFINITY,
                asymptotic_slope: f64::NEG_INFINITY,
            });
        }

        let split = match attacker {
            AttackerCase::Independent => split_independent(params)?,
            AttackerCase::Dependent => split_dependent(params)?,
        };
        let inv_tau = 1.0 / params.tau;
        let term1 = |k: u64| log_psi_k(k, split.rho1, params.p1, 0.0, 1.0);
        let term2: Box<dyn Fn(u64) -> Result<f64>> = match attacker {
            AttackerCase::Independent => {
                Box::new(move |k| log_psi_k(k, split.rho2, params.p0, params.kappa, inv_tau))
            }
            AttackerCase::Dependent => {
                Box::new(move |k| log_gamma_dependent(k, split.rho2, params.kappa, params.tau))
            }
        };

        let mut ln_gamma1 = Vec::with_capacity(k_max as usize);
        let mut ln_gamma2 = Vec::with_capacity(k_max as usize);
        let mut ln_gamma = Vec::with_capacity(k_max as usize);
        let mut sum1 = LogSumAcc::new();
        let mut sum2 = LogSumAcc::new();
        // First k at which each term's increment goes negative. Increments
        // of ln psi_k are strictly decreasing in k (a -> ln(X^a - 1) is
        // concave increasing), so the first negative increment certifies
        // strict decay for every later k; the dependent second term decays
        // linearly from the start.
        let mut onset1: Option<u64> = None;
        let mut onset2: Option<u64> = None;
        let mut prev1 = f64::NAN;
        let mut prev2 = f64::NAN;
        let mut k = 1u64;
        loop {
            let g1 = term1(k)?;
            let g2 = term2(k)?;
            if k > 1 {
                if onset1.is_none() && g1 - prev1 < 0.0 {
                    onset1 = Some(k - 1);
                }
                if onset2.is_none() && g2 - prev2 < 0.0 {
                    onset2 = Some(k - 1);
                }
            }
            if k <= k_max {
                ln_gamma1.push(g1);
                ln_gamma2.push(g2);
                ln_gamma.push(logaddexp(g1, g2));
            }
            sum1.push(g1);
            sum2.push(g2);
            prev1 = g1;
            prev2 = g2;
            let past_onset = match (onset1, onset2) {
                (Some(a), Some(b)) => k > a.max(b),
                _ => false,
            };
            if k >= k_max && past_onset {
                break;
            }
            if k >= DECAY_SCAN_CAP {
                return Err(Error::Infeasible(format!(
                    "no decay onset for ln gamma_k within k <= {DECAY_SCAN_CAP}; \
                     summability evidence not found"
                )));
            }
            k += 1;
        }
        let scan_end = k;
        let (last1, last2) = (prev1, prev2);
        let k0 = onset1.unwrap().max(onset2.unwrap());

        // Geometric tail majorant per term: increments keep shrinking, so
        // gamma_{scan_end + j} <= gamma_{scan_end} * r^j with r the ratio at
        // the scan end.
        let tail = |g_end: f64, g_next: f64| -> f64 {
            let d = g_next - g_end;
            debug_assert!(d < 0.0);
            g_end + d - (-d.exp_m1()).ln()
        };
        let tail1 = tail(last1, term1(scan_end + 1)?);
        let tail2 = tail(last2, term2(scan_end + 1)?);
        let ln_partial_sum = logaddexp(sum1.ln_total(), sum2.ln_total());
        let ln_sum_upper = logaddexp(ln_partial_sum, logaddexp(tail1, tail2));

        let slope_psi = |rho: f64, p: f64, w: f64| -> f64 {
            let r = rho / w;
            let phi = r * (1.0 - p) / (p * (1.0 - r));
            -rho * phi.ln() + w * ((phi - 1.0) * p).ln_1p()
        };
        let slope1 = slope_psi(split.rho1, params.p1, 1.0);
        let slope2 = match attacker {
            AttackerCase::Independent => slope_psi(split.rho2, params.p0, inv_tau),
            AttackerCase::Dependent => -(split.rho2 - inv_tau),
        };

        Ok(BoundCertificate {
            params: *params,
            attacker,
            ln_gamma1,
            ln_gamma2,
            ln_gamma,
            split: Some(split),
            k0,
            scan_end,
            ln_partial_sum,
            ln_sum_upper,
            asymptotic_slope: slope1.max(slope2),
        })
    }

    pub fn k_max(&self) -> u64 {
        self.ln_gamma.len() as u64
    }

    /// CSV export: one row per k.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "k,ln_gamma1,ln_gamma2,ln_gamma")?;
        for i in 0..self.ln_gamma.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                self.ln_gamma1[i],
                self.ln_gamma2[i],
                self.ln_gamma[i]
            )?;
        }
        Ok(())
    }
}

/// Exact `P[sum_{i<k} xi(i) chi(i) > threshold]` for the chain `xi` drawn
/// from `spec` and a fixed binary selector `chi`, by enumerating all `2^k`
/// chain paths with their exact probabilities. Ground truth for the bounds;
/// limited to `k <= 20`.
pub fn exact_tail_oracle(
    spec: &MarkovLossSpec,
    weights: &[u8],
    k: usize,
    threshold: f64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("exact_tail_oracle: k must be >= 1"));
    }
    if k > 20 {
        return Err(Error::SizeLimit(format!(
            "exact_tail_oracle: 2^{k} paths exceed the enumeration cap (k <= 20)"
        )));
    }
    if weights.len() < k {
        return Err(Error::domain("exact_tail_oracle: selector shorter than k"));
    }
    if weights.iter().any(|&v| v > 1) {
        return Err(Error::domain("exact_tail_oracle: selector must be binary"));
    }
    if !(0.0..=1.0).contains(&spec.theta1) {
        return Err(Error::domain("initial probability theta1 must lie in [0, 1]"));
    }
    let mut trans = Vec::with_capacity(k.saturating_sub(1));
    for i in 0..k - 1 {
        trans.push([spec.trans(0, i)?, spec.trans(1, i)?]);
    }
    let mut total = 0.0;
    for path in 0u32..(1u32 << k) {
        let first = (path & 1) as u8;
        let mut p = if first == 1 { spec.theta1 } else { 1.0 - spec.theta1 };
        if p == 0.0 {
            continue;
        }
        let mut score = (first & weights[0]) as u32;
        let mut state = first;
        for (i, t) in trans.iter().enumerate() {
            let next = ((path >> (i + 1)) & 1) as u8;
            let pt = if next == 1 { t[state as usize] } else { 1.0 - t[state as usize] };
            p *= pt;
            if p == 0.0 {
                break;
            }
            score += (next & weights[i + 1]) as u32;
            state = next;
        }
        if p > 0.0 && score as f64 > threshold {
            total += p;
        }
    }
    Ok(total)
}

/// Exact `E[phi^(sum_j xi(i_j))]` over a chosen index set, with the
/// closed-form upper bound `phi ((phi-1) p_max + 1)^(s-1)` the tail
/// certificates rely on. `p_max` is derived exactly from the parametric
/// form of the loss specification.
#[derive(Clone, Copy, Debug)]
pub struct MomentBound {
    pub exact: f64,
    pub bound: f64,
    pub p_max: f64,
}

pub fn moment_oracle(spec: &MarkovLossSpec, indices: &[usize], phi: f64) -> Result<MomentBound> {
    if !phi.is_finite() || phi <= 1.0 {
        return Err(Error::domain("moment_oracle: phi must be finite and > 1"));
    }
    let s = indices.len();
    if s == 0 {
        return Err(Error::domain("moment_oracle: need at least one index"));
    }
    if s > 12 {
        return Err(Error::SizeLimit("moment_oracle: at most 12 indices".into()));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("moment_oracle: indices must be strictly increasing"));
    }
    let k = indices[s - 1] + 1;
    if k > 20 {
        return Err(Error::SizeLimit(format!(
            "moment_oracle: last index {} exceeds the enumeration cap (<= 19)",
            indices[s - 1]
        )));
    }
    let p_max = spec.p01.sup().max(spec.p11.sup());
    let mut selected = vec![false; k];
    for &i in indices {
        selected[i] = true;
    }
    let mut pow = Vec::with_capacity(s + 1);
    pow.push(1.0);
    for j in 0..s {
        pow.push(pow[j] * phi);
    }
    let mut trans = Vec::with_capacity(k.saturating_sub(1));
    for i in 0..k - 1 {
        trans.push([spec.trans(0, i)?, spec.trans(1, i)?]);
    }
    let mut exact = 0.0;
    for path in 0u32..(1u32 << k) {
        let first = (path & 1) as u8;
        let mut p = if first == 1 { spec.theta1 } else { 1.0 - spec.theta1 };
        if p == 0.0 {
            continue;
        }
        let mut count = (selected[0] && first == 1) as usize;
        let mut state = first;
        for (i, t) in trans.iter().enumerate() {
            let next = ((path >> (i + 1)) & 1) as u8;
            let pt = if next == 1 { t[state as usize] } else { 1.0 - t[state as usize] };
            p *= pt;
            if p == 0.0 {
                break;
            }
            count += (selected[i + 1] && next == 1) as usize;
            state = next;
        }
        if p > 0.0 {
            exact += p * pow[count];
        }
    }
    let bound = phi * ((phi - 1.0) * p_max + 1.0).powi(s as i32 - 1);
    Ok(MomentBound { exact, bound, p_max })
}
