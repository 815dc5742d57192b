//! Feedback gain synthesis by LMI feasibility search along the drift curve.
//!
//! For a target failure rate `rho`, every scanned pair `(beta, phi)` sits on
//! the curve `(1 - rho) ln beta + rho ln phi = -delta`, so any feasible pair
//! automatically has negative drift with margin `delta`. The scan walks a
//! geometric beta grid downward from the curve endpoint `e^{-delta/(1-rho)}`
//! (where `phi = 1`) and accepts the first beta whose LMI system
//!
//! ```text
//! [[beta Q, (AQ + BM)'], [AQ + BM, Q]] >= eps I
//! [[phi Q,  (AQ)'],      [AQ,      Q]] >= eps I
//! ```
//!
//! admits a solution, then recovers `P = Q^{-1}`, `K = M Q^{-1}`.
//!
//! Feasibility is decided with two projection operators: eigenvalue
//! clipping onto the shifted cone `{X >= 2 eps I}` (both LMIs stacked), and
//! least-squares projection onto the affine set of block matrices generated
//! by `(Q, M)` with `trace(Q)` pinned to `n` (removing the homogeneity
//! degree of freedom so `eps` is an absolute margin). The projections are
//! composed in Douglas-Rachford form, which converges orders of magnitude
//! faster than plain alternation when the two sets meet at a shallow angle,
//! as they do near the feasibility boundary. The affine-side iterate is
//! accepted once both blocks clear `eps I`; a window without relative
//! improvement declares the point infeasible.

use serde::Serialize;

use crate::certify::{self, StabilityCertificate, TOL_STRICT};
use crate::error::{Error, Result};
use crate::matrix::{self, Mat};
use crate::sim::SysModel;

/// Synthesis controls; `new(rho)` fills the documented defaults.
#[derive(Clone, Debug, Serialize)]
pub struct SynthesisConfig {
    pub rho: f64,
    /// Drift margin on the scanned curve.
    pub delta: f64,
    /// Number of beta grid points.
    pub grid_points: usize,
    /// Lower end of the beta grid.
    pub beta_min: f64,
    /// Projection iteration cap per grid point.
    pub max_iters: usize,
    /// Strict-feasibility margin; `None` resolves to `1e-6 (1 + ||A||_F)`.
    pub eps_feas: Option<f64>,
    /// Minimum relative improvement that counts as progress.
    pub conv_tol: f64,
    /// Iterations without progress before a point is declared infeasible.
    pub stall_window: usize,
}

impl SynthesisConfig {
    pub fn new(rho: f64) -> SynthesisConfig {
        SynthesisConfig {
            rho,
            delta: 1e-3,
            grid_points: 200,
            beta_min: 1e-3,
            max_iters: 200_000,
            eps_feas: None,
            conv_tol: 1e-6,
            stall_window: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::domain("rho must lie in [0, 1]"));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(Error::domain("delta must be finite and > 0"));
        }
        if self.grid_points < 2 {
            return Err(Error::domain("grid needs at least 2 points"));
        }
        if !(self.beta_min > 0.0 && self.beta_min < 1.0) {
            return Err(Error::domain("beta_min must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::domain("max_iters must be >= 1"));
        }
        if let Some(eps) = self.eps_feas {
            if !eps.is_finite() || eps <= 0.0 {
                return Err(Error::domain("eps_feas must be finite and > 0"));
            }
        }
        if !(self.conv_tol > 0.0 && self.conv_tol < 1.0) {
            return Err(Error::domain("conv_tol must lie in (0, 1)"));
        }
        if self.stall_window == 0 {
            return Err(Error::domain("stall_window must be >= 1"));
        }
        Ok(())
    }

    pub fn resolved_eps(&self, sys: &SysModel) -> f64 {
        self.eps_feas.unwrap_or(1e-6 * (1.0 + sys.a.frob()))
    }
}

/// `phi` making `(beta, phi)` sit on `(1-rho) ln beta + rho ln phi = -delta`.
///
/// Defined for `beta` in `(0, e^{-delta/(1-rho)}]`; at the right endpoint the
/// curve gives `phi = 1` and the result is clamped there against rounding.
pub fn phi_on_curve(beta: f64, rho: f64, delta: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain("phi_on_curve needs rho in (0, 1)"));
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::domain("delta must be finite and > 0"));
    }
    let upper = (-delta / (1.0 - rho)).exp();
    if !beta.is_finite() || beta <= 0.0 || beta > upper * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "beta = {beta} outside (0, {upper}]; larger beta would force phi < 1"
        )));
    }
    let phi = (-((1.0 - rho) * beta.ln() + delta) / rho).exp();
    Ok(phi.max(1.0))
}

/// A feasible LMI point.
#[derive(Clone, Debug)]
pub struct LmiSolution {
    /// Trace-normalized: `trace(Q) = n`.
    pub q: Mat,
    pub m: Mat,
    pub iterations: usize,
    /// Margin deficit at acceptance (0 when accepted cleanly).
    pub residual: f64,
}

/// Linear images of the decision variables, for least-squares projection
/// back onto the affine set `{(Q, M) : trace(Q) = n}`. Pinning the trace
/// removes the homogeneity degree of freedom, so the strict-feasibility
/// margin `eps` means the same thing at every iterate.
struct Subspace {
    n: usize,
    m_rows: usize,
    /// (Q basis element or zero, M basis element or zero) images.
    imgs1: Vec<Mat>,
    imgs2: Vec<Mat>,
    /// Map from retained variable slot to (sym Q index | M index).
    vars: Vec<VarKind>,
    gram_inv: Mat,
    /// trace(Q) as a linear functional of the coefficient vector.
    trace_vec: Vec<f64>,
    with_growth: bool,
}

#[derive(Clone, Copy)]
enum VarKind {
    Q(usize, usize),
    M(usize, usize),
}

fn assemble_blocks(
    sys: &SysModel,
    q: &Mat,
    m: &Mat,
    beta: f64,
    phi: Option<f64>,
) -> Result<(Mat, Option<Mat>)> {
    let aq = sys.a.matmul(q);
    let aq_bm = aq.add(&sys.b.matmul(m));
    let l1 = matrix::block2x2(&q.scale(beta), &aq_bm, q)?;
    let l2 = match phi {
        Some(phi) => Some(matrix::block2x2(&q.scale(phi), &aq, q)?),
        None => None,
    };
    Ok((l1, l2))
}

impl Subspace {
    fn build(sys: &SysModel, beta: f64, phi: Option<f64>) -> Result<Subspace> {
        let n = sys.n();
        let m_rows = sys.m();
        let mut vars = Vec::new();
        for i in 0..n {
            for j in i..n {
                vars.push(VarKind::Q(i, j));
            }
        }
        for r in 0..m_rows {
            for c in 0..n {
                vars.push(VarKind::M(r, c));
            }
        }
        let zero_block = Mat::zeros(2 * n, 2 * n);
        let mut imgs1 = Vec::new();
        let mut imgs2 = Vec::new();
        let mut kept = Vec::new();
        for var in vars {
            let mut qb = Mat::zeros(n, n);
            let mut mb = Mat::zeros(m_rows, n);
            match var {
                VarKind::Q(i, j) => {
                    qb[(i, j)] = 1.0;
                    qb[(j, i)] = 1.0;
                }
                VarKind::M(r, c) => mb[(r, c)] = 1.0,
            }
            let (i1, i2) = assemble_blocks(sys, &qb, &mb, beta, phi)?;
            let i2 = i2.unwrap_or_else(|| zero_block.clone());
            // Variables with no effect (e.g. M columns when B = 0) are
            // dropped so the Gram matrix stays invertible.
            if i1.frob() == 0.0 && i2.frob() == 0.0 {
                continue;
            }
            imgs1.push(i1);
            imgs2.push(i2);
            kept.push(var);
        }
        let d = kept.len();
        let mut gram = Mat::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let g = imgs1[a].frob_dot(&imgs1[b]) + imgs2[a].frob_dot(&imgs2[b]);
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        let gram_inv = matrix::inverse(&gram)?;
        let trace_vec = kept
            .iter()
            .map(|v| match v {
                VarKind::Q(i, j) if i == j => 1.0,
                _ => 0.0,
            })
            .collect();
        Ok(Subspace {
            n,
            m_rows,
            imgs1,
            imgs2,
            vars: kept,
            gram_inv,
            trace_vec,
            with_growth: phi.is_some(),
        })
    }

    /// Least-squares projection of target blocks onto the subspace
    /// intersected with `trace(Q) = n`, returning the realizing (Q, M).
    fn project(&self, y1: &Mat, y2: Option<&Mat>) -> (Mat, Mat) {
        let d = self.vars.len();
        let mut rhs = Vec::with_capacity(d);
        for t in 0..d {
            let mut v = self.imgs1[t].frob_dot(y1);
            if let Some(y2) = y2 {
                v += self.imgs2[t].frob_dot(y2);
            }
            rhs.push(v);
        }
        let free = self.gram_inv.matvec(&rhs);
        // One KKT multiplier enforces the trace hyperplane.
        let corr = self.gram_inv.matvec(&self.trace_vec);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mu = (self.n as f64 - dot(&self.trace_vec, &free)) / dot(&self.trace_vec, &corr);
        let mut q = Mat::zeros(self.n, self.n);
        let mut m = Mat::zeros(self.m_rows, self.n);
        for ((uf, uc), var) in free.iter().zip(&corr).zip(&self.vars) {
            let c = uf + mu * uc;
            match *var {
                VarKind::Q(i, j) => {
                    q[(i, j)] += c;
                    if i != j {
                        q[(j, i)] += c;
                    }
                }
                VarKind::M(r, cc) => m[(r, cc)] += c,
            }
        }
        (q, m)
    }
}

fn clip_floor(eig: &matrix::SymEig, floor: f64) -> Mat {
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(floor)).collect();
    eig.assemble(&clipped)
}

/// Douglas-Rachford feasibility search. `phi = None` drops the growth
/// block (used by the `rho = 0` special case).
fn dr_solve(
    sys: &SysModel,
    beta: f64,
    phi: Option<f64>,
    cfg: &SynthesisConfig,
    eps: f64,
    warm: Option<(&Mat, &Mat)>,
) -> Result<(Option<LmiSolution>, usize, f64)> {
    let n = sys.n();
    let nf = n as f64;
    let sub = Subspace::build(sys, beta, phi)?;
    debug_assert_eq!(sub.with_growth, phi.is_some());
    let (q0, m0) = match warm {
        Some((q0, m0)) => {
            let tr = q0.trace();
            if !tr.is_finite() || tr <= 0.0 {
                return Err(Error::domain("warm start needs trace(Q) > 0"));
            }
            (q0.scale(nf / tr), m0.scale(nf / tr))
        }
        None => (Mat::identity(n), Mat::zeros(sys.m(), n)),
    };
    let (mut z1, mut z2) = assemble_blocks(sys, &q0, &m0, beta, phi)?;
    let mut best = f64::INFINITY;
    let mut since_progress = 0usize;
    let mut deficit = f64::INFINITY;
    for iter in 0..cfg.max_iters {
        // Reflect through the cone, project onto the affine set, evaluate
        // the affine-side candidate.
        let e1 = matrix::sym_eig(&z1.symmetrize())?;
        let a1 = clip_floor(&e1, 2.0 * eps);
        let a2 = match &z2 {
            Some(z2) => {
                let e = matrix::sym_eig(&z2.symmetrize())?;
                Some(clip_floor(&e, 2.0 * eps))
            }
            None => None,
        };
        let r1 = a1.scale(2.0).sub(&z1);
        let r2 = a2.as_ref().map(|a2| a2.scale(2.0).sub(z2.as_ref().unwrap()));
        let (q, m) = sub.project(&r1, r2.as_ref());
        let (b1, b2) = assemble_blocks(sys, &q, &m, beta, phi)?;
        let lam1 = matrix::sym_eig(&b1.symmetrize())?.values[0];
        let lam2 = match &b2 {
            Some(b2) => matrix::sym_eig(&b2.symmetrize())?.values[0],
            None => f64::INFINITY,
        };
        // trace(Q) = n is maintained by the affine projection (exact up to
        // rounding), so eps is an absolute margin.
        if lam1 >= eps && lam2 >= eps {
            let c = nf / q.trace();
            let sol = LmiSolution {
                q: q.scale(c).symmetrize(),
                m: m.scale(c),
                iterations: iter,
                residual: 0.0,
            };
            return Ok((Some(sol), iter, 0.0));
        }
        deficit = (eps - lam1).max(0.0) + (eps - lam2).max(0.0);
        if deficit < best * (1.0 - cfg.conv_tol) {
            best = deficit;
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress >= cfg.stall_window {
                return Ok((None, iter, deficit));
            }
        }
        z1 = z1.add(&b1).sub(&a1);
        if let (Some(z2v), Some(b2), Some(a2)) = (&mut z2, &b2, &a2) {
            *z2v = z2v.add(b2).sub(a2);
        }
    }
    Ok((None, cfg.max_iters, deficit))
}

/// Search for `(Q, M)` satisfying both block LMIs with margin
/// `eps_feas` from a cold start. Absence is a value, not an error.
pub fn lmi_feasible(
    sys: &SysModel,
    beta: f64,
    phi: f64,
    cfg: &SynthesisConfig,
) -> Result<Option<LmiSolution>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain("beta must lie in (0, 1)"));
    }
    if !phi.is_finite() || phi < 1.0 {
        return Err(Error::domain("phi must be finite and >= 1"));
    }
    let (sol, _, _) = dr_solve(sys, beta, Some(phi), cfg, cfg.resolved_eps(sys), None)?;
    Ok(sol)
}

/// Same search warm-started from a previous solution.
pub fn lmi_feasible_warm(
    sys: &SysModel,
    beta: f64,
    phi: f64,
    cfg: &SynthesisConfig,
    q0: &Mat,
    m0: &Mat,
) -> Result<Option<LmiSolution>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain("beta must lie in (0, 1)"));
    }
    if !phi.is_finite() || phi < 1.0 {
        return Err(Error::domain("phi must be finite and >= 1"));
    }
    let (sol, _, _) = dr_solve(sys, beta, Some(phi), cfg, cfg.resolved_eps(sys), Some((q0, m0)))?;
    Ok(sol)
}

/// One scanned grid point.
#[derive(Clone, Debug, Serialize)]
pub struct ScanEntry {
    pub beta: f64,
    pub phi: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// A synthesized controller with its certificate.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub beta: f64,
    pub phi: f64,
    pub q: Mat,
    pub m: Mat,
    pub p: Mat,
    pub gain: Mat,
    pub certificate: StabilityCertificate,
    pub iterations: usize,
    pub residual: f64,
}

/// Outcome of a full grid scan; `result` is `None` when nothing on the grid
/// was feasible.
#[derive(Clone, Debug)]
pub struct SynthesisReport {
    pub result: Option<SynthesisResult>,
    pub scan: Vec<ScanEntry>,
    pub eps_feas: f64,
    pub config: SynthesisConfig,
}

/// Largest generalized eigenvalue of `A' P A` against `P`: the smallest
/// growth factor `phi` any certificate with this `P` can use.
fn min_growth_scale(sys: &SysModel, p: &Mat) -> Result<f64> {
    let pe = matrix::sym_eig(p)?;
    if !pe.values[0].is_finite() || pe.values[0] <= 0.0 {
        return Err(Error::domain("P must be positive definite"));
    }
    let n = p.rows();
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = pe.vectors[(i, j)] / pe.values[j].sqrt();
        }
    }
    let s = sys.a.transpose().matmul(&p.matmul(&sys.a));
    let t = w.transpose().matmul(&s.matmul(&w)).symmetrize();
    Ok(*matrix::sym_eig(&t)?.values.last().unwrap())
}

fn finish_point(
    sys: &SysModel,
    sol: LmiSolution,
    beta: f64,
    phi: f64,
    rho: f64,
) -> Result<Option<SynthesisResult>> {
    let p = matrix::inverse(&sol.q)?.symmetrize();
    let gain = sol.m.matmul(&p);
    let certificate = certify::check_lmi(sys, &sol.q, &sol.m, beta, phi, rho, TOL_STRICT)?;
    if !certificate.passes {
        return Ok(None);
    }
    Ok(Some(SynthesisResult {
        beta,
        phi,
        q: sol.q,
        m: sol.m,
        p,
        gain,
        certificate,
        iterations: sol.iterations,
        residual: sol.residual,
    }))
}

/// Scan the beta grid descending and return the first certified point.
pub fn synthesize_gain(sys: &SysModel, cfg: &SynthesisConfig) -> Result<SynthesisReport> {
    cfg.validate()?;
    let eps = cfg.resolved_eps(sys);
    if cfg.rho == 1.0 {
        return Err(Error::Infeasible(
            "rho = 1 forces nonnegative drift for any phi >= 1; no certificate exists".into(),
        ));
    }

    if cfg.rho == 0.0 {
        // Drift is ln(beta) alone; the curve collapses to beta = e^{-delta}
        // and the growth condition drops out. Solve the contraction LMI,
        // then report the smallest admissible phi for the recovered P.
        let beta = (-cfg.delta).exp();
        let (sol, iters, residual) = dr_solve(sys, beta, None, cfg, eps, None)?;
        let mut scan = vec![ScanEntry {
            beta,
            phi: 1.0,
            feasible: sol.is_some(),
            iterations: iters,
            residual,
        }];
        let result = match sol {
            Some(sol) => {
                let p = matrix::inverse(&sol.q)?.symmetrize();
                let phi = (min_growth_scale(sys, &p)? * (1.0 + 1e-6)).max(1.0);
                scan[0].phi = phi;
                finish_point(sys, sol, beta, phi, 0.0)?
            }
            None => None,
        };
        return Ok(SynthesisReport { result, scan, eps_feas: eps, config: cfg.clone() });
    }

    let upper = (-cfg.delta / (1.0 - cfg.rho)).exp();
    if cfg.beta_min >= upper {
        return Err(Error::domain(format!(
            "beta_min = {} is above the curve endpoint {upper}",
            cfg.beta_min
        )));
    }
    let ratio = (cfg.beta_min / upper).powf(1.0 / (cfg.grid_points as f64 - 1.0));
    let mut scan = Vec::with_capacity(cfg.grid_points);
    let mut result = None;
    for i in 0..cfg.grid_points {
        let beta = upper * ratio.powi(i as i32);
        let phi = phi_on_curve(beta, cfg.rho, cfg.delta)?;
        let (sol, iters, residual) = dr_solve(sys, beta, Some(phi), cfg, eps, None)?;
        let feasible = sol.is_some();
        scan.push(ScanEntry { beta, phi, feasible, iterations: iters, residual });
        if let Some(sol) = sol {
            if let Some(r) = finish_point(sys, sol, beta, phi, cfg.rho)? {
                result = Some(r);
                break;
            }
            scan.last_mut().unwrap().feasible = false;
        }
    }
    Ok(SynthesisReport { result, scan, eps_feas: eps, config: cfg.clone() })
}
