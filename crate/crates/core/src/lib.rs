//! Event-triggered control of a linear plant over a lossy, jammable channel.
//!
//! A plant `x(t+1) = A x(t) + B u(t)` is stabilized through a network: at
//! trigger instants the sensor and controller attempt a packet exchange, and
//! on failure the plant input is zeroed until the next attempt. Failures come
//! from two sources: a time-inhomogeneous binary Markov chain (random channel
//! losses) and a jamming attacker constrained to corrupt at most
//! `kappa + k/tau` of the first `k` attempts.
//!
//! The crate provides:
//!
//! - [`loss`]: samplers for both failure processes and their combination,
//!   with reproducible seeded streams and prefix-exact budget accounting;
//! - [`bounds`]: summable tail certificates `P[L(k) > rho k] <= gamma_k` for
//!   the combined failure count, in log-space, plus exact small-instance
//!   enumeration oracles that the tests check every bound against;
//! - [`sim`]: closed-loop simulation of the event trigger
//!   `t >= tau_i + theta  or  V(A x(t) + B u(tau_i)) > beta V(x(tau_i))`
//!   with full trajectory records;
//! - [`certify`]: verification of the stability conditions (contraction under
//!   successful feedback, bounded growth in open loop, negative log-drift)
//!   in both the direct `(P, K)` form and the convexified `(Q, M)` LMI form;
//! - [`synth`]: feedback-gain synthesis by scanning the curve
//!   `(1-rho) ln beta + rho ln phi = -Delta` and solving the LMI feasibility
//!   problem with a projection-splitting solver;
//! - [`matrix`]: the small dense-matrix kernel (cyclic Jacobi eigensolver,
//!   Gaussian elimination) everything above rests on;
//! - [`config`] and [`experiments`]: JSON experiment configs, the Monte Carlo
//!   harness and CSV/report writers used by the `jamsure` binary.

pub mod bounds;
pub mod certify;
pub mod config;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod matrix;
pub mod rng;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
