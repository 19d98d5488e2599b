//! Infinite-horizon stochastic impulse control with execution delay, solved on
//! finite-state Markov chains.
//!
//! The controller watches a chain `X` and may, at any step, order an impulse
//! `β` from a finite set `U`.  The order takes effect `d` steps later: from the
//! execution step on, every reward evaluation sees the shifted state `x + c`
//! (with `c` the cumulative executed impulse) and the discounted cost
//! `ψ(β) = k + φ(β)` is charged at execution.  Orders cannot overlap, so
//! consecutive decision steps are at least `d` apart.
//!
//! The value function is approximated by iterated optimal stopping: start from
//! the no-intervention value `Y⁰`, then repeatedly reflect against the
//! intervention obstacle (expected reward over the delay window plus the best
//! post-impulse continuation minus the discounted cost).  The sequence `Yᵐ`
//! increases to the value of the problem, and `Yᵐ` itself is the optimal value
//! when at most `m` impulses remain.  A risk-sensitive variant replaces the
//! additive backward recursion with a multiplicative one for the criterion
//! `E[exp θ(payoff)]`.
//!
//! Module map:
//! - [`model`]: grids, chains, impulse sets, rewards, cumulative-impulse
//!   lattices, config parsing and validation.
//! - [`snell`]: backward-induction engine (additive and multiplicative) and
//!   delay-window expectation folds.
//! - [`iterate`]: the iterated-obstacle scheme and its convergence report.
//! - [`strategy`]: policy extraction, exact policy evaluation, Monte Carlo.
//! - [`oracle`]: independent ground truth (augmented-state Bellman solver and
//!   exhaustive strategy enumeration) plus the cross-check harness.
//! - [`rng`]: counter-based deterministic random streams.

pub mod iterate;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod snell;
pub mod strategy;

#[cfg(test)]
pub(crate) mod testutil;
