//! Aggregate invariant checking over a full problem description.

use super::chain::row_violation;
use super::{build_lattice, ChainModel, GridSpec, ImpulseSpec, RewardSpec};

const BOUND_TOL: f64 = 1e-12;
const MAX_REPORTED: usize = 100;

/// Outcome of [`validate`]: every violated invariant, plus the horizon
/// truncation error bound `(γ/r)·e^{-rT}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub tail_bound: f64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every type invariant and scans the reward over the reachable
/// grid × lattice product.  Pure: identical input produces an identical
/// report, and bad input is reported rather than panicking.
pub fn validate(
    grid: &GridSpec,
    chain: &ChainModel,
    impulses: &ImpulseSpec,
    reward: &RewardSpec,
    n_max: usize,
) -> ValidationReport {
    let mut v: Vec<String> = Vec::new();

    v.extend(grid.violations());

    for i in 0..chain.num_states() {
        if let Some(msg) = row_violation(i, chain.row(i)) {
            v.push(msg);
        }
    }
    for (i, s) in chain.state_values().iter().enumerate() {
        if s.iter().any(|x| !x.is_finite()) {
            v.push(format!("state {i} has non-finite coordinates"));
        }
    }
    if chain.initial_state() >= chain.num_states() {
        v.push(format!(
            "initial state {} out of range (num states {})",
            chain.initial_state(),
            chain.num_states()
        ));
    }

    if !(impulses.fixed_cost().is_finite() && impulses.fixed_cost() > 0.0) {
        v.push(format!(
            "fixed cost must be finite and > 0, got {}",
            impulses.fixed_cost()
        ));
    }
    for i in 0..impulses.len() {
        let c = impulses.variable_cost(i);
        if !(c.is_finite() && c >= 0.0) {
            v.push(format!("variable cost of impulse {i} must be finite and >= 0, got {c}"));
        }
        if impulses.vector(i).iter().any(|x| !x.is_finite()) {
            v.push(format!("impulse {i} has non-finite coordinates"));
        }
    }

    let gamma = reward.bound;
    if !(gamma.is_finite() && gamma >= 0.0) {
        v.push(format!("reward bound must be finite and >= 0, got {gamma}"));
    }

    if chain.dim() != impulses.dim() {
        v.push(format!(
            "state dimension {} does not match impulse dimension {}",
            chain.dim(),
            impulses.dim()
        ));
    } else if gamma.is_finite() && gamma >= 0.0 {
        // Exhaustive scan of h over grid steps × states × reachable shifts.
        let lattice = build_lattice(impulses, n_max);
        let tol = BOUND_TOL * (1.0 + gamma);
        let mut reported = 0usize;
        let mut suppressed = 0usize;
        for step in 0..grid.num_steps {
            let t = grid.time(step);
            for state in 0..chain.num_states() {
                for point in 0..lattice.len() {
                    let y: Vec<f64> = chain
                        .state_value(state)
                        .iter()
                        .zip(lattice.point(point))
                        .map(|(a, b)| a + b)
                        .collect();
                    let h = reward.value(step, t, &y);
                    let bad = !h.is_finite() || h < -tol || h > gamma + tol;
                    if bad {
                        if reported < MAX_REPORTED {
                            v.push(format!(
                                "reward out of [0, {gamma}] at step {step}, state {state}, \
                                 lattice point {point}: h = {h}"
                            ));
                            reported += 1;
                        } else {
                            suppressed += 1;
                        }
                    }
                }
            }
        }
        if suppressed > 0 {
            v.push(format!("... and {suppressed} more reward bound violations"));
        }
    }

    ValidationReport {
        violations: v,
        tail_bound: grid.tail_bound(gamma),
    }
}
