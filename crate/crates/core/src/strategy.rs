//! Executable policies: extraction from a solved stack, exact evaluation by
//! backward expectation, and forward Monte Carlo.
//!
//! The timing convention is frozen crate-wide: an order placed at step `τ`
//! locks further decisions until it executes at `τ + d`, where the cumulative
//! shift changes and the discounted cost `e^{-r·t_{τ+d}}·ψ(β)` is charged.
//! Rewards at steps `τ+d` and later see the shifted point.  A new order may
//! be placed at `τ + d` itself.

use std::io::Write;

use thiserror::Error;

use crate::iterate::{running_table, Mode, ValueStack};
use crate::model::Instance;
use crate::rng::SplitMix64;
use crate::snell::{attains, Plane};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StrategyError {
    #[error("policy impulses at ({step}, {state}, {point}) with no budget")]
    NoBudget { step: usize, state: usize, point: usize },
    #[error("policy impulses at step {step}, past the last decision step {last}")]
    LateImpulse { step: usize, last: usize },
    #[error("policy shift of impulse {impulse} leaves the lattice at point {point}")]
    OffLatticeShift { impulse: usize, point: usize },
    #[error("num_paths must be >= 1")]
    NoPaths,
}

/// One decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Wait,
    Impulse(usize),
}

/// Full description of where a controlled path stands.
///
/// `pending = Some((impulse, k))` means an order executes in `k` more steps
/// (`k` in `1..delay_steps`) and blocks new orders until then.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedState {
    pub step: usize,
    pub state: usize,
    pub executed: usize,
    pub pending: Option<(usize, usize)>,
    pub budget: usize,
}

/// Decision table over `(step, state, lattice point, remaining budget)`.
///
/// Dense and total: entries the dynamics can never reach are `Wait`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_steps: usize,
    num_states: usize,
    num_points: usize,
    n_max: usize,
    stop_tol: f64,
    /// 0 = wait, 1 + b = impulse b.
    actions: Vec<u16>,
}

impl Policy {
    /// Policy that never intervenes.
    pub fn all_wait(num_steps: usize, num_states: usize, num_points: usize, n_max: usize) -> Self {
        Self {
            num_steps,
            num_states,
            num_points,
            n_max,
            stop_tol: 0.0,
            actions: vec![0; num_steps * num_states * num_points * (n_max + 1)],
        }
    }

    pub fn for_instance(inst: &Instance, n_max: usize) -> Self {
        Self::all_wait(inst.grid.num_steps, inst.num_states(), inst.num_points(), n_max)
    }

    #[inline]
    fn idx(&self, step: usize, state: usize, point: usize, budget: usize) -> usize {
        debug_assert!(step < self.num_steps);
        debug_assert!(budget <= self.n_max);
        ((step * self.num_states + state) * self.num_points + point) * (self.n_max + 1) + budget
    }

    pub fn set_action(&mut self, step: usize, state: usize, point: usize, budget: usize, a: Action) {
        let i = self.idx(step, state, point, budget);
        self.actions[i] = match a {
            Action::Wait => 0,
            Action::Impulse(b) => 1 + b as u16,
        };
    }

    /// The decision at a node.  Steps at or beyond the horizon wait.
    #[inline]
    pub fn decide(&self, step: usize, state: usize, point: usize, budget: usize) -> Action {
        if step >= self.num_steps {
            return Action::Wait;
        }
        match self.actions[self.idx(step, state, point, budget.min(self.n_max))] {
            0 => Action::Wait,
            b => Action::Impulse((b - 1) as usize),
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn stop_tol(&self) -> f64 {
        self.stop_tol
    }

    pub fn count_impulse_cells(&self) -> usize {
        self.actions.iter().filter(|&&a| a != 0).count()
    }

    /// CSV export: `step,state_index,lattice_index,budget,action,beta_index`,
    /// rows in lexicographic order of the first four columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,state_index,lattice_index,budget,action,beta_index")?;
        for step in 0..self.num_steps {
            for state in 0..self.num_states {
                for point in 0..self.num_points {
                    for budget in 0..=self.n_max {
                        match self.decide(step, state, point, budget) {
                            Action::Wait => {
                                writeln!(w, "{step},{state},{point},{budget},wait,")?
                            }
                            Action::Impulse(b) => {
                                writeln!(w, "{step},{state},{point},{budget},impulse,{b}")?
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads the optimal policy off a solved stack: intervene at `(i, x, c)` with
/// budget `m >= 1` exactly where the obstacle attains the envelope of
/// iteration `m` (within `stop_tol`, relative), choosing the first-argmax
/// impulse recorded with the obstacle.
pub fn extract_policy(stack: &ValueStack, inst: &Instance, stop_tol: f64) -> Policy {
    let n = inst.grid.num_steps;
    let last = inst.grid.last_decision_step();
    let mut policy = Policy::for_instance(inst, stack.n_max);
    policy.stop_tol = stop_tol;
    for m in 1..=stack.n_max {
        let j = m.min(stack.report.stopped_at);
        if j == 0 {
            break; // nothing beyond Y0 was computed: never intervene
        }
        let y = &stack.values[j];
        let obstacle = &stack.obstacles[j - 1];
        let argmax = &stack.argmax[j - 1];
        for i in 0..=last.min(n - 1) {
            for x in 0..inst.num_states() {
                for c in 0..inst.num_points() {
                    if let Some(b) = argmax.get(i, x, c) {
                        if attains(y.get(i, x, c), obstacle.get(i, x, c), stop_tol) {
                            policy.set_action(i, x, c, m, Action::Impulse(b));
                        }
                    }
                }
            }
        }
    }
    policy
}

/// Expected payoff estimate; `std_error` is zero for exact computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffEstimate {
    pub value: f64,
    pub std_error: f64,
    pub num_paths: usize,
    pub mode: Mode,
}

/// Exact expected payoff of `policy`, by backward expectation over the
/// augmented state space with every decision frozen to the policy.
pub fn evaluate_exact(
    policy: &Policy,
    inst: &Instance,
    mode: Mode,
) -> Result<PayoffEstimate, StrategyError> {
    let value = frozen_policy_value(policy, inst, mode)?;
    Ok(PayoffEstimate {
        value,
        std_error: 0.0,
        num_paths: 0,
        mode,
    })
}

fn frozen_policy_value(policy: &Policy, inst: &Instance, mode: Mode) -> Result<f64, StrategyError> {
    let n = inst.grid.num_steps;
    let d = inst.grid.delay_steps;
    let s = inst.num_states();
    let c = inst.num_points();
    let p = inst.impulses.len();
    let n_max = policy.n_max();
    let last = inst.grid.last_decision_step();
    let running = running_table(inst, mode);
    let sensitive = mode.is_sensitive();
    let theta = match mode {
        Mode::RiskNeutral => 0.0,
        Mode::RiskSensitive { theta } => theta,
    };

    let tail = inst.grid.tail_value();
    let terminal = if sensitive { (theta * tail).exp() } else { tail };

    // Rolling step slices: value with no pending order, per remaining budget,
    // and value with a pending order, per (budget after the order, impulse,
    // steps to execution).
    let mut none_next: Vec<Plane> = (0..=n_max).map(|_| Plane::filled(s, c, terminal)).collect();
    // pend[m][b][j-1], valid when (step+1) + j <= n.
    let mut pend_next: Vec<Vec<Vec<Option<Plane>>>> =
        vec![vec![vec![None; d.saturating_sub(1)]; p]; n_max + 1];

    for i in (0..n).rev() {
        let exec_disc = inst.grid.discount_at(i + 1);
        // Pending slices at step i.
        let mut pend_cur: Vec<Vec<Vec<Option<Plane>>>> =
            vec![vec![vec![None; d.saturating_sub(1)]; p]; n_max + 1];
        for m in 0..=n_max {
            for b in 0..p {
                for j in 1..d {
                    if i + j > n {
                        continue;
                    }
                    let mut plane = Plane::zeros(s, c);
                    for x in 0..s {
                        for q in 0..c {
                            let run = running.get(i, x, q);
                            let v = if j == 1 {
                                let Some(shifted) = inst.lattice.shift(q, b) else {
                                    // Unreachable column: an order at q was
                                    // never placeable.  Poison, never read.
                                    plane.set(x, q, f64::NAN);
                                    continue;
                                };
                                let mut e = 0.0;
                                for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                    e += pr * none_next[m].get(y, shifted);
                                }
                                if sensitive {
                                    run * (-theta * exec_disc * inst.impulses.cost(b)).exp() * e
                                } else {
                                    run - exec_disc * inst.impulses.cost(b) + e
                                }
                            } else {
                                let prev = pend_next[m][b][j - 2]
                                    .as_ref()
                                    .expect("pending chain stays inside the horizon");
                                let mut e = 0.0;
                                for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                    e += pr * prev.get(y, q);
                                }
                                if sensitive {
                                    run * e
                                } else {
                                    run + e
                                }
                            };
                            plane.set(x, q, v);
                        }
                    }
                    pend_cur[m][b][j - 1] = Some(plane);
                }
            }
        }

        // No-pending slices at step i, decisions frozen to the policy.
        let mut none_cur: Vec<Plane> = Vec::with_capacity(n_max + 1);
        for m in 0..=n_max {
            let mut plane = Plane::zeros(s, c);
            for x in 0..s {
                for q in 0..c {
                    let run = running.get(i, x, q);
                    let v = match policy.decide(i, x, q, m) {
                        Action::Wait => {
                            let mut e = 0.0;
                            for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                e += pr * none_next[m].get(y, q);
                            }
                            if sensitive {
                                run * e
                            } else {
                                run + e
                            }
                        }
                        Action::Impulse(b) => {
                            if m == 0 {
                                return Err(StrategyError::NoBudget {
                                    step: i,
                                    state: x,
                                    point: q,
                                });
                            }
                            if i > last {
                                return Err(StrategyError::LateImpulse { step: i, last });
                            }
                            if d == 1 {
                                let shifted = inst.lattice.shift(q, b).ok_or(
                                    StrategyError::OffLatticeShift { impulse: b, point: q },
                                )?;
                                let mut e = 0.0;
                                for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                    e += pr * none_next[m - 1].get(y, shifted);
                                }
                                if sensitive {
                                    run * (-theta * exec_disc * inst.impulses.cost(b)).exp() * e
                                } else {
                                    run - exec_disc * inst.impulses.cost(b) + e
                                }
                            } else {
                                if inst.lattice.shift(q, b).is_none() {
                                    return Err(StrategyError::OffLatticeShift {
                                        impulse: b,
                                        point: q,
                                    });
                                }
                                let pend = pend_next[m - 1][b][d - 2]
                                    .as_ref()
                                    .expect("order placed at i <= N - d executes inside the horizon");
                                let mut e = 0.0;
                                for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                    e += pr * pend.get(y, q);
                                }
                                if sensitive {
                                    run * e
                                } else {
                                    run + e
                                }
                            }
                        }
                    };
                    plane.set(x, q, v);
                }
            }
            none_cur.push(plane);
        }

        none_next = none_cur;
        pend_next = pend_cur;
    }

    Ok(none_next[n_max].get(inst.chain.initial_state(), inst.lattice.origin()))
}

/// Expected number of executed orders under the policy (plain chain measure,
/// regardless of mode) — bookkeeping for parameter sweeps.
pub fn expected_interventions(policy: &Policy, inst: &Instance) -> f64 {
    let n = inst.grid.num_steps;
    let d = inst.grid.delay_steps;
    let s = inst.num_states();
    let c = inst.num_points();
    let p = inst.impulses.len();
    let n_max = policy.n_max();

    let mut none_next: Vec<Plane> = (0..=n_max).map(|_| Plane::zeros(s, c)).collect();
    let mut pend_next: Vec<Vec<Vec<Option<Plane>>>> =
        vec![vec![vec![None; d.saturating_sub(1)]; p]; n_max + 1];

    for i in (0..n).rev() {
        let mut pend_cur: Vec<Vec<Vec<Option<Plane>>>> =
            vec![vec![vec![None; d.saturating_sub(1)]; p]; n_max + 1];
        for m in 0..=n_max {
            for b in 0..p {
                for j in 1..d {
                    if i + j > n {
                        continue;
                    }
                    let mut plane = Plane::zeros(s, c);
                    for x in 0..s {
                        for q in 0..c {
                            let v = if j == 1 {
                                match inst.lattice.shift(q, b) {
                                    Some(shifted) => inst
                                        .chain
                                        .expect(x, |y| none_next[m].get(y, shifted)),
                                    None => f64::NAN,
                                }
                            } else {
                                let prev = pend_next[m][b][j - 2].as_ref().unwrap();
                                inst.chain.expect(x, |y| prev.get(y, q))
                            };
                            plane.set(x, q, v);
                        }
                    }
                    pend_cur[m][b][j - 1] = Some(plane);
                }
            }
        }

        let mut none_cur: Vec<Plane> = Vec::with_capacity(n_max + 1);
        for m in 0..=n_max {
            let mut plane = Plane::zeros(s, c);
            for x in 0..s {
                for q in 0..c {
                    let v = match policy.decide(i, x, q, m) {
                        Action::Wait => inst.chain.expect(x, |y| none_next[m].get(y, q)),
                        Action::Impulse(b) if m >= 1 => {
                            if d == 1 {
                                match inst.lattice.shift(q, b) {
                                    Some(shifted) => {
                                        1.0 + inst
                                            .chain
                                            .expect(x, |y| none_next[m - 1].get(y, shifted))
                                    }
                                    None => f64::NAN,
                                }
                            } else {
                                match pend_next[m - 1][b][d - 2].as_ref() {
                                    Some(pend) => {
                                        1.0 + inst.chain.expect(x, |y| pend.get(y, q))
                                    }
                                    None => f64::NAN,
                                }
                            }
                        }
                        Action::Impulse(_) => f64::NAN,
                    };
                    plane.set(x, q, v);
                }
            }
            none_cur.push(plane);
        }
        none_next = none_cur;
        pend_next = pend_cur;
    }

    none_next[n_max].get(inst.chain.initial_state(), inst.lattice.origin())
}

/// Forward Monte Carlo evaluation of `policy` over `num_paths` independent
/// paths; reproducible bit for bit for a fixed seed.
pub fn simulate(
    policy: &Policy,
    inst: &Instance,
    mode: Mode,
    num_paths: usize,
    seed: u64,
) -> Result<PayoffEstimate, StrategyError> {
    if num_paths == 0 {
        return Err(StrategyError::NoPaths);
    }
    let n = inst.grid.num_steps;
    let d = inst.grid.delay_steps;
    let last = inst.grid.last_decision_step();
    let theta = match mode {
        Mode::RiskNeutral => 0.0,
        Mode::RiskSensitive { theta } => theta,
    };

    // Welford accumulation in path order: deterministic, and exactly zero
    // variance when every path produces the same value.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for path in 0..num_paths {
        let mut rng = SplitMix64::stream(seed, path as u64);
        let mut st = AugmentedState {
            step: 0,
            state: inst.chain.initial_state(),
            executed: inst.lattice.origin(),
            pending: None,
            budget: policy.n_max(),
        };
        let mut total = 0.0;
        let mut last_decision: Option<usize> = None;
        for i in 0..n {
            total += inst.grid.discount_at(i) * inst.reward_at(i, st.state, st.executed)
                * inst.grid.dt;
            if st.pending.is_none() {
                if let Action::Impulse(b) = policy.decide(i, st.state, st.executed, st.budget) {
                    if st.budget == 0 {
                        return Err(StrategyError::NoBudget {
                            step: i,
                            state: st.state,
                            point: st.executed,
                        });
                    }
                    if i > last {
                        return Err(StrategyError::LateImpulse { step: i, last });
                    }
                    // Orders never overlap: the gap to the previous decision
                    // is at least the delay.
                    assert!(
                        last_decision.map_or(true, |t| i - t >= d),
                        "delay lock violated on a simulated path"
                    );
                    last_decision = Some(i);
                    st.pending = Some((b, d));
                    st.budget -= 1;
                }
            }
            st.state = inst.chain.sample_next(st.state, rng.next_f64());
            st.step = i + 1;
            if let Some((b, left)) = st.pending {
                if left == 1 {
                    total -= inst.grid.discount_at(i + 1) * inst.impulses.cost(b);
                    st.executed = inst.lattice.shift(st.executed, b).ok_or(
                        StrategyError::OffLatticeShift {
                            impulse: b,
                            point: st.executed,
                        },
                    )?;
                    st.pending = None;
                } else {
                    st.pending = Some((b, left - 1));
                }
            }
        }
        total += inst.grid.tail_value();
        let value = match mode {
            Mode::RiskNeutral => total,
            Mode::RiskSensitive { .. } => (theta * total).exp(),
        };
        let k = (path + 1) as f64;
        let delta = value - mean;
        mean += delta / k;
        m2 += delta * (value - mean);
    }

    let std_error = if num_paths > 1 {
        (m2.max(0.0) / (num_paths as f64 - 1.0) / num_paths as f64).sqrt()
    } else {
        0.0
    };
    Ok(PayoffEstimate {
        value: mean,
        std_error,
        num_paths,
        mode,
    })
}
