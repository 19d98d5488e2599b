//! Independent ground truth for the iterated scheme.
//!
//! [`bellman_oracle`] maximizes the same discretized payoff directly, by
//! backward induction over the augmented state (step, chain state, executed
//! shift, pending order, remaining budget).  It shares only the model types
//! and the timing convention with the iterate module — no Snell code, no
//! obstacle code — so agreement between the two is evidence, not tautology.
//! [`enumerate_tiny`] goes one step further on tiny instances and takes the
//! maximum of the frozen-policy payoff over every adapted strategy.

use thiserror::Error;

use crate::iterate::{self, running_table, FaultInjection, Mode};
use crate::model::Instance;
use crate::snell::{Plane, ValueTable};
use crate::strategy::{evaluate_exact, Action, Policy};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error(
        "instance too large for exhaustive enumeration: {strategies} strategies exceed {max} \
         (use the Bellman oracle instead)"
    )]
    TooLarge { strategies: u128, max: u128 },
}

/// Maximum number of strategies [`enumerate_tiny`] will walk.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// What a ground-truth solver reports.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    /// Optimal decisions (Bellman oracle only); ties prefer waiting, then the
    /// lowest impulse index.
    pub action_table: Option<Policy>,
    /// Number of strategies walked (enumerator only).
    pub strategy_count: Option<u128>,
}

/// Direct Bellman solution: optimal value over all adapted strategies with at
/// most `budget` orders, starting at the root node.
pub fn bellman_oracle(inst: &Instance, mode: Mode, budget: usize) -> OracleResult {
    let (tables, policy) = bellman_tables(inst, mode, budget);
    OracleResult {
        value: tables[budget].get(0, inst.chain.initial_state(), inst.lattice.origin()),
        action_table: Some(policy),
        strategy_count: None,
    }
}

/// Full no-pending value tables `V_m[step][state][point]` for every budget
/// `m = 0..=budget`, plus the optimal action table.
///
/// `V_m` at a node is the best payoff from there on when `m` orders remain
/// and none is pending; these are exactly the quantities the iterated scheme
/// claims to compute.
pub fn bellman_tables(inst: &Instance, mode: Mode, budget: usize) -> (Vec<ValueTable>, Policy) {
    let n = inst.grid.num_steps;
    let d = inst.grid.delay_steps;
    let s = inst.num_states();
    let c = inst.num_points();
    let p = inst.impulses.len();
    let last = inst.grid.last_decision_step();
    let running = running_table(inst, mode);
    let sensitive = mode.is_sensitive();
    let theta = match mode {
        Mode::RiskNeutral => 0.0,
        Mode::RiskSensitive { theta } => theta,
    };
    let tail = inst.grid.tail_value();
    let terminal = if sensitive { (theta * tail).exp() } else { tail };

    let mut tables: Vec<ValueTable> =
        (0..=budget).map(|_| ValueTable::zeros(n + 1, s, c)).collect();
    for t in tables.iter_mut() {
        t.set_plane(n, &Plane::filled(s, c, terminal));
    }
    let mut policy = Policy::for_instance(inst, budget);

    // Pending-order slices at step i+1: pend[m][b][j-1] is the value when the
    // order b executes in j steps and m orders remain afterwards.
    let mut pend_next: Vec<Vec<Vec<Option<Plane>>>> =
        vec![vec![vec![None; d.saturating_sub(1)]; p]; budget + 1];

    for i in (0..n).rev() {
        let exec_disc = inst.grid.discount_at(i + 1);
        let mut pend_cur: Vec<Vec<Vec<Option<Plane>>>> =
            vec![vec![vec![None; d.saturating_sub(1)]; p]; budget + 1];
        for m in 0..=budget {
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
                                match inst.lattice.shift(q, b) {
                                    None => f64::NAN, // never placeable here, never read
                                    Some(shifted) => {
                                        let mut e = 0.0;
                                        for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                            e += pr * tables[m].get(i + 1, y, shifted);
                                        }
                                        if sensitive {
                                            run * (-theta * exec_disc * inst.impulses.cost(b))
                                                .exp()
                                                * e
                                        } else {
                                            run - exec_disc * inst.impulses.cost(b) + e
                                        }
                                    }
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

        for m in 0..=budget {
            for x in 0..s {
                for q in 0..c {
                    let run = running.get(i, x, q);
                    let mut e = 0.0;
                    for (y, pr) in inst.chain.row(x).iter().enumerate() {
                        e += pr * tables[m].get(i + 1, y, q);
                    }
                    let wait = if sensitive { run * e } else { run + e };
                    let mut best = wait;
                    let mut best_action = Action::Wait;
                    if m >= 1 && i <= last {
                        for b in 0..p {
                            let Some(shifted) = inst.lattice.shift(q, b) else {
                                continue;
                            };
                            let cand = if d == 1 {
                                let mut e = 0.0;
                                for (y, pr) in inst.chain.row(x).iter().enumerate() {
                                    e += pr * tables[m - 1].get(i + 1, y, shifted);
                                }
                                if sensitive {
                                    run * (-theta * exec_disc * inst.impulses.cost(b)).exp() * e
                                } else {
                                    run - exec_disc * inst.impulses.cost(b) + e
                                }
                            } else {
                                let pend = pend_cur[m - 1][b][d - 2]
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
                            };
                            if cand > best {
                                best = cand;
                                best_action = Action::Impulse(b);
                            }
                        }
                    }
                    tables[m].set(i, x, q, best);
                    if best_action != Action::Wait {
                        policy.set_action(i, x, q, m, best_action);
                    }
                }
            }
        }
        pend_next = pend_cur;
    }

    (tables, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Node {
    step: usize,
    state: usize,
    point: usize,
    pending: Option<(usize, usize)>,
    budget: usize,
}

/// Brute force over every adapted strategy: on a Markov chain an adapted
/// strategy is a function of the augmented state, so the enumeration ranges
/// over all assignments of an action to each reachable decision node.  Guarded
/// by [`ENUMERATION_GUARD`]; feasible for horizons of a handful of steps with
/// one or two states and impulses.
pub fn enumerate_tiny(
    inst: &Instance,
    mode: Mode,
    budget: usize,
) -> Result<OracleResult, OracleError> {
    let decision_nodes = reachable_decision_nodes(inst, budget);
    let choices: Vec<Vec<Action>> = decision_nodes
        .iter()
        .map(|node| {
            let mut acts = vec![Action::Wait];
            for b in 0..inst.impulses.len() {
                if inst.lattice.shift(node.point, b).is_some() {
                    acts.push(Action::Impulse(b));
                }
            }
            acts
        })
        .collect();

    let mut strategies: u128 = 1;
    for ch in &choices {
        strategies = strategies.saturating_mul(ch.len() as u128);
        if strategies > ENUMERATION_GUARD {
            return Err(OracleError::TooLarge {
                strategies,
                max: ENUMERATION_GUARD,
            });
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut digits = vec![0usize; decision_nodes.len()];
    loop {
        let mut policy = Policy::for_instance(inst, budget);
        for (k, node) in decision_nodes.iter().enumerate() {
            policy.set_action(
                node.step,
                node.state,
                node.point,
                node.budget,
                choices[k][digits[k]],
            );
        }
        let value = evaluate_exact(&policy, inst, mode)
            .expect("enumerated actions are feasible by construction")
            .value;
        // First-found winner in enumeration order.
        if value > best {
            best = value;
        }

        // Advance the mixed-radix counter.
        let mut k = 0;
        loop {
            if k == digits.len() {
                return Ok(OracleResult {
                    value: best,
                    action_table: None,
                    strategy_count: Some(strategies),
                });
            }
            digits[k] += 1;
            if digits[k] < choices[k].len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Forward reachability over the augmented dynamics; returns the no-pending
/// nodes where a genuine choice exists, in deterministic sorted order.
fn reachable_decision_nodes(inst: &Instance, budget: usize) -> Vec<Node> {
    let n = inst.grid.num_steps;
    let d = inst.grid.delay_steps;
    let last = inst.grid.last_decision_step();
    let root = Node {
        step: 0,
        state: inst.chain.initial_state(),
        point: inst.lattice.origin(),
        pending: None,
        budget,
    };
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = std::collections::VecDeque::new();
    seen.insert(root);
    queue.push_back(root);
    while let Some(node) = queue.pop_front() {
        if node.step >= n {
            continue;
        }
        let successors_states: Vec<usize> = inst
            .chain
            .row(node.state)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(y, _)| y)
            .collect();
        let push = |next: Node, seen: &mut std::collections::BTreeSet<Node>,
                    queue: &mut std::collections::VecDeque<Node>| {
            if seen.insert(next) {
                queue.push_back(next);
            }
        };
        match node.pending {
            Some((b, left)) => {
                for &y in &successors_states {
                    let next = if left == 1 {
                        Node {
                            step: node.step + 1,
                            state: y,
                            point: inst
                                .lattice
                                .shift(node.point, b)
                                .expect("pending order was placeable"),
                            pending: None,
                            budget: node.budget,
                        }
                    } else {
                        Node {
                            step: node.step + 1,
                            state: y,
                            point: node.point,
                            pending: Some((b, left - 1)),
                            budget: node.budget,
                        }
                    };
                    push(next, &mut seen, &mut queue);
                }
            }
            None => {
                // Wait.
                for &y in &successors_states {
                    push(
                        Node {
                            step: node.step + 1,
                            state: y,
                            point: node.point,
                            pending: None,
                            budget: node.budget,
                        },
                        &mut seen,
                        &mut queue,
                    );
                }
                // Place each available order.
                if node.budget >= 1 && node.step <= last {
                    for b in 0..inst.impulses.len() {
                        let Some(shifted) = inst.lattice.shift(node.point, b) else {
                            continue;
                        };
                        for &y in &successors_states {
                            let next = if d == 1 {
                                Node {
                                    step: node.step + 1,
                                    state: y,
                                    point: shifted,
                                    pending: None,
                                    budget: node.budget - 1,
                                }
                            } else {
                                Node {
                                    step: node.step + 1,
                                    state: y,
                                    point: node.point,
                                    pending: Some((b, d - 1)),
                                    budget: node.budget - 1,
                                }
                            };
                            push(next, &mut seen, &mut queue);
                        }
                    }
                }
            }
        }
    }

    seen.into_iter()
        .filter(|node| {
            node.pending.is_none()
                && node.budget >= 1
                && node.step <= last
                && (0..inst.impulses.len())
                    .any(|b| inst.lattice.shift(node.point, b).is_some())
        })
        .collect()
}

/// Agreement report between the iterated scheme and the oracles.
#[derive(Debug, Clone)]
pub struct CrossCheckReport {
    /// `sup |Yᵐ - Vᵐ|` over every (step, state, point) node, per budget `m`.
    pub budget_sup_diffs: Vec<f64>,
    /// Root-value gaps when the enumeration guard allowed a run.
    pub enum_vs_bellman: Option<f64>,
    pub enum_vs_iterate: Option<f64>,
    pub strategy_count: Option<u128>,
    pub tol: f64,
}

impl CrossCheckReport {
    pub fn max_discrepancy(&self) -> f64 {
        let mut m: f64 = 0.0;
        for &d in &self.budget_sup_diffs {
            m = m.max(d);
        }
        if let Some(d) = self.enum_vs_bellman {
            m = m.max(d);
        }
        if let Some(d) = self.enum_vs_iterate {
            m = m.max(d);
        }
        m
    }

    pub fn passed(&self) -> bool {
        self.max_discrepancy() <= self.tol
    }
}

/// Compares the iterated scheme against the Bellman oracle at every budget
/// `m = 0..=n_max` and every no-pending node, and against the exhaustive
/// enumerator whenever the guard allows.
pub fn cross_check(inst: &Instance, mode: Mode, n_max: usize, tol: f64) -> CrossCheckReport {
    cross_check_with_fault(inst, mode, n_max, tol, FaultInjection::None)
}

/// Same, with a deliberate defect injected into the iterate side; a passing
/// report under a non-trivial fault would mean the harness is insensitive.
pub fn cross_check_with_fault(
    inst: &Instance,
    mode: Mode,
    n_max: usize,
    tol: f64,
    fault: FaultInjection,
) -> CrossCheckReport {
    // The smallest positive tolerance only stops the loop at an exact
    // fixpoint, which the scheme preserves exactly thereafter.
    let stack = iterate::solve_with_fault(inst, mode, n_max, f64::MIN_POSITIVE, fault);
    let (tables, _) = bellman_tables(inst, mode, n_max);
    let budget_sup_diffs: Vec<f64> = (0..=n_max)
        .map(|m| stack.table(m).sup_diff(&tables[m]))
        .collect();

    let (mut enum_vs_bellman, mut enum_vs_iterate, mut strategy_count) = (None, None, None);
    if let Ok(res) = enumerate_tiny(inst, mode, n_max) {
        let root = (inst.chain.initial_state(), inst.lattice.origin());
        enum_vs_bellman = Some((res.value - tables[n_max].get(0, root.0, root.1)).abs());
        enum_vs_iterate = Some((res.value - stack.table(n_max).get(0, root.0, root.1)).abs());
        strategy_count = res.strategy_count;
    }

    CrossCheckReport {
        budget_sup_diffs,
        enum_vs_bellman,
        enum_vs_iterate,
        strategy_count,
        tol,
    }
}
