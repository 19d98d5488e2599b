//! Backward-induction engine: additive and multiplicative Snell envelopes on
//! a finite chain, plus exact conditional-expectation folds over a delay
//! window.
//!
//! Tables are indexed `[step][state][lattice point]`.  The lattice dimension
//! is inert here: transitions act on the chain state only, so every column
//! folds independently.  All reductions run in a fixed order, which makes
//! results bit-reproducible and preserves entrywise monotonicity of the
//! inputs through the arithmetic.

use thiserror::Error;

use crate::model::ChainModel;

/// Obstacle sentinel: stopping (intervening) is forbidden at this entry.
pub const FORBIDDEN: f64 = f64::NEG_INFINITY;

/// Default relative tolerance for deciding that the obstacle attains the
/// envelope.  Exact equality is the mathematical definition; in floating
/// point the test is `Y - O <= tol·(1 + |Y|)`.
pub const DEFAULT_STOP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SnellError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input in {0}")]
    NonFinite(String),
    #[error("step factor below one at step {step}, state {state}, point {point}: {value}")]
    FactorBelowOne {
        step: usize,
        state: usize,
        point: usize,
        value: f64,
    },
}

/// Dense table over `[step][state][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    num_steps: usize,
    num_states: usize,
    num_points: usize,
    data: Vec<f64>,
}

impl ValueTable {
    pub fn filled(num_steps: usize, num_states: usize, num_points: usize, value: f64) -> Self {
        Self {
            num_steps,
            num_states,
            num_points,
            data: vec![value; num_steps * num_states * num_points],
        }
    }

    pub fn zeros(num_steps: usize, num_states: usize, num_points: usize) -> Self {
        Self::filled(num_steps, num_states, num_points, 0.0)
    }

    pub fn from_fn(
        num_steps: usize,
        num_states: usize,
        num_points: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(num_steps, num_states, num_points);
        for i in 0..num_steps {
            for x in 0..num_states {
                for c in 0..num_points {
                    t.set(i, x, c, f(i, x, c));
                }
            }
        }
        t
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    #[inline]
    fn idx(&self, step: usize, state: usize, point: usize) -> usize {
        debug_assert!(step < self.num_steps && state < self.num_states && point < self.num_points);
        (step * self.num_states + state) * self.num_points + point
    }

    #[inline]
    pub fn get(&self, step: usize, state: usize, point: usize) -> f64 {
        self.data[self.idx(step, state, point)]
    }

    #[inline]
    pub fn set(&mut self, step: usize, state: usize, point: usize, value: f64) {
        let i = self.idx(step, state, point);
        self.data[i] = value;
    }

    /// Copy of one step slice.
    pub fn plane(&self, step: usize) -> Plane {
        let w = self.num_states * self.num_points;
        Plane {
            num_states: self.num_states,
            num_points: self.num_points,
            data: self.data[step * w..(step + 1) * w].to_vec(),
        }
    }

    pub fn set_plane(&mut self, step: usize, plane: &Plane) {
        assert_eq!(plane.num_states, self.num_states);
        assert_eq!(plane.num_points, self.num_points);
        let w = self.num_states * self.num_points;
        self.data[step * w..(step + 1) * w].copy_from_slice(&plane.data);
    }

    /// Sup-norm of the entrywise difference.
    pub fn sup_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        let mut m: f64 = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            m = m.max((a - b).abs());
        }
        m
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.num_steps == other.num_steps
            && self.num_states == other.num_states
            && self.num_points == other.num_points
    }
}

/// One step slice: `[state][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    num_states: usize,
    num_points: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn filled(num_states: usize, num_points: usize, value: f64) -> Self {
        Self {
            num_states,
            num_points,
            data: vec![value; num_states * num_points],
        }
    }

    pub fn zeros(num_states: usize, num_points: usize) -> Self {
        Self::filled(num_states, num_points, 0.0)
    }

    pub fn from_fn(
        num_states: usize,
        num_points: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut p = Self::zeros(num_states, num_points);
        for x in 0..num_states {
            for c in 0..num_points {
                p.set(x, c, f(x, c));
            }
        }
        p
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    #[inline]
    pub fn get(&self, state: usize, point: usize) -> f64 {
        self.data[state * self.num_points + point]
    }

    #[inline]
    pub fn set(&mut self, state: usize, point: usize, value: f64) {
        self.data[state * self.num_points + point] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Where the obstacle attains the envelope, i.e. where stopping/intervening
/// is optimal.  Covers decision steps `0..N` (no row for the terminal step).
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRegion {
    num_steps: usize,
    num_states: usize,
    num_points: usize,
    mask: Vec<bool>,
}

impl StoppingRegion {
    fn new(num_steps: usize, num_states: usize, num_points: usize) -> Self {
        Self {
            num_steps,
            num_states,
            num_points,
            mask: vec![false; num_steps * num_states * num_points],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    #[inline]
    pub fn is_stop(&self, step: usize, state: usize, point: usize) -> bool {
        self.mask[(step * self.num_states + state) * self.num_points + point]
    }

    fn set(&mut self, step: usize, state: usize, point: usize, v: bool) {
        self.mask[(step * self.num_states + state) * self.num_points + point] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Obstacle attainment test used everywhere a stopping region is extracted.
#[inline]
pub fn attains(envelope: f64, obstacle: f64, stop_tol: f64) -> bool {
    obstacle.is_finite() && envelope - obstacle <= stop_tol * (1.0 + envelope.abs())
}

#[inline]
fn dot_column(chain: &ChainModel, state: usize, plane: &Plane, point: usize) -> f64 {
    let mut acc = 0.0;
    for (j, p) in chain.row(state).iter().enumerate() {
        acc += p * plane.get(j, point);
    }
    acc
}

fn check_running(running: &ValueTable, name: &str) -> Result<(), SnellError> {
    if running.values().iter().any(|v| !v.is_finite()) {
        return Err(SnellError::NonFinite(name.to_string()));
    }
    Ok(())
}

fn check_obstacle(obstacle: &ValueTable) -> Result<(), SnellError> {
    if obstacle
        .values()
        .iter()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(SnellError::NonFinite("obstacle".into()));
    }
    Ok(())
}

fn check_shapes(
    running: &ValueTable,
    obstacle: &ValueTable,
    terminal: &Plane,
    chain: &ChainModel,
) -> Result<(), SnellError> {
    if !running.same_shape(obstacle) {
        return Err(SnellError::ShapeMismatch(format!(
            "running {}x{}x{} vs obstacle {}x{}x{}",
            running.num_steps,
            running.num_states,
            running.num_points,
            obstacle.num_steps,
            obstacle.num_states,
            obstacle.num_points,
        )));
    }
    if terminal.num_states != running.num_states || terminal.num_points != running.num_points {
        return Err(SnellError::ShapeMismatch("terminal plane".into()));
    }
    if chain.num_states() != running.num_states {
        return Err(SnellError::ShapeMismatch(format!(
            "chain has {} states, tables have {}",
            chain.num_states(),
            running.num_states
        )));
    }
    if terminal.values().iter().any(|v| !v.is_finite()) {
        return Err(SnellError::NonFinite("terminal".into()));
    }
    Ok(())
}

/// Discrete Snell envelope with additive running reward:
///
/// `V_N = terminal`, `V_i = max(obstacle_i, running_i + E[V_{i+1} | state])`.
///
/// `FORBIDDEN` (−∞) obstacle entries mean "stopping forbidden here".  Returns
/// the envelope over steps `0..=N` and the attainment mask over `0..N`.
pub fn additive_snell(
    running: &ValueTable,
    obstacle: &ValueTable,
    terminal: &Plane,
    chain: &ChainModel,
    stop_tol: f64,
) -> Result<(ValueTable, StoppingRegion), SnellError> {
    check_shapes(running, obstacle, terminal, chain)?;
    check_running(running, "running reward")?;
    check_obstacle(obstacle)?;

    let n = running.num_steps();
    let s = running.num_states();
    let c = running.num_points();
    let mut v = ValueTable::zeros(n + 1, s, c);
    v.set_plane(n, terminal);
    let mut region = StoppingRegion::new(n, s, c);

    for i in (0..n).rev() {
        let next = v.plane(i + 1);
        for x in 0..s {
            for q in 0..c {
                let cont = running.get(i, x, q) + dot_column(chain, x, &next, q);
                let obs = obstacle.get(i, x, q);
                let val = cont.max(obs);
                v.set(i, x, q, val);
                region.set(i, x, q, attains(val, obs, stop_tol));
            }
        }
    }
    Ok((v, region))
}

/// Multiplicative variant for the exponential-utility criterion:
///
/// `V_N = terminal`, `V_i = max(obstacle_i, g_i · E[V_{i+1} | state])`,
///
/// with per-step factors `g >= 1` (a nonnegative reward exponentiates to a
/// factor at least one) and a strictly positive terminal, ordinarily the
/// all-ones plane.
pub fn multiplicative_snell(
    step_factor: &ValueTable,
    obstacle: &ValueTable,
    terminal: &Plane,
    chain: &ChainModel,
    stop_tol: f64,
) -> Result<(ValueTable, StoppingRegion), SnellError> {
    check_shapes(step_factor, obstacle, terminal, chain)?;
    check_obstacle(obstacle)?;
    check_factors(step_factor)?;
    if terminal.values().iter().any(|&v| v <= 0.0) {
        return Err(SnellError::NonFinite("terminal must be positive".into()));
    }

    let n = step_factor.num_steps();
    let s = step_factor.num_states();
    let c = step_factor.num_points();
    let mut v = ValueTable::zeros(n + 1, s, c);
    v.set_plane(n, terminal);
    let mut region = StoppingRegion::new(n, s, c);

    for i in (0..n).rev() {
        let next = v.plane(i + 1);
        for x in 0..s {
            for q in 0..c {
                let cont = step_factor.get(i, x, q) * dot_column(chain, x, &next, q);
                let obs = obstacle.get(i, x, q);
                let val = cont.max(obs);
                v.set(i, x, q, val);
                region.set(i, x, q, attains(val, obs, stop_tol));
            }
        }
    }
    Ok((v, region))
}

fn check_factors(factors: &ValueTable) -> Result<(), SnellError> {
    for i in 0..factors.num_steps() {
        for x in 0..factors.num_states() {
            for q in 0..factors.num_points() {
                let g = factors.get(i, x, q);
                if !g.is_finite() || g < 1.0 {
                    return Err(SnellError::FactorBelowOne {
                        step: i,
                        state: x,
                        point: q,
                        value: g,
                    });
                }
            }
        }
    }
    Ok(())
}

fn check_fold_shapes(
    chain: &ChainModel,
    steps: &[Plane],
    boundary: &Plane,
) -> Result<(), SnellError> {
    for p in steps.iter().chain(std::iter::once(boundary)) {
        if p.num_states != boundary.num_states || p.num_points != boundary.num_points {
            return Err(SnellError::ShapeMismatch("fold planes".into()));
        }
        if p.num_states != chain.num_states() {
            return Err(SnellError::ShapeMismatch(format!(
                "chain has {} states, plane has {}",
                chain.num_states(),
                p.num_states
            )));
        }
        if p.values().iter().any(|v| !v.is_finite()) {
            return Err(SnellError::NonFinite("fold plane".into()));
        }
    }
    Ok(())
}

/// Exact conditional expectation of an additively accumulated window:
///
/// `E[ Σ_j rewards[j](X_{i+j}) + boundary(X_{i+d}) | X_i = state ]`,
///
/// computed by `d = rewards.len()` backward one-step folds.  Equals the dense
/// `P^d` matrix power applied to the boundary plus accumulated rewards, in
/// `O(d·|S|²)` per lattice column and with no dense power storage.
pub fn delay_fold_additive(
    chain: &ChainModel,
    rewards: &[Plane],
    boundary: &Plane,
) -> Result<Plane, SnellError> {
    check_fold_shapes(chain, rewards, boundary)?;
    let mut w = boundary.clone();
    for rew in rewards.iter().rev() {
        let mut cur = Plane::zeros(w.num_states, w.num_points);
        for x in 0..w.num_states {
            for q in 0..w.num_points {
                cur.set(x, q, rew.get(x, q) + dot_column(chain, x, &w, q));
            }
        }
        w = cur;
    }
    Ok(w)
}

/// Multiplicative window fold:
///
/// `E[ Π_j factors[j](X_{i+j}) · boundary(X_{i+d}) | X_i = state ]`.
pub fn delay_fold_multiplicative(
    chain: &ChainModel,
    factors: &[Plane],
    boundary: &Plane,
) -> Result<Plane, SnellError> {
    check_fold_shapes(chain, factors, boundary)?;
    let mut w = boundary.clone();
    for fac in factors.iter().rev() {
        let mut cur = Plane::zeros(w.num_states, w.num_points);
        for x in 0..w.num_states {
            for q in 0..w.num_points {
                cur.set(x, q, fac.get(x, q) * dot_column(chain, x, &w, q));
            }
        }
        w = cur;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChainModel;

    fn single_state_chain() -> ChainModel {
        ChainModel::new(vec![vec![0.0]], vec![vec![1.0]], 0).unwrap()
    }

    fn two_state_symmetric() -> ChainModel {
        ChainModel::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            0,
        )
        .unwrap()
    }

    fn identity_chain(n: usize) -> ChainModel {
        let mut t = vec![vec![0.0; n]; n];
        for (i, row) in t.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        ChainModel::new((0..n).map(|i| vec![i as f64]).collect(), t, 0).unwrap()
    }

    #[test]
    fn no_obstacle_accumulates_rewards() {
        // With the obstacle forbidden everywhere the envelope is the plain
        // cumulative expected reward.
        let chain = two_state_symmetric();
        let running = ValueTable::from_fn(3, 2, 1, |i, x, _| (i + 1) as f64 * 0.1 + x as f64);
        let obstacle = ValueTable::filled(3, 2, 1, FORBIDDEN);
        let terminal = Plane::zeros(2, 1);
        let (v, region) =
            additive_snell(&running, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();

        // Independent forward accumulation.
        let mut want = vec![0.0, 0.0];
        for i in (0..3).rev() {
            let mean = 0.5 * want[0] + 0.5 * want[1];
            want = (0..2)
                .map(|x| (i + 1) as f64 * 0.1 + x as f64 + mean)
                .collect();
        }
        assert!((v.get(0, 0, 0) - want[0]).abs() < 1e-12);
        assert!((v.get(0, 1, 0) - want[1]).abs() < 1e-12);
        assert_eq!(region.count(), 0);
    }

    #[test]
    fn dominating_obstacle_is_hit_everywhere() {
        // Obstacle = M in discounted units (M·κ^i in table units) with the
        // running reward at most M·(1-κ)·κ^i: the obstacle then dominates
        // running + continuation at every node, so V = obstacle and the
        // region covers everything.
        let chain = two_state_symmetric();
        let m_big = 100.0;
        let kappa = (-0.1f64).exp();
        let running =
            ValueTable::from_fn(3, 2, 1, |i, _, _| m_big * (1.0 - kappa) * kappa.powi(i as i32));
        let obstacle = ValueTable::from_fn(3, 2, 1, |i, _, _| m_big * kappa.powi(i as i32));
        let terminal = Plane::filled(2, 1, m_big * kappa.powi(3));
        let (v, region) =
            additive_snell(&running, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        for i in 0..3 {
            for x in 0..2 {
                assert!((v.get(i, x, 0) - m_big * kappa.powi(i as i32)).abs() < 1e-9);
                assert!(region.is_stop(i, x, 0));
            }
        }
    }

    #[test]
    fn three_line_hand_computation() {
        // Single state, N = 2, running (1, 1), terminal 0, obstacle (1.5, -inf):
        // V_1 = 1, V_0 = max(1.5, 1 + 1) = 2, not stopped at 0.
        let chain = single_state_chain();
        let running = ValueTable::filled(2, 1, 1, 1.0);
        let mut obstacle = ValueTable::filled(2, 1, 1, FORBIDDEN);
        obstacle.set(0, 0, 0, 1.5);
        let terminal = Plane::zeros(1, 1);
        let (v, region) =
            additive_snell(&running, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 0, 0), 2.0);
        assert!(!region.is_stop(0, 0, 0));
    }

    #[test]
    fn multiplicative_unit_factor_is_one() {
        let chain = two_state_symmetric();
        let g = ValueTable::filled(4, 2, 1, 1.0);
        let obstacle = ValueTable::filled(4, 2, 1, FORBIDDEN);
        let terminal = Plane::filled(2, 1, 1.0);
        let (v, _) =
            multiplicative_snell(&g, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        for i in 0..5 {
            for x in 0..2 {
                assert_eq!(v.get(i, x, 0), 1.0);
            }
        }
    }

    #[test]
    fn multiplicative_obstacle_at_root_only() {
        let chain = single_state_chain();
        let g = ValueTable::filled(2, 1, 1, 1.0);
        let mut obstacle = ValueTable::filled(2, 1, 1, FORBIDDEN);
        obstacle.set(0, 0, 0, 2.0);
        let terminal = Plane::filled(1, 1, 1.0);
        let (v, region) =
            multiplicative_snell(&g, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        assert_eq!(v.get(0, 0, 0), 2.0);
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert!(region.is_stop(0, 0, 0));
    }

    #[test]
    fn multiplicative_single_fold() {
        let chain = single_state_chain();
        let g = ValueTable::filled(1, 1, 1, 0.3f64.exp());
        let obstacle = ValueTable::filled(1, 1, 1, FORBIDDEN);
        let terminal = Plane::filled(1, 1, 1.0);
        let (v, _) =
            multiplicative_snell(&g, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        assert_eq!(v.get(0, 0, 0), 0.3f64.exp());
    }

    #[test]
    fn multiplicative_constant_factor_is_exact_power() {
        // g = e^{a·dt} on a single state with no obstacle gives e^{a·dt·N}
        // exactly (product of identical factors).
        let chain = single_state_chain();
        let a_dt: f64 = 0.07;
        let n = 20;
        let g = ValueTable::filled(n, 1, 1, a_dt.exp());
        let obstacle = ValueTable::filled(n, 1, 1, FORBIDDEN);
        let terminal = Plane::filled(1, 1, 1.0);
        let (v, _) =
            multiplicative_snell(&g, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        let mut want = 1.0;
        for _ in 0..n {
            want *= a_dt.exp();
        }
        assert_eq!(v.get(0, 0, 0), want);
    }

    #[test]
    fn factor_below_one_rejected() {
        let chain = single_state_chain();
        let g = ValueTable::filled(1, 1, 1, 0.99);
        let obstacle = ValueTable::filled(1, 1, 1, FORBIDDEN);
        let terminal = Plane::filled(1, 1, 1.0);
        let err =
            multiplicative_snell(&g, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap_err();
        assert!(matches!(err, SnellError::FactorBelowOne { .. }));
    }

    #[test]
    fn nan_is_rejected() {
        let chain = single_state_chain();
        let mut running = ValueTable::filled(1, 1, 1, 0.0);
        running.set(0, 0, 0, f64::NAN);
        let obstacle = ValueTable::filled(1, 1, 1, FORBIDDEN);
        let terminal = Plane::zeros(1, 1);
        assert!(additive_snell(&running, &obstacle, &terminal, &chain, 1e-9).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let chain = two_state_symmetric();
        let running = ValueTable::zeros(2, 2, 1);
        let obstacle = ValueTable::zeros(3, 2, 1);
        let terminal = Plane::zeros(2, 1);
        assert!(matches!(
            additive_snell(&running, &obstacle, &terminal, &chain, 1e-9),
            Err(SnellError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fold_one_step_is_transition_apply() {
        let chain = two_state_symmetric();
        let boundary = Plane::from_fn(2, 1, |x, _| x as f64);
        let out = delay_fold_additive(&chain, &[Plane::zeros(2, 1)], &boundary).unwrap();
        assert_eq!(out.get(0, 0), 0.5);
        assert_eq!(out.get(1, 0), 0.5);
    }

    #[test]
    fn fold_on_identity_chain_sums_rewards() {
        let chain = identity_chain(4);
        let ones = Plane::filled(4, 1, 1.0);
        let boundary = Plane::filled(4, 1, 5.0);
        let out =
            delay_fold_additive(&chain, &[ones.clone(), ones.clone(), ones], &boundary).unwrap();
        for x in 0..4 {
            assert_eq!(out.get(x, 0), 8.0);
        }
    }

    #[test]
    fn fold_two_steps_matches_squared_matrix() {
        // Symmetric two-state chain: P² maps (0, 1) to (1/2, 1/2).
        let chain = two_state_symmetric();
        let boundary = Plane::from_fn(2, 1, |x, _| x as f64);
        let zero = Plane::zeros(2, 1);
        let out = delay_fold_additive(&chain, &[zero.clone(), zero], &boundary).unwrap();
        assert_eq!(out.get(0, 0), 0.5);
        assert_eq!(out.get(1, 0), 0.5);
    }

    #[test]
    fn multiplicative_fold_reduces_to_additive_under_unit_factor() {
        let chain = two_state_symmetric();
        let boundary = Plane::from_fn(2, 3, |x, q| 0.3 * x as f64 + 0.1 * q as f64 + 1.0);
        let ones = Plane::filled(2, 3, 1.0);
        let zeros = Plane::zeros(2, 3);
        let m = delay_fold_multiplicative(&chain, &[ones.clone(), ones], &boundary).unwrap();
        let a = delay_fold_additive(&chain, &[zeros.clone(), zeros], &boundary).unwrap();
        assert_eq!(m, a);
    }

    #[test]
    fn multiplicative_fold_deterministic_product() {
        let chain = identity_chain(1);
        let fa = Plane::filled(1, 1, 0.4f64.exp());
        let fb = Plane::filled(1, 1, 0.2f64.exp());
        let boundary = Plane::filled(1, 1, 3.0);
        let out = delay_fold_multiplicative(&chain, &[fa, fb], &boundary).unwrap();
        assert!((out.get(0, 0) - 0.6f64.exp() * 3.0).abs() < 1e-14);
    }

    #[test]
    fn multiplicative_fold_one_step_hand_value() {
        // g0 = (e, 1), boundary = (1, 1): result is g0 · (P·1) = (e, 1).
        let chain = two_state_symmetric();
        let g0 = Plane::from_fn(2, 1, |x, _| if x == 0 { 1.0f64.exp() } else { 1.0 });
        let boundary = Plane::filled(2, 1, 1.0);
        let out = delay_fold_multiplicative(&chain, &[g0], &boundary).unwrap();
        assert_eq!(out.get(0, 0), 1.0f64.exp());
        assert_eq!(out.get(1, 0), 1.0);
    }

    #[test]
    fn engine_is_bit_deterministic() {
        let chain = two_state_symmetric();
        let running = ValueTable::from_fn(5, 2, 3, |i, x, q| {
            ((i * 7 + x * 3 + q) as f64 * 0.618).sin().abs() * 0.2
        });
        let obstacle = ValueTable::from_fn(5, 2, 3, |i, x, q| {
            if (i + x + q) % 3 == 0 {
                FORBIDDEN
            } else {
                ((i + 2 * x + q) as f64 * 0.37).cos() * 0.5
            }
        });
        let terminal = Plane::zeros(2, 3);
        let (v1, r1) =
            additive_snell(&running, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        let (v2, r2) =
            additive_snell(&running, &obstacle, &terminal, &chain, DEFAULT_STOP_TOL).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(r1, r2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_chain(states: usize) -> impl Strategy<Value = ChainModel> {
            proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, states),
                states,
            )
            .prop_map(move |rows| {
                let rows: Vec<Vec<f64>> = rows
                    .into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(|x| x / s).collect()
                    })
                    .collect();
                ChainModel::new_unchecked(
                    (0..states).map(|i| vec![i as f64]).collect(),
                    rows,
                    0,
                )
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // V dominates the obstacle and its own continuation.
            #[test]
            fn envelope_dominates(
                chain in arb_chain(3),
                seed_r in proptest::collection::vec(0.0f64..1.0, 4 * 3 * 2),
                seed_o in proptest::collection::vec(-1.0f64..1.5, 4 * 3 * 2),
            ) {
                let running =
                    ValueTable::from_fn(4, 3, 2, |i, x, q| seed_r[(i * 3 + x) * 2 + q]);
                let obstacle = ValueTable::from_fn(4, 3, 2, |i, x, q| {
                    let v = seed_o[(i * 3 + x) * 2 + q];
                    if v < -0.5 { FORBIDDEN } else { v }
                });
                let terminal = Plane::zeros(3, 2);
                let (v, _) = additive_snell(&running, &obstacle, &terminal, &chain, 1e-9).unwrap();
                for i in 0..4 {
                    let next = v.plane(i + 1);
                    for x in 0..3 {
                        for q in 0..2 {
                            let obs = obstacle.get(i, x, q);
                            if obs.is_finite() {
                                prop_assert!(v.get(i, x, q) >= obs);
                            }
                            let cont = running.get(i, x, q) + dot_column(&chain, x, &next, q);
                            prop_assert!(v.get(i, x, q) >= cont - 1e-12);
                        }
                    }
                }
            }

            // Smallest dominating supersolution: any feasible W dominates V.
            #[test]
            fn envelope_is_smallest(
                chain in arb_chain(3),
                seed_r in proptest::collection::vec(0.0f64..1.0, 4 * 3 * 2),
                seed_o in proptest::collection::vec(-1.0f64..1.5, 4 * 3 * 2),
                slack in proptest::collection::vec(0.0f64..0.7, 5 * 3 * 2),
            ) {
                let running = ValueTable::from_fn(4, 3, 2, |i, x, q| seed_r[(i * 3 + x) * 2 + q]);
                let obstacle = ValueTable::from_fn(4, 3, 2, |i, x, q| {
                    let v = seed_o[(i * 3 + x) * 2 + q];
                    if v < -0.5 { FORBIDDEN } else { v }
                });
                let terminal = Plane::zeros(3, 2);
                let (v, _) = additive_snell(&running, &obstacle, &terminal, &chain, 1e-9).unwrap();

                // Random supersolution repaired to feasibility backward.
                let mut w = ValueTable::zeros(5, 3, 2);
                for x in 0..3 {
                    for q in 0..2 {
                        w.set(4, x, q, slack[(4 * 3 + x) * 2 + q]); // >= terminal = 0
                    }
                }
                for i in (0..4).rev() {
                    let next = w.plane(i + 1);
                    for x in 0..3 {
                        for q in 0..2 {
                            let feas = (running.get(i, x, q) + dot_column(&chain, x, &next, q))
                                .max(obstacle.get(i, x, q));
                            w.set(i, x, q, feas + slack[(i * 3 + x) * 2 + q]);
                        }
                    }
                }
                for i in 0..5 {
                    for x in 0..3 {
                        for q in 0..2 {
                            prop_assert!(v.get(i, x, q) <= w.get(i, x, q) + 1e-12);
                        }
                    }
                }
            }

            // Window folds match the dense matrix-power reference.
            #[test]
            fn fold_matches_dense_power(
                chain in arb_chain(4),
                d in 1usize..4,
                rew in proptest::collection::vec(0.0f64..1.0, 3 * 4),
                bnd in proptest::collection::vec(-1.0f64..1.0, 4),
            ) {
                let rewards: Vec<Plane> = (0..d)
                    .map(|j| Plane::from_fn(4, 1, |x, _| rew[(j * 4 + x) % rew.len()]))
                    .collect();
                let boundary = Plane::from_fn(4, 1, |x, _| bnd[x]);
                let got = delay_fold_additive(&chain, &rewards, &boundary).unwrap();

                // Dense reference: running vector u_j = P^j row-applied.
                let n = 4usize;
                let mut want = vec![0.0f64; n];
                // E[boundary(X_d) | x] via repeated dense multiply.
                let mut vecv: Vec<f64> = (0..n).map(|x| boundary.get(x, 0)).collect();
                for _ in 0..d {
                    let mut nx = vec![0.0; n];
                    for x in 0..n {
                        for j in 0..n {
                            nx[x] += chain.row(x)[j] * vecv[j];
                        }
                    }
                    vecv = nx;
                }
                for x in 0..n { want[x] += vecv[x]; }
                // E[rewards_j(X_j) | x] term by term.
                for (j, rp) in rewards.iter().enumerate() {
                    let mut vecr: Vec<f64> = (0..n).map(|x| rp.get(x, 0)).collect();
                    for _ in 0..j {
                        let mut nx = vec![0.0; n];
                        for x in 0..n {
                            for k in 0..n {
                                nx[x] += chain.row(x)[k] * vecr[k];
                            }
                        }
                        vecr = nx;
                    }
                    for x in 0..n { want[x] += vecr[x]; }
                }
                for x in 0..n {
                    prop_assert!((got.get(x, 0) - want[x]).abs() < 1e-12);
                }
            }
        }
    }
}
