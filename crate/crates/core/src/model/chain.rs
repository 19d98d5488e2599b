//! Finite-state Markov chain and the trinomial random-walk builder.

use super::{GridSpec, ModelError};

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite-state chain: states carry values in `ℝ^l`, one row-stochastic
/// transition matrix per grid step of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    state_values: Vec<Vec<f64>>,
    /// Row-major `num_states × num_states`.
    transition: Vec<f64>,
    initial_state: usize,
}

impl ChainModel {
    pub fn new(
        state_values: Vec<Vec<f64>>,
        transition: Vec<Vec<f64>>,
        initial_state: usize,
    ) -> Result<Self, ModelError> {
        let n = state_values.len();
        if n == 0 {
            return Err(ModelError::Chain("state set is empty".into()));
        }
        let dim = state_values[0].len();
        if dim == 0 {
            return Err(ModelError::Chain("state values must have dimension >= 1".into()));
        }
        for (i, s) in state_values.iter().enumerate() {
            if s.len() != dim {
                return Err(ModelError::Chain(format!(
                    "state {i} has dimension {} but state 0 has {}",
                    s.len(),
                    dim
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Chain(format!("state {i} has non-finite coordinates")));
            }
        }
        if initial_state >= n {
            return Err(ModelError::Chain(format!(
                "initial state {initial_state} out of range (num states {n})"
            )));
        }
        if transition.len() != n {
            return Err(ModelError::Chain(format!(
                "transition has {} rows, expected {n}",
                transition.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::Chain(format!(
                    "transition row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(msg) = row_violation(i, row) {
                return Err(ModelError::Chain(msg));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self {
            state_values,
            transition: flat,
            initial_state,
        })
    }

    /// Stores the data without numeric validation (row sums, sign, range).
    /// Shapes must still be coherent.  [`crate::model::validate`] reports any
    /// numeric violations, so this is the entry point for "parse now, report
    /// everything later" config handling.
    pub fn new_unchecked(
        state_values: Vec<Vec<f64>>,
        transition: Vec<Vec<f64>>,
        initial_state: usize,
    ) -> Self {
        let n = state_values.len();
        assert!(n > 0, "state set is empty");
        let dim = state_values[0].len();
        assert!(
            state_values.iter().all(|s| s.len() == dim),
            "state dimensions differ"
        );
        assert!(
            transition.len() == n && transition.iter().all(|r| r.len() == n),
            "transition must be {n}x{n}"
        );
        Self {
            state_values,
            transition: transition.into_iter().flatten().collect(),
            initial_state,
        }
    }

    pub fn num_states(&self) -> usize {
        self.state_values.len()
    }

    pub fn dim(&self) -> usize {
        self.state_values[0].len()
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn state_value(&self, state: usize) -> &[f64] {
        &self.state_values[state]
    }

    pub fn state_values(&self) -> &[Vec<f64>] {
        &self.state_values
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        let n = self.num_states();
        &self.transition[state * n..(state + 1) * n]
    }

    /// One-step conditional expectation `E[f(X_{i+1}) | X_i = state]`.
    ///
    /// Summation runs in ascending successor order so results are
    /// reproducible bit for bit.
    #[inline]
    pub fn expect(&self, state: usize, f: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (j, p) in self.row(state).iter().enumerate() {
            acc += p * f(j);
        }
        acc
    }

    /// Samples the successor state by inverse CDF over the fixed row order.
    pub fn sample_next(&self, state: usize, u: f64) -> usize {
        let row = self.row(state);
        let mut cum = 0.0;
        for (j, p) in row.iter().enumerate() {
            cum += p;
            if u < cum {
                return j;
            }
        }
        row.len() - 1
    }
}

pub(crate) fn row_violation(i: usize, row: &[f64]) -> Option<String> {
    if row.iter().any(|p| !p.is_finite()) {
        return Some(format!("transition row {i} has non-finite entries"));
    }
    if row.iter().any(|&p| p < 0.0) {
        return Some(format!("transition row {i} has negative entries"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Some(format!("transition not stochastic at row {i}: sum = {sum}"));
    }
    None
}

/// Builds a one-dimensional chain on `space_grid` whose one-step mean and
/// variance match `b·dt` and `σ²·dt` at interior points (trinomial moment
/// matching); boundary states reflect.
///
/// Rejects the discretization when the match would need a negative
/// probability, which means `dt` is too large for the grid spacing.
pub fn build_random_walk_chain(
    drift: impl Fn(f64) -> f64,
    volatility: impl Fn(f64) -> f64,
    x0: f64,
    grid: &GridSpec,
    space_grid: &[f64],
) -> Result<ChainModel, ModelError> {
    let n = space_grid.len();
    if n == 0 {
        return Err(ModelError::Chain("space grid is empty".into()));
    }
    if space_grid.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Chain("space grid has non-finite points".into()));
    }
    for w in space_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(ModelError::Chain("space grid must be strictly increasing".into()));
        }
    }
    let initial = space_grid
        .iter()
        .position(|&v| v == x0)
        .ok_or_else(|| ModelError::Chain(format!("x0 = {x0} is not a grid point")))?;

    let dt = grid.dt;
    let mut transition = vec![vec![0.0; n]; n];
    for i in 0..n {
        let x = space_grid[i];
        let b = drift(x);
        let s = volatility(x);
        if !b.is_finite() || !s.is_finite() {
            return Err(ModelError::Chain(format!(
                "drift/volatility not finite at grid point {x}"
            )));
        }
        if s < 0.0 {
            return Err(ModelError::Chain(format!("volatility negative at grid point {x}")));
        }
        let m1 = b * dt;
        let m2 = s * s * dt + m1 * m1;
        if n == 1 {
            if m1 != 0.0 || m2 != 0.0 {
                return Err(ModelError::Discretization(
                    "single-point grid cannot carry nonzero moments".into(),
                ));
            }
            transition[i][i] = 1.0;
            continue;
        }
        // Mirror the missing neighbor at the boundary; the reflected mass
        // stays in place.
        let down = if i > 0 {
            space_grid[i - 1] - x
        } else {
            x - space_grid[i + 1]
        };
        let up = if i + 1 < n {
            space_grid[i + 1] - x
        } else {
            x - space_grid[i - 1]
        };
        // Solve p_down·down + p_up·up = m1, p_down·down² + p_up·up² = m2.
        let p_down = (m2 - up * m1) / (down * (down - up));
        let p_up = (m2 - down * m1) / (up * (up - down));
        let p_stay = 1.0 - p_down - p_up;
        for (label, p) in [("down", p_down), ("stay", p_stay), ("up", p_up)] {
            if p < -ROW_SUM_TOL {
                return Err(ModelError::Discretization(format!(
                    "moment matching at grid point {x} needs a negative {label} probability \
                     ({p}); reduce dt or coarsen the space grid"
                )));
            }
        }
        let clamp = |p: f64| p.max(0.0);
        if i > 0 {
            transition[i][i - 1] = clamp(p_down);
        } else {
            transition[i][i] += clamp(p_down);
        }
        if i + 1 < n {
            transition[i][i + 1] = clamp(p_up);
        } else {
            transition[i][i] += clamp(p_up);
        }
        transition[i][i] += clamp(p_stay);
    }

    let state_values = space_grid.iter().map(|&v| vec![v]).collect();
    ChainModel::new(state_values, transition, initial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TailMode;
    use crate::rng::SplitMix64;

    fn grid(dt: f64) -> GridSpec {
        GridSpec::new(dt, 10, 1, 0.5, TailMode::Zero).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = ChainModel::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.45, 0.45], vec![0.5, 0.5]],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Chain(ref m) if m.contains("row 0")));
    }

    #[test]
    fn degenerate_diffusion_is_identity() {
        let chain =
            build_random_walk_chain(|_| 0.0, |_| 0.0, 1.0, &grid(1.0), &[0.0, 1.0, 2.0]).unwrap();
        for i in 0..3 {
            let mut want = vec![0.0; 3];
            want[i] = 1.0;
            assert_eq!(chain.row(i), &want[..]);
        }
        assert_eq!(chain.initial_state(), 1);
    }

    #[test]
    fn unit_walk_splits_evenly() {
        // b = 0, σ = 1, dt = 1 on a unit grid: the three-point match gives
        // p_down = p_up = 1/2 and no self weight at interior points.
        let chain =
            build_random_walk_chain(|_| 0.0, |_| 1.0, 0.0, &grid(1.0), &[-2.0, -1.0, 0.0, 1.0, 2.0])
                .unwrap();
        assert_eq!(chain.row(2), &[0.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn too_fine_grid_is_rejected() {
        // Spacing 0.5 with σ²dt = 1 needs self weight 1 - 1/0.25 = -3.
        let err = build_random_walk_chain(
            |_| 0.0,
            |_| 1.0,
            0.0,
            &grid(1.0),
            &[-1.0, -0.5, 0.0, 0.5, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Discretization(_)));
    }

    #[test]
    fn x0_must_be_on_grid() {
        let err =
            build_random_walk_chain(|_| 0.0, |_| 0.0, 0.25, &grid(1.0), &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, ModelError::Chain(_)));
    }

    #[test]
    fn interior_moments_match_empirically() {
        // 3σ Monte Carlo band at 1e5 samples per interior state.
        let b = 0.08;
        let s = 0.6;
        let g = grid(0.25);
        let pts: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.5).collect();
        let chain = build_random_walk_chain(|_| b, |_| s, 0.0, &g, &pts).unwrap();
        let want_mean = b * g.dt;
        let want_var = s * s * g.dt;
        let paths = 100_000;
        for state in 1..pts.len() - 1 {
            let mut rng = SplitMix64::stream(1234, state as u64);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..paths {
                let next = chain.sample_next(state, rng.next_f64());
                let dx = pts[next] - pts[state];
                sum += dx;
                sumsq += dx * dx;
            }
            let mean = sum / paths as f64;
            let var = sumsq / paths as f64 - mean * mean;
            // std error of the mean is sqrt(var/n); of the variance roughly
            // var·sqrt(2/n).
            let se_mean = (want_var / paths as f64).sqrt();
            assert!(
                (mean - want_mean).abs() <= 3.0 * se_mean,
                "state {state}: mean {mean} vs {want_mean}"
            );
            let se_var = want_var * (2.0 / paths as f64).sqrt();
            assert!(
                (var - want_var).abs() <= 3.0 * se_var,
                "state {state}: var {var} vs {want_var}"
            );
        }
    }

    #[test]
    fn sampling_matches_row_support() {
        let chain = ChainModel::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            0,
        )
        .unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            assert_eq!(chain.sample_next(0, rng.next_f64()), 0);
            assert_eq!(chain.sample_next(1, rng.next_f64()), 1);
        }
    }
}
