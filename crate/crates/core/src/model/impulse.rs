//! Impulse set, intervention costs, and the cumulative-impulse lattice.

use std::collections::HashMap;

use super::ModelError;

/// Finite impulse set `U = {β_1..β_p}` with cost `ψ(β) = k + φ(β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSpec {
    impulses: Vec<Vec<f64>>,
    fixed_cost: f64,
    variable_costs: Vec<f64>,
}

impl ImpulseSpec {
    pub fn new(
        impulses: Vec<Vec<f64>>,
        fixed_cost: f64,
        variable_costs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if impulses.is_empty() {
            return Err(ModelError::Impulse("impulse set is empty".into()));
        }
        let dim = impulses[0].len();
        if dim == 0 {
            return Err(ModelError::Impulse("impulses must have dimension >= 1".into()));
        }
        for (i, b) in impulses.iter().enumerate() {
            if b.len() != dim {
                return Err(ModelError::Impulse(format!(
                    "impulse {i} has dimension {}, expected {dim}",
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Impulse(format!("impulse {i} has non-finite coordinates")));
            }
        }
        // The fixed part is strictly positive: free interventions would allow
        // infinitely many orders at no cost.
        if !(fixed_cost.is_finite() && fixed_cost > 0.0) {
            return Err(ModelError::Impulse(format!(
                "fixed cost must be finite and > 0, got {fixed_cost}"
            )));
        }
        if variable_costs.len() != impulses.len() {
            return Err(ModelError::Impulse(format!(
                "{} variable costs for {} impulses",
                variable_costs.len(),
                impulses.len()
            )));
        }
        for (i, &c) in variable_costs.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(ModelError::Impulse(format!(
                    "variable cost of impulse {i} must be finite and >= 0, got {c}"
                )));
            }
        }
        Ok(Self {
            impulses,
            fixed_cost,
            variable_costs,
        })
    }

    /// Stores the data without numeric validation; shapes must be coherent.
    /// Violations surface through [`crate::model::validate`].
    pub fn new_unchecked(
        impulses: Vec<Vec<f64>>,
        fixed_cost: f64,
        variable_costs: Vec<f64>,
    ) -> Self {
        assert!(!impulses.is_empty(), "impulse set is empty");
        let dim = impulses[0].len();
        assert!(impulses.iter().all(|b| b.len() == dim), "impulse dimensions differ");
        assert_eq!(variable_costs.len(), impulses.len(), "one variable cost per impulse");
        Self {
            impulses,
            fixed_cost,
            variable_costs,
        }
    }

    pub fn len(&self) -> usize {
        self.impulses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.impulses[0].len()
    }

    pub fn vector(&self, idx: usize) -> &[f64] {
        &self.impulses[idx]
    }

    pub fn fixed_cost(&self) -> f64 {
        self.fixed_cost
    }

    pub fn variable_cost(&self, idx: usize) -> f64 {
        self.variable_costs[idx]
    }

    /// `ψ(β) = k + φ(β)`.
    pub fn cost(&self, idx: usize) -> f64 {
        self.fixed_cost + self.variable_costs[idx]
    }

    pub fn min_cost(&self) -> f64 {
        (0..self.len()).map(|i| self.cost(i)).fold(f64::INFINITY, f64::min)
    }
}

/// All cumulative impulses reachable with at most `n_max` orders.
///
/// Points are deduplicated by the exact bits of a canonical evaluation
/// (count-vector times impulse vectors, accumulated in declared impulse
/// order), so every engine sees the same point identity.  Point transitions
/// go through `shift`, never raw vector addition, which keeps the solvers,
/// the oracle, and the simulator on one bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeLattice {
    points: Vec<Vec<f64>>,
    /// Minimal number of orders needed to reach each point.
    depth: Vec<usize>,
    /// `shift[point * p + impulse]`: target point of `c + β`, when still on
    /// the lattice.
    shift: Vec<Option<usize>>,
    num_impulses: usize,
    origin: usize,
    n_max: usize,
}

impl CumulativeLattice {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Index of the empty sum.
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    /// Target of `point + impulse`, or `None` when the sum would need more
    /// than `n_max` orders.
    #[inline]
    pub fn shift(&self, point: usize, impulse: usize) -> Option<usize> {
        self.shift[point * self.num_impulses + impulse]
    }
}

/// Enumerates all sums of at most `n_max` impulses.
pub fn build_lattice(impulses: &ImpulseSpec, n_max: usize) -> CumulativeLattice {
    let p = impulses.len();
    let dim = impulses.dim();

    // Count vectors (n_1..n_p) with Σ n_i <= n_max, in lexicographic order.
    let mut counts_list: Vec<Vec<usize>> = Vec::new();
    let mut cur = vec![0usize; p];
    loop {
        counts_list.push(cur.clone());
        // Next lex count vector with sum <= n_max.
        let mut i = p;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            cur[i] += 1;
            if cur.iter().sum::<usize>() <= n_max {
                break;
            }
            cur[i] = 0;
        }
        if cur.iter().all(|&c| c == 0) {
            break;
        }
    }

    let canonical = |counts: &[usize]| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for (i, &n) in counts.iter().enumerate() {
            if n > 0 {
                let b = impulses.vector(i);
                for (k, coord) in v.iter_mut().enumerate() {
                    *coord += n as f64 * b[k];
                }
            }
        }
        v
    };
    let key_of = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };

    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut reps: Vec<Vec<usize>> = Vec::new();
    let mut depth: Vec<usize> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for counts in &counts_list {
        let value = canonical(counts);
        let total: usize = counts.iter().sum();
        match index.entry(key_of(&value)) {
            std::collections::hash_map::Entry::Occupied(e) => {
                let idx = *e.get();
                // Keep the shallowest representative so shifts stay available
                // as long as the point itself is reachable within budget.
                if total < depth[idx] {
                    depth[idx] = total;
                    reps[idx] = counts.clone();
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(points.len());
                points.push(value);
                reps.push(counts.clone());
                depth.push(total);
            }
        }
    }

    let origin = index[&key_of(&vec![0.0; dim])];
    let mut shift = vec![None; points.len() * p];
    for (idx, rep) in reps.iter().enumerate() {
        if depth[idx] >= n_max {
            continue;
        }
        for j in 0..p {
            let mut counts = rep.clone();
            counts[j] += 1;
            let target = index[&key_of(&canonical(&counts))];
            shift[idx * p + j] = Some(target);
        }
    }

    CumulativeLattice {
        points,
        depth,
        shift,
        num_impulses: p,
        origin,
        n_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(vectors: Vec<Vec<f64>>) -> ImpulseSpec {
        let p = vectors.len();
        ImpulseSpec::new(vectors, 1.0, vec![0.0; p]).unwrap()
    }

    fn sorted_scalars(l: &CumulativeLattice) -> Vec<f64> {
        let mut v: Vec<f64> = l.points().iter().map(|p| p[0]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn rejects_zero_fixed_cost() {
        assert!(ImpulseSpec::new(vec![vec![1.0]], 0.0, vec![0.0]).is_err());
    }

    #[test]
    fn rejects_negative_variable_cost() {
        assert!(ImpulseSpec::new(vec![vec![1.0]], 1.0, vec![-0.1]).is_err());
    }

    #[test]
    fn single_impulse_ladder() {
        let l = build_lattice(&spec(vec![vec![1.0]]), 2);
        assert_eq!(sorted_scalars(&l), vec![0.0, 1.0, 2.0]);
        assert_eq!(l.point(l.origin()), &[0.0]);
    }

    #[test]
    fn opposite_impulses_one_order() {
        let l = build_lattice(&spec(vec![vec![1.0], vec![-1.0]]), 1);
        assert_eq!(sorted_scalars(&l), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn opposite_impulses_dedup_origin() {
        // +1 then -1 lands back on the origin; 0 appears once.
        let l = build_lattice(&spec(vec![vec![1.0], vec![-1.0]]), 2);
        assert_eq!(sorted_scalars(&l), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let zeros = l.points().iter().filter(|p| p[0] == 0.0).count();
        assert_eq!(zeros, 1);
        assert_eq!(l.depth(l.origin()), 0);
    }

    #[test]
    fn shift_consistent_with_addition() {
        let l = build_lattice(&spec(vec![vec![1.0], vec![-1.0]]), 3);
        for idx in 0..l.len() {
            for j in 0..2 {
                if let Some(t) = l.shift(idx, j) {
                    let want = l.point(idx)[0] + if j == 0 { 1.0 } else { -1.0 };
                    assert_eq!(l.point(t)[0], want);
                }
            }
        }
    }

    #[test]
    fn shift_total_below_budget() {
        let l = build_lattice(&spec(vec![vec![1.0], vec![0.5]]), 3);
        for idx in 0..l.len() {
            for j in 0..2 {
                if l.depth(idx) < 3 {
                    assert!(l.shift(idx, j).is_some(), "point {idx} impulse {j}");
                } else {
                    assert!(l.shift(idx, j).is_none());
                }
            }
        }
    }

    #[test]
    fn zero_budget_is_origin_only() {
        let l = build_lattice(&spec(vec![vec![1.0]]), 0);
        assert_eq!(l.len(), 1);
        assert_eq!(l.shift(0, 0), None);
    }

    mod permutation {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Set equality of the point sets under permutation of U.
            // Impulse coordinates are half-integers so sums are exact.
            #[test]
            fn permuted_impulse_set_same_points(
                raw in proptest::collection::vec(-6i32..=6, 1..4),
                budget in 0usize..4,
            ) {
                let vectors: Vec<Vec<f64>> =
                    raw.iter().map(|&k| vec![k as f64 * 0.5]).collect();
                let mut rotated = vectors.clone();
                rotated.rotate_left(1);
                let a = build_lattice(&spec(vectors), budget);
                let b = build_lattice(&spec(rotated), budget);
                prop_assert_eq!(sorted_scalars(&a), sorted_scalars(&b));
            }
        }
    }
}
