//! Shared instance builders for unit tests.

use crate::model::{ChainModel, GridSpec, ImpulseSpec, Instance, RewardSpec, TailMode};

pub fn two_state_symmetric_chain() -> ChainModel {
    ChainModel::new(
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        0,
    )
    .unwrap()
}

pub fn identity_chain(values: &[f64], initial: usize) -> ChainModel {
    let n = values.len();
    let mut t = vec![vec![0.0; n]; n];
    for (i, row) in t.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    ChainModel::new(values.iter().map(|&v| vec![v]).collect(), t, initial).unwrap()
}

/// Workhorse instance: two-state symmetric chain on {0, 1}, one impulse +1,
/// six steps of unit length, delay 2, rate 1/2, reward clamp(y, 0, 2).
/// The intervention region is nonempty at the default costs.
pub fn ladder_instance(n_max: usize) -> Instance {
    ladder_instance_with(n_max, 6, 2, 0.3)
}

pub fn ladder_instance_with(n_max: usize, num_steps: usize, delay: usize, k: f64) -> Instance {
    let grid = GridSpec::new(1.0, num_steps, delay, 0.5, TailMode::Zero).unwrap();
    let chain = two_state_symmetric_chain();
    let impulses = ImpulseSpec::new(vec![vec![1.0]], k, vec![0.0]).unwrap();
    let reward = RewardSpec::from_fn(2.0, |_, y| y[0].clamp(0.0, 2.0));
    Instance::new(grid, chain, impulses, reward, n_max).unwrap()
}

pub fn zero_reward_instance(n_max: usize) -> Instance {
    let grid = GridSpec::new(1.0, 6, 2, 0.5, TailMode::Zero).unwrap();
    let chain = two_state_symmetric_chain();
    let impulses = ImpulseSpec::new(vec![vec![1.0]], 0.3, vec![0.0]).unwrap();
    Instance::new(grid, chain, impulses, RewardSpec::zero(), n_max).unwrap()
}

pub fn constant_reward_instance(n_max: usize, gamma: f64) -> Instance {
    let grid = GridSpec::new(1.0, 8, 2, 0.5, TailMode::Zero).unwrap();
    let chain = two_state_symmetric_chain();
    let impulses = ImpulseSpec::new(vec![vec![1.0]], 0.3, vec![0.0]).unwrap();
    Instance::new(grid, chain, impulses, RewardSpec::constant(gamma), n_max).unwrap()
}

/// Two impulses of opposite sign, for lattice-boundary coverage.
pub fn two_impulse_instance(n_max: usize) -> Instance {
    let grid = GridSpec::new(0.5, 8, 2, 0.4, TailMode::Zero).unwrap();
    let chain = ChainModel::new(
        vec![vec![0.0], vec![1.0], vec![2.0]],
        vec![
            vec![0.6, 0.4, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.4, 0.6],
        ],
        1,
    )
    .unwrap();
    let impulses = ImpulseSpec::new(vec![vec![1.0], vec![-1.0]], 0.2, vec![0.0, 0.1]).unwrap();
    let reward = RewardSpec::from_fn(1.5, |t, y| {
        (0.75 + 0.75 * (0.9 * y[0] - 0.1 * t).sin()).clamp(0.0, 1.5)
    });
    Instance::new(grid, chain, impulses, reward, n_max).unwrap()
}
