//! Problem data: time grid, finite-state chain, impulse set, reward field,
//! cumulative-impulse lattice, plus config parsing and validation.
//!
//! Everything here is immutable after construction and safe to share across
//! threads; the builders are pure functions.

mod chain;
mod config;
mod expr;
mod grid;
mod impulse;
mod reward;
mod validate;

pub use chain::{build_random_walk_chain, ChainModel};
pub use config::{parse_config, ConfigDoc, ConfigError, SolverSettings};
pub use expr::Expr;
pub use grid::{GridSpec, TailMode};
pub use impulse::{build_lattice, CumulativeLattice, ImpulseSpec};
pub use reward::{RewardSpec, TableValues};
pub use validate::{validate, ValidationReport};

use thiserror::Error;

/// Construction-time rejection of malformed problem data.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid chain: {0}")]
    Chain(String),
    #[error("invalid impulse set: {0}")]
    Impulse(String),
    #[error("invalid reward: {0}")]
    Reward(String),
    #[error("discretization error: {0}")]
    Discretization(String),
    #[error("invalid configuration:\n{0}")]
    Invalid(String),
}

/// A fully validated problem instance.
///
/// `n_max` is the largest impulse budget the lattice supports; solvers may be
/// run with any budget up to it.
#[derive(Debug)]
pub struct Instance {
    pub grid: GridSpec,
    pub chain: ChainModel,
    pub impulses: ImpulseSpec,
    pub reward: RewardSpec,
    pub lattice: CumulativeLattice,
    pub n_max: usize,
}

impl Instance {
    /// Validates the pieces together and builds the cumulative lattice.
    pub fn new(
        grid: GridSpec,
        chain: ChainModel,
        impulses: ImpulseSpec,
        reward: RewardSpec,
        n_max: usize,
    ) -> Result<Self, ModelError> {
        let report = validate(&grid, &chain, &impulses, &reward, n_max);
        if !report.is_ok() {
            return Err(ModelError::Invalid(report.violations.join("\n")));
        }
        let lattice = build_lattice(&impulses, n_max);
        Ok(Self {
            grid,
            chain,
            impulses,
            reward,
            lattice,
            n_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.chain.num_states()
    }

    pub fn num_points(&self) -> usize {
        self.lattice.len()
    }

    /// Reward argument at chain state `x` shifted by lattice point `c`.
    pub fn shifted_point(&self, state: usize, point: usize) -> Vec<f64> {
        let x = self.chain.state_value(state);
        let c = self.lattice.point(point);
        x.iter().zip(c.iter()).map(|(a, b)| a + b).collect()
    }

    /// Reward value `h(t_i, x + c)`.
    pub fn reward_at(&self, step: usize, state: usize, point: usize) -> f64 {
        let y = self.shifted_point(state, point);
        self.reward.value(step, self.grid.time(step), &y)
    }
}
