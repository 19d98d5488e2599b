//! JSON problem configuration.
//!
//! Top-level keys: `grid`, `chain`, `impulses`, `reward`, `solver`.  See the
//! repository README for a worked example.

use serde::Deserialize;
use thiserror::Error;

use super::{
    build_random_walk_chain, ChainModel, GridSpec, ImpulseSpec, Instance, ModelError, RewardSpec,
    TableValues, TailMode,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub grid: GridSection,
    pub chain: ChainSection,
    pub impulses: ImpulseSection,
    pub reward: RewardSection,
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    pub num_steps: usize,
    pub delay_steps: usize,
    pub discount_rate: f64,
    pub tail_mode: String,
    #[serde(default)]
    pub tail_value: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default)]
    pub explicit: Option<ExplicitSection>,
    #[serde(default)]
    pub random_walk: Option<RandomWalkSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSection {
    pub states: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub initial: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWalkSection {
    pub drift: f64,
    pub volatility: f64,
    pub x0: f64,
    pub space_grid: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSection {
    pub vectors: Vec<Vec<f64>>,
    pub fixed_cost: f64,
    pub variable_costs: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    /// `"table"` or `"expression"`.
    pub kind: String,
    pub data: serde_json::Value,
    pub bound_gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub n_max: usize,
    pub tolerance: f64,
    #[serde(default)]
    pub theta: Option<f64>,
}

/// Solver-level knobs carried alongside the instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub n_max: usize,
    pub tolerance: f64,
    pub theta: f64,
}

pub fn parse_config(text: &str) -> Result<ConfigDoc, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableData {
    points: Vec<Vec<f64>>,
    values: serde_json::Value,
}

impl ConfigDoc {
    /// Builds the validated instance and solver settings.  Structural
    /// problems fail fast; value-level violations are aggregated by
    /// validation and reported together.
    pub fn build(&self) -> Result<(Instance, SolverSettings), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);

        let tail_mode = match self.grid.tail_mode.as_str() {
            "zero" => TailMode::Zero,
            "constant" => TailMode::Constant(self.grid.tail_value.ok_or_else(|| {
                invalid("grid.tail_value is required when tail_mode is \"constant\"".into())
            })?),
            other => {
                return Err(invalid(format!(
                    "grid.tail_mode must be \"zero\" or \"constant\", got \"{other}\""
                )))
            }
        };
        let grid = GridSpec {
            dt: self.grid.dt,
            num_steps: self.grid.num_steps,
            delay_steps: self.grid.delay_steps,
            discount_rate: self.grid.discount_rate,
            tail_mode,
        };

        let chain = match (&self.chain.explicit, &self.chain.random_walk) {
            (Some(e), None) => {
                let n = e.states.len();
                if n == 0 {
                    return Err(invalid("chain.explicit.states is empty".into()));
                }
                let dim = e.states[0].len();
                if dim == 0 || e.states.iter().any(|s| s.len() != dim) {
                    return Err(invalid("chain.explicit.states have mixed dimensions".into()));
                }
                if e.transition.len() != n || e.transition.iter().any(|r| r.len() != n) {
                    return Err(invalid(format!("chain.explicit.transition must be {n}x{n}")));
                }
                ChainModel::new_unchecked(e.states.clone(), e.transition.clone(), e.initial)
            }
            (None, Some(w)) => {
                // The grid must be coherent before the builder can run.
                let gv = grid.violations();
                if !gv.is_empty() {
                    return Err(invalid(gv.join("; ")));
                }
                build_random_walk_chain(
                    |_| w.drift,
                    |_| w.volatility,
                    w.x0,
                    &grid,
                    &w.space_grid,
                )
                .map_err(|e| invalid(e.to_string()))?
            }
            _ => {
                return Err(invalid(
                    "chain must have exactly one of `explicit` or `random_walk`".into(),
                ))
            }
        };

        let impulses = {
            let im = &self.impulses;
            if im.vectors.is_empty() {
                return Err(invalid("impulses.vectors is empty".into()));
            }
            let dim = im.vectors[0].len();
            if dim == 0 || im.vectors.iter().any(|b| b.len() != dim) {
                return Err(invalid("impulses.vectors have mixed dimensions".into()));
            }
            if im.variable_costs.len() != im.vectors.len() {
                return Err(invalid(format!(
                    "impulses.variable_costs has {} entries for {} vectors",
                    im.variable_costs.len(),
                    im.vectors.len()
                )));
            }
            ImpulseSpec::new_unchecked(im.vectors.clone(), im.fixed_cost, im.variable_costs.clone())
        };

        let reward = match self.reward.kind.as_str() {
            "expression" => {
                let src = self.reward.data.as_str().ok_or_else(|| {
                    invalid("reward.data must be an expression string for kind \"expression\"".into())
                })?;
                RewardSpec::expression(src, self.reward.bound_gamma)
                    .map_err(|e| invalid(e.to_string()))?
            }
            "table" => {
                let data: TableData = serde_json::from_value(self.reward.data.clone())
                    .map_err(|e| invalid(format!("reward.data: {e}")))?;
                let values = parse_table_values(&data.values)
                    .map_err(|m| invalid(format!("reward.data.values: {m}")))?;
                RewardSpec::table(data.points, values, self.reward.bound_gamma)
                    .map_err(|e| invalid(e.to_string()))?
            }
            other => {
                return Err(invalid(format!(
                    "reward.kind must be \"table\" or \"expression\", got \"{other}\""
                )))
            }
        };

        let s = &self.solver;
        if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
            return Err(invalid(format!(
                "solver.tolerance must be finite and > 0, got {}",
                s.tolerance
            )));
        }
        if let Some(theta) = s.theta {
            if !(theta.is_finite() && theta > 0.0) {
                return Err(invalid(format!(
                    "solver.theta must be finite and > 0, got {theta}"
                )));
            }
        }

        let instance = Instance::new(grid, chain, impulses, reward, s.n_max)
            .map_err(|e| match e {
                ModelError::Invalid(msg) => invalid(msg),
                other => invalid(other.to_string()),
            })?;

        Ok((
            instance,
            SolverSettings {
                n_max: s.n_max,
                tolerance: s.tolerance,
                theta: s.theta.unwrap_or(1.0),
            },
        ))
    }
}

fn parse_table_values(v: &serde_json::Value) -> Result<TableValues, String> {
    let arr = v.as_array().ok_or("must be an array")?;
    if arr.is_empty() {
        return Err("must not be empty".into());
    }
    if arr[0].is_array() {
        let mut rows = Vec::with_capacity(arr.len());
        for row in arr {
            let row = row.as_array().ok_or("mixed flat and nested rows")?;
            let mut out = Vec::with_capacity(row.len());
            for x in row {
                out.push(x.as_f64().ok_or("values must be numbers")?);
            }
            rows.push(out);
        }
        Ok(TableValues::PerStep(rows))
    } else {
        let mut out = Vec::with_capacity(arr.len());
        for x in arr {
            out.push(x.as_f64().ok_or("values must be numbers")?);
        }
        Ok(TableValues::Static(out))
    }
}
