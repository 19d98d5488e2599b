//! Instantaneous reward field `h(t, y)`, bounded in `[0, γ]`.

use std::fmt;
use std::sync::Arc;

use super::expr::Expr;
use super::ModelError;

/// Values of a tabulated reward: one value per table point, either shared by
/// all steps or given per step `0..num_steps`.
#[derive(Debug, Clone, PartialEq)]
pub enum TableValues {
    Static(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
}

#[derive(Clone)]
enum Kind {
    Constant(f64),
    Table { points: Vec<Vec<f64>>, values: TableValues },
    Expression(Expr),
    Func(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

/// Reward evaluator together with its declared uniform bound `γ`.
///
/// The bound is an assumption, not a derived quantity: validation scans the
/// finite grid-times-lattice product and reports any point where the
/// evaluator leaves `[0, γ]`.
#[derive(Clone)]
pub struct RewardSpec {
    kind: Kind,
    pub bound: f64,
}

impl fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Constant(v) => format!("constant({v})"),
            Kind::Table { points, .. } => format!("table({} points)", points.len()),
            Kind::Expression(e) => format!("expression({:?})", e.source()),
            Kind::Func(_) => "fn".to_string(),
        };
        write!(f, "RewardSpec {{ {kind}, bound: {} }}", self.bound)
    }
}

impl RewardSpec {
    pub fn zero() -> Self {
        Self {
            kind: Kind::Constant(0.0),
            bound: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: Kind::Constant(value),
            bound: value,
        }
    }

    /// Arbitrary evaluator; the caller promises `0 <= f <= bound` and
    /// validation checks it on the reachable set.
    pub fn from_fn(bound: f64, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: Kind::Func(Arc::new(f)),
            bound,
        }
    }

    /// Piecewise-constant field: a query point takes the value of the nearest
    /// table point (ties to the lower index).
    pub fn table(points: Vec<Vec<f64>>, values: TableValues, bound: f64) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::Reward("reward table has no points".into()));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(ModelError::Reward("reward table points have mixed dimensions".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::Reward("reward table points must be finite".into()));
        }
        match &values {
            TableValues::Static(v) => {
                if v.len() != points.len() {
                    return Err(ModelError::Reward(format!(
                        "{} values for {} table points",
                        v.len(),
                        points.len()
                    )));
                }
            }
            TableValues::PerStep(rows) => {
                if rows.is_empty() {
                    return Err(ModelError::Reward("per-step reward table has no rows".into()));
                }
                if rows.iter().any(|r| r.len() != points.len()) {
                    return Err(ModelError::Reward(
                        "per-step reward rows must all match the point count".into(),
                    ));
                }
            }
        }
        Ok(Self {
            kind: Kind::Table { points, values },
            bound,
        })
    }

    pub fn expression(source: &str, bound: f64) -> Result<Self, ModelError> {
        let expr = Expr::parse(source)
            .map_err(|e| ModelError::Reward(format!("reward expression: {e}")))?;
        Ok(Self {
            kind: Kind::Expression(expr),
            bound,
        })
    }

    /// `h(t_step, y)`.  Never panics; malformed lookups surface as NaN and
    /// are caught by validation.
    pub fn value(&self, step: usize, t: f64, y: &[f64]) -> f64 {
        match &self.kind {
            Kind::Constant(v) => *v,
            Kind::Expression(e) => e.eval(t, y),
            Kind::Func(f) => f(t, y),
            Kind::Table { points, values } => {
                let mut best = 0usize;
                let mut best_d2 = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    if p.len() != y.len() {
                        return f64::NAN;
                    }
                    let d2: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = i;
                    }
                }
                match values {
                    TableValues::Static(v) => v[best],
                    TableValues::PerStep(rows) => {
                        rows.get(step).map(|r| r[best]).unwrap_or(f64::NAN)
                    }
                }
            }
        }
    }
}
