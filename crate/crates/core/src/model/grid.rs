//! Time discretization, execution delay, discounting, horizon truncation.

use super::ModelError;

/// What the backward induction uses as the value at the truncation step `N`.
///
/// `Zero` makes every computed table a lower approximation of the
/// infinite-horizon object, with error at most `(γ/r)·e^{-rT}`.  `Constant(h)`
/// adds the closed-form tail `h·e^{-rT}/r` of a time-homogeneous reward `h`
/// beyond the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailMode {
    Zero,
    Constant(f64),
}

/// Uniform time grid `t_i = i·dt`, `i = 0..=N`, with an execution delay of
/// `delay_steps` grid steps and continuous discount rate `discount_rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dt: f64,
    pub num_steps: usize,
    pub delay_steps: usize,
    pub discount_rate: f64,
    pub tail_mode: TailMode,
}

impl GridSpec {
    pub fn new(
        dt: f64,
        num_steps: usize,
        delay_steps: usize,
        discount_rate: f64,
        tail_mode: TailMode,
    ) -> Result<Self, ModelError> {
        let g = Self {
            dt,
            num_steps,
            delay_steps,
            discount_rate,
            tail_mode,
        };
        let v = g.violations();
        if v.is_empty() {
            Ok(g)
        } else {
            Err(ModelError::Grid(v.join("; ")))
        }
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            v.push(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.num_steps < 1 {
            v.push("num_steps must be >= 1".into());
        }
        if self.delay_steps < 1 {
            v.push("delay_steps must be >= 1 (decisions take effect strictly later)".into());
        }
        if self.num_steps < self.delay_steps {
            v.push(format!(
                "num_steps ({}) must be >= delay_steps ({}) so at least one order can execute",
                self.num_steps, self.delay_steps
            ));
        }
        if !(self.discount_rate.is_finite() && self.discount_rate > 0.0) {
            v.push(format!(
                "discount_rate must be finite and > 0, got {}",
                self.discount_rate
            ));
        }
        if let TailMode::Constant(h) = self.tail_mode {
            if !(h.is_finite() && h >= 0.0) {
                v.push(format!("constant tail value must be finite and >= 0, got {h}"));
            }
        }
        v
    }

    #[inline]
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Truncation horizon `T = N·dt`.
    pub fn horizon(&self) -> f64 {
        self.time(self.num_steps)
    }

    /// `e^{-r·t_i}`.
    #[inline]
    pub fn discount_at(&self, step: usize) -> f64 {
        (-self.discount_rate * self.time(step)).exp()
    }

    /// Discounted value credited at the truncation step.
    pub fn tail_value(&self) -> f64 {
        match self.tail_mode {
            TailMode::Zero => 0.0,
            TailMode::Constant(h) => {
                h * (-self.discount_rate * self.horizon()).exp() / self.discount_rate
            }
        }
    }

    /// Truncation error bound `(γ/r)·e^{-rT}` for a reward bounded by `gamma`.
    pub fn tail_bound(&self, gamma: f64) -> f64 {
        gamma / self.discount_rate * (-self.discount_rate * self.horizon()).exp()
    }

    /// Last step at which an order may still be placed (execution at `N`).
    #[inline]
    pub fn last_decision_step(&self) -> usize {
        self.num_steps - self.delay_steps
    }
}
