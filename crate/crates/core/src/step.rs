//! Right-continuous step functions on `[0, ∞)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A piecewise-constant, right-continuous function of time.
///
/// The function equals `initial_value` on `[0, t_1)` and `values[k]` on
/// `[t_k, t_{k+1})`, extending the last value beyond the final jump.
/// Kaplan-Meier curves built by this crate additionally have
/// `initial_value = 1` and non-increasing values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<F> {
    initial_value: F,
    jump_times: Vec<F>,
    values: Vec<F>,
}

impl<F: Scalar> StepFunction<F> {
    /// Build and validate: jump times strictly increasing, positive, finite;
    /// one value per jump.
    pub fn new(initial_value: F, jump_times: Vec<F>, values: Vec<F>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::invalid(format!(
                "step function has {} jump times but {} values",
                jump_times.len(),
                values.len()
            )));
        }
        if !initial_value.is_finite() {
            return Err(Error::invalid("step function initial value not finite"));
        }
        let mut prev: Option<F> = None;
        for (k, (&t, &v)) in jump_times.iter().zip(&values).enumerate() {
            if !t.is_finite() || t <= F::zero() {
                return Err(Error::invalid(format!(
                    "jump time {k} not strictly positive and finite"
                )));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("step value {k} not finite")));
            }
            if let Some(p) = prev {
                if t <= p {
                    return Err(Error::invalid(format!(
                        "jump times not strictly increasing at index {k}"
                    )));
                }
            }
            prev = Some(t);
        }
        Ok(StepFunction { initial_value, jump_times, values })
    }

    /// Constant function with no jumps.
    pub fn constant(value: F) -> Self {
        StepFunction { initial_value: value, jump_times: Vec::new(), values: Vec::new() }
    }

    pub fn initial_value(&self) -> F {
        self.initial_value
    }

    pub fn jump_times(&self) -> &[F] {
        &self.jump_times
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Right-continuous evaluation: the value attached to the last jump at
    /// or before `t`, or `initial_value` before the first jump.
    pub fn value_at(&self, t: F) -> F {
        match self.jump_times.partition_point(|&u| u <= t) {
            0 => self.initial_value,
            k => self.values[k - 1],
        }
    }

    /// Exact area under the function on `[0, upper]` (sum of rectangles).
    pub fn integral_to(&self, upper: F) -> F {
        self.integral_between(F::zero(), upper)
    }

    /// Exact area on `[lo, hi]`; zero when `hi <= lo`.
    pub fn integral_between(&self, lo: F, hi: F) -> F {
        if hi <= lo {
            return F::zero();
        }
        let mut area = F::zero();
        let mut seg_start = lo;
        let mut current = self.value_at(lo);
        for (&t, &v) in self.jump_times.iter().zip(&self.values) {
            if t <= seg_start {
                continue;
            }
            if t >= hi {
                break;
            }
            area += current * (t - seg_start);
            seg_start = t;
            current = v;
        }
        area += current * (hi - seg_start);
        area
    }
}
