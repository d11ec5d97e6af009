//! Economic primitives: quadratic costs, linear inverse demand, discovery-rate
//! schedules and initial reserves distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost `linear * x + quadratic * x^2 / 2` of running an activity at rate `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub linear: f64,
    pub quadratic: f64,
}

impl QuadraticCost {
    pub fn new(linear: f64, quadratic: f64) -> Self {
        Self { linear, quadratic }
    }

    /// Checked evaluation; negative rates are rejected.
    pub fn cost(&self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return Err(Error::invalid("rate", format!("must be >= 0, got {rate}")));
        }
        Ok(self.eval(rate))
    }

    #[inline]
    pub(crate) fn eval(&self, rate: f64) -> f64 {
        self.linear * rate + 0.5 * self.quadratic * rate * rate
    }

    /// Maximizer of `marginal * x - cost(x)` over `x >= 0`.
    #[inline]
    pub fn best_response(&self, marginal: f64) -> f64 {
        positive_part(marginal - self.linear) / self.quadratic
    }

    /// Maximum of `marginal * x - cost(x)` over `x >= 0`.
    #[inline]
    pub fn max_surplus(&self, marginal: f64) -> f64 {
        let s = positive_part(marginal - self.linear);
        s * s / (2.0 * self.quadratic)
    }
}

/// `(x)^+`, with ties at zero returning zero.
#[inline]
pub fn positive_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Inverse-demand intercept: the price as supply vanishes.
    pub price_cap: f64,
    pub discount_rate: f64,
    pub production_cost: QuadraticCost,
    pub exploration_cost: QuadraticCost,
    /// Reserves added by one discovery.
    pub discovery_size: f64,
    pub horizon: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl ModelParams {
    /// Reference calibration used throughout the numerical experiments.
    pub fn reference() -> Self {
        Self {
            price_cap: 5.0,
            discount_rate: 0.1,
            production_cost: QuadraticCost::new(0.1, 1.0),
            exploration_cost: QuadraticCost::new(0.1, 1.0),
            discovery_size: 1.0,
            horizon: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool, &str); 8] = [
            (
                "production_cost.quadratic",
                self.production_cost.quadratic > 0.0,
                "must be > 0",
            ),
            (
                "exploration_cost.quadratic",
                self.exploration_cost.quadratic > 0.0,
                "must be > 0",
            ),
            (
                "production_cost.linear",
                self.production_cost.linear >= 0.0,
                "must be >= 0",
            ),
            (
                "exploration_cost.linear",
                self.exploration_cost.linear >= 0.0,
                "must be >= 0",
            ),
            ("discovery_size", self.discovery_size > 0.0, "must be > 0"),
            (
                "price_cap",
                self.price_cap > self.production_cost.linear,
                "must exceed the linear production cost",
            ),
            ("discount_rate", self.discount_rate > 0.0, "must be > 0"),
            ("horizon", self.horizon > 0.0, "must be > 0"),
        ];
        for (field, ok, reason) in checks {
            if !ok {
                return Err(Error::invalid(field, reason));
            }
        }
        Ok(())
    }

    pub fn production_cost(&self, q: f64) -> Result<f64> {
        self.production_cost.cost(q)
    }

    pub fn exploration_cost(&self, a: f64) -> Result<f64> {
        self.exploration_cost.cost(a)
    }

    /// Clearing price `L - Q`. Not clamped: negative prices are representable.
    #[inline]
    pub fn inverse_demand(&self, aggregate: f64) -> f64 {
        self.price_cap - aggregate
    }

    /// A-priori upper bound on any production rate, `(L - κ₁)/β₁`.
    pub fn max_production_rate(&self) -> f64 {
        (self.price_cap - self.production_cost.linear) / self.production_cost.quadratic
    }
}

/// Discovery rate per unit of exploration effort, as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSchedule {
    Constant {
        rate: f64,
    },
    /// `initial * (1 - t / exhaustion_time)^+`.
    LinearDecay {
        initial: f64,
        exhaustion_time: f64,
    },
    /// `base(t) / epsilon`; the owning run multiplies the discovery size by `epsilon`.
    Scaled {
        base: Box<LambdaSchedule>,
        epsilon: f64,
    },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::LinearDecay {
            initial: 1.0,
            exhaustion_time: 40.0,
        }
    }
}

impl LambdaSchedule {
    pub fn constant(rate: f64) -> Self {
        LambdaSchedule::Constant { rate }
    }

    pub fn linear_decay(initial: f64, exhaustion_time: f64) -> Self {
        LambdaSchedule::LinearDecay {
            initial,
            exhaustion_time,
        }
    }

    pub fn scaled(base: LambdaSchedule, epsilon: f64) -> Self {
        LambdaSchedule::Scaled {
            base: Box::new(base),
            epsilon,
        }
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            LambdaSchedule::Constant { rate } => *rate,
            LambdaSchedule::LinearDecay {
                initial,
                exhaustion_time,
            } => initial * positive_part(1.0 - t / exhaustion_time),
            LambdaSchedule::Scaled { base, epsilon } => base.rate_at(t) / epsilon,
        }
    }

    /// The constant rate, if the schedule is time-homogeneous.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            LambdaSchedule::Constant { rate } => Some(*rate),
            LambdaSchedule::LinearDecay { .. } => None,
            LambdaSchedule::Scaled { base, epsilon } => base.as_constant().map(|r| r / epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LambdaSchedule::Constant { rate } if !(*rate >= 0.0) => {
                Err(Error::invalid("schedule.rate", "must be >= 0"))
            }
            LambdaSchedule::LinearDecay {
                initial,
                exhaustion_time,
            } => {
                if !(*initial >= 0.0) {
                    Err(Error::invalid("schedule.initial", "must be >= 0"))
                } else if !(*exhaustion_time > 0.0) {
                    Err(Error::invalid("schedule.exhaustion_time", "must be > 0"))
                } else {
                    Ok(())
                }
            }
            LambdaSchedule::Scaled { base, epsilon } => {
                if !(*epsilon > 0.0) {
                    return Err(Error::invalid("schedule.epsilon", "must be > 0"));
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }
}

/// Initial reserves distribution, described through its upper CDF `P(X >= x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    /// Density `6x(u-x)/u^3` on `[0, u]`.
    Parabolic {
        support: f64,
    },
    PointMass {
        at: f64,
    },
    /// Upper-CDF values at `x_m = m * spacing`, linearly interpolated, zero beyond.
    Tabulated {
        spacing: f64,
        values: Vec<f64>,
    },
}

impl Default for InitialDistribution {
    fn default() -> Self {
        InitialDistribution::Parabolic { support: 10.0 }
    }
}

const POINT_MASS_SLACK: f64 = 1e-9;

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialDistribution::Parabolic { support } if !(*support > 0.0) => {
                Err(Error::invalid("initial.support", "must be > 0"))
            }
            InitialDistribution::PointMass { at } if !(*at >= 0.0) => {
                Err(Error::invalid("initial.at", "must be >= 0"))
            }
            InitialDistribution::Tabulated { spacing, values } => {
                if !(*spacing > 0.0) {
                    return Err(Error::invalid("initial.spacing", "must be > 0"));
                }
                match values.first() {
                    Some(v) if *v == 1.0 => {}
                    _ => return Err(Error::invalid("initial.values", "must start at 1")),
                }
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::invalid("initial.values", "must lie in [0, 1]"));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::invalid("initial.values", "must be non-increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `P(X_0 >= x)`.
    pub fn upper_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match self {
            InitialDistribution::Parabolic { support } => {
                if x >= *support {
                    0.0
                } else {
                    let s = x / support;
                    1.0 - 3.0 * s * s + 2.0 * s * s * s
                }
            }
            InitialDistribution::PointMass { at } => {
                if x <= at + POINT_MASS_SLACK {
                    1.0
                } else {
                    0.0
                }
            }
            InitialDistribution::Tabulated { spacing, values } => {
                let pos = x / spacing;
                let i = pos.floor() as usize;
                if i + 1 >= values.len() {
                    return if i + 1 == values.len() && pos == i as f64 {
                        values[i]
                    } else {
                        0.0
                    };
                }
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// Inverse-transform sample: the `x` with `P(X_0 >= x) = u`, for `u` in `(0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            InitialDistribution::PointMass { at } => *at,
            InitialDistribution::Parabolic { support } => {
                // upper CDF is strictly decreasing on [0, support]
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if 1.0 - 3.0 * mid * mid + 2.0 * mid * mid * mid >= u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi) * support
            }
            InitialDistribution::Tabulated { spacing, values } => {
                // last node with value >= u, then interpolate inside the next cell
                let k = values.iter().rposition(|&v| v >= u).unwrap_or(0);
                if k + 1 >= values.len() {
                    return k as f64 * spacing;
                }
                let (a, b) = (values[k], values[k + 1]);
                let w = if a > b { (a - u) / (a - b) } else { 0.0 };
                (k as f64 + w) * spacing
            }
        }
    }
}
