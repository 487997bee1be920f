//! Time-dependent rate functions lambda(t), mu(t).
//!
//! Four kinds are built in: constant, piecewise-constant (right-continuous),
//! sinusoid `a + b sin(wt + phi)`, and exponential decay `a e^{-ct} + d`.
//! Every kind supports exact pointwise evaluation, an exact antiderivative
//! over an interval, and a tight interval supremum (the thinning bound of the
//! Monte Carlo simulator relies on the supremum actually dominating).
//!
//! Parameters are validated at construction (including deserialization), so
//! evaluation never has to re-check nonnegativity on the hot path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{adaptive_simpson, NeumaierSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("time must be nonnegative, got {t}")]
    NegativeTime { t: f64 },
    #[error("interval is reversed: t0 = {t0} > t1 = {t1}")]
    ReversedInterval { t0: f64, t1: f64 },
    #[error("time {t} outside profile horizon {horizon}")]
    OutsideHorizon { t: f64, horizon: f64 },
    #[error("invalid rate parameters: {reason}")]
    InvalidParams { reason: String },
}

fn invalid(reason: impl Into<String>) -> RateError {
    RateError::InvalidParams {
        reason: reason.into(),
    }
}

/// Raw parameter record; `RateSpec` wraps it behind validation.
///
/// The serde shape doubles as the JSON schema:
/// `{"kind": "sinusoid", "base": 1.0, "amp": 0.5, "omega": 6.283, "phase": 0.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Kind {
    Constant {
        value: f64,
    },
    /// Right-continuous steps: value `values[i]` on `[breakpoints[i], breakpoints[i+1])`,
    /// with `breakpoints[0] = 0` and the last value extending to infinity.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    Sinusoid {
        base: f64,
        amp: f64,
        omega: f64,
        phase: f64,
    },
    /// `a * exp(-c t) + d`.
    ExpDecay {
        a: f64,
        c: f64,
        d: f64,
    },
}

/// A validated nonnegative rate function of time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RateSpec {
    kind: Kind,
}

impl<'de> Deserialize<'de> for RateSpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let kind = Kind::deserialize(deserializer)?;
        RateSpec::from_kind(kind).map_err(serde::de::Error::custom)
    }
}

impl RateSpec {
    pub fn constant(value: f64) -> Result<Self, RateError> {
        Self::from_kind(Kind::Constant { value })
    }

    pub fn piecewise_constant(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, RateError> {
        Self::from_kind(Kind::PiecewiseConstant {
            breakpoints,
            values,
        })
    }

    pub fn sinusoid(base: f64, amp: f64, omega: f64, phase: f64) -> Result<Self, RateError> {
        Self::from_kind(Kind::Sinusoid {
            base,
            amp,
            omega,
            phase,
        })
    }

    pub fn exp_decay(a: f64, c: f64, d: f64) -> Result<Self, RateError> {
        Self::from_kind(Kind::ExpDecay { a, c, d })
    }

    fn from_kind(kind: Kind) -> Result<Self, RateError> {
        match &kind {
            Kind::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return Err(invalid(format!(
                        "constant: value must be finite and nonnegative, got {value}"
                    )));
                }
            }
            Kind::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if breakpoints.is_empty() {
                    return Err(invalid("piecewise_constant: needs at least one segment"));
                }
                if breakpoints.len() != values.len() {
                    return Err(invalid(format!(
                        "piecewise_constant: {} breakpoints vs {} values",
                        breakpoints.len(),
                        values.len()
                    )));
                }
                if breakpoints[0] != 0.0 {
                    return Err(invalid("piecewise_constant: first breakpoint must be 0"));
                }
                for w in breakpoints.windows(2) {
                    if !(w[1].is_finite() && w[1] > w[0]) {
                        return Err(invalid(
                            "piecewise_constant: breakpoints must be finite and strictly increasing",
                        ));
                    }
                }
                for v in values {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(invalid(format!(
                            "piecewise_constant: values must be finite and nonnegative, got {v}"
                        )));
                    }
                }
            }
            Kind::Sinusoid {
                base,
                amp,
                omega,
                phase,
            } => {
                if !(base.is_finite() && amp.is_finite() && omega.is_finite() && phase.is_finite())
                {
                    return Err(invalid("sinusoid: parameters must be finite"));
                }
                if *base < 0.0 || amp.abs() > *base {
                    // |amp| <= base keeps the rate nonnegative for all t.
                    return Err(invalid(format!(
                        "sinusoid: need 0 <= |amp| <= base for nonnegativity, got base {base}, amp {amp}"
                    )));
                }
            }
            Kind::ExpDecay { a, c, d } => {
                if !(a.is_finite() && c.is_finite() && d.is_finite()) {
                    return Err(invalid("exp_decay: parameters must be finite"));
                }
                if *a < 0.0 || *c < 0.0 || *d < 0.0 {
                    return Err(invalid(format!(
                        "exp_decay: parameters must be nonnegative, got a {a}, c {c}, d {d}"
                    )));
                }
            }
        }
        Ok(Self { kind })
    }

    /// Pointwise value at `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64, RateError> {
        if t.is_nan() || t < 0.0 {
            return Err(RateError::NegativeTime { t });
        }
        Ok(self.eval_raw(t))
    }

    /// Evaluation without the domain check; callers guarantee `t >= 0`.
    pub(crate) fn eval_raw(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Constant { value } => *value,
            Kind::PiecewiseConstant {
                breakpoints,
                values,
            } => values[piece_index(breakpoints, t)],
            Kind::Sinusoid {
                base,
                amp,
                omega,
                phase,
            } => base + amp * (omega * t + phase).sin(),
            Kind::ExpDecay { a, c, d } => a * (-c * t).exp() + d,
        }
    }

    /// Exact integral over `[t0, t1]`, `0 <= t0 <= t1`.
    pub fn integrate(&self, t0: f64, t1: f64) -> Result<f64, RateError> {
        check_interval(t0, t1)?;
        Ok(self.integrate_raw(t0, t1))
    }

    pub(crate) fn integrate_raw(&self, t0: f64, t1: f64) -> f64 {
        let dt = t1 - t0;
        match &self.kind {
            Kind::Constant { value } => value * dt,
            Kind::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let mut total = NeumaierSum::new();
                for (i, v) in values.iter().enumerate() {
                    let lo = breakpoints[i].max(t0);
                    let hi = breakpoints
                        .get(i + 1)
                        .copied()
                        .unwrap_or(f64::INFINITY)
                        .min(t1);
                    if hi > lo {
                        total.add(v * (hi - lo));
                    }
                }
                total.value()
            }
            Kind::Sinusoid {
                base,
                amp,
                omega,
                phase,
            } => {
                if *omega == 0.0 {
                    (base + amp * phase.sin()) * dt
                } else {
                    base * dt - amp / omega * ((omega * t1 + phase).cos() - (omega * t0 + phase).cos())
                }
            }
            Kind::ExpDecay { a, c, d } => {
                if *c == 0.0 {
                    (a + d) * dt
                } else {
                    // a/c * (e^{-c t0} - e^{-c t1}) without cancellation.
                    a / c * (-c * t0).exp() * (-(-c * dt).exp_m1()) + d * dt
                }
            }
        }
    }

    /// Tight supremum over `[t0, t1]`, `0 <= t0 <= t1`.
    pub fn sup(&self, t0: f64, t1: f64) -> Result<f64, RateError> {
        check_interval(t0, t1)?;
        Ok(self.sup_raw(t0, t1))
    }

    pub(crate) fn sup_raw(&self, t0: f64, t1: f64) -> f64 {
        match &self.kind {
            Kind::Constant { value } => *value,
            Kind::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let i0 = piece_index(breakpoints, t0);
                let i1 = piece_index(breakpoints, t1);
                values[i0..=i1].iter().copied().fold(0.0, f64::max)
            }
            Kind::Sinusoid {
                base,
                amp,
                omega,
                phase,
            } => {
                if *amp == 0.0 || *omega == 0.0 {
                    return self.eval_raw(t0);
                }
                let (lo, hi) = {
                    let a = omega * t0 + phase;
                    let b = omega * t1 + phase;
                    if a <= b {
                        (a, b)
                    } else {
                        (b, a)
                    }
                };
                let tau = std::f64::consts::TAU;
                if hi - lo >= tau {
                    return base + amp.abs();
                }
                // Crest angle where amp * sin(theta) = |amp|.
                let crest = if *amp > 0.0 {
                    std::f64::consts::FRAC_PI_2
                } else {
                    -std::f64::consts::FRAC_PI_2
                };
                let k = ((lo - crest) / tau).ceil();
                if crest + k * tau <= hi {
                    base + amp.abs()
                } else {
                    self.eval_raw(t0).max(self.eval_raw(t1))
                }
            }
            // Nonincreasing for a, c >= 0: supremum at the left endpoint.
            Kind::ExpDecay { .. } => self.eval_raw(t0),
        }
    }

    /// Adaptive-quadrature fallback for kinds without a closed antiderivative.
    /// All built-in kinds integrate exactly; this path is kept for future
    /// kinds and doubles as the independent oracle in tests.
    #[allow(dead_code)]
    pub(crate) fn integrate_quadrature(&self, t0: f64, t1: f64, abs_tol: f64) -> f64 {
        let mut total = NeumaierSum::new();
        let mut lo = t0;
        for b in self.breakpoints_within(t0, t1) {
            total.add(adaptive_simpson(&mut |s| self.eval_raw(s), lo, b, abs_tol));
            lo = b;
        }
        total.add(adaptive_simpson(&mut |s| self.eval_raw(s), lo, t1, abs_tol));
        total.value()
    }

    /// Discontinuity locations strictly inside `(t0, t1)`, in increasing order.
    /// Integrators split at these so local error control sees smooth pieces.
    pub(crate) fn breakpoints_within(&self, t0: f64, t1: f64) -> Vec<f64> {
        match &self.kind {
            Kind::PiecewiseConstant { breakpoints, .. } => breakpoints
                .iter()
                .copied()
                .filter(|b| *b > t0 && *b < t1)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// The constant value when this rate does not depend on time.
    pub fn as_constant(&self) -> Option<f64> {
        match &self.kind {
            Kind::Constant { value } => Some(*value),
            _ => None,
        }
    }
}

fn piece_index(breakpoints: &[f64], t: f64) -> usize {
    // Right-continuous: the segment whose left edge is the last breakpoint <= t.
    breakpoints.partition_point(|b| *b <= t).saturating_sub(1)
}

fn check_interval(t0: f64, t1: f64) -> Result<(), RateError> {
    if t0.is_nan() || t0 < 0.0 {
        return Err(RateError::NegativeTime { t: t0 });
    }
    if t1.is_nan() || t1 < t0 {
        return Err(RateError::ReversedInterval { t0, t1 });
    }
    Ok(())
}

/// The two rates of the process plus the horizon over which queries are valid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateProfile {
    lambda: RateSpec,
    mu: RateSpec,
    horizon: f64,
}

impl<'de> Deserialize<'de> for RateProfile {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            lambda: RateSpec,
            mu: RateSpec,
            horizon: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        RateProfile::new(raw.lambda, raw.mu, raw.horizon).map_err(serde::de::Error::custom)
    }
}

impl RateProfile {
    pub fn new(lambda: RateSpec, mu: RateSpec, horizon: f64) -> Result<Self, RateError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!(
                "horizon must be finite and positive, got {horizon}"
            )));
        }
        Ok(Self {
            lambda,
            mu,
            horizon,
        })
    }

    pub fn lambda(&self) -> &RateSpec {
        &self.lambda
    }

    pub fn mu(&self) -> &RateSpec {
        &self.mu
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Checks `0 <= t <= horizon`.
    pub fn check_time(&self, t: f64) -> Result<(), RateError> {
        if t.is_nan() || t < 0.0 {
            return Err(RateError::NegativeTime { t });
        }
        if t > self.horizon {
            return Err(RateError::OutsideHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Union of both rates' discontinuities strictly inside `(t0, t1)`.
    pub(crate) fn breakpoints_within(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut pts = self.lambda.breakpoints_within(t0, t1);
        pts.extend(self.mu.breakpoints_within(t0, t1));
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup();
        pts
    }
}
