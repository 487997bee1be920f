//! Ladder-operator algebra in two concrete representations.
//!
//! A state is a finite coefficient vector over number states,
//! `s = sum_n c_n |n>`, with the ladder actions
//!
//! ```text
//! a'|n> = |n+1>          (creation)
//! a |n> = n |n-1>        (annihilation, [a, a'] = 1)
//! ```
//!
//! and the dual pairing `<m|n> = alpha^{-n} n! delta_{mn}`. The same states
//! can be pushed to functions on the nonnegative integer grid through
//! `|n> -> C_n(x; alpha)`; there the operators act as
//!
//! ```text
//! (a'f)(x) = f(x) - (x/alpha) f(x-1)
//! (a f)(x) = alpha f(x) - alpha f(x+1)
//! ```
//!
//! Both representations are exercised against each other by the tests; the
//! transition-probability derivation leans on the grid form of `(g3 + a')^n`
//! acting on a coherent state.
//!
//! alpha travels with each value because the spectral construction uses a
//! time-dependent parameter: states at different times live over different
//! Charlier families.

use thiserror::Error;

use crate::charlier::charlier_raw;
use crate::numeric::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("alpha must be nonzero and finite")]
    InvalidAlpha,
    #[error("grid needs at least two points to apply the annihilation stencil")]
    GridTooShort,
}

/// Relative threshold at which operator-exponential series terms stop
/// contributing; the coefficients decay factorially for the operators here.
const EXP_SERIES_CUTOFF: f64 = 1e-16;

/// Finite coefficient vector over number states, tagged with the Charlier
/// parameter used by pairings and grid evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FockCoeffs {
    coeffs: Vec<f64>,
    alpha: f64,
}

impl FockCoeffs {
    pub fn new(coeffs: Vec<f64>, alpha: f64) -> Result<Self, AlgebraError> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(AlgebraError::InvalidAlpha);
        }
        Ok(Self { coeffs, alpha })
    }

    /// The basis state |n>.
    pub fn basis(n: usize, alpha: f64) -> Result<Self, AlgebraError> {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[n] = 1.0;
        Self::new(coeffs, alpha)
    }

    /// Coherent state e^{z a'}|0> truncated at n_max: c_n = z^n / n!.
    pub fn coherent(z: f64, n_max: usize, alpha: f64) -> Result<Self, AlgebraError> {
        let mut coeffs = Vec::with_capacity(n_max + 1);
        let mut c = 1.0;
        coeffs.push(c);
        for n in 1..=n_max {
            c *= z / n as f64;
            coeffs.push(c);
        }
        Self::new(coeffs, alpha)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Coefficient of |n>, zero beyond the stored range.
    pub fn coeff(&self, n: usize) -> f64 {
        self.coeffs.get(n).copied().unwrap_or(0.0)
    }

    /// a': index shift up, out_{n+1} = c_n.
    pub fn create(&self) -> Self {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(0.0);
        out.extend_from_slice(&self.coeffs);
        Self {
            coeffs: out,
            alpha: self.alpha,
        }
    }

    /// a: out_{n-1} = n c_n.
    pub fn annihilate(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, c)| n as f64 * c)
            .collect();
        Self {
            coeffs,
            alpha: self.alpha,
        }
    }

    /// <m| s = alpha^{-m} m! c_m.
    pub fn bra_pairing(&self, m: u32) -> f64 {
        let mut m_fact = 1.0;
        for k in 2..=m as u64 {
            m_fact *= k as f64;
        }
        self.alpha.powi(-(m as i32)) * m_fact * self.coeff(m as usize)
    }

    /// Grid push-forward: values[x] = sum_n c_n C_n(x; alpha) for x <= x_max.
    pub fn to_grid(&self, x_max: u32) -> GridFunction {
        let values = (0..=x_max)
            .map(|x| {
                let xf = x as f64;
                let mut acc = NeumaierSum::new();
                let mut prev = 1.0;
                let mut cur = 1.0 - xf / self.alpha;
                for (n, c) in self.coeffs.iter().enumerate() {
                    let c_n = match n {
                        0 => 1.0,
                        1 => cur,
                        _ => {
                            let k = (n - 1) as f64;
                            let next = ((k + self.alpha - xf) * cur - k * prev) / self.alpha;
                            prev = cur;
                            cur = next;
                            next
                        }
                    };
                    acc.add(c * c_n);
                }
                acc.value()
            })
            .collect();
        GridFunction {
            values,
            alpha: self.alpha,
        }
    }

    /// e^{z a'} s by truncated series; terms decay like z^k/k!.
    pub fn exp_create(&self, z: f64) -> Self {
        let mut result = self.clone();
        let mut term = self.clone();
        let mut coef = 1.0;
        let base = self.norm_inf().max(f64::MIN_POSITIVE);
        for k in 1..1000u32 {
            term = term.create();
            coef *= z / k as f64;
            result = result.plus(&term.scaled(coef));
            if coef.abs() * base <= EXP_SERIES_CUTOFF * result.norm_inf().max(base) {
                break;
            }
        }
        result
    }

    /// e^{z a} s; a is nilpotent on finite vectors, so the series is exact.
    pub fn exp_annihilate(&self, z: f64) -> Self {
        let mut result = self.clone();
        let mut term = self.clone();
        let mut k = 1.0;
        loop {
            term = term.annihilate().scaled(z / k);
            if term.coeffs.is_empty() {
                return result;
            }
            result = result.plus(&term);
            k += 1.0;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            alpha: self.alpha,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(
            self.alpha, other.alpha,
            "cannot combine states over different Charlier parameters"
        );
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len).map(|n| self.coeff(n) + other.coeff(n)).collect();
        Self {
            coeffs,
            alpha: self.alpha,
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn norm_inf(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let len = self.coeffs.len().max(other.coeffs.len());
        (0..len)
            .map(|n| (self.coeff(n) - other.coeff(n)).abs())
            .fold(0.0, f64::max)
    }
}

/// A function sampled on the integer grid 0..=x_max, over a fixed Charlier
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    alpha: f64,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, alpha: f64) -> Result<Self, AlgebraError> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(AlgebraError::InvalidAlpha);
        }
        Ok(Self { values, alpha })
    }

    /// Samples `f(x)` for x in 0..=x_max.
    pub fn from_fn(x_max: u32, alpha: f64, f: impl Fn(u32) -> f64) -> Result<Self, AlgebraError> {
        Self::new((0..=x_max).map(f).collect(), alpha)
    }

    /// The sampled Charlier polynomial C_n(.; alpha) on 0..=x_max.
    pub fn charlier(n: u32, x_max: u32, alpha: f64) -> Result<Self, AlgebraError> {
        Self::from_fn(x_max, alpha, |x| charlier_raw(n, x as f64, alpha))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// (a'f)(x) = f(x) - (x/alpha) f(x-1); the x = 0 term vanishes with the
    /// x factor, so f(-1) := 0 costs nothing.
    pub fn create(&self) -> Self {
        let values = (0..self.values.len())
            .map(|x| {
                let prev = if x == 0 { 0.0 } else { self.values[x - 1] };
                self.values[x] - x as f64 / self.alpha * prev
            })
            .collect();
        Self {
            values,
            alpha: self.alpha,
        }
    }

    /// (a f)(x) = alpha (f(x) - f(x+1)); consumes one grid point.
    pub fn annihilate(&self) -> Result<Self, AlgebraError> {
        if self.values.len() < 2 {
            return Err(AlgebraError::GridTooShort);
        }
        let values = self
            .values
            .windows(2)
            .map(|w| self.alpha * (w[0] - w[1]))
            .collect();
        Ok(Self {
            values,
            alpha: self.alpha,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            alpha: self.alpha,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.alpha, other.alpha, "grid alpha mismatch");
        assert_eq!(self.values.len(), other.values.len(), "grid length mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            values,
            alpha: self.alpha,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let len = self.values.len().min(other.values.len());
        (0..len)
            .map(|x| (self.values[x] - other.values[x]).abs())
            .fold(0.0, f64::max)
    }
}
