//! The four auxiliary functions g1..g4 that carry all time dependence of the
//! transition kernel.
//!
//! Factoring the evolution operator into a product of exponentials of
//! {identity, a', a, a'a} turns the master equation into a coupled ODE
//! system for the exponents:
//!
//! ```text
//! g4' = -mu(t)
//! g3' =  mu(t) - g3 g4'
//! g2' =  lambda(t) + g2 g4'
//! g1' = -lambda(t) + g2 g3' + g2 g3 g4'
//! ```
//!
//! with g(0) = 0. The system is solvable by quadrature:
//!
//! ```text
//! M(t) = int_0^t mu,   g4 = -M,   g3 = e^M - 1,
//! g2   = int_0^t lambda(s) e^{M(s) - M(t)} ds,   g1 = -g2.
//! ```
//!
//! `solve_closed` evaluates these directly (exact antiderivatives for M,
//! adaptive quadrature for g2 unless both rates are constant);
//! `solve_ode` integrates the raw system, which provides an independent
//! check of the factorization algebra. Both keep the exponent M out of bare
//! `exp` calls where it could overflow: the g2 integrand uses
//! M(s) - M(t) <= 0 since M is nondecreasing.
//!
//! Derived quantities used by the transition formulas:
//! p = e^{g4} (survival probability), nu = g2 (immigration mass),
//! alpha = g2 (g3 + 1) / g3 (spectral Poisson parameter).

use thiserror::Error;

use crate::numeric::{adaptive_simpson, integrate_dopri5, OdeOptions};
use crate::rates::{RateError, RateProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeiNormanError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("ODE integrator stalled at t = {t_reached} (step size underflow)")]
    IntegrationStalled { t_reached: f64 },
    #[error("spectral parameters are degenerate: g3 <= 0 leaves no decaying Charlier series")]
    DegenerateSpectral,
}

/// Snapshot of the factorization exponents at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFunctions {
    pub t: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
}

impl GFunctions {
    /// Probability that one initial individual is still alive at t.
    pub fn survival_p(&self) -> f64 {
        self.g4.exp()
    }

    /// Mean of the immigration contribution (Poisson parameter nu).
    pub fn nu(&self) -> f64 {
        self.g2
    }

    /// Poisson parameter of the spectral measure, g2 (g3 + 1) / g3.
    ///
    /// Requires g3 > 0; at t = 0 or with mu identically zero the spectral
    /// series has no decaying weight and the representation degenerates.
    pub fn alpha_spectral(&self) -> Result<f64, WeiNormanError> {
        if !self.g3.is_finite() || self.g3 <= 0.0 {
            return Err(WeiNormanError::DegenerateSpectral);
        }
        let alpha = self.g2 * (self.g3 + 1.0) / self.g3;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(WeiNormanError::DegenerateSpectral);
        }
        Ok(alpha)
    }

    /// Residuals of the two structural identities g1 + g2 = 0 and
    /// (g3 + 1) e^{g4} = 1; both vanish for the exact solution at any t.
    pub fn invariant_residuals(&self) -> (f64, f64) {
        (self.g1 + self.g2, (self.g3 + 1.0) * self.g4.exp() - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Quadrature of the explicit solution (default).
    ClosedForm,
    /// Direct integration of the coupled system.
    Ode,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: SolveMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolveMethod::ClosedForm,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_step: None,
        }
    }
}

pub fn solve(
    profile: &RateProfile,
    t: f64,
    config: &SolverConfig,
) -> Result<GFunctions, WeiNormanError> {
    match config.method {
        SolveMethod::ClosedForm => solve_closed(profile, t, config),
        SolveMethod::Ode => solve_ode(profile, t, config),
    }
}

/// Evaluate the quadrature solution.
pub fn solve_closed(
    profile: &RateProfile,
    t: f64,
    config: &SolverConfig,
) -> Result<GFunctions, WeiNormanError> {
    profile.check_time(t)?;
    let lambda = profile.lambda();
    let mu = profile.mu();

    let m_total = mu.integrate(0.0, t)?;
    let g4 = -m_total;
    let g3 = m_total.exp_m1();

    let g2 = match (lambda.as_constant(), mu.as_constant()) {
        (Some(l), Some(m)) => {
            if m == 0.0 {
                l * t
            } else {
                // (lambda/mu)(1 - e^{-mu t}), stable for small mu t.
                l / m * -(-m * t).exp_m1()
            }
        }
        _ => {
            // int_0^t lambda(s) e^{M(s) - M(t)} ds with the nonpositive
            // exponent computed as -int_s^t mu.
            let mut integrand = |s: f64| lambda.eval_raw(s) * (-mu.integrate_raw(s, t)).exp();
            let quad_tol = (config.abs_tol * 0.1).max(1e-15);
            let mut cuts = profile.breakpoints_within(0.0, t);
            cuts.insert(0, 0.0);
            cuts.push(t);
            let mut total = 0.0;
            for pair in cuts.windows(2) {
                total += adaptive_simpson(&mut integrand, pair[0], pair[1], quad_tol);
            }
            total
        }
    };

    Ok(GFunctions {
        t,
        g1: -g2,
        g2,
        g3,
        g4,
    })
}

/// Integrate the coupled system in its raw factorized form.
pub fn solve_ode(
    profile: &RateProfile,
    t: f64,
    config: &SolverConfig,
) -> Result<GFunctions, WeiNormanError> {
    profile.check_time(t)?;
    let lambda = profile.lambda();
    let mu = profile.mu();

    let mut rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
        let l = lambda.eval_raw(s);
        let m = mu.eval_raw(s);
        let dg4 = -m;
        let dg3 = m - y[2] * dg4;
        let dg2 = l + y[1] * dg4;
        let dg1 = -l + y[1] * dg3 + y[1] * y[2] * dg4;
        dy[0] = dg1;
        dy[1] = dg2;
        dy[2] = dg3;
        dy[3] = dg4;
    };

    let opts = OdeOptions {
        abs_tol: config.abs_tol,
        rel_tol: config.rel_tol,
        max_step: config.max_step,
        ..OdeOptions::default()
    };

    // Rate discontinuities defeat the embedded error estimate, so integrate
    // segment by segment between breakpoints.
    let mut cuts = profile.breakpoints_within(0.0, t);
    cuts.insert(0, 0.0);
    cuts.push(t);
    let mut y = [0.0f64; 4];
    for pair in cuts.windows(2) {
        integrate_dopri5(&mut rhs, pair[0], pair[1], &mut y, &opts)
            .map_err(|e| WeiNormanError::IntegrationStalled { t_reached: e.t_reached })?;
    }

    Ok(GFunctions {
        t,
        g1: y[0],
        g2: y[1],
        g3: y[2],
        g4: y[3],
    })
}
