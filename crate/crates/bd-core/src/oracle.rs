//! Reference solvers that do not share mathematics with the closed-form
//! transition expressions: a truncated master-equation integrator and a
//! thinning-based Monte Carlo simulator. Everything downstream is validated
//! against these.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{integrate_dopri5, NeumaierSum, OdeOptions};
use crate::rates::{RateError, RateProfile};

/// States above this count make the truncated generator unreasonably large;
/// the caller should rethink the horizon instead.
const MAX_STATES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("ODE integrator stalled at t = {t_reached}")]
    Stalled { t_reached: f64 },
    #[error("truncation cap {cap} reached the hard state limit with leak {leak:.3e}")]
    StateSpaceExhausted { cap: usize, leak: f64 },
    #[error("not a probability distribution: {reason}")]
    InvalidDistribution { reason: String },
    #[error("simulation needs at least one trajectory")]
    NoTrajectories,
}

/// A (sub)probability vector over states 0..len, plus the mass known to
/// have left the tracked range.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    leaked_mass: f64,
}

impl Distribution {
    /// Accepts tiny negative entries (integrator noise) by clamping them to
    /// zero, but rejects anything that is not a probability vector up to
    /// 1e-10 in total mass.
    pub fn new(mut probs: Vec<f64>, leaked_mass: f64) -> Result<Self, OracleError> {
        for (n, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(OracleError::InvalidDistribution {
                    reason: format!("entry {n} is {p}"),
                });
            }
            if *p < 0.0 {
                if *p < -1e-12 {
                    return Err(OracleError::InvalidDistribution {
                        reason: format!("entry {n} is {p:e}"),
                    });
                }
                *p = 0.0;
            }
        }
        if !(-1e-12..=1.0 + 1e-10).contains(&leaked_mass) {
            return Err(OracleError::InvalidDistribution {
                reason: format!("leaked mass is {leaked_mass:e}"),
            });
        }
        let mut total = NeumaierSum::new();
        for p in &probs {
            total.add(*p);
        }
        total.add(leaked_mass.max(0.0));
        let mass = total.value();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(OracleError::InvalidDistribution {
                reason: format!("total mass is {mass:.12}"),
            });
        }
        Ok(Self {
            probs,
            leaked_mass: leaked_mass.max(0.0),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn leaked_mass(&self) -> f64 {
        self.leaked_mass
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of state n, zero beyond the tracked range.
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Mass inside the tracked range (excludes the leak).
    pub fn total_mass(&self) -> f64 {
        let mut s = NeumaierSum::new();
        for p in &self.probs {
            s.add(*p);
        }
        s.value()
    }

    /// Mean over the tracked range.
    pub fn mean(&self) -> f64 {
        let mut s = NeumaierSum::new();
        for (n, p) in self.probs.iter().enumerate() {
            s.add(n as f64 * p);
        }
        s.value()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let mut s = NeumaierSum::new();
        for (n, p) in self.probs.iter().enumerate() {
            let d = n as f64 - mean;
            s.add(d * d * p);
        }
        s.value()
    }

    /// Total variation distance; the two leaks are compared as if they were
    /// a shared extra state.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        let mut s = NeumaierSum::new();
        for n in 0..len {
            s.add((self.prob(n) - other.prob(n)).abs());
        }
        s.add((self.leaked_mass - other.leaked_mass).abs());
        0.5 * s.value()
    }
}

/// Integrate the truncated master equation
///
/// ```text
/// dP_n/dt = lambda(t) [P_{n-1} - P_n] + mu(t) [(n+1) P_{n+1} - n P_n]
/// ```
///
/// from P = delta_{n0} up to time t. States above `cap` are collapsed into
/// an absorbing leak component fed by the birth flux out of the cap, so the
/// integrated vector conserves mass exactly and the leak bounds the
/// truncation error. With `cap = None` the cap starts at a Poisson-tail
/// estimate and doubles until the leak drops below `tol`.
pub fn master_integrate(
    profile: &RateProfile,
    n0: u32,
    t: f64,
    cap: Option<usize>,
    tol: f64,
) -> Result<Distribution, OracleError> {
    profile.check_time(t)?;
    let auto = cap.is_none();
    let mut cap = match cap {
        Some(c) => c.max(n0 as usize),
        None => {
            // Mean added mass is at most int lambda; pad by 12 standard
            // deviations of the dominating Poisson plus a flat margin.
            let nu_bar = profile.lambda().integrate(0.0, t)?;
            n0 as usize + (nu_bar + 12.0 * (nu_bar + n0 as f64 + 1.0).sqrt() + 20.0) as usize
        }
    };

    loop {
        if cap + 2 > MAX_STATES {
            return Err(OracleError::StateSpaceExhausted { cap, leak: f64::NAN });
        }
        let dist = integrate_once(profile, n0, t, cap, tol)?;
        if !auto || dist.leaked_mass() <= tol {
            return Ok(dist);
        }
        if dist.leaked_mass() > tol && cap * 2 + 2 > MAX_STATES {
            return Err(OracleError::StateSpaceExhausted {
                cap,
                leak: dist.leaked_mass(),
            });
        }
        cap *= 2;
    }
}

fn integrate_once(
    profile: &RateProfile,
    n0: u32,
    t: f64,
    cap: usize,
    tol: f64,
) -> Result<Distribution, OracleError> {
    let lambda = profile.lambda();
    let mu = profile.mu();
    // y[0..=cap] are state probabilities, y[cap + 1] is the leak.
    let mut y = vec![0.0f64; cap + 2];
    y[n0 as usize] = 1.0;

    let mut rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
        let l = lambda.eval_raw(s);
        let m = mu.eval_raw(s);
        for n in 0..=cap {
            let inflow_birth = if n > 0 { l * y[n - 1] } else { 0.0 };
            let inflow_death = if n < cap { m * (n + 1) as f64 * y[n + 1] } else { 0.0 };
            dy[n] = inflow_birth + inflow_death - (l + m * n as f64) * y[n];
        }
        // Birth flux out of the cap accumulates as leaked mass.
        dy[cap + 1] = l * y[cap];
    };

    let opts = OdeOptions {
        abs_tol: tol,
        rel_tol: (tol * 100.0).clamp(1e-13, 1e-8),
        ..OdeOptions::default()
    };
    let mut cuts = profile.breakpoints_within(0.0, t);
    cuts.insert(0, 0.0);
    cuts.push(t);
    for pair in cuts.windows(2) {
        integrate_dopri5(&mut rhs, pair[0], pair[1], &mut y, &opts)
            .map_err(|e| OracleError::Stalled { t_reached: e.t_reached })?;
    }

    let leak = y.pop().expect("leak component");
    Distribution::new(y, leak)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_traj: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_traj: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub distribution: Distribution,
    /// Binomial standard error per state, sqrt(p (1 - p) / N).
    pub stderr: Vec<f64>,
}

/// Simulate trajectories of the process by thinning a dominating Poisson
/// stream and histogram the states at time t.
///
/// Each trajectory runs on its own counter-mode stream of the seeded
/// generator, so results are independent of thread count and identical
/// across runs with the same seed.
pub fn mc_simulate(
    profile: &RateProfile,
    n0: u32,
    t: f64,
    config: &SimConfig,
) -> Result<EmpiricalDistribution, OracleError> {
    profile.check_time(t)?;
    if config.n_traj == 0 {
        return Err(OracleError::NoTrajectories);
    }

    let merge = |mut a: Vec<u64>, b: Vec<u64>| {
        if a.len() < b.len() {
            a.resize(b.len(), 0);
        }
        for (slot, v) in a.iter_mut().zip(b.iter()) {
            *slot += v;
        }
        a
    };

    let hist = (0..config.n_traj)
        .into_par_iter()
        .fold(Vec::new, |mut h: Vec<u64>, i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i);
            let n = simulate_one(profile, n0, t, &mut rng);
            if h.len() <= n as usize {
                h.resize(n as usize + 1, 0);
            }
            h[n as usize] += 1;
            h
        })
        .reduce(Vec::new, merge);

    let n_traj = config.n_traj as f64;
    let probs: Vec<f64> = hist.iter().map(|c| *c as f64 / n_traj).collect();
    let stderr = probs
        .iter()
        .map(|p| (p * (1.0 - p) / n_traj).sqrt())
        .collect();
    Ok(EmpiricalDistribution {
        distribution: Distribution::new(probs, 0.0)?,
        stderr,
    })
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random bits into [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn simulate_one(profile: &RateProfile, n0: u32, t: f64, rng: &mut ChaCha8Rng) -> u32 {
    let lambda = profile.lambda();
    let mu = profile.mu();
    let mut n = n0 as u64;
    let mut s = 0.0f64;

    while s < t {
        // Dominate the total rate over a candidate window, then shrink the
        // window so roughly one candidate event falls inside it. The bound
        // taken over the wider window still dominates on the shorter one.
        let candidate_end = (s + t / 8.0).min(t);
        let bound = lambda.sup_raw(s, candidate_end) + n as f64 * mu.sup_raw(s, candidate_end);
        if bound <= 0.0 {
            s = candidate_end;
            continue;
        }
        let window_end = (s + (t / 8.0).min(1.0 / bound)).min(t);

        loop {
            let step = -(-uniform(rng)).ln_1p() / bound;
            s += step;
            if s >= window_end {
                s = window_end;
                break;
            }
            let l = lambda.eval_raw(s);
            let total = l + n as f64 * mu.eval_raw(s);
            if total > 0.0 && uniform(rng) * bound <= total {
                if uniform(rng) * total <= l {
                    n += 1;
                } else {
                    n -= 1;
                }
                // Rate bound depends on n; refresh it.
                break;
            }
        }
    }
    n as u32
}
