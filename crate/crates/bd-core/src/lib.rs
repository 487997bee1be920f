//! Exact transition probabilities for the immigration-death process with
//! time-varying rates.
//!
//! The process counts individuals that arrive as a Poisson stream with rate
//! lambda(t) and die independently at per-capita rate mu(t). Its master
//! equation is
//!
//! ```text
//! dP_n/dt = lambda(t) [P_{n-1} - P_n] + mu(t) [(n+1) P_{n+1} - n P_n].
//! ```
//!
//! All time dependence enters through four scalar functions g1..g4 obtained
//! by factorizing the evolution operator over the ladder-operator algebra
//! ([`weinorman`]). Given those, the transition probability P(n -> m; t)
//! has two closed forms ([`transition`]): a finite binomial-Poisson
//! convolution and an infinite spectral sum over Charlier polynomials
//! ([`charlier`]), which reduces to the classical homogeneous kernel for
//! constant rates. Independent checks come from a truncated
//! master-equation integrator and a thinning Monte Carlo simulator
//! ([`oracle`]).
//!
//! ```
//! use bd_core::rates::{RateProfile, RateSpec};
//! use bd_core::transition::{transition_probability, TruncationPolicy};
//!
//! let profile = RateProfile::new(
//!     RateSpec::constant(1.0).unwrap(),
//!     RateSpec::constant(0.5).unwrap(),
//!     10.0,
//! )
//! .unwrap();
//! let r = transition_probability(&profile, 3, 2, 2.0, &TruncationPolicy::default()).unwrap();
//! assert!(r.probability > 0.0 && r.probability < 1.0);
//! ```

pub mod algebra;
pub mod charlier;
pub mod numeric;
pub mod oracle;
pub mod rates;
pub mod transition;
pub mod weinorman;
