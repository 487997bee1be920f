//! Charlier polynomials C_n(x; alpha) and the Poisson weight they are
//! orthogonal against.
//!
//! Normalization follows the generating function
//!
//! ```text
//! sum_n C_n(x; alpha) z^n / n! = e^z (1 - z/alpha)^x,
//! ```
//!
//! so C_0 = 1, C_1 = 1 - x/alpha, and the three-term recurrence reads
//! C_{n+1} = [(n + alpha - x) C_n - n C_{n-1}] / alpha. Key consequences used
//! throughout the crate:
//!
//! * orthogonality: sum_x w(x;alpha) C_m C_n = alpha^{-n} n! delta_{mn} with
//!   w(x;alpha) = e^{-alpha} alpha^x / x!,
//! * duality: C_n(x;alpha) = C_x(n;alpha) for integer arguments,
//! * forward shift: C_n(x+1;alpha) - C_n(x;alpha) = -(n/alpha) C_{n-1}(x;alpha),
//! * backward shift: C_n(x;alpha) - (x/alpha) C_n(x-1;alpha) = C_{n+1}(x;alpha).
//!
//! The recurrence is the production path; `gf_coeff_oracle` expands the
//! generating function directly and exists so tests can certify the
//! recurrence against an independent computation.

use thiserror::Error;

use crate::numeric::{ln_factorial, Dd, NeumaierSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharlierError {
    #[error("alpha must be nonzero")]
    ZeroAlpha,
    #[error("alpha must be positive for the Poisson weight, got {alpha}")]
    NonPositiveAlpha { alpha: f64 },
}

/// C_n(x; alpha) by the three-term recurrence in n.
pub fn charlier_eval(n: u32, x: f64, alpha: f64) -> Result<f64, CharlierError> {
    if alpha == 0.0 || alpha.is_nan() {
        return Err(CharlierError::ZeroAlpha);
    }
    Ok(charlier_raw(n, x, alpha))
}

pub(crate) fn charlier_raw(n: u32, x: f64, alpha: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 - x / alpha;
    for k in 1..n {
        let k = k as f64;
        let next = ((k + alpha - x) * cur - k * prev) / alpha;
        prev = cur;
        cur = next;
    }
    cur
}

/// C_m(x; alpha) and C_n(x; alpha) from a single upward pass.
pub(crate) fn charlier_pair(m: u32, n: u32, x: f64, alpha: f64) -> (f64, f64) {
    let hi = m.max(n);
    // Degree-0 values; overwritten when the pass reaches m or n.
    let mut c_m = 1.0;
    let mut c_n = 1.0;
    let mut prev = 1.0;
    let mut cur = 1.0 - x / alpha;
    for k in 1..=hi {
        if k == m {
            c_m = cur;
        }
        if k == n {
            c_n = cur;
        }
        if k == hi {
            break;
        }
        let kf = k as f64;
        let next = ((kf + alpha - x) * cur - kf * prev) / alpha;
        prev = cur;
        cur = next;
    }
    (c_m, c_n)
}

/// `charlier_pair` in double-double arithmetic.
///
/// The spectral transition sums evaluate C_m C_n where individual terms can
/// exceed the summed result by ~1e16; double precision term error is then
/// visible in the result, double-double error is not. alpha and x enter as
/// exact f64 values so both callers of a comparison see the same family.
pub(crate) fn charlier_pair_dd(m: u32, n: u32, x: f64, alpha: f64) -> (Dd, Dd) {
    let hi = m.max(n);
    let alpha_dd = Dd::from_f64(alpha);
    let a_minus_x = Dd::from_f64(alpha) - Dd::from_f64(x);
    let mut c_m = Dd::ONE;
    let mut c_n = Dd::ONE;
    let mut prev = Dd::ONE;
    let mut cur = Dd::ONE - Dd::from_f64(x) / alpha_dd;
    for k in 1..=hi {
        if k == m {
            c_m = cur;
        }
        if k == n {
            c_n = cur;
        }
        if k == hi {
            break;
        }
        let kf = Dd::from_f64(k as f64);
        let next = ((kf + a_minus_x) * cur - kf * prev) / alpha_dd;
        prev = cur;
        cur = next;
    }
    (c_m, c_n)
}

/// The exact z^n/n! coefficient of e^z (1 - z/alpha)^x for integer x:
/// sum_{k=0}^{min(n,x)} binom(n,k) binom(x,k) k! (-1/alpha)^k.
///
/// Independent of the recurrence; used as its certification oracle.
pub fn gf_coeff_oracle(n: u32, x: u32, alpha: f64) -> Result<f64, CharlierError> {
    if alpha == 0.0 || alpha.is_nan() {
        return Err(CharlierError::ZeroAlpha);
    }
    let k_max = n.min(x);
    let mut sum = NeumaierSum::new();
    let mut term = 1.0;
    sum.add(term);
    for k in 0..k_max {
        // Ratio of consecutive terms: binom and factorial factors telescoped.
        term *= (n - k) as f64 * (x - k) as f64 / ((k + 1) as f64) * (-1.0 / alpha);
        sum.add(term);
    }
    Ok(sum.value())
}

/// Poisson weight w(x; alpha) = e^{-alpha} alpha^x / x!, assembled in log
/// space so large x does not overflow the intermediate power or factorial.
pub fn poisson_weight(x: u64, alpha: f64) -> Result<f64, CharlierError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(CharlierError::NonPositiveAlpha { alpha });
    }
    Ok(ln_poisson_weight(x, alpha).exp())
}

pub(crate) fn ln_poisson_weight(x: u64, alpha: f64) -> f64 {
    x as f64 * alpha.ln() - alpha - ln_factorial(x)
}

/// Where the Poisson-weighted sums start checking for convergence: past the
/// weight's bulk plus the polynomial degrees.
pub(crate) fn weighted_sum_start(alpha: f64, m: u32, n: u32) -> u64 {
    (alpha + 10.0 * (alpha + 1.0).sqrt()).ceil() as u64 + m as u64 + n as u64
}

/// sum_x w(x; alpha) C_m(x; alpha) C_n(x; alpha), truncated once the terms are
/// steadily below 1e-3 * `target_abs_tol` beyond the starting window.
///
/// Equals alpha^{-n} n! delta_{mn} exactly; the deviation of the computed sum
/// is what the orthogonality certification measures.
pub fn orthogonality_sum(
    m: u32,
    n: u32,
    alpha: f64,
    target_abs_tol: f64,
) -> Result<f64, CharlierError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(CharlierError::NonPositiveAlpha { alpha });
    }
    let threshold = 1e-3 * target_abs_tol;
    let start = weighted_sum_start(alpha, m, n);
    let mut sum = NeumaierSum::new();
    let mut consecutive_small = 0u32;
    let mut x = 0u64;
    loop {
        let (c_m, c_n) = charlier_pair(m, n, x as f64, alpha);
        let term = poisson_weight(x, alpha)? * c_m * c_n;
        sum.add(term);
        consecutive_small = if term.abs() < threshold {
            consecutive_small + 1
        } else {
            0
        };
        // Never stop inside the weight's bulk, and only once the terms have
        // stayed negligible for a stretch (they pass through zeros).
        if x >= start && consecutive_small >= 10 {
            return Ok(sum.value());
        }
        // The weight decays superexponentially; this merely bounds the loop.
        if x > 1 << 24 {
            return Ok(sum.value());
        }
        x += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_base_cases() {
        assert_eq!(charlier_eval(0, 3.0, 2.0).unwrap(), 1.0);
        // C_1(2; 2) = 1 - 2/2 = 0.
        assert_eq!(charlier_eval(1, 2.0, 2.0).unwrap(), 0.0);
        assert_eq!(charlier_eval(1, 0.0, -1.0).unwrap(), 1.0);
        assert!(charlier_eval(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn gf_oracle_base_cases() {
        assert_eq!(gf_coeff_oracle(1, 0, 7.0).unwrap(), 1.0);
        // 1 - 2 * (1/2) = 0.
        assert_eq!(gf_coeff_oracle(2, 1, 2.0).unwrap(), 0.0);
        let via_oracle = gf_coeff_oracle(3, 3, 1.0).unwrap();
        let via_recurrence = charlier_eval(3, 3.0, 1.0).unwrap();
        assert!((via_oracle - via_recurrence).abs() < 1e-12);
        assert_eq!(via_oracle, 4.0);
    }

    #[test]
    fn recurrence_agrees_with_gf_oracle() {
        // Includes a negative alpha: the polynomials are defined for any
        // nonzero parameter even though the weight is not.
        for &alpha in &[0.5, 1.0, 2.0, 5.0, -1.0] {
            for n in 0..=20u32 {
                for x in 0..=20u32 {
                    let a = charlier_raw(n, x as f64, alpha);
                    let b = gf_coeff_oracle(n, x, alpha).unwrap();
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!(
                        (a - b).abs() <= 1e-9 * scale,
                        "recurrence {a} vs oracle {b} at n={n}, x={x}, alpha={alpha}"
                    );
                }
            }
        }
    }

    #[test]
    fn dd_recurrence_tracks_f64_and_is_exact_on_rational_cases() {
        // alpha = 0.5 keeps every recurrence step exactly representable for
        // small n, so the dd value must be exact: C_2(1; 0.5) = -3.
        let (c2, c1) = charlier_pair_dd(2, 1, 1.0, 0.5);
        assert_eq!(c2.value(), -3.0);
        assert_eq!(c1.value(), -1.0);
        // C_n(0; alpha) = 1 for every n (the recurrence telescopes), and the
        // dd pipeline reproduces that bit-exactly even for alpha with no
        // finite binary representation, where the f64 recurrence drifts.
        for &alpha in &[0.7f64, 1.3, std::f64::consts::PI] {
            for n in 0..=30u32 {
                let (cn, cm) = charlier_pair_dd(n, 5, 0.0, alpha);
                assert_eq!(cn.value(), 1.0, "n={n}, alpha={alpha}");
                assert_eq!(cm.value(), 1.0, "n={n}, alpha={alpha}");
            }
        }
        // Against the generating-function oracle at moderate degrees. The
        // bound is the oracle's own f64 noise; the dd recurrence sits far
        // below it. (Comparing dd to the f64 recurrence instead would be
        // meaningless at small x, where C_n is the minimal solution and the
        // forward f64 recurrence drifts factorially.)
        for &alpha in &[0.7, 2.0, 5.0] {
            for n in 0..=12u32 {
                for x in 0..=25u32 {
                    let want = gf_coeff_oracle(n, x, alpha).unwrap();
                    let d = charlier_pair_dd(n, 0, x as f64, alpha).0.value();
                    let scale = want.abs().max(1.0);
                    assert!(
                        (want - d).abs() <= 1e-9 * scale,
                        "n={n}, x={x}, alpha={alpha}: oracle {want} vs dd {d}"
                    );
                }
            }
        }
    }

    #[test]
    fn duality_swaps_index_and_argument() {
        for &alpha in &[0.5, 1.5, 2.0, 5.0] {
            for n in 0..=12u32 {
                for x in 0..=12u32 {
                    let a = charlier_raw(n, x as f64, alpha);
                    let b = charlier_raw(x, n as f64, alpha);
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!(
                        (a - b).abs() <= 1e-10 * scale,
                        "duality broken at n={n}, x={x}, alpha={alpha}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn shift_identities_hold() {
        for &alpha in &[0.5, 2.0, 5.0] {
            for n in 1..=15u32 {
                for x in 0..=15u32 {
                    let xf = x as f64;
                    // Forward: C_n(x+1) - C_n(x) = -(n/alpha) C_{n-1}(x).
                    let lhs = charlier_raw(n, xf + 1.0, alpha) - charlier_raw(n, xf, alpha);
                    let rhs = -(n as f64 / alpha) * charlier_raw(n - 1, xf, alpha);
                    let scale = lhs.abs().max(rhs.abs()).max(1.0);
                    assert!(
                        (lhs - rhs).abs() <= 1e-10 * scale,
                        "forward shift at n={n}, x={x}, alpha={alpha}"
                    );
                    // Backward: C_n(x) - (x/alpha) C_n(x-1) = C_{n+1}(x).
                    let lhs = charlier_raw(n, xf, alpha)
                        - xf / alpha * charlier_raw(n, xf - 1.0, alpha);
                    let rhs = charlier_raw(n + 1, xf, alpha);
                    let scale = lhs.abs().max(rhs.abs()).max(1.0);
                    assert!(
                        (lhs - rhs).abs() <= 1e-10 * scale,
                        "backward shift at n={n}, x={x}, alpha={alpha}"
                    );
                }
            }
        }
    }

    #[test]
    fn poisson_weight_matches_scalar_arithmetic() {
        assert!((poisson_weight(0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        // 2^2/2! e^{-2} = 2 e^{-2}.
        let want = 2.0 * (-2.0f64).exp();
        assert!((poisson_weight(2, 2.0).unwrap() - want).abs() < 1e-15);
        assert!(poisson_weight(3, 0.0).is_err());
        assert!(poisson_weight(3, -1.0).is_err());
    }

    #[test]
    fn poisson_weights_normalize() {
        let mut sum = NeumaierSum::new();
        for x in 0..=200u64 {
            sum.add(poisson_weight(x, 5.0).unwrap());
        }
        assert!(
            (sum.value() - 1.0).abs() <= 1e-14,
            "normalization defect {}",
            sum.value() - 1.0
        );
    }

    #[test]
    fn poisson_weight_survives_huge_x() {
        // Far in the tail the weight underflows to zero instead of tripping
        // an intermediate overflow.
        let w = poisson_weight(1_000_000, 2.0).unwrap();
        assert!((0.0..1e-300).contains(&w));
    }

    #[test]
    fn orthogonality_small_cases_absolute() {
        // At alpha = 2, n <= 6 the diagonal alpha^{-n} n! is at most ~11, so a
        // plain absolute comparison is meaningful here.
        for m in 0..=6u32 {
            for n in 0..=6u32 {
                let s = orthogonality_sum(m, n, 2.0, 1e-10).unwrap();
                let want = if m == n {
                    2.0f64.powi(-(n as i32)) * (1..=n as u64).map(|k| k as f64).product::<f64>()
                } else {
                    0.0
                };
                assert!(
                    (s - want).abs() <= 1e-9,
                    "orthogonality defect at m={m}, n={n}: {s} vs {want}"
                );
            }
        }
    }
}
