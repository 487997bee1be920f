//! Shared numerical kernels: compensated summation, double-double arithmetic,
//! log-factorials, adaptive Simpson quadrature, and an embedded
//! Dormand-Prince 5(4) integrator.
//!
//! Everything in here is deterministic and allocation-light; the rest of the
//! crate builds its accuracy guarantees on top of these primitives.

use std::sync::OnceLock;

/// Neumaier variant of Kahan summation.
///
/// First-order error is relative to the true sum, not to the sum of
/// magnitudes, which is what makes the heavily cancelling Charlier sums
/// feasible in double precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::ops::AddAssign<f64> for NeumaierSum {
    fn add_assign(&mut self, x: f64) {
        self.add(x);
    }
}

/// Unevaluated sum of two doubles, |lo| <= ulp(hi)/2: roughly 106-bit
/// precision with the exponent range of f64.
///
/// The spectral transition sums alternate in sign with term magnitudes up to
/// ~1e16 times the result, so per-term relative error eps is fatally large;
/// evaluating the term recurrences in double-double drops it to ~eps^2.
/// Only the operations that pipeline needs are provided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Requires |a| >= |b| (or a == 0).
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

impl std::ops::Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: Dd) -> Dd {
        self + -rhs
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, rhs: Dd) -> Dd {
        // Two Newton-like correction terms recover full dd precision.
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Dd::from_f64(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Dd::from_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e } + Dd::from_f64(q3)
    }
}

const LN_FACT_CACHE_LEN: usize = 2048;

fn ln_fact_cache() -> &'static [f64] {
    static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut table = Vec::with_capacity(LN_FACT_CACHE_LEN);
        let mut acc = NeumaierSum::new();
        table.push(0.0);
        for k in 1..LN_FACT_CACHE_LEN as u64 {
            acc.add((k as f64).ln());
            table.push(acc.value());
        }
        table
    })
}

/// ln(n!) = ln Gamma(n+1).
///
/// Cached compensated sums of ln k for n < 2048 (error a few ulps, which the
/// Poisson-weight normalization at 1e-14 needs), Stirling series beyond.
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < LN_FACT_CACHE_LEN {
        return ln_fact_cache()[n as usize];
    }
    // Stirling for ln Gamma(z), z = n + 1. At z > 2048 the truncated tail is
    // below 1e-24 relative, far under f64 resolution.
    let z = n as f64 + 1.0;
    const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let series = zi * (1.0 / 12.0 - zi2 * (1.0 / 360.0 - zi2 / 1260.0));
    (z - 0.5) * z.ln() - z + HALF_LN_TWO_PI + series
}

/// ln binom(n, k); requires k <= n.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Adaptive Simpson quadrature with Richardson correction.
///
/// The tolerance is absolute over [a, b]; callers integrating across known
/// kinks should split there first, this routine assumes a smooth integrand.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, abs_tol, 52)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * abs_tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * abs_tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * abs_tol, depth - 1)
}

/// Integration failure: the controller drove the step below the resolvable
/// limit (or ran out of its step budget) before reaching the end time.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeStalled {
    pub t_reached: f64,
}

pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_step: None,
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau. FSAL: the 7th stage of an accepted step is the
// first stage of the next.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (5th minus embedded 4th order weights), for the error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

/// Integrates y' = rhs(t, y) from t0 to t1 in place with the adaptive
/// Dormand-Prince 5(4) pair. `y` holds y(t0) on entry and y(t1) on success.
pub fn integrate_dopri5<F>(
    rhs: &mut F,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    opts: &OdeOptions,
) -> Result<(), OdeStalled>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(());
    }
    debug_assert!(span > 0.0, "integration runs forward");
    let dim = y.len();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    let h_max = opts.max_step.unwrap_or(span).min(span);
    let h_min = span * 1e-14;
    let mut h = (span * 1e-2).min(h_max);
    let mut t = t0;
    rhs(t, y, &mut k[0]);
    let mut steps = 0usize;

    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(OdeStalled { t_reached: t });
        }
        h = h.min(t1 - t).min(h_max);
        if h < h_min {
            return Err(OdeStalled { t_reached: t });
        }

        for i in 0..dim {
            y_stage[i] = y[i] + h * A21 * k[0][i];
        }
        rhs_stage(rhs, t + C2 * h, &y_stage, &mut k, 1);
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        rhs_stage(rhs, t + C3 * h, &y_stage, &mut k, 2);
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        rhs_stage(rhs, t + C4 * h, &y_stage, &mut k, 3);
        for i in 0..dim {
            y_stage[i] =
                y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        rhs_stage(rhs, t + C5 * h, &y_stage, &mut k, 4);
        for i in 0..dim {
            y_stage[i] = y[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        rhs_stage(rhs, t + h, &y_stage, &mut k, 5);
        for i in 0..dim {
            y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        rhs_stage(rhs, t + h, &y_new, &mut k, 6);

        // WRMS error norm against abs_tol + rel_tol * |y|.
        let mut err_sq = 0.0;
        for i in 0..dim {
            let e = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            let r = e / scale;
            err_sq += r * r;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y_new);
            k.swap(0, 6); // FSAL
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok(())
}

#[inline]
fn rhs_stage<F>(rhs: &mut F, t: f64, y: &[f64], k: &mut [Vec<f64>], idx: usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rhs(t, y, &mut k[idx]);
}
