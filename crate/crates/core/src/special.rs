//! Scalar special functions backing the closed-form score expressions.
//!
//! Everything here is pure and reentrant. The checked entry points validate
//! their domain and return [`Error::Domain`] on bad input; the `*_raw`
//! evaluators skip the checks and propagate NaN, which the autodiff tape and
//! the inner scoring loops rely on for speed.

use crate::error::{Error, Result};

/// 1/sqrt(2*pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.3989422804014326779399460599343818684;
/// 1/sqrt(pi)
pub const FRAC_1_SQRT_PI: f64 = 0.5641895835477562869480794515607725858;
/// sqrt(2)
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

// Rational approximations from W. J. Cody's CALERF (netlib specfun).
// Max relative error about 1.5e-16 for erf, 1e-15 for erfc on [0, 26.5].
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// Complementary error function for y = |x|, valid for y > 0.46875.
fn erfc_positive_tail(y: f64) -> f64 {
    if y > 26.6 {
        return 0.0;
    }
    let r = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        (FRAC_1_SQRT_PI - z * (num + ERF_P[4]) / (den + ERF_Q[4])) / y
    };
    // exp(-y^2) split into an exactly representable part plus a remainder,
    // which keeps the tail accurate.
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Error function, |error| < 2 ulp over the real line.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        let t = 1.0 - erfc_positive_tail(y);
        if x < 0.0 {
            -t
        } else {
            t
        }
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf(x);
    }
    let tail = erfc_positive_tail(y);
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Standard normal density, unchecked.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via erfc, unchecked. Absolute error below 1e-15.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// phi(z), the standard normal density.
pub fn std_normal_pdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("std_normal_pdf({z})")));
    }
    Ok(norm_pdf(z))
}

/// Phi(z), the standard normal CDF.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("std_normal_cdf({z})")));
    }
    Ok(norm_cdf(z))
}

// Lanczos approximation, g = 7, 9 terms. Relative error below 2e-13 for x > 0.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Unchecked log-gamma for x > 0.
pub fn ln_gamma_raw(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series argument away from zero.
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma_raw(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut sum = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            sum += c / (x + i as f64);
        }
        let base = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * base.ln() - base + sum.ln()
    }
}

/// ln Gamma(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma({x}): requires x > 0")));
    }
    Ok(ln_gamma_raw(x))
}

const BETA_CF_MAX_ITER: usize = 400;
const BETA_CF_EPS: f64 = 1e-16;
const BETA_CF_FPMIN: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < BETA_CF_FPMIN {
        d = BETA_CF_FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_CF_FPMIN {
            d = BETA_CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_CF_FPMIN {
            c = BETA_CF_FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_CF_FPMIN {
            d = BETA_CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_CF_FPMIN {
            c = BETA_CF_FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= BETA_CF_EPS {
            return h;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
///
/// Extended with I_x = 0 for x < 0 and I_x = 1 for x > 1, so it doubles as
/// the CDF of a beta distribution clamped to the real line.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "regularized_incomplete_beta: a = {a}, b = {b} must be positive"
        )));
    }
    if x.is_nan() {
        return Err(Error::Domain("regularized_incomplete_beta: x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front =
        ln_gamma_raw(a + b) - ln_gamma_raw(a) - ln_gamma_raw(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// PDF and CDF of the standard student-t distribution with `nu` degrees of
/// freedom, evaluated at `z`. The CDF goes through the regularized
/// incomplete beta function.
pub fn student_t_pdf_cdf(z: f64, nu: f64) -> Result<(f64, f64)> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Domain(format!("student_t_pdf_cdf: nu = {nu}")));
    }
    if !z.is_finite() {
        return Err(Error::Domain(format!("student_t_pdf_cdf: z = {z}")));
    }
    let ln_coef = ln_gamma_raw((nu + 1.0) / 2.0)
        - ln_gamma_raw(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    let pdf = (ln_coef - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()).exp();
    // Two algebraically equal forms; the split keeps the incomplete-beta
    // argument away from 1 so no precision is lost to cancellation.
    let cdf = if z.abs() <= 1.0 {
        let x = z * z / (nu + z * z);
        0.5 + 0.5 * z.signum() * regularized_incomplete_beta(x, 0.5, nu / 2.0)?
    } else {
        let half_tail = 0.5 * regularized_incomplete_beta(nu / (nu + z * z), nu / 2.0, 0.5)?;
        if z > 0.0 {
            1.0 - half_tail
        } else {
            half_tail
        }
    };
    Ok((pdf, cdf))
}

const KUMMER_MAX_TERMS: usize = 600;
const KUMMER_ASYMPTOTIC_CUTOFF: f64 = -300.0;

/// Power series sum_k (a)_k / (b)_k z^k / k!, for z >= 0 (all terms share a
/// sign pattern that is safe to sum directly).
fn kummer_series(a: f64, b: f64, z: f64) -> Result<f64> {
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut small_count = 0;
    for k in 0..KUMMER_MAX_TERMS {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * z / (kf + 1.0);
        sum += term;
        if term.abs() <= f64::EPSILON * sum.abs() {
            small_count += 1;
            if small_count >= 2 {
                return Ok(sum);
            }
        } else {
            small_count = 0;
        }
        if !sum.is_finite() {
            return Err(Error::Numeric(format!(
                "kummer_1f1 series overflow at term {k} (a = {a}, b = {b}, z = {z})"
            )));
        }
    }
    Err(Error::Numeric(format!(
        "kummer_1f1 series did not converge (a = {a}, b = {b}, z = {z})"
    )))
}

/// Large negative z: 1F1(a,b;z) ~ Gamma(b)/Gamma(b-a) (-z)^{-a} 2F0(a, a-b+1; -1/z).
fn kummer_asymptotic_neg(a: f64, b: f64, z: f64) -> Result<f64> {
    let w = -1.0 / z;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut prev = f64::INFINITY;
    for k in 0..40 {
        let kf = k as f64;
        let next = term * (a + kf) * (a - b + 1.0 + kf) / (kf + 1.0) * w;
        if next.abs() >= prev.abs() {
            break; // truncate the asymptotic series at its smallest term
        }
        term = next;
        prev = next;
        sum += term;
    }
    let front = (ln_gamma_raw(b) - ln_gamma_raw(b - a)).exp() * (-z).powf(-a);
    Ok(front * sum)
}

/// Kummer's confluent hypergeometric function 1F1(a, b; z).
///
/// Negative-integer `a` terminates the series exactly. For z < 0 the Kummer
/// transform 1F1(a,b;z) = e^z 1F1(b-a, b; -z) avoids the alternating series,
/// and very large negative arguments switch to the asymptotic expansion.
/// Relative error is below 1e-12 on the parameter range used by the
/// variogram moments (a = -p/2, b = 1/2, z <= 0).
pub fn kummer_1f1(a: f64, b: f64, z: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() || !z.is_finite() {
        return Err(Error::Domain("kummer_1f1: non-finite argument".into()));
    }
    if b <= 0.0 && b == b.floor() {
        return Err(Error::Domain(format!(
            "kummer_1f1: b = {b} is a non-positive integer"
        )));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    // Terminating polynomial.
    if a <= 0.0 && a == a.floor() {
        let n = (-a) as usize;
        let mut term = 1.0_f64;
        let mut sum = 1.0_f64;
        for k in 0..n {
            let kf = k as f64;
            term *= (a + kf) / (b + kf) * z / (kf + 1.0);
            sum += term;
        }
        return Ok(sum);
    }
    if z < 0.0 {
        if z <= KUMMER_ASYMPTOTIC_CUTOFF && b - a > 0.0 {
            return kummer_asymptotic_neg(a, b, z);
        }
        return Ok(z.exp() * kummer_series(b - a, b, -z)?);
    }
    kummer_series(a, b, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, accurate to ~1e-15 for |z| <= 2. Test oracle
    /// independent of the rational approximation above.
    fn erf_series(z: f64) -> f64 {
        assert!(z.abs() <= 2.0);
        let mut term = z;
        let mut sum = z;
        for k in 1..120 {
            let kf = k as f64;
            term *= -z * z / kf;
            sum += term / (2.0 * kf + 1.0);
        }
        2.0 * FRAC_1_SQRT_PI * sum
    }

    /// Adaptive Simpson integration, used as a quadrature oracle below.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let m = 0.5 * (a + b);
        let fm = f(m);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 48)
    }

    fn lcg_stream(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed;
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn normal_pdf_reference_values() {
        assert!((std_normal_pdf(0.0).unwrap() - 0.3989422804014327).abs() < 1e-15);
        // direct evaluation of the formula at z = 1
        let expected = FRAC_1_SQRT_2PI * (-0.5f64).exp();
        assert!((std_normal_pdf(1.0).unwrap() - expected).abs() < 1e-16);
        assert!((std_normal_pdf(1.0).unwrap() - 0.2419707245191434).abs() < 1e-13);
        assert!(std_normal_pdf(f64::NAN).is_err());
        assert!(std_normal_pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn normal_pdf_symmetry() {
        let mut next = lcg_stream(7);
        for _ in 0..1000 {
            let z = 8.0 * (next() - 0.5);
            assert_eq!(std_normal_pdf(z).unwrap(), std_normal_pdf(-z).unwrap());
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(8.0).unwrap() - 1.0).abs() < 1e-12);
        // high-precision erf series oracle at z = 1
        let expected = 0.5 * (1.0 + erf_series(1.0 / SQRT_2));
        assert!((std_normal_cdf(1.0).unwrap() - expected).abs() < 1e-15);
        assert!((std_normal_cdf(1.0).unwrap() - 0.8413447460685429).abs() < 1e-14);
        assert!(std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn erf_matches_series_oracle() {
        let mut next = lcg_stream(99);
        for _ in 0..2000 {
            let z = 4.0 * (next() - 0.5);
            assert!((erf(z) - erf_series(z)).abs() < 2e-15, "z = {z}");
        }
        // spot values
        assert!((erf(1.0) - 0.8427007929497149).abs() < 1e-15);
        assert!((erfc(2.0) - 0.004677734981047266).abs() < 1e-17);
        assert!((erfc(5.0) - 1.5374597944280349e-12).abs() < 1e-26);
    }

    #[test]
    fn normal_cdf_complement_identity() {
        let mut next = lcg_stream(3);
        for _ in 0..10_000 {
            let z = 12.0 * (next() - 0.5);
            let s = norm_cdf(z) + norm_cdf(-z);
            assert!((s - 1.0).abs() <= 1e-12, "z = {z}, sum = {s}");
        }
    }

    #[test]
    fn normal_cdf_derivative_matches_pdf() {
        let h = 1e-5;
        let mut next = lcg_stream(11);
        for _ in 0..500 {
            let z = 8.0 * (next() - 0.5);
            let fd = (norm_cdf(z + h) - norm_cdf(z - h)) / (2.0 * h);
            let pdf = norm_pdf(z);
            if pdf > 1e-12 {
                assert!((fd - pdf).abs() / pdf < 1e-6, "z = {z}");
            }
        }
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-13);
        assert!((ln_gamma(5.0).unwrap() - 24.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-1.5).is_err());
    }

    #[test]
    fn ln_gamma_recurrence() {
        // Gamma(x+1) = x Gamma(x), checked in log space.
        let mut next = lcg_stream(17);
        for _ in 0..500 {
            let x = 0.05 + 30.0 * next();
            let lhs = ln_gamma_raw(x + 1.0);
            let rhs = ln_gamma_raw(x) + x.ln();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn incomplete_beta_reference_values() {
        assert!((regularized_incomplete_beta(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        // clamp extension below the support
        assert_eq!(regularized_incomplete_beta(-0.1, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(1.3, 2.0, 3.0).unwrap(), 1.0);
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 1.0, -2.0).is_err());

        // adaptive quadrature oracle for I_0.3(2, 5)
        let a = 2.0;
        let b = 5.0;
        let ln_norm = ln_gamma_raw(a + b) - ln_gamma_raw(a) - ln_gamma_raw(b);
        let density = |t: f64| (ln_norm + (a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln()).exp();
        let oracle = simpson(&density, 1e-12, 0.3, 1e-12);
        let got = regularized_incomplete_beta(0.3, a, b).unwrap();
        assert!((got - oracle).abs() < 1e-10, "got {got}, oracle {oracle}");
    }

    #[test]
    fn incomplete_beta_symmetry() {
        let mut next = lcg_stream(23);
        for _ in 0..2000 {
            let x = next();
            let a = 0.2 + 8.0 * next();
            let b = 0.2 + 8.0 * next();
            let lhs = regularized_incomplete_beta(x, a, b).unwrap();
            let rhs = regularized_incomplete_beta(1.0 - x, b, a).unwrap();
            assert!((lhs + rhs - 1.0).abs() <= 1e-9, "x={x} a={a} b={b}");
        }
    }

    #[test]
    fn student_t_reference_values() {
        let (_, cdf0) = student_t_pdf_cdf(0.0, 4.5).unwrap();
        assert!((cdf0 - 0.5).abs() < 1e-14);
        // Gaussian limit
        let (_, cdf) = student_t_pdf_cdf(1.0, 1e6).unwrap();
        assert!((cdf - norm_cdf(1.0)).abs() < 1e-4);
        // quadrature oracle for the t(3) CDF at 1
        let nu = 3.0;
        let pdf = |z: f64| student_t_pdf_cdf(z, nu).unwrap().0;
        let oracle = 0.5 + simpson(&pdf, 0.0, 1.0, 1e-12);
        let (_, got) = student_t_pdf_cdf(1.0, nu).unwrap();
        assert!((got - oracle).abs() < 1e-10, "got {got}, oracle {oracle}");
        assert!(student_t_pdf_cdf(1.0, 0.0).is_err());
        assert!(student_t_pdf_cdf(1.0, -3.0).is_err());
    }

    #[test]
    fn student_t_pdf_is_cdf_derivative() {
        let h = 1e-5;
        for &nu in &[1.5, 3.0, 7.0, 25.0] {
            for i in -20..=20 {
                let z = i as f64 * 0.2;
                let fd = (student_t_pdf_cdf(z + h, nu).unwrap().1
                    - student_t_pdf_cdf(z - h, nu).unwrap().1)
                    / (2.0 * h);
                let pdf = student_t_pdf_cdf(z, nu).unwrap().0;
                if pdf > 1e-6 {
                    assert!((fd - pdf).abs() / pdf < 1e-6, "z={z} nu={nu}");
                }
            }
        }
    }

    #[test]
    fn kummer_reference_values() {
        assert_eq!(kummer_1f1(-0.25, 0.5, 0.0).unwrap(), 1.0);
        // polynomial case: a = -1 gives 1 - 2z for b = 1/2
        for &z in &[-5.0, -1.0, -0.3, 0.7] {
            let got = kummer_1f1(-1.0, 0.5, z).unwrap();
            assert!((got - (1.0 - 2.0 * z)).abs() < 1e-14, "z = {z}");
        }
        assert!(kummer_1f1(-0.5, 0.0, -1.0).is_err());
        assert!(kummer_1f1(-0.5, -2.0, -1.0).is_err());
    }

    #[test]
    fn kummer_matches_direct_series_oracle() {
        // Direct term-by-term summation of the defining series at 200 terms.
        let direct = |a: f64, b: f64, z: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 0..200 {
                let kf = k as f64;
                term *= (a + kf) / (b + kf) * z / (kf + 1.0);
                sum += term;
            }
            sum
        };
        for &a in &[-0.25, -0.5, -0.9, 0.3] {
            for &z in &[-8.0, -2.0, -0.5, 0.0, 1.5] {
                let got = kummer_1f1(a, 0.5, z).unwrap();
                let want = direct(a, 0.5, z);
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                    "a={a} z={z}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn kummer_negative_integer_a_is_exact_polynomial() {
        // a = -2, b = 1/2: 1F1 = 1 - 4z + (4/3) z^2
        for &z in &[-3.0, -0.5, 0.25, 2.0] {
            let got = kummer_1f1(-2.0, 0.5, z).unwrap();
            let want = 1.0 - 4.0 * z + 4.0 / 3.0 * z * z;
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "z = {z}");
        }
    }

    #[test]
    fn kummer_deep_negative_argument() {
        // Both the series and the asymptotic branch must reproduce the
        // absolute moment E|Z|^p of Z ~ N(mu, 1), computed by quadrature.
        for &p in &[0.5, 1.0] {
            for &mu in &[4.0_f64, 20.0, 24.0, 26.0, 40.0] {
                let z = -mu * mu / 2.0;
                let f = kummer_1f1(-p / 2.0, 0.5, z).unwrap();
                let moment = 2.0_f64.powf(p / 2.0)
                    * (ln_gamma_raw((p + 1.0) / 2.0).exp() * FRAC_1_SQRT_PI)
                    * f;
                let integrand = |t: f64| t.abs().powf(p) * norm_pdf(t - mu);
                let oracle = simpson(&integrand, mu - 12.0, mu + 12.0, 1e-13);
                assert!(
                    (moment - oracle).abs() <= 1e-9 * oracle,
                    "p={p} mu={mu} (z={z}): {moment} vs {oracle}"
                );
            }
        }
    }
}
