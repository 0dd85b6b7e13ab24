//! Closed-form univariate CRPS for every [`UnivariateLaw`] variant, plus the
//! quadrature oracle used by tests to validate each closed form against the
//! integral definition of the score.

use crate::distributions::UnivariateLaw;
use crate::error::{Error, Result};
use crate::special;

/// H(mu, var) = mu (2 Phi(mu/sigma) - 1) + 2 sigma phi(mu/sigma), the
/// Gaussian building block of every mixture CRPS expression. Equal to the
/// absolute first moment E|Z| of Z ~ N(mu, var), with H(mu, 0) = |mu|.
pub fn h_function(mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mu.abs();
    }
    let sigma = var.sqrt();
    let z = mu / sigma;
    mu * (2.0 * special::norm_cdf(z) - 1.0) + 2.0 * sigma * special::norm_pdf(z)
}

/// CRPS of a univariate Gaussian.
pub fn crps_gaussian(mean: f64, var: f64, y: f64) -> f64 {
    if var <= 0.0 {
        return (y - mean).abs();
    }
    let sigma = var.sqrt();
    let z = (y - mean) / sigma;
    sigma
        * (z * (2.0 * special::norm_cdf(z) - 1.0) + 2.0 * special::norm_pdf(z)
            - special::FRAC_1_SQRT_PI)
}

/// CRPS of a univariate Gaussian mixture (Grimit's expression):
/// sum_k w_k H(y - mu_k, var_k) - 1/2 sum_{k,l} w_k w_l H(mu_k - mu_l, var_k + var_l).
pub fn crps_mixture_gaussian(weights: &[f64], means: &[f64], vars: &[f64], y: f64) -> Result<f64> {
    let m = weights.len();
    if means.len() != m || vars.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "mixture parameter lengths differ: {m}, {}, {}",
            means.len(),
            vars.len()
        )));
    }
    if vars.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("mixture variance must be positive".into()));
    }
    let mut first = 0.0;
    for k in 0..m {
        first += weights[k] * h_function(y - means[k], vars[k]);
    }
    let mut second = 0.0;
    for k in 0..m {
        // diagonal term once, off-diagonal pairs doubled by symmetry
        second += weights[k] * weights[k] * h_function(0.0, 2.0 * vars[k]);
        for l in (k + 1)..m {
            second +=
                2.0 * weights[k] * weights[l] * h_function(means[k] - means[l], vars[k] + vars[l]);
        }
    }
    Ok(first - 0.5 * second)
}

/// CRPS of a log-normal law (parameters of the underlying normal).
///
/// For y <= 0 continuity with the y -> 0+ limit fixes the branch to
/// 2 exp(mu + var/2) Phi(-sigma/sqrt(2)) - y.
pub fn crps_log_normal(mu: f64, var: f64, y: f64) -> f64 {
    let sigma = var.sqrt();
    let ex = (mu + var / 2.0).exp();
    if y > 0.0 {
        let y0 = (y.ln() - mu) / sigma;
        y * (2.0 * special::norm_cdf(y0) - 1.0)
            - 2.0
                * ex
                * (special::norm_cdf(y0 - sigma) + special::norm_cdf(sigma / special::SQRT_2)
                    - 1.0)
    } else {
        2.0 * ex * special::norm_cdf(-sigma / special::SQRT_2) - y
    }
}

/// CRPS of a student-t law with location/scale/dof. Requires dof > 1 for the
/// score to be finite; values within 1e-6 of 1 are rejected as degenerate.
pub fn crps_student_t(loc: f64, scale: f64, dof: f64, y: f64) -> Result<f64> {
    if dof <= 1.0 + 1e-6 {
        return Err(Error::InfiniteScore(format!(
            "student-t CRPS requires dof > 1, got {dof}"
        )));
    }
    let y0 = (y - loc) / scale;
    let (pdf, cdf) = special::student_t_pdf_cdf(y0, dof)?;
    let ln_b = |a: f64, b: f64| {
        special::ln_gamma_raw(a) + special::ln_gamma_raw(b) - special::ln_gamma_raw(a + b)
    };
    let b_half_num = ln_b(0.5, dof - 0.5).exp();
    let b_half_den = ln_b(0.5, dof / 2.0).exp();
    Ok(scale
        * (y0 * (2.0 * cdf - 1.0) + 2.0 * pdf * (dof + y0 * y0) / (dof - 1.0)
            - 2.0 * dof.sqrt() * b_half_num / ((dof - 1.0) * b_half_den * b_half_den)))
}

/// CRPS of a beta law on [0, 1], valid for observations anywhere on the real
/// line through the clamped beta CDF.
pub fn crps_beta(alpha: f64, beta: f64, y: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!(
            "crps_beta: alpha = {alpha}, beta = {beta} must be positive"
        )));
    }
    let f_ab = special::regularized_incomplete_beta(y, alpha, beta)?;
    let f_a1b = special::regularized_incomplete_beta(y, alpha + 1.0, beta)?;
    let mean = alpha / (alpha + beta);
    let pair = (special::ln_gamma_raw(alpha + beta) + special::ln_gamma_raw(alpha + 0.5)
        + special::ln_gamma_raw(beta + 0.5)
        - special::ln_gamma_raw(alpha + beta + 0.5)
        - special::ln_gamma_raw(alpha)
        - special::ln_gamma_raw(beta))
    .exp()
        * special::FRAC_1_SQRT_PI
        / (alpha + beta);
    Ok(y * (2.0 * f_ab - 1.0) + mean * (1.0 - 2.0 * f_a1b) - pair)
}

/// CRPS of `scale * B(alpha, beta)` by rescaling.
pub fn crps_scaled_beta(alpha: f64, beta: f64, scale: f64, y: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("crps_scaled_beta: scale = {scale}")));
    }
    Ok(scale * crps_beta(alpha, beta, y / scale)?)
}

/// Exact CRPS of a weighted empirical law:
/// sum_i w_i |x_i - y| - sum_{i<j} w_i w_j |x_i - x_j|, the pair sum done in
/// O(m log m) through prefix sums after sorting.
pub fn crps_empirical(points: &[f64], weights: &[f64], y: f64) -> Result<f64> {
    let m = points.len();
    if m == 0 || weights.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} points, {} weights",
            weights.len()
        )));
    }
    let first: f64 = points
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - y).abs())
        .sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
    let mut w_prefix = 0.0;
    let mut wx_prefix = 0.0;
    let mut cross = 0.0;
    for &i in &order {
        let (x, w) = (points[i], weights[i]);
        cross += w * (x * w_prefix - wx_prefix);
        w_prefix += w;
        wx_prefix += w * x;
    }
    Ok(first - cross)
}

/// Closed-form CRPS for any univariate law.
pub fn crps(law: &UnivariateLaw, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("crps: observation {y}")));
    }
    match law {
        UnivariateLaw::Gaussian { mean, var } => Ok(crps_gaussian(*mean, *var, y)),
        UnivariateLaw::MixtureGaussian {
            weights,
            means,
            vars,
        } => crps_mixture_gaussian(weights, means, vars, y),
        UnivariateLaw::LogNormal { mu, var } => Ok(crps_log_normal(*mu, *var, y)),
        UnivariateLaw::StudentT { loc, scale, dof } => crps_student_t(*loc, *scale, *dof, y),
        UnivariateLaw::ScaledBeta { alpha, beta, scale } => {
            crps_scaled_beta(*alpha, *beta, *scale, y)
        }
        UnivariateLaw::PointMass { location } => Ok((y - location).abs()),
        UnivariateLaw::Empirical { points, weights } => crps_empirical(points, weights, y),
    }
}

/// Adaptive Simpson quadrature; `Err` when the recursion depth is exhausted
/// before the tolerance is met everywhere.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
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
        converged: &mut bool,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else if b - a <= 1e-9 {
            // A jump pinched into an interval this narrow contributes less
            // than the error budget for any integrand bounded by 1.
            left + right + delta / 15.0
        } else if depth == 0 {
            *converged = false;
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, converged)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, converged)
        }
    }
    if !(b > a) {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut converged = true;
    let v = rec(f, a, b, fa, fm, fb, whole, tol, 52, &mut converged);
    if converged {
        Ok(v)
    } else {
        Err(Error::Numeric(format!(
            "quadrature did not converge on [{a}, {b}]"
        )))
    }
}

/// Quadrature oracle for the integral definition of CRPS:
/// int [F(z) - 1(y <= z)]^2 dz over the given support, split at the
/// observation. Absolute error <= 1e-7. Test support, not a production path.
pub fn crps_quadrature_oracle<F: Fn(f64) -> f64>(
    cdf: F,
    y: f64,
    support: (f64, f64),
) -> Result<f64> {
    let lo = support.0.min(y - 1.0);
    let hi = support.1.max(y + 1.0);
    let below = adaptive_simpson(&|z| cdf(z).powi(2), lo, y, 0.5e-7)?;
    let above = adaptive_simpson(&|z| (cdf(z) - 1.0).powi(2), y, hi, 0.5e-7)?;
    Ok(below + above)
}

/// Convenience wrapper evaluating the oracle on a law's own CDF.
pub fn crps_oracle_for_law(law: &UnivariateLaw, y: f64) -> Result<f64> {
    crps_quadrature_oracle(|z| law.cdf(z).unwrap_or(f64::NAN), y, law.support_hint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    const SQRT_2_OVER_PI: f64 = 0.7978845608028653558798921198687637;

    #[test]
    fn gaussian_reference_value() {
        // sqrt(2/pi) - 1/sqrt(pi), quadrature-validated below
        let got = crps_gaussian(0.0, 1.0, 0.0);
        assert!((got - 0.23369497725510935).abs() < 1e-14);
        let oracle = crps_oracle_for_law(
            &UnivariateLaw::Gaussian {
                mean: 0.0,
                var: 1.0,
            },
            0.0,
        )
        .unwrap();
        assert!((got - oracle).abs() < 1e-6);
    }

    #[test]
    fn h_function_symmetric_term() {
        for &var in &[0.25f64, 1.0, 9.0] {
            let sigma = var.sqrt();
            assert!((h_function(0.0, var) - sigma * SQRT_2_OVER_PI).abs() < 1e-14);
        }
        assert_eq!(h_function(-3.0, 0.0), 3.0);
    }

    #[test]
    fn point_mass_is_absolute_error() {
        let law = UnivariateLaw::PointMass { location: 1.5 };
        assert_eq!(crps(&law, 4.0).unwrap(), 2.5);
        assert_eq!(crps(&law, 1.5).unwrap(), 0.0);
        let oracle = crps_oracle_for_law(&law, 4.0).unwrap();
        assert!((oracle - 2.5).abs() < 1e-6);
    }

    #[test]
    fn single_component_mixture_reduces_to_gaussian() {
        let mut r = rng::from_seed(1);
        for _ in 0..200 {
            let mean = 4.0 * (r.gen::<f64>() - 0.5);
            let var = 0.1 + 3.0 * r.gen::<f64>();
            let y = 6.0 * (r.gen::<f64>() - 0.5);
            let mix = crps_mixture_gaussian(&[1.0], &[mean], &[var], y).unwrap();
            let gauss = crps_gaussian(mean, var, y);
            assert!((mix - gauss).abs() < 1e-12);
        }
    }

    #[test]
    fn two_component_mixture_matches_quadrature() {
        let law = UnivariateLaw::MixtureGaussian {
            weights: vec![0.5, 0.5],
            means: vec![-1.0, 1.0],
            vars: vec![1.0, 1.0],
        };
        let got = crps(&law, 0.0).unwrap();
        let oracle = crps_oracle_for_law(&law, 0.0).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn mixture_rejects_bad_variance() {
        assert!(crps_mixture_gaussian(&[1.0], &[0.0], &[0.0], 0.0).is_err());
        assert!(crps_mixture_gaussian(&[1.0], &[0.0], &[-1.0], 0.0).is_err());
    }

    #[test]
    fn log_normal_nonpositive_branch() {
        // The y <= 0 branch and its continuity at zero, against quadrature.
        let (mu, var) = (0.3, 0.49);
        let law = UnivariateLaw::LogNormal { mu, var };
        for &y in &[-2.0, -0.5, 0.0] {
            let got = crps_log_normal(mu, var, y);
            let oracle = crps_oracle_for_law(&law, y).unwrap();
            assert!((got - oracle).abs() < 1e-6, "y = {y}: {got} vs {oracle}");
        }
        let at_zero = crps_log_normal(mu, var, 0.0);
        let just_above = crps_log_normal(mu, var, 1e-9);
        assert!((at_zero - just_above).abs() < 1e-6);
    }

    #[test]
    fn student_t_low_dof_is_infinite_score() {
        assert!(matches!(
            crps_student_t(0.0, 1.0, 1.0, 0.5),
            Err(Error::InfiniteScore(_))
        ));
        assert!(matches!(
            crps_student_t(0.0, 1.0, 1.0 + 1e-9, 0.5),
            Err(Error::InfiniteScore(_))
        ));
        assert!(crps_student_t(0.0, 1.0, 1.1, 0.5).is_ok());
    }

    #[test]
    fn uniform_crps_analytic_check() {
        // B(1,1) is uniform on [0,1]: CRPS = 1/3 - y + y^2, so 1/12 at y = 1/2.
        let got = crps_beta(1.0, 1.0, 0.5).unwrap();
        assert!((got - 1.0 / 12.0).abs() < 1e-12, "{got}");
        for &y in &[0.1, 0.35, 0.8] {
            let expect = 1.0 / 3.0 - y + y * y;
            assert!((crps_beta(1.0, 1.0, y).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_sorted_matches_bruteforce() {
        let mut r = rng::from_seed(7);
        for _ in 0..200 {
            let m = r.gen_range(1..40);
            let points: Vec<f64> = (0..m).map(|_| 10.0 * (r.gen::<f64>() - 0.5)).collect();
            let raw: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.01).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let y = 12.0 * (r.gen::<f64>() - 0.5);
            let fast = crps_empirical(&points, &weights, y).unwrap();
            let mut slow = 0.0;
            for i in 0..m {
                slow += weights[i] * (points[i] - y).abs();
                for j in 0..m {
                    slow -= 0.5 * weights[i] * weights[j] * (points[i] - points[j]).abs();
                }
            }
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    /// Every closed form against the quadrature oracle on random parameters.
    /// The acceptance suite runs the full 200-parameterization sweep; this is
    /// the fast per-variant version.
    #[test]
    fn closed_forms_match_quadrature() {
        let mut r = rng::from_seed(20240917);
        let mut cases: Vec<(UnivariateLaw, f64)> = Vec::new();
        for _ in 0..30 {
            let mean = 3.0 * (r.gen::<f64>() - 0.5);
            let var = 0.05 + 2.0 * r.gen::<f64>();
            let y = mean + 4.0 * (r.gen::<f64>() - 0.5);
            cases.push((UnivariateLaw::Gaussian { mean, var }, y));

            let m = r.gen_range(2..5);
            let raw: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            cases.push((
                UnivariateLaw::MixtureGaussian {
                    weights: raw.iter().map(|w| w / total).collect(),
                    means: (0..m).map(|_| 4.0 * (r.gen::<f64>() - 0.5)).collect(),
                    vars: (0..m).map(|_| 0.1 + 1.5 * r.gen::<f64>()).collect(),
                },
                4.0 * (r.gen::<f64>() - 0.5),
            ));

            cases.push((
                UnivariateLaw::LogNormal {
                    mu: r.gen::<f64>() - 0.5,
                    var: 0.05 + 0.8 * r.gen::<f64>(),
                },
                3.0 * r.gen::<f64>() - 0.5,
            ));

            cases.push((
                UnivariateLaw::StudentT {
                    loc: 2.0 * (r.gen::<f64>() - 0.5),
                    scale: 0.3 + 1.5 * r.gen::<f64>(),
                    dof: 1.3 + 6.0 * r.gen::<f64>(),
                },
                5.0 * (r.gen::<f64>() - 0.5),
            ));

            cases.push((
                UnivariateLaw::ScaledBeta {
                    alpha: 0.4 + 4.0 * r.gen::<f64>(),
                    beta: 0.4 + 4.0 * r.gen::<f64>(),
                    scale: 0.2 + 2.0 * r.gen::<f64>(),
                },
                1.4 * r.gen::<f64>() - 0.1,
            ));
        }
        for (law, y) in cases {
            let got = crps(&law, y).unwrap();
            let oracle = crps_oracle_for_law(&law, y).unwrap();
            assert!(
                (got - oracle).abs() <= 1e-5,
                "{law:?} at y = {y}: closed {got}, oracle {oracle}"
            );
        }
    }

    /// Closed form against the pairwise sample estimate within 4 standard
    /// errors, using disjoint pairs so the contributions are independent.
    #[test]
    fn closed_forms_match_sample_estimate() {
        let laws = vec![
            UnivariateLaw::Gaussian {
                mean: 0.7,
                var: 1.7,
            },
            UnivariateLaw::MixtureGaussian {
                weights: vec![0.3, 0.7],
                means: vec![-1.0, 1.5],
                vars: vec![0.6, 1.2],
            },
            UnivariateLaw::LogNormal { mu: 0.1, var: 0.5 },
            UnivariateLaw::StudentT {
                loc: -0.4,
                scale: 0.9,
                dof: 5.0,
            },
            UnivariateLaw::ScaledBeta {
                alpha: 2.0,
                beta: 3.0,
                scale: 1.5,
            },
        ];
        let mut r = rng::from_seed(5577);
        for law in laws {
            let y = 0.8;
            let n_pairs = 50_000;
            let mut contribs = Vec::with_capacity(n_pairs);
            for _ in 0..n_pairs {
                let u = law.sample(&mut r);
                let v = law.sample(&mut r);
                contribs.push(0.5 * ((u - y).abs() + (v - y).abs()) - 0.5 * (u - v).abs());
            }
            let mean: f64 = contribs.iter().sum::<f64>() / n_pairs as f64;
            let var: f64 = contribs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
                / (n_pairs - 1) as f64;
            let se = (var / n_pairs as f64).sqrt();
            let closed = crps(&law, y).unwrap();
            assert!(
                (closed - mean).abs() <= 4.0 * se,
                "{law:?}: closed {closed}, sampled {mean} +- {se}"
            );
        }
    }

    #[test]
    fn crps_grows_like_absolute_error_in_the_tails() {
        let laws = vec![
            UnivariateLaw::Gaussian {
                mean: 0.5,
                var: 2.0,
            },
            UnivariateLaw::MixtureGaussian {
                weights: vec![0.5, 0.5],
                means: vec![-1.0, 1.0],
                vars: vec![1.0, 0.5],
            },
            UnivariateLaw::LogNormal { mu: 0.0, var: 0.3 },
        ];
        for law in laws {
            for &y in &[1.0e4, -1.0e4] {
                let ratio = crps(&law, y).unwrap() / y.abs();
                assert!((ratio - 1.0).abs() < 1e-3, "{law:?} at {y}: ratio {ratio}");
            }
        }
    }
}
