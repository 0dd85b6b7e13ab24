//! Multivariate scoring rules: Conditional CRPS over a conditional
//! specification, Energy Score, Variogram Score, Logarithmic Score and the
//! bivariate-marginal negative log-likelihood. Lower is better for all of
//! them.

use crate::crps;
use crate::distributions::{ConditionalOracle, Distribution, MvGaussian, MvMixtureGaussian};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::special;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A conditional specification: the list of (target, conditioning set)
/// pairs that defines a CCRPS variant. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalSpec {
    pairs: Vec<(usize, Vec<usize>)>,
}

impl ConditionalSpec {
    /// Validate and build a specification for dimension `d`. Duplicate pairs
    /// are allowed; callers can surface them via [`Self::duplicate_count`].
    pub fn new(pairs: Vec<(usize, Vec<usize>)>, d: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("conditional specification is empty".into()));
        }
        for (v, cond) in &pairs {
            if *v >= d {
                return Err(Error::Config(format!(
                    "target {v} out of range for dimension {d}"
                )));
            }
            if cond.iter().any(|j| *j >= d) {
                return Err(Error::Config(format!(
                    "conditioning index out of range for dimension {d}"
                )));
            }
            if cond.contains(v) {
                return Err(Error::Config(format!(
                    "target {v} appears in its own conditioning set"
                )));
            }
            let mut seen = cond.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != cond.len() {
                return Err(Error::Config(format!(
                    "conditioning set of target {v} repeats an index"
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// The chain specification for a permutation `phi` of 0..d:
    /// (phi_j, {phi_0, ..., phi_{j-1}}) for every j. This is the family that
    /// makes CCRPS strictly proper for continuous and discrete laws.
    pub fn chain(d: usize, phi: &[usize]) -> Result<Self> {
        if phi.len() != d {
            return Err(Error::Config(format!(
                "permutation has length {}, expected {d}",
                phi.len()
            )));
        }
        let mut seen = vec![false; d];
        for &p in phi {
            if p >= d || seen[p] {
                return Err(Error::Config("not a permutation of 0..d".into()));
            }
            seen[p] = true;
        }
        let pairs = (0..d)
            .map(|j| (phi[j], phi[..j].to_vec()))
            .collect();
        Self::new(pairs, d)
    }

    /// The identity-permutation chain.
    pub fn chain_identity(d: usize) -> Result<Self> {
        let phi: Vec<usize> = (0..d).collect();
        Self::chain(d, &phi)
    }

    /// The specification conditioning on at most one variable:
    /// all marginals plus all (i, {j}) with i != j. q = d + d(d-1).
    pub fn t0(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let mut pairs: Vec<(usize, Vec<usize>)> = (0..d).map(|i| (i, Vec::new())).collect();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    pairs.push((i, vec![j]));
                }
            }
        }
        Self::new(pairs, d)
    }

    pub fn pairs(&self) -> &[(usize, Vec<usize>)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of repeated (target, conditioning set) pairs.
    pub fn duplicate_count(&self) -> usize {
        let mut canon: Vec<(usize, Vec<usize>)> = self
            .pairs
            .iter()
            .map(|(v, c)| {
                let mut c = c.clone();
                c.sort_unstable();
                (*v, c)
            })
            .collect();
        canon.sort();
        let total = canon.len();
        canon.dedup();
        total - canon.len()
    }
}

/// Outcome of a CCRPS evaluation. `value` may be `+inf`, in which case
/// `n_ill_defined` says how many conditional terms hit the infinity clause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResult {
    pub value: f64,
    pub n_ill_defined: usize,
}

/// Conditional CRPS: the sum of closed-form univariate CRPS terms over the
/// specification. Ill-defined conditionals contribute `+inf` by definition.
pub fn ccrps<O: ConditionalOracle + ?Sized>(
    dist: &O,
    spec: &ConditionalSpec,
    y: &[f64],
) -> Result<ScoreResult> {
    if y.len() != dist.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, distribution dimension {}",
            y.len(),
            dist.dim()
        )));
    }
    let mut total = 0.0;
    let mut n_ill = 0usize;
    for (v, cond) in spec.pairs() {
        let obs: Vec<f64> = cond.iter().map(|&j| y[j]).collect();
        match dist.conditional(*v, cond, &obs) {
            Ok(law) => match crps::crps(&law, y[*v]) {
                Ok(term) => total += term,
                Err(Error::InfiniteScore(_)) => total = f64::INFINITY,
                Err(e) => return Err(e),
            },
            Err(Error::IllDefinedConditional(_)) => {
                total = f64::INFINITY;
                n_ill += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ScoreResult {
        value: total,
        n_ill_defined: n_ill,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 2.0) {
        return Err(Error::Domain(format!(
            "energy score requires beta in (0, 2), got {beta}"
        )));
    }
    Ok(())
}

fn norm_pow(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if beta == 1.0 {
        sq.sqrt()
    } else {
        sq.powf(beta / 2.0)
    }
}

/// Exact Energy Score of a weighted ensemble:
/// sum_i w_i ||x_i - y||^beta - 1/2 sum_{i,j} w_i w_j ||x_i - x_j||^beta.
pub fn energy_score_ensemble(
    points: &[Vec<f64>],
    weights: &[f64],
    y: &[f64],
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let m = points.len();
    if m == 0 || weights.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} points, {} weights",
            weights.len()
        )));
    }
    let mut first = 0.0;
    for (x, w) in points.iter().zip(weights) {
        first += w * norm_pow(x, y, beta);
    }
    let mut second = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            second += 2.0 * weights[i] * weights[j] * norm_pow(&points[i], &points[j], beta);
        }
    }
    Ok(first - 0.5 * second)
}

/// Energy Score. Ensembles use the exact weighted double sum; analytic
/// distributions draw `n_mc` samples and use the unbiased U-statistic over
/// distinct pairs for the self-distance term.
pub fn energy_score(
    dist: &Distribution,
    y: &[f64],
    beta: f64,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<f64> {
    check_beta(beta)?;
    if y.len() != dist.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, distribution dimension {}",
            y.len(),
            dist.dim()
        )));
    }
    if let Distribution::Ensemble(e) = dist {
        return energy_score_ensemble(e.points(), e.weights(), y, beta);
    }
    if n_mc < 2 {
        return Err(Error::Config(format!(
            "energy score Monte-Carlo needs n_mc >= 2, got {n_mc}"
        )));
    }
    let samples = dist.sample_n(rng, n_mc);
    let m = n_mc as f64;
    let first: f64 = samples.iter().map(|v| norm_pow(v, y, beta)).sum::<f64>() / m;
    let mut second = 0.0;
    for i in 0..n_mc {
        for j in (i + 1)..n_mc {
            second += norm_pow(&samples[i], &samples[j], beta);
        }
    }
    second /= m * (m - 1.0);
    Ok(first - second)
}

fn check_vs_order(p: f64) -> Result<()> {
    if p != 0.5 && p != 1.0 && p != 2.0 {
        return Err(Error::Domain(format!(
            "variogram score supports p in {{0.5, 1, 2}}, got {p}"
        )));
    }
    Ok(())
}

/// Absolute moment E|Z|^p of Z ~ N(mu, var) through Kummer's function:
/// sigma^p 2^{p/2} Gamma((p+1)/2)/sqrt(pi) 1F1(-p/2, 1/2; -mu^2/(2 var)).
pub fn gaussian_abs_moment(mu: f64, var: f64, p: f64) -> Result<f64> {
    if var < 0.0 {
        return Err(Error::Domain(format!("negative variance {var}")));
    }
    if var == 0.0 {
        return Ok(mu.abs().powf(p));
    }
    let f = special::kummer_1f1(-p / 2.0, 0.5, -mu * mu / (2.0 * var))?;
    Ok(var.powf(p / 2.0)
        * 2.0_f64.powf(p / 2.0)
        * special::ln_gamma_raw((p + 1.0) / 2.0).exp()
        * special::FRAC_1_SQRT_PI
        * f)
}

/// E|Y_i - Y_j|^p for a Gaussian mixture, exactly, one Kummer evaluation per
/// component. Avoids any integral approximation.
fn mixture_pair_moment(mix: &MvMixtureGaussian, i: usize, j: usize, p: f64) -> Result<f64> {
    let mut total = 0.0;
    for (w, c) in mix.weights().iter().zip(mix.components()) {
        let mu = c.mu()[i] - c.mu()[j];
        let var = c.sigma().get(i, i) + c.sigma().get(j, j) - 2.0 * c.sigma().get(i, j);
        total += w * gaussian_abs_moment(mu, var.max(0.0), p)?;
    }
    Ok(total)
}

fn variogram_from_moments(
    y: &[f64],
    p: f64,
    moment: impl Fn(usize, usize) -> Result<f64>,
) -> Result<f64> {
    let d = y.len();
    let mut total = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let observed = (y[i] - y[j]).abs().powf(p);
            let expected = moment(i, j)?;
            let diff = observed - expected;
            total += diff * diff;
        }
    }
    Ok(total)
}

/// Variogram Score of order p over unordered coordinate pairs i < j.
/// Gaussians and mixtures take the closed-form moment path; ensembles use
/// the exact weighted sum; other families fall back to `n_mc` samples.
pub fn variogram_score(
    dist: &Distribution,
    y: &[f64],
    p: f64,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<f64> {
    check_vs_order(p)?;
    if y.len() != dist.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, distribution dimension {}",
            y.len(),
            dist.dim()
        )));
    }
    match dist {
        Distribution::MvGaussian(g) => {
            let as_mix = MvMixtureGaussian::new(vec![1.0], vec![g.clone()])?;
            variogram_from_moments(y, p, |i, j| mixture_pair_moment(&as_mix, i, j, p))
        }
        Distribution::MvMixtureGaussian(m) => {
            variogram_from_moments(y, p, |i, j| mixture_pair_moment(m, i, j, p))
        }
        Distribution::Ensemble(e) => variogram_from_moments(y, p, |i, j| {
            Ok(e.points()
                .iter()
                .zip(e.weights())
                .map(|(x, w)| w * (x[i] - x[j]).abs().powf(p))
                .sum())
        }),
        _ => {
            if n_mc < 1 {
                return Err(Error::Config("variogram Monte-Carlo needs n_mc >= 1".into()));
            }
            let samples = dist.sample_n(rng, n_mc);
            variogram_from_moments(y, p, |i, j| {
                Ok(samples
                    .iter()
                    .map(|x| (x[i] - x[j]).abs().powf(p))
                    .sum::<f64>()
                    / n_mc as f64)
            })
        }
    }
}

/// Logarithmic Score: -log f(y), infinite outside the support.
pub fn log_score(dist: &Distribution, y: &[f64]) -> Result<f64> {
    Ok(-dist.log_density(y)?)
}

/// Bivariate-marginal negative log-likelihood over all ordered pairs:
/// -sum_{i != j} log f(y_i, y_j). Defined for Gaussians and mixtures, whose
/// bivariate marginals stay in the family.
pub fn mle_biv(dist: &Distribution, y: &[f64]) -> Result<f64> {
    let d = dist.dim();
    if d < 2 {
        return Err(Error::Config("mle_biv needs dimension >= 2".into()));
    }
    if y.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, distribution dimension {d}",
            y.len()
        )));
    }
    let mix = match dist {
        Distribution::MvGaussian(g) => MvMixtureGaussian::new(vec![1.0], vec![g.clone()])?,
        Distribution::MvMixtureGaussian(m) => m.clone(),
        other => {
            return Err(Error::UnsupportedOperation(format!(
                "mle_biv is defined for gaussian and mixture distributions, not {}",
                other.kind()
            )))
        }
    };
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let marg = mix.marginal(&[i, j])?;
            total -= marg.log_density(&[y[i], y[j]])?;
        }
    }
    Ok(total)
}

/// Sum with a fixed pairwise reduction tree, so the result does not depend
/// on evaluation or thread order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean and standard error of a set of per-observation scores. Infinite
/// scores absorb the mean.
#[derive(Debug, Clone, Copy)]
pub struct MeanScore {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
    pub n_infinite: usize,
}

pub fn summarize_scores(scores: &[f64]) -> MeanScore {
    let n = scores.len();
    let n_infinite = scores.iter().filter(|s| s.is_infinite()).count();
    if n_infinite > 0 {
        return MeanScore {
            mean: f64::INFINITY,
            std_err: f64::INFINITY,
            n,
            n_infinite,
        };
    }
    let mean = pairwise_sum(scores) / n as f64;
    let sq: Vec<f64> = scores.iter().map(|s| (s - mean) * (s - mean)).collect();
    let std_err = if n > 1 {
        (pairwise_sum(&sq) / ((n - 1) as f64 * n as f64)).sqrt()
    } else {
        0.0
    };
    MeanScore {
        mean,
        std_err,
        n,
        n_infinite,
    }
}

/// Mean score over observations. Evaluations run in parallel into an
/// index-ordered buffer and are reduced with a fixed pairwise tree, so the
/// result is independent of scheduling.
pub fn mean_score<F>(score: F, observations: &[Vec<f64>]) -> Result<MeanScore>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    if observations.is_empty() {
        return Err(Error::Config("mean_score needs at least one observation".into()));
    }
    let scores: Result<Vec<f64>> = observations
        .par_iter()
        .enumerate()
        .map(|(i, obs)| score(i, obs.as_slice()))
        .collect();
    Ok(summarize_scores(&scores?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crps::h_function;
    use crate::distributions::{counterexample_pair, EnsembleDist, MvGaussian, UnivariateLaw};
    use crate::linalg::SymMatrix;
    use crate::rng;
    use rand::Rng as _;

    fn bivariate_example() -> Distribution {
        Distribution::MvGaussian(
            MvGaussian::new(
                vec![1.0, -1.0],
                SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 4.0]]).unwrap(),
            )
            .unwrap(),
        )
    }

    fn random_mixture(r: &mut rng::Rng, d: usize, m: usize) -> MvMixtureGaussian {
        let raw: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let comps: Vec<MvGaussian> = (0..m)
            .map(|_| {
                let mut rows = vec![vec![0.0; d]; d];
                let g: Vec<f64> = (0..d * d).map(|_| r.gen::<f64>() - 0.5).collect();
                for i in 0..d {
                    for j in 0..d {
                        let mut s = if i == j { 0.4 + r.gen::<f64>() } else { 0.0 };
                        for k in 0..d {
                            s += g[i * d + k] * g[j * d + k];
                        }
                        rows[i][j] = s;
                    }
                }
                // enforce exact symmetry after accumulation
                for i in 0..d {
                    for j in 0..i {
                        let avg = 0.5 * (rows[i][j] + rows[j][i]);
                        rows[i][j] = avg;
                        rows[j][i] = avg;
                    }
                }
                MvGaussian::new(
                    (0..d).map(|_| 3.0 * (r.gen::<f64>() - 0.5)).collect(),
                    SymMatrix::from_rows(&rows).unwrap(),
                )
                .unwrap()
            })
            .collect();
        MvMixtureGaussian::new(weights, comps).unwrap()
    }

    #[test]
    fn chain_spec_examples() {
        let c2 = ConditionalSpec::chain_identity(2).unwrap();
        assert_eq!(c2.pairs(), &[(0, vec![]), (1, vec![0])]);
        let c1 = ConditionalSpec::chain_identity(1).unwrap();
        assert_eq!(c1.pairs(), &[(0, vec![])]);
        // permutation (2, 3, 1) in one-based terms
        let c3 = ConditionalSpec::chain(3, &[1, 2, 0]).unwrap();
        assert_eq!(c3.pairs(), &[(1, vec![]), (2, vec![1]), (0, vec![1, 2])]);
        assert!(ConditionalSpec::chain(3, &[0, 0, 1]).is_err());
    }

    #[test]
    fn t0_spec_sizes() {
        assert_eq!(
            ConditionalSpec::t0(2).unwrap().pairs(),
            &[
                (0, vec![]),
                (1, vec![]),
                (0, vec![1]),
                (1, vec![0]),
            ]
        );
        assert_eq!(ConditionalSpec::t0(3).unwrap().len(), 9);
        assert_eq!(ConditionalSpec::t0(1).unwrap().len(), 1);
    }

    #[test]
    fn duplicates_are_flagged_not_rejected() {
        let spec = ConditionalSpec::new(vec![(0, vec![1]), (0, vec![1])], 2).unwrap();
        assert_eq!(spec.duplicate_count(), 1);
        assert_eq!(ConditionalSpec::t0(3).unwrap().duplicate_count(), 0);
    }

    #[test]
    fn ccrps_chain_equals_direct_sum() {
        let dist = bivariate_example();
        let spec = ConditionalSpec::chain_identity(2).unwrap();
        let y = [0.3, 1.4];
        let got = ccrps(&dist, &spec, &y).unwrap();
        assert_eq!(got.n_ill_defined, 0);
        let marginal = crps::crps(
            &UnivariateLaw::Gaussian {
                mean: 1.0,
                var: 1.0,
            },
            y[0],
        )
        .unwrap();
        let cond = crps::crps(
            &UnivariateLaw::Gaussian {
                mean: -1.0 + 0.8 * (y[0] - 1.0),
                var: 3.36,
            },
            y[1],
        )
        .unwrap();
        assert!((got.value - (marginal + cond)).abs() < 1e-12);
    }

    /// Independent transcription of the explicit double-sum expression for
    /// the T0 mixture loss, used as the oracle for the conditional+Grimit
    /// evaluation path.
    fn ccrps_t0_mixture_oracle(mix: &MvMixtureGaussian, y: &[f64]) -> f64 {
        let d = mix.dim();
        let m = mix.n_components();
        let w = mix.weights();
        let mu = |k: usize, i: usize| mix.components()[k].mu()[i];
        let sig = |k: usize, i: usize, j: usize| mix.components()[k].sigma().get(i, j);
        let mut total = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                // posterior weights given y_j
                let mut wh = vec![0.0; m];
                let mut norm = 0.0;
                for k in 0..m {
                    let v = sig(k, j, j);
                    let dens = special::norm_pdf((y[j] - mu(k, j)) / v.sqrt()) / v.sqrt();
                    wh[k] = w[k] * dens;
                    norm += wh[k];
                }
                for x in wh.iter_mut() {
                    *x /= norm;
                }
                let mu_hat = |k: usize| mu(k, i) + sig(k, i, j) / sig(k, j, j) * (y[j] - mu(k, j));
                let var_hat =
                    |k: usize| sig(k, i, i) - sig(k, i, j) * sig(k, i, j) / sig(k, j, j);
                let mut term = 0.0;
                for k in 0..m {
                    term += wh[k] * h_function(y[i] - mu_hat(k), var_hat(k));
                }
                for k in 0..m {
                    for l in 0..m {
                        term -= 0.5
                            * wh[k]
                            * wh[l]
                            * h_function(mu_hat(k) - mu_hat(l), var_hat(k) + var_hat(l));
                    }
                }
                total += term;
            }
        }
        for i in 0..d {
            let mut term = 0.0;
            for k in 0..m {
                term += w[k] * h_function(y[i] - mu(k, i), sig(k, i, i));
            }
            for k in 0..m {
                for l in 0..m {
                    term -= 0.5
                        * w[k]
                        * w[l]
                        * h_function(mu(k, i) - mu(l, i), sig(k, i, i) + sig(l, i, i));
                }
            }
            total += term;
        }
        total
    }

    #[test]
    fn ccrps_t0_matches_explicit_mixture_expression() {
        let mut r = rng::from_seed(31);
        for _ in 0..40 {
            let d = r.gen_range(2..4);
            let m = r.gen_range(1..4);
            let mix = random_mixture(&mut r, d, m);
            let y: Vec<f64> = (0..d).map(|_| 4.0 * (r.gen::<f64>() - 0.5)).collect();
            let dist = Distribution::MvMixtureGaussian(mix.clone());
            let spec = ConditionalSpec::t0(d).unwrap();
            let got = ccrps(&dist, &spec, &y).unwrap();
            let want = ccrps_t0_mixture_oracle(&mix, &y);
            assert!(
                (got.value - want).abs() <= 1e-10 * want.abs().max(1.0),
                "{} vs {want}",
                got.value
            );
        }
    }

    #[test]
    fn ccrps_counterexample_pair_scores_agree() {
        // Desk-size version of the non-strictness check; the acceptance
        // suite runs it at 1e5 samples.
        let (a, b) = counterexample_pair(2).unwrap();
        let spec = ConditionalSpec::chain_identity(2).unwrap();
        let mut r = rng::from_seed(1717);
        let n = 20_000;
        let mut diffs = Vec::with_capacity(n);
        for _ in 0..n {
            let y = a.sample(&mut r);
            let sa = ccrps(&a, &spec, &y).unwrap().value;
            let sb = ccrps(&b, &spec, &y).unwrap().value;
            diffs.push(sb - sa);
        }
        let stats = summarize_scores(&diffs);
        assert!(
            stats.mean.abs() <= 4.0 * stats.std_err.max(1e-12),
            "mean diff {} +- {}",
            stats.mean,
            stats.std_err
        );
    }

    #[test]
    fn energy_score_one_point_ensemble() {
        let e = Distribution::Ensemble(
            EnsembleDist::new(vec![vec![1.0, 2.0]], vec![1.0]).unwrap(),
        );
        let mut r = rng::from_seed(0);
        let got = energy_score(&e, &[0.0, 0.0], 1.0, 10, &mut r).unwrap();
        assert!((got - 5.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn energy_score_two_point_example() {
        let e = Distribution::Ensemble(
            EnsembleDist::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5]).unwrap(),
        );
        let mut r = rng::from_seed(0);
        let got = energy_score(&e, &[0.0, 0.0], 1.0, 10, &mut r).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_score_d1_beta1_is_empirical_crps() {
        let mut r = rng::from_seed(2);
        for _ in 0..50 {
            let m = r.gen_range(1..20);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| vec![4.0 * (r.gen::<f64>() - 0.5)]).collect();
            let raw: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let y = 4.0 * (r.gen::<f64>() - 0.5);
            let es = energy_score_ensemble(&pts, &weights, &[y], 1.0).unwrap();
            let flat: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            let c = crps::crps_empirical(&flat, &weights, y).unwrap();
            assert!((es - c).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_score_ensemble_equals_bruteforce() {
        let mut r = rng::from_seed(77);
        let m = 12;
        let d = 3;
        let pts: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| 2.0 * (r.gen::<f64>() - 0.5)).collect())
            .collect();
        let raw: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let y: Vec<f64> = (0..d).map(|_| r.gen::<f64>()).collect();
        for &beta in &[0.5, 1.0, 1.5] {
            let got = energy_score_ensemble(&pts, &weights, &y, beta).unwrap();
            let mut brute = 0.0;
            for i in 0..m {
                brute += weights[i] * norm_pow(&pts[i], &y, beta);
                for j in 0..m {
                    brute -= 0.5 * weights[i] * weights[j] * norm_pow(&pts[i], &pts[j], beta);
                }
            }
            assert!((got - brute).abs() < 1e-14, "beta = {beta}");
        }
    }

    #[test]
    fn energy_score_rejects_bad_beta() {
        let e = bivariate_example();
        let mut r = rng::from_seed(3);
        assert!(energy_score(&e, &[0.0, 0.0], 0.0, 10, &mut r).is_err());
        assert!(energy_score(&e, &[0.0, 0.0], 2.0, 10, &mut r).is_err());
    }

    #[test]
    fn variogram_d1_is_zero() {
        let g = Distribution::MvGaussian(MvGaussian::standard(1));
        let mut r = rng::from_seed(4);
        assert_eq!(variogram_score(&g, &[0.7], 1.0, 100, &mut r).unwrap(), 0.0);
    }

    #[test]
    fn variogram_point_mass_ensemble_example() {
        let e = Distribution::Ensemble(
            EnsembleDist::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap(),
        );
        let mut r = rng::from_seed(5);
        let got = variogram_score(&e, &[0.0, 1.0], 1.0, 10, &mut r).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
        assert!(variogram_score(&e, &[0.0, 1.0], 0.7, 10, &mut r).is_err());
    }

    #[test]
    fn variogram_zero_mean_pair_moment() {
        // E|Y_i - Y_j| = sigma_hat sqrt(2/pi) when the pair difference has
        // zero mean; analytic path against a large Monte-Carlo run.
        let dist = bivariate_example();
        let sig_hat: f64 = (1.0f64 + 4.0 - 2.0 * 0.8).sqrt();
        let expect = sig_hat * (2.0 / std::f64::consts::PI).sqrt();
        // mu_i - mu_j = 2, so shift the means to zero for this check
        let zero_mean = Distribution::MvGaussian(
            MvGaussian::new(
                vec![0.5, 0.5],
                SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 4.0]]).unwrap(),
            )
            .unwrap(),
        );
        let moment = gaussian_abs_moment(0.0, sig_hat * sig_hat, 1.0).unwrap();
        assert!((moment - expect).abs() < 1e-12);
        // MC comparison of the full score
        let mut r = rng::from_seed(6);
        let y = [0.2, -0.4];
        let analytic = variogram_score(&zero_mean, &y, 1.0, 0, &mut r);
        // gaussian path ignores n_mc; must succeed
        let analytic = analytic.unwrap();
        let n = 1_000_000usize;
        let mut vals = Vec::with_capacity(n);
        let base = match &zero_mean {
            Distribution::MvGaussian(g) => g,
            _ => unreachable!(),
        };
        for _ in 0..n {
            let s = base.sample(&mut r);
            vals.push((s[0] - s[1]).abs());
        }
        let mean = pairwise_sum(&vals) / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let mc_score = {
            let diff = (y[0] - y[1]).abs() - mean;
            diff * diff
        };
        // propagate the moment SE through the square
        let dd = 2.0 * ((y[0] - y[1]).abs() - mean).abs() * se;
        assert!(
            (analytic - mc_score).abs() <= 4.0 * dd.max(1e-9),
            "{analytic} vs {mc_score}"
        );
    }

    #[test]
    fn variogram_p2_is_second_moment() {
        let mut r = rng::from_seed(8);
        for _ in 0..50 {
            let mu = 4.0 * (r.gen::<f64>() - 0.5);
            let var = 0.1 + 2.0 * r.gen::<f64>();
            let got = gaussian_abs_moment(mu, var, 2.0).unwrap();
            let want = var + mu * mu;
            assert!((got - want).abs() <= 1e-10 * want.max(1.0));
        }
    }

    #[test]
    fn log_score_examples() {
        let std2 = Distribution::MvGaussian(MvGaussian::standard(2));
        let got = log_score(&std2, &[0.0, 0.0]).unwrap();
        assert!((got - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);

        let mix = Distribution::MvMixtureGaussian(
            MvMixtureGaussian::new(vec![1.0], vec![MvGaussian::standard(2)]).unwrap(),
        );
        assert!((log_score(&mix, &[0.0, 0.0]).unwrap() - got).abs() < 1e-14);

        let ln = Distribution::MvLogNormal(
            crate::distributions::MvLogNormal::new(vec![0.0], SymMatrix::identity(1)).unwrap(),
        );
        assert_eq!(log_score(&ln, &[-1.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mle_biv_examples() {
        // d = 2: both orderings give the same bivariate term
        let dist = bivariate_example();
        let y = [0.4, -0.2];
        let got = mle_biv(&dist, &y).unwrap();
        let ld = dist.log_density(&y).unwrap();
        assert!((got - (-2.0 * ld)).abs() < 1e-12);

        // independent standard gaussian, d = 3, observation at the origin
        let std3 = Distribution::MvGaussian(MvGaussian::standard(3));
        let got = mle_biv(&std3, &[0.0, 0.0, 0.0]).unwrap();
        assert!((got - 6.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        assert!(mle_biv(&Distribution::MvGaussian(MvGaussian::standard(1)), &[0.0]).is_err());
    }

    #[test]
    fn mean_score_behaviour() {
        let obs = vec![vec![1.0], vec![2.0], vec![3.0]];
        let ms = mean_score(|_, o| Ok(o[0] * 2.0), &obs).unwrap();
        assert!((ms.mean - 4.0).abs() < 1e-15);
        assert_eq!(ms.n, 3);
        assert_eq!(ms.n_infinite, 0);

        let single = mean_score(|_, o| Ok(o[0]), &obs[..1].to_vec()).unwrap();
        assert_eq!(single.mean, 1.0);
        assert_eq!(single.std_err, 0.0);

        let inf = mean_score(
            |i, o| {
                Ok(if i == 1 { f64::INFINITY } else { o[0] })
            },
            &obs,
        )
        .unwrap();
        assert_eq!(inf.mean, f64::INFINITY);
        assert_eq!(inf.n_infinite, 1);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let mut r = rng::from_seed(12);
        let xs: Vec<f64> = (0..1013).map(|_| r.gen::<f64>() - 0.5).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
    }

    /// Quick propriety spot check; the full 20-pair suite with 1e5 samples
    /// is acceptance criterion 4.
    #[test]
    fn propriety_spot_check() {
        let p = bivariate_example();
        let q = Distribution::MvGaussian(
            MvGaussian::new(
                vec![1.5, -1.0],
                SymMatrix::from_rows(&[vec![1.2, 0.3], vec![0.3, 4.0]]).unwrap(),
            )
            .unwrap(),
        );
        let spec = ConditionalSpec::t0(2).unwrap();
        let mut r = rng::from_seed(2718);
        let n = 20_000;
        let mut diff = Vec::with_capacity(n);
        for _ in 0..n {
            let y = p.sample(&mut r);
            let sp = ccrps(&p, &spec, &y).unwrap().value;
            let sq = ccrps(&q, &spec, &y).unwrap().value;
            diff.push(sq - sp);
        }
        let stats = summarize_scores(&diff);
        assert!(
            stats.mean > 3.0 * stats.std_err,
            "expected P to win: diff {} +- {}",
            stats.mean,
            stats.std_err
        );
    }
}
