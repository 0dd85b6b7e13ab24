//! The five analytic multivariate families plus weighted ensembles:
//! densities, seeded sampling, and exact univariate marginal/conditional
//! extraction.
//!
//! Conditioning on any number of variables is supported for every analytic
//! family through the block formulas, even though the training losses only
//! ever condition on one. All distribution objects are immutable after
//! construction; `Rng` state is single-owner.

use crate::error::{Error, Result};
use crate::linalg::{block_condition_ext, cholesky, CholeskyFactor, SymMatrix};
use crate::rng::Rng;
use crate::special;
use rand::Rng as _;
use rand_distr::{Distribution as _, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.8378770664093454835606594728112353;

fn draw_std_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_gamma(shape: f64, rng: &mut Rng) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape validated at construction")
        .sample(rng)
}

fn validate_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Config("weight vector is empty".into()));
    }
    let mut sum = 0.0;
    for &w in weights {
        if !(0.0..=1.0).contains(&w) || !w.is_finite() {
            return Err(Error::Config(format!("weight {w} outside [0, 1]")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("weights sum to {sum}, expected 1")));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

fn categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Multivariate families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussianParams {
    mu: Vec<f64>,
    sigma: SymMatrix,
}

/// Multivariate Gaussian with a cached Cholesky factor. The factorization is
/// re-validated whenever parameters enter, including JSON deserialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussianParams", into = "GaussianParams")]
pub struct MvGaussian {
    mu: Vec<f64>,
    sigma: SymMatrix,
    chol: CholeskyFactor,
}

impl MvGaussian {
    pub fn new(mu: Vec<f64>, sigma: SymMatrix) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {}, sigma is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("mu has non-finite entries".into()));
        }
        let chol = cholesky(&sigma)?;
        Ok(Self { mu, sigma, chol })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], SymMatrix::identity(dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        let delta: Vec<f64> = y.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        let z = self.chol.forward_solve(&delta)?;
        let quad: f64 = z.iter().map(|v| v * v).sum();
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.chol.log_det() + quad))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| draw_std_normal(rng)).collect();
        let lz = self.chol.mul_vec(&z);
        lz.iter().zip(&self.mu).map(|(a, b)| a + b).collect()
    }

    /// Marginal over a subset of coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Result<MvGaussian> {
        let mu = idx.iter().map(|&i| self.mu[i]).collect();
        MvGaussian::new(mu, self.sigma.submatrix(idx)?)
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        let c = block_condition_ext(&self.mu, &self.sigma, target, given, obs)?;
        Ok(UnivariateLaw::Gaussian {
            mean: c.mean,
            var: c.var,
        })
    }
}

impl TryFrom<GaussianParams> for MvGaussian {
    type Error = Error;
    fn try_from(p: GaussianParams) -> Result<Self> {
        MvGaussian::new(p.mu, p.sigma)
    }
}

impl From<MvGaussian> for GaussianParams {
    fn from(g: MvGaussian) -> Self {
        GaussianParams {
            mu: g.mu,
            sigma: g.sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<MvGaussian>,
}

/// Weighted mixture of multivariate Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureParams", into = "MixtureParams")]
pub struct MvMixtureGaussian {
    weights: Vec<f64>,
    components: Vec<MvGaussian>,
}

impl MvMixtureGaussian {
    pub fn new(weights: Vec<f64>, components: Vec<MvGaussian>) -> Result<Self> {
        let weights = validate_weights(&weights)?;
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch(
                "mixture components have unequal dimensions".into(),
            ));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MvGaussian] {
        &self.components
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let terms: Result<Vec<f64>> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                Ok(if *w == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.ln() + c.log_density(y)?
                })
            })
            .collect();
        Ok(log_sum_exp(&terms?))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let k = categorical(&self.weights, rng);
        self.components[k].sample(rng)
    }

    /// Marginal mixture over a subset of coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Result<MvMixtureGaussian> {
        let comps: Result<Vec<MvGaussian>> =
            self.components.iter().map(|c| c.marginal(idx)).collect();
        MvMixtureGaussian::new(self.weights.clone(), comps?)
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        let m = self.n_components();
        let mut means = Vec::with_capacity(m);
        let mut vars = Vec::with_capacity(m);
        if given.is_empty() {
            for c in &self.components {
                means.push(c.mu()[target]);
                vars.push(c.sigma().get(target, target));
            }
            return Ok(UnivariateLaw::MixtureGaussian {
                weights: self.weights.clone(),
                means,
                vars,
            });
        }
        // Posterior component weights in log space: each component is
        // reweighted by its density on the observed block.
        let mut log_w = Vec::with_capacity(m);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let sub = c.marginal(given)?;
            let lw = if *w == 0.0 {
                f64::NEG_INFINITY
            } else {
                w.ln() + sub.log_density(obs)?
            };
            log_w.push(lw);
            let bc = block_condition_ext(c.mu(), c.sigma(), target, given, obs)?;
            means.push(bc.mean);
            vars.push(bc.var);
        }
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(Error::IllDefinedConditional(
                "all mixture components have zero density on the conditioning event".into(),
            ));
        }
        let weights: Vec<f64> = log_w.iter().map(|lw| (lw - lse).exp()).collect();
        Ok(UnivariateLaw::MixtureGaussian {
            weights,
            means,
            vars,
        })
    }
}

impl TryFrom<MixtureParams> for MvMixtureGaussian {
    type Error = Error;
    fn try_from(p: MixtureParams) -> Result<Self> {
        MvMixtureGaussian::new(p.weights, p.components)
    }
}

impl From<MvMixtureGaussian> for MixtureParams {
    fn from(m: MvMixtureGaussian) -> Self {
        MixtureParams {
            weights: m.weights,
            components: m.components,
        }
    }
}

/// Multivariate log-normal: exp of a Gaussian, supported on the positive
/// orthant. Parameters live in log space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussianParams", into = "GaussianParams")]
pub struct MvLogNormal {
    base: MvGaussian,
}

impl MvLogNormal {
    pub fn new(mu: Vec<f64>, sigma: SymMatrix) -> Result<Self> {
        Ok(Self {
            base: MvGaussian::new(mu, sigma)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &MvGaussian {
        &self.base
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        if y.iter().any(|&v| v <= 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let jacobian: f64 = logs.iter().sum();
        Ok(self.base.log_density(&logs)? - jacobian)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.base.sample(rng).iter().map(|v| v.exp()).collect()
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        if obs.iter().any(|&v| v <= 0.0) {
            return Err(Error::IllDefinedConditional(
                "log-normal conditioning on a non-positive observation".into(),
            ));
        }
        let log_obs: Vec<f64> = obs.iter().map(|v| v.ln()).collect();
        let c = block_condition_ext(self.base.mu(), self.base.sigma(), target, given, &log_obs)?;
        Ok(UnivariateLaw::LogNormal {
            mu: c.mean,
            var: c.var,
        })
    }
}

impl TryFrom<GaussianParams> for MvLogNormal {
    type Error = Error;
    fn try_from(p: GaussianParams) -> Result<Self> {
        MvLogNormal::new(p.mu, p.sigma)
    }
}

impl From<MvLogNormal> for GaussianParams {
    fn from(l: MvLogNormal) -> Self {
        GaussianParams {
            mu: l.base.mu.clone(),
            sigma: l.base.sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StudentTParams {
    mu: Vec<f64>,
    sigma: SymMatrix,
    nu: f64,
}

/// Multivariate student-t with scale matrix `sigma` and `nu > 1` degrees of
/// freedom (the first moment must exist for CRPS to be finite).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StudentTParams", into = "StudentTParams")]
pub struct MvStudentT {
    base: MvGaussian,
    nu: f64,
}

impl MvStudentT {
    pub fn new(mu: Vec<f64>, sigma: SymMatrix, nu: f64) -> Result<Self> {
        if !(nu > 1.0) || !nu.is_finite() {
            return Err(Error::Config(format!(
                "student-t requires nu > 1 for a finite first moment, got {nu}"
            )));
        }
        Ok(Self {
            base: MvGaussian::new(mu, sigma)?,
            nu,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> &[f64] {
        self.base.mu()
    }

    pub fn sigma(&self) -> &SymMatrix {
        self.base.sigma()
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let d = self.dim() as f64;
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        let delta: Vec<f64> = y.iter().zip(self.base.mu()).map(|(a, b)| a - b).collect();
        let z = self.base.chol().forward_solve(&delta)?;
        let quad: f64 = z.iter().map(|v| v * v).sum();
        Ok(special::ln_gamma_raw((self.nu + d) / 2.0)
            - special::ln_gamma_raw(self.nu / 2.0)
            - 0.5 * d * (self.nu * std::f64::consts::PI).ln()
            - 0.5 * self.base.chol().log_det()
            - 0.5 * (self.nu + d) * (quad / self.nu).ln_1p())
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| draw_std_normal(rng)).collect();
        let lz = self.base.chol().mul_vec(&z);
        let chi_sq = 2.0 * draw_gamma(self.nu / 2.0, rng);
        let scale = (self.nu / chi_sq).sqrt();
        lz.iter()
            .zip(self.base.mu())
            .map(|(a, b)| b + scale * a)
            .collect()
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        let c = block_condition_ext(self.base.mu(), self.base.sigma(), target, given, obs)?;
        let k = given.len() as f64;
        let dof = self.nu + k;
        let scale_sq = (self.nu + c.mahalanobis_sq) / dof * c.var;
        Ok(UnivariateLaw::StudentT {
            loc: c.mean,
            scale: scale_sq.sqrt(),
            dof,
        })
    }
}

impl TryFrom<StudentTParams> for MvStudentT {
    type Error = Error;
    fn try_from(p: StudentTParams) -> Result<Self> {
        MvStudentT::new(p.mu, p.sigma, p.nu)
    }
}

impl From<MvStudentT> for StudentTParams {
    fn from(t: MvStudentT) -> Self {
        StudentTParams {
            mu: t.base.mu.clone(),
            sigma: t.base.sigma,
            nu: t.nu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirichletParams {
    alpha: Vec<f64>,
}

/// Dirichlet distribution on the probability simplex.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DirichletParams", into = "DirichletParams")]
pub struct Dirichlet {
    alpha: Vec<f64>,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Config("dirichlet needs at least 2 coordinates".into()));
        }
        if alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("dirichlet concentrations must be positive".into()));
        }
        Ok(Self { alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Density with respect to Lebesgue measure on the (d-1)-simplex.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {}, expected {}",
                y.len(),
                self.dim()
            )));
        }
        let sum: f64 = y.iter().sum();
        if y.iter().any(|&v| v <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut ld = special::ln_gamma_raw(self.alpha0());
        for (&a, &v) in self.alpha.iter().zip(y) {
            ld += (a - 1.0) * v.ln() - special::ln_gamma_raw(a);
        }
        Ok(ld)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let draws: Vec<f64> = self.alpha.iter().map(|&a| draw_gamma(a, rng)).collect();
        let total: f64 = draws.iter().sum();
        draws.iter().map(|g| g / total).collect()
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        let a0 = self.alpha0();
        let ai = self.alpha[target];
        if given.is_empty() {
            return Ok(UnivariateLaw::ScaledBeta {
                alpha: ai,
                beta: a0 - ai,
                scale: 1.0,
            });
        }
        let s: f64 = obs.iter().sum();
        if obs.iter().any(|&v| v <= 0.0 || v >= 1.0) || s >= 1.0 {
            return Err(Error::IllDefinedConditional(format!(
                "dirichlet conditioning values must lie inside the simplex (sum = {s})"
            )));
        }
        Ok(UnivariateLaw::ScaledBeta {
            alpha: ai,
            beta: a0 - ai,
            scale: 1.0 - s,
        })
    }
}

impl TryFrom<DirichletParams> for Dirichlet {
    type Error = Error;
    fn try_from(p: DirichletParams) -> Result<Self> {
        Dirichlet::new(p.alpha)
    }
}

impl From<Dirichlet> for DirichletParams {
    fn from(d: Dirichlet) -> Self {
        DirichletParams { alpha: d.alpha }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleParams {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// A finite weighted point set treated as a discrete predictive distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EnsembleParams", into = "EnsembleParams")]
pub struct EnsembleDist {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EnsembleDist {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("ensemble needs at least one point".into()));
        }
        let weights = validate_weights(&weights)?;
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch("ensemble points have unequal dimensions".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("ensemble points must be finite".into()));
        }
        Ok(Self { points, weights })
    }

    /// Equally weighted point set.
    pub fn equally_weighted(points: Vec<Vec<f64>>) -> Result<Self> {
        let m = points.len();
        Self::new(points, vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.points[categorical(&self.weights, rng)].clone()
    }
}

impl TryFrom<EnsembleParams> for EnsembleDist {
    type Error = Error;
    fn try_from(p: EnsembleParams) -> Result<Self> {
        EnsembleDist::new(p.points, p.weights)
    }
}

impl From<EnsembleDist> for EnsembleParams {
    fn from(e: EnsembleDist) -> Self {
        EnsembleParams {
            points: e.points,
            weights: e.weights,
        }
    }
}

// ---------------------------------------------------------------------------
// The tagged union all scores consume
// ---------------------------------------------------------------------------

/// Any distribution the scoring rules accept. JSON form is tagged:
/// `{"type": "mv_gaussian", "mu": [...], "sigma": [[...]]}` and so on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    MvGaussian(MvGaussian),
    MvMixtureGaussian(MvMixtureGaussian),
    MvLogNormal(MvLogNormal),
    MvStudentT(MvStudentT),
    Dirichlet(Dirichlet),
    Ensemble(EnsembleDist),
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::MvGaussian(d) => d.dim(),
            Distribution::MvMixtureGaussian(d) => d.dim(),
            Distribution::MvLogNormal(d) => d.dim(),
            Distribution::MvStudentT(d) => d.dim(),
            Distribution::Dirichlet(d) => d.dim(),
            Distribution::Ensemble(d) => d.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::MvGaussian(_) => "mv_gaussian",
            Distribution::MvMixtureGaussian(_) => "mv_mixture_gaussian",
            Distribution::MvLogNormal(_) => "mv_log_normal",
            Distribution::MvStudentT(_) => "mv_student_t",
            Distribution::Dirichlet(_) => "dirichlet",
            Distribution::Ensemble(_) => "ensemble",
        }
    }

    /// Log density at `y`; `-inf` outside the support. Ensembles have no
    /// density and report an unsupported operation instead.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        match self {
            Distribution::MvGaussian(d) => d.log_density(y),
            Distribution::MvMixtureGaussian(d) => d.log_density(y),
            Distribution::MvLogNormal(d) => d.log_density(y),
            Distribution::MvStudentT(d) => d.log_density(y),
            Distribution::Dirichlet(d) => d.log_density(y),
            Distribution::Ensemble(_) => Err(Error::UnsupportedOperation(
                "ensembles have no density".into(),
            )),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Distribution::MvGaussian(d) => d.sample(rng),
            Distribution::MvMixtureGaussian(d) => d.sample(rng),
            Distribution::MvLogNormal(d) => d.sample(rng),
            Distribution::MvStudentT(d) => d.sample(rng),
            Distribution::Dirichlet(d) => d.sample(rng),
            Distribution::Ensemble(d) => d.sample(rng),
        }
    }

    pub fn sample_n(&self, rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Exact univariate conditional extraction: the operation CCRPS is built on.
pub trait ConditionalOracle {
    fn dim(&self) -> usize;

    fn sample(&self, rng: &mut Rng) -> Vec<f64>;

    /// Law of coordinate `target` given that the coordinates in `given` took
    /// the values `obs` (matched by position). An empty `given` yields the
    /// marginal law.
    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw>;
}

fn check_conditional_indices(dim: usize, target: usize, given: &[usize], obs: &[f64]) -> Result<()> {
    if target >= dim {
        return Err(Error::DimensionMismatch(format!(
            "target {target} out of range for dimension {dim}"
        )));
    }
    if given.iter().any(|&j| j >= dim) {
        return Err(Error::DimensionMismatch(format!(
            "conditioning index out of range for dimension {dim}"
        )));
    }
    if given.contains(&target) {
        return Err(Error::Domain(format!(
            "target {target} also appears in the conditioning set"
        )));
    }
    if given.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} conditioning indices",
            obs.len(),
            given.len()
        )));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("conditioning observation is not finite".into()));
    }
    Ok(())
}

impl ConditionalOracle for Distribution {
    fn dim(&self) -> usize {
        Distribution::dim(self)
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        Distribution::sample(self, rng)
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        check_conditional_indices(self.dim(), target, given, obs)?;
        match self {
            Distribution::MvGaussian(d) => d.conditional(target, given, obs),
            Distribution::MvMixtureGaussian(d) => d.conditional(target, given, obs),
            Distribution::MvLogNormal(d) => d.conditional(target, given, obs),
            Distribution::MvStudentT(d) => d.conditional(target, given, obs),
            Distribution::Dirichlet(d) => d.conditional(target, given, obs),
            Distribution::Ensemble(_) => Err(Error::UnsupportedOperation(
                "conditional laws are not defined for ensemble distributions".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Univariate laws
// ---------------------------------------------------------------------------

/// Closed-form-capable univariate laws produced by conditional extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UnivariateLaw {
    Gaussian {
        mean: f64,
        var: f64,
    },
    MixtureGaussian {
        weights: Vec<f64>,
        means: Vec<f64>,
        vars: Vec<f64>,
    },
    /// Parameters of the underlying log-space normal.
    LogNormal {
        mu: f64,
        var: f64,
    },
    StudentT {
        loc: f64,
        scale: f64,
        dof: f64,
    },
    /// `scale * B(alpha, beta)`, supported on [0, scale].
    ScaledBeta {
        alpha: f64,
        beta: f64,
        scale: f64,
    },
    PointMass {
        location: f64,
    },
    Empirical {
        points: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl UnivariateLaw {
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self {
            UnivariateLaw::Gaussian { mean, var } => {
                Ok(special::norm_cdf((x - mean) / var.sqrt()))
            }
            UnivariateLaw::MixtureGaussian {
                weights,
                means,
                vars,
            } => Ok(weights
                .iter()
                .zip(means.iter().zip(vars))
                .map(|(w, (m, v))| w * special::norm_cdf((x - m) / v.sqrt()))
                .sum()),
            UnivariateLaw::LogNormal { mu, var } => {
                if x <= 0.0 {
                    Ok(0.0)
                } else {
                    Ok(special::norm_cdf((x.ln() - mu) / var.sqrt()))
                }
            }
            UnivariateLaw::StudentT { loc, scale, dof } => {
                Ok(special::student_t_pdf_cdf((x - loc) / scale, *dof)?.1)
            }
            UnivariateLaw::ScaledBeta { alpha, beta, scale } => {
                special::regularized_incomplete_beta(x / scale, *alpha, *beta)
            }
            UnivariateLaw::PointMass { location } => Ok(if x >= *location { 1.0 } else { 0.0 }),
            UnivariateLaw::Empirical { points, weights } => Ok(points
                .iter()
                .zip(weights)
                .filter(|(p, _)| **p <= x)
                .map(|(_, w)| w)
                .sum()),
        }
    }

    /// Density where one exists. Point masses and empirical laws have none.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        match self {
            UnivariateLaw::Gaussian { mean, var } => {
                let s = var.sqrt();
                Ok(special::norm_pdf((x - mean) / s) / s)
            }
            UnivariateLaw::MixtureGaussian {
                weights,
                means,
                vars,
            } => Ok(weights
                .iter()
                .zip(means.iter().zip(vars))
                .map(|(w, (m, v))| {
                    let s = v.sqrt();
                    w * special::norm_pdf((x - m) / s) / s
                })
                .sum()),
            UnivariateLaw::LogNormal { mu, var } => {
                if x <= 0.0 {
                    Ok(0.0)
                } else {
                    let s = var.sqrt();
                    Ok(special::norm_pdf((x.ln() - mu) / s) / (s * x))
                }
            }
            UnivariateLaw::StudentT { loc, scale, dof } => {
                Ok(special::student_t_pdf_cdf((x - loc) / scale, *dof)?.0 / scale)
            }
            UnivariateLaw::ScaledBeta { alpha, beta, scale } => {
                let t = x / scale;
                if !(0.0..=1.0).contains(&t) {
                    return Ok(0.0);
                }
                let ln_norm = special::ln_gamma_raw(alpha + beta)
                    - special::ln_gamma_raw(*alpha)
                    - special::ln_gamma_raw(*beta);
                Ok((ln_norm + (alpha - 1.0) * t.ln() + (beta - 1.0) * (1.0 - t).ln()).exp() / scale)
            }
            _ => Err(Error::UnsupportedOperation(format!(
                "{self:?} has no density"
            ))),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            UnivariateLaw::Gaussian { mean, var } => mean + var.sqrt() * draw_std_normal(rng),
            UnivariateLaw::MixtureGaussian {
                weights,
                means,
                vars,
            } => {
                let k = categorical(weights, rng);
                means[k] + vars[k].sqrt() * draw_std_normal(rng)
            }
            UnivariateLaw::LogNormal { mu, var } => {
                (mu + var.sqrt() * draw_std_normal(rng)).exp()
            }
            UnivariateLaw::StudentT { loc, scale, dof } => {
                let z = draw_std_normal(rng);
                let chi_sq = 2.0 * draw_gamma(dof / 2.0, rng);
                loc + scale * z * (dof / chi_sq).sqrt()
            }
            UnivariateLaw::ScaledBeta { alpha, beta, scale } => {
                let g1 = draw_gamma(*alpha, rng);
                let g2 = draw_gamma(*beta, rng);
                scale * g1 / (g1 + g2)
            }
            UnivariateLaw::PointMass { location } => *location,
            UnivariateLaw::Empirical { points, weights } => points[categorical(weights, rng)],
        }
    }

    /// Interval outside which the CDF is numerically 0 or 1; quadrature and
    /// KS helpers integrate over it.
    pub fn support_hint(&self) -> (f64, f64) {
        match self {
            UnivariateLaw::Gaussian { mean, var } => {
                let s = var.sqrt();
                (mean - 10.0 * s, mean + 10.0 * s)
            }
            UnivariateLaw::MixtureGaussian {
                weights: _,
                means,
                vars,
            } => {
                let lo = means
                    .iter()
                    .zip(vars)
                    .map(|(m, v)| m - 10.0 * v.sqrt())
                    .fold(f64::INFINITY, f64::min);
                let hi = means
                    .iter()
                    .zip(vars)
                    .map(|(m, v)| m + 10.0 * v.sqrt())
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            UnivariateLaw::LogNormal { mu, var } => {
                let s = var.sqrt();
                (0.0, (mu + 12.0 * s).exp())
            }
            UnivariateLaw::StudentT { loc, scale, dof } => {
                // Heavy tails: pick T with (1 - F(T))^2 integrating below 1e-9.
                let t = (1e10_f64).powf(1.0 / (2.0 * dof - 1.0)).clamp(20.0, 1e7);
                (loc - scale * t, loc + scale * t)
            }
            UnivariateLaw::ScaledBeta { scale, .. } => (0.0, *scale),
            UnivariateLaw::PointMass { location } => (location - 1.0, location + 1.0),
            UnivariateLaw::Empirical { points, .. } => {
                let lo = points.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo - 1.0, hi + 1.0)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Strict-propriety counterexample pair
// ---------------------------------------------------------------------------

/// `A` of the counterexample pair: the d-variate standard normal.
#[derive(Debug, Clone)]
pub struct CounterexampleStandard {
    dim: usize,
}

/// `B` of the counterexample pair: with probability 1/2 a comonotone vector
/// (z, ..., z) with z standard normal, otherwise i.i.d. standard normal.
/// Its marginals equal `A`'s, and its conditional given observed coordinates
/// is standard normal unless at least two observed coordinates tie exactly,
/// in which case it degenerates to a point mass at the shared value.
#[derive(Debug, Clone)]
pub struct CounterexampleHalfComonotone {
    dim: usize,
}

/// The pair of distributions whose expected CCRPS agree for every
/// conditional specification even though the distributions differ.
pub fn counterexample_pair(
    dim: usize,
) -> Result<(CounterexampleStandard, CounterexampleHalfComonotone)> {
    if dim < 2 {
        return Err(Error::Config(format!(
            "counterexample needs dimension >= 2, got {dim}"
        )));
    }
    Ok((
        CounterexampleStandard { dim },
        CounterexampleHalfComonotone { dim },
    ))
}

impl ConditionalOracle for CounterexampleStandard {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim).map(|_| draw_std_normal(rng)).collect()
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        check_conditional_indices(self.dim, target, given, obs)?;
        Ok(UnivariateLaw::Gaussian {
            mean: 0.0,
            var: 1.0,
        })
    }
}

impl ConditionalOracle for CounterexampleHalfComonotone {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let comonotone = rng.gen::<f64>() < 0.5;
        if comonotone {
            let z = draw_std_normal(rng);
            vec![z; self.dim]
        } else {
            (0..self.dim).map(|_| draw_std_normal(rng)).collect()
        }
    }

    fn conditional(&self, target: usize, given: &[usize], obs: &[f64]) -> Result<UnivariateLaw> {
        check_conditional_indices(self.dim, target, given, obs)?;
        let tied = obs.len() >= 2 && obs.windows(2).all(|w| w[0] == w[1]);
        if tied {
            Ok(UnivariateLaw::PointMass { location: obs[0] })
        } else {
            Ok(UnivariateLaw::Gaussian {
                mean: 0.0,
                var: 1.0,
            })
        }
    }
}
