//! Spike-slab regression in the eigen space of the LD matrix, fit by
//! stochastic variational inference.
//!
//! Each coefficient has a Bernoulli × Gaussian variational factor
//! `q(b_j) = α_j N(μ_j, s_j²) + (1 − α_j) δ₀`. The expected log-likelihood is
//! estimated by sampling the linear predictor directly,
//! `η = A m + sqrt((A∘A) v) ∘ ε`, so the Monte-Carlo noise lives in the `r`
//! eigen coordinates rather than in the coefficients.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::EigenLD;
use crate::sumstats::SummaryVector;

const LOGIT_CLAMP: f64 = 20.0;
const LOG_SD_MIN: f64 = -15.0;
const LOG_SD_MAX: f64 = 5.0;
const RESIDUAL_FLOOR: f64 = 1e-8;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabPrior {
    pub inclusion_logit: f64,
    pub slab_var: f64,
    #[serde(default)]
    pub learn_inclusion: bool,
    #[serde(default)]
    pub learn_slab_var: bool,
}

impl SpikeSlabPrior {
    pub fn new(inclusion_logit: f64, slab_var: f64) -> Result<Self> {
        if !(slab_var > 0.0) || !slab_var.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "slab_var = {slab_var} must be positive"
            )));
        }
        if !inclusion_logit.is_finite() {
            return Err(Error::ConfigInvalid("inclusion_logit must be finite".into()));
        }
        Ok(Self {
            inclusion_logit,
            slab_var,
            learn_inclusion: false,
            learn_slab_var: false,
        })
    }

    /// One expected active predictor among `q`, unit slab variance.
    pub fn sparse(q: usize) -> Self {
        let q = q.max(2) as f64;
        Self {
            inclusion_logit: logit(1.0 / q),
            slab_var: 1.0,
            learn_inclusion: false,
            learn_slab_var: false,
        }
    }

    pub fn inclusion_prob(&self) -> f64 {
        sigmoid(self.inclusion_logit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SviOptions {
    pub iterations: usize,
    pub step_size: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Relative smoothed-ELBO improvement below which the fit stops.
    pub tolerance: f64,
    pub window: usize,
    pub min_iterations: usize,
    pub residual_var: f64,
    pub learn_residual_var: bool,
}

impl Default for SviOptions {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 0.01,
            mc_samples: 10,
            seed: 0,
            tolerance: 1e-6,
            window: 100,
            min_iterations: 200,
            residual_var: 1.0,
            learn_residual_var: false,
        }
    }
}

impl SviOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !(self.residual_var > 0.0) {
            return bad("residual_var must be positive");
        }
        Ok(())
    }
}

/// How the eigen-space likelihood is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `D⁻¹Vᵀz` coordinates with unit noise variance.
    #[default]
    Whitened,
    /// `Vᵀz` coordinates with noise variance `d_i²`.
    Heteroscedastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenRegressionProblem {
    pub y_tilde: DVector<f64>,
    pub design: DMatrix<f64>,
    pub d2: DVector<f64>,
    pub weighting: Weighting,
    pub predictor_ids: Vec<String>,
}

impl EigenRegressionProblem {
    pub fn new(
        y_tilde: DVector<f64>,
        design: DMatrix<f64>,
        d2: DVector<f64>,
        weighting: Weighting,
    ) -> Result<Self> {
        let r = y_tilde.len();
        if design.nrows() != r || d2.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "y_tilde has {r} rows, design {}, d2 {}",
                design.nrows(),
                d2.len()
            )));
        }
        if d2.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::ShapeMismatch("d2 entries must be positive".into()));
        }
        if y_tilde.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite outcome".into()));
        }
        let predictor_ids = (0..design.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            y_tilde,
            design,
            d2,
            weighting,
            predictor_ids,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.q() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} predictors",
                ids.len(),
                self.q()
            )));
        }
        self.predictor_ids = ids;
        Ok(self)
    }

    pub fn r(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn q(&self) -> usize {
        self.design.ncols()
    }

    /// Per-coordinate noise scale `w_i` (noise variance is `σ² w_i`).
    pub fn noise_weights(&self) -> DVector<f64> {
        match self.weighting {
            Weighting::Whitened => DVector::from_element(self.r(), 1.0),
            Weighting::Heteroscedastic => self.d2.clone(),
        }
    }

    /// Appends eigen-space columns to the design.
    pub fn append_columns(&mut self, block: &DMatrix<f64>, ids: Vec<String>) -> Result<()> {
        if block.nrows() != self.r() || ids.len() != block.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "appending {}×{} block with {} ids to r = {}",
                block.nrows(),
                block.ncols(),
                ids.len(),
                self.r()
            )));
        }
        let q = self.q();
        let mut design = DMatrix::zeros(self.r(), q + block.ncols());
        design.columns_mut(0, q).copy_from(&self.design);
        design.columns_mut(q, block.ncols()).copy_from(block);
        self.design = design;
        self.predictor_ids.extend(ids);
        Ok(())
    }

    fn check_design(&self) -> Result<()> {
        for (j, col) in self.design.column_iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::IllConditioned { column: j });
            }
        }
        Ok(())
    }
}

/// Whitened eigen-space regression of `target` on `predictors`.
pub fn build_problem(
    eig: &EigenLD,
    target: &SummaryVector,
    predictors: &[&SummaryVector],
) -> Result<EigenRegressionProblem> {
    build_problem_weighted(eig, target, predictors, Weighting::Whitened)
}

pub fn build_problem_weighted(
    eig: &EigenLD,
    target: &SummaryVector,
    predictors: &[&SummaryVector],
    weighting: Weighting,
) -> Result<EigenRegressionProblem> {
    let p = eig.p();
    if target.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "target has {} SNPs, panel {p}",
            target.p()
        )));
    }
    let mut z = DMatrix::zeros(p, predictors.len());
    for (k, s) in predictors.iter().enumerate() {
        if s.p() != p {
            return Err(Error::ShapeMismatch(format!(
                "predictor {} has {} SNPs, panel {p}",
                s.trait_id,
                s.p()
            )));
        }
        z.set_column(k, &s.z);
    }
    let (y, design) = match weighting {
        Weighting::Whitened => (
            eig.rotate_to_eigen(&target.z)?,
            eig.rotate_matrix(&z)?,
        ),
        Weighting::Heteroscedastic => (eig.v.tr_mul(&target.z), eig.v.tr_mul(&z)),
    };
    let d2 = eig.d.map(|d| d * d);
    EigenRegressionProblem::new(y, design, d2, weighting)?
        .with_ids(predictors.iter().map(|s| s.trait_id.clone()).collect())
}

/// A contiguous set of coefficients sharing one prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGroup {
    pub range: Range<usize>,
    pub prior: SpikeSlabPrior,
}

/// Variational parameters on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub logit: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_sd: DVector<f64>,
    pub groups: Vec<PriorGroup>,
    pub residual_var: f64,
}

/// Gradient of a scalar objective with respect to the coefficient parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    pub logit: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_sd: DVector<f64>,
}

impl VariationalState {
    /// One sequential coordinate-ascent sweep from zero: each coefficient is
    /// set to its exact conditional update given the ones before it.
    pub fn init(problem: &EigenRegressionProblem, groups: Vec<PriorGroup>, residual_var: f64) -> Self {
        let q = problem.q();
        let w = problem.noise_weights();
        let mut logit = DVector::zeros(q);
        let mut mu = DVector::zeros(q);
        let mut log_sd = DVector::zeros(q);
        let mut resid = problem.y_tilde.clone();
        for g in &groups {
            let pi_logit = g.prior.inclusion_logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            let v0 = g.prior.slab_var;
            for j in g.range.clone() {
                logit[j] = pi_logit;
                let col = problem.design.column(j);
                let xtx: f64 = col.iter().zip(w.iter()).map(|(a, w)| a * a / w).sum();
                if xtx <= 0.0 {
                    log_sd[j] = (0.5 * v0.ln()).clamp(LOG_SD_MIN, LOG_SD_MAX);
                    continue;
                }
                let xty: f64 = col
                    .iter()
                    .zip(resid.iter())
                    .zip(w.iter())
                    .map(|((a, e), w)| a * e / w)
                    .sum();
                let prec = xtx / residual_var + 1.0 / v0;
                let s2 = 1.0 / prec;
                mu[j] = xty / residual_var * s2;
                log_sd[j] = (0.5 * s2.ln()).clamp(LOG_SD_MIN, LOG_SD_MAX);
                logit[j] = (pi_logit + 0.5 * (s2 / v0).ln() + 0.5 * mu[j] * mu[j] / s2)
                    .clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                resid.axpy(-sigmoid(logit[j]) * mu[j], &col, 1.0);
            }
        }
        Self {
            logit,
            mu,
            log_sd,
            groups,
            residual_var,
        }
    }

    pub fn alpha(&self) -> DVector<f64> {
        self.logit.map(sigmoid)
    }

    /// Marginal mean `α μ` and variance `α s² + α(1−α) μ²` of each coefficient.
    pub fn moments(&self) -> (DVector<f64>, DVector<f64>) {
        let q = self.mu.len();
        let mut m = DVector::zeros(q);
        let mut v = DVector::zeros(q);
        for j in 0..q {
            let a = sigmoid(self.logit[j]);
            let s2 = (2.0 * self.log_sd[j]).exp();
            m[j] = a * self.mu[j];
            v[j] = a * s2 + a * (1.0 - a) * self.mu[j] * self.mu[j];
        }
        (m, v)
    }

    fn prior_of(&self, j: usize) -> &SpikeSlabPrior {
        &self
            .groups
            .iter()
            .find(|g| g.range.contains(&j))
            .expect("every coefficient belongs to a prior group")
            .prior
    }

    /// Kullback-Leibler divergence of the variational factors from the prior.
    pub fn kl(&self) -> f64 {
        let mut total = 0.0;
        for j in 0..self.mu.len() {
            let prior = self.prior_of(j);
            let a = sigmoid(self.logit[j]);
            let pi = prior.inclusion_prob();
            let v0 = prior.slab_var;
            let s2 = (2.0 * self.log_sd[j]).exp();
            let gauss = 0.5 * ((v0 / s2).ln() + (s2 + self.mu[j].powi(2)) / v0 - 1.0);
            total += xlogy(a, a / pi) + xlogy(1.0 - a, (1.0 - a) / (1.0 - pi)) + a * gauss;
        }
        total
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Linear predictor mean `A m` and standard deviation `sqrt((A∘A) v)`.
fn predictor_moments(
    problem: &EigenRegressionProblem,
    state: &VariationalState,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let (m, v) = state.moments();
    let mean = &problem.design * &m;
    let a2 = problem.design.map(|a| a * a);
    let sd = (&a2 * &v).map(|x| x.max(0.0).sqrt());
    (mean, sd, m, v)
}

/// Exact expected log-likelihood `E_q[log p(ỹ | b)]`.
pub fn expected_loglik(problem: &EigenRegressionProblem, state: &VariationalState) -> f64 {
    let (mean, sd, _, _) = predictor_moments(problem, state);
    let w = problem.noise_weights();
    let s2 = state.residual_var;
    let mut total = 0.0;
    for i in 0..problem.r() {
        let var = s2 * w[i];
        let resid = problem.y_tilde[i] - mean[i];
        total += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (resid * resid + sd[i] * sd[i]) / var);
    }
    total
}

/// Exact evidence lower bound.
pub fn exact_elbo(problem: &EigenRegressionProblem, state: &VariationalState) -> f64 {
    expected_loglik(problem, state) - state.kl()
}

/// Monte-Carlo expected log-likelihood averaged over the columns of `eps` (`r × S`).
pub fn mc_loglik(problem: &EigenRegressionProblem, state: &VariationalState, eps: &DMatrix<f64>) -> f64 {
    mc_loglik_and_gradient(problem, state, eps).0
}

/// Reparameterized gradient of [`mc_loglik`] on the same noise draws.
pub fn mc_loglik_gradient(
    problem: &EigenRegressionProblem,
    state: &VariationalState,
    eps: &DMatrix<f64>,
) -> StateGradient {
    mc_loglik_and_gradient(problem, state, eps).1
}

fn mc_loglik_and_gradient(
    problem: &EigenRegressionProblem,
    state: &VariationalState,
    eps: &DMatrix<f64>,
) -> (f64, StateGradient) {
    let r = problem.r();
    let n_samples = eps.ncols();
    let (mean, sd, _, _) = predictor_moments(problem, state);
    let w = problem.noise_weights();
    let s2 = state.residual_var;

    let mut loglik = 0.0;
    // per-coordinate averages of g and g·ε, g = (y − η) / (σ² w)
    let mut g_mean = DVector::zeros(r);
    let mut ge_mean = DVector::zeros(r);
    for i in 0..r {
        let var = s2 * w[i];
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let mut acc_l = 0.0;
        let mut acc_g = 0.0;
        let mut acc_ge = 0.0;
        for s in 0..n_samples {
            let e = eps[(i, s)];
            let resid = problem.y_tilde[i] - mean[i] - sd[i] * e;
            acc_l += log_norm - 0.5 * resid * resid / var;
            let g = resid / var;
            acc_g += g;
            acc_ge += g * e;
        }
        let ns = n_samples as f64;
        loglik += acc_l / ns;
        g_mean[i] = acc_g / ns;
        ge_mean[i] = acc_ge / ns;
    }

    let grad_m = problem.design.tr_mul(&g_mean);
    let half_ge = DVector::from_fn(r, |i, _| {
        if sd[i] > 0.0 {
            ge_mean[i] / (2.0 * sd[i])
        } else {
            0.0
        }
    });
    let a2 = problem.design.map(|a| a * a);
    let grad_v = a2.tr_mul(&half_ge);

    let q = problem.q();
    let mut grad = StateGradient {
        logit: DVector::zeros(q),
        mu: DVector::zeros(q),
        log_sd: DVector::zeros(q),
    };
    for j in 0..q {
        let a = sigmoid(state.logit[j]);
        let mu = state.mu[j];
        let sd2 = (2.0 * state.log_sd[j]).exp();
        grad.mu[j] = grad_m[j] * a + grad_v[j] * 2.0 * a * (1.0 - a) * mu;
        grad.log_sd[j] = grad_v[j] * 2.0 * a * sd2;
        let d_alpha = grad_m[j] * mu + grad_v[j] * (sd2 + (1.0 - 2.0 * a) * mu * mu);
        grad.logit[j] = d_alpha * a * (1.0 - a);
    }
    (loglik, grad)
}

/// Exact gradient of [`expected_loglik`].
pub fn expected_loglik_gradient(problem: &EigenRegressionProblem, state: &VariationalState) -> StateGradient {
    let (mean, _, _, _) = predictor_moments(problem, state);
    let w = problem.noise_weights();
    let s2 = state.residual_var;
    let resid = DVector::from_fn(problem.r(), |i, _| {
        (problem.y_tilde[i] - mean[i]) / (s2 * w[i])
    });
    let inv_var = DVector::from_fn(problem.r(), |i, _| -0.5 / (s2 * w[i]));
    let grad_m = problem.design.tr_mul(&resid);
    let grad_v = problem.design.map(|a| a * a).tr_mul(&inv_var);
    let q = problem.q();
    let mut grad = StateGradient {
        logit: DVector::zeros(q),
        mu: DVector::zeros(q),
        log_sd: DVector::zeros(q),
    };
    for j in 0..q {
        let a = sigmoid(state.logit[j]);
        let mu = state.mu[j];
        let sd2 = (2.0 * state.log_sd[j]).exp();
        grad.mu[j] = grad_m[j] * a + grad_v[j] * 2.0 * a * (1.0 - a) * mu;
        grad.log_sd[j] = grad_v[j] * 2.0 * a * sd2;
        let d_alpha = grad_m[j] * mu + grad_v[j] * (sd2 + (1.0 - 2.0 * a) * mu * mu);
        grad.logit[j] = d_alpha * a * (1.0 - a);
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabPosterior {
    pub predictor_ids: Vec<String>,
    pub pip: Vec<f64>,
    /// Slab means.
    pub mean: Vec<f64>,
    /// Slab variances.
    pub var: Vec<f64>,
    pub residual_var: f64,
    pub elbo_trace: Vec<f64>,
    pub elbo: f64,
    pub iterations: usize,
    /// Fitted priors, one per group.
    pub priors: Vec<SpikeSlabPrior>,
}

impl SpikeSlabPosterior {
    /// Marginal posterior mean `pip · mean`.
    pub fn posterior_mean(&self) -> Vec<f64> {
        self.pip.iter().zip(&self.mean).map(|(a, m)| a * m).collect()
    }
}

struct Adam {
    m: DVector<f64>,
    v: DVector<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
        }
    }

    /// Ascent step on `x` along `grad`.
    fn step(&mut self, x: &mut DVector<f64>, grad: &DVector<f64>, lr: f64, t: usize) {
        let c1 = 1.0 - Self::B1.powi(t as i32);
        let c2 = 1.0 - Self::B2.powi(t as i32);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            x[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn fit<R: Rng + ?Sized>(
    problem: &EigenRegressionProblem,
    prior: &SpikeSlabPrior,
    opts: &SviOptions,
    rng: &mut R,
) -> Result<SpikeSlabPosterior> {
    let groups = vec![PriorGroup {
        range: 0..problem.q(),
        prior: *prior,
    }];
    fit_grouped(problem, groups, opts, rng)
}

/// Fits with separate priors on contiguous coefficient groups.
pub fn fit_grouped<R: Rng + ?Sized>(
    problem: &EigenRegressionProblem,
    groups: Vec<PriorGroup>,
    opts: &SviOptions,
    rng: &mut R,
) -> Result<SpikeSlabPosterior> {
    opts.validate()?;
    problem.check_design()?;
    let q = problem.q();
    let mut covered = vec![false; q];
    for g in &groups {
        if g.range.end > q {
            return Err(Error::ShapeMismatch(format!(
                "prior group {:?} exceeds {q} predictors",
                g.range
            )));
        }
        SpikeSlabPrior::new(g.prior.inclusion_logit, g.prior.slab_var)?;
        for j in g.range.clone() {
            if covered[j] {
                return Err(Error::ConfigInvalid(format!("predictor {j} in two prior groups")));
            }
            covered[j] = true;
        }
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(Error::ConfigInvalid(format!("predictor {j} has no prior group")));
    }

    let mut state = VariationalState::init(problem, groups, opts.residual_var);
    let r = problem.r();
    let w = problem.noise_weights();
    let n_groups = state.groups.len();
    let mut adam_logit = Adam::new(q);
    let mut adam_mu = Adam::new(q);
    let mut adam_sd = Adam::new(q);
    let mut adam_hyper = Adam::new(2 * n_groups);
    let mut hyper = DVector::from_fn(2 * n_groups, |i, _| {
        let p = &state.groups[i / 2].prior;
        if i % 2 == 0 {
            p.inclusion_logit
        } else {
            p.slab_var.ln()
        }
    });

    let mut trace = Vec::with_capacity(opts.iterations);
    let mut eps = DMatrix::zeros(r, opts.mc_samples);
    let mut iterations = 0;
    for t in 1..=opts.iterations {
        iterations = t;
        if opts.learn_residual_var {
            let (mean, sd, _, _) = predictor_moments(problem, &state);
            let rss: f64 = (0..r)
                .map(|i| ((problem.y_tilde[i] - mean[i]).powi(2) + sd[i] * sd[i]) / w[i])
                .sum();
            state.residual_var = (rss / r as f64).max(RESIDUAL_FLOOR);
        }
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let (loglik, mut grad) = mc_loglik_and_gradient(problem, &state, &eps);
        let kl = state.kl();
        let elbo = loglik - kl;
        if !elbo.is_finite() {
            return Err(Error::Diverged { iteration: t });
        }
        trace.push(elbo);

        // subtract the KL gradient
        let mut grad_hyper = DVector::zeros(2 * n_groups);
        for (gi, g) in state.groups.iter().enumerate() {
            let pi_logit = g.prior.inclusion_logit;
            let pi = sigmoid(pi_logit);
            let v0 = g.prior.slab_var;
            for j in g.range.clone() {
                let a = sigmoid(state.logit[j]);
                let mu = state.mu[j];
                let s2 = (2.0 * state.log_sd[j]).exp();
                let gauss = 0.5 * ((v0 / s2).ln() + (s2 + mu * mu) / v0 - 1.0);
                grad.mu[j] -= a * mu / v0;
                grad.log_sd[j] -= a * (s2 / v0 - 1.0);
                grad.logit[j] -= (state.logit[j] - pi_logit + gauss) * a * (1.0 - a);
                grad_hyper[2 * gi] += a - pi;
                grad_hyper[2 * gi + 1] += 0.5 * a * ((s2 + mu * mu) / v0 - 1.0);
            }
            if !g.prior.learn_inclusion {
                grad_hyper[2 * gi] = 0.0;
            }
            if !g.prior.learn_slab_var {
                grad_hyper[2 * gi + 1] = 0.0;
            }
        }

        let lr = opts.step_size;
        adam_logit.step(&mut state.logit, &grad.logit, lr, t);
        adam_mu.step(&mut state.mu, &grad.mu, lr, t);
        adam_sd.step(&mut state.log_sd, &grad.log_sd, lr, t);
        state.logit.apply(|x| *x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
        state.log_sd.apply(|x| *x = x.clamp(LOG_SD_MIN, LOG_SD_MAX));
        if state.groups.iter().any(|g| g.prior.learn_inclusion || g.prior.learn_slab_var) {
            adam_hyper.step(&mut hyper, &grad_hyper, lr, t);
            for (gi, g) in state.groups.iter_mut().enumerate() {
                g.prior.inclusion_logit = hyper[2 * gi].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                g.prior.slab_var = hyper[2 * gi + 1].clamp(-20.0, 20.0).exp();
            }
        }
        if state.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: t });
        }

        let wdw = opts.window;
        if t >= opts.min_iterations && t >= 2 * wdw {
            let cur: f64 = trace[t - wdw..t].iter().sum::<f64>() / wdw as f64;
            let prev: f64 = trace[t - 2 * wdw..t - wdw].iter().sum::<f64>() / wdw as f64;
            if cur - prev < opts.tolerance * cur.abs() {
                break;
            }
        }
    }

    let elbo = exact_elbo(problem, &state);
    if !elbo.is_finite() {
        return Err(Error::Diverged { iteration: iterations });
    }
    Ok(SpikeSlabPosterior {
        predictor_ids: problem.predictor_ids.clone(),
        pip: state.alpha().iter().copied().collect(),
        mean: state.mu.iter().copied().collect(),
        var: state.log_sd.iter().map(|l| (2.0 * l).exp()).collect(),
        residual_var: state.residual_var,
        elbo_trace: trace,
        elbo,
        iterations,
        priors: state.groups.iter().map(|g| g.prior).collect(),
    })
}
