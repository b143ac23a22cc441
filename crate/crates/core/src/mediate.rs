//! Mediation estimators on combined GWAS and eQTL z-scores.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{
    factorize_projected_model, factorize_z, project_to_null_block, select_unmediated, FactorModel,
    FactorOptions, DEFAULT_PIP_THRESHOLD,
};
use crate::linalg::{svd_panel, EigenLD, GenotypePanel, DEFAULT_RANK_TOL};
use crate::ssvi::{build_problem, fit_grouped, EigenRegressionProblem, PriorGroup, SpikeSlabPosterior, SpikeSlabPrior, SviOptions};
use crate::sumstats::{CombinedZ, SummaryVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Naive,
    Fact,
    Proj,
}

impl MethodTag {
    pub fn name(&self) -> &'static str {
        match self {
            MethodTag::Naive => "cammel_naive",
            MethodTag::Fact => "cammel_fact",
            MethodTag::Proj => "cammel_proj",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneEffect {
    pub gene_id: String,
    /// Marginal posterior mean `pip · slab mean`.
    pub beta_mean: f64,
    pub beta_pip: f64,
    pub beta_sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEffect {
    pub id: String,
    pub gamma_mean: f64,
    pub gamma_pip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub elbo: f64,
    pub runtime_secs: f64,
    pub n_unmediated: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationResult {
    pub method: MethodTag,
    pub genes: Vec<GeneEffect>,
    pub covariates: Vec<CovariateEffect>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationOptions {
    pub svi: SviOptions,
    pub factor: FactorOptions,
    pub pip_threshold: f64,
    /// Prior on mediation effects; defaults to one expected causal gene.
    pub beta_prior: Option<SpikeSlabPrior>,
    /// Prior on unmediated effects; defaults to one expected active term.
    pub gamma_prior: Option<SpikeSlabPrior>,
}

impl Default for MediationOptions {
    fn default() -> Self {
        Self {
            svi: SviOptions::default(),
            factor: FactorOptions::default(),
            pip_threshold: DEFAULT_PIP_THRESHOLD,
            beta_prior: None,
            gamma_prior: None,
        }
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn mediation_problem(combined: &CombinedZ, eig: &EigenLD, gwas: &SummaryVector) -> Result<EigenRegressionProblem> {
    if combined.k() == 0 {
        return Err(Error::ShapeMismatch("no eQTL genes to test".into()));
    }
    let predictors: Vec<&SummaryVector> = combined.eqtl.iter().collect();
    build_problem(eig, gwas, &predictors)
}

fn fit_with_covariates<R: Rng + ?Sized>(
    mut problem: EigenRegressionProblem,
    covariates: Option<(&DMatrix<f64>, Vec<String>)>,
    opts: &MediationOptions,
    rng: &mut R,
) -> Result<SpikeSlabPosterior> {
    let k = problem.q();
    let beta_prior = opts.beta_prior.unwrap_or_else(|| SpikeSlabPrior::sparse(k));
    let mut groups = vec![PriorGroup {
        range: 0..k,
        prior: beta_prior,
    }];
    if let Some((block, ids)) = covariates {
        if block.ncols() > 0 {
            let l = block.ncols();
            problem.append_columns(block, ids)?;
            groups.push(PriorGroup {
                range: k..k + l,
                prior: opts.gamma_prior.unwrap_or_else(|| SpikeSlabPrior::sparse(l)),
            });
        }
    }
    fit_grouped(&problem, groups, &opts.svi, rng)
}

fn assemble(
    method: MethodTag,
    post: &SpikeSlabPosterior,
    k: usize,
    n_unmediated: usize,
    started: Instant,
) -> MediationResult {
    let means = post.posterior_mean();
    let genes = (0..k)
        .map(|j| GeneEffect {
            gene_id: post.predictor_ids[j].clone(),
            beta_mean: means[j],
            beta_pip: post.pip[j],
            beta_sign: sign_of(means[j]),
        })
        .collect();
    let covariates = (k..post.pip.len())
        .map(|j| CovariateEffect {
            id: post.predictor_ids[j].clone(),
            gamma_mean: means[j],
            gamma_pip: post.pip[j],
        })
        .collect();
    MediationResult {
        method,
        genes,
        covariates,
        diagnostics: Diagnostics {
            elbo: post.elbo,
            runtime_secs: started.elapsed().as_secs_f64(),
            n_unmediated,
            iterations: post.iterations,
        },
    }
}

/// Joint model with a free unmediated effect in every eigen direction.
///
/// The term `n^{-1/2} R γ` whitens to `diag(D) γ'` with `γ' = n^{-1/2} Vᵀ γ`,
/// so the unmediated block of the design is `diag(D)`.
pub fn cammel_naive<R: Rng + ?Sized>(
    combined: &CombinedZ,
    eig: &EigenLD,
    opts: &MediationOptions,
    rng: &mut R,
) -> Result<MediationResult> {
    let started = Instant::now();
    let problem = mediation_problem(combined, eig, &combined.gwas)?;
    let k = problem.q();
    let block = DMatrix::from_diagonal(&eig.d);
    let ids = (0..eig.rank()).map(|i| format!("eigen{i}")).collect();
    let post = fit_with_covariates(problem, Some((&block, ids)), opts, rng)?;
    Ok(assemble(MethodTag::Naive, &post, k, eig.rank(), started))
}

/// Factorization of the combined matrix, then the joint model with the
/// selected unmediated covariates.
pub fn cammel_fact<R: Rng + ?Sized>(
    combined: &CombinedZ,
    eig: &EigenLD,
    l_max: usize,
    opts: &MediationOptions,
    rng: &mut R,
) -> Result<MediationResult> {
    let started = Instant::now();
    let model = factorize_z(combined, eig, l_max, &opts.factor, rng)?;
    let cov = select_unmediated(&model, opts.pip_threshold)?;
    let problem = mediation_problem(combined, eig, &combined.gwas)?;
    let k = problem.q();
    let post = fit_with_covariates(problem, Some((&cov.eta_unmed, cov.factor_ids.clone())), opts, rng)?;
    Ok(assemble(MethodTag::Fact, &post, k, cov.l(), started))
}

/// GWAS z-scores minus the GWAS component reconstructed from null-block factors.
pub fn adjusted_gwas(combined: &CombinedZ, model: &FactorModel, factors: &[usize]) -> Result<SummaryVector> {
    let mut z = combined.gwas.z.clone();
    for &l in factors {
        z -= model.z_factors.column(l) * model.omega[(0, l)];
    }
    SummaryVector::from_z(
        combined.gwas.trait_id.clone(),
        combined.gwas.snp_ids.clone(),
        z,
        combined.gwas.n_samples,
    )
}

/// Null-block projection, factorization, GWAS adjustment, then the
/// mediation-only model.
pub fn cammel_proj<R: Rng + ?Sized>(
    combined: &CombinedZ,
    eig: &EigenLD,
    null_panel: &GenotypePanel,
    l_max: usize,
    opts: &MediationOptions,
    rng: &mut R,
) -> Result<MediationResult> {
    let started = Instant::now();
    let projected = project_to_null_block(combined, eig, null_panel)?;
    let null_eig = svd_panel(null_panel, DEFAULT_RANK_TOL)?;
    let model = factorize_projected_model(&projected, &null_eig, eig, l_max, &opts.factor, rng)?;
    let factors = select_unmediated(&model, opts.pip_threshold)?.selected;
    let gwas = adjusted_gwas(combined, &model, &factors)?;
    let problem = mediation_problem(combined, eig, &gwas)?;
    let k = problem.q();
    let post = fit_with_covariates(problem, None, opts, rng)?;
    Ok(assemble(MethodTag::Proj, &post, k, factors.len(), started))
}
