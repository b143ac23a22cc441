//! Sparse factorization of the combined z-score matrix.
//!
//! In whitened eigen coordinates the model `E[Z̃] = n^{-1/2} Xᵀ C Ωᵀ` with
//! `C = U F` becomes `H = D⁻¹ Vᵀ Z̃ ≈ F Ωᵀ`, with Gaussian factor scores `F`
//! (`r × L`) and spike-slab loadings `Ω` (`T × L`). It is fit by coordinate
//! ascent variational inference.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{EigenLD, GenotypePanel};
use crate::ssvi::{logit, sigmoid};
use crate::sumstats::{combine, CombinedZ, SummaryVector};

/// Default activity threshold on loading inclusion probabilities.
pub const DEFAULT_PIP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorOptions {
    pub l_max: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Factors explaining at most this fraction of `‖H‖²` are dropped.
    pub prune_fraction: f64,
    pub inclusion_prob: f64,
    pub slab_var: f64,
    pub learn_residual_var: bool,
    /// Scale of the random perturbation added to the spectral initialization.
    pub jitter: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            l_max: 10,
            max_iter: 500,
            tol: 1e-6,
            prune_fraction: 1e-4,
            inclusion_prob: 0.1,
            slab_var: 1.0,
            learn_residual_var: true,
            jitter: 1e-3,
        }
    }
}

impl FactorOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.l_max == 0 {
            return bad("l_max must be at least 1".into());
        }
        if !(self.inclusion_prob > 0.0 && self.inclusion_prob < 1.0) {
            return bad(format!("inclusion_prob = {} outside (0, 1)", self.inclusion_prob));
        }
        if !(self.slab_var > 0.0) {
            return bad(format!("slab_var = {} must be positive", self.slab_var));
        }
        if !(self.prune_fraction >= 0.0) {
            return bad("prune_fraction must be >= 0".into());
        }
        Ok(())
    }
}

/// Whitened factorization `H ≈ F Ωᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// Posterior mean factor scores, `r × L`.
    pub f: DMatrix<f64>,
    /// Posterior mean loadings `pip · slab mean`, `T × L`.
    pub omega: DMatrix<f64>,
    pub omega_pip: DMatrix<f64>,
    /// `‖f_l‖² ‖ω_l‖²` per factor, descending.
    pub explained: Vec<f64>,
    /// Residual scale shared by every trait.
    pub residual_var: f64,
    pub iterations: usize,
}

impl FactorFit {
    pub fn l(&self) -> usize {
        self.f.ncols()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.f * self.omega.transpose()
    }

    fn empty(r: usize, t: usize) -> Self {
        Self {
            f: DMatrix::zeros(r, 0),
            omega: DMatrix::zeros(t, 0),
            omega_pip: DMatrix::zeros(t, 0),
            explained: Vec::new(),
            residual_var: 1.0,
            iterations: 0,
        }
    }
}

/// Fits `H ≈ F Ωᵀ` by coordinate ascent.
pub fn fit_factors<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    l_max: usize,
    opts: &FactorOptions,
    rng: &mut R,
) -> Result<FactorFit> {
    opts.validate()?;
    if l_max == 0 {
        return Err(Error::ConfigInvalid("l_max must be at least 1".into()));
    }
    let (r, t) = h.shape();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite entry in factor input".into()));
    }
    let total = h.norm_squared();
    if total == 0.0 || r == 0 || t == 0 {
        return Ok(FactorFit::empty(r, t));
    }
    // with L ≥ T every trait is fit exactly and a learned residual scale collapses
    let l = if opts.learn_residual_var && t > 1 {
        l_max.min(r).min(t - 1)
    } else {
        l_max.min(r).min(t)
    };

    let svd = h.clone().svd(true, true);
    let u_h = svd.u.ok_or_else(|| Error::NumericalFailure("factor initialization".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::NumericalFailure("factor initialization".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sqrt_r = (r as f64).sqrt();
    let mut m_f = DMatrix::zeros(r, l);
    let mut mu = DMatrix::zeros(t, l);
    for (k, &i) in order.iter().take(l).enumerate() {
        for row in 0..r {
            m_f[(row, k)] = u_h[(row, i)] * sqrt_r + opts.jitter * rng.sample::<f64, _>(StandardNormal);
        }
        for tr in 0..t {
            mu[(tr, k)] = v_t[(i, tr)] * svd.singular_values[i] / sqrt_r;
        }
    }
    let v0 = opts.slab_var;
    let prior_logit = logit(opts.inclusion_prob);
    let mut alpha = DMatrix::from_element(t, l, 0.5);
    let mut s2 = DMatrix::from_element(t, l, v0 * 0.01);
    // residual of the rank-l spectral fit
    let spectral: f64 = order.iter().take(l).map(|&i| svd.singular_values[i].powi(2)).sum();
    let mut sigma2 = if opts.learn_residual_var {
        ((total - spectral).max(0.0) / (r * t) as f64).max(1e-12 * total / (r * t) as f64)
    } else {
        1.0
    };
    let floor = 1e-12 * total / (r * t) as f64;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let m_omega = alpha.component_mul(&mu);

        // factor scores
        let mut lambda = DMatrix::<f64>::identity(l, l);
        let mut weighted = DMatrix::zeros(t, l);
        for tr in 0..t {
            let mt = m_omega.row(tr).transpose();
            let mut e = &mt * mt.transpose();
            for k in 0..l {
                let a = alpha[(tr, k)];
                let var = a * (s2[(tr, k)] + mu[(tr, k)].powi(2)) - m_omega[(tr, k)].powi(2);
                e[(k, k)] += var.max(0.0);
            }
            lambda += e / sigma2;
            weighted.set_row(tr, &(m_omega.row(tr) / sigma2));
        }
        let chol = lambda
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("factor precision not positive definite".into()))?;
        let sigma_f = chol.inverse();
        m_f = h * &weighted * &sigma_f;
        let g = m_f.tr_mul(&m_f) + &sigma_f * r as f64;
        let fth = m_f.tr_mul(h);

        // loadings
        let mut max_change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for tr in 0..t {
            let sig = sigma2;
            for k in 0..l {
                let mut b = fth[(k, tr)];
                for k2 in 0..l {
                    if k2 != k {
                        b -= g[(k, k2)] * alpha[(tr, k2)] * mu[(tr, k2)];
                    }
                }
                let var = sig / (g[(k, k)] + sig / v0);
                let mean = var * b / sig;
                let lg = prior_logit + 0.5 * (var / v0).ln() + mean * mean / (2.0 * var);
                let old = alpha[(tr, k)] * mu[(tr, k)];
                s2[(tr, k)] = var;
                mu[(tr, k)] = mean;
                alpha[(tr, k)] = sigmoid(lg);
                let new = alpha[(tr, k)] * mean;
                max_change = max_change.max((new - old).abs());
                scale = scale.max(new.abs());
            }
        }

        if opts.learn_residual_var {
            let m_omega = alpha.component_mul(&mu);
            let mut rss = 0.0;
            for tr in 0..t {
                let ht = h.column(tr);
                let mt = m_omega.row(tr).transpose();
                let mut e = &mt * mt.transpose();
                for k in 0..l {
                    let a = alpha[(tr, k)];
                    e[(k, k)] += (a * (s2[(tr, k)] + mu[(tr, k)].powi(2)) - m_omega[(tr, k)].powi(2)).max(0.0);
                }
                let cross = (&m_f * &mt).dot(&ht);
                let quad = (&g * &e).trace();
                rss += ht.norm_squared() - 2.0 * cross + quad;
            }
            sigma2 = (rss / (r * t) as f64).max(floor);
        }
        if max_change.is_nan() {
            return Err(Error::Diverged { iteration: it });
        }
        if max_change < opts.tol * scale {
            break;
        }
    }

    let m_omega = alpha.component_mul(&mu);
    let mut kept: Vec<(usize, f64)> = (0..l)
        .map(|k| (k, m_f.column(k).norm_squared() * m_omega.column(k).norm_squared()))
        .filter(|&(_, e)| e > opts.prune_fraction * total)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let select = |m: &DMatrix<f64>| {
        let cols: Vec<DVector<f64>> = kept.iter().map(|&(k, _)| m.column(k).into_owned()).collect();
        if cols.is_empty() {
            DMatrix::zeros(m.nrows(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    Ok(FactorFit {
        f: select(&m_f),
        omega: select(&m_omega),
        omega_pip: select(&alpha),
        explained: kept.iter().map(|&(_, e)| e).collect(),
        residual_var: sigma2,
        iterations,
    })
}

/// Factor model mapped to individual space and to the analysis panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub trait_ids: Vec<String>,
    /// Individual-space factors `C = U F`, `n × L`.
    pub c: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub omega_pip: DMatrix<f64>,
    pub explained: Vec<f64>,
    /// `n^{-1/2} Xᵀ C` on the analysis panel, `p × L`.
    pub z_factors: DMatrix<f64>,
    /// The same covariates in whitened analysis coordinates, `r × L`.
    pub eta_factors: DMatrix<f64>,
}

impl FactorModel {
    pub fn l(&self) -> usize {
        self.c.ncols()
    }

    pub fn factor_ids(&self) -> Vec<String> {
        (0..self.l()).map(|l| format!("factor{l}")).collect()
    }
}

fn model_from_fit(fit: FactorFit, fit_eig: &EigenLD, analysis_eig: &EigenLD, trait_ids: Vec<String>) -> Result<FactorModel> {
    let c = fit_eig.individual_from_eigen(&fit.f)?;
    let z_factors = analysis_eig.z_from_individual(&c)?;
    let eta_factors = analysis_eig.u.tr_mul(&c);
    Ok(FactorModel {
        trait_ids,
        c,
        omega: fit.omega,
        omega_pip: fit.omega_pip,
        explained: fit.explained,
        z_factors,
        eta_factors,
    })
}

/// Factorizes the combined matrix in the eigen space of its own panel.
pub fn factorize_z<R: Rng + ?Sized>(
    combined: &CombinedZ,
    eig: &EigenLD,
    l_max: usize,
    opts: &FactorOptions,
    rng: &mut R,
) -> Result<FactorModel> {
    if eig.rank() < 1 {
        return Err(Error::RankDeficient(eig.rank()));
    }
    let h = eig.rotate_matrix(&combined.z_matrix())?;
    let fit = fit_factors(&h, l_max, opts, rng)?;
    model_from_fit(fit, eig, eig, combined.trait_ids())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmediatedCovariates {
    pub factor_ids: Vec<String>,
    /// `p × L'`.
    pub z_unmed: DMatrix<f64>,
    /// Whitened analysis coordinates, `r × L'`.
    pub eta_unmed: DMatrix<f64>,
    pub selected: Vec<usize>,
    pub rejected: Vec<(usize, String)>,
    /// GWAS loading of each selected factor.
    pub gwas_loading: Vec<f64>,
}

impl UnmediatedCovariates {
    pub fn l(&self) -> usize {
        self.selected.len()
    }
}

/// Keeps factor `l` unless it is active on the GWAS row and on some eQTL row.
pub fn select_unmediated(model: &FactorModel, pip_threshold: f64) -> Result<UnmediatedCovariates> {
    if !(pip_threshold > 0.0 && pip_threshold < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "pip_threshold = {pip_threshold} outside (0, 1)"
        )));
    }
    let mut selected = Vec::new();
    let mut rejected = Vec::new();
    for l in 0..model.l() {
        let gwas_active = model.omega_pip[(0, l)] > pip_threshold;
        let eqtl_active: Vec<usize> = (1..model.omega_pip.nrows())
            .filter(|&k| model.omega_pip[(k, l)] > pip_threshold)
            .collect();
        if gwas_active && !eqtl_active.is_empty() {
            let names: Vec<&str> = eqtl_active
                .iter()
                .map(|&k| model.trait_ids[k].as_str())
                .collect();
            rejected.push((
                l,
                format!("active on gwas and on {}", names.join(",")),
            ));
        } else {
            selected.push(l);
        }
    }
    let ids = model.factor_ids();
    let pick = |m: &DMatrix<f64>| {
        let cols: Vec<DVector<f64>> = selected.iter().map(|&l| m.column(l).into_owned()).collect();
        if cols.is_empty() {
            DMatrix::zeros(m.nrows(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    Ok(UnmediatedCovariates {
        factor_ids: selected.iter().map(|&l| ids[l].clone()).collect(),
        z_unmed: pick(&model.z_factors),
        eta_unmed: pick(&model.eta_factors),
        gwas_loading: selected.iter().map(|&l| model.omega[(0, l)]).collect(),
        selected,
        rejected,
    })
}

/// `Z̃⁰ = X₀ᵀ pinv(Xᵀ) Z̃`, the combined matrix seen through a disjoint block.
pub fn project_to_null_block(
    combined: &CombinedZ,
    eig: &EigenLD,
    null_panel: &GenotypePanel,
) -> Result<CombinedZ> {
    if null_panel.n() != eig.n() {
        return Err(Error::ShapeMismatch(format!(
            "null panel has {} individuals, analysis panel {}",
            null_panel.n(),
            eig.n()
        )));
    }
    let analysis: BTreeSet<&str> = combined.snp_ids().iter().map(String::as_str).collect();
    let shared: Vec<&str> = null_panel
        .snp_ids()
        .iter()
        .map(String::as_str)
        .filter(|id| analysis.contains(id))
        .collect();
    if !shared.is_empty() {
        return Err(Error::BlockOverlap(format!(
            "{} shared SNP(s), first {}",
            shared.len(),
            shared[0]
        )));
    }
    let back = eig.apply_pseudo_inverse_transpose(&combined.z_matrix())?;
    let z0 = null_panel.values().tr_mul(&back);
    let ids = null_panel.snp_ids().to_vec();
    let to_summary = |col: usize, src: &SummaryVector| {
        SummaryVector::from_z(
            src.trait_id.clone(),
            ids.clone(),
            z0.column(col).into_owned(),
            src.n_samples,
        )
    };
    let gwas = to_summary(0, &combined.gwas)?;
    let eqtl = combined
        .eqtl
        .iter()
        .enumerate()
        .map(|(k, s)| to_summary(k + 1, s))
        .collect::<Result<_>>()?;
    combine(gwas, eqtl)
}

/// Factorizes the projected matrix on the null block and maps the factors
/// back through the analysis panel.
pub fn factorize_projected_model<R: Rng + ?Sized>(
    projected: &CombinedZ,
    null_eig: &EigenLD,
    analysis_eig: &EigenLD,
    l_max: usize,
    opts: &FactorOptions,
    rng: &mut R,
) -> Result<FactorModel> {
    if null_eig.rank() < 1 {
        return Err(Error::RankDeficient(null_eig.rank()));
    }
    if null_eig.n() != analysis_eig.n() {
        return Err(Error::ShapeMismatch(format!(
            "null panel has {} individuals, analysis panel {}",
            null_eig.n(),
            analysis_eig.n()
        )));
    }
    let h = null_eig.rotate_matrix(&projected.z_matrix())?;
    let fit = fit_factors(&h, l_max, opts, rng)?;
    model_from_fit(fit, null_eig, analysis_eig, projected.trait_ids())
}

pub fn factorize_projected<R: Rng + ?Sized>(
    projected: &CombinedZ,
    null_eig: &EigenLD,
    analysis_eig: &EigenLD,
    l_max: usize,
    pip_threshold: f64,
    opts: &FactorOptions,
    rng: &mut R,
) -> Result<UnmediatedCovariates> {
    let model = factorize_projected_model(projected, null_eig, analysis_eig, l_max, opts, rng)?;
    select_unmediated(&model, pip_threshold)
}
