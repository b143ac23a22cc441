//! Ground-truth scenario generation.
//!
//! A scenario draws gene expression and a phenotype on a fixed reference
//! panel, then releases only summary statistics (plus the observed
//! individual-level vectors that observed-expression TWAS needs). Every
//! variance component is rescaled exactly to its target so the variance
//! budget holds per draw rather than only in expectation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{standardize, GenotypePanel};
use crate::sumstats::{combine, summarize_trait, CombinedZ, SummaryVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceModel {
    /// Expression noise enters after mediation: `y ← Σ m⁽ᵍ⁾β`.
    #[default]
    Symmetric,
    /// Expression noise is transmitted: `y ← Σ (m⁽ᵍ⁾ + δ)β`.
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Pleiotropy {
    /// The shared random effect `u` is i.i.d. normal, independent of genotype.
    #[default]
    None,
    /// `u = Xγ` with `γ_j ~ ±magnitude + N(0, noise_sd²)`, one direction per scenario.
    Directional { magnitude: f64, noise_sd: f64 },
}

/// Default spread of polygenic effects: variance 10.
pub const POLYGENIC_NOISE_SD: f64 = 3.162_277_660_168_379_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Number of genes.
    pub k: usize,
    pub n_causal: usize,
    /// Causal eQTL SNPs per gene.
    pub d: usize,
    pub g_g2: f64,
    pub h_m2: f64,
    pub g_u2: f64,
    pub h_u2: f64,
    pub missing_frac: f64,
    pub variance_model: VarianceModel,
    pub pleiotropy: Pleiotropy,
    /// Explicit SNP ranges per gene; generated from the panel blocks when absent.
    pub gene_windows: Option<Vec<(usize, usize)>>,
    /// Width of generated gene windows, in SNPs.
    pub window_width: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 100,
            n_causal: 1,
            d: 3,
            g_g2: 0.3,
            h_m2: 0.2,
            g_u2: 0.0,
            h_u2: 0.0,
            missing_frac: 0.0,
            variance_model: VarianceModel::Symmetric,
            pleiotropy: Pleiotropy::None,
            gene_windows: None,
            window_width: 20,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.n_causal > self.k {
            return bad(format!("n_causal ({}) > k ({})", self.n_causal, self.k));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(self.g_g2 > 0.0 && self.g_g2 < 1.0) {
            return bad(format!("g_g2 = {} outside (0, 1)", self.g_g2));
        }
        for (name, v) in [("h_m2", self.h_m2), ("g_u2", self.g_u2), ("h_u2", self.h_u2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1)"));
            }
        }
        if self.g_g2 + self.g_u2 >= 1.0 {
            return bad(format!(
                "g_g2 + g_u2 = {} must be < 1",
                self.g_g2 + self.g_u2
            ));
        }
        if self.h_m2 + self.h_u2 >= 1.0 {
            return bad(format!(
                "h_m2 + h_u2 = {} must be < 1",
                self.h_m2 + self.h_u2
            ));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return bad(format!("missing_frac = {} outside [0, 1)", self.missing_frac));
        }
        if let Pleiotropy::Directional { noise_sd, .. } = self.pleiotropy {
            if !(noise_sd >= 0.0) {
                return bad(format!("pleiotropy noise_sd = {noise_sd} must be >= 0"));
            }
        }
        if let Some(w) = &self.gene_windows {
            if w.len() != self.k {
                return bad(format!("{} gene windows for k = {}", w.len(), self.k));
            }
            for (g, &(s, e)) in w.iter().enumerate() {
                if e > p || e <= s || e - s < self.d {
                    return bad(format!(
                        "gene {g} window [{s}, {e}) cannot hold d = {} SNPs within p = {p}",
                        self.d
                    ));
                }
            }
        } else if self.window_width < self.d {
            return bad(format!(
                "window_width {} smaller than d = {}",
                self.window_width, self.d
            ));
        }
        Ok(())
    }

    pub fn n_missing(&self) -> usize {
        (self.missing_frac * self.k as f64).round() as usize
    }
}

/// Evenly spaced windows of `width` SNPs, each kept inside one LD block.
pub fn default_gene_windows(
    blocks: &[(usize, usize)],
    k: usize,
    width: usize,
) -> Vec<(usize, usize)> {
    let p = blocks.last().map(|b| b.1).unwrap_or(0);
    (0..k)
        .map(|g| {
            let center = ((g as f64 + 0.5) * p as f64 / k as f64) as usize;
            let &(bs, be) = blocks
                .iter()
                .find(|&&(s, e)| center >= s && center < e)
                .unwrap_or(&blocks[blocks.len() - 1]);
            if be - bs <= width {
                return (bs, be);
            }
            let start = center.saturating_sub(width / 2).clamp(bs, be - width);
            (start, start + width)
        })
        .collect()
}

/// Latent quantities of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    /// `p × K` eQTL effects, nonzero only on each gene's sampled SNPs.
    pub alpha: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Causal genes with the sign of their mediation effect.
    pub causal_set: Vec<(usize, i8)>,
    pub gamma: DVector<f64>,
    pub u: DVector<f64>,
    /// Effective loadings of `u`; entry 0 is the phenotype, `1..=K` the genes.
    pub xi: DVector<f64>,
    pub missing_set: Vec<usize>,
    pub tau0_2: f64,
    pub sigma0_2: f64,
    pub gene_windows: Vec<(usize, usize)>,
}

impl ScenarioTruth {
    pub fn true_sign(&self, gene: usize) -> Option<i8> {
        self.causal_set
            .iter()
            .find(|(g, _)| *g == gene)
            .map(|(_, s)| *s)
    }
}

/// Released data plus the truth needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub combined: CombinedZ,
    /// Gene index of each eQTL column in `combined`.
    pub observed_genes: Vec<usize>,
    /// `n × K_obs` observed expression of the same genes.
    pub observed_expression: DMatrix<f64>,
    pub observed_phenotype: DVector<f64>,
    pub truth: ScenarioTruth,
}

pub fn gene_id(k: usize) -> String {
    format!("gene{k}")
}

pub fn gene_index(id: &str) -> Option<usize> {
    id.strip_prefix("gene").and_then(|s| s.parse().ok())
}

fn normal_vec<R: Rng + ?Sized>(n: usize, sd: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn population_variance(v: &DVector<f64>) -> f64 {
    let m = v.mean();
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Center and scale `v` to population variance `target`; returns the scale factor.
/// A constant vector becomes zero.
fn rescale_to_variance(v: &mut DVector<f64>, target: f64) -> f64 {
    let mean = v.mean();
    v.add_scalar_mut(-mean);
    let var = population_variance(v);
    if var <= 0.0 || target <= 0.0 {
        v.fill(0.0);
        return 0.0;
    }
    let factor = (target / var).sqrt();
    *v *= factor;
    factor
}

/// Polygenic bias `u = Xγ`. Returns `(u, γ)`.
pub fn simulate_polygenic_bias<R: Rng + ?Sized>(
    panel: &GenotypePanel,
    magnitude: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(noise_sd >= 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "noise_sd = {noise_sd} must be >= 0"
        )));
    }
    let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let gamma = DVector::from_fn(panel.p(), |_, _| {
        direction * magnitude + noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let u = panel.values() * &gamma;
    Ok((u, gamma))
}

/// Runs the seven generation steps and computes summary statistics.
pub fn simulate_scenario<R: Rng + ?Sized>(
    panel: &GenotypePanel,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<ScenarioData> {
    let (n, p) = (panel.n(), panel.p());
    cfg.validate(p)?;
    let k = cfg.k;
    let x = panel.values();
    let windows = cfg
        .gene_windows
        .clone()
        .unwrap_or_else(|| default_gene_windows(panel.block_bounds(), k, cfg.window_width));

    // 1. eQTL effects on d sampled SNPs per gene; genetic expression rescaled to g_g2.
    let alpha_dist = Normal::new(0.0, (cfg.g_g2 / cfg.d as f64).sqrt())
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut alpha = DMatrix::zeros(p, k);
    let mut m_genetic = DMatrix::zeros(n, k);
    for g in 0..k {
        let (s, e) = windows[g];
        for j in sample(rng, e - s, cfg.d).into_iter() {
            alpha[(s + j, g)] = alpha_dist.sample(rng);
        }
        let mut mg = x * alpha.column(g);
        let factor = rescale_to_variance(&mut mg, cfg.g_g2);
        alpha.column_mut(g).scale_mut(factor);
        m_genetic.set_column(g, &mg);
    }

    // Expression noise is drawn up front because the asymmetric model transmits it.
    let tau0_2 = 1.0 - cfg.g_g2 - cfg.g_u2;
    let sigma0_2 = 1.0 - cfg.h_m2 - cfg.h_u2;
    let delta = DMatrix::from_fn(n, k, |_, _| tau0_2.sqrt() * rng.sample::<f64, _>(StandardNormal));

    // 2. mediation effects of the causal genes.
    let mut beta = DVector::zeros(k);
    let causal: Vec<usize> = if cfg.h_m2 > 0.0 && cfg.n_causal > 0 {
        let mut c = sample(rng, k, cfg.n_causal).into_vec();
        c.sort_unstable();
        c
    } else {
        Vec::new()
    };
    let beta_dist = Normal::new(0.0, (cfg.h_m2 / cfg.n_causal.max(1) as f64).sqrt())
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    for &g in &causal {
        beta[g] = beta_dist.sample(rng);
    }
    let mut y_genetic = DVector::zeros(n);
    for &g in &causal {
        let mut mediator = m_genetic.column(g).into_owned();
        if cfg.variance_model == VarianceModel::Asymmetric {
            mediator += delta.column(g);
        }
        y_genetic += mediator * beta[g];
    }
    if !causal.is_empty() {
        let factor = rescale_to_variance(&mut y_genetic, cfg.h_m2);
        beta *= factor;
    }
    let causal_set: Vec<(usize, i8)> = causal
        .iter()
        .filter(|&&g| beta[g] != 0.0)
        .map(|&g| (g, if beta[g] > 0.0 { 1 } else { -1 }))
        .collect();

    // 3-4. shared random effect on genes and phenotype.
    let (u, gamma) = match cfg.pleiotropy {
        Pleiotropy::Directional {
            magnitude,
            noise_sd,
        } => simulate_polygenic_bias(panel, magnitude, noise_sd, rng)?,
        Pleiotropy::None => (normal_vec(n, 1.0, rng), DVector::zeros(p)),
    };
    let u_sd = population_variance(&u).sqrt();
    let mut xi = DVector::zeros(k + 1);
    let mut m_confounded = DMatrix::zeros(n, k);
    for g in 0..k {
        let loading: f64 = rng.sample(StandardNormal);
        if cfg.g_u2 > 0.0 {
            let mut mu = &u * loading;
            let factor = rescale_to_variance(&mut mu, cfg.g_u2);
            xi[g + 1] = loading * factor;
            m_confounded.set_column(g, &mu);
        }
    }
    let loading0: f64 = rng.sample(StandardNormal);
    let mut y_confounded = &u * loading0;
    let factor = rescale_to_variance(&mut y_confounded, cfg.h_u2);
    xi[0] = loading0 * factor;
    if u_sd == 0.0 {
        xi.fill(0.0);
    }

    // 5. missing genes lose their genetic component.
    let mut missing = sample(rng, k, cfg.n_missing()).into_vec();
    missing.sort_unstable();
    for &g in &missing {
        m_genetic.set_column(g, &normal_vec(n, cfg.g_g2.sqrt(), rng));
    }

    // 6-7. observation noise.
    let expression = &m_genetic + &m_confounded + &delta;
    let phenotype = &y_genetic + &y_confounded + normal_vec(n, sigma0_2.sqrt(), rng);

    let missing_lookup: BTreeSet<usize> = missing.iter().copied().collect();
    let observed_genes: Vec<usize> = (0..k).filter(|g| !missing_lookup.contains(g)).collect();
    let gwas = summarize_trait(panel, &phenotype, "gwas")?;
    let eqtl: Vec<SummaryVector> = observed_genes
        .iter()
        .map(|&g| summarize_trait(panel, &expression.column(g).into_owned(), gene_id(g)))
        .collect::<Result<_>>()?;
    let combined = combine(gwas, eqtl)?;
    let observed_expression = if observed_genes.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(
            &observed_genes
                .iter()
                .map(|&g| expression.column(g).into_owned())
                .collect::<Vec<_>>(),
        )
    };

    Ok(ScenarioData {
        combined,
        observed_genes,
        observed_expression,
        observed_phenotype: phenotype,
        truth: ScenarioTruth {
            alpha,
            beta,
            causal_set,
            gamma,
            u,
            xi,
            missing_set: missing,
            tau0_2,
            sigma0_2,
            gene_windows: windows,
        },
    })
}

/// Settings of the polygenic-bias experiment: many genes, half unobserved,
/// a directional unmediated genetic effect on the phenotype only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolygenicSettings {
    pub k: usize,
    pub n_causal: usize,
    pub missing_frac: f64,
    pub h_u2: f64,
    pub h_m2: f64,
    pub g_g2: f64,
    pub d: usize,
    pub magnitude: f64,
    pub noise_sd: f64,
    pub window_width: usize,
}

impl Default for PolygenicSettings {
    fn default() -> Self {
        Self {
            k: 150,
            n_causal: 3,
            missing_frac: 0.5,
            h_u2: 0.3,
            h_m2: 0.2,
            g_g2: 0.3,
            d: 3,
            magnitude: 1.0,
            noise_sd: POLYGENIC_NOISE_SD,
            window_width: 20,
        }
    }
}

impl PolygenicSettings {
    pub fn to_config(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            k: self.k,
            n_causal: self.n_causal,
            d: self.d,
            g_g2: self.g_g2,
            h_m2: self.h_m2,
            g_u2: 0.0,
            h_u2: self.h_u2,
            missing_frac: self.missing_frac,
            variance_model: VarianceModel::Symmetric,
            pleiotropy: Pleiotropy::Directional {
                magnitude: self.magnitude,
                noise_sd: self.noise_sd,
            },
            gene_windows: None,
            window_width: self.window_width,
            seed,
        }
    }
}

pub fn scenario_polygenic<R: Rng + ?Sized>(
    panel: &GenotypePanel,
    settings: &PolygenicSettings,
    rng: &mut R,
) -> Result<ScenarioData> {
    simulate_scenario(panel, &settings.to_config(0), rng)
}

/// Settings of the non-genetic confounding experiment: all genes observed,
/// one causal gene, `u` independent of genotype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfoundedSettings {
    pub k: usize,
    pub n_causal: usize,
    pub g_u2: f64,
    pub h_u2: f64,
    pub h_m2: f64,
    pub g_g2: f64,
    pub d: usize,
    pub window_width: usize,
}

impl Default for ConfoundedSettings {
    fn default() -> Self {
        Self {
            k: 100,
            n_causal: 1,
            g_u2: 0.3,
            h_u2: 0.3,
            h_m2: 0.2,
            g_g2: 0.3,
            d: 3,
            window_width: 20,
        }
    }
}

impl ConfoundedSettings {
    pub fn to_config(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            k: self.k,
            n_causal: self.n_causal,
            d: self.d,
            g_g2: self.g_g2,
            h_m2: self.h_m2,
            g_u2: self.g_u2,
            h_u2: self.h_u2,
            missing_frac: 0.0,
            variance_model: VarianceModel::Symmetric,
            pleiotropy: Pleiotropy::None,
            gene_windows: None,
            window_width: self.window_width,
            seed,
        }
    }
}

pub fn scenario_confounded<R: Rng + ?Sized>(
    panel: &GenotypePanel,
    settings: &ConfoundedSettings,
    rng: &mut R,
) -> Result<ScenarioData> {
    simulate_scenario(panel, &settings.to_config(0), rng)
}

/// Synthetic reference panel: per-block AR(1) standard normals with lag-one
/// correlation `rho`, standardized. Blocks are independent.
pub fn synthetic_panel<R: Rng + ?Sized>(
    n: usize,
    block_sizes: &[usize],
    rho: f64,
    rng: &mut R,
) -> Result<GenotypePanel> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err(Error::ConfigInvalid(format!("rho = {rho} outside (-1, 1)")));
    }
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::ConfigInvalid("block sizes must be positive".into()));
    }
    let p: usize = block_sizes.iter().sum();
    let innov = (1.0 - rho * rho).sqrt();
    let mut raw = DMatrix::zeros(n, p);
    let mut blocks = Vec::with_capacity(block_sizes.len());
    let mut start = 0;
    for &size in block_sizes {
        for i in 0..n {
            let mut prev: f64 = rng.sample(StandardNormal);
            raw[(i, start)] = prev;
            for j in 1..size {
                let e: f64 = rng.sample(StandardNormal);
                prev = rho * prev + innov * e;
                raw[(i, start + j)] = prev;
            }
        }
        blocks.push((start, start + size));
        start += size;
    }
    standardize(&raw)?.with_blocks(blocks)
}

/// One-gene, one-SNP model used to contrast the two variance models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrailParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau2: f64,
    pub sigma2: f64,
    pub model: VarianceModel,
}

/// Draws one data set and returns `(mediated, direct)` estimates.
///
/// `mediated = α·β̂` where `β̂` regresses `y` on the genetic expression
/// `μ = xα` (the eQTL effect treated as known); `direct = xᵀy / xᵀx`.
pub fn simulate_trail_estimates<R: Rng + ?Sized>(params: &TrailParams, rng: &mut R) -> (f64, f64) {
    let n = params.n;
    let mut x = normal_vec(n, 1.0, rng);
    rescale_to_variance(&mut x, 1.0);
    let delta = normal_vec(n, params.tau2.sqrt(), rng);
    let eps = normal_vec(n, params.sigma2.sqrt(), rng);
    let mu = &x * params.alpha;
    let mediator = match params.model {
        VarianceModel::Symmetric => mu.clone(),
        VarianceModel::Asymmetric => &mu + &delta,
    };
    let y = &mediator * params.beta + &x * params.gamma + eps;
    let beta_hat = mu.dot(&y) / mu.norm_squared();
    let direct = x.dot(&y) / x.norm_squared();
    (params.alpha * beta_hat, direct)
}
