//! Univariate per-SNP summary statistics and the combined z-score matrix.

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::GenotypePanel;

/// Floor applied to standard errors of perfect fits.
pub const SE_FLOOR: f64 = 1e-12;

/// Per-SNP effect sizes, standard errors and z-scores for one trait.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryVector {
    pub trait_id: String,
    pub snp_ids: Vec<String>,
    pub effect: DVector<f64>,
    pub se: DVector<f64>,
    pub z: DVector<f64>,
    pub n_samples: usize,
}

impl SummaryVector {
    /// Builds a vector from effects and standard errors; `z = effect / se`.
    pub fn new(
        trait_id: impl Into<String>,
        snp_ids: Vec<String>,
        effect: DVector<f64>,
        se: DVector<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        if effect.len() != se.len() || snp_ids.len() != effect.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} effects, {} standard errors",
                snp_ids.len(),
                effect.len(),
                se.len()
            )));
        }
        if let Some(j) = se.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateRegression {
                snp: j,
                reason: format!("non-positive standard error {}", se[j]),
            });
        }
        let z = effect.component_div(&se);
        Ok(Self {
            trait_id: trait_id.into(),
            snp_ids,
            effect,
            se,
            z,
            n_samples,
        })
    }

    /// A z-only vector (unit standard errors), used for derived statistics such as projections.
    pub fn from_z(
        trait_id: impl Into<String>,
        snp_ids: Vec<String>,
        z: DVector<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        let se = DVector::from_element(z.len(), 1.0);
        Self::new(trait_id, snp_ids, z, se, n_samples)
    }

    pub fn p(&self) -> usize {
        self.z.len()
    }

    /// Diagonal of the RSS scaling matrix, `S_jj = se_j² + effect_j² / n`.
    pub fn s_diag(&self) -> DVector<f64> {
        let n = self.n_samples as f64;
        self.se
            .zip_map(&self.effect, |s, e| s * s + e * e / n)
    }
}

/// Simple regression of `y` on one standardized column, returning `(effect, se)`.
///
/// `se² = RSS / (n · xᵀx)`; a zero residual is floored at [`SE_FLOOR`].
pub fn univariate_stats(x: DVectorView<f64>, y: &DVector<f64>, n: usize) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "x has {} entries, y has {}, n = {n}",
            x.len(),
            y.len()
        )));
    }
    if n < 3 {
        return Err(Error::ShapeMismatch(format!("need n >= 3, got {n}")));
    }
    let xtx = x.norm_squared();
    if xtx == 0.0 {
        return Err(Error::DegenerateRegression {
            snp: 0,
            reason: "xᵀx = 0".into(),
        });
    }
    let effect = x.dot(y) / xtx;
    let rss: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(xi, yi)| (yi - xi * effect).powi(2))
        .sum();
    let se = (rss / (n as f64 * xtx)).sqrt().max(SE_FLOOR);
    Ok((effect, se))
}

/// Applies [`univariate_stats`] to every SNP of the panel.
pub fn summarize_trait(
    panel: &GenotypePanel,
    y: &DVector<f64>,
    trait_id: impl Into<String>,
) -> Result<SummaryVector> {
    let n = panel.n();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "outcome has {} entries for {n} individuals",
            y.len()
        )));
    }
    let mean = y.mean();
    if y.iter().all(|v| (v - mean).abs() == 0.0) {
        return Err(Error::DegenerateRegression {
            snp: 0,
            reason: "outcome has zero variance".into(),
        });
    }
    let stats: Vec<(f64, f64)> = (0..panel.p())
        .into_par_iter()
        .map(|j| {
            univariate_stats(panel.values().column(j), y, n).map_err(|e| match e {
                Error::DegenerateRegression { reason, .. } => {
                    Error::DegenerateRegression { snp: j, reason }
                }
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let effect = DVector::from_iterator(stats.len(), stats.iter().map(|s| s.0));
    let se = DVector::from_iterator(stats.len(), stats.iter().map(|s| s.1));
    SummaryVector::new(trait_id, panel.snp_ids().to_vec(), effect, se, n)
}

/// One GWAS and `K` eQTL summary vectors over the same SNPs.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedZ {
    pub gwas: SummaryVector,
    pub eqtl: Vec<SummaryVector>,
}

impl CombinedZ {
    pub fn p(&self) -> usize {
        self.gwas.p()
    }

    pub fn k(&self) -> usize {
        self.eqtl.len()
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.gwas.snp_ids
    }

    /// `p × (K+1)` z-score matrix, GWAS in column 0.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let mut cols = Vec::with_capacity(self.k() + 1);
        cols.push(self.gwas.z.clone());
        cols.extend(self.eqtl.iter().map(|s| s.z.clone()));
        DMatrix::from_columns(&cols)
    }

    /// `p × K` eQTL z-scores only.
    pub fn eqtl_matrix(&self) -> DMatrix<f64> {
        if self.eqtl.is_empty() {
            return DMatrix::zeros(self.p(), 0);
        }
        let cols: Vec<_> = self.eqtl.iter().map(|s| s.z.clone()).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn trait_ids(&self) -> Vec<String> {
        std::iter::once(self.gwas.trait_id.clone())
            .chain(self.eqtl.iter().map(|s| s.trait_id.clone()))
            .collect()
    }
}

/// Stack summary vectors; all must share `p` and SNP order.
pub fn combine(gwas: SummaryVector, eqtls: Vec<SummaryVector>) -> Result<CombinedZ> {
    for e in &eqtls {
        if e.p() != gwas.p() {
            return Err(Error::ShapeMismatch(format!(
                "eQTL '{}' has {} SNPs, GWAS has {}",
                e.trait_id,
                e.p(),
                gwas.p()
            )));
        }
        if e.snp_ids != gwas.snp_ids {
            let j = e
                .snp_ids
                .iter()
                .zip(&gwas.snp_ids)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(Error::OrderMismatch(format!(
                "eQTL '{}' differs from GWAS at row {j} ('{}' vs '{}')",
                e.trait_id, e.snp_ids[j], gwas.snp_ids[j]
            )));
        }
    }
    Ok(CombinedZ { gwas, eqtl: eqtls })
}
