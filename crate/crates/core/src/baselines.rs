//! Gene-level reference statistics computed in whitened eigen coordinates
//! (`sTWAS`, IVW, MR-Egger) or from observed individual-level data (`oTWAS`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::EigenLD;
use crate::sumstats::CombinedZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Stwas,
    Ivw,
    Egger,
    Otwas,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Stwas => "stwas",
            BaselineMethod::Ivw => "ivw",
            BaselineMethod::Egger => "egger",
            BaselineMethod::Otwas => "otwas",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub gene_id: String,
    pub statistic: f64,
    pub sign: i8,
    pub method: BaselineMethod,
}

impl BaselineScore {
    fn new(statistic: f64, method: BaselineMethod) -> Result<Self> {
        if !statistic.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "{} statistic is not finite",
                method.name()
            )));
        }
        Ok(Self {
            gene_id: String::new(),
            statistic,
            sign: if statistic < 0.0 { -1 } else { 1 },
            method,
        })
    }

    pub fn with_gene(mut self, gene_id: impl Into<String>) -> Self {
        self.gene_id = gene_id.into();
        self
    }
}

fn check_pair(eta_eqtl: &DVector<f64>, eta_gwas: &DVector<f64>) -> Result<f64> {
    if eta_eqtl.len() != eta_gwas.len() {
        return Err(Error::ShapeMismatch(format!(
            "eqtl has {} coordinates, gwas {}",
            eta_eqtl.len(),
            eta_gwas.len()
        )));
    }
    let ee = eta_eqtl.norm_squared();
    if ee == 0.0 {
        return Err(Error::ZeroInstrument);
    }
    Ok(ee)
}

/// `T = η_eᵀ η_g / ‖η_e‖`.
pub fn stwas(eta_eqtl: &DVector<f64>, eta_gwas: &DVector<f64>) -> Result<BaselineScore> {
    let ee = check_pair(eta_eqtl, eta_gwas)?;
    BaselineScore::new(eta_eqtl.dot(eta_gwas) / ee.sqrt(), BaselineMethod::Stwas)
}

/// Inverse-variance weighted estimate with multiplicative random effects:
/// `T = β̂ / (se_fixed · max{σ̂, 1})` where `se_fixed = 1 / ‖η_e‖`.
pub fn ivw(eta_eqtl: &DVector<f64>, eta_gwas: &DVector<f64>) -> Result<BaselineScore> {
    let ee = check_pair(eta_eqtl, eta_gwas)?;
    let beta = eta_eqtl.dot(eta_gwas) / ee;
    let rss = (eta_gwas - eta_eqtl * beta).norm_squared();
    let sigma = (rss / eta_gwas.len() as f64).sqrt();
    BaselineScore::new(beta * ee.sqrt() / sigma.max(1.0), BaselineMethod::Ivw)
}

/// Least-squares fit of `η_g ~ a + η_e b`; returns `(a, b, σ̂, Σ(η_e − η̄_e)²)`.
pub fn egger_fit(eta_eqtl: &DVector<f64>, eta_gwas: &DVector<f64>) -> Result<(f64, f64, f64, f64)> {
    check_pair(eta_eqtl, eta_gwas)?;
    let r = eta_eqtl.len();
    if r < 3 {
        return Err(Error::DegenerateDesign(format!(
            "intercept model needs at least 3 coordinates, got {r}"
        )));
    }
    let me = eta_eqtl.mean();
    let mg = eta_gwas.mean();
    let sxx: f64 = eta_eqtl.iter().map(|e| (e - me).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("instrument is constant".into()));
    }
    let sxy: f64 = eta_eqtl
        .iter()
        .zip(eta_gwas.iter())
        .map(|(e, g)| (e - me) * (g - mg))
        .sum();
    let slope = sxy / sxx;
    let intercept = mg - slope * me;
    let rss: f64 = eta_eqtl
        .iter()
        .zip(eta_gwas.iter())
        .map(|(e, g)| (g - intercept - slope * e).powi(2))
        .sum();
    Ok((intercept, slope, (rss / r as f64).sqrt(), sxx))
}

/// MR-Egger slope statistic with the same random-effects guard as [`ivw`].
pub fn egger(eta_eqtl: &DVector<f64>, eta_gwas: &DVector<f64>) -> Result<BaselineScore> {
    let (_, slope, sigma, sxx) = egger_fit(eta_eqtl, eta_gwas)?;
    BaselineScore::new(slope * sxx.sqrt() / sigma.max(1.0), BaselineMethod::Egger)
}

/// Pearson correlation on the t scale, `ρ √((n−2)/(1−ρ²))`.
pub fn otwas(m: &DVector<f64>, y: &DVector<f64>) -> Result<BaselineScore> {
    let n = m.len();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "expression has {n} samples, phenotype {}",
            y.len()
        )));
    }
    if n < 3 {
        return Err(Error::ShapeMismatch(format!("need at least 3 samples, got {n}")));
    }
    let mm = m.mean();
    let my = y.mean();
    let smm: f64 = m.iter().map(|v| (v - mm).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if smm == 0.0 {
        return Err(Error::ZeroVariance("expression".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("phenotype".into()));
    }
    let smy: f64 = m.iter().zip(y.iter()).map(|(a, b)| (a - mm) * (b - my)).sum();
    let rho = (smy / (smm * syy).sqrt()).clamp(-1.0, 1.0);
    let denom = (1.0 - rho * rho).max(f64::EPSILON);
    BaselineScore::new(rho * ((n - 2) as f64 / denom).sqrt(), BaselineMethod::Otwas)
}

/// Scores every gene of `combined` with one summary-statistic method.
pub fn score_summary(method: BaselineMethod, combined: &CombinedZ, eig: &EigenLD) -> Result<Vec<BaselineScore>> {
    let f = match method {
        BaselineMethod::Stwas => stwas,
        BaselineMethod::Ivw => ivw,
        BaselineMethod::Egger => egger,
        BaselineMethod::Otwas => {
            return Err(Error::ConfigInvalid(
                "otwas needs observed expression and phenotype".into(),
            ))
        }
    };
    let eta_g = eig.rotate_to_eigen(&combined.gwas.z)?;
    let eta_e = eig.rotate_matrix(&combined.eqtl_matrix())?;
    combined
        .eqtl
        .iter()
        .enumerate()
        .map(|(k, s)| Ok(f(&eta_e.column(k).into_owned(), &eta_g)?.with_gene(s.trait_id.clone())))
        .collect()
}

/// Scores observed expression columns against the observed phenotype.
pub fn score_observed(expression: &DMatrix<f64>, phenotype: &DVector<f64>, gene_ids: &[String]) -> Result<Vec<BaselineScore>> {
    if expression.ncols() != gene_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} expression columns for {} genes",
            expression.ncols(),
            gene_ids.len()
        )));
    }
    gene_ids
        .iter()
        .enumerate()
        .map(|(k, id)| Ok(otwas(&expression.column(k).into_owned(), phenotype)?.with_gene(id.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn stwas_identities() {
        let e = v(&[1.0, 2.0, 2.0]);
        assert_abs_diff_eq!(stwas(&e, &e).unwrap().statistic, 3.0, epsilon = 1e-12);
        let g = v(&[2.0, -1.0, 0.0]);
        assert_abs_diff_eq!(stwas(&e, &g).unwrap().statistic, 0.0);
        assert!(matches!(stwas(&v(&[0.0, 0.0, 0.0]), &g), Err(Error::ZeroInstrument)));
    }

    #[test]
    fn ivw_guard_branch() {
        // near-perfect fit: σ̂ < 1, guard caps the statistic at β̂‖η_e‖
        let e = v(&[1.0, 2.0, 3.0, 4.0]);
        let g = v(&[2.01, 3.99, 6.0, 8.0]);
        let s = ivw(&e, &g).unwrap();
        let beta = e.dot(&g) / e.norm_squared();
        let sigma = ((&g - &e * beta).norm_squared() / 4.0).sqrt();
        assert!(sigma < 1.0);
        let unguarded = beta / (sigma / e.norm());
        assert_abs_diff_eq!(s.statistic, beta * e.norm(), epsilon = 1e-12);
        assert!(unguarded > s.statistic * 10.0);
    }

    #[test]
    fn egger_intercept_absorbs_constant() {
        let e = v(&[0.3, -1.2, 2.0, 0.7, -0.4]);
        let g = DVector::from_element(5, 4.0);
        let (a, b, _, _) = egger_fit(&e, &g).unwrap();
        assert_abs_diff_eq!(a, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-12);
        assert!(matches!(egger(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn otwas_signs_and_errors() {
        let y = v(&[1.0, 3.0, 2.0, 5.0, 4.0]);
        let pos = otwas(&y, &y).unwrap();
        let neg = otwas(&(-&y), &y).unwrap();
        assert_eq!(pos.sign, 1);
        assert_eq!(neg.sign, -1);
        assert!(pos.statistic.is_finite() && pos.statistic > 1e6);
        assert!(matches!(otwas(&DVector::from_element(5, 1.0), &y), Err(Error::ZeroVariance(_))));
    }
}
