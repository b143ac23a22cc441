//! Reference-panel linear algebra.
//!
//! Scaling convention: the panel `X` is stored column-standardized with the
//! population convention (`x_jᵀ x_j = n`). The decomposition is taken of the
//! scaled matrix `n^{-1/2} X = U diag(D) Vᵀ`, so the LD matrix is
//! `R = V diag(D²) Vᵀ = XᵀX / n`. [`panel_scale`] is the only place the
//! `n^{-1/2}` factor is defined; every other routine in the crate goes through
//! it or through [`EigenLD`].
//!
//! Eigen rotation uses `η = D⁻¹ Vᵀ z`, so that `z ~ N(Rθ, R)` maps to
//! `η ~ N(D Vᵀ θ, I)`. A plain `D⁻¹ V z` does not type-check for `p ≠ r`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default relative cutoff for retained singular values.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Dense `R` is only built on request up to this many SNPs.
pub const MAX_DENSE_LD: usize = 2000;

/// The `n^{-1/2}` factor relating `X` to its scaled decomposition.
pub fn panel_scale(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Column-standardized reference genotypes with LD block annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypePanel {
    values: DMatrix<f64>,
    snp_ids: Vec<String>,
    block_bounds: Vec<(usize, usize)>,
}

impl GenotypePanel {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn block_bounds(&self) -> &[(usize, usize)] {
        &self.block_bounds
    }

    pub fn with_snp_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "{} SNP ids for {} columns",
                ids.len(),
                self.p()
            )));
        }
        self.snp_ids = ids;
        Ok(self)
    }

    /// Replace the block partition. Blocks must be sorted, disjoint and cover `[0, p)`.
    pub fn with_blocks(mut self, blocks: Vec<(usize, usize)>) -> Result<Self> {
        validate_blocks(&blocks, self.p())?;
        self.block_bounds = blocks;
        Ok(self)
    }

    /// Sub-panel over a contiguous SNP range. Columns stay standardized.
    pub fn select_range(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.p() {
            return Err(Error::ShapeMismatch(format!(
                "range [{start}, {end}) outside panel of {} SNPs",
                self.p()
            )));
        }
        let values = self.values.columns(start, end - start).into_owned();
        let snp_ids = self.snp_ids[start..end].to_vec();
        let blocks = self
            .block_bounds
            .iter()
            .filter_map(|&(s, e)| {
                let s2 = s.max(start);
                let e2 = e.min(end);
                (s2 < e2).then(|| (s2 - start, e2 - start))
            })
            .collect();
        Ok(Self {
            values,
            snp_ids,
            block_bounds: blocks,
        })
    }

    /// Sub-panel spanning blocks `first..last` (exclusive) of this panel.
    pub fn select_blocks(&self, first: usize, last: usize) -> Result<Self> {
        if first >= last || last > self.block_bounds.len() {
            return Err(Error::ShapeMismatch(format!(
                "block range {first}..{last} outside {} blocks",
                self.block_bounds.len()
            )));
        }
        self.select_range(self.block_bounds[first].0, self.block_bounds[last - 1].1)
    }

    /// Builds a panel from values that are already standardized, checking that they are.
    pub fn from_standardized(values: DMatrix<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        for j in 0..p {
            let col = values.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            if mean.abs() > 1e-8 || (var.sqrt() - 1.0).abs() > 1e-6 {
                return Err(Error::ShapeMismatch(format!(
                    "column {j} is not standardized (mean {mean:.3e}, sd {:.6})",
                    var.sqrt()
                )));
            }
        }
        Ok(Self {
            values,
            snp_ids: default_snp_ids(p),
            block_bounds: vec![(0, p)],
        })
    }
}

fn default_snp_ids(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("snp{j}")).collect()
}

pub(crate) fn validate_blocks(blocks: &[(usize, usize)], p: usize) -> Result<()> {
    let mut expected = 0;
    for &(s, e) in blocks {
        if s != expected || e <= s {
            return Err(Error::ConfigInvalid(format!(
                "blocks must be sorted, non-empty and contiguous; got ({s}, {e}) where start {expected} was expected"
            )));
        }
        expected = e;
    }
    if expected != p {
        return Err(Error::ConfigInvalid(format!(
            "blocks cover [0, {expected}) but the panel has {p} SNPs"
        )));
    }
    Ok(())
}

/// Center each column and divide by its population standard deviation.
pub fn standardize(raw: &DMatrix<f64>) -> Result<GenotypePanel> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(Error::ShapeMismatch(format!(
            "need at least 2 individuals, got {n}"
        )));
    }
    let mut values = raw.clone();
    for j in 0..p {
        let mut col = values.column_mut(j);
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n as f64).sqrt();
        let scale = raw.column(j).amax().max(1.0);
        if sd <= 1e-12 * scale {
            return Err(Error::ConstantColumn(j));
        }
        col /= sd;
    }
    Ok(GenotypePanel {
        values,
        snp_ids: default_snp_ids(p),
        block_bounds: vec![(0, p)],
    })
}

/// Truncated SVD of `n^{-1/2} X`.
#[derive(Debug, Clone)]
pub struct EigenLD {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    pub n_ref: usize,
}

/// Decompose the panel; singular values `<= tol * d_max` are dropped.
pub fn svd_panel(panel: &GenotypePanel, tol: f64) -> Result<EigenLD> {
    if !(tol > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "rank tolerance must be positive, got {tol}"
        )));
    }
    let n = panel.n();
    let scaled = panel.values() * panel_scale(n);
    let (u_full, sv, v_full) = reduced_svd(&scaled)?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let d_max = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > tol * d_max && sv[i] > 0.0)
        .collect();
    let r = kept.len();
    if r == 0 {
        return Err(Error::RankDeficient(0));
    }

    let mut u = DMatrix::zeros(n, r);
    let mut v = DMatrix::zeros(panel.p(), r);
    let mut d = DVector::zeros(r);
    for (k, &i) in kept.iter().enumerate() {
        // Deterministic sign: largest-magnitude entry of each V column is positive.
        let v_col = v_full.column(i);
        let sign = if v_col[v_col.iamax()] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(k, &(u_full.column(i) * sign));
        v.set_column(k, &(v_col * sign));
        d[k] = sv[i];
    }
    Ok(EigenLD { u, d, v, n_ref: n })
}

/// Thin SVD `A = U diag(s) Vᵀ` that stays accurate when `A` has exact zero
/// singular values: a column-pivoted QR strips the numerically null part
/// first, and the SVD runs on the full-rank remainder.
fn reduced_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let wide = a.nrows() < a.ncols();
    let tall = if wide { a.transpose() } else { a.clone() };
    let qr = tall.col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    if !r00.is_finite() {
        return Err(Error::NumericalFailure("non-finite panel values".into()));
    }
    if r00 == 0.0 {
        return Err(Error::RankDeficient(0));
    }
    let qr_tol = f64::EPSILON * (a.nrows().max(a.ncols()) as f64);
    let k = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > qr_tol * r00)
        .count();
    let mut c = r.rows(0, k).into_owned();
    qr.p().inv_permute_columns(&mut c);
    let q = qr.q().columns(0, k).into_owned();
    let svd = nalgebra::linalg::SVD::try_new(c.transpose(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let w = svd.u.expect("requested U");
    let qz = q * svd.v_t.expect("requested Vᵀ").transpose();
    Ok(if wide {
        (w, svd.singular_values, qz)
    } else {
        (qz, svd.singular_values, w)
    })
}

impl EigenLD {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    /// `R_ij = Σ_k V_ik d_k² V_jk`.
    pub fn ld_matrix(&self, i: usize, j: usize) -> Result<f64> {
        let p = self.p();
        if i >= p || j >= p {
            return Err(Error::IndexOutOfRange { i, j, p });
        }
        Ok((0..self.rank())
            .map(|k| self.v[(i, k)] * self.d[k] * self.d[k] * self.v[(j, k)])
            .sum())
    }

    /// `R w` without materializing `R`.
    pub fn ld_matvec(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_p(w.len())?;
        let mut t = self.v.tr_mul(w);
        t.component_mul_assign(&self.d);
        t.component_mul_assign(&self.d);
        Ok(&self.v * t)
    }

    /// Dense `R`; refused above [`MAX_DENSE_LD`] SNPs unless `force`.
    pub fn ld_dense(&self, force: bool) -> Result<DMatrix<f64>> {
        if self.p() > MAX_DENSE_LD && !force {
            return Err(Error::ShapeMismatch(format!(
                "refusing to build a dense {p}x{p} LD matrix",
                p = self.p()
            )));
        }
        let vd = &self.v * DMatrix::from_diagonal(&self.d);
        Ok(&vd * vd.transpose())
    }

    /// `pinv(Xᵀ) Z = n^{-1/2} U D⁻¹ Vᵀ Z` (`n × q`).
    ///
    /// For `Z = Xᵀ W` this returns the projection of `W` onto `span(U)`.
    pub fn apply_pseudo_inverse_transpose(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_p(z.nrows())?;
        let mut t = self.v.tr_mul(z);
        for (k, mut row) in t.row_iter_mut().enumerate() {
            row /= self.d[k];
        }
        Ok(&self.u * t * panel_scale(self.n_ref))
    }

    /// `η = D⁻¹ Vᵀ z`.
    pub fn rotate_to_eigen(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_p(z.len())?;
        let mut eta = self.v.tr_mul(z);
        eta.component_div_assign(&self.d);
        Ok(eta)
    }

    /// Column-wise [`EigenLD::rotate_to_eigen`].
    pub fn rotate_matrix(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_p(z.nrows())?;
        let mut eta = self.v.tr_mul(z);
        for (k, mut row) in eta.row_iter_mut().enumerate() {
            row /= self.d[k];
        }
        Ok(eta)
    }

    /// Inverse of the rotation restricted to `span(V)`: `z = V D η`.
    pub fn unrotate(&self, eta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if eta.nrows() != self.rank() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for rank {}",
                eta.nrows(),
                self.rank()
            )));
        }
        let mut t = eta.clone();
        for (k, mut row) in t.row_iter_mut().enumerate() {
            row *= self.d[k];
        }
        Ok(&self.v * t)
    }

    /// Individual-space vectors from left-singular coordinates: `C = U F`.
    pub fn individual_from_eigen(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.nrows() != self.rank() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for rank {}",
                f.nrows(),
                self.rank()
            )));
        }
        Ok(&self.u * f)
    }

    /// `n^{-1/2} Xᵀ C = V D Uᵀ C`.
    pub fn z_from_individual(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if c.nrows() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} individuals",
                c.nrows(),
                self.n()
            )));
        }
        self.unrotate(&self.u.tr_mul(c))
    }

    /// One draw of `z ~ N(0, R)` via `V D ε`.
    pub fn sample_null_z<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.rank(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.v * eps.component_mul(&self.d)
    }

    fn check_p(&self, rows: usize) -> Result<()> {
        if rows != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} SNP rows, got {rows}",
                self.p()
            )));
        }
        Ok(())
    }
}

/// Largest absolute sample correlation between columns of two panels on the same individuals.
pub fn max_cross_correlation(a: &GenotypePanel, b: &GenotypePanel) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "panels have {} and {} individuals",
            a.n(),
            b.n()
        )));
    }
    let cross = a.values().tr_mul(b.values()) / a.n() as f64;
    Ok(cross.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn standardize_hand_computed_column() {
        let raw = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let panel = standardize(&raw).unwrap();
        // population sd of (0,1,2) is sqrt(2/3)
        let sd = (2.0f64 / 3.0).sqrt();
        let expected = [-1.0 / sd, 0.0, 1.0 / sd];
        for (a, b) in panel.values().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn standardize_is_fixed_point() {
        let panel = standardize(&random_matrix(20, 5, 1)).unwrap();
        let again = standardize(panel.values()).unwrap();
        assert_abs_diff_eq!(again.values(), panel.values(), epsilon = 1e-12);
    }

    #[test]
    fn constant_column_rejected() {
        let raw = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 3.0, 5.0, 5.0, 5.0]);
        assert!(matches!(standardize(&raw), Err(Error::ConstantColumn(1))));
    }

    #[test]
    fn blocks_must_partition() {
        let panel = standardize(&random_matrix(10, 6, 2)).unwrap();
        assert!(panel.clone().with_blocks(vec![(0, 3), (3, 6)]).is_ok());
        assert!(panel.clone().with_blocks(vec![(0, 3), (4, 6)]).is_err());
        assert!(panel.clone().with_blocks(vec![(0, 3)]).is_err());
        assert!(panel.with_blocks(vec![(0, 3), (3, 3), (3, 6)]).is_err());
    }

    #[test]
    fn svd_reconstructs_random_panel() {
        let panel = standardize(&random_matrix(50, 80, 3)).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        // centering removes one dimension
        assert_eq!(eig.rank(), 49);
        let recon = &eig.u * DMatrix::from_diagonal(&eig.d) * eig.v.transpose();
        let target = panel.values() * panel_scale(50);
        assert!((recon - &target).norm() / target.norm() < 1e-8);
        let utu = eig.u.tr_mul(&eig.u);
        let vtv = eig.v.tr_mul(&eig.v);
        assert_abs_diff_eq!(utu, DMatrix::identity(49, 49), epsilon = 1e-8);
        assert_abs_diff_eq!(vtv, DMatrix::identity(49, 49), epsilon = 1e-8);
        assert!(eig.d.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn orthogonal_design_gives_identity_ld() {
        // Columns of a scaled Hadamard-like design are exactly orthogonal and centered.
        let raw = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 1.0, //
                1.0, -1.0, -1.0, //
                -1.0, 1.0, -1.0, //
                -1.0, -1.0, 1.0,
            ],
        );
        let panel = standardize(&raw).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(eig.rank(), 3);
        for k in 0..3 {
            assert_abs_diff_eq!(eig.d[k], 1.0, epsilon = 1e-12);
        }
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(eig.ld_matrix(i, j).unwrap(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_snp_is_rank_deficient() {
        let mut raw = random_matrix(30, 6, 4);
        let col = raw.column(2).into_owned();
        raw.set_column(5, &col);
        let panel = standardize(&raw).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(eig.rank(), 5);
        assert_abs_diff_eq!(eig.ld_matrix(2, 5).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(eig.ld_matrix(5, 5).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn two_snp_ld_matches_sample_correlation() {
        let raw = random_matrix(40, 2, 5);
        let x0 = raw.column(0);
        let x1 = raw.column(1);
        let m0 = x0.mean();
        let m1 = x1.mean();
        let cov: f64 = x0.iter().zip(x1.iter()).map(|(a, b)| (a - m0) * (b - m1)).sum();
        let v0: f64 = x0.iter().map(|a| (a - m0).powi(2)).sum();
        let v1: f64 = x1.iter().map(|b| (b - m1).powi(2)).sum();
        let rho = cov / (v0 * v1).sqrt();
        let eig = svd_panel(&standardize(&raw).unwrap(), DEFAULT_RANK_TOL).unwrap();
        assert_abs_diff_eq!(eig.ld_matrix(0, 1).unwrap(), rho, epsilon = 1e-8);
        assert_abs_diff_eq!(eig.ld_matrix(1, 1).unwrap(), 1.0, epsilon = 1e-6);
        assert!(matches!(
            eig.ld_matrix(0, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn ld_operator_matches_dense() {
        let panel = standardize(&random_matrix(25, 15, 6)).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        let dense = eig.ld_dense(false).unwrap();
        let direct = panel.values().tr_mul(panel.values()) / 25.0;
        assert_abs_diff_eq!(dense, direct, epsilon = 1e-10);
        let w = DVector::from_fn(15, |i, _| (i as f64).sin());
        assert_abs_diff_eq!(eig.ld_matvec(&w).unwrap(), &direct * &w, epsilon = 1e-10);
    }

    #[test]
    fn pseudo_inverse_round_trip_and_annihilation() {
        let panel = standardize(&random_matrix(20, 40, 7)).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        let x = panel.values();
        // w in span(U): centered vector
        let mut w = DVector::from_fn(20, |i, _| (i as f64 * 0.7).cos());
        let mean = w.mean();
        w.add_scalar_mut(-mean);
        let z = DMatrix::from_column_slice(40, 1, (x.transpose() * &w).as_slice());
        let back = eig.apply_pseudo_inverse_transpose(&z).unwrap();
        assert_abs_diff_eq!(back.column(0).into_owned(), w, epsilon = 1e-6);

        let zero = DMatrix::zeros(40, 2);
        assert_eq!(eig.apply_pseudo_inverse_transpose(&zero).unwrap(), DMatrix::zeros(20, 2));

        // a component orthogonal to span(V) is annihilated
        let g = random_matrix(40, 1, 8);
        let proj = &eig.v * eig.v.tr_mul(&g);
        let orth = &g - &proj;
        let out = eig.apply_pseudo_inverse_transpose(&orth).unwrap();
        assert!(out.norm() < 1e-10 * orth.norm());
        let full = eig.apply_pseudo_inverse_transpose(&g).unwrap();
        let proj_out = eig.apply_pseudo_inverse_transpose(&proj).unwrap();
        assert_abs_diff_eq!(full, proj_out, epsilon = 1e-10);
        assert!(matches!(
            eig.apply_pseudo_inverse_transpose(&DMatrix::zeros(3, 1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rotation_of_unit_vector_on_orthogonal_panel() {
        let raw = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 1.0, //
                1.0, -1.0, -1.0, //
                -1.0, 1.0, -1.0, //
                -1.0, -1.0, 1.0,
            ],
        );
        let eig = svd_panel(&standardize(&raw).unwrap(), DEFAULT_RANK_TOL).unwrap();
        for j in 0..3 {
            let mut z = DVector::zeros(3);
            z[j] = 1.0;
            let eta = eig.rotate_to_eigen(&z).unwrap();
            for k in 0..3 {
                assert_abs_diff_eq!(eta[k], eig.v[(j, k)] / eig.d[k], epsilon = 1e-12);
            }
        }
        assert_eq!(
            eig.rotate_to_eigen(&DVector::zeros(3)).unwrap(),
            DVector::zeros(3)
        );
    }

    #[test]
    fn ld_is_positive_semidefinite() {
        let panel = standardize(&random_matrix(30, 60, 9)).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let w = DVector::from_fn(60, |_, _| rng.sample::<f64, _>(StandardNormal));
            assert!(w.dot(&eig.ld_matvec(&w).unwrap()) >= -1e-8);
        }
    }

    #[test]
    fn individual_and_z_maps_agree_with_direct_formula() {
        let panel = standardize(&random_matrix(15, 30, 11)).unwrap();
        let eig = svd_panel(&panel, DEFAULT_RANK_TOL).unwrap();
        let c = random_matrix(15, 2, 12);
        let direct = panel.values().transpose() * &c * panel_scale(15);
        assert_abs_diff_eq!(eig.z_from_individual(&c).unwrap(), direct, epsilon = 1e-10);
    }
}
