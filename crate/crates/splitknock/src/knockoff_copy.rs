//! Augmented design on the second data half and the knockoff copy matrix.
//!
//! The split objective on (X2, y2) is a partially penalized least squares
//! problem in the stacked variables, with design blocks
//!
//! ```text
//! A_beta = [ X2/sqrt(n2) ]   A_gamma = [ 0          ]   y_tilde = [ y2/sqrt(n2) ]
//!          [ D/sqrt(nu)  ]             [ -I/sqrt(nu)]             [ 0           ]
//! ```
//!
//! The copy A~ reproduces the Gram structure of A_gamma except for a
//! diag(s) discount against the original columns, which is what makes the
//! sign of each W statistic a fair coin for nulls.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, LinearTransform};
use crate::numerics::{min_eigenvalue, orthonormal_complement, psd_sqrt, SpdFactor, SymMatrix};

/// Stacked design blocks on the second half.
#[derive(Debug, Clone)]
pub struct AugmentedDesign {
    pub a_beta: DMatrix<f64>,
    pub a_gamma: DMatrix<f64>,
    pub y_tilde: DVector<f64>,
    pub n2: usize,
    pub m: usize,
    pub p: usize,
    pub nu: f64,
}

impl AugmentedDesign {
    /// Top block of A_beta rescaled back to X2.
    pub fn x2(&self) -> DMatrix<f64> {
        let scale = (self.n2 as f64).sqrt();
        let mut x2 = self.a_beta.view((0, 0), (self.n2, self.p)).into_owned();
        x2 *= scale;
        x2
    }
}

/// The copy matrix with the s vector that produced it and the Schur
/// complement it was derived from.
#[derive(Debug, Clone)]
pub struct KnockoffCopy {
    pub a_tilde: DMatrix<f64>,
    pub s: DVector<f64>,
    pub c_nu: SymMatrix,
}

pub fn build_augmented(
    dataset2: &Dataset,
    transform: &LinearTransform,
    nu: f64,
) -> Result<AugmentedDesign> {
    if transform.p() != dataset2.p() {
        return Err(Error::DimensionMismatch(format!(
            "transform expects p = {}, dataset has p = {}",
            transform.p(),
            dataset2.p()
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nu must be positive, got {nu}"
        )));
    }
    let (n2, m, p) = (dataset2.n(), transform.m(), transform.p());
    let root_n2 = (n2 as f64).sqrt();
    let root_nu = nu.sqrt();

    let mut a_beta = DMatrix::zeros(n2 + m, p);
    a_beta
        .view_mut((0, 0), (n2, p))
        .copy_from(&(dataset2.x() / root_n2));
    a_beta
        .view_mut((n2, 0), (m, p))
        .copy_from(&(transform.matrix() / root_nu));

    let mut a_gamma = DMatrix::zeros(n2 + m, m);
    for i in 0..m {
        a_gamma[(n2 + i, i)] = -1.0 / root_nu;
    }

    let mut y_tilde = DVector::zeros(n2 + m);
    y_tilde
        .rows_mut(0, n2)
        .copy_from(&(dataset2.y() / root_n2));

    Ok(AugmentedDesign {
        a_beta,
        a_gamma,
        y_tilde,
        n2,
        m,
        p,
        nu,
    })
}

/// Schur complement C_nu = I/nu - D (X2^T X2/n2 + D^T D/nu)^-1 D^T / nu^2,
/// computed from the augmented blocks.
pub fn compute_c_nu(aug: &AugmentedDesign) -> Result<SymMatrix> {
    let sigma_bb = SymMatrix::new(aug.a_beta.tr_mul(&aug.a_beta))?;
    let factor = SpdFactor::new(&sigma_bb)
        .map_err(|_| Error::NotPositiveDefinite("Sigma_beta_beta is singular".into()))?;
    let sigma_bg = aug.a_beta.tr_mul(&aug.a_gamma);
    let solved = factor.solve_mat(&sigma_bg);
    let sigma_gg = aug.a_gamma.tr_mul(&aug.a_gamma);
    SymMatrix::new(sigma_gg - sigma_bg.tr_mul(&solved))
}

/// Equi-correlated rule: every entry is min(2 lambda_min(C), 1/nu), clamped
/// at zero when C touches the PSD boundary.
pub fn s_equicorrelated(c: &SymMatrix, nu: f64) -> Result<DVector<f64>> {
    let min_eig = min_eigenvalue(c)?;
    let tol = 1e-8 * c.as_matrix().norm().max(1.0);
    if min_eig < -tol {
        return Err(Error::NotPositiveSemidefinite { min_eig, tol });
    }
    let value = (2.0 * min_eig).max(0.0).min(1.0 / nu);
    Ok(DVector::from_element(c.dim(), value))
}

/// Builds the copy matrix for a feasible s. Deterministic for fixed inputs.
pub fn construct_copy(aug: &AugmentedDesign, s: &DVector<f64>) -> Result<KnockoffCopy> {
    if s.len() != aug.m {
        return Err(Error::DimensionMismatch(format!(
            "s has {} entries, m = {}",
            s.len(),
            aug.m
        )));
    }
    if aug.n2 < aug.m + aug.p {
        return Err(Error::InsufficientSamples {
            n2: aug.n2,
            m: aug.m,
            p: aug.p,
        });
    }
    let x2 = aug.x2();
    if SpdFactor::new(&SymMatrix::new(x2.tr_mul(&x2))?).is_err() {
        return Err(Error::NotPositiveDefinite("X2^T X2 is singular".into()));
    }
    if let Some(bad) = s.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::InfeasibleS(format!("negative or non-finite entry {bad}")));
    }
    let c_nu = compute_c_nu(aug)?;

    if s.iter().all(|&v| v == 0.0) {
        // Degenerate copy: the knockoffs coincide with the originals.
        return Ok(KnockoffCopy {
            a_tilde: aug.a_gamma.clone(),
            s: s.clone(),
            c_nu,
        });
    }

    // Feasibility: 2C - diag(s) must stay PSD (up to rounding).
    let mut feas = c_nu.as_matrix() * 2.0;
    for i in 0..aug.m {
        feas[(i, i)] -= s[i];
    }
    let feas = SymMatrix::new(feas)?;
    let feas_min = min_eigenvalue(&feas)?;
    let tol = 1e-8 * c_nu.as_matrix().norm().max(1.0);
    if feas_min < -tol {
        return Err(Error::InfeasibleS(format!(
            "2C - diag(s) has eigenvalue {feas_min:.3e}"
        )));
    }

    let c_factor = SpdFactor::new(&c_nu).map_err(|_| {
        Error::InfeasibleS("C_nu is singular but s is nonzero".into())
    })?;
    let diag_s = DMatrix::from_diagonal(s);
    let c_inv_s = c_factor.solve_mat(&diag_s);

    // A_gamma (I - C^-1 diag(s))
    let mut mix = -&c_inv_s;
    for i in 0..aug.m {
        mix[(i, i)] += 1.0;
    }
    let term_gamma = &aug.a_gamma * mix;

    // A_beta Sigma_bb^-1 Sigma_bg C^-1 diag(s)
    let sigma_bb = SymMatrix::new(aug.a_beta.tr_mul(&aug.a_beta))?;
    let bb_factor = SpdFactor::new(&sigma_bb)?;
    let sigma_bg = aug.a_beta.tr_mul(&aug.a_gamma);
    let term_beta = &aug.a_beta * (bb_factor.solve_mat(&sigma_bg) * &c_inv_s);

    // U~ K with K^T K = 2 diag(s) - diag(s) C^-1 diag(s)
    let target = SymMatrix::new(&diag_s * 2.0 - &diag_s * &c_inv_s)?;
    let k = psd_sqrt(&target)?;
    let basis = {
        let mut b = DMatrix::zeros(aug.n2 + aug.m, aug.p + aug.m);
        b.view_mut((0, 0), (aug.n2 + aug.m, aug.p)).copy_from(&aug.a_beta);
        b.view_mut((0, aug.p), (aug.n2 + aug.m, aug.m))
            .copy_from(&aug.a_gamma);
        b
    };
    let u = orthonormal_complement(&basis, aug.m)?;

    Ok(KnockoffCopy {
        a_tilde: term_gamma + term_beta + u * k,
        s: s.clone(),
        c_nu,
    })
}

/// zeta = A~^T y_tilde; the bottom block of y_tilde is zero, so this equals
/// the top block of the copy applied to y2 / sqrt(n2).
pub fn compute_zeta(copy: &KnockoffCopy, aug: &AugmentedDesign) -> Result<DVector<f64>> {
    if copy.a_tilde.nrows() != aug.y_tilde.len() {
        return Err(Error::DimensionMismatch(format!(
            "copy has {} rows, y_tilde has {}",
            copy.a_tilde.nrows(),
            aug.y_tilde.len()
        )));
    }
    Ok(copy.a_tilde.tr_mul(&aug.y_tilde))
}

/// The six copy diagnostics: the three Gram conditions and the three
/// structural identities of the block decomposition, as relative Frobenius
/// residuals (scaled by max(1, ||expected||)).
#[derive(Debug, Clone, Copy)]
pub struct CopyResiduals {
    pub gram_copy: f64,
    pub gram_cross_beta: f64,
    pub gram_cross_gamma: f64,
    pub bottom_block: f64,
    pub converts_x2: f64,
    pub top_orthogonality: f64,
}

impl CopyResiduals {
    pub fn max(&self) -> f64 {
        self.gram_copy
            .max(self.gram_cross_beta)
            .max(self.gram_cross_gamma)
            .max(self.bottom_block)
            .max(self.converts_x2)
            .max(self.top_orthogonality)
    }
}

fn rel(delta: f64, scale: f64) -> f64 {
    delta / scale.max(1.0)
}

pub fn copy_residuals(aug: &AugmentedDesign, copy: &KnockoffCopy) -> CopyResiduals {
    let at = &copy.a_tilde;
    let s = &copy.s;
    let m = aug.m;
    let nu = aug.nu;

    let gg = aug.a_gamma.tr_mul(&aug.a_gamma);
    let gram_copy = rel((at.tr_mul(at) - &gg).norm(), gg.norm());

    let bg = aug.a_beta.tr_mul(&aug.a_gamma);
    let gram_cross_beta = rel((aug.a_beta.tr_mul(at) - &bg).norm(), bg.norm());

    let mut discounted = gg.clone();
    for i in 0..m {
        discounted[(i, i)] -= s[i];
    }
    let gram_cross_gamma = rel(
        (aug.a_gamma.tr_mul(at) - &discounted).norm(),
        discounted.norm(),
    );

    let top = at.view((0, 0), (aug.n2, m));
    let bottom = at.view((aug.n2, 0), (m, m));

    let mut expected_bottom = DMatrix::zeros(m, m);
    for i in 0..m {
        expected_bottom[(i, i)] = -1.0 / nu.sqrt() + nu.sqrt() * s[i];
    }
    let bottom_block = rel((bottom - &expected_bottom).norm(), expected_bottom.norm());

    let x2 = aug.x2();
    let d = {
        // D recovered from the bottom block of A_beta.
        let mut d = aug.a_beta.view((aug.n2, 0), (m, aug.p)).into_owned();
        d *= nu.sqrt();
        d
    };
    let mut expected_cross = DMatrix::zeros(m, aug.p);
    let root_n2 = (aug.n2 as f64).sqrt();
    for i in 0..m {
        for j in 0..aug.p {
            expected_cross[(i, j)] = -root_n2 * s[i] * d[(i, j)];
        }
    }
    let converts_x2 = rel((top.tr_mul(&x2) - &expected_cross).norm(), expected_cross.norm());

    let mut expected_top_gram = DMatrix::zeros(m, m);
    for i in 0..m {
        expected_top_gram[(i, i)] = s[i] * (2.0 - nu * s[i]);
    }
    let top_orthogonality = rel(
        (top.tr_mul(&top) - &expected_top_gram).norm(),
        expected_top_gram.norm(),
    );

    CopyResiduals {
        gram_copy,
        gram_cross_beta,
        gram_cross_gamma,
        bottom_block,
        converts_x2,
        top_orthogonality,
    }
}
