//! Independent oracles for the acceptance suite. Everything here solves the
//! same optimization problems as the library but by a different route
//! (proximal gradient with power-iterated step sizes), so agreement is
//! meaningful.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Proximal-gradient solver for the joint split objective
/// (1/(2n)) ||y - X b||^2 + (1/(2 nu)) ||D b - g||^2 + lambda ||g||_1.
pub struct IstaSplit {
    x: DMatrix<f64>,
    y: DVector<f64>,
    d: DMatrix<f64>,
    nu: f64,
    n: f64,
    step: f64,
}

impl IstaSplit {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, d: DMatrix<f64>, nu: f64) -> Self {
        let n = x.nrows() as f64;
        let p = x.ncols();
        let m = d.nrows();
        // Power iteration for the Lipschitz constant of the joint gradient.
        let mut vb = DVector::from_element(p, 1.0);
        let mut vg = DVector::from_element(m, 1.0);
        let mut lip = 1.0;
        for _ in 0..300 {
            let hb = x.tr_mul(&(&x * &vb)) / n + d.tr_mul(&(&d * &vb - &vg)) / nu;
            let hg = (&vg - &d * &vb) / nu;
            let norm = (hb.norm_squared() + hg.norm_squared()).sqrt();
            if norm == 0.0 {
                break;
            }
            vb = hb / norm;
            vg = hg / norm;
            lip = norm;
        }
        Self {
            x,
            y,
            d,
            nu,
            n,
            step: 1.0 / (lip * 1.01),
        }
    }

    pub fn objective(&self, beta: &DVector<f64>, gamma: &DVector<f64>, lambda: f64) -> f64 {
        let fit = (&self.y - &self.x * beta).norm_squared() / (2.0 * self.n);
        let gap = (&self.d * beta - gamma).norm_squared() / (2.0 * self.nu);
        fit + gap + lambda * gamma.iter().map(|g| g.abs()).sum::<f64>()
    }

    /// KKT residual of a candidate pair, written independently of the
    /// library: stationarity in beta plus the subgradient condition on gamma.
    pub fn kkt_residual(&self, beta: &DVector<f64>, gamma: &DVector<f64>, lambda: f64) -> f64 {
        let d_beta = &self.d * beta;
        let grad_beta = self.x.tr_mul(&(&self.x * beta - &self.y)) / self.n
            + self.d.tr_mul(&(&d_beta - gamma)) / self.nu;
        let scale = 1.0 + (self.x.tr_mul(&self.y) / self.n).abs().max();
        let stationarity = grad_beta.abs().max() / scale;
        let mut subgrad = 0.0f64;
        for i in 0..gamma.len() {
            let rho = (d_beta[i] - gamma[i]) / (lambda * self.nu);
            let v = if gamma[i] != 0.0 {
                (rho - gamma[i].signum()).abs()
            } else {
                (rho.abs() - 1.0).max(0.0)
            };
            subgrad = subgrad.max(v);
        }
        stationarity.max(subgrad)
    }

    /// Runs to the requested KKT tolerance, warm started from (beta, gamma).
    pub fn solve(
        &self,
        lambda: f64,
        beta: &mut DVector<f64>,
        gamma: &mut DVector<f64>,
        tol: f64,
        max_iter: usize,
    ) {
        for it in 0..max_iter {
            let d_beta = &self.d * &*beta;
            let grad_beta = self.x.tr_mul(&(&self.x * &*beta - &self.y)) / self.n
                + self.d.tr_mul(&(&d_beta - &*gamma)) / self.nu;
            let grad_gamma = (&*gamma - &d_beta) / self.nu;
            *beta -= self.step * grad_beta;
            let threshold = self.step * lambda;
            for i in 0..gamma.len() {
                let v = gamma[i] - self.step * grad_gamma[i];
                gamma[i] = soft(v, threshold);
            }
            if it % 64 == 63 && self.kkt_residual(beta, gamma, lambda) <= tol {
                return;
            }
        }
    }
}

/// Proximal-gradient solver for (1/2) ||r - A g||^2 + lambda ||g||_1, the
/// form of the two significance-stage problems on the augmented design.
pub struct IstaLasso {
    a: DMatrix<f64>,
    step: f64,
}

impl IstaLasso {
    pub fn new(a: DMatrix<f64>) -> Self {
        let m = a.ncols();
        let mut v = DVector::from_element(m, 1.0);
        let mut lip = 1.0;
        for _ in 0..300 {
            let h = a.tr_mul(&(&a * &v));
            let norm = h.norm();
            if norm == 0.0 {
                break;
            }
            v = h / norm;
            lip = norm;
        }
        Self {
            a,
            step: 1.0 / (lip * 1.01),
        }
    }

    pub fn solve(&self, r: &DVector<f64>, lambda: f64, gamma: &mut DVector<f64>, iters: usize) {
        let threshold = self.step * lambda;
        for _ in 0..iters {
            let grad = self.a.tr_mul(&(&self.a * &*gamma - r));
            let mut change = 0.0f64;
            for i in 0..gamma.len() {
                let v = soft(gamma[i] - self.step * grad[i], threshold);
                change = change.max((v - gamma[i]).abs());
                gamma[i] = v;
            }
            if change <= 1e-13 {
                return;
            }
        }
    }
}

pub fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// One pass/fail line per acceptance criterion.
pub fn verdict(number: usize, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {number} ({name}): {status} - {detail}");
    assert!(pass, "acceptance criterion {number} failed: {detail}");
}
