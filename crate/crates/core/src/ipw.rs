//! Stabilized inverse-probability-weighted least squares and its sandwich variance,
//! plus the masked-OLS branch for (nearly) complete features.

use crate::error::{Error, Result};
use crate::linalg;
use crate::stats;
use nalgebra::{DMatrix, DVector};

/// Largest acceptable condition number of `ZᵀŴZ`.
pub const MAX_WEIGHTED_COND: f64 = 1e12;
const LEVERAGE_GAP_FLOOR: f64 = 1e-8;

/// Weighted fit of one feature.
#[derive(Debug, Clone)]
pub struct WeightedFit {
    pub eta_hat: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub leverage: Vec<f64>,
    pub residuals: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

impl IpwWeights {
    /// Kish effective sample size of the stabilized weights `ŵγ̂`.
    pub fn effective_sample_size(&self) -> f64 {
        let (mut s, mut s2) = (0.0, 0.0);
        for (w, g) in self.w_hat.iter().zip(&self.gamma_hat) {
            let v = w * g;
            s += v;
            s2 += v * v;
        }
        if s2 > 0.0 { s * s / s2 } else { 0.0 }
    }
}

/// IPW inputs of one feature, all of length n and zero at missing cells except `gamma_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpwWeights {
    pub w_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

impl IpwWeights {
    /// Diagonal of `Ŵ`, i.e. `ŵ γ̂`.
    pub fn design_weights(&self) -> Vec<f64> {
        self.w_hat.iter().zip(&self.gamma_hat).map(|(a, b)| a * b).collect()
    }
}

/// `γ̂`: logistic regression of the observation indicators on `(1 | u1 | u2)`.
/// Constant labels give `γ̂ ≡ mean(r)`.
pub fn stabilization_probabilities(r: &[bool], u1: &[f64], u2: &[f64]) -> Vec<f64> {
    let n = r.len();
    let labels: Vec<f64> = r.iter().map(|&v| v as u8 as f64).collect();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => u1[i],
        _ => u2[i],
    });
    match stats::logistic_fit(&labels, &design) {
        Ok(fit) => fit.probabilities,
        Err(_) => {
            let m = stats::mean(&labels);
            vec![m; n]
        }
    }
}

fn weighted_gram(z: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, q) = z.shape();
    let mut a = DMatrix::zeros(q, q);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..q {
            let zij = z[(i, j)] * w[i];
            for k in j..q {
                a[(j, k)] += zij * z[(i, k)];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    a
}

fn weighted_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = linalg::condition_number_sym(a);
    if !(cond < MAX_WEIGHTED_COND) {
        return Err(Error::SingularWeightedDesign(cond));
    }
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularWeightedDesign(cond))
}

/// `η̂ = (ZᵀŴZ)⁻¹ ZᵀŴy` with `Ŵ = diag(ŵ γ̂)`; cells with zero weight never touch `y`.
pub fn ipw_point(y: &[f64], z: &DMatrix<f64>, w_hat: &[f64], gamma_hat: &[f64]) -> Result<DVector<f64>> {
    let w: Vec<f64> = w_hat.iter().zip(gamma_hat).map(|(a, b)| a * b).collect();
    let inv = weighted_inverse(&weighted_gram(z, &w))?;
    Ok(&inv * weighted_rhs(z, &w, y))
}

fn weighted_rhs(z: &DMatrix<f64>, w: &[f64], y: &[f64]) -> DVector<f64> {
    let (n, q) = z.shape();
    let mut b = DVector::zeros(q);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..q {
            b[j] += z[(i, j)] * w[i] * y[i];
        }
    }
    b
}

/// Point estimate and the leverage-corrected sandwich
/// `A⁻¹ {Σ (1 − ĥ_i)⁻² γ̂_i² v̂_i ê_i² z_i z_iᵀ} A⁻¹` with `A = ZᵀŴZ`.
pub fn ipw_fit(
    y: &[f64],
    z: &DMatrix<f64>,
    w_hat: &[f64],
    v_hat: &[f64],
    gamma_hat: &[f64],
) -> Result<WeightedFit> {
    let (n, q) = z.shape();
    let w: Vec<f64> = w_hat.iter().zip(gamma_hat).map(|(a, b)| a * b).collect();
    let a_inv = weighted_inverse(&weighted_gram(z, &w))?;
    let eta = &a_inv * weighted_rhs(z, &w, y);
    let mut leverage = vec![0.0; n];
    let mut residuals = vec![0.0; n];
    let mut middle = DMatrix::zeros(q, q);
    let mut capped = 0usize;
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let zi = z.row(i).transpose();
        let h = w[i] * zi.dot(&(&a_inv * &zi));
        let e = y[i] - zi.dot(&eta);
        leverage[i] = h;
        residuals[i] = e;
        let mut gap = 1.0 - h;
        if gap < LEVERAGE_GAP_FLOOR {
            gap = LEVERAGE_GAP_FLOOR;
            capped += 1;
        }
        let c = gamma_hat[i] * gamma_hat[i] * v_hat[i] * e * e / (gap * gap);
        middle += &zi * zi.transpose() * c;
    }
    if capped > 0 {
        log::warn!("{capped} cells with leverage near 1; correction capped");
    }
    let cov = &a_inv * middle * &a_inv;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(WeightedFit {
        eta_hat: eta,
        covariance: cov,
        leverage,
        residuals,
        gamma_hat: gamma_hat.to_vec(),
    })
}

/// Covariance part of [`ipw_fit`].
pub fn ipw_variance(
    y: &[f64],
    z: &DMatrix<f64>,
    w_hat: &[f64],
    v_hat: &[f64],
    gamma_hat: &[f64],
) -> Result<DMatrix<f64>> {
    Ok(ipw_fit(y, z, w_hat, v_hat, gamma_hat)?.covariance)
}

/// Masked OLS with the homoskedastic variance
/// `‖R(y − Zη̂)‖² / (Tr R − q) · (ZᵀRZ)⁻¹`.
pub fn ols_complete(y: &[f64], z: &DMatrix<f64>, mask: &[bool]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = z.ncols();
    let r: Vec<f64> = mask.iter().map(|&m| m as u8 as f64).collect();
    let tr = mask.iter().filter(|&&m| m).count();
    if tr <= q {
        return Err(Error::InsufficientData(format!("{tr} observed cells for {q} coefficients")));
    }
    let gram = weighted_gram(z, &r);
    let inv = stats::gram_inverse(&gram)?;
    let eta = &inv * weighted_rhs(z, &r, y);
    let rss: f64 = (0..y.len())
        .filter(|&i| mask[i])
        .map(|i| {
            let e = y[i] - z.row(i).transpose().dot(&eta);
            e * e
        })
        .sum();
    let s2 = rss / (tr - q) as f64;
    Ok((eta, inv * s2))
}
