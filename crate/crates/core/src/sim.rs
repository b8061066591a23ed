//! Generative model for intensity matrices with latent factors and non-random
//! missingness, used as a truth-known oracle.

use crate::data::{DesignMatrices, IntensityMatrix};
use crate::error::{Error, Result};
use crate::link::{psi_eval, Link};
use crate::linalg;
use crate::rng::{self, tag};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Eigenvalues of the latent-signal matrix in the reference design.
pub const DEFAULT_EIGENVALUES: [f64; 10] = [0.61, 0.33, 0.19, 0.14, 0.12, 0.08, 0.07, 0.05, 0.05, 0.05];
/// Probability of a zero loading, shared by every factor.
pub const LOADING_SPIKE: f64 = 0.25;
const CALIBRATION_TOL: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub mech_link: Link,
    /// `None` sets `μ_α` so that `Ψ(e^{μ_α} x)` has unit variance.
    pub mu_alpha: Option<f64>,
    pub sd_log_alpha: f64,
    pub mu_delta: f64,
    pub sd_delta: f64,
    pub mu_mean: f64,
    pub sd_mean: f64,
    /// Shape and rate of the Gamma law of `σ²_g`.
    pub sigma_shape_rate: f64,
    /// Probability that `β_g = 0`.
    pub beta_sparsity: f64,
    pub beta_sd: f64,
    /// Expected share of the variance of the interest covariate explained by `C`.
    pub confounding_r2: f64,
    pub target_eigenvalues: Vec<f64>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 600,
            p: 1200,
            k: 10,
            mech_link: Link::Logistic,
            mu_alpha: None,
            sd_log_alpha: 0.4,
            mu_delta: 16.0,
            sd_delta: 1.2,
            mu_mean: 18.0,
            sd_mean: 5.0,
            sigma_shape_rate: 0.2f64.powi(-2),
            beta_sparsity: 0.8,
            beta_sd: 0.4,
            confounding_r2: 0.075,
            target_eigenvalues: DEFAULT_EIGENVALUES.to_vec(),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n < 4 || self.n % 2 != 0 {
            return bad("n must be even and at least 4");
        }
        if self.p == 0 || self.k == 0 {
            return bad("p and k must be positive");
        }
        if self.target_eigenvalues.len() != self.k {
            return bad("target_eigenvalues must have k entries");
        }
        if self.target_eigenvalues.iter().any(|&v| !(v > 0.0)) {
            return bad("target eigenvalues must be positive");
        }
        let scales = [self.sd_log_alpha, self.sd_delta, self.sd_mean, self.sigma_shape_rate, self.beta_sd];
        if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("all scale parameters must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta_sparsity) {
            return bad("beta_sparsity must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.confounding_r2) {
            return bad("confounding_r2 must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Everything drawn while generating a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub config: SimulationConfig,
    pub mu_alpha: f64,
    /// Confounding mean shift of the first factor.
    pub a: f64,
    pub pi: Vec<f64>,
    pub tau2: Vec<f64>,
    /// R² of the interest covariate on `(1 | C)` in this dataset.
    pub realized_r2: f64,
    pub realized_eigenvalues: Vec<f64>,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub beta: Vec<f64>,
    /// n rows of K.
    pub c: Vec<Vec<f64>>,
    /// p rows of K.
    pub loadings: Vec<Vec<f64>>,
}

impl SimulationTruth {
    pub fn c_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.c)
    }

    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.loadings)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let c = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j])
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub matrix: IntensityMatrix,
    pub design: DesignMatrices,
    /// Intensities before masking, p × n.
    pub complete: DMatrix<f64>,
    pub truth: SimulationTruth,
}

/// `μ_α = ½ log Var(T)` for `T ~ Ψ`.
pub fn mu_alpha_for_unit_variance(link: Link) -> Result<f64> {
    Ok(0.5 * link.variance()?.ln())
}

/// `a` with `a²/(a² + 4) = ρ²`, the population R² of a balanced binary covariate on
/// `aX + N(0, 1)`. `ρ²` is chosen so that the expected sample R² with `k` regressors,
/// approximately `ρ² + k(1 − ρ²)/(n − 1)`, equals `r2`.
pub fn confounding_shift(r2: f64, n: usize, k: usize) -> f64 {
    let b = k as f64 / (n as f64 - 1.0);
    let rho2 = ((r2 - b) / (1.0 - b)).max(0.0);
    2.0 * (rho2 / (1.0 - rho2)).sqrt()
}

/// R² of `x` regressed on `(1 | C)`.
pub fn r_squared(x: &[f64], c: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let xm = DMatrix::from_column_slice(n, 1, x);
    let centered = linalg::project_out(&xm, &linalg::ones(n));
    let design = linalg::hstack(&[&linalg::ones(n), c]);
    let resid = linalg::project_out(&xm, &design);
    1.0 - resid.norm_squared() / centered.norm_squared()
}

/// Nonzero eigenvalues (descending) of `(n−1)⁻¹ P⊥C (p⁻¹ Σ σ⁻² ℓℓᵀ) CᵀP⊥`.
pub fn signal_spectrum(c: &DMatrix<f64>, loadings: &DMatrix<f64>, sigma2: &[f64]) -> Vec<f64> {
    let (n, k) = c.shape();
    let p = loadings.nrows();
    let cc = linalg::project_out(c, &linalg::ones(n));
    let g = cc.transpose() * &cc / (n as f64 - 1.0);
    let mut s = DMatrix::<f64>::zeros(k, k);
    for j in 0..p {
        let l = loadings.row(j).transpose();
        s.ger(1.0 / (sigma2[j] * p as f64), &l, &l, 1.0);
    }
    let Some(chol) = g.clone().cholesky() else {
        return vec![0.0; k];
    };
    let l = chol.l();
    let m = l.transpose() * s * l;
    let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

fn interest_column(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect()
}

fn draw_c(n: usize, k: usize, a: f64, x: &[f64], rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |i, j| {
        let z: f64 = StandardNormal.sample(rng);
        if j == 0 {
            a * x[i] + z
        } else {
            z
        }
    })
}

fn draw_loadings(p: usize, pi: &[f64], tau2: &[f64], rng: &mut impl Rng) -> DMatrix<f64> {
    let k = pi.len();
    let mut l = DMatrix::zeros(p, k);
    for g in 0..p {
        for j in 0..k {
            let slab = rng.random::<f64>() >= pi[j];
            let z: f64 = StandardNormal.sample(rng);
            if slab {
                l[(g, j)] = tau2[j].sqrt() * z;
            }
        }
    }
    l
}

fn draw_sigma2(p: usize, shape_rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(shape_rate, 1.0 / shape_rate).expect("positive shape");
    (0..p).map(|_| gamma.sample(rng)).collect()
}

/// Slab variances from the closed-form expectation of the signal matrix. With `C`
/// and the loadings independent, `E[ℐ]` shares eigenvectors with
/// `E[(n−1)⁻¹CᵀP⊥C] · E[p⁻¹Σσ⁻²ℓℓᵀ]`, which is diagonal with entries
/// `v_k (1 − π_k) τ²_k E[σ⁻²]`; `v_1` carries the confounding shift.
pub fn calibrate_loadings(cfg: &SimulationConfig, a: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, k) = (cfg.n, cfg.k);
    let pi = vec![LOADING_SPIKE; k];
    let e_inv_sigma2 = cfg.sigma_shape_rate / (cfg.sigma_shape_rate - 1.0);
    if !(e_inv_sigma2 > 0.0) || !e_inv_sigma2.is_finite() {
        return Err(Error::InvalidInput("sigma_shape_rate must exceed 1 for E[1/σ²] to exist".into()));
    }
    let x = interest_column(n);
    let xm = DMatrix::from_column_slice(n, 1, &x);
    let x_ss = linalg::project_out(&xm, &linalg::ones(n)).norm_squared() / (n as f64 - 1.0);
    let var_c: Vec<f64> = (0..k).map(|j| if j == 0 { 1.0 + a * a * x_ss } else { 1.0 }).collect();
    let target = &cfg.target_eigenvalues;
    let tau2: Vec<f64> = (0..k).map(|j| target[j] / ((1.0 - pi[j]) * e_inv_sigma2 * var_c[j])).collect();
    let mut expected: Vec<f64> = (0..k).map(|j| var_c[j] * (1.0 - pi[j]) * tau2[j] * e_inv_sigma2).collect();
    expected.sort_by(|a, b| b.total_cmp(a));
    // an unordered target list is not attainable as a spectrum
    if expected.iter().zip(target).any(|(g, t)| (g - t).abs() > CALIBRATION_TOL * t) {
        return Err(Error::Calibration {
            achieved: expected,
            target: target.clone(),
        });
    }
    Ok((pi, tau2))
}

/// Draw a dataset. Each law has its own stream, so changing one dimension never
/// reshuffles the draws of an unrelated law.
pub fn simulate_dataset(cfg: &SimulationConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let (n, p, k) = (cfg.n, cfg.p, cfg.k);
    let mu_alpha = match cfg.mu_alpha {
        Some(v) => v,
        None => mu_alpha_for_unit_variance(cfg.mech_link)?,
    };
    let a = confounding_shift(cfg.confounding_r2, n, k);
    let (pi, tau2) = calibrate_loadings(cfg, a)?;
    let x = interest_column(n);
    let stream = |law: u64| rng::substream(cfg.seed, &[tag::SIMULATION, law]);

    let mut r0 = stream(0);
    let la = Normal::new(mu_alpha, cfg.sd_log_alpha).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let dl = Normal::new(cfg.mu_delta, cfg.sd_delta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let alpha: Vec<f64> = (0..p).map(|_| la.sample(&mut r0).exp()).collect();
    let delta: Vec<f64> = (0..p).map(|_| dl.sample(&mut r0)).collect();

    let c = draw_c(n, k, a, &x, &mut stream(1));
    let loadings = draw_loadings(p, &pi, &tau2, &mut stream(2));

    let mut r3 = stream(3);
    let mean_law = Normal::new(cfg.mu_mean, cfg.sd_mean).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mu: Vec<f64> = (0..p).map(|_| mean_law.sample(&mut r3)).collect();
    let sigma2 = draw_sigma2(p, cfg.sigma_shape_rate, &mut r3);

    let mut r4 = stream(4);
    let beta: Vec<f64> = (0..p)
        .map(|_| {
            let zero = r4.random::<f64>() < cfg.beta_sparsity;
            let z: f64 = StandardNormal.sample(&mut r4);
            if zero {
                0.0
            } else {
                cfg.beta_sd * z
            }
        })
        .collect();

    let mut r5 = stream(5);
    let signal = &loadings * c.transpose();
    let complete = DMatrix::from_fn(p, n, |g, i| {
        let e: f64 = StandardNormal.sample(&mut r5);
        mu[g] + x[i] * beta[g] + signal[(g, i)] + sigma2[g].sqrt() * e
    });

    let mut r6 = stream(6);
    let mut values = Vec::with_capacity(p * n);
    let mut mask = Vec::with_capacity(p * n);
    for g in 0..p {
        for i in 0..n {
            let y = complete[(g, i)];
            let (psi, _) = psi_eval(cfg.mech_link, alpha[g] * (y - delta[g]));
            let observed = Bernoulli::new(psi).expect("probability").sample(&mut r6);
            values.push(y);
            mask.push(observed);
        }
    }
    let matrix = IntensityMatrix::new(
        values,
        mask,
        (1..=p).map(|g| format!("m{g}")).collect(),
        (1..=n).map(|i| format!("s{i}")).collect(),
    )?;
    let design = DesignMatrices::with_intercept(DMatrix::from_column_slice(n, 1, &x), vec!["case".into()])?;
    let truth = SimulationTruth {
        config: cfg.clone(),
        mu_alpha,
        a,
        pi,
        tau2,
        realized_r2: r_squared(&x, &c),
        realized_eigenvalues: signal_spectrum(&c, &loadings, &sigma2),
        alpha,
        delta,
        mu,
        sigma2,
        beta,
        c: matrix_to_rows(&c),
        loadings: matrix_to_rows(&loadings),
    };
    Ok(SimulatedDataset {
        matrix,
        design,
        complete,
        truth,
    })
}
