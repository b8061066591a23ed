//! Over-identification test: empirical-likelihood bootstrap null for `J` and lfdr flagging.

use crate::error::{Error, Result};
use crate::gmm::{two_step_gmm, FeatureData, GmmFit, GmmOptions};
use crate::link::{moment_h, Link, MissingnessMechanism};
use crate::rng;
use crate::stats;
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Solution of the empirical-likelihood dual.
#[derive(Debug, Clone)]
pub struct ElSolution {
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
}

/// Owen's pseudo-logarithm: `log z` above `1/n`, quadratic continuation below.
fn log_star(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, (2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

/// Empirical-likelihood weights `η_i = 1/(n(1 + λᵀh_i))` for the rows `h_i` of `h`,
/// maximizing `Π η_i` subject to `Σ η_i = 1` and `Σ η_i h_i = 0`.
pub fn el_weights(h: &DMatrix<f64>) -> Result<ElSolution> {
    let (n, d) = h.shape();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let nf = n as f64;
    let eps = 1.0 / nf;
    let objective = |lam: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| log_star(1.0 + (h.row(i) * lam)[(0, 0)], eps).0)
            .sum()
    };
    let mut lam = DVector::zeros(d);
    let mut obj = objective(&lam);
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..50 {
        iterations = it + 1;
        let mut grad = DVector::zeros(d);
        let mut neg_hess = DMatrix::zeros(d, d);
        for i in 0..n {
            let hi = h.row(i).transpose();
            let z = 1.0 + hi.dot(&lam);
            let (_, d1, d2) = log_star(z, eps);
            grad += &hi * d1;
            neg_hess -= &hi * hi.transpose() * d2;
        }
        if grad.amax() / nf < 1e-10 {
            converged = true;
            break;
        }
        let step = neg_hess
            .svd(true, true)
            .solve(&grad, 1e-12)
            .map_err(|_| Error::HullViolation)?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lam + &step * t;
            let v = objective(&cand);
            if v.is_finite() && v >= obj {
                lam = cand;
                obj = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let z: Vec<f64> = (0..n).map(|i| 1.0 + (h.row(i) * &lam)[(0, 0)]).collect();
    // a genuine solution keeps every 1 + λᵀh_i at least 1/n (η_i ≤ 1)
    if !converged || z.iter().any(|&v| !(v >= eps * (1.0 - 1e-9))) {
        return Err(Error::HullViolation);
    }
    let mut weights: Vec<f64> = z.iter().map(|&v| 1.0 / (nf * v)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(ElSolution {
        weights,
        lambda: lam.iter().copied().collect(),
        iterations,
    })
}

/// Rows `h_i(θ̂)` of the moment matrix.
pub fn moment_matrix(data: &FeatureData, mech: &MissingnessMechanism<f64>) -> DMatrix<f64> {
    let n = data.n();
    let mut h = DMatrix::zeros(n, 3);
    for i in 0..n {
        let v = moment_h(data.y[i], data.r[i], [data.u1[i], data.u2[i]], mech);
        for k in 0..3 {
            h[(i, k)] = v[k];
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub j_observed: f64,
    pub j_null_samples: Vec<f64>,
    pub p_value: f64,
    pub el_weights: Vec<f64>,
    /// EL weights were unavailable and uniform weights were used instead.
    pub hull_violation: bool,
    pub failed_replicates: usize,
}

/// Monte Carlo p-value `(1 + #{J* ≥ J}) / (B + 1)`.
pub fn bootstrap_p_value(j_observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= j_observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

/// Bootstrap null distribution of `J`: resample the `n` cells from the EL-reweighted
/// empirical distribution and rerun the two-step fit `B` times. Replicate `a` draws from
/// the stream `(seed, stream_path…, a)`; failed replicates are redrawn, up to `2B` attempts.
pub fn bootstrap_j_null(
    fit: &GmmFit,
    data: &FeatureData,
    link: Link,
    b: usize,
    seed: u64,
    stream_path: &[u64],
    opts: &GmmOptions,
) -> Result<BootstrapResult> {
    if b < 1 {
        return Err(Error::InvalidInput("bootstrap needs B >= 1".into()));
    }
    let n = data.n();
    let mech = MissingnessMechanism::new(link, fit.alpha_hat, fit.delta_hat)?;
    let h = moment_matrix(data, &mech);
    let (weights, hull_violation) = match el_weights(&h) {
        Ok(sol) => (sol.weights, false),
        Err(Error::HullViolation) => {
            log::warn!("EL weights unavailable; bootstrapping from uniform weights");
            (vec![1.0 / n as f64; n], true)
        }
        Err(e) => return Err(e),
    };
    let sampler = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidInput(format!("bootstrap weights: {e}")))?;
    let replicate = |a: usize| -> Option<f64> {
        let mut path = stream_path.to_vec();
        path.push(a as u64);
        let mut r = rng::substream(seed, &path);
        let idx: Vec<usize> = (0..n).map(|_| sampler.sample(&mut r)).collect();
        let boot = data.resample(&idx);
        two_step_gmm(&boot, link, opts).ok().map(|f| f.j).filter(|j| j.is_finite())
    };
    let mut null = Vec::with_capacity(b);
    let mut next = 0usize;
    let mut failed = 0usize;
    while null.len() < b && next < 2 * b {
        let want = (b - null.len()).min(2 * b - next);
        let batch: Vec<Option<f64>> = (next..next + want).into_par_iter().map(replicate).collect();
        next += want;
        for v in batch {
            match v {
                Some(j) => null.push(j),
                None => failed += 1,
            }
        }
    }
    if null.len() < b {
        return Err(Error::BootstrapDegenerate { failed, b });
    }
    let p_value = bootstrap_p_value(fit.j, &null);
    Ok(BootstrapResult {
        j_observed: fit.j,
        j_null_samples: null,
        p_value,
        el_weights: weights,
        hull_violation,
        failed_replicates: failed,
    })
}

pub const DEFAULT_LFDR_THRESHOLD: f64 = 0.8;
pub const DEFAULT_BOOTSTRAP_B: usize = 200;

/// Result of lfdr screening over the missing-set features.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismFlags {
    pub lfdr: Vec<f64>,
    /// `true` when the feature stays in the subset used for latent-factor estimation.
    pub in_subset: Vec<bool>,
}

/// Keep features with `lfdr ≥ threshold`; with fewer than 50 p-values every feature is kept.
pub fn flag_mechanism_fit(p_values: &[f64], threshold: f64) -> Result<MechanismFlags> {
    if p_values.is_empty() {
        return Ok(MechanismFlags {
            lfdr: vec![],
            in_subset: vec![],
        });
    }
    let lfdr = stats::local_fdr(p_values)?;
    let in_subset = if p_values.len() < stats::LFDR_MIN_COUNT {
        log::warn!("fewer than {} J-test p-values; no feature is flagged", stats::LFDR_MIN_COUNT);
        vec![true; p_values.len()]
    } else {
        lfdr.iter().map(|&l| l >= threshold).collect()
    };
    Ok(MechanismFlags { lfdr, in_subset })
}

/// One row of the J-test table.
#[derive(Debug, Clone)]
pub struct JTestRow {
    pub feature: String,
    pub j: f64,
    pub p_boot: f64,
    pub lfdr: f64,
    pub in_subset: bool,
}

/// Write `(feature, J, p_boot, lfdr, in_subset)`.
pub fn write_jtest_tsv(path: &Path, rows: &[JTestRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "feature\tJ\tp_boot\tlfdr\tin_subset")?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.feature, r.j, r.p_boot, r.lfdr, r.in_subset)?;
    }
    out.flush()?;
    Ok(())
}
