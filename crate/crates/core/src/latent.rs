//! Latent covariate recovery under non-random missingness and the final per-feature
//! association tests.

use crate::data::{DesignMatrices, IntensityMatrix, Partition};
use crate::error::{Error, Result};
use crate::factor;
use crate::ipw::{self, IpwWeights};
use crate::linalg;
use crate::stats;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const C2_TOL: f64 = 1e-8;
pub const C2_MAX_SWEEPS: usize = 500;
/// Largest relative objective increase tolerated across one projection.
pub const PROJECTION_SLACK: f64 = 1e-6;
pub const DEFAULT_EPS_QVALUE: f64 = 0.1;
pub const DEFAULT_REFINEMENT_ROUNDS: usize = 3;
/// IPW features enter the latent-factor regression only with a Kish effective sample
/// size of at least the number of coefficients plus this.
pub const MIN_EXCESS_ESS: usize = 5;

/// Weights of feature `g` in the quasi-likelihood: `ŵγ̂` when it has IPW weights,
/// otherwise its observation mask.
fn objective_weights(m: &IntensityMatrix, g: usize, weights: &[Option<IpwWeights>]) -> Vec<f64> {
    match weights.get(g).and_then(|w| w.as_ref()) {
        Some(w) => w.design_weights(),
        None => m.mask_row(g).iter().map(|&o| o as u8 as f64).collect(),
    }
}

fn wls(y: &[f64], z: &DMatrix<f64>, w: &[f64]) -> Option<DVector<f64>> {
    let q = z.ncols();
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut b = DVector::<f64>::zeros(q);
    for i in 0..z.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        let zi = z.row(i);
        for j in 0..q {
            let v = w[i] * zi[j];
            b[j] += v * y[i];
            for k in j..q {
                a[(j, k)] += v * zi[k];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    if linalg::condition_number_sym(&a) >= ipw::MAX_WEIGHTED_COND {
        return None;
    }
    a.cholesky().map(|c| c.solve(&b))
}

fn weighted_rss(y: &[f64], z: &DMatrix<f64>, w: &[f64], coef: &DVector<f64>) -> f64 {
    (0..y.len())
        .filter(|&i| w[i] != 0.0)
        .map(|i| {
            let e = y[i] - z.row(i).transpose().dot(coef);
            w[i] * e * e
        })
        .sum()
}

/// Output of the alternating fit for `Ĉ₂`.
#[derive(Debug, Clone)]
pub struct C2Fit {
    pub c2: DMatrix<f64>,
    /// Features entering the objective (`𝒪 ∪ ℳ_sub`), ascending.
    pub features: Vec<usize>,
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Maximise the weighted quasi-likelihood over `C₂` subject to `C₂ᵀX = 0` and
/// `n⁻¹C₂ᵀC₂ = I`.
///
/// Each sweep refits every feature on `(X | C₂)`, updates the rows of `C₂` by weighted
/// least squares, then projects. The projection is paired with the change of
/// coefficients that leaves every fitted value unchanged, so it cannot move the objective
/// beyond rounding.
pub fn estimate_c2(
    m: &IntensityMatrix,
    x: &DMatrix<f64>,
    partition: &Partition,
    weights: &[Option<IpwWeights>],
    subset: &[usize],
    k: usize,
) -> Result<C2Fit> {
    let n = m.n_samples();
    let d = x.ncols();
    if k == 0 || k >= n.saturating_sub(d) {
        return Err(Error::Rank {
            k,
            limit: n.saturating_sub(d),
        });
    }
    let mut features: Vec<usize> = partition.observed_set.iter().chain(subset).copied().collect();
    features.sort_unstable();
    features.dedup();
    if features.is_empty() {
        return Err(Error::NoCompleteFeatures);
    }
    let complete = m.select_features(&partition.observed_set)?;
    let mut c2 = factor::estimate_complete_factors(&complete, k, x)?.c_hat;

    let ys: Vec<&[f64]> = features.iter().map(|&g| m.row(g)).collect();
    let ws: Vec<Vec<f64>> = features.iter().map(|&g| objective_weights(m, g, weights)).collect();
    let xq = linalg::orthonormal_basis(x);
    let x_pinv = pseudo_inverse(x)?;

    let mut objective = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 0..C2_MAX_SWEEPS {
        sweeps = sweep + 1;
        let z = linalg::hstack(&[x, &c2]);
        let coefs: Vec<DVector<f64>> = (0..features.len())
            .into_par_iter()
            .map(|f| wls(ys[f], &z, &ws[f]).ok_or(Error::SingularWeightedDesign(f64::INFINITY)))
            .collect::<Result<_>>()?;

        // row-wise update of C₂ given (β̃, ℓ)
        let rows: Vec<Option<DVector<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut a = DMatrix::<f64>::zeros(k, k);
                let mut b = DVector::<f64>::zeros(k);
                for f in 0..features.len() {
                    let w = ws[f][i];
                    if w == 0.0 {
                        continue;
                    }
                    let coef = &coefs[f];
                    let mut resid = ys[f][i];
                    for j in 0..d {
                        resid -= x[(i, j)] * coef[j];
                    }
                    let ell = coef.rows(d, k);
                    a.ger(w, &ell, &ell, 1.0);
                    b.axpy(w * resid, &ell, 1.0);
                }
                a.cholesky().map(|c| c.solve(&b))
            })
            .collect();
        let mut c_raw = c2.clone();
        for (i, r) in rows.into_iter().enumerate() {
            if let Some(r) = r {
                c_raw.row_mut(i).copy_from(&r.transpose());
            }
        }
        let z_raw = linalg::hstack(&[x, &c_raw]);
        let before: f64 = (0..features.len()).map(|f| weighted_rss(ys[f], &z_raw, &ws[f], &coefs[f])).sum();

        // projection: c_raw = X A + c_perp, c_perp = c_new · map⁻¹
        let c_perp = &c_raw - &xq * (xq.transpose() * &c_raw);
        let a_mat = &x_pinv * (&c_raw - &c_perp);
        let (mut c_new, mut map) = linalg::renormalize_columns(&c_perp)
            .ok_or_else(|| Error::Convergence("latent factor columns became collinear".into()))?;
        fix_signs_with_map(&mut c_new, &mut map);
        let map_inv = map
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Convergence("latent factor columns became collinear".into()))?;
        let z_new = linalg::hstack(&[x, &c_new]);
        let after: f64 = (0..features.len())
            .map(|f| {
                let ell = coefs[f].rows(d, k).into_owned();
                let mut coef = DVector::zeros(d + k);
                coef.rows_mut(0, d).copy_from(&(coefs[f].rows(0, d) + &a_mat * &ell));
                coef.rows_mut(d, k).copy_from(&(&map_inv * ell));
                weighted_rss(ys[f], &z_new, &ws[f], &coef)
            })
            .sum();
        if after > before * (1.0 + PROJECTION_SLACK) + f64::MIN_POSITIVE {
            return Err(Error::Convergence(format!(
                "objective rose from {before:.6e} to {after:.6e} across the projection in sweep {sweeps}"
            )));
        }
        c2 = c_new;
        let done = objective
            .last()
            .is_some_and(|&prev: &f64| (prev - after).abs() <= C2_TOL * prev.abs().max(f64::MIN_POSITIVE));
        objective.push(after);
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("latent factor sweeps stopped after {C2_MAX_SWEEPS} without converging");
    }
    Ok(C2Fit {
        c2,
        features,
        objective,
        sweeps,
        converged,
    })
}

fn pseudo_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(DMatrix::zeros(0, x.nrows()));
    }
    let inv = stats::gram_inverse(&(x.transpose() * x))?;
    Ok(inv * x.transpose())
}

/// Largest-entry-positive sign convention, carried into the coordinate map.
fn fix_signs_with_map(c: &mut DMatrix<f64>, map: &mut DMatrix<f64>) {
    for j in 0..c.ncols() {
        let col = c.column(j);
        let big = col.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
        if big < 0.0 {
            c.column_mut(j).neg_mut();
            map.column_mut(j).neg_mut();
        }
    }
}

/// `Ĉ = XΩ̂ + Ĉ₂`.
pub fn recover_c(x: &DMatrix<f64>, omega: &DMatrix<f64>, c2: &DMatrix<f64>) -> DMatrix<f64> {
    x * omega + c2
}

/// Screened precision-weighted regression of `β̃` on `ℓ̂`.
#[derive(Debug, Clone)]
pub struct OmegaFit {
    /// d × K.
    pub omega: DMatrix<f64>,
    pub initial: DMatrix<f64>,
    /// Features kept per round and interest coordinate.
    pub kept: Vec<Vec<usize>>,
}

/// Refit callback for the refinement rounds: given `Ω̂⁽ʳ⁾`, return per-feature
/// `(β̂, diag V̂(β̂))` (or `None` for a failed feature), in the order of the inputs.
pub type OmegaRefit<'a> = dyn Fn(&DMatrix<f64>) -> Result<Vec<Option<(DVector<f64>, DVector<f64>)>>> + Sync + 'a;

fn weighted_omega_row(
    beta_tilde: &[DVector<f64>],
    ell: &[DVector<f64>],
    tau: &[DVector<f64>],
    j: usize,
    keep: &dyn Fn(usize) -> bool,
) -> Option<(DVector<f64>, usize)> {
    let k = ell.first()?.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut used = 0;
    for g in 0..beta_tilde.len() {
        let t = tau[g][j];
        if !(t > 0.0 && t.is_finite()) || !keep(g) {
            continue;
        }
        a.ger(1.0 / t, &ell[g], &ell[g], 1.0);
        b.axpy(beta_tilde[g][j] / t, &ell[g], 1.0);
        used += 1;
    }
    if used < k || linalg::condition_number_sym(&a) >= 1e14 {
        return None;
    }
    a.cholesky().map(|c| (c.solve(&b), used))
}

/// `Ω̂⁽⁰⁾` from all features, then `rounds` refinements that drop features whose χ²₁
/// q-value for coordinate `j` is at most `eps_q`.
pub fn estimate_omega(
    beta_tilde: &[DVector<f64>],
    ell: &[DVector<f64>],
    tau: &[DVector<f64>],
    eps_q: f64,
    rounds: usize,
    refit: &OmegaRefit<'_>,
) -> Result<OmegaFit> {
    let d = beta_tilde.first().ok_or(Error::EmptyInput)?.len();
    let k = ell[0].len();
    let mut omega = DMatrix::zeros(d, k);
    let mut kept = Vec::new();
    let mut counts = Vec::new();
    for j in 0..d {
        let (row, used) = weighted_omega_row(beta_tilde, ell, tau, j, &|_| true).ok_or(Error::SingularDesign)?;
        omega.row_mut(j).copy_from(&row.transpose());
        counts.push(used);
    }
    kept.push(counts);
    let initial = omega.clone();
    for round in 0..rounds {
        let fits = refit(&omega)?;
        let mut next = omega.clone();
        let mut counts = Vec::new();
        for j in 0..d {
            let p: Vec<(usize, f64)> = fits
                .iter()
                .enumerate()
                .filter_map(|(g, f)| {
                    let (b, v) = f.as_ref()?;
                    let stat = b[j] * b[j] / v[j];
                    stat.is_finite().then(|| (g, stats::chi2_1_sf(stat)))
                })
                .collect();
            let mut keep = vec![false; beta_tilde.len()];
            if !p.is_empty() {
                let q = stats::storey_qvalues(&p.iter().map(|v| v.1).collect::<Vec<_>>())?;
                for ((g, _), qv) in p.iter().zip(q) {
                    keep[*g] = qv > eps_q;
                }
            }
            match weighted_omega_row(beta_tilde, ell, tau, j, &|g| keep[g]) {
                Some((row, used)) => {
                    next.row_mut(j).copy_from(&row.transpose());
                    counts.push(used);
                }
                None => {
                    log::warn!("refinement round {} screened out every feature for coordinate {j}", round + 1);
                    counts.push(0);
                }
            }
        }
        kept.push(counts);
        omega = next;
    }
    Ok(OmegaFit { omega, initial, kept })
}

/// `Ĉ₂`, `Ω̂` and the per-feature quantities behind them.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub c2_hat: DMatrix<f64>,
    /// d_interest × K.
    pub omega_hat: DMatrix<f64>,
    pub omega_initial: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    /// Features that entered `Ω̂` (subset of `𝒪 ∪ ℳ_sub`).
    pub features: Vec<usize>,
    pub beta_tilde: Vec<DVector<f64>>,
    pub ell_hat: Vec<DVector<f64>>,
    pub tau_hat: Vec<DVector<f64>>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Coefficients and covariance of one feature on design `z`: masked OLS, or the IPW
/// sandwich when weights are present.
fn fit_feature(
    m: &IntensityMatrix,
    g: usize,
    z: &DMatrix<f64>,
    weights: &[Option<IpwWeights>],
) -> Result<(DVector<f64>, DMatrix<f64>, Method)> {
    match weights.get(g).and_then(|w| w.as_ref()) {
        Some(w) => {
            let fit = ipw::ipw_fit(m.row(g), z, &w.w_hat, &w.v_hat, &w.gamma_hat)?;
            Ok((fit.eta_hat, fit.covariance, Method::Ipw))
        }
        None => {
            let (eta, cov) = ipw::ols_complete(m.row(g), z, m.mask_row(g))?;
            Ok((eta, cov, Method::Ols))
        }
    }
}

/// Options of the latent-covariate fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentOptions {
    pub k: usize,
    pub eps_q: f64,
    pub rounds: usize,
}

/// `Ĉ₂`, then `Ω̂`, then `Ĉ = P⊥_{nuis}X_int Ω̂ + Ĉ₂`. Features in `subset` use their IPW
/// weights, features of `𝒪` their masks.
pub fn fit_latent(
    m: &IntensityMatrix,
    design: &DesignMatrices,
    partition: &Partition,
    weights: &[Option<IpwWeights>],
    subset: &[usize],
    opts: &LatentOptions,
) -> Result<LatentModel> {
    let x = design.full();
    let d_int = design.d_interest();
    let x_int_perp = linalg::project_out(&design.x_interest, &design.x_nuisance);
    let c2fit = estimate_c2(m, &x, partition, weights, subset, opts.k)?;
    let c2 = c2fit.c2;
    let z2 = linalg::hstack(&[&x, &c2]);
    let d = x.ncols();
    let k = opts.k;
    let fits: Vec<(usize, Result<(DVector<f64>, DMatrix<f64>, Method)>)> = c2fit
        .features
        .par_iter()
        .map(|&g| (g, fit_feature(m, g, &z2, weights)))
        .collect();
    let mut features = Vec::new();
    let mut beta_tilde = Vec::new();
    let mut ell_hat = Vec::new();
    let mut tau_hat = Vec::new();
    for (g, fit) in fits {
        if let Some(w) = weights.get(g).and_then(|w| w.as_ref()) {
            let ess = w.effective_sample_size();
            if ess < (z2.ncols() + MIN_EXCESS_ESS) as f64 {
                log::warn!(
                    "feature {} left out of the latent-factor regression: effective sample size {ess:.1} of its weights",
                    m.feature_ids()[g]
                );
                continue;
            }
        }
        match fit {
            Ok((eta, cov, _)) => {
                features.push(g);
                beta_tilde.push(eta.rows(0, d_int).into_owned());
                ell_hat.push(eta.rows(d, k).into_owned());
                tau_hat.push(DVector::from_fn(d_int, |j, _| cov[(j, j)]));
            }
            Err(e) => log::warn!("feature {} left out of the latent-factor regression: {e}", m.feature_ids()[g]),
        }
    }
    let refit = |omega: &DMatrix<f64>| -> Result<Vec<Option<(DVector<f64>, DVector<f64>)>>> {
        let c = recover_c(&x_int_perp, omega, &c2);
        let z = linalg::hstack(&[&x, &c]);
        Ok(features
            .par_iter()
            .map(|&g| {
                fit_feature(m, g, &z, weights).ok().map(|(eta, cov, _)| {
                    (eta.rows(0, d_int).into_owned(), DVector::from_fn(d_int, |j, _| cov[(j, j)]))
                })
            })
            .collect())
    };
    let om = estimate_omega(&beta_tilde, &ell_hat, &tau_hat, opts.eps_q, opts.rounds, &refit)?;
    let c_hat = recover_c(&x_int_perp, &om.omega, &c2);
    Ok(LatentModel {
        c2_hat: c2,
        omega_hat: om.omega,
        omega_initial: om.initial,
        c_hat,
        features,
        beta_tilde,
        ell_hat,
        tau_hat,
        sweeps: c2fit.sweeps,
        converged: c2fit.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Ipw,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ols => "ols",
            Method::Ipw => "ipw",
        })
    }
}

/// Inference for the interest coefficients of one feature. Failed features carry NaN
/// and the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationRow {
    pub feature: usize,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub p_values: Vec<f64>,
    pub q_values: Vec<f64>,
    pub method: Method,
    /// The mechanism failed its over-identification check.
    pub flagged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResults {
    pub rows: Vec<AssociationRow>,
    pub interest_names: Vec<String>,
    pub k: usize,
}

impl AssociationResults {
    pub fn row(&self, g: usize) -> Option<&AssociationRow> {
        self.rows.iter().find(|r| r.feature == g)
    }
}

/// Regress every non-dropped feature on `Z = (X_int | X_nuis | Ĉ)`: masked OLS for `𝒪`,
/// IPW for `ℳ`. p-values are two-sided normal, q-values are per interest coordinate.
pub fn associate(
    m: &IntensityMatrix,
    design: &DesignMatrices,
    c_hat: &DMatrix<f64>,
    weights: &[Option<IpwWeights>],
    partition: &Partition,
    flagged: &[bool],
) -> Result<AssociationResults> {
    let z = linalg::hstack(&[&design.x_interest, &design.x_nuisance, c_hat]);
    let d_int = design.d_interest();
    let mut features: Vec<usize> = partition.observed_set.iter().chain(&partition.missing_set).copied().collect();
    features.sort_unstable();
    let missing: std::collections::HashSet<usize> = partition.missing_set.iter().copied().collect();
    let rows: Vec<AssociationRow> = features
        .par_iter()
        .map(|&g| {
            let is_missing = missing.contains(&g);
            let method = if is_missing { Method::Ipw } else { Method::Ols };
            let fit = if is_missing && weights.get(g).and_then(|w| w.as_ref()).is_none() {
                Err(Error::InvalidInput("no mechanism weights".into()))
            } else if is_missing {
                fit_feature(m, g, &z, weights)
            } else {
                fit_feature(m, g, &z, &[])
            };
            interest_row(g, fit, d_int, method, flagged.get(g).copied().unwrap_or(false))
        })
        .collect();
    finish(rows, design.interest_names.clone(), c_hat.ncols())
}

fn interest_row(
    g: usize,
    fit: Result<(DVector<f64>, DMatrix<f64>, Method)>,
    d_int: usize,
    method: Method,
    flagged: bool,
) -> AssociationRow {
    match fit {
        Ok((eta, cov, method)) => {
            let beta: Vec<f64> = (0..d_int).map(|j| eta[j]).collect();
            let se: Vec<f64> = (0..d_int).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
            let p_values = beta.iter().zip(&se).map(|(b, s)| stats::normal_two_sided(b / s)).collect();
            AssociationRow {
                feature: g,
                beta,
                se,
                covariance: cov.view((0, 0), (d_int, d_int)).into_owned(),
                p_values,
                q_values: vec![f64::NAN; d_int],
                method,
                flagged,
                error: None,
            }
        }
        Err(e) => AssociationRow {
            feature: g,
            beta: vec![f64::NAN; d_int],
            se: vec![f64::NAN; d_int],
            covariance: DMatrix::from_element(d_int, d_int, f64::NAN),
            p_values: vec![f64::NAN; d_int],
            q_values: vec![f64::NAN; d_int],
            method,
            flagged,
            error: Some(e.to_string()),
        },
    }
}

fn finish(mut rows: Vec<AssociationRow>, interest_names: Vec<String>, k: usize) -> Result<AssociationResults> {
    let d_int = interest_names.len();
    for j in 0..d_int {
        let idx: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].p_values[j].is_finite()).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<f64> = idx.iter().map(|&r| rows[r].p_values[j]).collect();
        let q = stats::storey_qvalues(&p)?;
        for (&r, qv) in idx.iter().zip(q) {
            rows[r].q_values[j] = qv;
        }
    }
    Ok(AssociationResults { rows, interest_names, k })
}

/// Baseline that ignores the missingness mechanism: `K` principal components of the
/// row-centred nearly complete features, then masked OLS on `(X | Ĉ)` for every feature.
pub fn naive_associate(
    m: &IntensityMatrix,
    design: &DesignMatrices,
    partition: &Partition,
    k: usize,
) -> Result<AssociationResults> {
    let complete = m.select_features(&partition.observed_set)?;
    let c = factor::estimate_complete_factors(&complete, k, &linalg::ones(m.n_samples()))?.c_hat;
    let z = linalg::hstack(&[&design.x_interest, &design.x_nuisance, &c]);
    let d_int = design.d_interest();
    let mut features: Vec<usize> = partition.observed_set.iter().chain(&partition.missing_set).copied().collect();
    features.sort_unstable();
    let rows = features
        .par_iter()
        .map(|&g| interest_row(g, fit_feature(m, g, &z, &[]), d_int, Method::Ols, false))
        .collect();
    finish(rows, design.interest_names.clone(), k)
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

/// One line per (feature, interest covariate).
pub fn write_association_tsv(path: &Path, results: &AssociationResults, feature_ids: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "feature\tcovariate\tbeta\tse\tp\tq\tmethod\tflagged\tnote")?;
    for r in &results.rows {
        for (j, name) in results.interest_names.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                feature_ids[r.feature],
                name,
                fmt_num(r.beta[j]),
                fmt_num(r.se[j]),
                fmt_num(r.p_values[j]),
                fmt_num(r.q_values[j]),
                r.method,
                r.flagged,
                r.error.as_deref().unwrap_or("")
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Expected and observed `−log₁₀ p` for a uniform Q-Q plot, per interest covariate.
pub fn qq_points(results: &AssociationResults, j: usize) -> Vec<(f64, f64)> {
    let mut p: Vec<f64> = results.rows.iter().map(|r| r.p_values[j]).filter(|v| v.is_finite()).collect();
    p.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (-((i as f64 + 0.5) / m).log10(), -v.max(f64::MIN_POSITIVE).log10()))
        .collect()
}

pub fn write_qq_tsv(path: &Path, results: &AssociationResults) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "covariate\texpected\tobserved")?;
    for (j, name) in results.interest_names.iter().enumerate() {
        for (e, o) in qq_points(results, j) {
            writeln!(out, "{name}\t{e}\t{o}")?;
        }
    }
    out.flush()?;
    Ok(())
}
