//! Masked OLS, logistic regression, Storey q-values and Grenander local FDR.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Ordinary least squares summary.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residual_variance: f64,
    pub df_residual: usize,
}

/// Largest acceptable condition number of a Gram matrix.
const MAX_GRAM_COND: f64 = 1e14;

/// Inverse of `dᵀd` for a design with full column rank.
pub(crate) fn gram_inverse(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = linalg::condition_number_sym(gram);
    if !(cond < MAX_GRAM_COND) {
        return Err(Error::SingularDesign);
    }
    let chol = gram.clone().cholesky().ok_or(Error::SingularDesign)?;
    Ok(chol.inverse())
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let dist = Normal::standard();
    (2.0 * dist.sf(z.abs())).clamp(0.0, 1.0)
}

/// Upper tail of χ²₁.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(1.0).expect("df 1").sf(x).clamp(0.0, 1.0)
}

/// OLS of `y` on `design` using only rows with `mask[i]`.
pub fn ols_masked(y: &[f64], mask: &[bool], design: &DMatrix<f64>) -> Result<OlsFit> {
    let n = y.len();
    assert_eq!(mask.len(), n);
    assert_eq!(design.nrows(), n);
    let q = design.ncols();
    let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let n_obs = rows.len();
    if n_obs <= q {
        return Err(Error::InsufficientData(format!(
            "{n_obs} observed rows for {q} coefficients"
        )));
    }
    let d = DMatrix::from_fn(n_obs, q, |i, j| design[(rows[i], j)]);
    let yv = DVector::from_iterator(n_obs, rows.iter().map(|&i| y[i]));
    let gram = d.transpose() * &d;
    let inv = gram_inverse(&gram)?;
    let beta = &inv * (d.transpose() * &yv);
    let resid = &yv - &d * &beta;
    let df = n_obs - q;
    let s2 = resid.norm_squared() / df as f64;
    let mut se = Vec::with_capacity(q);
    let mut t = Vec::with_capacity(q);
    let mut p = Vec::with_capacity(q);
    for j in 0..q {
        let s = (s2 * inv[(j, j)]).max(0.0).sqrt();
        let tj = if s > 0.0 {
            beta[j] / s
        } else if beta[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(beta[j])
        };
        se.push(s);
        t.push(tj);
        p.push(t_two_sided(tj, df as f64));
    }
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors: se,
        t_statistics: t,
        p_values: p,
        residual_variance: s2,
        df_residual: df,
    })
}

/// Coefficient bound guarding against separation.
pub const LOGISTIC_COEF_BOUND: f64 = 15.0;

/// Maximum likelihood logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic_loglik(labels: &[f64], design: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    labels
        .iter()
        .zip(eta.iter())
        .map(|(&r, &e)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            r * e - softplus
        })
        .sum()
}

/// Logistic regression by IRLS with coefficients confined to `[-15, 15]`.
///
/// Coordinates pinned at the bound with the gradient pointing outwards are held fixed
/// while Newton steps act on the rest; each step is halved until the likelihood improves.
pub fn logistic_fit(labels: &[f64], design: &DMatrix<f64>) -> Result<LogisticFit> {
    let n = labels.len();
    assert_eq!(design.nrows(), n);
    let q = design.ncols();
    let ones = labels.iter().filter(|&&r| r > 0.5).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateLabels);
    }
    let b = LOGISTIC_COEF_BOUND;
    let mut beta = DVector::zeros(q);
    let mut ll = logistic_loglik(labels, design, &beta);
    let mut converged = false;
    let max_iter = 100;
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        let eta = design * &beta;
        let pr: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let grad = design.transpose()
            * DVector::from_iterator(n, labels.iter().zip(&pr).map(|(&r, &p)| r - p));
        let free: Vec<usize> = (0..q)
            .filter(|&j| !((beta[j] >= b && grad[j] > 0.0) || (beta[j] <= -b && grad[j] < 0.0)))
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let mut info = DMatrix::zeros(free.len(), free.len());
        for i in 0..n {
            let w = (pr[i] * (1.0 - pr[i])).max(1e-12);
            for (a, &ja) in free.iter().enumerate() {
                let xa = design[(i, ja)] * w;
                for (c, &jc) in free.iter().enumerate().skip(a) {
                    info[(a, c)] += xa * design[(i, jc)];
                }
            }
        }
        for a in 0..free.len() {
            for c in 0..a {
                info[(a, c)] = info[(c, a)];
            }
            info[(a, a)] += 1e-12;
        }
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&j| grad[j]));
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&g_free),
            None => g_free.clone(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        let mut new_beta = beta.clone();
        for _ in 0..40 {
            new_beta.copy_from(&beta);
            for (a, &j) in free.iter().enumerate() {
                new_beta[j] = (beta[j] + t * step[a]).clamp(-b, b);
            }
            let new_ll = logistic_loglik(labels, design, &new_beta);
            if new_ll >= ll - 1e-14 * ll.abs() {
                accepted = true;
                let change = (&new_beta - &beta).amax();
                let gain = new_ll - ll;
                beta.copy_from(&new_beta);
                ll = new_ll;
                if change < 1e-10 || gain.abs() < 1e-14 * (1.0 + ll.abs()) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            converged = converged || !accepted;
            break;
        }
    }
    if !converged {
        log::warn!("logistic IRLS did not converge in {max_iter} iterations");
    }
    let eta = design * &beta;
    let probabilities = eta
        .iter()
        .map(|&e| sigmoid(e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
        .collect();
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        probabilities,
        converged,
        iterations: iter,
    })
}

fn check_p_values(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("p-value {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Storey's π̂₀: π̂₀(λ) on λ = 0.05, …, 0.95, smoothed by a quadratic least-squares
/// fit evaluated at 0.95 and clipped to `[1/m, 1]`.
pub fn storey_pi0(p: &[f64]) -> Result<f64> {
    check_p_values(p)?;
    let m = p.len() as f64;
    let lambdas: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    let pi: Vec<f64> = lambdas
        .iter()
        .map(|&l| p.iter().filter(|&&v| v > l).count() as f64 / (m * (1.0 - l)))
        .collect();
    let design = DMatrix::from_fn(lambdas.len(), 3, |i, j| lambdas[i].powi(j as i32));
    let gram = design.transpose() * &design;
    let coef = gram
        .cholesky()
        .expect("fixed Vandermonde design")
        .solve(&(design.transpose() * DVector::from_column_slice(&pi)));
    let at = 0.95;
    let est = coef[0] + coef[1] * at + coef[2] * at * at;
    let lo = 1.0 / m;
    Ok(if est.is_finite() { est.clamp(lo, 1.0) } else { 1.0 })
}

/// Step-up q-values `min_{j ≥ i} π₀ p_(j) m / j`, capped at 1, for a given π₀.
pub fn qvalues_with_pi0(p: &[f64], pi0: f64) -> Result<Vec<f64>> {
    check_p_values(p)?;
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for rank in (0..m).rev() {
        let i = idx[rank];
        let v = pi0 * p[i] * m as f64 / (rank + 1) as f64;
        running = running.min(v);
        q[i] = running.min(1.0);
    }
    Ok(q)
}

/// Storey q-values.
pub fn storey_qvalues(p: &[f64]) -> Result<Vec<f64>> {
    let pi0 = storey_pi0(p)?;
    qvalues_with_pi0(p, pi0)
}

/// Minimum number of p-values for a density-based lfdr estimate.
pub const LFDR_MIN_COUNT: usize = 50;

/// Grenander density estimate of `p` on `[0, 1]` evaluated at each input point:
/// slopes of the least concave majorant of the empirical CDF.
pub fn grenander_density(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    // knots: (0, 0), distinct values with their ECDF, (1, 1)
    let mut xs = vec![0.0];
    let mut fs = vec![0.0];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let x = sorted[i];
        let f = (j + 1) as f64 / m as f64;
        if x == 0.0 {
            fs[0] = f;
        } else {
            xs.push(x);
            fs.push(f);
        }
        i = j + 1;
    }
    if *xs.last().unwrap() < 1.0 {
        xs.push(1.0);
        fs.push(1.0);
    }
    // upper hull (concave majorant) by a monotone-chain scan
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (xs[b] - xs[a]) * (fs[k] - fs[a]) - (fs[b] - fs[a]) * (xs[k] - xs[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    let slopes: Vec<f64> = hull
        .windows(2)
        .map(|w| (fs[w[1]] - fs[w[0]]) / (xs[w[1]] - xs[w[0]]))
        .collect();
    let jump_at_zero = fs[0] > 0.0;
    p.iter()
        .map(|&v| {
            if v == 0.0 && jump_at_zero {
                return f64::INFINITY;
            }
            // segment (x_a, x_b] containing v; v = 0 uses the first segment
            let seg = hull
                .windows(2)
                .position(|w| v <= xs[w[1]])
                .unwrap_or(slopes.len().saturating_sub(1));
            slopes.get(seg).copied().unwrap_or(1.0)
        })
        .collect()
}

/// Local false discovery rates `π̂₀ / f̂(p)` with a Grenander `f̂`, clipped to `[0, 1]`.
/// With fewer than 50 p-values every entry is `π̂₀`.
pub fn local_fdr(p: &[f64]) -> Result<Vec<f64>> {
    let pi0 = storey_pi0(p)?;
    if p.len() < LFDR_MIN_COUNT {
        log::warn!(
            "only {} p-values; local fdr falls back to the null proportion {pi0:.3}",
            p.len()
        );
        return Ok(vec![pi0; p.len()]);
    }
    let f = grenander_density(p);
    Ok(f.iter()
        .map(|&d| if d > 0.0 { (pi0 / d).clamp(0.0, 1.0) } else { 1.0 })
        .collect())
}

/// Mean of a slice.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(x: &[f64], prob: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, prob)
}

pub fn quantile_sorted(s: &[f64], prob: f64) -> f64 {
    let h = (s.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1): (statistic, asymptotic p-value).
pub fn ks_uniform(x: &[f64]) -> (f64, f64) {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in s.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - v).max(v - i as f64 / n);
    }
    // Kolmogorov distribution with the Stephens small-sample adjustment
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
