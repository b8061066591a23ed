//! Two-step GMM estimation of a feature's missingness mechanism.

use crate::error::{Error, Result};
use crate::link::{psi_eval, Link};
use crate::optim::NelderMead;
use crate::stats;
use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use std::io::Write;
use std::path::Path;

/// One feature's intensities, observation indicators and the two instrument columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureData {
    pub y: Vec<f64>,
    pub r: Vec<bool>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl FeatureData {
    pub fn new(y: Vec<f64>, r: Vec<bool>, u1: Vec<f64>, u2: Vec<f64>) -> Self {
        let n = y.len();
        assert!(r.len() == n && u1.len() == n && u2.len() == n, "feature data length mismatch");
        Self { y, r, u1, u2 }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_observed(&self) -> usize {
        self.r.iter().filter(|&&v| v).count()
    }

    /// Rows `idx` in the given order (with repetition).
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            r: idx.iter().map(|&i| self.r[i]).collect(),
            u1: idx.iter().map(|&i| self.u1[i]).collect(),
            u2: idx.iter().map(|&i| self.u2[i]).collect(),
        }
    }
}

/// Precomputed sums that make `h̄` cost one link evaluation per observed cell.
///
/// Unobserved cells contribute `(1, a₁, a₂)` regardless of the parameters, so only the
/// observed cells are revisited.
#[derive(Debug, Clone)]
pub struct MomentEvaluator {
    link: Link,
    n: f64,
    obs: Vec<[f64; 3]>,
    sum_all: [f64; 3],
    sum2_all: [[f64; 3]; 3],
}

impl MomentEvaluator {
    pub fn new(data: &FeatureData, link: Link) -> Self {
        let mut sum_all = [0.0; 3];
        let mut sum2_all = [[0.0; 3]; 3];
        let mut obs = Vec::with_capacity(data.n_observed());
        for i in 0..data.n() {
            let z = [1.0, data.u1[i], data.u2[i]];
            for k in 0..3 {
                sum_all[k] += z[k];
                for l in 0..3 {
                    sum2_all[k][l] += z[k] * z[l];
                }
            }
            if data.r[i] {
                obs.push([data.y[i], data.u1[i], data.u2[i]]);
            }
        }
        Self {
            link,
            n: data.n() as f64,
            obs,
            sum_all,
            sum2_all,
        }
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    /// `h̄(α, δ)`.
    pub fn h_bar(&self, alpha: f64, delta: f64) -> Vector3<f64> {
        let mut s = [0.0; 3];
        for o in &self.obs {
            let inv = 1.0 / psi_eval(self.link, alpha * (o[0] - delta)).0;
            s[0] += inv;
            s[1] += o[1] * inv;
            s[2] += o[2] * inv;
        }
        Vector3::new(
            (self.sum_all[0] - s[0]) / self.n,
            (self.sum_all[1] - s[1]) / self.n,
            (self.sum_all[2] - s[2]) / self.n,
        )
    }

    /// `h̄` and the uncentered second moment `n⁻¹ Σ h hᵀ`.
    pub fn h_bar_and_second_moment(&self, alpha: f64, delta: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let mut s = [0.0; 3];
        let mut s2 = self.sum2_all;
        for o in &self.obs {
            let inv = 1.0 / psi_eval(self.link, alpha * (o[0] - delta)).0;
            let z = [1.0, o[1], o[2]];
            let f = 1.0 - inv;
            let adj = f * f - 1.0;
            for k in 0..3 {
                s[k] += z[k] * inv;
                for l in 0..3 {
                    s2[k][l] += adj * z[k] * z[l];
                }
            }
        }
        let h = Vector3::new(
            (self.sum_all[0] - s[0]) / self.n,
            (self.sum_all[1] - s[1]) / self.n,
            (self.sum_all[2] - s[2]) / self.n,
        );
        let m = Matrix3::from_fn(|k, l| s2[k][l] / self.n);
        (h, m)
    }

    /// `h̄` and the centered covariance `Σ̂ = n⁻¹ Σ (h − h̄)(h − h̄)ᵀ`.
    pub fn h_bar_and_sigma(&self, alpha: f64, delta: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let (h, m) = self.h_bar_and_second_moment(alpha, delta);
        (h, m - h * h.transpose())
    }

    /// `Γ = ∂h̄/∂(α, δ)`.
    pub fn gamma(&self, alpha: f64, delta: f64) -> Matrix3x2<f64> {
        let mut g = Matrix3x2::zeros();
        for o in &self.obs {
            let (psi, dpsi) = psi_eval(self.link, alpha * (o[0] - delta));
            let c = dpsi / (psi * psi);
            let z = [1.0, o[1], o[2]];
            for k in 0..3 {
                g[(k, 0)] += z[k] * c * (o[0] - delta);
                g[(k, 1)] -= z[k] * c * alpha;
            }
        }
        g / self.n
    }
}

/// Search settings for [`two_step_gmm`].
#[derive(Debug, Clone, Copy)]
pub struct GmmOptions {
    pub log_alpha_range: (f64, f64),
    pub grid_points: usize,
    /// Probability range of the observed-intensity quantiles used for the δ grid.
    pub delta_quantiles: (f64, f64),
    pub starts: usize,
    pub nelder_mead: NelderMead,
    pub max_condition: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            log_alpha_range: (-3.0, 3.0),
            grid_points: 21,
            delta_quantiles: (0.01, 0.5),
            starts: 3,
            nelder_mead: NelderMead::default(),
            max_condition: 1e12,
        }
    }
}

/// Output of the two-step estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub alpha_hat: f64,
    pub delta_hat: f64,
    /// Identity-weighted first step `(α, δ)`.
    pub first_step: (f64, f64),
    pub w: Matrix3<f64>,
    /// Asymptotic covariance of `√n ((α̂, δ̂) − (α, δ))`.
    pub v_hat: Matrix2<f64>,
    pub j: f64,
    pub n_obs: usize,
    pub n: usize,
    pub converged: bool,
    /// Condition number of `ΓᵀWΓ` at the estimate.
    pub identification_condition: f64,
    /// Whether `W` needed a ridge.
    pub ridged: bool,
}

impl GmmFit {
    pub fn log_alpha(&self) -> f64 {
        self.alpha_hat.ln()
    }
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![(a + b) / 2.0];
    }
    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
}

struct Grid {
    log_alpha: Vec<f64>,
    delta: Vec<f64>,
    h: Vec<Vector3<f64>>,
}

impl Grid {
    fn point(&self, idx: usize) -> [f64; 2] {
        [self.log_alpha[idx / self.delta.len()], self.delta[idx % self.delta.len()]]
    }

    /// Indices of the `k` smallest objective values.
    fn best(&self, w: &Matrix3<f64>, k: usize) -> Vec<usize> {
        let vals: Vec<f64> = self.h.iter().map(|h| quad(h, w)).collect();
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

fn quad(h: &Vector3<f64>, w: &Matrix3<f64>) -> f64 {
    let v = (h.transpose() * w * h)[(0, 0)];
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

struct Search {
    theta: [f64; 2],
    f: f64,
    converged: bool,
}

fn refine(
    ev: &MomentEvaluator,
    w: &Matrix3<f64>,
    starts: &[[f64; 2]],
    steps: &[f64; 2],
    nm: &NelderMead,
) -> Search {
    let mut best = Search {
        theta: starts[0],
        f: f64::INFINITY,
        converged: false,
    };
    for s in starts {
        let m = nm.minimize(|t| quad(&ev.h_bar(t[0].exp(), t[1]), w), s, steps);
        if m.f < best.f {
            best = Search {
                theta: [m.x[0], m.x[1]],
                f: m.f,
                converged: m.converged,
            };
        }
    }
    best
}

/// Two-step GMM over `(log α, δ)` with a coarse grid and multi-start Nelder–Mead.
pub fn two_step_gmm(data: &FeatureData, link: Link, opts: &GmmOptions) -> Result<GmmFit> {
    let n = data.n();
    let n_obs = data.n_observed();
    if n_obs == n {
        return Err(Error::InsufficientMissingness);
    }
    if n_obs < 10 {
        return Err(Error::InsufficientData(format!("{n_obs} observed cells; need 10")));
    }
    let ev = MomentEvaluator::new(data, link);
    let mut observed: Vec<f64> = (0..n).filter(|&i| data.r[i]).map(|i| data.y[i]).collect();
    observed.sort_by(f64::total_cmp);
    let k = opts.grid_points;
    let log_alpha = linspace(opts.log_alpha_range.0, opts.log_alpha_range.1, k);
    let delta: Vec<f64> = linspace(opts.delta_quantiles.0, opts.delta_quantiles.1, k)
        .into_iter()
        .map(|p| stats::quantile_sorted(&observed, p))
        .collect();
    let mut h = Vec::with_capacity(k * k);
    for &la in &log_alpha {
        for &d in &delta {
            h.push(ev.h_bar(la.exp(), d));
        }
    }
    let grid = Grid { log_alpha, delta, h };
    let la_step = if k > 1 {
        (opts.log_alpha_range.1 - opts.log_alpha_range.0) / (k - 1) as f64
    } else {
        0.5
    };
    let spread = observed[observed.len() - 1] - observed[0];
    let d_step = ((grid.delta[k - 1] - grid.delta[0]) / k.max(2) as f64)
        .max(1e-3 * spread.max(1.0));
    let steps = [la_step, d_step];

    let eye = Matrix3::identity();
    let starts1: Vec<[f64; 2]> = grid.best(&eye, opts.starts).into_iter().map(|i| grid.point(i)).collect();
    let s1 = refine(&ev, &eye, &starts1, &steps, &opts.nelder_mead);
    if !s1.f.is_finite() {
        return Err(Error::Convergence("first-step objective is not finite".into()));
    }
    let (a1, d1) = (s1.theta[0].exp(), s1.theta[1]);

    let (_, m1) = ev.h_bar_and_second_moment(a1, d1);
    let (w, ridged) = crate::linalg::spd_inverse_with_ridge(&nalgebra::DMatrix::from_fn(3, 3, |i, j| m1[(i, j)]), opts.max_condition)
        .ok_or_else(|| Error::Convergence("moment second-moment matrix is singular".into()))?;
    if ridged {
        log::warn!("weight matrix ill-conditioned; ridge added");
    }
    let w = Matrix3::from_fn(|i, j| w[(i, j)]);

    let mut starts2: Vec<[f64; 2]> = grid.best(&w, opts.starts).into_iter().map(|i| grid.point(i)).collect();
    starts2.push(s1.theta);
    let s2 = refine(&ev, &w, &starts2, &steps, &opts.nelder_mead);
    if !s2.f.is_finite() {
        return Err(Error::Convergence("second-step objective is not finite".into()));
    }
    let (alpha, delta) = (s2.theta[0].exp(), s2.theta[1]);
    let hb = ev.h_bar(alpha, delta);
    let j = (n as f64 * quad(&hb, &w)).max(0.0);
    let g = ev.gamma(alpha, delta);
    let info = g.transpose() * w * g;
    let info = (info + info.transpose()) * 0.5;
    let eig = info.symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut converged = s2.converged && alpha.is_finite();
    let v_hat = match info.try_inverse() {
        Some(v) if cond < 1e14 => v,
        _ => {
            converged = false;
            Matrix2::from_element(f64::NAN)
        }
    };
    Ok(GmmFit {
        alpha_hat: alpha,
        delta_hat: delta,
        first_step: (a1, d1),
        w,
        v_hat,
        j,
        n_obs,
        n,
        converged,
        identification_condition: cond,
        ridged,
    })
}

/// Write `(feature, alpha, delta, J, converged)`; missing fits are written as `NA`.
pub fn write_gmm_tsv(path: &Path, rows: &[(String, Option<&GmmFit>)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "feature\talpha\tdelta\tJ\tconverged")?;
    for (id, fit) in rows {
        match fit {
            Some(f) => writeln!(out, "{id}\t{}\t{}\t{}\t{}", f.alpha_hat, f.delta_hat, f.j, f.converged)?,
            None => writeln!(out, "{id}\tNA\tNA\tNA\tfalse")?,
        }
    }
    out.flush()?;
    Ok(())
}
