//! Derivative-free local minimization.

/// Nelder–Mead settings.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    /// Stop when the simplex function values differ by at most `ftol · (1 + |f_best|)`
    /// and the simplex diameter is below `xtol`.
    pub ftol: f64,
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            xtol: 1e-7,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` from `x0` with an axis-aligned initial simplex of the given `steps`.
    /// Non-finite function values are treated as `+∞`.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64], steps: &[f64]) -> Minimum {
        let d = x0.len();
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
        for j in 0..d {
            let mut p = x0.to_vec();
            p[j] += steps[j];
            pts.push(p);
        }
        let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut iter = 0;
        let mut converged = false;
        let mut order: Vec<usize> = (0..=d).collect();
        loop {
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            let best = order[0];
            let worst = order[d];
            let fdiff = vals[worst] - vals[best];
            let diam = pts
                .iter()
                .map(|p| p.iter().zip(&pts[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if fdiff <= self.ftol * (1.0 + vals[best].abs()) && diam <= self.xtol {
                converged = true;
                break;
            }
            if iter >= self.max_iter {
                break;
            }
            iter += 1;
            let second = order[d - 1];
            let mut centroid = vec![0.0; d];
            for &k in &order[..d] {
                for j in 0..d {
                    centroid[j] += pts[k][j] / d as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                (0..d).map(|j| centroid[j] + t * (pts[worst][j] - centroid[j])).collect()
            };
            let xr = along(-alpha);
            let fr = eval(&xr);
            if fr < vals[best] {
                let xe = along(-alpha * gamma);
                let fe = eval(&xe);
                if fe < fr {
                    pts[worst] = xe;
                    vals[worst] = fe;
                } else {
                    pts[worst] = xr;
                    vals[worst] = fr;
                }
                continue;
            }
            if fr < vals[second] {
                pts[worst] = xr;
                vals[worst] = fr;
                continue;
            }
            let (xc, fc) = if fr < vals[worst] {
                let xc = along(-alpha * rho);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < vals[worst].min(fr) {
                pts[worst] = xc;
                vals[worst] = fc;
                continue;
            }
            let xb = pts[best].clone();
            for &k in &order[1..] {
                for j in 0..d {
                    pts[k][j] = xb[j] + sigma * (pts[k][j] - xb[j]);
                }
                vals[k] = eval(&pts[k]);
            }
        }
        let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        Minimum {
            x: pts[best].clone(),
            f: vals[best],
            iterations: iter,
            converged,
        }
    }
}
