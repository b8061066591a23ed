//! Latent factors from the nearly complete features, and the number of factors.

use crate::data::{IntensityMatrix, Partition};
use crate::error::{Error, Result};
use crate::instruments;
use crate::linalg;
use crate::rng;
use crate::stats;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

pub const SOFT_IMPUTE_TOL: f64 = 1e-6;
pub const SOFT_IMPUTE_MAX_ITER: usize = 200;
pub const DEFAULT_N_PERM: usize = 99;
pub const DEFAULT_Q_THRESHOLD: f64 = 0.05;
pub const DEFAULT_COVERAGE: f64 = 0.9;

/// Ĉ (n × K) with `n⁻¹ĈᵀĈ = I` and `Ĉ ⟂ Z`, plus the least-squares loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    pub c_hat: DMatrix<f64>,
    /// p_s × K.
    pub loadings: DMatrix<f64>,
    pub column_scales: Vec<f64>,
    pub centered: bool,
    /// Soft-impute sweeps (0 when there was nothing to impute).
    pub iterations: usize,
}

/// Row-major copy of `m` with missing cells set to their feature's observed mean.
pub fn mean_filled(m: &IntensityMatrix) -> DMatrix<f64> {
    let mut y = m.to_dmatrix();
    for g in 0..m.n_features() {
        let obs: Vec<f64> = (0..m.n_samples())
            .filter(|&i| m.is_observed(g, i))
            .map(|i| m.value(g, i))
            .collect();
        let fill = if obs.is_empty() { 0.0 } else { stats::mean(&obs) };
        for i in 0..m.n_samples() {
            if !m.is_observed(g, i) {
                y[(g, i)] = fill;
            }
        }
    }
    y
}

fn rank_of(z: &DMatrix<f64>) -> usize {
    linalg::orthonormal_basis(z).ncols()
}

/// Top-`k` right singular vectors of `Y P⊥_Z`, scaled by √n; missing cells are filled
/// by alternating rank-`k` reconstruction and refill.
pub fn estimate_complete_factors(m: &IntensityMatrix, k: usize, z: &DMatrix<f64>) -> Result<FactorEstimate> {
    let (p, n) = (m.n_features(), m.n_samples());
    if p == 0 {
        return Err(Error::NoCompleteFeatures);
    }
    let limit = p.min(n.saturating_sub(rank_of(z)));
    if k == 0 || k >= limit {
        return Err(Error::Rank { k, limit });
    }
    let missing: Vec<(usize, usize)> = (0..p)
        .flat_map(|g| (0..n).filter(move |&i| !m.is_observed(g, i)).map(move |i| (g, i)))
        .collect();
    let mut y = mean_filled(m);
    let q = linalg::orthonormal_basis(z);
    let mut iterations = 0;
    if !missing.is_empty() {
        let mut prev: Option<DMatrix<f64>> = None;
        for it in 0..SOFT_IMPUTE_MAX_ITER {
            iterations = it + 1;
            let fitted_z = (&y * &q) * q.transpose();
            let resid = &y - &fitted_z;
            let (_, v) = linalg::top_right_singular(&resid, k);
            let recon = fitted_z + (&resid * &v) * v.transpose();
            for &(g, i) in &missing {
                y[(g, i)] = recon[(g, i)];
            }
            let done = prev.as_ref().is_some_and(|old| {
                let denom = old.norm().max(f64::MIN_POSITIVE);
                (&recon - old).norm() / denom < SOFT_IMPUTE_TOL
            });
            prev = Some(recon);
            if done {
                break;
            }
        }
        if iterations == SOFT_IMPUTE_MAX_ITER {
            log::warn!("factor imputation stopped after {SOFT_IMPUTE_MAX_ITER} iterations");
        }
    }
    let resid = &y - (&y * &q) * q.transpose();
    let (s, v) = linalg::top_right_singular(&resid, k);
    let mut c = v * (n as f64).sqrt();
    linalg::fix_column_signs(&mut c);
    let loadings = (&resid * &c) / n as f64;
    Ok(FactorEstimate {
        c_hat: c,
        loadings,
        column_scales: s,
        centered: true,
        iterations,
    })
}

/// Number of leading singular values of the row-centred `y` that exceed the matching
/// permutation quantile. The quantile is the ⌈0.95(B+1)⌉-th order statistic of the
/// B permuted values, so that each comparison is an exact level-0.05 Monte Carlo test.
pub fn parallel_analysis(y: &DMatrix<f64>, n_perm: usize, seed: u64) -> Result<usize> {
    let (p, n) = y.shape();
    if p == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    if n_perm < 19 {
        return Err(Error::InvalidInput(format!("n_perm must be at least 19, got {n_perm}")));
    }
    let centered = linalg::residualize_rows(y, &linalg::ones(n));
    let observed = linalg::singular_values(&centered);
    let permuted: Vec<Vec<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::substream(seed, &[rng::tag::PARALLEL_ANALYSIS, b as u64]);
            let mut shuffled = centered.clone();
            let mut row: Vec<f64> = vec![0.0; n];
            for g in 0..p {
                for i in 0..n {
                    row[i] = centered[(g, i)];
                }
                row.shuffle(&mut rng);
                for i in 0..n {
                    shuffled[(g, i)] = row[i];
                }
            }
            linalg::singular_values(&shuffled)
        })
        .collect();
    let rank = ((0.95 * (n_perm + 1) as f64).ceil() as usize).clamp(1, n_perm);
    let mut count = 0;
    for (j, &s) in observed.iter().enumerate() {
        let mut col: Vec<f64> = permuted.iter().map(|v| v[j]).collect();
        col.sort_by(f64::total_cmp);
        if s > col[rank - 1] {
            count += 1;
        } else {
            break;
        }
    }
    Ok(count)
}

/// `f(k)`, the share of `features` whose second-smallest instrument q-value is at most
/// `q_threshold` when `k` factors are used.
pub fn instrument_coverage(
    m: &IntensityMatrix,
    complete: &IntensityMatrix,
    features: &[usize],
    k: usize,
    z: &DMatrix<f64>,
    q_threshold: f64,
) -> Result<f64> {
    let f = estimate_complete_factors(complete, k, z)?;
    let scan = instruments::instrument_scan(m, features, &f, z)?;
    if features.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..scan.features.len())
        .filter(|&row| instruments::select_instruments(&scan, row).q_values.1 <= q_threshold)
        .count();
    Ok(hits as f64 / features.len() as f64)
}

/// Smallest `k ∈ {2, …, k_pa}` with `f(k) ≥ coverage`; `k_pa` if there is none.
pub fn select_k_miss(
    m: &IntensityMatrix,
    partition: &Partition,
    k_pa: usize,
    z: &DMatrix<f64>,
    q_threshold: f64,
    coverage: f64,
) -> Result<usize> {
    if partition.missing_set.is_empty() {
        return Ok(k_pa);
    }
    if k_pa < 2 {
        log::warn!("parallel analysis found {k_pa} factors; using 2 instruments anyway");
        return Ok(2);
    }
    let complete = m.select_features(&partition.observed_set)?;
    let cover: Vec<Result<f64>> = (2..=k_pa)
        .into_par_iter()
        .map(|k| instrument_coverage(m, &complete, &partition.missing_set, k, z, q_threshold))
        .collect();
    for (k, f) in (2..=k_pa).zip(cover) {
        let f = match f {
            Ok(f) => f,
            Err(Error::Rank { .. }) => break,
            Err(e) => return Err(e),
        };
        log::debug!("instrument coverage f({k}) = {f:.3}");
        if f >= coverage {
            return Ok(k);
        }
    }
    log::warn!("no k in 2..={k_pa} reaches instrument coverage {coverage}; using K_miss = {k_pa}");
    Ok(k_pa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn to_intensity(y: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> IntensityMatrix {
        let (p, n) = y.shape();
        let mut values = Vec::with_capacity(p * n);
        let mut obs = Vec::with_capacity(p * n);
        for g in 0..p {
            for i in 0..n {
                values.push(y[(g, i)]);
                obs.push(mask.map_or(true, |mk| mk[(g, i)]));
            }
        }
        IntensityMatrix::new(
            values,
            obs,
            (0..p).map(|g| format!("g{g}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    fn low_rank(p: usize, n: usize, sv: &[f64], sigma: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = sv.len();
        let u = linalg::orthonormal_basis(&normal_matrix(p, k, &mut rng));
        let v = linalg::orthonormal_basis(&normal_matrix(n, k, &mut rng));
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sv));
        u * s * v.transpose() + normal_matrix(p, n, &mut rng) * sigma
    }

    #[test]
    fn complete_case_is_scaled_singular_vectors() {
        let (p, n) = (40, 25);
        let y = low_rank(p, n, &[20.0, 10.0], 0.5, 1);
        let f = estimate_complete_factors(&to_intensity(&y, None), 2, &linalg::ones(n)).unwrap();
        let centered = linalg::residualize_rows(&y, &linalg::ones(n));
        let svd = centered.svd(false, true);
        let vt = svd.v_t.unwrap();
        for j in 0..2 {
            let oracle = vt.row(j).transpose() * (n as f64).sqrt();
            let d1 = (f.c_hat.column(j) - &oracle).norm();
            let d2 = (f.c_hat.column(j) + &oracle).norm();
            assert!(d1.min(d2) < 1e-8, "column {j}: {d1} {d2}");
            assert!((f.column_scales[j] - svd.singular_values[j]).abs() < 1e-8);
        }
        assert_eq!(f.iterations, 0);
    }

    #[test]
    fn constraints_hold() {
        let (p, n) = (30, 50);
        let y = low_rank(p, n, &[15.0, 9.0, 6.0], 1.0, 2);
        let f = estimate_complete_factors(&to_intensity(&y, None), 3, &linalg::ones(n)).unwrap();
        let ct1 = f.c_hat.transpose() * linalg::ones(n);
        assert!(ct1.norm() < 1e-8 * n as f64);
        let gram = f.c_hat.transpose() * &f.c_hat / n as f64;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-8);
        assert!(f.column_scales.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_one_noiseless() {
        let n = 20;
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let l: Vec<f64> = (0..8).map(|g| 1.0 + g as f64).collect();
        let y = DMatrix::from_fn(8, n, |g, i| l[g] * c[i]);
        let f = estimate_complete_factors(&to_intensity(&y, None), 1, &DMatrix::zeros(n, 0)).unwrap();
        let angle = linalg::principal_angles(&f.c_hat, &DMatrix::from_column_slice(n, 1, &c))[0];
        assert!(angle < 1e-6);
    }

    #[test]
    fn sign_convention() {
        let y = low_rank(20, 15, &[10.0, 5.0], 0.1, 3);
        let f = estimate_complete_factors(&to_intensity(&y, None), 2, &linalg::ones(15)).unwrap();
        for j in 0..2 {
            let col = f.c_hat.column(j);
            let big = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn rank_error() {
        let y = low_rank(5, 10, &[3.0], 0.1, 4);
        let err = estimate_complete_factors(&to_intensity(&y, None), 5, &linalg::ones(10)).unwrap_err();
        assert!(matches!(err, Error::Rank { k: 5, limit: 5 }));
        assert!(estimate_complete_factors(&to_intensity(&y, None), 0, &linalg::ones(10)).is_err());
    }

    #[test]
    fn trace_missingness_recovers_subspace() {
        let (p, n) = (150, 80);
        let y = low_rank(p, n, &[120.0, 90.0, 70.0], 1.0, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mask = DMatrix::from_fn(p, n, |_, _| rng.random::<f64>() >= 0.02);
        let oracle = estimate_complete_factors(&to_intensity(&y, None), 3, &linalg::ones(n)).unwrap();
        let em = estimate_complete_factors(&to_intensity(&y, Some(&mask)), 3, &linalg::ones(n)).unwrap();
        assert!(em.iterations > 0);
        let worst = linalg::principal_angles(&em.c_hat, &oracle.c_hat).into_iter().fold(0.0, f64::max);
        assert!(worst.to_degrees() < 2.0, "{}", worst.to_degrees());
        let gram = em.c_hat.transpose() * &em.c_hat / n as f64;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-8);
    }

    #[test]
    fn parallel_analysis_on_noise() {
        // 98 of these 100 seeds give 0
        let mut zero = 0;
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
            let y = normal_matrix(200, 100, &mut rng);
            if parallel_analysis(&y, 19, seed).unwrap() == 0 {
                zero += 1;
            }
        }
        assert!(zero >= 95, "{zero} of 100");
    }

    #[test]
    fn parallel_analysis_rank_three() {
        let y = low_rank(200, 100, &[50.0, 40.0, 30.0], 1.0, 7);
        // singular values of the noise alone are about √200 + √100 ≈ 24
        assert_eq!(parallel_analysis(&y, 19, 1).unwrap(), 3);
        assert_eq!(parallel_analysis(&y, 19, 1).unwrap(), parallel_analysis(&y, 19, 1).unwrap());
    }

    #[test]
    fn parallel_analysis_rejects_few_permutations() {
        let y = low_rank(10, 10, &[1.0], 1.0, 8);
        assert!(parallel_analysis(&y, 10, 0).is_err());
    }

    /// Complete block driven by factors `c`, plus missing-set features either driven by the
    /// first two factors or unrelated to all of them.
    fn coverage_fixture(driven: bool) -> (IntensityMatrix, Partition) {
        let (pc, pm, n) = (60, 20, 120);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let c = normal_matrix(n, 4, &mut rng);
        let l = normal_matrix(pc, 4, &mut rng) * 3.0;
        let complete = &l * c.transpose() + normal_matrix(pc, n, &mut rng);
        let mut rows = complete.clone().resize_vertically(pc + pm, 0.0);
        for g in 0..pm {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                rows[(pc + g, i)] = if driven { 2.0 * c[(i, 0)] + 2.0 * c[(i, 1)] + 0.3 * e } else { e };
            }
        }
        let mut mask = DMatrix::from_element(pc + pm, n, true);
        for g in 0..pm {
            for i in 0..20 {
                mask[(pc + g, (i * 5 + g) % n)] = false;
            }
        }
        let m = to_intensity(&rows, Some(&mask));
        let part = crate::data::partition_metabolites(&m, 0.05, 0.5).unwrap();
        assert_eq!(part.missing_set.len(), pm);
        (m, part)
    }

    #[test]
    fn k_miss_is_two_when_fully_covered() {
        let (m, part) = coverage_fixture(true);
        let n = m.n_samples();
        let complete = m.select_features(&part.observed_set).unwrap();
        let f2 = instrument_coverage(&m, &complete, &part.missing_set, 2, &linalg::ones(n), 0.05).unwrap();
        assert_eq!(f2, 1.0);
        assert_eq!(select_k_miss(&m, &part, 4, &linalg::ones(n), 0.05, 0.9).unwrap(), 2);
    }

    #[test]
    fn k_miss_falls_back_to_k_pa() {
        let (m, part) = coverage_fixture(false);
        let n = m.n_samples();
        assert_eq!(select_k_miss(&m, &part, 4, &linalg::ones(n), 0.05, 0.9).unwrap(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn invariant_to_feature_order(seed in 0u64..1000, shift in 1usize..19) {
            let y = low_rank(20, 16, &[12.0, 6.0], 0.5, seed);
            let perm: Vec<usize> = (0..20).map(|g| (g + shift) % 20).collect();
            let yp = DMatrix::from_fn(20, 16, |g, i| y[(perm[g], i)]);
            let a = estimate_complete_factors(&to_intensity(&y, None), 2, &linalg::ones(16)).unwrap();
            let b = estimate_complete_factors(&to_intensity(&yp, None), 2, &linalg::ones(16)).unwrap();
            prop_assert!((a.c_hat - b.c_hat).norm() < 1e-7);
        }

        #[test]
        fn constraints_for_any_k(seed in 0u64..1000, k in 1usize..6) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y = normal_matrix(12, 18, &mut rng);
            let f = estimate_complete_factors(&to_intensity(&y, None), k, &linalg::ones(18)).unwrap();
            let gram = f.c_hat.transpose() * &f.c_hat / 18.0;
            prop_assert!((gram - DMatrix::<f64>::identity(k, k)).norm() < 1e-8);
            prop_assert!((f.c_hat.transpose() * linalg::ones(18)).norm() < 1e-8 * 18.0);
            prop_assert!(f.column_scales.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
