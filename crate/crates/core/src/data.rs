//! Observed intensities, the observation mask, design matrices and the feature partition.
//!
//! Values are assumed to be already log-transformed; the loader performs no
//! transformation. Missing cells hold a `0.0` sentinel so that masked arithmetic
//! (multiplying by `r_gi`) contributes exact zeros.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

/// p × n log-intensity matrix with its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    values: Vec<f64>,
    mask: Vec<bool>,
    feature_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl IntensityMatrix {
    /// Build from row-major `values` (feature-major); `mask[g * n + i]` is `true` when observed.
    /// Entries at unobserved cells are replaced by the sentinel.
    pub fn new(
        mut values: Vec<f64>,
        mask: Vec<bool>,
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let p = feature_ids.len();
        let n = sample_ids.len();
        if p < 1 {
            return Err(Error::InvalidInput("matrix needs at least one feature".into()));
        }
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "matrix needs at least 3 samples, got {n}"
            )));
        }
        if values.len() != p * n || mask.len() != p * n {
            return Err(Error::InvalidInput(format!(
                "expected {} cells, got {} values and {} mask entries",
                p * n,
                values.len(),
                mask.len()
            )));
        }
        let mut seen = HashSet::with_capacity(p);
        for id in &feature_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (k, (v, &r)) in values.iter_mut().zip(&mask).enumerate() {
            if r {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: k / n + 1,
                        column: k % n + 1,
                        message: format!("non-finite observed value {v}"),
                    });
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(Self {
            values,
            mask,
            feature_ids,
            sample_ids,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Intensities of feature `g` (sentinel 0.0 at missing cells).
    pub fn row(&self, g: usize) -> &[f64] {
        let n = self.n_samples();
        &self.values[g * n..(g + 1) * n]
    }

    pub fn mask_row(&self, g: usize) -> &[bool] {
        let n = self.n_samples();
        &self.mask[g * n..(g + 1) * n]
    }

    /// Observation indicators of feature `g` as 0/1 floats.
    pub fn indicator_row(&self, g: usize) -> Vec<f64> {
        self.mask_row(g).iter().map(|&r| if r { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_observed(&self, g: usize, i: usize) -> bool {
        self.mask[g * self.n_samples() + i]
    }

    pub fn value(&self, g: usize, i: usize) -> f64 {
        self.values[g * self.n_samples() + i]
    }

    pub fn missing_count(&self, g: usize) -> usize {
        self.mask_row(g).iter().filter(|&&r| !r).count()
    }

    pub fn total_missing_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&r| !r).count() as f64 / self.mask.len() as f64
    }

    /// Submatrix with the listed features, in the given order.
    pub fn select_features(&self, rows: &[usize]) -> Result<Self> {
        let n = self.n_samples();
        let mut values = Vec::with_capacity(rows.len() * n);
        let mut mask = Vec::with_capacity(rows.len() * n);
        let mut ids = Vec::with_capacity(rows.len());
        for &g in rows {
            values.extend_from_slice(self.row(g));
            mask.extend_from_slice(self.mask_row(g));
            ids.push(self.feature_ids[g].clone());
        }
        Self::new(values, mask, ids, self.sample_ids.clone())
    }

    /// Dense p × n copy of the values (sentinels included).
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_features(), self.n_samples(), &self.values)
    }

    /// Dense p × n copy of the mask as 0/1.
    pub fn mask_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.n_features(),
            self.n_samples(),
            self.mask.iter().map(|&r| if r { 1.0 } else { 0.0 }),
        )
    }

    /// SHA-256 over ids, mask and the bit patterns of the observed values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_features() as u64).to_le_bytes());
        h.update((self.n_samples() as u64).to_le_bytes());
        for id in self.feature_ids.iter().chain(&self.sample_ids) {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        for (v, &r) in self.values.iter().zip(&self.mask) {
            h.update([r as u8]);
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Delimiter selection for tabular files.
#[derive(Debug, Clone, Copy, Default)]
pub struct TableFormat {
    /// Explicit delimiter; when `None` it is chosen from the extension
    /// (`.csv` → comma, anything else → tab).
    pub delimiter: Option<u8>,
}

impl TableFormat {
    pub fn delimiter_for(&self, path: &Path) -> u8 {
        self.delimiter.unwrap_or_else(|| {
            match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
                Some(ext) if ext == "csv" => b',',
                _ => b'\t',
            }
        })
    }
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA" || t == "NaN"
}

/// Read a delimited table: header of sample ids (first cell is a label for the id column),
/// one row per feature with its id in the first column.
pub fn load_intensity_matrix(path: &Path, format: TableFormat) -> Result<IntensityMatrix> {
    let delim = format.delimiter_for(path);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or(Error::EmptyInput)??;
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "header needs an id column and at least one sample".into(),
        });
    }
    let sample_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = sample_ids.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut feature_ids = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                row,
                column: rec.len(),
                message: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if is_missing_token(cell) {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-numeric cell `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: c + 1,
                        message: format!("non-finite cell `{cell}`"),
                    });
                }
                values.push(v);
                mask.push(true);
            }
        }
        feature_ids.push(id);
    }
    IntensityMatrix::new(values, mask, feature_ids, sample_ids)
}

/// Write the matrix in the format read by [`load_intensity_matrix`]; missing cells as `NA`.
/// Values use the shortest representation that round-trips exactly.
pub fn write_intensity_matrix(path: &Path, m: &IntensityMatrix, format: TableFormat) -> Result<()> {
    let delim = format.delimiter_for(path) as char;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "feature")?;
    for s in m.sample_ids() {
        write!(out, "{delim}{s}")?;
    }
    writeln!(out)?;
    for g in 0..m.n_features() {
        write!(out, "{}", m.feature_ids()[g])?;
        for i in 0..m.n_samples() {
            if m.is_observed(g, i) {
                write!(out, "{delim}{}", m.value(g, i))?;
            } else {
                write!(out, "{delim}NA")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Write the 0/1 observation mask with the same layout as the matrix.
pub fn write_mask(path: &Path, m: &IntensityMatrix, format: TableFormat) -> Result<()> {
    let delim = format.delimiter_for(path) as char;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "feature")?;
    for s in m.sample_ids() {
        write!(out, "{delim}{s}")?;
    }
    writeln!(out)?;
    for g in 0..m.n_features() {
        write!(out, "{}", m.feature_ids()[g])?;
        for &r in m.mask_row(g) {
            write!(out, "{delim}{}", r as u8)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Observed covariates: interest block, nuisance block (always with one intercept column)
/// and instrument covariates used to center factor estimates.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub x_interest: DMatrix<f64>,
    pub x_nuisance: DMatrix<f64>,
    pub z_instr: DMatrix<f64>,
    pub interest_names: Vec<String>,
    pub nuisance_names: Vec<String>,
}

fn is_ones_column(m: &DMatrix<f64>, j: usize) -> bool {
    m.column(j).iter().all(|&v| v == 1.0)
}

impl DesignMatrices {
    /// Validates the block shapes, the single intercept column and full column rank of
    /// `(X_interest | X_nuisance)`. `z_instr` defaults to the intercept.
    pub fn new(
        x_interest: DMatrix<f64>,
        x_nuisance: DMatrix<f64>,
        z_instr: Option<DMatrix<f64>>,
        interest_names: Vec<String>,
        nuisance_names: Vec<String>,
    ) -> Result<Self> {
        let n = x_interest.nrows();
        if x_nuisance.nrows() != n {
            return Err(Error::InvalidInput("design blocks differ in row count".into()));
        }
        if x_interest.ncols() == 0 {
            return Err(Error::InvalidInput("no covariates of interest".into()));
        }
        let ones = (0..x_nuisance.ncols()).filter(|&j| is_ones_column(&x_nuisance, j)).count();
        if ones != 1 {
            return Err(Error::InvalidInput(format!(
                "nuisance block must contain the all-ones column exactly once (found {ones})"
            )));
        }
        if (0..x_interest.ncols()).any(|j| is_ones_column(&x_interest, j)) {
            return Err(Error::InvalidInput("intercept belongs to the nuisance block".into()));
        }
        let full = linalg::hstack(&[&x_interest, &x_nuisance]);
        let rank = linalg::orthonormal_basis(&full).ncols();
        if rank != full.ncols() {
            return Err(Error::InvalidInput(format!(
                "design has rank {rank} < {} columns",
                full.ncols()
            )));
        }
        let z_instr = z_instr.unwrap_or_else(|| linalg::ones(n));
        if z_instr.nrows() != n {
            return Err(Error::InvalidInput("instrument covariates differ in row count".into()));
        }
        Ok(Self {
            x_interest,
            x_nuisance,
            z_instr,
            interest_names,
            nuisance_names,
        })
    }

    /// Interest covariates plus an intercept-only nuisance block.
    pub fn with_intercept(x_interest: DMatrix<f64>, interest_names: Vec<String>) -> Result<Self> {
        let n = x_interest.nrows();
        Self::new(x_interest, linalg::ones(n), None, interest_names, vec!["intercept".into()])
    }

    pub fn n_samples(&self) -> usize {
        self.x_interest.nrows()
    }

    pub fn d_interest(&self) -> usize {
        self.x_interest.ncols()
    }

    /// `(X_interest | X_nuisance)`.
    pub fn full(&self) -> DMatrix<f64> {
        linalg::hstack(&[&self.x_interest, &self.x_nuisance])
    }
}

/// Load a design table (one row per sample, header of covariate names, first column
/// sample ids). Rows are aligned to `sample_ids`. Columns named in `interest` form the
/// interest block; the rest, plus an intercept if none is present, form the nuisance block.
pub fn load_design(
    path: &Path,
    format: TableFormat,
    sample_ids: &[String],
    interest: &[String],
) -> Result<DesignMatrices> {
    let delim = format.delimiter_for(path);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = records.next().ok_or(Error::EmptyInput)??;
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::InvalidInput("design has no covariate columns".into()));
    }
    let mut rows: std::collections::HashMap<String, Vec<f64>> = Default::default();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse {
                row: r + 2,
                column: rec.len(),
                message: format!("expected {} fields", names.len() + 1),
            });
        }
        let vals = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row: r + 2,
                    column: c + 2,
                    message: format!("non-numeric design cell `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.insert(rec[0].trim().to_string(), vals);
    }
    let interest: Vec<String> = if interest.is_empty() {
        vec![names[0].clone()]
    } else {
        interest.to_vec()
    };
    let mut int_idx = Vec::new();
    for name in &interest {
        let j = names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidInput(format!("design has no column `{name}`")))?;
        int_idx.push(j);
    }
    let nui_idx: Vec<usize> = (0..names.len()).filter(|j| !int_idx.contains(j)).collect();
    let n = sample_ids.len();
    let mut table = Vec::with_capacity(n);
    for s in sample_ids {
        table.push(
            rows.get(s)
                .ok_or_else(|| Error::InvalidInput(format!("design lacks sample `{s}`")))?,
        );
    }
    let x_interest = DMatrix::from_fn(n, int_idx.len(), |i, j| table[i][int_idx[j]]);
    let mut x_nuisance = DMatrix::from_fn(n, nui_idx.len(), |i, j| table[i][nui_idx[j]]);
    let mut nuisance_names: Vec<String> = nui_idx.iter().map(|&j| names[j].clone()).collect();
    if !(0..x_nuisance.ncols()).any(|j| is_ones_column(&x_nuisance, j)) {
        x_nuisance = linalg::hstack(&[&x_nuisance, &linalg::ones(n)]);
        nuisance_names.push("intercept".into());
    }
    DesignMatrices::new(x_interest, x_nuisance, None, interest, nuisance_names)
}

/// Write a design table loadable by [`load_design`].
pub fn write_design(path: &Path, design: &DesignMatrices, sample_ids: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let full = design.full();
    write!(out, "sample")?;
    for name in design.interest_names.iter().chain(&design.nuisance_names) {
        write!(out, "\t{name}")?;
    }
    writeln!(out)?;
    for (i, s) in sample_ids.iter().enumerate() {
        write!(out, "{s}")?;
        for j in 0..full.ncols() {
            write!(out, "\t{}", full[(i, j)])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Membership of a feature in the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureClass {
    Observed,
    Missing,
    Dropped,
}

/// Split of the features by missing fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub observed_set: Vec<usize>,
    pub missing_set: Vec<usize>,
    pub dropped_set: Vec<usize>,
    pub classes: Vec<FeatureClass>,
}

impl Partition {
    pub fn class(&self, g: usize) -> FeatureClass {
        self.classes[g]
    }
}

/// Largest count `m` with `m / n <= frac` (correctly rounded division, so it agrees with
/// the exact comparison against the decimal fraction).
pub fn count_threshold(frac: f64, n: usize) -> usize {
    let mut m = (frac * n as f64).floor().max(0.0) as usize;
    m = m.min(n);
    while m < n && ((m + 1) as f64) / (n as f64) <= frac {
        m += 1;
    }
    while m > 0 && (m as f64) / (n as f64) > frac {
        m -= 1;
    }
    m
}

pub const DEFAULT_EPS_MISS: f64 = 0.05;
pub const DEFAULT_MAX_MISS: f64 = 0.5;

/// Assign each feature by its exact missing fraction: `≤ eps_miss` observed,
/// `(eps_miss, max_miss]` missing, above `max_miss` dropped.
pub fn partition_metabolites(m: &IntensityMatrix, eps_miss: f64, max_miss: f64) -> Result<Partition> {
    if !(0.0 <= eps_miss && eps_miss < max_miss && max_miss <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 <= eps_miss < max_miss <= 1, got {eps_miss}, {max_miss}"
        )));
    }
    let n = m.n_samples();
    let lo = count_threshold(eps_miss, n);
    let hi = count_threshold(max_miss, n);
    let mut part = Partition {
        observed_set: vec![],
        missing_set: vec![],
        dropped_set: vec![],
        classes: Vec::with_capacity(m.n_features()),
    };
    for g in 0..m.n_features() {
        let miss = m.missing_count(g);
        let class = if miss <= lo {
            part.observed_set.push(g);
            FeatureClass::Observed
        } else if miss <= hi {
            part.missing_set.push(g);
            FeatureClass::Missing
        } else {
            part.dropped_set.push(g);
            FeatureClass::Dropped
        };
        part.classes.push(class);
    }
    if part.observed_set.is_empty() {
        return Err(Error::NoCompleteFeatures);
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(ext: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_na_gives_one_zero_in_mask() {
        let f = write_tmp(".tsv", "id\ts1\ts2\ts3\nm1\t1.5\tNA\t2\nm2\t3\t4\t5\n");
        let m = load_intensity_matrix(f.path(), TableFormat::default()).unwrap();
        assert_eq!(m.n_features(), 2);
        assert_eq!(m.n_samples(), 3);
        let zeros: Vec<(usize, usize)> = (0..2)
            .flat_map(|g| (0..3).map(move |i| (g, i)))
            .filter(|&(g, i)| !m.is_observed(g, i))
            .collect();
        assert_eq!(zeros, vec![(0, 1)]);
        assert_eq!(m.value(0, 1), 0.0);
    }

    #[test]
    fn all_missing_encodings_are_recognised() {
        let f = write_tmp(".csv", "id,a,b,c,d\nx,,NA,NaN,1\n");
        let m = load_intensity_matrix(f.path(), TableFormat::default()).unwrap();
        assert_eq!(m.missing_count(0), 3);
    }

    #[test]
    fn duplicate_feature_id_is_rejected() {
        let f = write_tmp(".tsv", "id\ts1\ts2\ts3\nm1\t1\t2\t3\nm1\t3\t4\t5\n");
        assert!(matches!(
            load_intensity_matrix(f.path(), TableFormat::default()),
            Err(Error::DuplicateId(id)) if id == "m1"
        ));
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let f = write_tmp(".tsv", "id\ts1\ts2\ts3\nm1\t1\t2\n");
        assert!(matches!(
            load_intensity_matrix(f.path(), TableFormat::default()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let f = write_tmp(".tsv", "id\ts1\ts2\ts3\nm1\t1\t2\t3\nm2\t1\tabc\t3\n");
        match load_intensity_matrix(f.path(), TableFormat::default()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn delimiter_override() {
        let f = write_tmp(".txt", "id;s1;s2;s3\nm1;1;2;3\n");
        let m = load_intensity_matrix(f.path(), TableFormat { delimiter: Some(b';') }).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn too_few_samples_rejected() {
        let f = write_tmp(".tsv", "id\ts1\ts2\nm1\t1\t2\n");
        assert!(load_intensity_matrix(f.path(), TableFormat::default()).is_err());
    }

    fn matrix_from(miss_counts: &[usize], n: usize) -> IntensityMatrix {
        let p = miss_counts.len();
        let mut mask = vec![true; p * n];
        for (g, &m) in miss_counts.iter().enumerate() {
            for i in 0..m {
                mask[g * n + i] = false;
            }
        }
        IntensityMatrix::new(
            vec![1.0; p * n],
            mask,
            (0..p).map(|g| format!("f{g}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn partition_by_exact_fraction() {
        // n = 100: 0 and 5 missing -> observed, 6 and 50 -> missing, 60 -> dropped
        let m = matrix_from(&[0, 5, 6, 50, 51, 60], 100);
        let part = partition_metabolites(&m, DEFAULT_EPS_MISS, DEFAULT_MAX_MISS).unwrap();
        assert_eq!(part.observed_set, vec![0, 1]);
        assert_eq!(part.missing_set, vec![2, 3]);
        assert_eq!(part.dropped_set, vec![4, 5]);
    }

    #[test]
    fn partition_needs_complete_features() {
        let m = matrix_from(&[10, 20], 50);
        assert!(matches!(
            partition_metabolites(&m, 0.05, 0.5),
            Err(Error::NoCompleteFeatures)
        ));
    }

    #[test]
    fn count_threshold_has_no_float_slack() {
        // 0.29 * 100 = 28.999999999999996 in floating point
        assert_eq!(count_threshold(0.29, 100), 29);
        assert_eq!(count_threshold(0.05, 600), 30);
        assert_eq!(count_threshold(0.0, 10), 0);
        assert_eq!(count_threshold(1.0, 10), 10);
        for n in 3..200 {
            for k in 0..=20 {
                let frac = k as f64 / 20.0;
                let t = count_threshold(frac, n);
                // exact rational check: t/n <= k/20 < (t+1)/n
                assert!(t * 20 <= k * n);
                assert!(t == n || (t + 1) * 20 > k * n);
            }
        }
    }

    #[test]
    fn design_requires_single_intercept() {
        let n = 6;
        let xi = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
        let two_ones = linalg::hstack(&[&linalg::ones(n), &linalg::ones(n)]);
        assert!(DesignMatrices::new(xi.clone(), two_ones, None, vec!["x".into()], vec![]).is_err());
        assert!(DesignMatrices::with_intercept(xi, vec!["x".into()]).is_ok());
    }

    #[test]
    fn design_rank_checked() {
        let n = 6;
        let xi = linalg::hstack(&[
            &DMatrix::from_fn(n, 1, |i, _| i as f64),
            &DMatrix::from_fn(n, 1, |i, _| 2.0 * i as f64),
        ]);
        assert!(DesignMatrices::with_intercept(xi, vec!["a".into(), "b".into()]).is_err());
    }
}
