//! Per-feature choice of the two factor columns used as instruments.

use crate::data::IntensityMatrix;
use crate::error::Result;
use crate::factor::FactorEstimate;
use crate::linalg;
use crate::stats;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// p- and q-values of every (feature, factor column) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentScan {
    /// Feature indices (into the scanned matrix) that have a row in the tables.
    pub features: Vec<usize>,
    pub p_values: Vec<Vec<f64>>,
    pub q_values: Vec<Vec<f64>>,
    /// Features skipped for having fewer than `K + 5` observed cells.
    pub excluded: Vec<usize>,
}

impl InstrumentScan {
    pub fn row_of(&self, g: usize) -> Option<usize> {
        self.features.iter().position(|&f| f == g)
    }
}

/// Regress each feature in `features` on `(Z | Ĉ_k)` over its observed cells, for every
/// column `k`; q-values are computed per column across features.
pub fn instrument_scan(
    m: &IntensityMatrix,
    features: &[usize],
    factors: &FactorEstimate,
    z: &DMatrix<f64>,
) -> Result<InstrumentScan> {
    let k = factors.c_hat.ncols();
    let min_obs = k + 5;
    let (keep, excluded): (Vec<usize>, Vec<usize>) = features
        .iter()
        .partition(|&&g| m.n_samples() - m.missing_count(g) >= min_obs);
    if !excluded.is_empty() {
        log::warn!("{} features have fewer than {min_obs} observed cells; excluded from the scan", excluded.len());
    }
    let designs: Vec<DMatrix<f64>> = (0..k)
        .map(|j| linalg::hstack(&[z, &factors.c_hat.columns(j, 1).into_owned()]))
        .collect();
    let rows: Vec<Vec<f64>> = keep
        .par_iter()
        .map(|&g| {
            designs
                .iter()
                .map(|d| match stats::ols_masked(m.row(g), m.mask_row(g), d) {
                    Ok(fit) => *fit.p_values.last().expect("column"),
                    Err(_) => 1.0,
                })
                .collect()
        })
        .collect();
    let mut q_values = vec![vec![0.0; k]; rows.len()];
    if !rows.is_empty() {
        for j in 0..k {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let q = stats::storey_qvalues(&col)?;
            for (i, v) in q.into_iter().enumerate() {
                q_values[i][j] = v;
            }
        }
    }
    Ok(InstrumentScan {
        features: keep,
        p_values: rows,
        q_values,
        excluded,
    })
}

/// The two instruments of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentAssignment {
    pub feature: usize,
    /// Zero-based factor columns `(g₁, g₂)`.
    pub indices: (usize, usize),
    pub q_values: (f64, f64),
    pub p_value_row: Vec<f64>,
}

/// Columns with the two smallest q-values; ties go to the smaller p-value, then the
/// smaller column index.
pub fn select_instruments(scan: &InstrumentScan, row: usize) -> InstrumentAssignment {
    let q = &scan.q_values[row];
    let p = &scan.p_values[row];
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(p[a].total_cmp(&p[b])).then(a.cmp(&b)));
    InstrumentAssignment {
        feature: scan.features[row],
        indices: (idx[0], idx[1]),
        q_values: (q[idx[0]], q[idx[1]]),
        p_value_row: p.clone(),
    }
}

/// Write `(feature, g1, g2, q1, q2)` with one-based column numbers.
pub fn write_instruments_tsv(path: &Path, rows: &[(String, &InstrumentAssignment)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "feature\tg1\tg2\tq1\tq2")?;
    for (id, a) in rows {
        writeln!(
            out,
            "{id}\t{}\t{}\t{}\t{}",
            a.indices.0 + 1,
            a.indices.1 + 1,
            a.q_values.0,
            a.q_values.1
        )?;
    }
    out.flush()?;
    Ok(())
}
