//! End-to-end runs and their on-disk artifacts.
//!
//! Mechanism estimation reads only the intensity matrix; its outputs are keyed by the
//! matrix content hash so they can be reused for any number of designs.

use crate::data::{
    self, DesignMatrices, IntensityMatrix, Partition, TableFormat, DEFAULT_EPS_MISS, DEFAULT_MAX_MISS,
};
use crate::error::{Error, Result};
use crate::factor::{self, FactorEstimate};
use crate::gmm::{self, FeatureData, GmmFit, GmmOptions};
use crate::hbgmm::{self, ChainSettings, MechanismPrior, PosteriorSummary};
use crate::instruments::{self, InstrumentAssignment, InstrumentScan};
use crate::ipw::{self, IpwWeights};
use crate::jtest::{self, JTestRow, DEFAULT_BOOTSTRAP_B, DEFAULT_LFDR_THRESHOLD};
use crate::latent::{self, AssociationResults, LatentModel, LatentOptions};
use crate::linalg;
use crate::link::Link;
use crate::rng::tag;
use crate::sim::{self, SimulatedDataset, SimulationConfig};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FACTORS_FILE: &str = "factors.tsv";
pub const INSTRUMENTS_FILE: &str = "instruments.tsv";
pub const GMM_FILE: &str = "gmm.tsv";
pub const JTEST_FILE: &str = "jtest.tsv";
pub const MECHANISM_FILE: &str = "mechanism.tsv";
pub const W_HAT_FILE: &str = "w_hat.tsv";
pub const V_HAT_FILE: &str = "v_hat.tsv";
pub const GAMMA_HAT_FILE: &str = "gamma_hat.tsv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";
pub const RESULTS_FILE: &str = "associations.tsv";
pub const QQ_FILE: &str = "qq.tsv";

const ARTIFACT_VERSION: u32 = 1;

/// Number of factors: chosen from the data, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KChoice {
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("auto") {
            return Ok(KChoice::Auto);
        }
        match t.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KChoice::Fixed(k)),
            _ => Err(Error::InvalidInput(format!("K must be `auto` or a positive integer, got `{s}`"))),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KChoice::Auto => s.serialize_str("auto"),
            KChoice::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("K must be positive")),
            Raw::Int(k) => Ok(KChoice::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings of both estimation stages. Every field has a default, so a config file
/// only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub eps_miss: f64,
    pub max_miss: f64,
    pub link: Link,
    /// Factors used as instruments.
    pub k_miss: KChoice,
    /// Factors in the association model.
    pub k_latent: KChoice,
    pub lfdr_threshold: f64,
    pub eps_qvalue: f64,
    pub refinement_rounds: usize,
    pub bootstrap_b: usize,
    pub n_perm: usize,
    pub mcmc: ChainSettings,
    pub seed: u64,
    /// Worker threads; `None` uses the global default.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps_miss: DEFAULT_EPS_MISS,
            max_miss: DEFAULT_MAX_MISS,
            link: Link::default(),
            k_miss: KChoice::Auto,
            k_latent: KChoice::Auto,
            lfdr_threshold: DEFAULT_LFDR_THRESHOLD,
            eps_qvalue: latent::DEFAULT_EPS_QVALUE,
            refinement_rounds: latent::DEFAULT_REFINEMENT_ROUNDS,
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            n_perm: factor::DEFAULT_N_PERM,
            mcmc: ChainSettings::default(),
            seed: 0,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_miss && self.eps_miss < self.max_miss && self.max_miss <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= eps_miss < max_miss <= 1, got {}, {}",
                self.eps_miss, self.max_miss
            )));
        }
        if !(0.0..=1.0).contains(&self.lfdr_threshold) || !(0.0..=1.0).contains(&self.eps_qvalue) {
            return Err(Error::InvalidInput("lfdr_threshold and eps_qvalue must lie in [0, 1]".into()));
        }
        if self.bootstrap_b == 0 {
            return Err(Error::InvalidInput("bootstrap_b must be positive".into()));
        }
        if self.n_perm < 19 {
            return Err(Error::InvalidInput(format!("n_perm must be at least 19, got {}", self.n_perm)));
        }
        if self.mcmc.thin == 0 || self.mcmc.burn >= self.mcmc.iters {
            return Err(Error::InvalidInput("mcmc needs thin >= 1 and burn < iters".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidInput("threads must be positive".into()));
        }
        if let KChoice::Fixed(k) = self.k_miss {
            if k < 2 {
                return Err(Error::InvalidInput("k_miss must be at least 2".into()));
            }
        }
        Ok(())
    }
}

/// Run `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_thread_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Everything estimated for one feature of the missing set.
#[derive(Debug, Clone)]
pub struct MechanismRow {
    pub feature: usize,
    pub instruments: Option<InstrumentAssignment>,
    pub gmm: Option<GmmFit>,
    pub bootstrap_p: Option<f64>,
    pub lfdr: Option<f64>,
    /// The mechanism passed the over-identification screen.
    pub in_subset: bool,
    pub posterior: Option<PosteriorSummary>,
    pub gamma_hat: Option<Vec<f64>>,
    /// First failure, with the stage it happened in.
    pub error: Option<(String, String)>,
}

impl MechanismRow {
    fn new(feature: usize) -> Self {
        Self {
            feature,
            instruments: None,
            gmm: None,
            bootstrap_p: None,
            lfdr: None,
            in_subset: false,
            posterior: None,
            gamma_hat: None,
            error: None,
        }
    }

    fn fail(&mut self, stage: &str, e: impl fmt::Display) {
        if self.error.is_none() {
            self.error = Some((stage.into(), e.to_string()));
        }
    }

    pub fn weights(&self) -> Option<IpwWeights> {
        let post = self.posterior.as_ref()?;
        Some(IpwWeights {
            w_hat: post.w_hat.clone(),
            v_hat: post.v_hat.clone(),
            gamma_hat: self.gamma_hat.clone()?,
        })
    }

    /// The J test rejected the mechanism.
    pub fn flagged(&self) -> bool {
        self.bootstrap_p.is_some() && !self.in_subset
    }
}

/// In-memory output of mechanism estimation.
#[derive(Debug, Clone)]
pub struct MechanismEstimate {
    pub matrix_hash: String,
    pub partition: Partition,
    pub k_pa: usize,
    pub k_miss: usize,
    pub factors: FactorEstimate,
    pub scan: InstrumentScan,
    pub prior: MechanismPrior,
    /// One row per feature of the missing set, in feature order.
    pub rows: Vec<MechanismRow>,
}

impl MechanismEstimate {
    /// Per-feature IPW inputs, indexed by feature (length p).
    pub fn weights(&self, p: usize) -> Vec<Option<IpwWeights>> {
        let mut out = vec![None; p];
        for r in &self.rows {
            out[r.feature] = r.weights();
        }
        out
    }

    pub fn subset(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.in_subset).map(|r| r.feature).collect()
    }

    pub fn flagged(&self, p: usize) -> Vec<bool> {
        let mut out = vec![false; p];
        for r in &self.rows {
            out[r.feature] = r.flagged();
        }
        out
    }
}

fn feature_data(m: &IntensityMatrix, g: usize, c: &DMatrix<f64>, a: &InstrumentAssignment) -> FeatureData {
    FeatureData::new(
        m.row(g).to_vec(),
        m.mask_row(g).to_vec(),
        c.column(a.indices.0).iter().copied().collect(),
        c.column(a.indices.1).iter().copied().collect(),
    )
}

/// Partition, factors, instruments, two-step GMM, bootstrap J test, lfdr screen,
/// empirical-Bayes prior and per-feature posterior weights. Uses only `m`.
pub fn estimate_mechanism(m: &IntensityMatrix, cfg: &PipelineConfig) -> Result<MechanismEstimate> {
    cfg.validate()?;
    let n = m.n_samples();
    let ones = linalg::ones(n);
    let partition = data::partition_metabolites(m, cfg.eps_miss, cfg.max_miss)?;
    log::info!(
        "partition: {} observed, {} missing, {} dropped",
        partition.observed_set.len(),
        partition.missing_set.len(),
        partition.dropped_set.len()
    );
    let complete = m.select_features(&partition.observed_set)?;
    let k_pa = factor::parallel_analysis(&factor::mean_filled(&complete), cfg.n_perm, cfg.seed)?;
    let k_miss = match cfg.k_miss {
        KChoice::Fixed(k) => k,
        KChoice::Auto => factor::select_k_miss(
            m,
            &partition,
            k_pa,
            &ones,
            factor::DEFAULT_Q_THRESHOLD,
            factor::DEFAULT_COVERAGE,
        )?,
    };
    log::info!("K_PA = {k_pa}, K_miss = {k_miss}");
    let factors = factor::estimate_complete_factors(&complete, k_miss, &ones)?;
    let scan = instruments::instrument_scan(m, &partition.missing_set, &factors, &ones)?;
    let c = &factors.c_hat;
    let opts = GmmOptions::default();

    let mut rows: Vec<MechanismRow> = partition
        .missing_set
        .par_iter()
        .map(|&g| {
            let mut row = MechanismRow::new(g);
            let Some(r) = scan.row_of(g) else {
                row.fail("instruments", "too few observed cells");
                return row;
            };
            let a = instruments::select_instruments(&scan, r);
            let data = feature_data(m, g, c, &a);
            row.instruments = Some(a);
            match gmm::two_step_gmm(&data, cfg.link, &opts) {
                Ok(fit) if fit.converged => {
                    match jtest::bootstrap_j_null(&fit, &data, cfg.link, cfg.bootstrap_b, cfg.seed, &[tag::BOOTSTRAP, g as u64], &opts) {
                        Ok(b) => row.bootstrap_p = Some(b.p_value),
                        Err(e) => row.fail("jtest", e),
                    }
                    row.gmm = Some(fit);
                }
                Ok(fit) => {
                    row.fail("gmm", "optimizer did not converge");
                    row.gmm = Some(fit);
                }
                Err(e) => row.fail("gmm", e),
            }
            row
        })
        .collect();

    let tested: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].bootstrap_p.is_some()).collect();
    let p_values: Vec<f64> = tested.iter().map(|&i| rows[i].bootstrap_p.unwrap()).collect();
    let flags = jtest::flag_mechanism_fit(&p_values, cfg.lfdr_threshold)?;
    for (j, &i) in tested.iter().enumerate() {
        rows[i].lfdr = Some(flags.lfdr[j]);
        rows[i].in_subset = flags.in_subset[j];
    }

    let fits: Vec<&GmmFit> = rows.iter().filter(|r| r.bootstrap_p.is_some()).filter_map(|r| r.gmm.as_ref()).collect();
    let prior = hbgmm::estimate_prior(&fits)?;

    rows.par_iter_mut().for_each(|row| {
        let (Some(fit), Some(a)) = (row.gmm.as_ref(), row.instruments.as_ref()) else {
            return;
        };
        if row.bootstrap_p.is_none() {
            return;
        }
        let data = feature_data(m, row.feature, c, a);
        match hbgmm::sample_posterior(&data, cfg.link, fit, &prior, &cfg.mcmc, cfg.seed, &[tag::MCMC, row.feature as u64]) {
            Ok(post) => {
                if post.stuck {
                    log::warn!("chain for {} barely moved (acceptance {:.3})", m.feature_ids()[row.feature], post.acceptance_rate);
                }
                row.gamma_hat = Some(ipw::stabilization_probabilities(&data.r, &data.u1, &data.u2));
                row.posterior = Some(post);
            }
            Err(e) => row.fail("hbgmm", e),
        }
        if row.posterior.is_none() {
            row.in_subset = false;
        }
    });

    Ok(MechanismEstimate {
        matrix_hash: m.content_hash(),
        partition,
        k_pa,
        k_miss,
        factors,
        scan,
        prior,
        rows,
    })
}

/// What a later association run needs from mechanism estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub matrix_hash: String,
    pub config: PipelineConfig,
    pub k_pa: usize,
    pub k_miss: usize,
    pub partition: Partition,
    pub prior_mu: [f64; 2],
    pub prior_u: [[f64; 2]; 2],
    /// Features with weights (rows of the weight tables).
    pub weighted: Vec<String>,
    /// Features whose mechanism passed the J-test screen.
    pub subset: Vec<String>,
    pub flagged: Vec<String>,
}

/// Mechanism artifacts as loaded from disk.
#[derive(Debug, Clone)]
pub struct MechanismArtifact {
    pub manifest: Manifest,
    /// Indexed by feature of the matrix the artifact was built from.
    pub weights: Vec<Option<IpwWeights>>,
}

impl MechanismArtifact {
    pub fn from_estimate(est: &MechanismEstimate, m: &IntensityMatrix, cfg: &PipelineConfig) -> Self {
        let ids = m.feature_ids();
        let weights = est.weights(m.n_features());
        let manifest = Manifest {
            version: ARTIFACT_VERSION,
            matrix_hash: est.matrix_hash.clone(),
            config: cfg.clone(),
            k_pa: est.k_pa,
            k_miss: est.k_miss,
            partition: est.partition.clone(),
            prior_mu: est.prior.mu,
            prior_u: est.prior.u,
            weighted: (0..ids.len()).filter(|&g| weights[g].is_some()).map(|g| ids[g].clone()).collect(),
            subset: est.subset().into_iter().map(|g| ids[g].clone()).collect(),
            flagged: est.rows.iter().filter(|r| r.flagged()).map(|r| ids[r.feature].clone()).collect(),
        };
        Self { manifest, weights }
    }

    /// Fails with [`Error::StaleArtifact`] unless `m` is the matrix the artifact was built from.
    pub fn check_matrix(&self, m: &IntensityMatrix) -> Result<()> {
        let actual = m.content_hash();
        if actual != self.manifest.matrix_hash {
            return Err(Error::StaleArtifact {
                expected: self.manifest.matrix_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    fn indices(&self, m: &IntensityMatrix, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                m.feature_ids()
                    .iter()
                    .position(|f| f == id)
                    .ok_or_else(|| Error::InvalidInput(format!("artifact feature `{id}` is not in the matrix")))
            })
            .collect()
    }

    pub fn subset(&self, m: &IntensityMatrix) -> Result<Vec<usize>> {
        self.indices(m, &self.manifest.subset)
    }

    pub fn flagged(&self, m: &IntensityMatrix) -> Result<Vec<bool>> {
        let mut out = vec![false; m.n_features()];
        for g in self.indices(m, &self.manifest.flagged)? {
            out[g] = true;
        }
        Ok(out)
    }
}

fn write_matrix_rows(path: &Path, header: &[String], rows: &[(String, &[f64])]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "feature")?;
    for h in header {
        write!(out, "\t{h}")?;
    }
    writeln!(out)?;
    for (id, vals) in rows {
        write!(out, "{id}")?;
        for v in *vals {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn read_matrix_rows(path: &Path, n: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                row: r + 2,
                column: rec.len(),
                message: format!("expected {} fields in {}", n + 1, path.display()),
            });
        }
        let vals = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    row: r + 2,
                    column: c + 2,
                    message: format!("non-numeric cell `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((rec[0].to_string(), vals));
    }
    Ok(out)
}

/// Write all mechanism artifacts into `dir`.
pub fn write_mechanism_artifacts(
    dir: &Path,
    est: &MechanismEstimate,
    m: &IntensityMatrix,
    cfg: &PipelineConfig,
) -> Result<MechanismArtifact> {
    std::fs::create_dir_all(dir)?;
    let ids = m.feature_ids();
    let id = |g: usize| ids[g].clone();

    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(FACTORS_FILE))?);
        write!(out, "sample")?;
        for k in 0..est.factors.c_hat.ncols() {
            write!(out, "\tc{}", k + 1)?;
        }
        writeln!(out)?;
        for (i, s) in m.sample_ids().iter().enumerate() {
            write!(out, "{s}")?;
            for v in est.factors.c_hat.row(i).iter() {
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
    }

    let inst: Vec<(String, &InstrumentAssignment)> =
        est.rows.iter().filter_map(|r| r.instruments.as_ref().map(|a| (id(r.feature), a))).collect();
    instruments::write_instruments_tsv(&dir.join(INSTRUMENTS_FILE), &inst)?;

    let gmm_rows: Vec<(String, Option<&GmmFit>)> = est.rows.iter().map(|r| (id(r.feature), r.gmm.as_ref())).collect();
    gmm::write_gmm_tsv(&dir.join(GMM_FILE), &gmm_rows)?;

    let jrows: Vec<JTestRow> = est
        .rows
        .iter()
        .filter_map(|r| {
            Some(JTestRow {
                feature: id(r.feature),
                j: r.gmm.as_ref()?.j,
                p_boot: r.bootstrap_p?,
                lfdr: r.lfdr?,
                in_subset: r.in_subset,
            })
        })
        .collect();
    jtest::write_jtest_tsv(&dir.join(JTEST_FILE), &jrows)?;

    let mech: Vec<(String, &PosteriorSummary)> =
        est.rows.iter().filter_map(|r| r.posterior.as_ref().map(|p| (id(r.feature), p))).collect();
    hbgmm::write_mechanism_tsv(&dir.join(MECHANISM_FILE), &mech)?;

    let artifact = MechanismArtifact::from_estimate(est, m, cfg);
    let samples = m.sample_ids().to_vec();
    let weighted: Vec<(usize, &IpwWeights)> =
        (0..ids.len()).filter_map(|g| artifact.weights[g].as_ref().map(|w| (g, w))).collect();
    for (file, pick) in [
        (W_HAT_FILE, 0usize),
        (V_HAT_FILE, 1),
        (GAMMA_HAT_FILE, 2),
    ] {
        let rows: Vec<(String, &[f64])> = weighted
            .iter()
            .map(|&(g, w)| {
                let v: &[f64] = match pick {
                    0 => &w.w_hat,
                    1 => &w.v_hat,
                    _ => &w.gamma_hat,
                };
                (id(g), v)
            })
            .collect();
        write_matrix_rows(&dir.join(file), &samples, &rows)?;
    }

    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), est.rows.iter().filter_map(|r| {
        r.error.as_ref().map(|(stage, msg)| (id(r.feature), stage.as_str(), msg.as_str()))
    }))?;

    let text = serde_json::to_string_pretty(&artifact.manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(artifact)
}

/// `(feature, stage, message)` per failure.
pub fn write_diagnostics<'a>(path: &Path, rows: impl IntoIterator<Item = (String, &'a str, &'a str)>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "feature\tstage\tmessage")?;
    for (f, stage, msg) in rows {
        writeln!(out, "{f}\t{stage}\t{}", msg.replace(['\t', '\n'], " "))?;
    }
    out.flush()?;
    Ok(())
}

/// Load the artifacts written by [`write_mechanism_artifacts`] for matrix `m`.
pub fn load_mechanism_artifacts(dir: &Path, m: &IntensityMatrix) -> Result<MechanismArtifact> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != ARTIFACT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported artifact version {}", manifest.version)));
    }
    let mut artifact = MechanismArtifact {
        manifest,
        weights: vec![],
    };
    artifact.check_matrix(m)?;
    let n = m.n_samples();
    let w = read_matrix_rows(&dir.join(W_HAT_FILE), n)?;
    let v = read_matrix_rows(&dir.join(V_HAT_FILE), n)?;
    let gm = read_matrix_rows(&dir.join(GAMMA_HAT_FILE), n)?;
    if w.len() != v.len() || w.len() != gm.len() {
        return Err(Error::InvalidInput("weight tables differ in row count".into()));
    }
    let mut weights = vec![None; m.n_features()];
    for ((w, v), gm) in w.into_iter().zip(v).zip(gm) {
        if w.0 != v.0 || w.0 != gm.0 {
            return Err(Error::InvalidInput(format!("weight tables disagree at feature `{}`", w.0)));
        }
        let g = artifact.indices(m, std::slice::from_ref(&w.0))?[0];
        weights[g] = Some(IpwWeights {
            w_hat: w.1,
            v_hat: v.1,
            gamma_hat: gm.1,
        });
    }
    artifact.weights = weights;
    Ok(artifact)
}

/// Paths involved in mechanism estimation.
#[derive(Debug, Clone)]
pub struct EstimateMechanismJob {
    pub matrix: PathBuf,
    pub out_dir: PathBuf,
    pub format: TableFormat,
}

/// Load the matrix, estimate the mechanism and write the artifacts. A fatal error still
/// leaves a diagnostics file in the output directory.
pub fn run_estimate_mechanism(job: &EstimateMechanismJob, cfg: &PipelineConfig) -> Result<MechanismArtifact> {
    let m = data::load_intensity_matrix(&job.matrix, job.format)?;
    std::fs::create_dir_all(&job.out_dir)?;
    let run = || -> Result<MechanismArtifact> {
        let est = with_thread_pool(cfg.threads, || estimate_mechanism(&m, cfg))??;
        write_mechanism_artifacts(&job.out_dir, &est, &m, cfg)
    };
    run().inspect_err(|e| {
        let msg = e.to_string();
        let _ = write_diagnostics(&job.out_dir.join(DIAGNOSTICS_FILE), [("*".to_string(), "pipeline", msg.as_str())]);
    })
}

/// Number of factors for association when not fixed: parallel analysis on the nearly
/// complete features after regressing out the design. At least one factor is used.
pub fn association_k(m: &IntensityMatrix, design: &DesignMatrices, partition: &Partition, cfg: &PipelineConfig) -> Result<usize> {
    match cfg.k_latent {
        KChoice::Fixed(k) => Ok(k),
        KChoice::Auto => {
            let complete = m.select_features(&partition.observed_set)?;
            let y = linalg::residualize_rows(&factor::mean_filled(&complete), &design.full());
            let k = factor::parallel_analysis(&y, cfg.n_perm, cfg.seed)?;
            if k == 0 {
                log::warn!("parallel analysis found no factors; using K = 1");
            }
            Ok(k.max(1))
        }
    }
}

/// Output of an association run.
#[derive(Debug, Clone)]
pub struct AssociationRun {
    pub latent: LatentModel,
    pub results: AssociationResults,
}

/// Recover `Ĉ` from the mechanism artifact and `design`, then test every retained feature.
pub fn associate_with_artifact(
    m: &IntensityMatrix,
    design: &DesignMatrices,
    artifact: &MechanismArtifact,
    cfg: &PipelineConfig,
) -> Result<AssociationRun> {
    artifact.check_matrix(m)?;
    if design.n_samples() != m.n_samples() {
        return Err(Error::InvalidInput("design and matrix differ in sample count".into()));
    }
    let partition = &artifact.manifest.partition;
    let k = association_k(m, design, partition, cfg)?;
    let subset = artifact.subset(m)?;
    let opts = LatentOptions {
        k,
        eps_q: cfg.eps_qvalue,
        rounds: cfg.refinement_rounds,
    };
    let latent = latent::fit_latent(m, design, partition, &artifact.weights, &subset, &opts)?;
    let flagged = artifact.flagged(m)?;
    let results = latent::associate(m, design, &latent.c_hat, &artifact.weights, partition, &flagged)?;
    Ok(AssociationRun { latent, results })
}

#[derive(Debug, Clone)]
pub struct AssociateJob {
    pub matrix: PathBuf,
    pub design: PathBuf,
    pub mechanism_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Interest covariates; empty means the first design column.
    pub interest: Vec<String>,
    pub format: TableFormat,
}

/// Load inputs, run the association and write the results and Q-Q tables.
pub fn run_associate(job: &AssociateJob, cfg: &PipelineConfig) -> Result<AssociationRun> {
    let m = data::load_intensity_matrix(&job.matrix, job.format)?;
    let artifact = load_mechanism_artifacts(&job.mechanism_dir, &m)?;
    let design = data::load_design(&job.design, job.format, m.sample_ids(), &job.interest)?;
    let run = with_thread_pool(cfg.threads, || associate_with_artifact(&m, &design, &artifact, cfg))??;
    std::fs::create_dir_all(&job.out_dir)?;
    latent::write_association_tsv(&job.out_dir.join(RESULTS_FILE), &run.results, m.feature_ids())?;
    latent::write_qq_tsv(&job.out_dir.join(QQ_FILE), &run.results)?;
    Ok(run)
}

pub const SIM_MATRIX_FILE: &str = "matrix.tsv";
pub const SIM_MASK_FILE: &str = "mask.tsv";
pub const SIM_DESIGN_FILE: &str = "design.tsv";
pub const SIM_TRUTH_FILE: &str = "truth.json";

/// Simulate a dataset and write matrix, mask, design and truth into `dir`.
pub fn run_simulate(cfg: &SimulationConfig, dir: &Path) -> Result<SimulatedDataset> {
    let ds = sim::simulate_dataset(cfg)?;
    std::fs::create_dir_all(dir)?;
    let fmt = TableFormat::default();
    data::write_intensity_matrix(&dir.join(SIM_MATRIX_FILE), &ds.matrix, fmt)?;
    data::write_mask(&dir.join(SIM_MASK_FILE), &ds.matrix, fmt)?;
    data::write_design(&dir.join(SIM_DESIGN_FILE), &ds.design, ds.matrix.sample_ids())?;
    std::fs::write(dir.join(SIM_TRUTH_FILE), serde_json::to_string(&ds.truth)?)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            bootstrap_b: 19,
            n_perm: 19,
            mcmc: ChainSettings {
                iters: 600,
                burn: 200,
                thin: 2,
            },
            seed: 3,
            ..Default::default()
        }
    }

    fn small_sim(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n: 120,
            p: 90,
            k: 3,
            target_eigenvalues: vec![0.5, 0.3, 0.2],
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.eps_miss, 0.05);
        assert_eq!(c.max_miss, 0.5);
        assert_eq!(c.link, Link::T(4.0));
        assert_eq!(c.k_miss, KChoice::Auto);
        assert_eq!(c.lfdr_threshold, 0.8);
        assert_eq!(c.eps_qvalue, 0.1);
        assert_eq!(c.refinement_rounds, 3);
        assert_eq!(c.bootstrap_b, 200);
        assert_eq!(c.mcmc, ChainSettings { iters: 5000, burn: 1000, thin: 2 });
    }

    #[test]
    fn config_json_partial_and_k_choice() {
        let c: PipelineConfig = serde_json::from_str(r#"{"k_miss": 4, "k_latent": "auto", "link": "logistic"}"#).unwrap();
        assert_eq!(c.k_miss, KChoice::Fixed(4));
        assert_eq!(c.k_latent, KChoice::Auto);
        assert_eq!(c.link, Link::Logistic);
        assert_eq!(c.bootstrap_b, 200);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"k_miss": 0}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        assert_eq!("auto".parse::<KChoice>().unwrap(), KChoice::Auto);
        assert!("x".parse::<KChoice>().is_err());
    }

    #[test]
    fn invalid_configs() {
        for c in [
            PipelineConfig { eps_miss: 0.6, ..Default::default() },
            PipelineConfig { bootstrap_b: 0, ..Default::default() },
            PipelineConfig { n_perm: 5, ..Default::default() },
            PipelineConfig { k_miss: KChoice::Fixed(1), ..Default::default() },
            PipelineConfig { threads: Some(0), ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn eps_miss_is_honoured() {
        // 4% missing: observed at the default threshold, missing at eps_miss = 0.03.
        let n = 100;
        let mut mask = vec![true; 2 * n];
        for i in 0..4 {
            mask[i] = false;
        }
        let m = IntensityMatrix::new(
            (0..2 * n).map(|i| (i % 17) as f64 + 1.0).collect(),
            mask,
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap();
        let p = data::partition_metabolites(&m, PipelineConfig::default().eps_miss, 0.5).unwrap();
        assert_eq!(p.observed_set, vec![0, 1]);
        let p = data::partition_metabolites(&m, 0.03, 0.5).unwrap();
        assert_eq!(p.missing_set, vec![0]);
    }

    #[test]
    fn end_to_end_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = run_simulate(&small_sim(1), dir.path()).unwrap();
        let cfg = quick_config();
        let job = EstimateMechanismJob {
            matrix: dir.path().join(SIM_MATRIX_FILE),
            out_dir: dir.path().join("mech"),
            format: TableFormat::default(),
        };
        let art = run_estimate_mechanism(&job, &cfg).unwrap();
        for f in [MANIFEST_FILE, FACTORS_FILE, INSTRUMENTS_FILE, GMM_FILE, JTEST_FILE, MECHANISM_FILE, W_HAT_FILE, V_HAT_FILE, GAMMA_HAT_FILE] {
            assert!(job.out_dir.join(f).exists(), "{f}");
        }
        assert!(!art.manifest.weighted.is_empty());
        let loaded = load_mechanism_artifacts(&job.out_dir, &ds.matrix).unwrap();
        assert_eq!(loaded.manifest, art.manifest);
        assert_eq!(loaded.weights, art.weights);

        let mech = std::fs::read(job.out_dir.join(MECHANISM_FILE)).unwrap();
        run_estimate_mechanism(&job, &cfg).unwrap();
        assert_eq!(std::fs::read(job.out_dir.join(MECHANISM_FILE)).unwrap(), mech);

        let ajob = AssociateJob {
            matrix: job.matrix.clone(),
            design: dir.path().join(SIM_DESIGN_FILE),
            mechanism_dir: job.out_dir.clone(),
            out_dir: dir.path().join("assoc"),
            interest: vec![],
            format: TableFormat::default(),
        };
        let run = run_associate(&ajob, &cfg).unwrap();
        let part = &art.manifest.partition;
        let retained = ds.matrix.n_features() - part.dropped_set.len();
        assert_eq!(run.results.rows.len(), retained);
        let text = std::fs::read_to_string(ajob.out_dir.join(RESULTS_FILE)).unwrap();
        assert_eq!(text.lines().count(), retained + 1);
        assert!(ajob.out_dir.join(QQ_FILE).exists());
    }

    #[test]
    fn stale_artifact_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        run_simulate(&small_sim(2), dir.path()).unwrap();
        let job = EstimateMechanismJob {
            matrix: dir.path().join(SIM_MATRIX_FILE),
            out_dir: dir.path().join("mech"),
            format: TableFormat::default(),
        };
        run_estimate_mechanism(&job, &quick_config()).unwrap();
        let other = sim::simulate_dataset(&small_sim(5)).unwrap();
        let err = load_mechanism_artifacts(&job.out_dir, &other.matrix).unwrap_err();
        assert!(matches!(err, Error::StaleArtifact { .. }));
        assert!(err.is_input_error());
    }

    #[test]
    fn fatal_error_leaves_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        // every feature is mostly missing: no nearly complete features
        std::fs::write(&path, "feature\ts1\ts2\ts3\na\t1\tNA\tNA\nb\tNA\t2\tNA\n").unwrap();
        let job = EstimateMechanismJob {
            matrix: path,
            out_dir: dir.path().join("mech"),
            format: TableFormat::default(),
        };
        assert!(run_estimate_mechanism(&job, &quick_config()).is_err());
        let diag = std::fs::read_to_string(job.out_dir.join(DIAGNOSTICS_FILE)).unwrap();
        assert!(diag.lines().nth(1).unwrap().starts_with("*\tpipeline\t"));
    }

    #[test]
    fn two_designs_share_one_mechanism() {
        let ds = sim::simulate_dataset(&small_sim(3)).unwrap();
        let cfg = quick_config();
        let est = estimate_mechanism(&ds.matrix, &cfg).unwrap();
        let art = MechanismArtifact::from_estimate(&est, &ds.matrix, &cfg);
        let n = ds.matrix.n_samples();
        let other = DesignMatrices::with_intercept(
            DMatrix::from_fn(n, 1, |i, _| ((i * 7) % 5) as f64),
            vec!["other".into()],
        )
        .unwrap();
        let a = associate_with_artifact(&ds.matrix, &ds.design, &art, &cfg).unwrap();
        let b = associate_with_artifact(&ds.matrix, &other, &art, &cfg).unwrap();
        assert_eq!(a.results.rows.len(), b.results.rows.len());
        assert_eq!(b.results.interest_names, vec!["other".to_string()]);
    }
}
