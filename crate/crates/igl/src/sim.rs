//! Simulation harness: ground-truth graph structures, covariance construction,
//! latent Gaussian sampling, interval generation, error metrics and replication runs.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, LogNormal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::interval::{bound_covariances, symmetrize, IntervalError, IntervalMatrix};
use crate::selection::{lambda_grid, select_lambda, SelectionError};
use crate::solver::{invert_pd, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("matrix is singular or not positive definite")]
    SingularMatrix,
    #[error("Cholesky factorization failed")]
    FactorizationFailure,
    #[error("matrices have different shapes")]
    ShapeMismatch,
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// Deterministic child RNG derived from a master seed and a context label.
/// Independent of execution order and parallel scheduling.
pub fn child_rng(master_seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Band,
    Ar1,
    ErdosRenyi,
}

impl StructureKind {
    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::Band => "band",
            StructureKind::Ar1 => "ar1",
            StructureKind::ErdosRenyi => "er",
        }
    }
}

/// Recipe for the base precision matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub p: usize,
    /// Band: first and second off-diagonal values.
    #[serde(default = "default_band1")]
    pub band1: f64,
    #[serde(default = "default_band2")]
    pub band2: f64,
    /// AR(1) decay rate.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Erdos-Renyi edge probability and edge value.
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "default_edge_value")]
    pub edge_value: f64,
    /// Minimum-eigenvalue target for the positive-definiteness adjustment.
    #[serde(default = "default_pd_floor")]
    pub pd_floor: f64,
}

fn default_band1() -> f64 {
    0.6
}
fn default_band2() -> f64 {
    0.3
}
fn default_rho() -> f64 {
    0.6
}
fn default_edge_prob() -> f64 {
    0.05
}
fn default_edge_value() -> f64 {
    0.3
}
fn default_pd_floor() -> f64 {
    0.05
}

impl StructureSpec {
    pub fn new(kind: StructureKind, p: usize) -> Self {
        Self {
            kind,
            p,
            band1: default_band1(),
            band2: default_band2(),
            rho: default_rho(),
            edge_prob: default_edge_prob(),
            edge_value: default_edge_value(),
            pd_floor: default_pd_floor(),
        }
    }
}

/// Build the base precision matrix for the given structure. A seed is needed only
/// for the Erdos-Renyi pattern. If the smallest eigenvalue is below `pd_floor` the
/// diagonal is shifted up to reach it.
pub fn make_structure(spec: &StructureSpec, seed: u64) -> Result<DMatrix<f64>, SimError> {
    let p = spec.p;
    if p < 2 {
        return Err(SimError::DimensionTooSmall(p));
    }
    let mut theta = DMatrix::zeros(p, p);
    match spec.kind {
        StructureKind::Band => {
            for i in 0..p {
                theta[(i, i)] = 1.0;
                if i + 1 < p {
                    theta[(i, i + 1)] = spec.band1;
                    theta[(i + 1, i)] = spec.band1;
                }
                if i + 2 < p {
                    theta[(i, i + 2)] = spec.band2;
                    theta[(i + 2, i)] = spec.band2;
                }
            }
        }
        StructureKind::Ar1 => {
            for i in 0..p {
                for j in 0..p {
                    theta[(i, j)] = spec.rho.powi((i as i64 - j as i64).unsigned_abs() as i32);
                }
            }
        }
        StructureKind::ErdosRenyi => {
            let mut rng = child_rng(seed, "er-structure");
            for i in 0..p {
                for j in (i + 1)..p {
                    if rng.gen::<f64>() < spec.edge_prob {
                        theta[(i, j)] = spec.edge_value;
                        theta[(j, i)] = spec.edge_value;
                    }
                }
            }
        }
    }
    let min_eig = SymmetricEigen::new(theta.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < spec.pd_floor {
        let shift = spec.pd_floor - min_eig;
        for i in 0..p {
            theta[(i, i)] += shift;
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// Score against the precision of the sampled data, D^{-1/2} Theta0 D^{-1/2}.
    #[default]
    Scaled,
    /// Score against the base structure Theta0.
    Base,
}

/// Ground-truth covariance built from a base precision matrix and a random
/// diagonal scaling.
#[derive(Debug, Clone)]
pub struct SigmaSpec {
    pub theta0: DMatrix<f64>,
    pub d_diag: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub theta_true: DMatrix<f64>,
}

/// Sigma = D^{1/2} Theta0^{-1} D^{1/2} with D diagonal entries drawn from U(1, 10).
pub fn make_sigma(
    theta0: &DMatrix<f64>,
    seed: u64,
    truth_mode: TruthMode,
) -> Result<SigmaSpec, SimError> {
    let p = theta0.nrows();
    let mut rng = child_rng(seed, "d-diag");
    let unif = Uniform::new(1.0, 10.0);
    let d = DVector::from_iterator(p, (0..p).map(|_| unif.sample(&mut rng)));
    make_sigma_with_d(theta0, &d, truth_mode)
}

/// Test hook: as [`make_sigma`] but with an explicit diagonal.
pub fn make_sigma_with_d(
    theta0: &DMatrix<f64>,
    d_diag: &DVector<f64>,
    truth_mode: TruthMode,
) -> Result<SigmaSpec, SimError> {
    let p = theta0.nrows();
    let theta0_inv = invert_pd(theta0).map_err(|_| SimError::SingularMatrix)?;
    let sqrt_d = d_diag.map(|v| v.sqrt());
    let mut sigma = theta0_inv;
    for i in 0..p {
        for j in 0..p {
            sigma[(i, j)] *= sqrt_d[i] * sqrt_d[j];
        }
    }
    let sigma = symmetrize(&sigma);
    let theta_true = match truth_mode {
        TruthMode::Scaled => {
            let inv_sqrt_d = d_diag.map(|v| 1.0 / v.sqrt());
            let mut t = theta0.clone();
            for i in 0..p {
                for j in 0..p {
                    t[(i, j)] *= inv_sqrt_d[i] * inv_sqrt_d[j];
                }
            }
            t
        }
        TruthMode::Base => theta0.clone(),
    };
    Ok(SigmaSpec { theta0: theta0.clone(), d_diag: d_diag.clone(), sigma, theta_true })
}

/// Draw n rows from N_p(0, sigma) via the lower Cholesky factor. Deterministic per seed.
pub fn sample_latent(n: usize, sigma: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>, SimError> {
    let p = sigma.nrows();
    let chol = Cholesky::new(sigma.clone()).ok_or(SimError::FactorizationFailure)?;
    let l = chol.l();
    let mut rng = child_rng(seed, "latent");
    let mut g: DMatrix<f64> = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let v: f64 = StandardNormal.sample(&mut rng);
            g[(i, j)] = v;
        }
    }
    Ok(g * l.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusDist {
    /// Gamma(shape 1.5, scale 0.5); mean 0.75.
    Gamma,
    /// Lognormal(0, 0.6^2).
    Lognormal,
    /// 3 * Beta(0.5, 0.5).
    Beta,
    /// Exponential with rate 0.5; mean 2.
    Exponential,
}

impl RadiusDist {
    pub fn name(&self) -> &'static str {
        match self {
            RadiusDist::Gamma => "gamma",
            RadiusDist::Lognormal => "lognormal",
            RadiusDist::Beta => "beta",
            RadiusDist::Exponential => "exponential",
        }
    }

    pub fn sample_one(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            RadiusDist::Gamma => Gamma::new(1.5, 0.5).unwrap().sample(rng),
            RadiusDist::Lognormal => LogNormal::new(0.0, 0.6).unwrap().sample(rng),
            RadiusDist::Beta => 3.0 * Beta::new(0.5, 0.5).unwrap().sample(rng),
            RadiusDist::Exponential => Exp::new(0.5).unwrap().sample(rng),
        }
    }
}

/// Interval generation mechanism applied to the latent matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpConfig {
    /// [z, z + C] with a constant width C > 0.
    Dgp1 { width: f64 },
    /// [z - C/2, z + C/2].
    Dgp2 { width: f64 },
    /// [z - r_i, z + r_i] with one radius per observation row.
    Dgp3 { radius_dist: RadiusDist, seed: u64 },
}

impl DgpConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DgpConfig::Dgp1 { .. } => "dgp1",
            DgpConfig::Dgp2 { .. } => "dgp2",
            DgpConfig::Dgp3 { .. } => "dgp3",
        }
    }

    pub fn dist_name(&self) -> &'static str {
        match self {
            DgpConfig::Dgp3 { radius_dist, .. } => radius_dist.name(),
            _ => "-",
        }
    }

    pub fn width(&self) -> Option<f64> {
        match self {
            DgpConfig::Dgp1 { width } | DgpConfig::Dgp2 { width } => Some(*width),
            DgpConfig::Dgp3 { .. } => None,
        }
    }
}

/// Convert a latent point matrix into an interval panel.
pub fn make_intervals(z: &DMatrix<f64>, dgp: &DgpConfig) -> Result<IntervalMatrix, SimError> {
    let (n, _p) = z.shape();
    let (lower, upper) = match dgp {
        DgpConfig::Dgp1 { width } => (z.clone(), z.map(|v| v + width)),
        DgpConfig::Dgp2 { width } => (z.map(|v| v - width / 2.0), z.map(|v| v + width / 2.0)),
        DgpConfig::Dgp3 { radius_dist, seed } => {
            let mut rng = child_rng(*seed, "radii");
            let radii: Vec<f64> = (0..n).map(|_| radius_dist.sample_one(&mut rng)).collect();
            let mut lower = z.clone();
            let mut upper = z.clone();
            for i in 0..n {
                for j in 0..z.ncols() {
                    lower[(i, j)] -= radii[i];
                    upper[(i, j)] += radii[i];
                }
            }
            (lower, upper)
        }
    };
    Ok(IntervalMatrix::new(lower, upper)?)
}

/// Estimation error of theta_hat against theta_true.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Largest absolute eigenvalue of the difference.
    pub spectral: f64,
    /// Entrywise absolute sum.
    pub l1_elementwise: f64,
    pub frobenius: f64,
    /// Off-diagonal support recovery rates; tpr = 1 when the true off-diagonal
    /// support is empty, fpr = 0 when its complement is empty.
    pub support_tpr: f64,
    pub support_fpr: f64,
}

pub fn error_metrics(
    theta_hat: &DMatrix<f64>,
    theta_true: &DMatrix<f64>,
    zero_tol: f64,
) -> Result<ErrorReport, SimError> {
    if theta_hat.shape() != theta_true.shape() {
        return Err(SimError::ShapeMismatch);
    }
    let p = theta_hat.nrows();
    let delta = theta_hat - theta_true;
    let spectral = SymmetricEigen::new(symmetrize(&delta))
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let l1_elementwise: f64 = delta.iter().map(|v| v.abs()).sum();
    let frobenius = delta.norm();

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let truth = theta_true[(i, j)].abs() > zero_tol;
            let est = theta_hat[(i, j)].abs() > zero_tol;
            if truth {
                pos += 1;
                if est {
                    tp += 1;
                }
            } else {
                neg += 1;
                if est {
                    fp += 1;
                }
            }
        }
    }
    let support_tpr = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
    let support_fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
    Ok(ErrorReport { spectral, l1_elementwise, frobenius, support_tpr, support_fpr })
}

/// Replication grid: every combination of structure, DGP, (n, p) pair and width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub structures: Vec<StructureKind>,
    pub dgps: Vec<DgpSpec>,
    pub n_values: Vec<usize>,
    /// p = round(ratio * n) for each ratio; `p_values` entries are used verbatim.
    #[serde(default)]
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub p_values: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub truth_mode: TruthMode,
    #[serde(default = "default_grid_count")]
    pub grid_count: usize,
    #[serde(default = "default_grid_ratio")]
    pub grid_ratio: f64,
    #[serde(default)]
    pub er_edge_value: Option<f64>,
    #[serde(default)]
    pub max_sweeps: Option<usize>,
}

fn default_grid_count() -> usize {
    20
}
fn default_grid_ratio() -> f64 {
    0.01
}

/// DGP entry in an experiment config; widths only apply to DGP1/DGP2 and
/// radius distributions only to DGP3.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    Dgp1 { widths: Vec<f64> },
    Dgp2 { widths: Vec<f64> },
    Dgp3 { dists: Vec<RadiusDist> },
}

/// One scored replication, in long format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub structure: String,
    pub dgp: String,
    pub dist: String,
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub rep: usize,
    pub spectral: f64,
    pub l1: f64,
    pub fro: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub lambda_selected: f64,
}

/// A replication that failed, with its cell key and the error message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepFailure {
    pub structure: String,
    pub dgp: String,
    pub dist: String,
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct ReplicationOutput {
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
}

/// Identifies one cell x replication; also the label from which child seeds derive.
#[derive(Debug, Clone)]
struct CellRep {
    structure: StructureKind,
    dgp_kind: &'static str,
    dist: Option<RadiusDist>,
    width: f64,
    n: usize,
    p: usize,
    rep: usize,
}

impl CellRep {
    fn label(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.structure.name(),
            self.dgp_kind,
            self.dist.map(|d| d.name()).unwrap_or("-"),
            self.n,
            self.p,
            self.width,
            self.rep
        )
    }
}

/// Run one replication end to end: structure, scaling, latent sample, intervals,
/// BIC-selected fit, scoring.
pub fn run_single_replication(
    cfg: &ExperimentConfig,
    structure: StructureKind,
    dgp: &DgpConfig,
    n: usize,
    p: usize,
    rep: usize,
) -> Result<RepRecord, SimError> {
    let cell = CellRep {
        structure,
        dgp_kind: dgp.name(),
        dist: match dgp {
            DgpConfig::Dgp3 { radius_dist, .. } => Some(*radius_dist),
            _ => None,
        },
        width: dgp.width().unwrap_or(0.0),
        n,
        p,
        rep,
    };
    let label = cell.label();
    let seed_for = |stream: &str| {
        let mut hasher = Sha256::new();
        hasher.update(cfg.master_seed.to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(stream.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    };

    let mut spec = StructureSpec::new(structure, p);
    if let Some(v) = cfg.er_edge_value {
        spec.edge_value = v;
    }
    let theta0 = make_structure(&spec, seed_for("structure"))?;
    let sigma_spec = make_sigma(&theta0, seed_for("sigma"), cfg.truth_mode)?;
    let z = sample_latent(n, &sigma_spec.sigma, seed_for("latent"))?;

    // Rebind DGP3's radius seed to this replication's stream.
    let dgp_local = match dgp {
        DgpConfig::Dgp3 { radius_dist, .. } => {
            DgpConfig::Dgp3 { radius_dist: *radius_dist, seed: seed_for("radii") }
        }
        other => other.clone(),
    };
    let intervals = make_intervals(&z, &dgp_local)?;
    let cov = bound_covariances(&intervals)?;

    let grid = lambda_grid(&cov.pooled, cfg.grid_count, cfg.grid_ratio);
    let mut solver_cfg = SolverConfig::new(grid.values[0]);
    if let Some(ms) = cfg.max_sweeps {
        solver_cfg.max_sweeps = ms;
    }
    let path = select_lambda(&cov, &grid.values, n, &solver_cfg)?;
    let fit = path.selected();
    let report = error_metrics(&fit.theta_hat, &sigma_spec.theta_true, 1e-8)?;

    Ok(RepRecord {
        structure: structure.name().to_string(),
        dgp: dgp.name().to_string(),
        dist: dgp.dist_name().to_string(),
        n,
        p,
        c: dgp.width().unwrap_or(0.0),
        rep,
        spectral: report.spectral,
        l1: report.l1_elementwise,
        fro: report.frobenius,
        tpr: report.support_tpr,
        fpr: report.support_fpr,
        lambda_selected: path.selected_lambda(),
    })
}

fn expand_dgps(spec: &DgpSpec) -> Vec<DgpConfig> {
    match spec {
        DgpSpec::Dgp1 { widths } => {
            widths.iter().map(|&w| DgpConfig::Dgp1 { width: w }).collect()
        }
        DgpSpec::Dgp2 { widths } => {
            widths.iter().map(|&w| DgpConfig::Dgp2 { width: w }).collect()
        }
        DgpSpec::Dgp3 { dists } => dists
            .iter()
            .map(|&d| DgpConfig::Dgp3 { radius_dist: d, seed: 0 })
            .collect(),
    }
}

/// Run the full grid. Per-replication failures are recorded and the run continues.
pub fn run_replications(cfg: &ExperimentConfig) -> ReplicationOutput {
    let mut out = ReplicationOutput::default();
    let mut dims: Vec<(usize, usize)> = Vec::new();
    for &n in &cfg.n_values {
        for &r in &cfg.ratios {
            dims.push((n, (r * n as f64).round() as usize));
        }
        for &p in &cfg.p_values {
            dims.push((n, p));
        }
    }
    for &structure in &cfg.structures {
        for dgp_spec in &cfg.dgps {
            for dgp in expand_dgps(dgp_spec) {
                for &(n, p) in &dims {
                    for rep in 0..cfg.reps {
                        match run_single_replication(cfg, structure, &dgp, n, p, rep) {
                            Ok(record) => out.records.push(record),
                            Err(e) => out.failures.push(RepFailure {
                                structure: structure.name().to_string(),
                                dgp: dgp.name().to_string(),
                                dist: dgp.dist_name().to_string(),
                                n,
                                p,
                                c: dgp.width().unwrap_or(0.0),
                                rep,
                                error: e.to_string(),
                            }),
                        }
                    }
                }
            }
        }
    }
    out
}

/// Mean and sample standard deviation of one metric over a cell's replications.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub structure: String,
    pub dgp: String,
    pub dist: String,
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub reps: usize,
    pub spectral_mean: f64,
    pub spectral_sd: f64,
    pub l1_mean: f64,
    pub l1_sd: f64,
    pub fro_mean: f64,
    pub fro_sd: f64,
    pub tpr_mean: f64,
    pub fpr_mean: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate long-format records into per-cell mean (sd) rows, ordered by key.
pub fn aggregate(records: &[RepRecord]) -> Vec<CellSummary> {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(String, String, String, usize, usize, String), Vec<&RepRecord>> =
        BTreeMap::new();
    for r in records {
        cells
            .entry((
                r.structure.clone(),
                r.dgp.clone(),
                r.dist.clone(),
                r.n,
                r.p,
                format!("{:.6}", r.c),
            ))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((structure, dgp, dist, n, p, _), rs)| {
            let spectral: Vec<f64> = rs.iter().map(|r| r.spectral).collect();
            let l1: Vec<f64> = rs.iter().map(|r| r.l1).collect();
            let fro: Vec<f64> = rs.iter().map(|r| r.fro).collect();
            let tpr: Vec<f64> = rs.iter().map(|r| r.tpr).collect();
            let fpr: Vec<f64> = rs.iter().map(|r| r.fpr).collect();
            let (sm, ss) = mean_sd(&spectral);
            let (lm, ls) = mean_sd(&l1);
            let (fm, fs) = mean_sd(&fro);
            CellSummary {
                structure,
                dgp,
                dist,
                n,
                p,
                c: rs[0].c,
                reps: rs.len(),
                spectral_mean: sm,
                spectral_sd: ss,
                l1_mean: lm,
                l1_sd: ls,
                fro_mean: fm,
                fro_sd: fs,
                tpr_mean: tpr.iter().sum::<f64>() / tpr.len() as f64,
                fpr_mean: fpr.iter().sum::<f64>() / fpr.len() as f64,
            }
        })
        .collect()
}
