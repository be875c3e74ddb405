//! Regularization path and BIC-based penalty selection.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::interval::CovariancePair;
use crate::solver::{igl_fit, igl_fit_warm, lambda_max, log_det_pd, IglFit, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("grid must contain at least one lambda")]
    EmptyGrid,
    #[error("grid must be strictly decreasing")]
    GridNotDecreasing,
    #[error("no lambda on the grid produced a usable fit")]
    AllFitsFailed,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub const DEFAULT_GRID_COUNT: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 0.01;
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

/// A descending lambda grid. `degenerate` marks the fixed fallback used when the
/// pooled covariance has no off-diagonal signal.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Log-spaced descending grid from `2 * max offdiag |pooled|` (the smallest lambda
/// giving a fully diagonal estimate) down to `ratio` times that. A pooled matrix
/// with all-zero off-diagonals falls back to a fixed grid on [1e-3, 1].
pub fn lambda_grid(pooled: &DMatrix<f64>, count: usize, ratio: f64) -> LambdaGrid {
    assert!(count >= 2, "grid needs at least 2 points");
    assert!(ratio > 0.0 && ratio < 1.0, "ratio must be in (0, 1)");
    let top = lambda_max(pooled);
    if top == 0.0 {
        return LambdaGrid { values: log_space(1.0, 1e-3, count), degenerate: true };
    }
    LambdaGrid { values: log_space(top, ratio * top, count), degenerate: false }
}

fn log_space(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let (lh, ll) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (lh + (ll - lh) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// BIC adapted to the pooled interval likelihood:
/// `n (Tr((S^l + S^u) theta) - 2 log det theta) + k log n`, where k counts
/// upper-triangular entries (diagonal included) with |theta_ij| > zero_tol.
pub fn bic_int(
    fit: &IglFit,
    cov: &CovariancePair,
    n: usize,
    zero_tol: f64,
) -> Result<f64, SolverError> {
    let theta = &fit.theta_hat;
    let sum_cov = &cov.s_lower + &cov.s_upper;
    let trace: f64 = sum_cov.component_mul(theta).sum();
    let log_det = log_det_pd(theta)?;
    let k = dof(theta, zero_tol);
    Ok(n as f64 * (trace - 2.0 * log_det) + k as f64 * (n as f64).ln())
}

/// Effective degrees of freedom: nonzero upper-triangular entries, diagonal included.
pub fn dof(theta: &DMatrix<f64>, zero_tol: f64) -> usize {
    let p = theta.nrows();
    let mut k = 0;
    for i in 0..p {
        for j in i..p {
            if theta[(i, j)].abs() > zero_tol {
                k += 1;
            }
        }
    }
    k
}

/// One entry of a fitted regularization path.
#[derive(Debug)]
pub struct PathEntry {
    pub lambda: f64,
    pub fit: Option<IglFit>,
    pub bic: Option<f64>,
    pub k: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug)]
pub struct PathResult {
    /// Strictly decreasing lambda values.
    pub grid: Vec<f64>,
    pub entries: Vec<PathEntry>,
    /// Index of the BIC-minimizing entry; ties break toward the larger lambda.
    pub selected_index: usize,
}

impl PathResult {
    pub fn selected(&self) -> &IglFit {
        self.entries[self.selected_index]
            .fit
            .as_ref()
            .expect("selected entry always holds a fit")
    }

    pub fn selected_lambda(&self) -> f64 {
        self.grid[self.selected_index]
    }
}

/// Fit the path from the largest lambda down, warm-starting each fit from the
/// previous working covariance, and select the BIC minimizer. Failed fits are
/// recorded and excluded from selection.
pub fn select_lambda(
    cov: &CovariancePair,
    grid: &[f64],
    n: usize,
    cfg: &SolverConfig,
) -> Result<PathResult, SelectionError> {
    select_lambda_with(cov, grid, n, cfg, true)
}

/// As [`select_lambda`]; `warm = false` runs every fit from the cold initialization
/// (fits then independent, safe to parallelize by the caller).
pub fn select_lambda_with(
    cov: &CovariancePair,
    grid: &[f64],
    n: usize,
    cfg: &SolverConfig,
    warm: bool,
) -> Result<PathResult, SelectionError> {
    if grid.is_empty() {
        return Err(SelectionError::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SelectionError::GridNotDecreasing);
    }

    let mut entries = Vec::with_capacity(grid.len());
    let mut prev_sigma: Option<DMatrix<f64>> = None;
    for &lambda in grid {
        let mut fit_cfg = cfg.clone();
        fit_cfg.lambda = lambda;
        let result = match (&prev_sigma, warm) {
            (Some(sigma), true) => igl_fit_warm(cov, &fit_cfg, sigma),
            _ => igl_fit(cov, &fit_cfg),
        };
        match result {
            Ok(fit) => {
                if warm {
                    prev_sigma = Some(fit.sigma_hat.clone());
                }
                match bic_int(&fit, cov, n, DEFAULT_ZERO_TOL) {
                    Ok(bic) => {
                        let k = dof(&fit.theta_hat, DEFAULT_ZERO_TOL);
                        entries.push(PathEntry {
                            lambda,
                            fit: Some(fit),
                            bic: Some(bic),
                            k: Some(k),
                            failure: None,
                        });
                    }
                    Err(e) => entries.push(PathEntry {
                        lambda,
                        fit: None,
                        bic: None,
                        k: None,
                        failure: Some(e.to_string()),
                    }),
                }
            }
            Err(e) => entries.push(PathEntry {
                lambda,
                fit: None,
                bic: None,
                k: None,
                failure: Some(e.to_string()),
            }),
        }
    }

    // argmin BIC with strict improvement: ties stay at the smaller index (larger lambda).
    let mut selected = None;
    for (i, e) in entries.iter().enumerate() {
        if let Some(bic) = e.bic {
            match selected {
                None => selected = Some((i, bic)),
                Some((_, best)) if bic < best => selected = Some((i, bic)),
                _ => {}
            }
        }
    }
    let (selected_index, _) = selected.ok_or(SelectionError::AllFitsFailed)?;
    Ok(PathResult { grid: grid.to_vec(), entries, selected_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn grid_log_spacing_example() {
        let pooled = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let grid = lambda_grid(&pooled, 3, 0.01);
        assert!(!grid.degenerate);
        assert_abs_diff_eq!(grid.values[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.values[1], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.values[2], 0.006, epsilon = 1e-12);
    }

    #[test]
    fn identity_pooled_uses_fallback_grid() {
        let grid = lambda_grid(&DMatrix::identity(3, 3), 5, 0.01);
        assert!(grid.degenerate);
        assert_abs_diff_eq!(grid.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(*grid.values.last().unwrap(), 1e-3, epsilon = 1e-12);
    }

    #[test]
    fn fit_at_grid_top_is_diagonal() {
        let pooled = DMatrix::from_row_slice(3, 3, &[
            1.5, 0.6, -0.2, 0.6, 1.2, 0.3, -0.2, 0.3, 1.0,
        ]);
        let cov = CovariancePair::from_single(pooled.clone(), 100);
        let grid = lambda_grid(&pooled, 10, 0.01);
        let fit = igl_fit(&cov, &SolverConfig::new(grid.values[0])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(fit.theta_hat[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn bic_hand_evaluations() {
        // theta = 0.8 I_2, S^l = S^u = I_2, n = 100
        let cov = CovariancePair::from_single(DMatrix::identity(2, 2), 100);
        let fit = igl_fit(&cov, &SolverConfig::new(0.5)).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[(0, 0)], 0.8, epsilon = 1e-12);
        let bic = bic_int(&fit, &cov, 100, 1e-8).unwrap();
        let expected = 100.0 * (3.2 - 2.0 * (0.8f64 * 0.8).ln()) + 2.0 * 100f64.ln();
        assert_abs_diff_eq!(bic, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(bic, 418.47, epsilon = 0.01);

        // theta = I_2 directly: n (Tr(2I) - 0) + 2 log n
        let mut fit_id = fit.clone();
        fit_id.theta_hat = DMatrix::identity(2, 2);
        let bic_id = bic_int(&fit_id, &cov, 100, 1e-8).unwrap();
        assert_abs_diff_eq!(bic_id, 400.0 + 2.0 * 100f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(bic_id, 409.21, epsilon = 0.01);
    }

    #[test]
    fn single_lambda_grid_selects_it() {
        let pooled = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let cov = CovariancePair::from_single(pooled, 100);
        let res = select_lambda(&cov, &[0.3], 100, &SolverConfig::new(0.3)).unwrap();
        assert_eq!(res.selected_index, 0);
        assert_abs_diff_eq!(res.selected_lambda(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_pooled_selects_diagonal_fit() {
        let cov = CovariancePair::from_single(DMatrix::identity(3, 3), 100);
        let grid = lambda_grid(&cov.pooled, 5, 0.01);
        let res = select_lambda(&cov, &grid.values, 100, &SolverConfig::new(1.0)).unwrap();
        let theta = &res.selected().theta_hat;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(theta[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn warm_and_cold_paths_agree_in_objective() {
        let pooled = DMatrix::from_row_slice(3, 3, &[
            1.4, 0.7, 0.2, 0.7, 1.1, -0.4, 0.2, -0.4, 0.9,
        ]);
        let cov = CovariancePair::from_single(pooled.clone(), 200);
        let grid = lambda_grid(&pooled, 8, 0.05);
        let cfg = SolverConfig::new(1.0).with_epsilon(1e-11);
        let warm = select_lambda_with(&cov, &grid.values, 200, &cfg, true).unwrap();
        let cold = select_lambda_with(&cov, &grid.values, 200, &cfg, false).unwrap();
        for (w, c) in warm.entries.iter().zip(cold.entries.iter()) {
            let (wf, cf) = (w.fit.as_ref().unwrap(), c.fit.as_ref().unwrap());
            assert!((wf.objective - cf.objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn bic_invariant_under_consistent_permutation() {
        let pooled = DMatrix::from_row_slice(3, 3, &[
            1.4, 0.7, 0.2, 0.7, 1.1, -0.4, 0.2, -0.4, 0.9,
        ]);
        let cov = CovariancePair::from_single(pooled.clone(), 150);
        let fit = igl_fit(&cov, &SolverConfig::new(0.5).with_epsilon(1e-10)).unwrap();
        let bic = bic_int(&fit, &cov, 150, 1e-8).unwrap();

        // permutation (2, 0, 1)
        let perm = [2usize, 0, 1];
        let mut pp = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                pp[(i, j)] = pooled[(perm[i], perm[j])];
            }
        }
        let cov_p = CovariancePair::from_single(pp, 150);
        let fit_p = igl_fit(&cov_p, &SolverConfig::new(0.5).with_epsilon(1e-10)).unwrap();
        let bic_p = bic_int(&fit_p, &cov_p, 150, 1e-8).unwrap();
        assert_abs_diff_eq!(bic, bic_p, epsilon = 1e-4);
    }
}
