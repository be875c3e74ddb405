//! Interval graphical lasso: sparse precision-matrix estimation for
//! interval-valued data, with BIC model selection, a simulation harness and a
//! rolling-window portfolio backtester.
//!
//! The estimator pools the empirical covariances of the interval lower and upper
//! bounds and solves an L1-penalized log-det problem by block coordinate descent
//! on its dual. See [`solver::igl_fit`] for the entry point and
//! [`selection::select_lambda`] for penalty selection.

pub mod backtest;
pub mod interval;
pub mod io;
pub mod selection;
pub mod sim;
pub mod solver;

pub use interval::{bound_covariances, pooled_covariance, CovariancePair, IntervalMatrix};
pub use selection::{bic_int, lambda_grid, select_lambda, PathResult};
pub use solver::{duality_gap, eigen_bounds_check, igl_fit, kkt_check, IglFit, SolverConfig};
