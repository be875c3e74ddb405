//! Interval-valued observation matrices and empirical covariances of their bounds.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntervalError {
    #[error("shape mismatch: lower is {0}x{1}, upper is {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("bound violation at ({0}, {1}): lower > upper")]
    BoundViolation(usize, usize),
    #[error("non-finite entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    InsufficientSamples(usize),
    #[error("matrix must have at least one variable")]
    EmptyMatrix,
}

/// An n x p panel of interval observations, stored as lower/upper bound matrices.
#[derive(Debug, Clone)]
pub struct IntervalMatrix {
    lower: DMatrix<f64>,
    upper: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl IntervalMatrix {
    /// Validates shapes, finiteness and the lower <= upper ordering.
    /// Zero-width intervals are allowed.
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>) -> Result<Self, IntervalError> {
        if lower.shape() != upper.shape() {
            return Err(IntervalError::ShapeMismatch(
                lower.nrows(),
                lower.ncols(),
                upper.nrows(),
                upper.ncols(),
            ));
        }
        if lower.ncols() == 0 || lower.nrows() == 0 {
            return Err(IntervalError::EmptyMatrix);
        }
        for i in 0..lower.nrows() {
            for j in 0..lower.ncols() {
                let (l, u) = (lower[(i, j)], upper[(i, j)]);
                if !l.is_finite() || !u.is_finite() {
                    return Err(IntervalError::NonFiniteEntry(i, j));
                }
                if l > u {
                    return Err(IntervalError::BoundViolation(i, j));
                }
            }
        }
        Ok(Self { lower, upper, labels: None })
    }

    /// Degenerate panel where every interval has zero width.
    pub fn degenerate(points: DMatrix<f64>) -> Result<Self, IntervalError> {
        Self::new(points.clone(), points)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn n(&self) -> usize {
        self.lower.nrows()
    }

    pub fn p(&self) -> usize {
        self.lower.ncols()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Midpoint matrix (lower + upper) / 2.
    pub fn midpoints(&self) -> DMatrix<f64> {
        (&self.lower + &self.upper) * 0.5
    }
}

/// Empirical covariance matrices of the lower and upper bounds, with their pooled average.
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub s_lower: DMatrix<f64>,
    pub s_upper: DMatrix<f64>,
    pub pooled: DMatrix<f64>,
    pub mean_lower: DVector<f64>,
    pub mean_upper: DVector<f64>,
    pub n: usize,
}

impl CovariancePair {
    pub fn p(&self) -> usize {
        self.pooled.nrows()
    }

    /// Pair built from identical lower/upper covariances; used for point-valued reductions.
    pub fn from_single(s: DMatrix<f64>, n: usize) -> Self {
        let p = s.nrows();
        Self {
            pooled: s.clone(),
            s_upper: s.clone(),
            s_lower: s,
            mean_lower: DVector::zeros(p),
            mean_upper: DVector::zeros(p),
            n,
        }
    }
}

/// MLE covariance (1/n normalization) of the rows of `x`, forced exactly symmetric.
fn covariance_mle(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        mean[j] = x.column(j).sum() / n;
    }
    let mut centered = x.clone();
    for i in 0..x.nrows() {
        for j in 0..p {
            centered[(i, j)] -= mean[j];
        }
    }
    let s = centered.transpose() * &centered / n;
    (symmetrize(&s), mean)
}

/// (A + A^T) / 2, killing roundoff asymmetry.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Empirical covariances of the lower and upper bounds and their pooled average.
pub fn bound_covariances(x: &IntervalMatrix) -> Result<CovariancePair, IntervalError> {
    if x.n() < 2 {
        return Err(IntervalError::InsufficientSamples(x.n()));
    }
    let (s_lower, mean_lower) = covariance_mle(x.lower());
    let (s_upper, mean_upper) = covariance_mle(x.upper());
    let pooled = pooled_covariance(&s_lower, &s_upper)?;
    Ok(CovariancePair { s_lower, s_upper, pooled, mean_lower, mean_upper, n: x.n() })
}

/// Entrywise mean of two same-shape symmetric matrices.
pub fn pooled_covariance(
    s_lower: &DMatrix<f64>,
    s_upper: &DMatrix<f64>,
) -> Result<DMatrix<f64>, IntervalError> {
    if s_lower.shape() != s_upper.shape() {
        return Err(IntervalError::ShapeMismatch(
            s_lower.nrows(),
            s_lower.ncols(),
            s_upper.nrows(),
            s_upper.ncols(),
        ));
    }
    Ok((s_lower + s_upper) * 0.5)
}
