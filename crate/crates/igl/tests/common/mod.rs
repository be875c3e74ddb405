//! Shared test support: random instances and an independent slow reference solver.
// Each integration-test binary compiles its own copy; not every binary uses
// every helper.
#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use igl::interval::{symmetrize, CovariancePair};

/// Wishart-style covariance draw: S = G'G / n for an n x p standard normal G.
pub fn wishart(p: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut g: DMatrix<f64> = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let v: f64 = StandardNormal.sample(rng);
            g[(i, j)] = v;
        }
    }
    symmetrize(&(g.transpose() * &g / n as f64))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random covariance pair with distinct lower/upper Wishart draws.
pub fn random_cov_pair(p: usize, rng: &mut ChaCha8Rng) -> CovariancePair {
    let n = p * 10;
    let s_lower = wishart(p, n, rng);
    let s_upper = wishart(p, n, rng);
    let pooled = (&s_lower + &s_upper) * 0.5;
    CovariancePair {
        s_lower,
        s_upper,
        pooled,
        mean_lower: nalgebra::DVector::zeros(p),
        mean_upper: nalgebra::DVector::zeros(p),
        n,
    }
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn log_det(a: &DMatrix<f64>) -> Option<f64> {
    Cholesky::new(a.clone())
        .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn primal(theta: &DMatrix<f64>, s: &DMatrix<f64>, penalty: f64) -> Option<f64> {
    let ld = log_det(theta)?;
    let trace: f64 = s.component_mul(theta).sum();
    let l1: f64 = theta.iter().map(|v| v.abs()).sum();
    Some(trace - ld + penalty * l1)
}

/// Duality gap of a primal iterate, using the entrywise projection of its inverse
/// onto the dual box as the dual candidate. None while the projection is not PD.
fn dual_gap(theta: &DMatrix<f64>, s: &DMatrix<f64>, penalty: f64) -> Option<f64> {
    let p = theta.nrows();
    let inv = Cholesky::new(theta.clone())?.inverse();
    let mut w = symmetrize(&inv);
    for i in 0..p {
        for j in 0..p {
            let lo = s[(i, j)] - penalty;
            let hi = s[(i, j)] + penalty;
            w[(i, j)] = w[(i, j)].clamp(lo, hi);
        }
    }
    let dual = log_det(&w)? + p as f64;
    Some(primal(theta, s, penalty)? - dual)
}

/// Proximal-gradient graphical lasso:
/// `min over PD Theta:  Tr(S Theta) - log det Theta + penalty ||Theta||_1`,
/// run until the duality gap drops below `gap_tol`. Deliberately simple and
/// entirely separate from the production block coordinate descent path.
pub fn prox_glasso(
    s: &DMatrix<f64>,
    penalty: f64,
    gap_tol: f64,
    max_iter: usize,
) -> DMatrix<f64> {
    let p = s.nrows();
    let mut theta = DMatrix::identity(p, p);
    // start from a PD diagonal guess matched to S's diagonal
    for j in 0..p {
        theta[(j, j)] = 1.0 / (s[(j, j)] + penalty);
    }
    let mut step = 1.0;
    for _ in 0..max_iter {
        let inv = Cholesky::new(theta.clone()).expect("iterate stayed PD").inverse();
        let grad = s - symmetrize(&inv);
        let f_cur = primal(&theta, s, penalty).unwrap();
        // backtracking line search on the smooth part
        loop {
            let mut cand = &theta - step * &grad;
            for i in 0..p {
                for j in 0..p {
                    cand[(i, j)] = soft(cand[(i, j)], step * penalty);
                }
            }
            let cand = symmetrize(&cand);
            let smooth_ok = match (primal(&cand, s, penalty), Some(&cand)) {
                (Some(f_cand), _) => {
                    let diff = &cand - &theta;
                    let lin: f64 = grad.component_mul(&diff).sum();
                    let quad = diff.norm_squared() / (2.0 * step);
                    let l1_cand: f64 = cand.iter().map(|v| v.abs()).sum();
                    let l1_cur: f64 = theta.iter().map(|v| v.abs()).sum();
                    // majorization condition on the smooth part
                    f_cand - penalty * l1_cand
                        <= f_cur - penalty * l1_cur + lin + quad + 1e-14
                }
                _ => false,
            };
            if smooth_ok {
                theta = cand;
                step *= 1.1;
                break;
            }
            step *= 0.5;
            assert!(step > 1e-14, "line search collapsed");
        }
        if let Some(gap) = dual_gap(&theta, s, penalty) {
            if gap <= gap_tol {
                break;
            }
        }
    }
    theta
}

/// Reference solution of the interval objective
/// `lambda ||Theta||_1 + Tr((S^l + S^u) Theta) - 2 log det Theta`,
/// run to the stated duality gap on that scale.
pub fn oracle_igl(cov: &CovariancePair, lambda: f64, gap_tol: f64) -> DMatrix<f64> {
    // the interval objective is exactly twice the pooled objective at half penalty
    prox_glasso(&cov.pooled, lambda / 2.0, gap_tol / 2.0, 50_000)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
