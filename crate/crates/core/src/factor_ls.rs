//! Least-squares estimation of a panel regression with `R` interactive fixed
//! effects, by alternating principal components and pooled OLS.
//!
//! Each start alternates
//!
//! 1. `(λ, f)` = best rank-`R` approximation of `Y − Σ_k β_k X_k`,
//! 2. `β` = pooled OLS of `Y − λf'` on the regressors,
//!
//! until the relative change in the sum of squared residuals drops below
//! `tol`. Because both half-steps minimize the same objective over a subset of
//! the parameters, the objective never increases within a start. The
//! alternation can stall at local minima, so several starting values of `β`
//! are tried and the lowest objective wins.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{PanelError, Result};
use crate::linalg;
use crate::panel::PanelData;

/// Estimated coefficients, loadings (N×R) and factors (T×R).
///
/// Normalized so that `f'f / T = I` and `λ'λ` is diagonal with
/// non-increasing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    pub beta_hat: Vec<f64>,
    pub lambda_hat: DMatrix<f64>,
    pub f_hat: DMatrix<f64>,
    /// Sum of squared residuals at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub r: usize,
    /// Index of the start that produced this estimate.
    pub start: usize,
}

impl FactorEstimate {
    /// `λ̂ f̂'`, the fitted interactive component.
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.lambda_hat * self.f_hat.transpose()
    }

    /// `Y − Σ_k β̂_k X_k − λ̂ f̂'`.
    pub fn residuals(&self, panel: &PanelData) -> DMatrix<f64> {
        let mut e = remove_regressors(panel, &self.beta_hat);
        if self.r > 0 {
            e -= self.common_component();
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsConfig {
    /// Number of factors `R`; zero reduces to pooled OLS.
    pub r: usize,
    pub n_starts: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LsConfig {
    fn default() -> Self {
        LsConfig { r: 1, n_starts: 5, tol: 1e-9, max_iter: 1000, seed: 0 }
    }
}

impl LsConfig {
    pub fn with_r(self, r: usize) -> Self {
        LsConfig { r, ..self }
    }

    pub fn validate(&self, n: usize, t: usize) -> Result<()> {
        if self.r + 1 > n.min(t) {
            return Err(PanelError::domain(format!(
                "factor count R = {} must be at most min(N,T) − 1 = {}",
                self.r,
                n.min(t) as i64 - 1
            )));
        }
        if self.n_starts == 0 {
            return Err(PanelError::domain("n_starts must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(PanelError::domain("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(PanelError::domain("max_iter must be positive"));
        }
        Ok(())
    }
}

/// Best rank-`r` approximation `λ f'` of `residual`, normalized so that
/// `f'f / T = I` and `λ'λ` is diagonal with non-increasing entries.
pub fn pca_step(residual: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, t) = residual.shape();
    if r > n.min(t) {
        return Err(PanelError::domain(format!("r = {r} exceeds min(N,T) = {}", n.min(t))));
    }
    if r == 0 {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(t, 0)));
    }
    let tf = t as f64;
    let f = if t <= n {
        let (_, vecs) = linalg::sorted_eigen(residual.tr_mul(residual));
        vecs.columns(0, r).into_owned()
    } else {
        // eigen-decompose the smaller N×N side and map to the period side
        let (vals, vecs) = linalg::sorted_eigen(residual * residual.transpose());
        let top = vals[0].max(0.0);
        let mut f = DMatrix::zeros(t, r);
        let mut degenerate = vec![false; r];
        for j in 0..r {
            if !(vals[j] > 1e-14 * top) {
                degenerate[j] = true;
                continue;
            }
            let mut col = residual.tr_mul(&vecs.column(j));
            for l in 0..j {
                if !degenerate[l] {
                    let prev = f.column(l).clone_owned();
                    col -= &prev * prev.dot(&col);
                }
            }
            let norm = col.norm();
            if norm > 0.0 {
                f.set_column(j, &(col / norm));
            } else {
                degenerate[j] = true;
            }
        }
        linalg::complete_orthonormal(f, &degenerate)
    };
    let f = f * tf.sqrt();
    let lambda = residual * &f / tf;
    Ok((lambda, f))
}

/// Pooled OLS of `Y − λf'` on the regressors.
pub fn ols_step(panel: &PanelData, lambda: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<Vec<f64>> {
    let gram_inv = linalg::spd_inverse(&linalg::gram(panel.x()), "pooled OLS")?;
    Ok(ols_with_inverse(panel, &gram_inv, lambda, f))
}

fn ols_with_inverse(panel: &PanelData, gram_inv: &DMatrix<f64>, lambda: &DMatrix<f64>, f: &DMatrix<f64>) -> Vec<f64> {
    let rhs = if lambda.ncols() == 0 {
        linalg::cross(panel.x(), panel.y())
    } else {
        linalg::cross(panel.x(), &(panel.y() - lambda * f.transpose()))
    };
    (gram_inv * rhs).iter().copied().collect()
}

/// Pooled OLS of `Y` on the regressors, ignoring any factor structure.
pub fn pooled_ols(panel: &PanelData) -> Result<Vec<f64>> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    ols_step(panel, &DMatrix::zeros(n, 0), &DMatrix::zeros(t, 0))
}

pub(crate) fn remove_regressors(panel: &PanelData, beta: &[f64]) -> DMatrix<f64> {
    let mut w = panel.y().clone();
    for (xk, b) in panel.x().iter().zip(beta) {
        w -= xk * *b;
    }
    w
}

struct StartOutcome {
    estimate: FactorEstimate,
    trace: Vec<f64>,
}

/// Objective path of one start: the sum of squared residuals after each
/// (PCA, OLS) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StartTrace {
    pub start: usize,
    pub objectives: Vec<f64>,
}

/// Interactive fixed-effects least squares with multiple starts.
pub fn estimate_ls(panel: &PanelData, cfg: &LsConfig) -> Result<FactorEstimate> {
    estimate_ls_traced(panel, cfg).map(|(est, _)| est)
}

/// As [`estimate_ls`], also returning every start's objective path.
pub fn estimate_ls_traced(panel: &PanelData, cfg: &LsConfig) -> Result<(FactorEstimate, Vec<StartTrace>)> {
    cfg.validate(panel.n_units(), panel.n_periods())?;
    let gram_inv = linalg::spd_inverse(&linalg::gram(panel.x()), "pooled OLS")?;
    let (n, t) = (panel.n_units(), panel.n_periods());
    let beta_ols = ols_with_inverse(panel, &gram_inv, &DMatrix::zeros(n, 0), &DMatrix::zeros(t, 0));

    let outcomes: Vec<StartOutcome> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| {
            let beta0 = starting_beta(&beta_ols, cfg.seed, s);
            run_start(panel, cfg, &gram_inv, beta0, s)
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (s, o) in outcomes.iter().enumerate() {
        if o.estimate.objective < outcomes[best].estimate.objective {
            best = s;
        }
    }
    let traces = outcomes.iter().enumerate().map(|(s, o)| StartTrace { start: s, objectives: o.trace.clone() }).collect();
    let estimate = outcomes.into_iter().nth(best).expect("n_starts > 0").estimate;
    Ok((estimate, traces))
}

/// Start 0 is pooled OLS; later starts add a uniform perturbation of scale
/// `0.5·‖β_ols‖∞ + 0.5` drawn from the stream `(seed, start)`.
fn starting_beta(beta_ols: &[f64], seed: u64, start: usize) -> Vec<f64> {
    if start == 0 {
        return beta_ols.to_vec();
    }
    let scale = 0.5 * beta_ols.iter().fold(0.0f64, |m, b| m.max(b.abs())) + 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    beta_ols.iter().map(|b| b + rng.gen_range(-scale..=scale)).collect()
}

fn run_start(
    panel: &PanelData,
    cfg: &LsConfig,
    gram_inv: &DMatrix<f64>,
    beta0: Vec<f64>,
    start: usize,
) -> Result<StartOutcome> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if cfg.r == 0 {
        let beta = ols_with_inverse(panel, gram_inv, &DMatrix::zeros(n, 0), &DMatrix::zeros(t, 0));
        let objective = remove_regressors(panel, &beta).norm_squared();
        let estimate = FactorEstimate {
            beta_hat: beta,
            lambda_hat: DMatrix::zeros(n, 0),
            f_hat: DMatrix::zeros(t, 0),
            objective,
            iterations: 1,
            converged: true,
            r: 0,
            start,
        };
        return Ok(StartOutcome { estimate, trace: vec![objective] });
    }

    // below this the fit is exact up to rounding and relative changes are noise
    let floor = 1e-28 * panel.y().norm_squared().max(f64::MIN_POSITIVE);
    let mut beta = beta0;
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut lambda = DMatrix::zeros(n, cfg.r);
    let mut f = DMatrix::zeros(t, cfg.r);
    let mut objective = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let w = remove_regressors(panel, &beta);
        (lambda, f) = pca_step(&w, cfg.r)?;
        beta = ols_with_inverse(panel, gram_inv, &lambda, &f);
        let mut resid = remove_regressors(panel, &beta);
        resid.gemm(-1.0, &lambda, &f.transpose(), 1.0);
        objective = resid.norm_squared();
        trace.push(objective);
        if objective <= floor || (prev - objective).abs() < cfg.tol * prev {
            converged = true;
            break;
        }
        prev = objective;
    }
    let estimate = FactorEstimate {
        beta_hat: beta,
        lambda_hat: lambda,
        f_hat: f,
        objective,
        iterations: trace.len(),
        converged,
        r: cfg.r,
        start,
    };
    Ok(StartOutcome { estimate, trace })
}

/// Profiled objective `min_{λ,f} SSR(β)` for a fixed coefficient vector.
pub fn profiled_objective(panel: &PanelData, beta: &[f64], r: usize) -> Result<f64> {
    let w = remove_regressors(panel, beta);
    let (lambda, f) = pca_step(&w, r)?;
    Ok((w - lambda * f.transpose()).norm_squared())
}
