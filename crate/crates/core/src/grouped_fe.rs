//! Two-way grouped fixed effects.
//!
//! Given unit groups `g_i` and period groups `c_t`, the model
//! `Y_it = X_it'β + δ_{i,c_t} + ν_{t,g_i} + ε_it` is estimated by projecting
//! every N×T matrix onto the orthogonal complement of the nuisance span
//! (`M_N · m · M_T`) and running pooled OLS on the projected data.

use nalgebra::DMatrix;

use crate::clustering::{self, Grouping};
use crate::error::{PanelError, Result};
use crate::factor_ls::{self, FactorEstimate, LsConfig};
use crate::linalg;
use crate::panel::PanelData;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedFEEstimate {
    pub beta_hat: Vec<f64>,
    pub unit_grouping: Grouping,
    pub time_grouping: Grouping,
    /// Projected regressors `M_N X_k M_T`.
    pub x_tilde: Vec<DMatrix<f64>>,
    /// Projected outcome `M_N Y M_T`.
    pub y_tilde: DMatrix<f64>,
    /// `Ỹ − Σ_k β̂_k X̃_k`.
    pub residuals: DMatrix<f64>,
}

/// Proxy settings: `r_initial` factors are estimated, the leading `r_star`
/// loadings/factors are clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GfeConfig {
    pub r_initial: usize,
    pub r_star: usize,
}

impl Default for GfeConfig {
    fn default() -> Self {
        GfeConfig { r_initial: 20, r_star: 2 }
    }
}

impl GfeConfig {
    pub fn validate(&self, n: usize, t: usize) -> Result<()> {
        if self.r_star == 0 || self.r_star > self.r_initial {
            return Err(PanelError::domain(format!(
                "need 1 ≤ r_star ≤ r_initial, got r_star = {}, r_initial = {}",
                self.r_star, self.r_initial
            )));
        }
        if self.r_initial + 1 > n.min(t) {
            return Err(PanelError::domain(format!(
                "r_initial = {} must be at most min(N,T) − 1 = {}",
                self.r_initial,
                n.min(t) as i64 - 1
            )));
        }
        Ok(())
    }
}

/// Binary membership matrix (M × n_groups).
pub fn build_dummies(g: &Grouping) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(g.len(), g.n_groups());
    for (i, &label) in g.labels().iter().enumerate() {
        d[(i, label)] = 1.0;
    }
    d
}

/// `M_N · m · M_T`, computed from unit-group, period-group and pair means.
pub fn project_within(m: &DMatrix<f64>, units: &Grouping, periods: &Grouping) -> DMatrix<f64> {
    let (n, t) = m.shape();
    assert_eq!(units.len(), n, "unit grouping does not match rows");
    assert_eq!(periods.len(), t, "period grouping does not match columns");
    let (gl, cl) = (units.labels(), periods.labels());
    let (ng, nc) = (units.n_groups(), periods.n_groups());

    let mut unit_mean = DMatrix::<f64>::zeros(ng, t);
    let mut period_mean = DMatrix::<f64>::zeros(n, nc);
    let mut pair_mean = DMatrix::<f64>::zeros(ng, nc);
    for j in 0..t {
        for i in 0..n {
            let v = m[(i, j)];
            unit_mean[(gl[i], j)] += v;
            period_mean[(i, cl[j])] += v;
            pair_mean[(gl[i], cl[j])] += v;
        }
    }
    for (g, &size) in units.sizes().iter().enumerate() {
        unit_mean.row_mut(g).scale_mut(1.0 / size as f64);
    }
    for (c, &size) in periods.sizes().iter().enumerate() {
        period_mean.column_mut(c).scale_mut(1.0 / size as f64);
    }
    for (g, &gs) in units.sizes().iter().enumerate() {
        for (c, &cs) in periods.sizes().iter().enumerate() {
            pair_mean[(g, c)] /= (gs * cs) as f64;
        }
    }
    DMatrix::from_fn(n, t, |i, j| m[(i, j)] - unit_mean[(gl[i], j)] - period_mean[(i, cl[j])] + pair_mean[(gl[i], cl[j])])
}

/// Pooled OLS after the two-sided within projection.
pub fn estimate_gfe_given_groups(panel: &PanelData, units: &Grouping, periods: &Grouping) -> Result<GroupedFEEstimate> {
    if units.len() != panel.n_units() || periods.len() != panel.n_periods() {
        return Err(PanelError::domain("groupings do not match panel dimensions"));
    }
    let x_tilde: Vec<DMatrix<f64>> = panel.x().iter().map(|xk| project_within(xk, units, periods)).collect();
    let y_tilde = project_within(panel.y(), units, periods);
    linalg::check_projection_loss(panel.x(), &x_tilde, "grouped fixed effects")?;
    let omega_inv = linalg::spd_inverse(&linalg::gram(&x_tilde), "grouped fixed effects (regressors constant within group pairs?)")?;
    let beta: Vec<f64> = (omega_inv * linalg::cross(&x_tilde, &y_tilde)).iter().copied().collect();
    let mut residuals = y_tilde.clone();
    for (xk, b) in x_tilde.iter().zip(&beta) {
        residuals -= xk * *b;
    }
    Ok(GroupedFEEstimate {
        beta_hat: beta,
        unit_grouping: units.clone(),
        time_grouping: periods.clone(),
        x_tilde,
        y_tilde,
        residuals,
    })
}

/// Leading `r_star` columns of a factor fit, clustered on both sides.
pub fn groups_from_factors(fit: &FactorEstimate, r_star: usize) -> Result<(Grouping, Grouping)> {
    if r_star == 0 || r_star > fit.r {
        return Err(PanelError::domain(format!("r_star = {r_star} must lie in 1..={}", fit.r)));
    }
    let lambda_star = fit.lambda_hat.columns(0, r_star).into_owned();
    let f_star = fit.f_hat.columns(0, r_star).into_owned();
    Ok((clustering::cluster_rows(&lambda_star)?, clustering::cluster_rows(&f_star)?))
}

/// Grouped fixed effects using proxies from an existing factor fit.
pub fn estimate_gfe_from_factors(panel: &PanelData, fit: &FactorEstimate, r_star: usize) -> Result<GroupedFEEstimate> {
    let (units, periods) = groups_from_factors(fit, r_star)?;
    estimate_gfe_given_groups(panel, &units, &periods)
}

/// Full procedure: factor fit with `r_initial` factors, cluster the leading
/// `r_star` loadings and factors, then grouped fixed-effects OLS.
pub fn estimate_gfe(panel: &PanelData, cfg: &GfeConfig, ls_cfg: &LsConfig) -> Result<GroupedFEEstimate> {
    cfg.validate(panel.n_units(), panel.n_periods())?;
    let fit = factor_ls::estimate_ls(panel, &ls_cfg.with_r(cfg.r_initial))?;
    estimate_gfe_from_factors(panel, &fit, cfg.r_star)
}
