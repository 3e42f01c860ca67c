//! Monte Carlo design with one regressor and a nonlinear two-way
//! heterogeneity term:
//!
//! ```text
//! Y_it = X_it β + h(α_i, γ_t) + ε_it
//! X_it = h(α_i, γ_t) + μ_it
//! ```
//!
//! with `α, γ, ε, μ` i.i.d. standard normal and `h` a scaled Gaussian
//! kernel of bandwidth `θ`. Smaller `θ` means slower singular-value decay of
//! the heterogeneity matrix.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PanelError, Result};
use crate::estimator::{EstimatorSpec, Workspace};
use crate::factor_ls::LsConfig;
use crate::grouped_fe::{project_within, GfeConfig, GroupedFEEstimate};
use crate::inference::SigmaMode;
use crate::linalg;
use crate::panel::{format_float, PanelData};

/// Sign of the kernel exponent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSign {
    /// `exp(−(a−b)²/θ²)`.
    #[default]
    Negative,
    /// `exp(+(a−b)²/θ²)`; overflows quickly for small `θ`.
    Positive,
}

/// `exp(s·(a−b)²/θ²) / (√(2π)·θ)`.
pub fn kernel_h(a: f64, b: f64, theta: f64, sign: KernelSign) -> f64 {
    let s = match sign {
        KernelSign::Negative => -1.0,
        KernelSign::Positive => 1.0,
    };
    let d = a - b;
    (s * d * d / (theta * theta)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * theta)
}

/// Switches that zero individual noise sources (the draws still happen, so
/// the remaining components are unchanged).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSwitches {
    pub epsilon: bool,
    pub mu: bool,
    /// Whether `h(α, γ)` enters the outcome.
    pub heterogeneity_in_y: bool,
}

impl Default for NoiseSwitches {
    fn default() -> Self {
        NoiseSwitches { epsilon: true, mu: true, heterogeneity_in_y: true }
    }
}

/// An estimator row of a Monte Carlo study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EstimatorChoice {
    pub spec: EstimatorSpec,
    pub jackknife: bool,
}

impl EstimatorChoice {
    pub fn new(spec: EstimatorSpec) -> Self {
        EstimatorChoice { spec, jackknife: false }
    }

    pub fn jk(spec: EstimatorSpec) -> Self {
        EstimatorChoice { spec, jackknife: true }
    }

    pub fn label(&self) -> String {
        if self.jackknife {
            format!("{}_JK", self.spec)
        } else {
            self.spec.to_string()
        }
    }

    /// Parse labels like `ols`, `ls5`, `ls20_jk`, `gfe`, `gfe_jk`,
    /// `gfe-split`.
    pub fn parse(s: &str, gfe: GfeConfig) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        let (base, jackknife) = match lower.strip_suffix("_jk") {
            Some(b) => (b.to_string(), true),
            None => (lower.clone(), false),
        };
        let spec = match base.as_str() {
            "ols" => EstimatorSpec::Ols,
            "gfe" => EstimatorSpec::Gfe(gfe),
            "gfe_split" | "gfe_splits" => EstimatorSpec::GfeSplit(gfe),
            other => match other.strip_prefix("ls").map(|r| r.parse::<usize>()) {
                Some(Ok(r)) => EstimatorSpec::Ls { r },
                _ => return Err(PanelError::domain(format!("unknown estimator {s:?}"))),
            },
        };
        Ok(EstimatorChoice { spec, jackknife })
    }
}

/// The nine rows of the reference study: LS with 5/20/50 factors, their
/// jackknifed versions, GFE, jackknifed GFE and split-sample GFE.
pub fn reference_estimators(gfe: GfeConfig) -> Vec<EstimatorChoice> {
    let ls = |r| EstimatorSpec::Ls { r };
    vec![
        EstimatorChoice::new(ls(5)),
        EstimatorChoice::new(ls(20)),
        EstimatorChoice::new(ls(50)),
        EstimatorChoice::jk(ls(5)),
        EstimatorChoice::jk(ls(20)),
        EstimatorChoice::jk(ls(50)),
        EstimatorChoice::new(EstimatorSpec::Gfe(gfe)),
        EstimatorChoice::jk(EstimatorSpec::Gfe(gfe)),
        EstimatorChoice::new(EstimatorSpec::GfeSplit(gfe)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub beta0: f64,
    pub theta: f64,
    pub kernel_sign: KernelSign,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorChoice>,
    pub noise: NoiseSwitches,
    pub ls: LsConfig,
    pub sigma_mode: SigmaMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            t: 100,
            beta0: 1.0,
            theta: 0.125,
            kernel_sign: KernelSign::Negative,
            reps: 200,
            seed: 0,
            estimators: reference_estimators(GfeConfig::default()),
            noise: NoiseSwitches::default(),
            ls: LsConfig::default(),
            sigma_mode: SigmaMode::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(PanelError::domain("theta must be positive"));
        }
        if self.reps == 0 {
            return Err(PanelError::domain("reps must be at least 1"));
        }
        if self.n == 0 || self.t == 0 {
            return Err(PanelError::domain("n and t must be positive"));
        }
        if !self.beta0.is_finite() {
            return Err(PanelError::domain("beta0 must be finite"));
        }
        Ok(())
    }
}

/// Draw replication `rep` from the stream `(seed, rep)`.
pub fn generate_panel(cfg: &SimConfig, rep: usize) -> Result<PanelData> {
    cfg.validate()?;
    let (n, t) = (cfg.n, cfg.t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep as u64);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let alpha: Vec<f64> = (0..n).map(|_| draw()).collect();
    let gamma: Vec<f64> = (0..t).map(|_| draw()).collect();
    let mut eps = DMatrix::zeros(n, t);
    let mut mu = DMatrix::zeros(n, t);
    for target in [&mut eps, &mut mu] {
        for i in 0..n {
            for j in 0..t {
                target[(i, j)] = draw();
            }
        }
    }
    if !cfg.noise.epsilon {
        eps.fill(0.0);
    }
    if !cfg.noise.mu {
        mu.fill(0.0);
    }
    let het = DMatrix::from_fn(n, t, |i, j| kernel_h(alpha[i], gamma[j], cfg.theta, cfg.kernel_sign));
    if het.iter().any(|v| !v.is_finite()) {
        return Err(PanelError::domain(format!(
            "kernel overflow at theta = {}; the positive-exponent kernel is only usable for large theta",
            cfg.theta
        )));
    }
    let x = &het + mu;
    let mut y = &x * cfg.beta0 + eps;
    if cfg.noise.heterogeneity_in_y {
        y += &het;
    }
    // the recorded truth is the heterogeneity actually present in Y
    let gamma_true = if cfg.noise.heterogeneity_in_y { het } else { DMatrix::zeros(n, t) };
    PanelData::new(y, vec![x])?.with_truth(gamma_true, vec![cfg.beta0])
}

/// Split `β̂_G − β⁰` into a noise part `φ` and an approximation part `κ`.
pub fn decompose_error(est: &GroupedFEEstimate, panel: &PanelData) -> Result<(Vec<f64>, Vec<f64>)> {
    let (Some(gamma), Some(beta0)) = (panel.gamma_true(), panel.beta_true()) else {
        return Err(PanelError::domain("error decomposition needs the simulation truth"));
    };
    let mut eps = panel.y() - gamma;
    for (xk, b) in panel.x().iter().zip(beta0) {
        eps -= xk * *b;
    }
    let gamma_tilde = project_within(gamma, &est.unit_grouping, &est.time_grouping);
    let omega_inv = linalg::spd_inverse(&linalg::gram(&est.x_tilde), "error decomposition")?;
    let phi = (&omega_inv * linalg::cross(&est.x_tilde, &eps)).iter().copied().collect();
    let kappa = (&omega_inv * linalg::cross(&est.x_tilde, &gamma_tilde)).iter().copied().collect();
    Ok((phi, kappa))
}

/// Table row for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub estimator: String,
    pub mean_bias: f64,
    pub std_dev: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCReport {
    pub rows: Vec<McRow>,
    pub reps: usize,
    pub seed: u64,
}

impl MCReport {
    pub fn row(&self, label: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == label)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| PanelError::Io(std::io::Error::other(e.to_string()));
        out.write_record(["schema", "estimator", "mean_bias", "std_dev", "mean_se", "coverage", "n_ok", "n_fail"])
            .map_err(io)?;
        for r in &self.rows {
            out.write_record([
                "1".to_string(),
                r.estimator.clone(),
                format_float(r.mean_bias),
                format_float(r.std_dev),
                format_float(r.mean_se),
                format_float(r.coverage),
                r.n_ok.to_string(),
                r.n_fail.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for MCReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>10} {:>10} {:>10} {:>9} {:>6}", "estimator", "mean bias", "std dev", "mean se", "coverage", "fail")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>9.2} {:>6}",
                r.estimator, r.mean_bias, r.std_dev, r.mean_se, r.coverage, r.n_fail
            )?;
        }
        write!(f, "reps = {}, seed = {}", self.reps, self.seed)
    }
}

/// β̂ and optional ŝe of the first coefficient, per estimator, for one
/// replication.
pub type RepOutcome = Vec<Option<(f64, Option<f64>)>>;

/// Run every configured estimator on replication `rep`.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<RepOutcome> {
    let panel = generate_panel(cfg, rep)?;
    let ws = Workspace::new(&panel, cfg.ls, cfg.sigma_mode);
    let full = ws.full();
    Ok(cfg
        .estimators
        .iter()
        .map(|e| {
            ws.evaluate(&e.spec, e.jackknife, &full)
                .ok()
                .map(|r| (r.beta_hat[0], r.se.as_ref().map(|s| s[0])))
        })
        .collect())
}

/// Replicate the design `cfg.reps` times and summarize each estimator.
///
/// Replications run in parallel on the current rayon pool; aggregation
/// walks them in replication order, so the report does not depend on
/// scheduling. Failed estimates are excluded and counted.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<MCReport> {
    cfg.validate()?;
    let outcomes: Vec<RepOutcome> = (0..cfg.reps).into_par_iter().map(|rep| run_replication(cfg, rep)).collect::<Result<_>>()?;
    Ok(summarize(cfg, &outcomes))
}

pub fn summarize(cfg: &SimConfig, outcomes: &[RepOutcome]) -> MCReport {
    let rows = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let ok: Vec<(f64, Option<f64>)> = outcomes.iter().filter_map(|o| o[j]).collect();
            let n_ok = ok.len();
            let m = n_ok as f64;
            let mean_bias = ok.iter().map(|(b, _)| b - cfg.beta0).sum::<f64>() / m;
            let mean_beta = ok.iter().map(|(b, _)| *b).sum::<f64>() / m;
            let std_dev = if n_ok > 1 {
                (ok.iter().map(|(b, _)| (b - mean_beta).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else if n_ok == 1 {
                0.0
            } else {
                f64::NAN
            };
            let with_se: Vec<(f64, f64)> = ok.iter().filter_map(|(b, s)| s.map(|s| (*b, s))).collect();
            let ms = with_se.len() as f64;
            let mean_se = with_se.iter().map(|(_, s)| s).sum::<f64>() / ms;
            let coverage = with_se.iter().filter(|(b, s)| (b - cfg.beta0).abs() <= 1.96 * s).count() as f64 / ms;
            McRow {
                estimator: e.label(),
                mean_bias,
                std_dev,
                mean_se,
                coverage,
                n_ok,
                n_fail: outcomes.len() - n_ok,
            }
        })
        .collect();
    MCReport { rows, reps: outcomes.len(), seed: cfg.seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_peak() {
        let v = kernel_h(0.3, 0.3, 0.125, KernelSign::Negative);
        assert!((v - 3.191538243211461).abs() < 1e-12, "{v}");
        assert_eq!(v, kernel_h(0.3, 0.3, 0.125, KernelSign::Positive));
    }

    #[test]
    fn kernel_decays_and_is_symmetric() {
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let v = kernel_h(0.0, k as f64 * 0.05, 0.125, KernelSign::Negative);
            assert!(v <= prev);
            prev = v;
        }
        assert!(prev < 1e-100);
        assert_eq!(kernel_h(0.7, -1.2, 0.3, KernelSign::Negative), kernel_h(-1.2, 0.7, 0.3, KernelSign::Negative));
    }

    #[test]
    fn parse_labels() {
        let g = GfeConfig::default();
        assert_eq!(EstimatorChoice::parse("ls20_jk", g).unwrap(), EstimatorChoice::jk(EstimatorSpec::Ls { r: 20 }));
        assert_eq!(EstimatorChoice::parse("gfe-split", g).unwrap(), EstimatorChoice::new(EstimatorSpec::GfeSplit(g)));
        assert_eq!(EstimatorChoice::parse("OLS", g).unwrap().label(), "OLS");
        assert!(EstimatorChoice::parse("lsx", g).is_err());
    }

    #[test]
    fn invalid_theta() {
        let cfg = SimConfig { theta: 0.0, ..SimConfig::default() };
        assert!(generate_panel(&cfg, 0).is_err());
    }
}
