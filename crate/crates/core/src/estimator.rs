//! Estimator handles shared by the jackknife, the bootstrap, the Monte Carlo
//! engine and the CLI.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{HalfSample, PanelError, Result};
use crate::factor_ls::{self, FactorEstimate, LsConfig};
use crate::grouped_fe::{self, GfeConfig, GroupedFEEstimate};
use crate::inference::{self, SigmaMode};
use crate::panel::{EstimateReport, EstimatorKind, EstimatorTag, PanelData};
use crate::split_sample::{self, Block, BlockProxies};

/// Anything that maps a panel to an [`EstimateReport`].
pub trait Estimator: Sync {
    fn tag(&self) -> EstimatorTag;
    fn estimate(&self, panel: &PanelData) -> Result<EstimateReport>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorSpec {
    /// Pooled OLS ignoring all heterogeneity.
    Ols,
    /// Interactive fixed effects with `r` factors.
    Ls { r: usize },
    Gfe(GfeConfig),
    GfeSplit(GfeConfig),
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Ols => EstimatorKind::Ols,
            EstimatorSpec::Ls { .. } => EstimatorKind::Ls,
            EstimatorSpec::Gfe(_) => EstimatorKind::Gfe,
            EstimatorSpec::GfeSplit(_) => EstimatorKind::GfeSplit,
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Ols => f.write_str("OLS"),
            EstimatorSpec::Ls { r } => write!(f, "LS{r}"),
            EstimatorSpec::Gfe(_) => f.write_str("GFE"),
            EstimatorSpec::GfeSplit(_) => f.write_str("GFE_SPLIT"),
        }
    }
}

/// A spec with its numerical settings, optionally jackknifed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfiguredEstimator {
    pub spec: EstimatorSpec,
    pub jackknife: bool,
    pub ls: LsConfig,
    pub sigma_mode: SigmaMode,
}

impl ConfiguredEstimator {
    pub fn new(spec: EstimatorSpec) -> Self {
        ConfiguredEstimator { spec, jackknife: false, ls: LsConfig::default(), sigma_mode: SigmaMode::default() }
    }

    pub fn jackknifed(self, on: bool) -> Self {
        ConfiguredEstimator { jackknife: on, ..self }
    }

    pub fn with_ls(self, ls: LsConfig) -> Self {
        ConfiguredEstimator { ls, ..self }
    }
}

impl Estimator for ConfiguredEstimator {
    fn tag(&self) -> EstimatorTag {
        let tag = EstimatorTag::new(self.spec.kind());
        if self.jackknife {
            tag.jackknifed()
        } else {
            tag
        }
    }

    fn estimate(&self, panel: &PanelData) -> Result<EstimateReport> {
        let ws = Workspace::new(panel, self.ls, self.sigma_mode);
        ws.evaluate(&self.spec, self.jackknife, &ws.full())
    }
}

/// Memoizing evaluation context for one panel.
///
/// Factor fits are cached per (rectangle, R), so estimators that need the
/// same fit share it, e.g. GFE reuses the LS fit with `r_initial` factors,
/// and the split-sample proxy blocks coincide with the jackknife half
/// panels. Fits are deterministic, so caching never changes a result.
pub struct Workspace<'a> {
    panel: &'a PanelData,
    ls: LsConfig,
    sigma_mode: SigmaMode,
    subpanels: RefCell<HashMap<Block, Rc<PanelData>>>,
    fits: RefCell<HashMap<(Block, usize), Rc<FactorEstimate>>>,
    reports: RefCell<HashMap<(EstimatorSpec, Block), EstimateReport>>,
}

impl<'a> Workspace<'a> {
    pub fn new(panel: &'a PanelData, ls: LsConfig, sigma_mode: SigmaMode) -> Self {
        Workspace {
            panel,
            ls,
            sigma_mode,
            subpanels: RefCell::default(),
            fits: RefCell::default(),
            reports: RefCell::default(),
        }
    }

    pub fn full(&self) -> Block {
        Block { units: 0..self.panel.n_units(), periods: 0..self.panel.n_periods() }
    }

    pub fn subpanel(&self, b: &Block) -> Result<Rc<PanelData>> {
        if let Some(p) = self.subpanels.borrow().get(b) {
            return Ok(Rc::clone(p));
        }
        let p = Rc::new(self.panel.subpanel(b.units.clone(), b.periods.clone())?);
        self.subpanels.borrow_mut().insert(b.clone(), Rc::clone(&p));
        Ok(p)
    }

    pub fn fit(&self, b: &Block, r: usize) -> Result<Rc<FactorEstimate>> {
        let key = (b.clone(), r);
        if let Some(f) = self.fits.borrow().get(&key) {
            return Ok(Rc::clone(f));
        }
        let sub = self.subpanel(b)?;
        let fit = Rc::new(factor_ls::estimate_ls(&sub, &self.ls.with_r(r))?);
        self.fits.borrow_mut().insert(key, Rc::clone(&fit));
        Ok(fit)
    }

    /// Grouped fixed-effects estimate on rectangle `b`.
    pub fn gfe(&self, cfg: &GfeConfig, b: &Block) -> Result<GroupedFEEstimate> {
        let sub = self.subpanel(b)?;
        cfg.validate(sub.n_units(), sub.n_periods())?;
        let fit = self.fit(b, cfg.r_initial)?;
        grouped_fe::estimate_gfe_from_factors(&sub, &fit, cfg.r_star)
    }

    /// Split-sample estimate on rectangle `b`.
    pub fn gfe_split(&self, cfg: &GfeConfig, b: &Block) -> Result<split_sample::SplitEstimate> {
        let sub = self.subpanel(b)?;
        split_sample::check_split_dims(sub.n_units(), sub.n_periods(), cfg)?;
        let scheme = split_sample::make_blocks(sub.n_units(), sub.n_periods())?;
        let mut proxies = Vec::with_capacity(4);
        for (s, local) in scheme.proxy_blocks.iter().enumerate() {
            let global = Block {
                units: b.units.start + local.units.start..b.units.start + local.units.end,
                periods: b.periods.start + local.periods.start..b.periods.start + local.periods.end,
            };
            let fit = self.fit(&global, cfg.r_initial)?;
            proxies.push(BlockProxies { s_tilde: s, block: local.clone(), fit: (*fit).clone() });
        }
        let proxies: [BlockProxies; 4] = proxies.try_into().expect("four proxy blocks");
        split_sample::estimate_split_from_proxies(&sub, &scheme, &proxies, cfg.r_star)
    }

    /// Un-jackknifed estimate with standard errors, memoized.
    pub fn base(&self, spec: &EstimatorSpec, b: &Block) -> Result<EstimateReport> {
        let key = (*spec, b.clone());
        if let Some(r) = self.reports.borrow().get(&key) {
            return Ok(r.clone());
        }
        let report = self.compute_base(spec, b)?;
        self.reports.borrow_mut().insert(key, report.clone());
        Ok(report)
    }

    fn compute_base(&self, spec: &EstimatorSpec, b: &Block) -> Result<EstimateReport> {
        let sub = self.subpanel(b)?;
        let tag = EstimatorTag::new(spec.kind());
        let (report, se) = match spec {
            EstimatorSpec::Ols | EstimatorSpec::Ls { .. } => {
                let r = match spec {
                    EstimatorSpec::Ls { r } => *r,
                    _ => 0,
                };
                let fit = self.fit(b, r)?;
                let se = inference::hc_se(&fit, &sub);
                let report = EstimateReport::new(tag, fit.beta_hat.clone())
                    .with_meta("R", r as f64)
                    .with_meta("objective", fit.objective)
                    .with_meta("iterations", fit.iterations as f64)
                    .with_meta("converged", f64::from(u8::from(fit.converged)))
                    .with_meta("start", fit.start as f64);
                (report, se)
            }
            EstimatorSpec::Gfe(cfg) => {
                let est = self.gfe(cfg, b)?;
                let se = inference::cluster_se(&est, self.sigma_mode);
                let report = EstimateReport::new(tag, est.beta_hat.clone())
                    .with_meta("G", est.unit_grouping.n_groups() as f64)
                    .with_meta("C", est.time_grouping.n_groups() as f64)
                    .with_meta("R", cfg.r_initial as f64)
                    .with_meta("r_star", cfg.r_star as f64);
                (report, se)
            }
            EstimatorSpec::GfeSplit(cfg) => {
                let est = self.gfe_split(cfg, b)?;
                let se = inference::split_cluster_se(&est, self.sigma_mode);
                let (g, c) = est.effective_group_counts();
                let clusters = est.cluster_ids().iter().copied().max().map_or(0, |m| m + 1);
                let report = EstimateReport::new(tag, est.beta_hat.clone())
                    .with_meta("G", g)
                    .with_meta("C", c)
                    .with_meta("clusters", clusters as f64)
                    .with_meta("R", cfg.r_initial as f64)
                    .with_meta("r_star", cfg.r_star as f64);
                (report, se)
            }
        };
        Ok(attach_se(report, se))
    }

    /// Estimate on `b`, jackknifed over its four half panels if requested.
    pub fn evaluate(&self, spec: &EstimatorSpec, jackknife: bool, b: &Block) -> Result<EstimateReport> {
        if !jackknife {
            return self.base(spec, b);
        }
        let wrap = |half: HalfSample| move |e: PanelError| PanelError::Jackknife { half, source: Box::new(e) };
        let (n, t) = (b.units.len(), b.periods.len());
        if n < 2 || t < 2 {
            return Err(PanelError::domain("jackknife needs N, T ≥ 2"));
        }
        let full = self.base(spec, b).map_err(wrap(HalfSample::Full))?;
        let mut betas = Vec::with_capacity(4);
        for ((units, periods), half) in inference::half_ranges(n, t).into_iter().zip(inference::HALVES) {
            let hb = Block {
                units: b.units.start + units.start..b.units.start + units.end,
                periods: b.periods.start + periods.start..b.periods.start + periods.end,
            };
            betas.push(self.base(spec, &hb).map_err(wrap(half))?.beta_hat);
        }
        Ok(inference::jackknife_report(full, [&betas[0], &betas[1], &betas[2], &betas[3]]))
    }
}

/// Standard errors that are zero or non-finite (exact fits) are dropped and
/// flagged in the metadata rather than failing the estimate.
fn attach_se(report: EstimateReport, se: Result<Vec<f64>>) -> EstimateReport {
    match se {
        Ok(se) => match report.clone().with_se(se) {
            Ok(r) => r,
            Err(_) => report.with_meta("se_unavailable", 1.0),
        },
        Err(_) => report.with_meta("se_unavailable", 1.0),
    }
}
