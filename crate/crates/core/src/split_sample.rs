//! Split-sample grouped fixed effects.
//!
//! The N×T grid is cut into four estimation blocks at `⌊N/2⌋` and `⌊T/2⌋`.
//! Group memberships inside a block are formed from factor estimates fitted
//! on a proxy block that does not overlap it, so the grouping of a block
//! never depends on that block's own observations. Each block is then
//! demeaned with its own groups and the blocks are pooled into one OLS.
//!
//! Block numbering (0-based), with `h = ⌊N/2⌋`, `k = ⌊T/2⌋`:
//!
//! | block | estimation rectangle | proxy rectangle |
//! |-------|----------------------|-----------------|
//! | 0     | `0..h × 0..k`        | `0..N × 0..k`   |
//! | 1     | `0..h × k..T`        | `0..N × k..T`   |
//! | 2     | `h..N × 0..k`        | `0..h × 0..T`   |
//! | 3     | `h..N × k..T`        | `h..N × 0..T`   |

use std::ops::Range;

use nalgebra::DMatrix;

use crate::clustering::{self, Grouping};
use crate::error::{PanelError, Result};
use crate::factor_ls::{self, FactorEstimate, LsConfig};
use crate::grouped_fe::{project_within, GfeConfig};
use crate::linalg;
use crate::panel::PanelData;

/// Proxy block whose loadings group the units of each estimation block.
pub const UNIT_PROXY_MAP: [usize; 4] = [1, 0, 1, 0];
/// Proxy block whose factors group the periods of each estimation block.
pub const TIME_PROXY_MAP: [usize; 4] = [3, 3, 2, 2];

/// An index rectangle `units × periods`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub units: Range<usize>,
    pub periods: Range<usize>,
}

impl Block {
    pub fn contains(&self, i: usize, t: usize) -> bool {
        self.units.contains(&i) && self.periods.contains(&t)
    }

    pub fn overlaps(&self, other: &Block) -> bool {
        self.units.start < other.units.end
            && other.units.start < self.units.end
            && self.periods.start < other.periods.end
            && other.periods.start < self.periods.end
    }

    pub fn n_cells(&self) -> usize {
        self.units.len() * self.periods.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockScheme {
    pub n: usize,
    pub t: usize,
    pub estimation_blocks: [Block; 4],
    pub proxy_blocks: [Block; 4],
}

impl BlockScheme {
    pub fn unit_proxy(&self, s: usize) -> usize {
        UNIT_PROXY_MAP[s]
    }

    pub fn time_proxy(&self, s: usize) -> usize {
        TIME_PROXY_MAP[s]
    }

    /// Estimation block containing cell `(i, t)`.
    pub fn block_of(&self, i: usize, t: usize) -> usize {
        let upper = i >= self.n / 2;
        let later = t >= self.t / 2;
        2 * usize::from(upper) + usize::from(later)
    }
}

pub fn make_blocks(n: usize, t: usize) -> Result<BlockScheme> {
    if n < 4 || t < 4 {
        return Err(PanelError::domain(format!("split-sample blocks need N, T ≥ 4, got {n}×{t}")));
    }
    let (h, k) = (n / 2, t / 2);
    let b = |units: Range<usize>, periods: Range<usize>| Block { units, periods };
    Ok(BlockScheme {
        n,
        t,
        estimation_blocks: [b(0..h, 0..k), b(0..h, k..t), b(h..n, 0..k), b(h..n, k..t)],
        proxy_blocks: [b(0..n, 0..k), b(0..n, k..t), b(0..h, 0..t), b(h..n, 0..t)],
    })
}

/// Factor fit on one proxy block. Rows of `fit.lambda_hat` / `fit.f_hat`
/// correspond to `block.units` / `block.periods`; estimates from different
/// proxy blocks are not comparable (rotation differs).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProxies {
    pub s_tilde: usize,
    pub block: Block,
    pub fit: FactorEstimate,
}

impl BlockProxies {
    /// Leading `r_star` loadings for `units` (a subrange of the proxy block).
    pub fn loadings_for(&self, units: &Range<usize>, r_star: usize) -> DMatrix<f64> {
        let off = units.start - self.block.units.start;
        self.fit.lambda_hat.view((off, 0), (units.len(), r_star)).into_owned()
    }

    /// Leading `r_star` factors for `periods` (a subrange of the proxy block).
    pub fn factors_for(&self, periods: &Range<usize>, r_star: usize) -> DMatrix<f64> {
        let off = periods.start - self.block.periods.start;
        self.fit.f_hat.view((off, 0), (periods.len(), r_star)).into_owned()
    }
}

/// Run the factor estimator on proxy block `s_tilde`.
pub fn proxy_factors_for_block(
    panel: &PanelData,
    scheme: &BlockScheme,
    s_tilde: usize,
    ls_cfg: &LsConfig,
) -> Result<BlockProxies> {
    let block = scheme
        .proxy_blocks
        .get(s_tilde)
        .ok_or_else(|| PanelError::domain(format!("proxy block {s_tilde} out of range 0..4")))?
        .clone();
    let sub = panel.subpanel(block.units.clone(), block.periods.clone())?;
    let fit = factor_ls::estimate_ls(&sub, ls_cfg)?;
    Ok(BlockProxies { s_tilde, block, fit })
}

/// Per-block unit and period groupings over block-local indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGroupings {
    pub units: [Grouping; 4],
    pub periods: [Grouping; 4],
}

pub fn split_groupings(scheme: &BlockScheme, proxies: &[BlockProxies; 4], r_star: usize) -> Result<SplitGroupings> {
    let mut units = Vec::with_capacity(4);
    let mut periods = Vec::with_capacity(4);
    for (s, block) in scheme.estimation_blocks.iter().enumerate() {
        let up = &proxies[UNIT_PROXY_MAP[s]];
        let tp = &proxies[TIME_PROXY_MAP[s]];
        for p in [up, tp] {
            if r_star == 0 || r_star > p.fit.r {
                return Err(PanelError::domain(format!("r_star = {r_star} must lie in 1..={}", p.fit.r)));
            }
        }
        units.push(clustering::cluster_rows(&up.loadings_for(&block.units, r_star))?);
        periods.push(clustering::cluster_rows(&tp.factors_for(&block.periods, r_star))?);
    }
    Ok(SplitGroupings {
        units: units.try_into().expect("four blocks"),
        periods: periods.try_into().expect("four blocks"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEstimate {
    pub beta_hat: Vec<f64>,
    pub scheme: BlockScheme,
    pub groupings: SplitGroupings,
    /// Block-wise projected regressors assembled into N×T matrices.
    pub x_tilde: Vec<DMatrix<f64>>,
    pub y_tilde: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
}

impl SplitEstimate {
    /// Combination-cluster id per cell: (block, unit group, period group).
    pub fn cluster_ids(&self) -> DMatrix<usize> {
        let mut offsets = [0usize; 4];
        let mut next = 0;
        for s in 0..4 {
            offsets[s] = next;
            next += self.groupings.units[s].n_groups() * self.groupings.periods[s].n_groups();
        }
        DMatrix::from_fn(self.scheme.n, self.scheme.t, |i, t| {
            let s = self.scheme.block_of(i, t);
            let b = &self.scheme.estimation_blocks[s];
            let g = self.groupings.units[s].labels()[i - b.units.start];
            let c = self.groupings.periods[s].labels()[t - b.periods.start];
            offsets[s] + g * self.groupings.periods[s].n_groups() + c
        })
    }

    /// Unit and period group counts scaled to full-panel equivalents:
    /// `Σ_s T_s·G_s / T` and `Σ_s N_s·C_s / N`.
    pub fn effective_group_counts(&self) -> (f64, f64) {
        let (n, t) = (self.scheme.n as f64, self.scheme.t as f64);
        let mut g = 0.0;
        let mut c = 0.0;
        for (s, b) in self.scheme.estimation_blocks.iter().enumerate() {
            g += b.periods.len() as f64 * self.groupings.units[s].n_groups() as f64;
            c += b.units.len() as f64 * self.groupings.periods[s].n_groups() as f64;
        }
        (g / t, c / n)
    }
}

/// Pooled OLS with per-block within projections under fixed groupings.
pub fn estimate_split_given_groups(panel: &PanelData, scheme: &BlockScheme, groupings: SplitGroupings) -> Result<SplitEstimate> {
    if scheme.n != panel.n_units() || scheme.t != panel.n_periods() {
        return Err(PanelError::domain("block scheme does not match panel dimensions"));
    }
    let (n, t) = (panel.n_units(), panel.n_periods());
    let mut x_tilde = vec![DMatrix::zeros(n, t); panel.k()];
    let mut y_tilde = DMatrix::zeros(n, t);
    for (s, b) in scheme.estimation_blocks.iter().enumerate() {
        let (g, c) = (&groupings.units[s], &groupings.periods[s]);
        if g.len() != b.units.len() || c.len() != b.periods.len() {
            return Err(PanelError::domain(format!("grouping for block {s} does not match its size")));
        }
        let shape = (b.units.len(), b.periods.len());
        let origin = (b.units.start, b.periods.start);
        let py = project_within(&panel.y().view(origin, shape).into_owned(), g, c);
        y_tilde.view_mut(origin, shape).copy_from(&py);
        for (xt, xk) in x_tilde.iter_mut().zip(panel.x()) {
            let px = project_within(&xk.view(origin, shape).into_owned(), g, c);
            xt.view_mut(origin, shape).copy_from(&px);
        }
    }
    linalg::check_projection_loss(panel.x(), &x_tilde, "split-sample grouped fixed effects")?;
    let omega_inv = linalg::spd_inverse(&linalg::gram(&x_tilde), "split-sample grouped fixed effects")?;
    let beta: Vec<f64> = (omega_inv * linalg::cross(&x_tilde, &y_tilde)).iter().copied().collect();
    let mut residuals = y_tilde.clone();
    for (xk, b) in x_tilde.iter().zip(&beta) {
        residuals -= xk * *b;
    }
    Ok(SplitEstimate { beta_hat: beta, scheme: scheme.clone(), groupings, x_tilde, y_tilde, residuals })
}

/// Split-sample estimator from already fitted proxy blocks.
pub fn estimate_split_from_proxies(
    panel: &PanelData,
    scheme: &BlockScheme,
    proxies: &[BlockProxies; 4],
    r_star: usize,
) -> Result<SplitEstimate> {
    let groupings = split_groupings(scheme, proxies, r_star)?;
    estimate_split_given_groups(panel, scheme, groupings)
}

pub fn check_split_dims(n: usize, t: usize, cfg: &GfeConfig) -> Result<()> {
    if n < 8 || t < 8 {
        return Err(PanelError::domain(format!("split-sample estimator needs N, T ≥ 8, got {n}×{t}")));
    }
    if cfg.r_star == 0 || cfg.r_star > cfg.r_initial {
        return Err(PanelError::domain("need 1 ≤ r_star ≤ r_initial"));
    }
    let smallest = (n / 2).min(t / 2);
    if cfg.r_initial + 1 > smallest {
        return Err(PanelError::domain(format!(
            "r_initial = {} too large for proxy blocks; at most {}",
            cfg.r_initial,
            smallest - 1
        )));
    }
    Ok(())
}

/// Split-sample grouped fixed effects.
pub fn estimate_gfe_split(panel: &PanelData, cfg: &GfeConfig, ls_cfg: &LsConfig) -> Result<SplitEstimate> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    check_split_dims(n, t, cfg)?;
    let scheme = make_blocks(n, t)?;
    let ls_cfg = ls_cfg.with_r(cfg.r_initial);
    let proxies: Vec<BlockProxies> =
        (0..4).map(|s| proxy_factors_for_block(panel, &scheme, s, &ls_cfg)).collect::<Result<_>>()?;
    let proxies: [BlockProxies; 4] = proxies.try_into().expect("four proxy blocks");
    estimate_split_from_proxies(panel, &scheme, &proxies, cfg.r_star)
}
