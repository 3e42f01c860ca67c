//! Standard errors and half-panel jackknife bias correction.
//!
//! All standard errors share the sandwich form
//! `dfc · sqrt(diag(Ω⁻¹ Σ̂ Ω⁻¹))` with `Ω = Σ X̃'X̃` over the projected
//! regressors. They differ in the projection behind `X̃`, the meat `Σ̂` and
//! the degrees-of-freedom correction `dfc`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::Grouping;
use crate::error::{HalfSample, PanelError, Result};
use crate::estimator::Estimator;
use crate::factor_ls::FactorEstimate;
use crate::grouped_fe::GroupedFEEstimate;
use crate::linalg;
use crate::panel::{EstimateReport, PanelData};
use crate::split_sample::SplitEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    pub omega: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub dfc: f64,
}

impl SandwichParts {
    /// `Ω⁻¹ Σ̂ Ω⁻¹`, symmetrized.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let inv = linalg::spd_inverse(&self.omega, "sandwich bread")?;
        let v = &inv * &self.sigma_hat * &inv;
        Ok((&v + v.transpose()) * 0.5)
    }

    pub fn se(&self) -> Result<Vec<f64>> {
        let v = self.covariance()?;
        Ok(v.diagonal().iter().map(|d| self.dfc * d.max(0.0).sqrt()).collect())
    }
}

/// How the clustered meat matrix is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum SigmaMode {
    /// `Σ_m s_m s_m'` with `s_m = Σ_{(i,t)∈m} X̃_it û_it`.
    #[default]
    Cluster,
    /// `Σ_it û_it² X̃_it X̃_it'`, ignoring within-cluster cross products.
    Diagonal,
}

/// Combination-cluster assignment over the flattened index
/// `n(i,t) = i + t·N` (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterIndex {
    pub assignment: Vec<usize>,
    pub m_total: usize,
}

impl ClusterIndex {
    /// Cross of unit groups and period groups: cluster `g_i·C + c_t`.
    pub fn combination(units: &Grouping, periods: &Grouping) -> Self {
        let (n, t) = (units.len(), periods.len());
        let c = periods.n_groups();
        let mut assignment = vec![0; n * t];
        for tt in 0..t {
            for i in 0..n {
                assignment[i + tt * n] = units.labels()[i] * c + periods.labels()[tt];
            }
        }
        ClusterIndex { assignment, m_total: units.n_groups() * c }
    }

    /// From an N×T matrix of cluster ids.
    pub fn from_matrix(ids: &DMatrix<usize>) -> Self {
        let m_total = ids.iter().copied().max().map_or(0, |m| m + 1);
        // DMatrix storage is column-major, i.e. already i + t·N
        ClusterIndex { assignment: ids.as_slice().to_vec(), m_total }
    }

    pub fn index(n: usize, i: usize, t: usize) -> usize {
        i + t * n
    }
}

/// HC meat `Σ û² X̃X̃'`.
pub fn hc_sandwich(x_tilde: &[DMatrix<f64>], resid: &DMatrix<f64>, dfc: f64) -> SandwichParts {
    let k = x_tilde.len();
    let mut sigma = DMatrix::zeros(k, k);
    let mut row = DVector::zeros(k);
    for (idx, u) in resid.iter().enumerate() {
        for (a, xa) in x_tilde.iter().enumerate() {
            row[a] = xa.as_slice()[idx];
        }
        sigma.ger(u * u, &row, &row, 1.0);
    }
    SandwichParts { omega: linalg::gram(x_tilde), sigma_hat: sigma, dfc }
}

/// Clustered meat under `mode`.
pub fn cluster_sandwich(
    x_tilde: &[DMatrix<f64>],
    resid: &DMatrix<f64>,
    clusters: &ClusterIndex,
    mode: SigmaMode,
    dfc: f64,
) -> Result<SandwichParts> {
    if clusters.assignment.len() != resid.len() {
        return Err(PanelError::domain("cluster assignment does not cover every cell"));
    }
    if mode == SigmaMode::Diagonal {
        return Ok(hc_sandwich(x_tilde, resid, dfc));
    }
    let k = x_tilde.len();
    let mut scores = DMatrix::<f64>::zeros(k, clusters.m_total);
    for (idx, (&m, u)) in clusters.assignment.iter().zip(resid.iter()).enumerate() {
        for (a, xa) in x_tilde.iter().enumerate() {
            scores[(a, m)] += xa.as_slice()[idx] * u;
        }
    }
    Ok(SandwichParts { omega: linalg::gram(x_tilde), sigma_hat: &scores * scores.transpose(), dfc })
}

/// `M_λ · m · M_f` for a factor fit (annihilates both estimated spans).
pub fn factor_project(m: &DMatrix<f64>, fit: &FactorEstimate) -> DMatrix<f64> {
    if fit.r == 0 {
        return m.clone();
    }
    let t = fit.f_hat.nrows() as f64;
    let f = &fit.f_hat;
    // right side: m (I − f f'/T)
    let mut out = m - (m * f) * f.transpose() / t;
    let lam = &fit.lambda_hat;
    let d = (lam.transpose() * lam).diagonal();
    let top = d.iter().fold(0.0f64, |a, b| a.max(*b));
    let keep: Vec<usize> = (0..d.len()).filter(|&j| d[j] > 1e-14 * top && d[j] > 0.0).collect();
    if !keep.is_empty() {
        let lk = lam.select_columns(keep.iter());
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(keep.len(), keep.iter().map(|&j| 1.0 / d[j])));
        let coef = dinv * lk.transpose() * &out;
        out -= lk * coef;
    }
    out
}

/// Sandwich parts of the heteroskedasticity-consistent LS standard error.
pub fn hc_parts(fit: &FactorEstimate, panel: &PanelData) -> Result<SandwichParts> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if n <= fit.r || t <= fit.r {
        return Err(PanelError::domain(format!("HC standard errors need N, T > R = {}", fit.r)));
    }
    let x_tilde: Vec<DMatrix<f64>> = panel.x().iter().map(|xk| factor_project(xk, fit)).collect();
    let mut resid = factor_project(panel.y(), fit);
    for (xk, b) in x_tilde.iter().zip(&fit.beta_hat) {
        resid -= xk * *b;
    }
    let dfc = ((n * t) as f64 / ((n - fit.r) * (t - fit.r)) as f64).sqrt();
    Ok(hc_sandwich(&x_tilde, &resid, dfc))
}

/// Heteroskedasticity-consistent standard errors for the factor estimator,
/// `dfc = sqrt(NT / ((N−R)(T−R)))`.
pub fn hc_se(fit: &FactorEstimate, panel: &PanelData) -> Result<Vec<f64>> {
    hc_parts(fit, panel)?.se()
}

fn grouped_dfc(n: usize, t: usize, g: f64, c: f64) -> Result<f64> {
    if (n as f64) <= g || (t as f64) <= c {
        return Err(PanelError::domain(format!("clustered standard errors need N > G and T > C (G = {g}, C = {c})")));
    }
    Ok(((n * t) as f64 / ((n as f64 - g) * (t as f64 - c))).sqrt())
}

pub fn cluster_parts(est: &GroupedFEEstimate, mode: SigmaMode) -> Result<SandwichParts> {
    let (n, t) = est.y_tilde.shape();
    let (g, c) = (est.unit_grouping.n_groups(), est.time_grouping.n_groups());
    let dfc = grouped_dfc(n, t, g as f64, c as f64)?;
    let clusters = ClusterIndex::combination(&est.unit_grouping, &est.time_grouping);
    cluster_sandwich(&est.x_tilde, &est.residuals, &clusters, mode, dfc)
}

/// Combination-cluster standard errors for grouped fixed effects,
/// `dfc = sqrt(NT / ((N−G)(T−C)))`.
pub fn cluster_se(est: &GroupedFEEstimate, mode: SigmaMode) -> Result<Vec<f64>> {
    cluster_parts(est, mode)?.se()
}

/// Clustered standard errors for the split-sample estimator; clusters are
/// (block, unit group, period group) and `G`, `C` are the full-panel
/// equivalents from [`SplitEstimate::effective_group_counts`].
pub fn split_cluster_se(est: &SplitEstimate, mode: SigmaMode) -> Result<Vec<f64>> {
    let (n, t) = est.y_tilde.shape();
    let (g, c) = est.effective_group_counts();
    let dfc = grouped_dfc(n, t, g, c)?;
    let clusters = ClusterIndex::from_matrix(&est.cluster_ids());
    cluster_sandwich(&est.x_tilde, &est.residuals, &clusters, mode, dfc)?.se()
}

/// Unit rows of bootstrap resample `b`: `G` clusters drawn with replacement
/// from the stream `(seed, b)`, members concatenated in draw order.
pub fn bootstrap_rows(cluster_on: &Grouping, seed: u64, b: usize) -> Vec<usize> {
    let groups = cluster_on.groups();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let mut rows = Vec::with_capacity(cluster_on.len());
    for _ in 0..groups.len() {
        let pick = rng.gen_range(0..groups.len());
        rows.extend_from_slice(&groups[pick]);
    }
    rows
}

/// Cluster bootstrap: standard deviation of `β̂` across `n_boot` resamples
/// of unit clusters. Failed resamples are skipped; more than 10% failures is
/// an error.
pub fn bootstrap_cluster_se(
    estimator: &dyn Estimator,
    panel: &PanelData,
    cluster_on: &Grouping,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_boot < 2 {
        return Err(PanelError::domain("n_boot must be at least 2"));
    }
    if cluster_on.len() != panel.n_units() {
        return Err(PanelError::domain("bootstrap clusters must partition the units"));
    }
    let draws: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let rows = bootstrap_rows(cluster_on, seed, b);
            panel.select_units(&rows).and_then(|p| estimator.estimate(&p)).ok().map(|r| r.beta_hat)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let failed = n_boot - ok.len();
    if failed * 10 > n_boot || ok.len() < 2 {
        return Err(PanelError::Bootstrap { failed, total: n_boot });
    }
    let k = ok[0].len();
    let m = ok.len() as f64;
    Ok((0..k)
        .map(|j| {
            // shifted by the first draw so identical draws give exactly zero
            let shift = ok[0][j];
            let mean = ok.iter().map(|b| b[j] - shift).sum::<f64>() / m;
            let ss = ok.iter().map(|b| (b[j] - shift - mean).powi(2)).sum::<f64>();
            (ss / (m - 1.0)).sqrt()
        })
        .collect())
}

/// Row/column ranges of the four half panels, in the order first unit
/// half, second unit half, first period half, second period half.
pub fn half_ranges(n: usize, t: usize) -> [(std::ops::Range<usize>, std::ops::Range<usize>); 4] {
    let (h, k) = (n / 2, t / 2);
    [(0..h, 0..t), (h..n, 0..t), (0..n, 0..k), (0..n, k..t)]
}

pub const HALVES: [HalfSample; 4] =
    [HalfSample::UnitsFirst, HalfSample::UnitsSecond, HalfSample::PeriodsFirst, HalfSample::PeriodsSecond];

/// `3β̂ − ½(β̂¹¹ + β̂¹²) − ½(β̂²¹ + β̂²²)`.
pub fn jackknife_combine(full: &[f64], halves: [&[f64]; 4]) -> Vec<f64> {
    let [u1, u2, p1, p2] = halves;
    (0..full.len()).map(|j| 3.0 * full[j] - 0.5 * (u1[j] + u2[j]) - 0.5 * (p1[j] + p2[j])).collect()
}

/// Half-panel jackknife around `estimator`; standard errors are those of the
/// full-sample estimate.
pub fn jackknife_correct(estimator: &dyn Estimator, panel: &PanelData) -> Result<EstimateReport> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if n < 2 || t < 2 {
        return Err(PanelError::domain("jackknife needs N, T ≥ 2"));
    }
    let wrap = |half: HalfSample| move |e: PanelError| PanelError::Jackknife { half, source: Box::new(e) };
    let full = estimator.estimate(panel).map_err(wrap(HalfSample::Full))?;
    let mut betas = Vec::with_capacity(4);
    for ((units, periods), half) in half_ranges(n, t).into_iter().zip(HALVES) {
        let sub = panel.subpanel(units, periods).map_err(wrap(half))?;
        betas.push(estimator.estimate(&sub).map_err(wrap(half))?.beta_hat);
    }
    Ok(jackknife_report(full, [&betas[0], &betas[1], &betas[2], &betas[3]]))
}

pub(crate) fn jackknife_report(full: EstimateReport, halves: [&[f64]; 4]) -> EstimateReport {
    let beta = jackknife_combine(&full.beta_hat, halves);
    let mut report = full;
    report.beta_hat = beta;
    report.estimator_tag = report.estimator_tag.jackknifed();
    report
}
