//! Independent reference computations for the integration suites. Nothing
//! here calls into the estimator internals; each oracle rebuilds its answer
//! from explicit matrices, dense solves or plain loops.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panelfe::split_sample::SplitEstimate;
use panelfe::{Grouping, PanelData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))
}

pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, k: usize) -> PanelData {
    let x = (0..k).map(|_| normal_matrix(rng, n, t)).collect();
    PanelData::new(normal_matrix(rng, n, t), x).unwrap()
}

/// Random grouping of `m` items into at most `max_groups` groups.
pub fn random_grouping(rng: &mut ChaCha8Rng, m: usize, max_groups: usize) -> Grouping {
    let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..max_groups)).collect();
    Grouping::from_labels(&labels).unwrap()
}

/// Least-squares coefficients from a column-pivoted QR. Redundant columns
/// get a zero coefficient, so only identified coefficients are meaningful.
pub fn lstsq(design: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = design.clone().col_piv_qr();
    let (q, r) = (qr.q(), qr.r());
    let lead = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(r.ncols())).take_while(|&i| r[(i, i)].abs() > 1e-10 * lead).count();
    let rhs = q.columns(0, rank).transpose() * y;
    let r11 = r.view((0, 0), (rank, rank)).upper_triangle();
    let head = r11.solve_upper_triangular(&rhs).unwrap();
    let mut coef = DVector::zeros(design.ncols());
    coef.rows_mut(0, rank).copy_from(&head);
    qr.p().inv_permute_rows(&mut coef);
    coef
}

fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Row index of cell `(i, t)` in the stacked design.
fn cell(n: usize, i: usize, t: usize) -> usize {
    i + t * n
}

/// `β̂` from regressing `Y` on the regressors plus every unit×period-group
/// and period×unit-group indicator.
pub fn explicit_dummy_beta(panel: &PanelData, units: &Grouping, periods: &Grouping) -> Vec<f64> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.k());
    let (g, c) = (units.n_groups(), periods.n_groups());
    let cols = k + n * c + t * g;
    let mut d = DMatrix::zeros(n * t, cols);
    for tt in 0..t {
        for i in 0..n {
            let row = cell(n, i, tt);
            for (j, xk) in panel.x().iter().enumerate() {
                d[(row, j)] = xk[(i, tt)];
            }
            d[(row, k + i * c + periods.labels()[tt])] = 1.0;
            d[(row, k + n * c + tt * g + units.labels()[i])] = 1.0;
        }
    }
    let coef = lstsq(&d, &vec_col_major(panel.y()));
    coef.rows(0, k).iter().copied().collect()
}

/// `I − D (D'D)⁻¹ D'` for the indicator matrix of `grouping`.
pub fn annihilator(grouping: &Grouping) -> DMatrix<f64> {
    let m = grouping.len();
    let d = DMatrix::from_fn(m, grouping.n_groups(), |i, j| f64::from(u8::from(grouping.labels()[i] == j)));
    let dtd_inv = (d.transpose() * &d).try_inverse().unwrap();
    DMatrix::identity(m, m) - &d * dtd_inv * d.transpose()
}

pub fn explicit_projection(m: &DMatrix<f64>, units: &Grouping, periods: &Grouping) -> DMatrix<f64> {
    annihilator(units) * m * annihilator(periods)
}

/// `Σ_{cells a,b in the same cluster} x̃_a û_a û_b x̃_b'` by enumerating all
/// pairs of cells.
pub fn brute_cluster_meat(
    x_tilde: &[DMatrix<f64>],
    resid: &DMatrix<f64>,
    cluster_of: impl Fn(usize, usize) -> usize,
) -> DMatrix<f64> {
    let (n, t) = resid.shape();
    let k = x_tilde.len();
    let mut s = DMatrix::zeros(k, k);
    for t1 in 0..t {
        for i1 in 0..n {
            for t2 in 0..t {
                for i2 in 0..n {
                    if cluster_of(i1, t1) != cluster_of(i2, t2) {
                        continue;
                    }
                    let w = resid[(i1, t1)] * resid[(i2, t2)];
                    for a in 0..k {
                        for b in 0..k {
                            s[(a, b)] += x_tilde[a][(i1, t1)] * w * x_tilde[b][(i2, t2)];
                        }
                    }
                }
            }
        }
    }
    s
}

/// `Σ_{j>r} σ_j²` from a full SVD.
pub fn svd_tail(m: &DMatrix<f64>, r: usize) -> f64 {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter().skip(r).map(|s| s * s).sum()
}

/// Pooled OLS from normal equations assembled by loops and solved by LU.
pub fn normal_equations(y: &DMatrix<f64>, x: &[DMatrix<f64>]) -> Vec<f64> {
    let k = x.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for idx in 0..y.len() {
        for p in 0..k {
            b[p] += x[p].as_slice()[idx] * y.as_slice()[idx];
            for q in 0..k {
                a[(p, q)] += x[p].as_slice()[idx] * x[q].as_slice()[idx];
            }
        }
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

/// Minimizer of `β ↦ tail_R(Y − βX)` over `center ± 2` on a `1e-4` grid
/// (single regressor).
pub fn grid_minimizer(panel: &PanelData, r: usize, center: f64) -> f64 {
    let x = &panel.x()[0];
    let mut best = (f64::INFINITY, center);
    for step in -20_000..=20_000 {
        let b = center + step as f64 * 1e-4;
        let obj = svd_tail(&(panel.y() - x * b), r);
        if obj < best.0 {
            best = (obj, b);
        }
    }
    best.1
}

/// Split-sample `β̂` as one regression of `Y` on the regressors and, for each
/// estimation block, that block's unit×period-group and period×unit-group
/// indicators (zero outside the block).
pub fn split_dummy_beta(panel: &PanelData, est: &SplitEstimate) -> Vec<f64> {
    let coef = lstsq(&split_dummy_design(panel, est), &vec_col_major(panel.y()));
    coef.rows(0, panel.k()).iter().copied().collect()
}

/// Stacked design behind [`split_dummy_beta`], regressors first.
pub fn split_dummy_design(panel: &PanelData, est: &SplitEstimate) -> DMatrix<f64> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.k());
    let scheme = &est.scheme;
    let mut offsets = Vec::with_capacity(4);
    let mut cols = k;
    for (s, b) in scheme.estimation_blocks.iter().enumerate() {
        offsets.push(cols);
        let g = est.groupings.units[s].n_groups();
        let c = est.groupings.periods[s].n_groups();
        cols += b.units.len() * c + b.periods.len() * g;
    }
    let mut d = DMatrix::zeros(n * t, cols);
    for tt in 0..t {
        for i in 0..n {
            let row = cell(n, i, tt);
            for (j, xk) in panel.x().iter().enumerate() {
                d[(row, j)] = xk[(i, tt)];
            }
            let s = scheme.estimation_blocks.iter().position(|b| b.contains(i, tt)).unwrap();
            let b = &scheme.estimation_blocks[s];
            let (li, lt) = (i - b.units.start, tt - b.periods.start);
            let (ug, pg) = (&est.groupings.units[s], &est.groupings.periods[s]);
            let c = pg.n_groups();
            d[(row, offsets[s] + li * c + pg.labels()[lt])] = 1.0;
            d[(row, offsets[s] + b.units.len() * c + lt * ug.n_groups() + ug.labels()[li])] = 1.0;
        }
    }
    d
}

/// Canonical form of a partition for comparison: sorted member lists.
pub fn partition_of(g: &Grouping) -> Vec<Vec<usize>> {
    let mut groups = g.groups();
    for grp in &mut groups {
        grp.sort_unstable();
    }
    groups.sort();
    groups
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
