mod common;

use common::*;
use nalgebra::DMatrix;
use panelfe::clustering::{self, Grouping};
use panelfe::error::HalfSample;
use panelfe::estimator::{ConfiguredEstimator, Estimator, EstimatorSpec};
use panelfe::factor_ls::{self, LsConfig};
use panelfe::grouped_fe::{self, GfeConfig};
use panelfe::inference::{self, ClusterIndex, SigmaMode};
use panelfe::panel::{singular_tail_share, EstimateReport, EstimatorKind, EstimatorTag};
use panelfe::simulation::{self, decompose_error, EstimatorChoice, NoiseSwitches, SimConfig};
use panelfe::split_sample;
use panelfe::{PanelData, PanelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pca_residual_is_svd_tail() {
    let mut r = rng(11);
    for _ in 0..20 {
        let m = normal_matrix(&mut r, 5, 4);
        let (lambda, f) = factor_ls::pca_step(&m, 2).unwrap();
        let got = (&m - lambda * f.transpose()).norm_squared();
        assert!((got - svd_tail(&m, 2)).abs() < 1e-10, "{got} vs {}", svd_tail(&m, 2));
        let share = singular_tail_share(&m, 2).unwrap();
        assert!((share - svd_tail(&m, 2) / 20.0).abs() < 1e-12);
    }
}

#[test]
fn distances_match_double_loop() {
    let mut r = rng(12);
    let pts: Vec<Vec<f64>> = (0..4).map(|_| vec![r.gen::<f64>(), r.gen::<f64>()]).collect();
    let d = clustering::pairwise_distances_of(&pts).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                assert_eq!(d[(i, j)], f64::INFINITY);
            } else {
                let e = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                assert!((d[(i, j)] - e).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn ols_step_matches_normal_equations() {
    let mut r = rng(13);
    for k in 1..=2 {
        let p = random_panel(&mut r, 3, 3, k);
        let beta = factor_ls::ols_step(&p, &DMatrix::zeros(3, 0), &DMatrix::zeros(3, 0)).unwrap();
        assert!(max_abs_diff(&beta, &normal_equations(p.y(), p.x())) < 1e-10);
    }
}

#[test]
fn ls_matches_profiled_grid() {
    let mut r = rng(14);
    for _ in 0..5 {
        let p = random_panel(&mut r, 4, 4, 1);
        let est = factor_ls::estimate_ls(&p, &LsConfig::default().with_r(1)).unwrap();
        let ols = normal_equations(p.y(), p.x())[0];
        let grid = grid_minimizer(&p, 1, ols);
        // ALS optimum and grid optimum agree up to the grid resolution
        let obj_est = factor_ls::profiled_objective(&p, &est.beta_hat, 1).unwrap();
        let obj_grid = svd_tail(&(p.y() - &p.x()[0] * grid), 1);
        assert!((est.beta_hat[0] - grid).abs() < 2e-4 || obj_est <= obj_grid, "ALS {} grid {grid}", est.beta_hat[0]);
    }
}

#[test]
fn within_projection_matches_annihilators() {
    let mut r = rng(15);
    let m = normal_matrix(&mut r, 6, 6);
    let g = Grouping::from_labels(&[0, 1, 2, 0, 1, 2]).unwrap();
    let c = Grouping::from_labels(&[2, 2, 0, 1, 0, 1]).unwrap();
    let got = grouped_fe::project_within(&m, &g, &c);
    assert!((got - explicit_projection(&m, &g, &c)).amax() < 1e-12);
}

#[test]
fn gfe_matches_dummy_regression() {
    let mut r = rng(16);
    let p = random_panel(&mut r, 6, 6, 1);
    let g = Grouping::from_labels(&[0, 0, 1, 1, 2, 2]).unwrap();
    let c = Grouping::from_labels(&[0, 1, 2, 0, 1, 2]).unwrap();
    let est = grouped_fe::estimate_gfe_given_groups(&p, &g, &c).unwrap();
    assert!(max_abs_diff(&est.beta_hat, &explicit_dummy_beta(&p, &g, &c)) < 1e-8);
}

#[test]
fn cluster_meat_matches_pair_sum() {
    let mut r = rng(17);
    let p = random_panel(&mut r, 6, 6, 2);
    let g = Grouping::from_labels(&[0, 1, 0, 1, 1, 0]).unwrap();
    let c = Grouping::from_labels(&[0, 0, 0, 1, 1, 1]).unwrap();
    let est = grouped_fe::estimate_gfe_given_groups(&p, &g, &c).unwrap();
    let parts = inference::cluster_parts(&est, SigmaMode::Cluster).unwrap();
    let brute = brute_cluster_meat(&est.x_tilde, &est.residuals, |i, t| 2 * g.labels()[i] + c.labels()[t]);
    assert!((parts.sigma_hat - &brute).amax() < 1e-12 * brute.amax().max(1.0));
    assert!((parts.dfc - (36.0f64 / 16.0).sqrt()).abs() < 1e-15);
}

#[test]
fn hc_matches_loop_sandwich() {
    let mut r = rng(18);
    let p = random_panel(&mut r, 3, 3, 1);
    let fit = factor_ls::estimate_ls(&p, &LsConfig::default().with_r(0)).unwrap();
    let se = inference::hc_se(&fit, &p).unwrap();
    let b = normal_equations(p.y(), p.x())[0];
    let (mut sxx, mut meat) = (0.0, 0.0);
    for i in 0..3 {
        for t in 0..3 {
            let x = p.x()[0][(i, t)];
            let u = p.y()[(i, t)] - b * x;
            sxx += x * x;
            meat += u * u * x * x;
        }
    }
    assert!((se[0] - meat.sqrt() / sxx).abs() < 1e-12);
}

#[test]
fn singleton_clusters_reduce_to_hc() {
    let mut r = rng(19);
    let p = random_panel(&mut r, 6, 6, 1);
    let g = Grouping::from_labels(&[0, 0, 1, 1, 2, 2]).unwrap();
    let c = Grouping::from_labels(&[0, 0, 1, 1, 2, 2]).unwrap();
    let est = grouped_fe::estimate_gfe_given_groups(&p, &g, &c).unwrap();
    let dfc = (36.0f64 / 9.0).sqrt();
    let singletons = ClusterIndex { assignment: (0..36).collect(), m_total: 36 };
    let clustered = inference::cluster_sandwich(&est.x_tilde, &est.residuals, &singletons, SigmaMode::Cluster, dfc).unwrap();
    let hc = inference::hc_sandwich(&est.x_tilde, &est.residuals, dfc);
    assert!((clustered.sigma_hat - hc.sigma_hat).amax() < 1e-12);
    assert!((inference::cluster_parts(&est, SigmaMode::Diagonal).unwrap().dfc - dfc).abs() < 1e-15);
}

struct Constant;

impl Estimator for Constant {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::new(EstimatorKind::Ols)
    }

    fn estimate(&self, _: &PanelData) -> panelfe::Result<EstimateReport> {
        Ok(EstimateReport::new(self.tag(), vec![0.25]))
    }
}

#[test]
fn bootstrap_degenerate_cases() {
    let mut r = rng(20);
    let p = random_panel(&mut r, 6, 5, 1);
    let units = Grouping::from_labels(&[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(inference::bootstrap_cluster_se(&Constant, &p, &units, 10, 1).unwrap(), vec![0.0]);
    let ols = ConfiguredEstimator::new(EstimatorSpec::Ols);
    let one = Grouping::single(6).unwrap();
    assert_eq!(inference::bootstrap_cluster_se(&ols, &p, &one, 10, 1).unwrap(), vec![0.0]);
}

#[test]
fn bootstrap_replays_manually() {
    let mut r = rng(21);
    let p = random_panel(&mut r, 8, 5, 1);
    let clusters = Grouping::from_labels(&[0, 0, 1, 1, 2, 2, 3, 3]).unwrap();
    let ols = ConfiguredEstimator::new(EstimatorSpec::Ols);
    let se = inference::bootstrap_cluster_se(&ols, &p, &clusters, 2, 99).unwrap();
    let members = [[0, 1], [2, 3], [4, 5], [6, 7]];
    let mut betas = Vec::new();
    for b in 0..2u64 {
        let mut draw = ChaCha8Rng::seed_from_u64(99);
        draw.set_stream(b);
        let rows: Vec<usize> = (0..4).flat_map(|_| members[draw.gen_range(0..4)]).collect();
        let y = DMatrix::from_fn(8, 5, |i, t| p.y()[(rows[i], t)]);
        let x = DMatrix::from_fn(8, 5, |i, t| p.x()[0][(rows[i], t)]);
        betas.push(normal_equations(&y, &[x])[0]);
    }
    let expected = (betas[0] - betas[1]).abs() / 2f64.sqrt();
    assert!((se[0] - expected).abs() < 1e-12, "{} vs {expected}", se[0]);
}

#[test]
fn bootstrap_failure_threshold() {
    let p = PanelData::new(DMatrix::from_element(4, 4, 1.0), vec![DMatrix::zeros(4, 4)]).unwrap();
    let units = Grouping::from_labels(&[0, 1, 2, 3]).unwrap();
    let err = inference::bootstrap_cluster_se(&ConfiguredEstimator::new(EstimatorSpec::Ols), &p, &units, 5, 0).unwrap_err();
    assert!(matches!(err, PanelError::Bootstrap { failed: 5, total: 5 }));
}

#[test]
fn jackknife_names_failing_half() {
    // the regressor vanishes on the second unit half only
    let x = DMatrix::from_fn(6, 6, |i, t| if i < 3 { (i + 2 * t) as f64 } else { 0.0 });
    let y = DMatrix::from_fn(6, 6, |i, t| ((i * t) % 5) as f64);
    let p = PanelData::new(y, vec![x]).unwrap();
    let err = inference::jackknife_correct(&ConfiguredEstimator::new(EstimatorSpec::Ols), &p).unwrap_err();
    match err {
        PanelError::Jackknife { half, source } => {
            assert_eq!(half, HalfSample::UnitsSecond);
            assert!(matches!(*source, PanelError::SingularDesign(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn split_matches_dummy_regression() {
    let mut r = rng(22);
    for _ in 0..3 {
        let p = random_panel(&mut r, 8, 8, 1);
        let est = split_sample::estimate_gfe_split(&p, &GfeConfig { r_initial: 3, r_star: 2 }, &LsConfig::default()).unwrap();
        assert!(max_abs_diff(&est.beta_hat, &split_dummy_beta(&p, &est)) < 1e-8);
    }
}

#[test]
fn separated_loading_clouds_are_recovered() {
    let lambda = DMatrix::from_row_slice(5, 2, &[5.0, 0.0, 5.1, 0.05, 0.0, 5.0, 0.1, 5.05, 0.05, 4.9]);
    let mut r = rng(23);
    let f = normal_matrix(&mut r, 8, 2);
    let x = normal_matrix(&mut r, 5, 8);
    let p = PanelData::new(&x * 2.0 + &lambda * f.transpose(), vec![x]).unwrap();
    let fit = factor_ls::estimate_ls(&p, &LsConfig::default().with_r(2)).unwrap();
    let (units, _) = grouped_fe::groups_from_factors(&fit, 2).unwrap();
    assert_eq!(partition_of(&units), vec![vec![0, 1], vec![2, 3, 4]]);
}

#[test]
fn full_proxy_set_equals_all_loadings() {
    let mut r = rng(24);
    let p = random_panel(&mut r, 10, 9, 1);
    let fit = factor_ls::estimate_ls(&p, &LsConfig::default().with_r(3)).unwrap();
    let (units, periods) = grouped_fe::groups_from_factors(&fit, 3).unwrap();
    assert_eq!(units, clustering::cluster_rows(&fit.lambda_hat).unwrap());
    assert_eq!(periods, clustering::cluster_rows(&fit.f_hat).unwrap());
}

fn small_design() -> SimConfig {
    SimConfig { n: 20, t: 20, seed: 5, ..SimConfig::default() }
}

#[test]
fn decomposition_collapses() {
    let cfg = SimConfig { noise: NoiseSwitches { heterogeneity_in_y: false, ..NoiseSwitches::default() }, ..small_design() };
    let p = simulation::generate_panel(&cfg, 0).unwrap();
    let est = grouped_fe::estimate_gfe(&p, &GfeConfig { r_initial: 5, r_star: 2 }, &LsConfig::default()).unwrap();
    let (_, kappa) = decompose_error(&est, &p).unwrap();
    assert!(kappa[0].abs() < 1e-14);

    let cfg = SimConfig { noise: NoiseSwitches { epsilon: false, ..NoiseSwitches::default() }, ..small_design() };
    let p = simulation::generate_panel(&cfg, 0).unwrap();
    let est = grouped_fe::estimate_gfe(&p, &GfeConfig { r_initial: 5, r_star: 2 }, &LsConfig::default()).unwrap();
    let (phi, kappa) = decompose_error(&est, &p).unwrap();
    assert!(phi[0].abs() < 1e-14);
    assert!((est.beta_hat[0] - 1.0 - kappa[0]).abs() < 1e-10);

    let bare = PanelData::new(p.y().clone(), p.x().to_vec()).unwrap();
    assert!(matches!(decompose_error(&est, &bare), Err(PanelError::Domain(_))));
}

#[test]
fn flat_kernel_makes_regressor_collinear() {
    let cfg = SimConfig {
        theta: 1e4,
        noise: NoiseSwitches { epsilon: false, mu: false, heterogeneity_in_y: true },
        ..small_design()
    };
    let p = simulation::generate_panel(&cfg, 0).unwrap();
    let level = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 1e4);
    assert!(p.x()[0].iter().all(|v| (v - level).abs() < 1e-6 * level));
    let g = Grouping::from_labels(&(0..20).map(|i| i / 2).collect::<Vec<_>>()).unwrap();
    assert!(matches!(grouped_fe::estimate_gfe_given_groups(&p, &g, &g), Err(PanelError::SingularDesign(_))));
}

#[test]
fn heterogeneity_tail_shares() {
    let p = simulation::generate_panel(&SimConfig::default(), 0).unwrap();
    let gamma = p.gamma_true().unwrap();
    let shares: Vec<f64> = [1, 5, 20, 50].iter().map(|&r| singular_tail_share(gamma, r).unwrap()).collect();
    assert!(shares.windows(2).all(|w| w[1] < w[0]), "{shares:?}");
    for (got, want) in shares.iter().zip(TAIL_SHARE_FIXTURE) {
        assert!((got - want).abs() < 1e-6 * want + 1e-12, "{got} vs {want}");
    }
    let total = gamma.norm_squared() / 1e4;
    assert!(shares[1] > 0.1 * total, "rank-5 tail {} of total {total}", shares[1]);
}

/// Observed tail shares of the default design's first replication.
const TAIL_SHARE_FIXTURE: [f64; 4] = [0.3560473558063063, 0.16382910486139277, 0.008328679296081009, 4.7686846301076e-9];

#[test]
fn noiseless_ols_study_is_exact() {
    let cfg = SimConfig {
        n: 8,
        t: 8,
        reps: 1,
        estimators: vec![EstimatorChoice::new(EstimatorSpec::Ols)],
        noise: NoiseSwitches { epsilon: false, mu: true, heterogeneity_in_y: false },
        ..SimConfig::default()
    };
    let report = simulation::run_monte_carlo(&cfg).unwrap();
    let row = &report.rows[0];
    assert!(row.mean_bias.abs() < 1e-12);
    assert_eq!(row.std_dev, 0.0);
    assert_eq!((row.n_ok, row.n_fail), (1, 0));
}

#[test]
fn simulated_gfe_metadata_is_consistent() {
    let p = simulation::generate_panel(&SimConfig { n: 40, t: 30, ..SimConfig::default() }, 0).unwrap();
    let gfe = GfeConfig { r_initial: 20, r_star: 2 };
    let report = ConfiguredEstimator::new(EstimatorSpec::Gfe(gfe)).estimate(&p).unwrap();
    let est = grouped_fe::estimate_gfe(&p, &gfe, &LsConfig::default()).unwrap();
    assert_eq!(report.metadata["G"], est.unit_grouping.n_groups() as f64);
    assert_eq!(report.metadata["C"], est.time_grouping.n_groups() as f64);
    assert_eq!(est.unit_grouping.sizes().iter().sum::<usize>(), 40);
    assert_eq!(est.time_grouping.sizes().iter().sum::<usize>(), 30);
    assert_eq!(report.beta_hat, est.beta_hat);
}
