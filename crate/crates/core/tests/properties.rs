mod common;

use common::partition_of;
use nalgebra::DMatrix;
use panelfe::clustering::{self, Grouping};
use panelfe::factor_ls::{self, LsConfig};
use panelfe::grouped_fe;
use panelfe::inference;
use panelfe::panel::{read_panel_csv, write_panel_csv};
use panelfe::split_sample::make_blocks;
use panelfe::PanelData;
use proptest::prelude::*;

fn matrix(n: usize, t: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0f64..5.0, n * t).prop_map(move |v| DMatrix::from_vec(n, t, v))
}

fn panel_strategy() -> impl Strategy<Value = PanelData> {
    (3usize..8, 3usize..8, 1usize..3).prop_flat_map(|(n, t, k)| {
        (matrix(n, t), prop::collection::vec(matrix(n, t), k)).prop_map(|(y, x)| PanelData::new(y, x).unwrap())
    })
}

fn points(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=max, 1usize..4).prop_flat_map(|(m, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn als_objective_never_increases(panel in panel_strategy(), r in 1usize..3) {
        prop_assume!(r < panel.n_units().min(panel.n_periods()));
        let cfg = LsConfig { r, n_starts: 3, ..LsConfig::default() };
        let Ok((est, traces)) = factor_ls::estimate_ls_traced(&panel, &cfg) else { return Ok(()) };
        for trace in &traces {
            for w in trace.objectives.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", trace.objectives);
            }
        }
        let best = traces.iter().map(|t| *t.objectives.last().unwrap()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(est.objective, best);
    }

    #[test]
    fn factor_normalization(panel in panel_strategy(), r in 1usize..3) {
        prop_assume!(r < panel.n_units().min(panel.n_periods()));
        let Ok(est) = factor_ls::estimate_ls(&panel, &LsConfig::default().with_r(r)) else { return Ok(()) };
        let t = panel.n_periods() as f64;
        let ff = est.f_hat.transpose() * &est.f_hat / t;
        prop_assert!((ff - DMatrix::identity(r, r)).amax() < 1e-8);
        let ll = est.lambda_hat.transpose() * &est.lambda_hat;
        let scale = ll.amax().max(1.0);
        for a in 0..r {
            for b in 0..r {
                if a != b {
                    prop_assert!(ll[(a, b)].abs() < 1e-8 * scale);
                }
            }
            if a > 0 {
                prop_assert!(ll[(a, a)] <= ll[(a - 1, a - 1)] * (1.0 + 1e-10) + 1e-12);
            }
        }
        let resid = est.residuals(&panel);
        prop_assert!((resid.norm_squared() - est.objective).abs() < 1e-8 * est.objective.max(1.0));
    }

    #[test]
    fn partitions_have_sizes_two_or_three(pts in points(30)) {
        let d = clustering::pairwise_distances_of(&pts).unwrap();
        let g = clustering::pair_triple_partition(&d).unwrap();
        prop_assert_eq!(g.len(), pts.len());
        if pts.len() >= 4 {
            prop_assert!(g.sizes().iter().all(|s| *s == 2 || *s == 3), "{:?}", g.sizes());
        } else {
            prop_assert_eq!(g.n_groups(), 1);
        }
    }

    #[test]
    fn partitions_are_permutation_equivariant(pts in points(20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let m = pts.len();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut common::rng(seed));
        let d = clustering::pairwise_distances_of(&pts).unwrap();
        let mut off: Vec<f64> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).map(|(i, j)| d[(i, j)]).collect();
        off.sort_by(f64::total_cmp);
        prop_assume!(off.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let base = clustering::pair_triple_partition(&d).unwrap();
        let other = clustering::pair_triple_partition(&clustering::pairwise_distances_of(&permuted).unwrap()).unwrap();
        let mapped: Vec<Vec<usize>> = other.groups().iter().map(|grp| grp.iter().map(|&j| perm[j]).collect()).collect();
        prop_assert_eq!(partition_of(&base), partition_of(&Grouping::from_groups(&mapped, m).unwrap()));
    }

    #[test]
    fn grouping_labels_are_canonical(raw in prop::collection::vec(0usize..6, 1..20), shift in 1usize..50) {
        let g = Grouping::from_labels(&raw).unwrap();
        let relabeled: Vec<usize> = raw.iter().map(|l| (l * 7 + shift) % 97).collect();
        prop_assert_eq!(&g, &Grouping::from_labels(&relabeled).unwrap());
        let mut seen = 0;
        for &l in g.labels() {
            prop_assert!(l <= seen);
            if l == seen {
                seen += 1;
            }
        }
        prop_assert_eq!(g.sizes().iter().sum::<usize>(), raw.len());
    }

    #[test]
    fn within_projection_is_idempotent(m in matrix(6, 5), ul in prop::collection::vec(0usize..3, 6), tl in prop::collection::vec(0usize..2, 5)) {
        let g = Grouping::from_labels(&ul).unwrap();
        let c = Grouping::from_labels(&tl).unwrap();
        let once = grouped_fe::project_within(&m, &g, &c);
        let twice = grouped_fe::project_within(&once, &g, &c);
        prop_assert!((&once - twice).amax() < 1e-12);
        let dummies = grouped_fe::build_dummies(&g);
        prop_assert!((dummies.transpose() * &once).amax() < 1e-11);
        prop_assert!((&once * grouped_fe::build_dummies(&c)).amax() < 1e-11);
    }

    #[test]
    fn blocks_tile_the_grid(n in 4usize..60, t in 4usize..60) {
        let s = make_blocks(n, t).unwrap();
        let cells: usize = s.estimation_blocks.iter().map(|b| b.n_cells()).sum();
        prop_assert_eq!(cells, n * t);
        for (i, tt) in [(0, 0), (n - 1, t - 1), (n / 2, t / 2 - 1)] {
            prop_assert!(s.estimation_blocks[s.block_of(i, tt)].contains(i, tt));
        }
    }

    #[test]
    fn jackknife_of_equal_estimates_is_identity(b in prop::collection::vec(-100.0f64..100.0, 1..4)) {
        let got = inference::jackknife_combine(&b, [&b, &b, &b, &b]);
        for (g, e) in got.iter().zip(&b) {
            prop_assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn csv_round_trip(panel in panel_strategy()) {
        let mut buf = Vec::new();
        write_panel_csv(&panel, &mut buf).unwrap();
        let back = read_panel_csv(buf.as_slice(), panel.k()).unwrap();
        prop_assert_eq!(back.y(), panel.y());
        prop_assert_eq!(back.x(), panel.x());
    }
}

#[test]
fn shuffled_rows_load_identically() {
    let sorted = "unit_id,time_id,y,x1\n\
                  a,1,0.5,1.0\na,2,1.5,2.0\na,3,2.5,3.0\na,4,3.5,4.0\n\
                  b,1,4.5,5.0\nb,2,5.5,6.0\nb,3,6.5,7.0\nb,4,7.5,8.0\n\
                  c,1,8.5,9.0\nc,2,9.5,10.0\nc,3,10.5,11.0\nc,4,11.5,12.0\n";
    let shuffled = "unit_id,time_id,y,x1\n\
                    a,3,2.5,3.0\nb,2,5.5,6.0\na,1,0.5,1.0\nc,4,11.5,12.0\n\
                    b,4,7.5,8.0\nc,1,8.5,9.0\na,4,3.5,4.0\nb,1,4.5,5.0\n\
                    c,2,9.5,10.0\na,2,1.5,2.0\nb,3,6.5,7.0\nc,3,10.5,11.0\n";
    let a = read_panel_csv(sorted.as_bytes(), 1).unwrap();
    let b = read_panel_csv(shuffled.as_bytes(), 1).unwrap();
    assert_eq!(a.y(), b.y());
    assert_eq!(a.x(), b.x());
    assert_eq!(a.time_labels(), b.time_labels());
}
