//! Panel regression with nonparametric two-way heterogeneity: interactive
//! fixed effects, grouped fixed effects from clustered factor proxies,
//! split-sample grouping, sandwich standard errors, the half-panel
//! jackknife and a Monte Carlo harness.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod estimator;
pub mod factor_ls;
pub mod grouped_fe;
pub mod inference;
mod linalg;
pub mod panel;
pub mod simulation;
pub mod split_sample;

pub use clustering::{pair_triple_partition, Grouping};
pub use error::{PanelError, Result};
pub use estimator::{ConfiguredEstimator, Estimator, EstimatorSpec, Workspace};
pub use factor_ls::{estimate_ls, FactorEstimate, LsConfig};
pub use grouped_fe::{estimate_gfe, GfeConfig, GroupedFEEstimate};
pub use inference::{bootstrap_cluster_se, cluster_se, hc_se, jackknife_correct, SigmaMode};
pub use panel::{load_panel_csv, EstimateReport, EstimatorKind, EstimatorTag, PanelData};
pub use simulation::{generate_panel, run_monte_carlo, MCReport, SimConfig};
pub use split_sample::{estimate_gfe_split, make_blocks, SplitEstimate};

pub use nalgebra;
