//! Command-line front end: `simulate`, `estimate` and `mc-bench`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::clustering::Grouping;
use crate::error::PanelError;
use crate::estimator::{ConfiguredEstimator, Estimator, EstimatorSpec};
use crate::factor_ls::LsConfig;
use crate::grouped_fe::GfeConfig;
use crate::inference::{self, SigmaMode};
use crate::panel::{self, EstimateReport};
use crate::simulation::{self, EstimatorChoice, KernelSign, SimConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ESTIMATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "panelfe", version, about = "Interactive and grouped fixed-effects panel estimators")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PANELFE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one panel from the simulation design and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate a model on a long-format CSV panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study and print a summary table.
    McBench(McBenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Negative,
    Positive,
}

impl From<KernelArg> for KernelSign {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Negative => KernelSign::Negative,
            KernelArg::Positive => KernelSign::Positive,
        }
    }
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 0.125)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Negative)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Replication index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Sidecar JSON with β⁰ and Γ (default: `<out>.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ls,
    Gfe,
    GfeSplit,
    Ols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeArg {
    Hc,
    Cluster,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    Cluster,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct LsArgs {
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = SigmaArg::Cluster)]
    pub sigma: SigmaArg,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Number of regressors `x1..xK` in the file.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    /// Factors R (LS) or initial factors (GFE); defaults to 1 and 20.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Leading factors used as clustering proxies.
    #[arg(long, default_value_t = 2)]
    pub proxies: usize,
    #[arg(long)]
    pub jackknife: bool,
    /// Standard errors; defaults to hc for ls/ols and cluster for gfe.
    #[arg(long, value_enum)]
    pub se: Option<SeArg>,
    #[arg(long, default_value_t = 199)]
    pub n_boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub ls: LsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McBenchArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma-separated list such as `ls5,ls20_jk,gfe,gfe-split`; defaults to
    /// the nine reference rows.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long, default_value_t = 20)]
    pub factors: usize,
    #[arg(long, default_value_t = 2)]
    pub proxies: usize,
    #[command(flatten)]
    pub ls: LsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        CliError { code: EXIT_IO, message: format!("IoError: {}: {e}", path.display()) }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        let code = match &e {
            PanelError::Io(_) => EXIT_IO,
            PanelError::Parse { .. } | PanelError::Balance { .. } | PanelError::Domain(_) => EXIT_USAGE,
            PanelError::SingularDesign(_) | PanelError::Bootstrap { .. } | PanelError::Jackknife { .. } => EXIT_ESTIMATION,
        };
        CliError { code, message: format!("{}: {e}", e.name()) }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::usage("invalid value for --threads: must be at least 1"));
        }
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::McBench(a) => cmd_mc_bench(a, cli.threads),
    }
}

fn sim_config(d: &DesignArgs) -> CliResult<SimConfig> {
    if !(d.theta > 0.0 && d.theta.is_finite()) {
        return Err(CliError::usage(format!("invalid value for --theta: must be positive, got {}", d.theta)));
    }
    if d.n == 0 || d.t == 0 {
        return Err(CliError::usage("invalid value for --n/--t: must be positive"));
    }
    if !d.beta0.is_finite() {
        return Err(CliError::usage("invalid value for --beta0: must be finite"));
    }
    Ok(SimConfig {
        n: d.n,
        t: d.t,
        beta0: d.beta0,
        theta: d.theta,
        kernel_sign: d.kernel.into(),
        seed: d.seed,
        ..SimConfig::default()
    })
}

fn ls_config(a: &LsArgs, seed: u64) -> CliResult<LsConfig> {
    if a.starts == 0 {
        return Err(CliError::usage("invalid value for --starts: must be at least 1"));
    }
    if !(a.tol > 0.0 && a.tol.is_finite()) {
        return Err(CliError::usage("invalid value for --tol: must be positive"));
    }
    if a.max_iter == 0 {
        return Err(CliError::usage("invalid value for --max-iter: must be at least 1"));
    }
    Ok(LsConfig { n_starts: a.starts, tol: a.tol, max_iter: a.max_iter, seed, ..LsConfig::default() })
}

fn sigma_mode(a: &LsArgs) -> SigmaMode {
    match a.sigma {
        SigmaArg::Cluster => SigmaMode::Cluster,
        SigmaArg::Diagonal => SigmaMode::Diagonal,
    }
}

fn kernel_name(k: KernelArg) -> &'static str {
    match k {
        KernelArg::Negative => "negative",
        KernelArg::Positive => "positive",
    }
}

fn design_json(d: &DesignArgs) -> Value {
    json!({ "n": d.n, "t": d.t, "theta": d.theta, "beta0": d.beta0, "kernel": kernel_name(d.kernel), "seed": d.seed })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let cfg = sim_config(&a.design)?;
    let panel = simulation::generate_panel(&cfg, a.rep)?;
    let mut w = create(&a.out)?;
    panel::write_panel_csv(&panel, &mut w)?;
    w.flush().map_err(|e| CliError::io(&a.out, e))?;

    let truth_path = a.truth.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth.json");
        PathBuf::from(p)
    });
    let gamma = panel.gamma_true().expect("simulated panels carry the truth");
    let rows: Vec<Vec<f64>> = gamma.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut config = design_json(&a.design);
    config["rep"] = json!(a.rep);
    let truth = json!({
        "schema": 1,
        "config": config,
        "beta0": panel.beta_true().expect("simulated panels carry the truth"),
        "gamma": rows,
    });
    write_json(&truth_path, &truth)?;
    println!("wrote {} ({}×{}) and {}", a.out.display(), panel.n_units(), panel.n_periods(), truth_path.display());
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::usage("invalid value for --k: must be at least 1"));
    }
    let panel = panel::load_panel_csv(&a.input, a.k).map_err(|e| match e {
        PanelError::Io(io) => CliError::io(&a.input, io),
        other => other.into(),
    })?;
    let ls = ls_config(&a.ls, a.seed)?;
    let (spec, factors) = match a.estimator {
        EstimatorArg::Ols => (EstimatorSpec::Ols, 0),
        EstimatorArg::Ls => {
            let r = a.factors.unwrap_or(1);
            (EstimatorSpec::Ls { r }, r)
        }
        EstimatorArg::Gfe | EstimatorArg::GfeSplit => {
            let r = a.factors.unwrap_or(GfeConfig::default().r_initial);
            let g = GfeConfig { r_initial: r, r_star: a.proxies };
            let spec = if a.estimator == EstimatorArg::Gfe { EstimatorSpec::Gfe(g) } else { EstimatorSpec::GfeSplit(g) };
            (spec, r)
        }
    };
    let grouped = matches!(spec, EstimatorSpec::Gfe(_) | EstimatorSpec::GfeSplit(_));
    let se_kind = a.se.unwrap_or(if grouped { SeArg::Cluster } else { SeArg::Hc });
    match (se_kind, grouped) {
        (SeArg::Hc, true) => return Err(CliError::usage("invalid value for --se: hc applies to ls and ols only")),
        (SeArg::Cluster, false) => return Err(CliError::usage("invalid value for --se: cluster applies to gfe and gfe-split only")),
        _ => {}
    }
    if se_kind == SeArg::Bootstrap && a.n_boot < 2 {
        return Err(CliError::usage("invalid value for --n-boot: must be at least 2"));
    }

    let est = ConfiguredEstimator { spec, jackknife: a.jackknife, ls, sigma_mode: sigma_mode(&a.ls) };
    let mut report: EstimateReport = est.estimate(&panel)?;
    if se_kind == SeArg::Bootstrap {
        let units = Grouping::from_labels(&(0..panel.n_units()).collect::<Vec<_>>())?;
        let se = inference::bootstrap_cluster_se(&est, &panel, &units, a.n_boot, a.seed)?;
        report.se = None;
        report = match report.clone().with_se(se) {
            Ok(r) => r.with_meta("n_boot", a.n_boot as f64),
            Err(_) => report.with_meta("se_unavailable", 1.0),
        };
    }

    let config = json!({
        "input": a.input.display().to_string(),
        "k": a.k,
        "estimator": spec.to_string(),
        "factors": factors,
        "proxies": a.proxies,
        "jackknife": a.jackknife,
        "se": format!("{se_kind:?}").to_ascii_lowercase(),
        "sigma": format!("{:?}", a.ls.sigma).to_ascii_lowercase(),
        "n_boot": a.n_boot,
        "seed": a.seed,
        "starts": ls.n_starts,
        "tol": ls.tol,
        "max_iter": ls.max_iter,
    });
    let out = json!({
        "schema": 1,
        "beta_hat": report.beta_hat,
        "se": report.se,
        "estimator_tag": report.estimator_tag.to_string(),
        "metadata": report.metadata,
        "config": config,
    });
    let text = serde_json::to_string_pretty(&out).expect("report serializes");
    println!("{text}");
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    Ok(())
}

fn cmd_mc_bench(a: &McBenchArgs, threads: Option<usize>) -> CliResult<()> {
    let mut cfg = sim_config(&a.design)?;
    if a.reps == 0 {
        return Err(CliError::usage("invalid value for --reps: must be at least 1"));
    }
    let gfe = GfeConfig { r_initial: a.factors, r_star: a.proxies };
    cfg.reps = a.reps;
    cfg.ls = ls_config(&a.ls, a.design.seed)?;
    cfg.sigma_mode = sigma_mode(&a.ls);
    cfg.estimators = match &a.estimators {
        None => simulation::reference_estimators(gfe),
        Some(list) => list
            .iter()
            .map(|s| EstimatorChoice::parse(s, gfe))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::usage(format!("invalid value for --estimators: {e}")))?,
    };
    let report = simulation::run_monte_carlo(&cfg)?;

    let mut config = design_json(&a.design);
    config["reps"] = json!(a.reps);
    config["estimators"] = json!(cfg.estimators.iter().map(EstimatorChoice::label).collect::<Vec<_>>());
    config["factors"] = json!(a.factors);
    config["proxies"] = json!(a.proxies);
    config["starts"] = json!(cfg.ls.n_starts);
    config["tol"] = json!(cfg.ls.tol);
    config["max_iter"] = json!(cfg.ls.max_iter);
    config["sigma"] = json!(format!("{:?}", a.ls.sigma).to_ascii_lowercase());
    config["threads"] = json!(threads);

    println!("config: {}", serde_json::to_string(&config).expect("config serializes"));
    println!("{report}");
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
        let mut meta = path.clone().into_os_string();
        meta.push(".config.json");
        write_json(Path::new(&meta), &json!({ "schema": 1, "config": config }))?;
    }
    Ok(())
}
