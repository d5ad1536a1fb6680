//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines;
use crate::bias::TrimRule;
use crate::dataset::{load_csv, load_panel_csv, panel_to_design, saturate_discrete, Dataset, Schema};
use crate::design::{build_design, DesignMatrices, Estimand};
use crate::error::{Error, Result};
use crate::inference::{self, CiConfig, InitialMode, LambdaSearch, SeKind};
use crate::ridge;
use crate::simlab::{self, SimEstimator, SimMode};
use crate::vcate;

const DGP1: &str = include_str!("../dgp/dgp1.cfg");
const DGP2: &str = include_str!("../dgp/dgp2.cfg");
const DGP3: &str = include_str!("../dgp/dgp3.cfg");

#[derive(Debug, Parser)]
#[command(name = "regulate", version, about = "Bias-aware treatment effect estimation under limited overlap")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point estimate and bias-aware confidence interval for one bound C.
    Estimate(EstimateArgs),
    /// Intervals over a grid of bounds, with the breakdown value of C.
    Sensitivity(SensitivityArgs),
    /// Plug-in and bias-corrected variance of conditional effects.
    Vcate(VcateArgs),
    /// Fixed-design Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// ATT for a staggered-adoption panel.
    Staggered(StaggeredArgs),
    /// regulaTE next to short, long, trimmed and IPW estimators.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimandArg {
    Ate,
    Att,
    Atu,
}

impl From<EstimandArg> for Estimand {
    fn from(e: EstimandArg) -> Self {
        match e {
            EstimandArg::Ate => Estimand::Ate,
            EstimandArg::Att => Estimand::Att,
            EstimandArg::Atu => Estimand::Atu,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeArg {
    Homo,
    Robust,
    Cluster,
}

impl From<SeArg> for SeKind {
    fn from(s: SeArg) -> Self {
        match s {
            SeArg::Homo => SeKind::Homoskedastic,
            SeArg::Robust => SeKind::Robust,
            SeArg::Cluster => SeKind::Cluster,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitialArg {
    Auto,
    Long,
    CvRidge,
}

impl From<InitialArg> for InitialMode {
    fn from(s: InitialArg) -> Self {
        match s {
            InitialArg::Auto => InitialMode::Auto,
            InitialArg::Long => InitialMode::Long,
            InitialArg::CvRidge => InitialMode::CvRidge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Pretty,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    /// Comma-separated discrete covariates; these are saturated into cells.
    #[arg(long, value_delimiter = ',')]
    pub discrete: Vec<String>,
    #[arg(long, value_enum, default_value = "ate")]
    pub estimand: EstimandArg,
    #[arg(long = "cluster-col")]
    pub cluster_col: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct InferenceArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "robust")]
    pub se: SeArg,
    /// Initial outcome model used for residuals.
    #[arg(long, value_enum, default_value = "auto")]
    pub initial: InitialArg,
    /// Lower end of the penalty grid (relative to the natural scale).
    #[arg(long = "lambda-lo", default_value_t = 1e-8)]
    pub lambda_lo: f64,
    #[arg(long = "lambda-hi", default_value_t = 1e12)]
    pub lambda_hi: f64,
    #[arg(long = "lambda-points", default_value_t = 40)]
    pub lambda_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Bound on the standard deviation of conditional effects.
    #[arg(long = "c", default_value_t = 0.0)]
    pub c: f64,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also write the (lambda, sd, maxbias, beta_hat) path as CSV.
    #[arg(long = "path-out")]
    pub path_out: Option<PathBuf>,
    /// Also write the design matrices as CSV.
    #[arg(long = "design-out")]
    pub design_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid of bounds as lo:hi:step.
    #[arg(long = "c-grid")]
    pub c_grid: String,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct VcateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// DGP file (key=value) or one of the bundled names dgp1, dgp2, dgp3.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["oracle", "feasible"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "trim-c")]
    pub trim_c: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct StaggeredArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub unit: String,
    #[arg(long)]
    pub time: String,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    #[arg(long = "c", default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "cluster")]
    pub se: SeArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "c", default_value_t = 0.0)]
    pub c: f64,
    #[arg(long = "trim-c", default_value_t = 0.09)]
    pub trim_c: f64,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let covs: Vec<&str> = args.covariates.iter().map(String::as_str).collect();
    let disc: Vec<&str> = args.discrete.iter().map(String::as_str).collect();
    let mut schema = Schema::new(&args.outcome, &args.treatment, &covs).with_discrete(&disc);
    if let Some(c) = &args.cluster_col {
        schema = schema.with_cluster(c);
    }
    saturate_discrete(&load_csv(&args.input, &schema)?)
}

fn load_design(args: &DataArgs) -> Result<(Dataset, DesignMatrices)> {
    let ds = load_dataset(args)?;
    let dm = build_design(&ds, args.estimand.into())?;
    Ok((ds, dm))
}

fn ci_config(c: f64, inf: &InferenceArgs) -> Result<CiConfig> {
    if !(inf.lambda_lo > 0.0 && inf.lambda_hi > inf.lambda_lo && inf.lambda_points >= 2) {
        return Err(Error::Config("lambda grid needs 0 < lo < hi and at least 2 points".into()));
    }
    Ok(CiConfig {
        c,
        alpha: inf.alpha,
        se_kind: inf.se.into(),
        initial: inf.initial.into(),
        search: LambdaSearch {
            grid_points: inf.lambda_points,
            lo: inf.lambda_lo,
            hi: inf.lambda_hi,
            ..LambdaSearch::default()
        },
        lindeberg_threshold: 0.05,
    })
}

fn check_c(c: f64) -> Result<()> {
    crate::bias::HeterogeneityBound::new(c).map(|_| ())
}

/// Renders CSV text as whitespace-aligned columns, keeping `#` lines.
fn prettify(csv_text: &[u8]) -> Result<Vec<u8>> {
    let text = String::from_utf8_lossy(csv_text);
    let mut out = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            writeln!(out, "{line}")?;
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(body.as_bytes());
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    for r in rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(j, s)| format!("{s:>w$}", w = widths[j])).collect();
        writeln!(out, "{}", cells.join("  ").trim_end())?;
    }
    Ok(out)
}

fn emit(output: &OutputArgs, header: &[String], body: Vec<u8>) -> Result<()> {
    let mut buf = Vec::new();
    for h in header {
        writeln!(buf, "# {h}")?;
    }
    buf.extend(body);
    let bytes = match output.format {
        Format::Csv => buf,
        Format::Pretty => prettify(&buf)?,
    };
    match &output.out {
        Some(p) => File::create(p)?.write_all(&bytes)?,
        None => io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn write_to(path: &Path, f: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let mut file = File::create(path)?;
    f(&mut file)
}

fn record_csv(fields: &[(&str, String)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields.iter().map(|(k, _)| *k))?;
    w.write_record(fields.iter().map(|(_, v)| v.as_str()))?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn provenance(command: &str, pairs: &[(&str, String)]) -> Vec<String> {
    let mut line = format!("regulate {} command={command}", env!("CARGO_PKG_VERSION"));
    for (k, v) in pairs {
        line.push_str(&format!(" {k}={v}"));
    }
    vec![line]
}

fn inference_pairs(cfg: &CiConfig) -> Vec<(&'static str, String)> {
    vec![
        ("alpha", cfg.alpha.to_string()),
        ("se", cfg.se_kind.to_string()),
        ("initial", cfg.initial.to_string()),
        ("lambda_lo", cfg.search.lo.to_string()),
        ("lambda_hi", cfg.search.hi.to_string()),
        ("lambda_points", cfg.search.grid_points.to_string()),
    ]
}

fn log_warnings(ws: &[crate::Warning]) {
    for w in ws {
        log::warn!("{w}");
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    check_c(a.c)?;
    let (ds, dm) = load_design(&a.data)?;
    let cfg = ci_config(a.c, &a.inference)?;
    let init = inference::initial_estimator(&dm, &ds.outcome, cfg.initial)?;
    let report = inference::feasible_ci_with(&dm, &ds.outcome, &cfg, &init)?;
    log_warnings(&report.warnings);
    if let Some(p) = &a.path_out {
        let grid = cfg.search.grid(&dm);
        let path = ridge::ridge_path(&dm, &ds.outcome, &grid, a.c, init.sigma_hat)?;
        write_to(p, |f| ridge::write_path_csv(&path, f))?;
    }
    if let Some(p) = &a.design_out {
        write_to(p, |f| dm.write_csv(f))?;
    }
    let mut pairs = vec![("estimand", dm.estimand.to_string()), ("C", a.c.to_string())];
    pairs.extend(inference_pairs(&cfg));
    emit(&a.output, &provenance("estimate", &pairs), record_csv(&report.fields())?)
}

fn cmd_sensitivity(a: &SensitivityArgs) -> Result<()> {
    let grid = vcate::parse_c_grid(&a.c_grid)?;
    let (ds, dm) = load_design(&a.data)?;
    let cfg = ci_config(0.0, &a.inference)?;
    let curve = vcate::sensitivity(&dm, &ds.outcome, &grid, &cfg)?;
    for r in &curve.rows {
        if let Err(e) = &r.regulate {
            log::warn!("C={}: {e}", r.c);
        }
    }
    let mut pairs = vec![("estimand", dm.estimand.to_string()), ("c_grid", a.c_grid.clone())];
    pairs.extend(inference_pairs(&cfg));
    pairs.push((
        "breakdown_C",
        curve.breakdown_c.map_or_else(|| "none".to_string(), |c| c.to_string()),
    ));
    let mut body = Vec::new();
    curve.write_csv(&mut body)?;
    emit(&a.output, &provenance("sensitivity", &pairs), body)
}

fn cmd_vcate(a: &VcateArgs) -> Result<()> {
    let (ds, dm) = load_design(&a.data)?;
    let rep = vcate::estimate_vcate(&dm, &ds.outcome, a.alpha)?;
    log_warnings(&rep.warnings);
    let pairs = vec![("estimand", dm.estimand.to_string()), ("alpha", a.alpha.to_string())];
    emit(&a.output, &provenance("vcate", &pairs), record_csv(&rep.fields())?)
}

fn dgp_text(name: &str) -> Result<String> {
    match name {
        "dgp1" => Ok(DGP1.to_string()),
        "dgp2" => Ok(DGP2.to_string()),
        "dgp3" => Ok(DGP3.to_string()),
        path => std::fs::read_to_string(path).map_err(Error::from),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = simlab::parse_dgp_config(&dgp_text(&a.dgp)?)?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = &a.mode {
        cfg.spec.mode = m.parse::<SimMode>()?;
    }
    if let Some(al) = a.alpha {
        cfg.spec.alpha = al;
    }
    if let Some(t) = a.trim_c {
        cfg.spec.trim = TrimRule::new(t)?;
    }
    if cfg.reps < 100 {
        return Err(Error::Config(format!("need at least 100 replications, got {}", cfg.reps)));
    }
    let res = simlab::simulate(&cfg.spec, cfg.reps, cfg.seed, &SimEstimator::ALL)?;
    for s in &res.summaries {
        if let Err(e) = &s.status {
            log::warn!("{} infeasible: {e}", s.estimator);
        }
    }
    let mode = match cfg.spec.mode {
        SimMode::Oracle => "oracle",
        SimMode::Feasible => "feasible",
    };
    let pairs = vec![
        ("dgp", a.dgp.clone()),
        ("mode", mode.to_string()),
        ("alpha", cfg.spec.alpha.to_string()),
        ("trim_c", cfg.spec.trim.threshold.to_string()),
    ];
    let mut body = Vec::new();
    res.write_csv(&mut body)?;
    emit(&a.output, &provenance("simulate", &pairs), body)
}

fn cmd_staggered(a: &StaggeredArgs) -> Result<()> {
    check_c(a.c)?;
    let panel = load_panel_csv(&a.input, &a.unit, &a.time, &a.outcome, &a.treatment)?;
    let pd = panel_to_design(&panel, Estimand::Att)?;
    let dm = build_design(&pd.dataset, Estimand::Att)?;
    let y = &pd.dataset.outcome;
    let cfg = CiConfig { c: a.c, alpha: a.alpha, se_kind: a.se.into(), ..CiConfig::default() };
    let report = inference::feasible_ci(&dm, y, &cfg)?;
    log_warnings(&report.warnings);
    let twfe = baselines::short_fit(&dm, y)?;
    let mut fields = report.fields();
    fields.push(("twfe_beta", twfe.beta_hat.to_string()));
    fields.push(("cohorts", pd.cohorts.len().to_string()));
    fields.push(("periods", pd.times.len().to_string()));
    fields.push(("effect_cells", pd.cells.len().to_string()));
    let mut pairs = vec![("estimand", "att".to_string()), ("C", a.c.to_string())];
    pairs.extend(inference_pairs(&cfg));
    emit(&a.output, &provenance("staggered", &pairs), record_csv(&fields)?)
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    check_c(a.c)?;
    let (ds, dm) = load_design(&a.data)?;
    let cfg = ci_config(a.c, &a.inference)?;
    let trim = TrimRule::new(a.trim_c)?;
    let table = baselines::compare(&dm, &ds.outcome, &cfg, &trim)?;
    for r in &table.rows {
        if let Some(note) = &r.note {
            log::warn!("{}: {note}", r.estimator);
        }
    }
    let mut pairs = vec![("estimand", dm.estimand.to_string()), ("C", a.c.to_string())];
    pairs.extend(inference_pairs(&cfg));
    pairs.push(("trim_c", a.trim_c.to_string()));
    let mut body = Vec::new();
    table.write_csv(&mut body)?;
    emit(&a.output, &provenance("compare", &pairs), body)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Vcate(a) => cmd_vcate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Staggered(a) => cmd_staggered(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Caps the global thread pool at `REGULATE_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REGULATE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("REGULATE_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config("REGULATE_THREADS must be positive".into()));
        }
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string().replace('"', "'");
            eprintln!("error kind={kind} code={} message=\"{msg}\"", kind.exit_code());
            kind.exit_code()
        }
    }
}
