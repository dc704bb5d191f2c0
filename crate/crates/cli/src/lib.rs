//! Command implementations behind the `mixsel` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mixsel_core::calibration::{calibrate_and_select, select_with_rule, CalibrationResult, WindowSpec};
use mixsel_core::criteria::SelectionRule;
use mixsel_core::data::{parse_table, CaseKind, Dataset, LoadOptions};
use mixsel_core::em::{fit, EmConfig, FittedModel};
use mixsel_core::experiment::{consistency_experiment, oracle_experiment, ExperimentConfig};
use mixsel_core::explorer::{build_pool, exhaustive_pool, ExplorerConfig, GridSpec, ModelPool};
use mixsel_core::metrics::map_classify;
use mixsel_core::model::{theorem_precondition, xi_constant, ModelIndex};
use mixsel_core::simulate::{consistency_design, oracle_design, simulate_with_labels, TrueModelSpec};
use mixsel_core::{Error, ErrorFamily};

#[derive(Debug, Parser)]
#[command(name = "mixsel", version, about = "Variable selection and clustering for categorical mixtures")]
pub struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub parallelism: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model (K, S) by EM.
    Fit(FitArgs),
    /// Explore models and select one under a criterion.
    Select(SelectArgs),
    /// Run the slope-heuristics calibration and report the dimension path.
    Calibrate(SelectArgs),
    /// Draw a dataset from a model spec.
    Simulate(SimulateArgs),
    /// Run the consistency and/or oracle experiments.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CaseArg {
    Haploid,
    Diploid,
}

impl From<CaseArg> for CaseKind {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Haploid => CaseKind::Haploid,
            CaseArg::Diploid => CaseKind::Diploid,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Delimiter-separated data file, one row per individual.
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "haploid")]
    pub case: CaseArg,
    /// Field delimiter; sniffed when omitted.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Skip the first line.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct EmArgs {
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        EmConfig {
            n_restarts: self.restarts,
            rng_seed: self.seed,
            max_iterations: self.max_iterations,
            ..EmConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, short)]
    pub k: usize,
    /// Clustering variables, one-based and comma-separated.
    #[arg(long, short, value_delimiter = ',')]
    pub s: Vec<usize>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 5)]
    pub kmax: usize,
    /// Penalty grid as lo:hi:count; empty endpoints default to 0.5 and ln n.
    #[arg(long, default_value = "::50")]
    pub grid: GridSpec,
    /// Jump window as a penalty width.
    #[arg(long, conflicts_with = "window_h")]
    pub window_width: Option<f64>,
    /// Jump window as a number of grid intervals.
    #[arg(long)]
    pub window_h: Option<usize>,
    /// Fit every model with K <= kmax instead of exploring.
    #[arg(long)]
    pub exhaustive: bool,
    /// Skip the forward pass of the exploration.
    #[arg(long)]
    pub no_forward: bool,
    #[command(flatten)]
    pub em: EmArgs,
}

impl SearchArgs {
    fn explorer(&self) -> ExplorerConfig {
        ExplorerConfig {
            k_max: self.kmax,
            grid: self.grid.clone(),
            enable_forward: !self.no_forward,
            em: self.em.config(),
            ..ExplorerConfig::default()
        }
    }

    fn window(&self) -> Result<WindowSpec> {
        match (self.window_width, self.window_h) {
            (Some(w), _) if !(w > 0.0 && w.is_finite()) => {
                Err(Error::InvalidConfig(format!("window width must be positive, got {w}")).into())
            }
            (Some(w), _) => Ok(WindowSpec::Width(w)),
            (None, Some(0)) => Err(Error::InvalidConfig("window must span at least one interval".into()).into()),
            (None, Some(h)) => Ok(WindowSpec::Intervals(h)),
            (None, None) => Ok(WindowSpec::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// aic, bic, slope or theoretical:KAPPA.
    #[arg(long, default_value = "slope")]
    pub criterion: SelectionRule,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignArg {
    Consistency,
    Oracle,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TruthArgs {
    /// JSON model spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in design instead of a spec file.
    #[arg(long, value_enum)]
    pub design: Option<DesignArg>,
}

impl TruthArgs {
    fn load(&self, seed: u64) -> Result<TrueModelSpec> {
        match (&self.spec, self.design) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(TrueModelSpec::from_json(&text)?)
            }
            (None, Some(DesignArg::Consistency)) => Ok(consistency_design(seed)?),
            (None, Some(DesignArg::Oracle)) => Ok(oracle_design(seed)?),
            (None, None) => bail!(Error::InvalidConfig("either --spec or --design is required".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, short)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Consistency,
    Oracle,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub experiment: ExperimentArg,
    /// Sample sizes of the consistency experiment; the first one is used by
    /// the oracle experiment.
    #[arg(long, value_delimiter = ',', default_value = "100,300,600")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "aic,bic,slope")]
    pub criteria: Vec<SelectionRule>,
    /// Variables the consistency experiment requires in S, one-based;
    /// defaults to the true S.
    #[arg(long, value_delimiter = ',')]
    pub required: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Exit status for an error: 2 bad input, 3 numerical failure, 4 no usable
/// dimension jump.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::family) {
        Some(ErrorFamily::Numerical) => 3,
        Some(ErrorFamily::FlatPath) => 4,
        _ => 2,
    }
}

/// Runs a parsed command, inside a dedicated thread pool when
/// `--parallelism` is set.
pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.parallelism)
        .build()
        .context("building the thread pool")?;
    pool.install(|| match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Select(a) => cmd_select(&a, false),
        Command::Calibrate(a) => cmd_select(&a, true),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    })
}

fn load(input: &DataArgs) -> Result<Dataset> {
    let file = fs::File::open(&input.data).with_context(|| format!("opening {}", input.data.display()))?;
    let opts = LoadOptions {
        delimiter: input.delimiter,
        has_header: input.header,
    };
    Ok(parse_table(file, input.case.into(), &opts)?)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    write_file(dir, name, &bytes)
}

fn set_string(vars: &[usize]) -> String {
    let inner: Vec<String> = vars.iter().map(|l| (l + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

#[derive(Serialize)]
struct DataSummary {
    n: usize,
    n_variables: usize,
    case_kind: CaseKind,
    states: Vec<usize>,
}

impl DataSummary {
    fn of(ds: &Dataset) -> Self {
        Self {
            n: ds.n(),
            n_variables: ds.n_variables(),
            case_kind: ds.case_kind(),
            states: ds.states().to_vec(),
        }
    }
}

#[derive(Serialize)]
struct LabelRow {
    row: usize,
    /// One-based cluster, empty when unclassifiable.
    cluster: Option<usize>,
}

fn write_labels(dir: &Path, ds: &Dataset, fitted: &FittedModel) -> Result<()> {
    let labels = map_classify(ds, &fitted.index, &fitted.params);
    write_csv(
        dir,
        "labels.csv",
        labels.into_iter().enumerate().map(|(i, c)| LabelRow {
            row: i + 1,
            cluster: c.map(|c| c + 1),
        }),
    )
}

#[derive(Serialize)]
struct FitReport<'a> {
    command: &'static str,
    data: DataSummary,
    em: EmConfig,
    fit: &'a FittedModel,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let ds = load(&args.input)?;
    let vars = args
        .s
        .iter()
        .map(|&l| l.checked_sub(1).ok_or_else(|| Error::InvalidIndex("variables are numbered from 1".into())))
        .collect::<Result<Vec<_>, _>>()?;
    let index = ModelIndex::new(args.k, vars)?;
    let em = args.em.config();
    let fitted = fit(&ds, &index, &em)?;
    write_json(
        &args.out,
        "fit.json",
        &FitReport {
            command: "fit",
            data: DataSummary::of(&ds),
            em,
            fit: &fitted,
        },
    )?;
    write_labels(&args.out, &ds, &fitted)?;
    println!(
        "{}  D = {}  contrast = {:.6}  converged = {}",
        fitted.index, fitted.dimension, fitted.contrast, fitted.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct PoolSummary {
    models: usize,
    exhaustive: bool,
    failures: Vec<FailureRow>,
}

#[derive(Serialize)]
struct FailureRow {
    model: ModelIndex,
    error: String,
}

#[derive(Serialize)]
struct TheoremCheck {
    xi: f64,
    precondition_holds: bool,
}

#[derive(Serialize)]
struct SelectReport<'a> {
    command: &'static str,
    data: DataSummary,
    criterion: String,
    explorer: ExplorerConfig,
    window: WindowSpec,
    pool: PoolSummary,
    selected: &'a FittedModel,
    calibration: Option<&'a CalibrationResult>,
    theorem: TheoremCheck,
}

#[derive(Serialize)]
struct PathRow {
    lambda: f64,
    dimension: usize,
    k: usize,
    s: String,
}

#[derive(Serialize)]
struct ContrastRow {
    k: usize,
    s: String,
    dimension: usize,
    dimension_over_n: f64,
    contrast: f64,
}

fn build(ds: &Dataset, search: &SearchArgs) -> Result<(ModelPool, ExplorerConfig)> {
    let explorer = search.explorer();
    let pool = if search.exhaustive {
        exhaustive_pool(ds, search.kmax, &explorer)?
    } else {
        build_pool(ds, &explorer)?
    };
    Ok((pool, explorer))
}

/// `select`, or `calibrate` when `calibrate_only` (which forces the slope
/// rule and always emits the dimension path).
pub fn cmd_select(args: &SelectArgs, calibrate_only: bool) -> Result<()> {
    let ds = load(&args.input)?;
    let window = args.search.window()?;
    let (pool, explorer) = build(&ds, &args.search)?;
    let grid = explorer.grid.resolve(ds.n())?;
    let rule = if calibrate_only { SelectionRule::Slope } else { args.criterion };
    let (selected, calibration) = if calibrate_only {
        let cal = calibrate_and_select(&pool, &grid, window)?;
        let f = pool.get(&cal.final_selection).expect("selection comes from the pool").clone();
        (f, Some(cal))
    } else {
        let sel = select_with_rule(&pool, rule, &grid, window)?;
        (sel.fitted, sel.calibration)
    };
    let xi = xi_constant(ds.case_kind(), ds.n_variables(), ds.space().max_states());
    let report = SelectReport {
        command: if calibrate_only { "calibrate" } else { "select" },
        data: DataSummary::of(&ds),
        criterion: rule.to_string(),
        explorer,
        window,
        pool: PoolSummary {
            models: pool.len(),
            exhaustive: args.search.exhaustive,
            failures: pool
                .failures()
                .iter()
                .map(|(m, e)| FailureRow {
                    model: m.clone(),
                    error: e.clone(),
                })
                .collect(),
        },
        selected: &selected,
        calibration: calibration.as_ref(),
        theorem: TheoremCheck {
            xi,
            precondition_holds: theorem_precondition(ds.n(), selected.index.k(), xi),
        },
    };
    let out = &args.out;
    write_json(out, if calibrate_only { "calibration.json" } else { "report.json" }, &report)?;
    write_csv(
        out,
        "contrast_dimension.csv",
        pool.fits().map(|f| ContrastRow {
            k: f.index.k(),
            s: set_string(f.index.vars()),
            dimension: f.dimension,
            dimension_over_n: f.dimension as f64 / f.n as f64,
            contrast: f.contrast,
        }),
    )?;
    if let Some(cal) = &calibration {
        let p = &cal.path;
        write_csv(
            out,
            "dimension_path.csv",
            p.lambda_grid.iter().zip(&p.selected).zip(&p.dimensions).map(|((&lambda, m), &d)| PathRow {
                lambda,
                dimension: d,
                k: m.k(),
                s: set_string(m.vars()),
            }),
        )?;
    }
    write_labels(out, &ds, &selected)?;
    match &calibration {
        Some(cal) => println!(
            "{}: {}  D = {}  lambda_min = {:.4}  final lambda = {:.4}",
            rule, selected.index, selected.dimension, cal.lambda_min_hat, cal.final_lambda
        ),
        None => println!("{}: {}  D = {}", rule, selected.index, selected.dimension),
    }
    Ok(())
}

#[derive(Serialize)]
struct TruthRow {
    row: usize,
    cluster: usize,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let truth = args.truth.load(args.seed)?;
    let (ds, z) = simulate_with_labels(&truth, args.n, args.seed)?;
    write_file(&args.out, "data.tsv", ds.to_table().as_bytes())?;
    write_file(&args.out, "truth.json", format!("{}\n", truth.to_json()).as_bytes())?;
    write_csv(
        &args.out,
        "true_labels.csv",
        z.into_iter().enumerate().map(|(i, c)| TruthRow { row: i + 1, cluster: c + 1 }),
    )?;
    println!("wrote {} rows to {}", ds.n(), args.out.join("data.tsv").display());
    Ok(())
}

#[derive(Serialize)]
struct ConsistencyCsvRow {
    n: usize,
    criterion: String,
    replicate: usize,
    k: Option<usize>,
    s: Option<String>,
    dimension: Option<usize>,
    k_correct: bool,
    covers_truth: bool,
    covers_required: bool,
    lambda: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct RiskCsvRow {
    k: usize,
    s: String,
    mean_hellinger_sq: f64,
    std_error: f64,
    replicates: usize,
    failures: usize,
}

#[derive(Serialize)]
struct SelectionCsvRow {
    replicate: usize,
    criterion: String,
    k: Option<usize>,
    s: Option<String>,
    hellinger_sq: Option<f64>,
    oracle_hellinger_sq: Option<f64>,
    ratio: Option<f64>,
    excess: Option<f64>,
    error: Option<String>,
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let seed = args.search.em.seed;
    let truth = args.truth.load(seed)?;
    if args.sizes.is_empty() {
        bail!(Error::InvalidConfig("--sizes must list at least one sample size".into()));
    }
    let config = ExperimentConfig {
        explorer: args.search.explorer(),
        window: args.search.window()?,
        exhaustive: args.search.exhaustive,
        mc_draws: args.mc_draws,
    };
    let out = &args.out;
    write_file(out, "truth.json", format!("{}\n", truth.to_json()).as_bytes())?;
    if args.experiment != ExperimentArg::Oracle {
        let required = match &args.required {
            Some(r) => Some(
                r.iter()
                    .map(|&l| l.checked_sub(1).ok_or_else(|| Error::InvalidIndex("variables are numbered from 1".into())))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let report = consistency_experiment(
            &truth,
            &args.sizes,
            args.replicates,
            &args.criteria,
            required.as_deref(),
            &config,
            seed,
        )?;
        write_csv(
            out,
            "consistency.csv",
            report.rows.iter().map(|r| ConsistencyCsvRow {
                n: r.n,
                criterion: r.rule.to_string(),
                replicate: r.replicate + 1,
                k: r.index.as_ref().map(ModelIndex::k),
                s: r.index.as_ref().map(|m| set_string(m.vars())),
                dimension: r.dimension,
                k_correct: r.k_correct,
                covers_truth: r.covers_truth,
                covers_required: r.covers_required,
                lambda: r.lambda,
                error: r.error.clone(),
            }),
        )?;
        write_json(out, "consistency_summary.json", &report.summary)?;
        for s in &report.summary {
            println!(
                "n = {:>5}  {:<16} K = K0: {}/{}  S covers S0: {}/{}  required: {}/{}",
                s.n, s.rule, s.k_correct, s.replicates, s.covers_truth, s.replicates, s.covers_required, s.replicates
            );
        }
    }
    if args.experiment != ExperimentArg::Consistency {
        let n = args.sizes[0];
        let report = oracle_experiment(&truth, n, args.replicates, &args.criteria, &config, seed)?;
        write_csv(
            out,
            "oracle_risks.csv",
            report.oracle.risks.iter().map(|r| RiskCsvRow {
                k: r.index.k(),
                s: set_string(r.index.vars()),
                mean_hellinger_sq: r.mean,
                std_error: r.std_error,
                replicates: r.replicates,
                failures: r.failures,
            }),
        )?;
        write_csv(
            out,
            "oracle_selections.csv",
            report.selections.iter().map(|s| SelectionCsvRow {
                replicate: s.replicate + 1,
                criterion: s.rule.to_string(),
                k: s.index.as_ref().map(ModelIndex::k),
                s: s.index.as_ref().map(|m| set_string(m.vars())),
                hellinger_sq: s.hellinger_sq,
                oracle_hellinger_sq: s.oracle_hellinger_sq,
                ratio: s.ratio,
                excess: s.excess,
                error: s.error.clone(),
            }),
        )?;
        write_json(out, "oracle.json", &report)?;
        println!("oracle at n = {n}: {}", report.oracle.oracle);
        for s in &report.summary {
            println!(
                "{:<16} mean h2 = {:.5} (se {:.5})  mean ratio to oracle = {:.3}",
                s.rule, s.mean_hellinger_sq, s.std_error, s.mean_ratio
            );
        }
    }
    Ok(())
}
