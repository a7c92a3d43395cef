mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rri_core::geometry::{BifurcationGeometry, CohortName, CohortSpec, Outlet};
use rri_core::junction::{analytic_law, ClosureKind, JunctionLaw, RRICoefficients};
use rri_core::oracle::{OracleConfig, OracleLaw, OracleMode};
use rri_core::pipeline::{
    build_dataset, default_sweep_radii, evaluate_rmse, run_figure_sweep, train_models,
    write_curves_csv, CurvePoint, Dataset, DatasetConfig, FitModality, ModelSet, TrainConfig,
};
use rri_core::regressors::{CoefficientModel, Hyperparameters, ModelKind};
use rri_core::solver::{write_series_csv, BoundaryCondition, JunctionNetwork, Waveform};

use config::{parse_kinds, resolve_cohort, RunConfig};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn dependency(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "dependency",
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind, "exit_code": self.code, "message": self.message } })
    }
}

impl From<rri_core::Error> for CliError {
    fn from(e: rri_core::Error) -> Self {
        use rri_core::Error as E;
        let (code, kind) = match &e {
            E::Fingerprint { .. } => (3, "fingerprint"),
            e if e.is_numerical() => (4, "numerical"),
            E::Config(_) | E::Domain(_) | E::DimensionMismatch { .. } => (2, "config"),
            E::Io(_) | E::Json(_) => (1, "io"),
            _ => (1, "internal"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

/// An input produced by an earlier command could not be read.
fn upstream(path: &Path, what: &str, e: rri_core::Error) -> CliError {
    match CliError::from(e) {
        err if err.code == 1 || err.code == 2 => CliError::dependency(format!(
            "cannot read {what} {}: {}",
            path.display(),
            err.message
        )),
        err => err,
    }
}

#[derive(Parser)]
#[command(
    name = "rri",
    version,
    about = "Data-driven junction pressure-loss models for 0D blood flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a cohort and run the virtual experiments.
    Generate(GenerateArgs),
    /// Fit regressors on the training split of a dataset.
    Train(TrainArgs),
    /// Report train/test RMSE of trained models against the Unified0D+ baseline.
    Evaluate(EvaluateArgs),
    /// Run a bifurcation with a chosen junction closure and write its time series.
    Simulate(SimulateArgs),
    /// Write steady and transient ΔP-Q curves across outlet radii.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OracleFlags {
    #[arg(long, value_parser = parse_oracle_law)]
    oracle_mode: Option<OracleLaw>,
    /// Gaussian noise on measured pressure differences, dyn/cm².
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cohort: Option<String>,
    #[arg(long)]
    cohort_spec: Option<PathBuf>,
    /// Number of geometries.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    oracle: OracleFlags,
    /// Also record steady runs at 25% and 75% inlet flow.
    #[arg(long)]
    four_point: bool,
    /// Worker threads for geometry-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated model kinds; all six by default.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    /// One modality; both by default.
    #[arg(long, value_parser = parse_modality)]
    modality: Option<FitModality>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train/test split seed; defaults to the training seed.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Model set JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: PathBuf,
    /// Model set written by `train`.
    #[arg(long)]
    models: PathBuf,
    /// Report directory (report.json, report.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WaveformKind {
    SineSquared,
    Constant,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Geometry JSON file.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Use the nominal geometry of a builtin cohort.
    #[arg(long)]
    cohort: Option<String>,
    /// Junction closure: static, total, unified0d or rri.
    #[arg(long, value_parser = parse_closure)]
    closure: Option<ClosureKind>,
    /// Model set for the rri closure.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ModelKind>,
    #[arg(long, value_parser = parse_modality)]
    modality: Option<FitModality>,
    #[arg(long, value_enum, default_value = "sine-squared")]
    waveform: WaveformKind,
    /// Peak (or constant) inlet flow, cm³/s; defaults to the cohort's nominal flow.
    #[arg(long)]
    q_max: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    period: f64,
    #[arg(long, default_value_t = 0.001)]
    dt: f64,
    #[arg(long, default_value_t = 100.0)]
    resistance: f64,
    #[arg(long, default_value_t = 0.0)]
    distal_pressure: f64,
    /// Output CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cohort: Option<String>,
    #[arg(long)]
    cohort_spec: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Outlet-1 radii, cm; 10/50/90% of the cohort range by default.
    #[arg(long, value_delimiter = ',')]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 41)]
    points: usize,
    /// Optional model set for a `predicted` series.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ModelKind>,
    #[arg(long, value_parser = parse_modality)]
    modality: Option<FitModality>,
    /// Output directory (steady.csv, transient.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_oracle_law(s: &str) -> Result<OracleLaw, String> {
    s.parse().map_err(|e: rri_core::Error| e.to_string())
}

fn parse_modality(s: &str) -> Result<FitModality, String> {
    s.parse().map_err(|e: rri_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: rri_core::Error| e.to_string())
}

fn parse_closure(s: &str) -> Result<ClosureKind, String> {
    s.parse().map_err(|e: rri_core::Error| e.to_string())
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    common
        .config
        .as_deref()
        .map_or(Ok(RunConfig::default()), RunConfig::load)
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::config(format!("{flag} is required (flag or config file)")))
}

fn oracle_config(flags: &OracleFlags, cfg: &RunConfig) -> Result<OracleConfig, CliError> {
    let law = flags
        .oracle_mode
        .or(cfg.oracle_mode)
        .unwrap_or(OracleLaw::PureRri);
    let mode = match law {
        OracleLaw::PureRri => OracleMode::pure(),
        OracleLaw::Nonideal => OracleMode::nonideal(),
    };
    let noise = flags.noise_std.or(cfg.noise_std).unwrap_or(0.0);
    let oc = OracleConfig::default().with_mode(mode.with_noise(noise));
    oc.validate()?;
    Ok(oc)
}

/// Refuse to clobber an existing output unless `--force`.
fn check_output(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn require_input(path: &Path, hint: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::dependency(format!(
            "{} not found; {hint}",
            path.display()
        )));
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn generate(args: GenerateArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(&args.common)?;
    let cohort = resolve_cohort(
        args.cohort.as_deref().or(cfg.cohort.as_deref()),
        args.cohort_spec.as_deref().or(cfg.cohort_spec.as_deref()),
    )?;
    let n = args.n.or(cfg.n).unwrap_or(cohort.name.reference_size());
    let seed = required(args.seed.or(cfg.seed), "--seed")?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    let jobs = args.jobs.or(cfg.jobs);
    if jobs == Some(0) {
        return Err(CliError::config("--jobs must be >= 1"));
    }
    let mut dc = DatasetConfig::new(cohort, n, seed, oracle_config(&args.oracle, &cfg)?);
    dc.four_point = args.four_point;
    dc.validate()?;

    if out.exists() {
        check_output(&out, args.common.force)?;
        let is_dataset = out.join("manifest.json").is_file();
        let is_empty = out.is_dir()
            && fs::read_dir(&out)
                .map_err(|e| CliError::io(&out, e))?
                .next()
                .is_none();
        if !is_dataset && !is_empty {
            return Err(CliError::config(format!(
                "{} exists and is not a dataset directory; refusing to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    }

    let ds = build_dataset(&dc, jobs)?;
    ds.write_dir(&out)?;
    Ok(json!({
        "command": "generate",
        "out": out,
        "fingerprint": ds.fingerprint,
        "n_geometries": dc.n_geometries,
        "n_records": ds.records.len(),
        "failures": ds.failures.len(),
    }))
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    require_input(path, "run `rri generate` first")?;
    Dataset::read_dir(path).map_err(|e| upstream(path, "dataset", e))
}

fn read_models(path: &Path) -> Result<ModelSet, CliError> {
    require_input(path, "run `rri train` first")?;
    ModelSet::load(path).map_err(|e| upstream(path, "model set", e))
}

fn train(args: TrainArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(&args.common)?;
    let seed = required(args.seed.or(cfg.seed), "--seed")?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    check_output(&out, args.common.force)?;
    let kinds = if !args.kinds.is_empty() {
        parse_kinds(&args.kinds)?
    } else {
        cfg.kinds.clone().unwrap_or_else(|| ModelKind::ALL.to_vec())
    };
    let ds = read_dataset(&args.dataset)?;

    let hp = cfg
        .hyperparameters
        .clone()
        .unwrap_or_else(|| Hyperparameters::for_cohort(ds.config.cohort.name));
    let mut tc = TrainConfig::new(hp, args.split_seed.or(cfg.split_seed).unwrap_or(seed), seed);
    tc.kinds = kinds;
    if let Some(m) = args.modality.or(cfg.modality) {
        tc.modalities = vec![m];
    }
    let set = train_models(&ds, &tc)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    set.save(&out)?;
    Ok(json!({
        "command": "train",
        "out": out,
        "dataset_fingerprint": set.dataset_fingerprint,
        "models": set.entries.iter().map(|e| format!("{}/{}", e.kind, e.modality)).collect::<Vec<_>>(),
    }))
}

fn evaluate(args: EvaluateArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(&args.common)?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    check_output(&out.join("report.json"), args.common.force)?;
    let models = read_models(&args.models)?;
    let ds = read_dataset(&args.dataset)?;
    let report = evaluate_rmse(&ds, &models)?;

    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let json_path = out.join("report.json");
    let mut w = create_file(&json_path)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::io(&json_path, e))?;
    w.flush().map_err(|e| CliError::io(&json_path, e))?;
    let csv_path = out.join("report.csv");
    let mut w = create_file(&csv_path)?;
    report
        .write_csv(&mut w)
        .map_err(|e| CliError::io(&csv_path, e))?;
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    Ok(json!({
        "command": "evaluate",
        "out": out,
        "dataset_fingerprint": report.dataset_fingerprint,
        "models": report.models.len(),
    }))
}

fn pick_model<'a>(
    set: &'a ModelSet,
    kind: Option<ModelKind>,
    modality: Option<FitModality>,
) -> Result<&'a CoefficientModel, CliError> {
    let kind = required(kind, "--kind")?;
    let modality = modality.unwrap_or(FitModality::Standard);
    set.get(kind, modality).ok_or_else(|| {
        CliError::dependency(format!(
            "model set has no {kind}/{modality} model; retrain with it included"
        ))
    })
}

fn simulate(args: SimulateArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(&args.common)?;
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    check_output(&out, args.common.force)?;

    let nominal = args
        .cohort
        .as_deref()
        .or(cfg.cohort.as_deref())
        .map(|n| {
            n.parse::<CohortName>()
                .map(|c| CohortSpec::builtin(c).nominal())
        })
        .transpose()?;
    let geom: BifurcationGeometry = match (&args.geometry, &nominal) {
        (Some(path), _) => {
            require_input(path, "pass an existing geometry JSON file")?;
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("geometry file {}: {e}", path.display())))?
        }
        (None, Some(s)) => s.geometry,
        (None, None) => return Err(CliError::config("pass --geometry FILE or --cohort NAME")),
    };
    geom.validate()?;
    let q_max = match (args.q_max, &nominal) {
        (Some(q), _) => q,
        (None, Some(s)) => s.inlet_flow(),
        (None, None) => return Err(CliError::config("--q-max is required with --geometry")),
    };
    if !(q_max >= 0.0 && q_max.is_finite()) {
        return Err(CliError::config(format!(
            "--q-max must be >= 0, got {q_max}"
        )));
    }

    let closure = args.closure.unwrap_or(if args.models.is_some() {
        ClosureKind::Rri
    } else {
        ClosureKind::Static
    });
    let fluid = OracleConfig::default().fluid;
    let laws: [Box<dyn JunctionLaw>; 2] = if closure == ClosureKind::Rri {
        let path = args
            .models
            .as_deref()
            .ok_or_else(|| CliError::config("the rri closure needs --models"))?;
        let set = read_models(path)?;
        let model = pick_model(&set, args.kind, args.modality.or(cfg.modality))?;
        let coeff = |o: Outlet| -> Result<Box<dyn JunctionLaw>, CliError> {
            let c: RRICoefficients = model.predict(&geom.feature_vector(o))?;
            Ok(Box::new(c))
        };
        [coeff(Outlet::First)?, coeff(Outlet::Second)?]
    } else {
        [
            analytic_law(closure, &geom, Outlet::First, fluid)?,
            analytic_law(closure, &geom, Outlet::Second, fluid)?,
        ]
    };

    let bc = BoundaryCondition {
        resistance: args.resistance,
        distal_pressure: args.distal_pressure,
    };
    let net = JunctionNetwork::new(
        [laws[0].as_ref(), laws[1].as_ref()],
        [bc, bc],
        [
            geom.outlet_area(Outlet::First),
            geom.outlet_area(Outlet::Second),
        ],
    )?;
    let waveform = match args.waveform {
        WaveformKind::SineSquared => Waveform::SineSquared {
            q_max,
            period: args.period,
        },
        WaveformKind::Constant => Waveform::Constant { flow: q_max },
    };
    let series = net.solve_transient(&waveform, args.period, args.dt)?;
    let mut w = create_file(&out)?;
    write_series_csv(&mut w, &series).map_err(|e| CliError::io(&out, e))?;
    w.flush().map_err(|e| CliError::io(&out, e))?;
    Ok(json!({
        "command": "simulate",
        "out": out,
        "closure": closure.to_string(),
        "steps": series.len(),
    }))
}

fn sweep(args: SweepArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(&args.common)?;
    let cohort = resolve_cohort(
        args.cohort.as_deref().or(cfg.cohort.as_deref()),
        args.cohort_spec.as_deref().or(cfg.cohort_spec.as_deref()),
    )?;
    let oc = oracle_config(&args.oracle, &cfg)?;
    let seed = match args.seed.or(cfg.seed) {
        Some(s) => s,
        None if oc.mode.noise_std == 0.0 => 0,
        None => return Err(CliError::config("--seed is required when --noise-std > 0")),
    };
    let out = required(args.out.or(cfg.out.clone()), "--out")?;
    check_output(&out.join("steady.csv"), args.common.force)?;

    let radii = if args.radii.is_empty() {
        default_sweep_radii(&cohort).to_vec()
    } else {
        args.radii
    };
    let set = args.models.as_deref().map(read_models).transpose()?;
    let model = set
        .as_ref()
        .map(|s| pick_model(s, args.kind, args.modality.or(cfg.modality)))
        .transpose()?;
    let points = run_figure_sweep(&cohort, &oc, &radii, model, args.points, seed)?;

    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    for curve in ["steady", "transient"] {
        let path = out.join(format!("{curve}.csv"));
        let subset: Vec<CurvePoint> = points
            .iter()
            .filter(|p| p.curve == curve)
            .cloned()
            .collect();
        let mut w = create_file(&path)?;
        write_curves_csv(&mut w, &subset).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(json!({
        "command": "sweep",
        "out": out,
        "cohort": cohort.name.to_string(),
        "radii": radii,
        "points": points.len(),
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::config(first.trim_start_matches("error: "));
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code)
        }
    }
}
