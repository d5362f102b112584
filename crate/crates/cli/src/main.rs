//! `glp`: synthesize datasets, learn category affinities, propagate labels and
//! evaluate user interest profiles.
//!
//! Errors are reported on stderr as one JSON object
//! `{"error": "<kind>", "message": "..."}` with a nonzero exit code. Set
//! `GLP_THREADS` to bound the worker pool (`1` runs sequentially).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;

use glp_core::affinity::{group_distance_report_with, jaccard_affinity, similarity_for_collection};
use glp_core::dataset::{read_affinity, write_atomic, AffinityFile};
use glp_core::exec::map_slice;
use glp_core::pipeline::{learn_affinity, run_pipeline, Mode, PipelineConfig};
use glp_core::propagation::{
    closed_form_partial_sum, compute_lambda, element_wise_upper_bound, propagate_step,
};
use glp_core::{load_dataset, save_dataset, CategoryAffinity, Dataset, DatasetPaths, Execution, SynthConfig};

#[derive(Parser)]
#[command(name = "glp", version, about = "Group-constrained label propagation for user interest profiling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the category affinity G from incidence records.
    Affinity(AffinityArgs),
    /// Propagate labels and write per-image labels and per-user profiles.
    Propagate(PropagateArgs),
    /// Score user profiles against board-derived ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Mean feature distance within boards and within categories.
    Distances(DistancesArgs),
    /// Compare iterated propagation with its closed form on a dataset.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Initial,
    Lp,
    Glp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Initial => Mode::Initial,
            ModeArg::Lp => Mode::Lp,
            ModeArg::Glp => Mode::Glp,
        }
    }
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Args)]
struct AffinitySource {
    /// Precomputed affinity JSON (default: learn from incidence.csv).
    #[arg(long, value_name = "FILE")]
    affinity: Option<PathBuf>,
    /// Also count evaluation users' boards when learning the affinity.
    #[arg(long)]
    include_eval_users: bool,
}

#[derive(Args)]
struct Iteration {
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct AffinityArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    include_eval_users: bool,
    /// Output JSON (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    source: AffinitySource,
    #[command(flatten)]
    iteration: Iteration,
    #[arg(long, value_enum, default_value_t = ModeArg::Glp)]
    mode: ModeArg,
    /// Only this user.
    #[arg(long)]
    user: Option<String>,
    /// Per-image labels CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Per-user interest profiles JSON.
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    source: AffinitySource,
    #[command(flatten)]
    iteration: Iteration,
    /// One or more modes, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "glp")]
    mode: Vec<ModeArg>,
    /// Smoothing weight of the prior in the ground truth.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Leave out per-user details.
    #[arg(long)]
    summary: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Base configuration as JSON; flags below override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    training_users: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    correlation: Option<f64>,
}

#[derive(Args)]
struct DistancesArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    source: AffinitySource,
    /// Number of iterations to compare.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Largest accepted element-wise deviation.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long)]
    user: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(glp_core::Error),
    Usage(String),
    OracleMismatch(String),
}

impl From<glp_core::Error> for CliError {
    fn from(e: glp_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "UsageError",
            CliError::OracleMismatch(_) => "OracleMismatch",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) | CliError::OracleMismatch(m) => m.clone(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::OracleMismatch(_) => 3,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn report_error(e: &CliError) -> ExitCode {
    let mut body = serde_json::json!({ "error": e.kind(), "message": e.message() });
    if let CliError::Core(glp_core::Error::Parse { file, line, .. }) = e {
        body["file"] = file.as_str().into();
        body["line"] = (*line).into();
    }
    eprintln!("{body}");
    ExitCode::from(e.exit_code())
}

fn execution() -> CliResult<Execution> {
    let Ok(raw) = std::env::var("GLP_THREADS") else {
        return Ok(Execution::default());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("GLP_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
        Ok(Execution::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        log::warn!("built without parallel support; GLP_THREADS={n} ignored");
        Ok(Execution::Sequential)
    }
}

/// Writes to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => Ok(write_atomic(p, bytes)?),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            Ok(out.flush()?)
        }
    }
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(path, &bytes)
}

fn load(data: &DataArg) -> CliResult<Dataset> {
    if !data.data.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", data.data.display())));
    }
    Ok(load_dataset(&DatasetPaths::in_dir(&data.data))?)
}

fn affinity_for(ds: &Dataset, source: &AffinitySource) -> CliResult<CategoryAffinity> {
    match &source.affinity {
        Some(path) => Ok(read_affinity(path, &ds.categories)?),
        None => Ok(glp_core::pipeline::dataset_affinity(ds, source.include_eval_users)?),
    }
}

fn only_user(ds: &mut Dataset, user: Option<&str>) -> CliResult<()> {
    if let Some(id) = user {
        ds.users.retain(|u| u.user_id == id);
        if ds.users.is_empty() {
            return Err(glp_core::Error::DanglingReference(format!("unknown user {id:?}")).into());
        }
    }
    Ok(())
}

fn cmd_affinity(args: &AffinityArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let mut records = ds.incidence.clone().unwrap_or_default();
    if args.include_eval_users {
        records.extend(ds.user_incidence());
    }
    if records.is_empty() {
        return Err(glp_core::Error::MissingAffinity("no incidence records to learn from".into()).into());
    }
    let k = ds.categories.len();
    let raw = jaccard_affinity(&records, k)?;
    let g = learn_affinity(&records, k)?;
    emit_json(args.out.as_deref(), &AffinityFile::new(&ds.categories, &g, Some(raw.view())))
}

fn pipeline_config(mode: Mode, it: &Iteration, exec: Execution) -> PipelineConfig {
    PipelineConfig { mode, max_iterations: it.max_iter, tolerance: it.tol, exec, ..Default::default() }
}

fn cmd_propagate(args: &PropagateArgs, exec: Execution) -> CliResult<()> {
    let mut ds = load(&args.data)?;
    only_user(&mut ds, args.user.as_deref())?;
    let mode = Mode::from(args.mode);
    let g = if mode == Mode::Glp { Some(affinity_for(&ds, &args.source)?) } else { None };
    let out = run_pipeline(&ds, g.as_ref(), &pipeline_config(mode, &args.iteration, exec))?;

    let mut csv = String::from("user_id,image_id");
    for name in ds.categories.names() {
        csv.push(',');
        csv.push_str(&csv_field(name));
    }
    csv.push('\n');
    for u in &out.users {
        for (id, row) in u.image_ids.iter().zip(u.labels.values().rows()) {
            csv.push_str(&format!("{},{}", csv_field(&u.user_id), csv_field(id)));
            for v in row {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    if let Some(path) = &args.profiles {
        let profiles: IndexMap<&str, IndexMap<&str, f64>> = out
            .users
            .iter()
            .map(|u| {
                let p =
                    ds.categories.names().iter().map(String::as_str).zip(u.profile.probs().iter().copied());
                (u.user_id.as_str(), p.collect())
            })
            .collect();
        emit_json(Some(path), &profiles)?;
    }
    emit(args.out.as_deref(), csv.as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_evaluate(args: &EvaluateArgs, exec: Execution) -> CliResult<()> {
    let ds = load(&args.data)?;
    if !ds.has_ground_truth() {
        return Err(glp_core::Error::NoGroundTruth("dataset has no labeled boards".into()).into());
    }
    let modes: Vec<Mode> = args.mode.iter().map(|&m| m.into()).collect();
    let g = if modes.contains(&Mode::Glp) { Some(affinity_for(&ds, &args.source)?) } else { None };
    let mut reports = IndexMap::new();
    for mode in modes {
        let config = PipelineConfig { smoothing: args.alpha, ..pipeline_config(mode, &args.iteration, exec) };
        let mut report = run_pipeline(&ds, g.as_ref(), &config)?.report(&ds.categories);
        if args.summary {
            report.per_user.clear();
        }
        reports.insert(mode.name(), report);
    }
    emit_json(args.out.as_deref(), &reports)
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.users {
        cfg.users = v;
    }
    if let Some(v) = args.categories {
        cfg.categories = v;
    }
    if let Some(v) = args.training_users {
        cfg.training_users = v;
    }
    if let Some(v) = args.noise {
        cfg.prediction_noise = v;
    }
    if let Some(v) = args.correlation {
        cfg.category_correlation = v;
    }
    let ds = glp_core::synth_generate(&cfg)?;
    save_dataset(&ds, &args.out)?;
    emit_json(Some(&args.out.join("synth_config.json")), &cfg)?;
    emit_json(
        None,
        &serde_json::json!({
            "dir": args.out.display().to_string(),
            "users": ds.users.len(),
            "images": ds.features.rows(),
            "categories": ds.categories.len(),
            "seed": cfg.seed,
        }),
    )
}

#[derive(Serialize)]
struct DistanceRow<'a> {
    category: &'a str,
    within_board: Option<f64>,
    within_category: Option<f64>,
    within_board_pairs: u64,
    within_category_pairs: u64,
}

fn cmd_distances(args: &DistancesArgs, exec: Execution) -> CliResult<()> {
    let ds = load(&args.data)?;
    let rows = group_distance_report_with(exec, &ds.features, &ds.users, ds.categories.len())?;
    let measured: Vec<_> = rows.iter().filter_map(|r| Some((r.within_board?, r.within_category?))).collect();
    let tighter = measured.iter().filter(|(b, c)| b < c).count();
    let body = serde_json::json!({
        "categories": rows.iter().map(|r| DistanceRow {
            category: ds.categories.name(r.category),
            within_board: r.within_board,
            within_category: r.within_category,
            within_board_pairs: r.within_board_pairs,
            within_category_pairs: r.within_category_pairs,
        }).collect::<Vec<_>>(),
        "measured": measured.len(),
        "board_tighter": tighter,
    });
    emit_json(args.out.as_deref(), &body)
}

#[derive(Serialize)]
struct OracleRow {
    user_id: String,
    images: usize,
    max_deviation: f64,
    /// Largest `Y(steps) - bound`; nonpositive when the bound holds.
    bound_excess: f64,
    transition_norm: f64,
}

fn oracle_user(
    ds: &Dataset,
    user: &glp_core::UserCollection,
    g: &CategoryAffinity,
    steps: usize,
    exec: Execution,
) -> CliResult<OracleRow> {
    let rows = ds.user_rows(user);
    let y0 = ds.initial.select(&rows);
    let w = similarity_for_collection(exec, &ds.features.select(&rows)?)?;
    let lambda = compute_lambda(&y0)?;
    let mut y = y0.clone();
    for _ in 0..steps {
        y = propagate_step(&y, &y0, &w, g, &lambda)?;
    }
    let closed = closed_form_partial_sum(&y0, &w, g, &lambda, steps - 1)?;
    let bound = element_wise_upper_bound(&y0, &w, g, &lambda, steps)?;
    Ok(OracleRow {
        user_id: user.user_id.clone(),
        images: rows.len(),
        max_deviation: glp_core::linalg::max_abs_diff(y.values(), closed.view()),
        bound_excess: y
            .values()
            .iter()
            .zip(bound.bound.iter())
            .fold(f64::NEG_INFINITY, |m, (&a, &b)| m.max(a - b)),
        transition_norm: bound.transition_norm,
    })
}

fn cmd_oracle(args: &OracleArgs, exec: Execution) -> CliResult<()> {
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let mut ds = load(&args.data)?;
    only_user(&mut ds, args.user.as_deref())?;
    let g = affinity_for(&ds, &args.source)?;
    let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
    let rows = map_slice(exec, &ds.users, |u| oracle_user(&ds, u, &g, args.steps, inner))
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let max_deviation = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    let bound_excess = rows.iter().map(|r| r.bound_excess).fold(f64::NEG_INFINITY, f64::max);
    emit_json(
        args.out.as_deref(),
        &serde_json::json!({
            "steps": args.steps,
            "tolerance": args.tolerance,
            "max_deviation": max_deviation,
            "bound_excess": bound_excess,
            "users": rows,
        }),
    )?;
    if max_deviation > args.tolerance {
        return Err(CliError::OracleMismatch(format!(
            "iterated and closed-form results differ by {max_deviation:e} (tolerance {:e})",
            args.tolerance
        )));
    }
    if bound_excess > args.tolerance {
        return Err(CliError::OracleMismatch(format!(
            "iterate exceeds the element-wise bound by {bound_excess:e}"
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let exec = execution()?;
    match &cli.command {
        Command::Affinity(a) => cmd_affinity(a),
        Command::Propagate(a) => cmd_propagate(a, exec),
        Command::Evaluate(a) => cmd_evaluate(a, exec),
        Command::Synth(a) => cmd_synth(a),
        Command::Distances(a) => cmd_distances(a, exec),
        Command::Oracle(a) => cmd_oracle(a, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            return report_error(&CliError::Usage(message.trim().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
