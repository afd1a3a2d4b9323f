//! Command-line front end: `budget`, `perturb` and `experiment`.
//!
//! Exit codes: 0 success, 2 invalid parameters or inputs, 3 mechanism
//! failure, 4 invalid experiment configuration.
//!
//! Result files are deterministic functions of the command line and inputs.
//! Wall-clock time is written to a separate `timing.json` so that it does
//! not break byte-for-byte reproducibility of the other outputs.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::budget::{
    budget_terms, equimodal_budget, general_bound, prefer_psd_theorem, precision_budget, psd_bound,
    PrecisionMode, PrivacyParams, QuerySpec, Structure, Theorem,
};
use crate::error::{MvgError, Result};
use crate::evalharness::{
    run_experiment, synthetic_dataset, Dataset, DirectionSource, ExperimentConfig,
    MechanismChoice, PrivacySetting, SyntheticKind, Task, TrialReport,
};
use crate::matcore::Matrix;
use crate::mechanism::{
    add_gaussian_noise, gaussian_scale, max_pnr_allocation, private_directions, MvgMechanism,
    NoiseDirections, PrecisionAllocation,
};
use crate::sampler::RandomSeed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARAMETER: i32 = 2;
pub const EXIT_MECHANISM: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
const EXIT_OUTPUT: i32 = 1;

const DEFAULT_TRIALS: usize = 100;
const LABEL_SYNTHETIC: u64 = 3;

#[derive(Parser, Debug)]
#[command(name = "mvgdp", version, about = "Matrix-variate Gaussian mechanism for differential privacy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the budget terms, bounds and precision budget as JSON.
    Budget(BudgetArgs),
    /// Perturb a CSV matrix and write the result with a manifest.
    Perturb(PerturbArgs),
    /// Run a repeated-trial experiment and write a results table.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureArg {
    General,
    Psd,
}

impl From<StructureArg> for Structure {
    fn from(s: StructureArg) -> Self {
        match s {
            StructureArg::General => Structure::General,
            StructureArg::Psd => Structure::SymmetricPsd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremArg {
    General,
    Psd,
}

impl From<TheoremArg> for Theorem {
    fn from(t: TheoremArg) -> Self {
        match t {
            TheoremArg::General => Theorem::General,
            TheoremArg::Psd => Theorem::Psd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Unimodal,
    EquiModal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismArg {
    MvgUnimodal,
    MvgEquimodal,
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Regression,
    FirstPc,
    CovarianceEstimation,
}

#[derive(Args, Debug, Serialize)]
pub struct BudgetArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub s2: f64,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "general")]
    pub structure: StructureArg,
    /// Defaults to unimodal for general queries and equi-modal for PSD ones.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Args, Debug, Serialize)]
pub struct PerturbArgs {
    /// Query output as a headerless CSV matrix.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mechanism: MechanismArg,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// L1-sensitivity for the Laplace mechanism.
    #[arg(long)]
    pub s1: Option<f64>,
    #[arg(long, value_enum, default_value = "general")]
    pub structure: StructureArg,
    #[arg(long, value_enum, default_value = "general")]
    pub theorem: TheoremArg,
    /// `identity`, `file:PATH` (CSV matrix with orthonormal columns) or
    /// `private-svd`.
    #[arg(long, default_value = "identity")]
    pub directions: String,
    /// CSV list of precision fractions, one per direction.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Percentage of the budget for the `--flagged` directions.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub flagged: Vec<usize>,
    /// Bound on `|x_ij|`, needed by `--directions private-svd`.
    #[arg(long)]
    pub value_bound: Option<f64>,
    /// Budget share spent on private directions.
    #[arg(long, default_value_t = 0.2)]
    pub frac: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ExperimentArgs {
    /// TOML experiment description.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (header of feature names, one row per sample).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Declared value range `LO,HI` of a dataset file.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    pub value_range: Option<Vec<f64>>,
    /// Use a synthetic dataset; without a value the kind follows the task.
    #[arg(long, num_args = 0..=1, default_missing_value = "auto")]
    pub synthetic: Option<String>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One row of an experiment: a mechanism with optional direction override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismEntry {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub mechanism: MechanismChoice,
    #[serde(default)]
    pub directions: Option<DirectionSource>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticKind>,
    #[serde(default)]
    pub value_range: Option<(f64, f64)>,
}

/// Contents of an experiment config file. Command-line flags take
/// precedence over the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub privacy: Option<PrivacySetting>,
    #[serde(default)]
    pub directions: Option<DirectionSource>,
    #[serde(default)]
    pub mechanisms: Vec<MechanismEntry>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    err: MvgError,
}

trait ExitCode<T> {
    fn code(self, code: i32) -> std::result::Result<T, Failure>;
}

impl<T> ExitCode<T> for Result<T> {
    fn code(self, code: i32) -> std::result::Result<T, Failure> {
        self.map_err(|err| Failure { code, err })
    }
}

/// Exit code of an error raised while a mechanism or experiment runs.
fn runtime_code(err: &MvgError) -> i32 {
    match err {
        MvgError::Parameter(_) | MvgError::Parse(_) | MvgError::Io(_) => EXIT_PARAMETER,
        MvgError::Config(_) => EXIT_CONFIG,
        _ => EXIT_MECHANISM,
    }
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|err| Failure {
        code: runtime_code(&err),
        err,
    })
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARAMETER } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Budget(a) => cmd_budget(&a),
        Command::Perturb(a) => cmd_perturb(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.err);
            f.code
        }
    }
}

fn manifest(command: &str, config: serde_json::Value, seed: Option<u64>) -> serde_json::Value {
    json!({
        "tool": "mvgdp",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
    })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn write_json(path: &Path, value: &serde_json::Value) -> std::result::Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(MvgError::from).code(EXIT_OUTPUT)
}

fn write_timing(dir: &Path, start: Instant) -> std::result::Result<(), Failure> {
    write_json(
        &dir.join("timing.json"),
        &json!({ "wall_clock_seconds": start.elapsed().as_secs_f64() }),
    )
}

pub fn cmd_budget_report(a: &BudgetArgs) -> Result<serde_json::Value> {
    let p = PrivacyParams::new(a.epsilon, a.delta)?;
    let q = QuerySpec::new(a.m, a.n, a.s2, a.gamma, a.structure.into())?;
    let mode = a.mode.unwrap_or(match a.structure {
        StructureArg::General => ModeArg::Unimodal,
        StructureArg::Psd => ModeArg::EquiModal,
    });
    let terms = budget_terms(&q, &p);
    let budget = match mode {
        ModeArg::Unimodal => precision_budget(&q, &p, PrecisionMode::Unimodal)?,
        ModeArg::EquiModal => precision_budget(&q, &p, PrecisionMode::EquiModal)?,
    };
    let (psd, preference) = match q.structure() {
        Structure::SymmetricPsd => (Some(psd_bound(&terms, &p)?), Some(prefer_psd_theorem(&q)?)),
        Structure::General => (None, None),
    };
    let equimodal_general = if q.m() == q.n() {
        Some(equimodal_budget(&q, &p, Theorem::General)?)
    } else {
        None
    };
    Ok(json!({
        "manifest": manifest("budget", to_json(a), None),
        "terms": terms,
        "general_bound": general_bound(&terms, &p),
        "psd_bound": psd,
        "mode": mode,
        "precision_budget": budget,
        "equimodal_general_budget": equimodal_general,
        "psd_preference": preference,
    }))
}

fn cmd_budget(a: &BudgetArgs) -> std::result::Result<(), Failure> {
    let report = cmd_budget_report(a).code(EXIT_PARAMETER)?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(MvgError::from).code(EXIT_OUTPUT)
}

/// Reads a headerless CSV matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| MvgError::Parse(format!("{}: {f:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MvgError::Parse(format!("{}: empty matrix", path.display())));
    }
    Matrix::from_rows(&rows)
}

/// Writes a headerless CSV matrix using the shortest round-trip
/// representation of each entry.
pub fn write_matrix_csv<W: Write>(writer: W, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.to_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_theta(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix_csv(path)?;
    Ok(m.to_rows().concat())
}

enum DirectionsArg {
    Identity,
    File(PathBuf),
    PrivateSvd,
}

fn parse_directions(s: &str) -> Result<DirectionsArg> {
    match s {
        "identity" => Ok(DirectionsArg::Identity),
        "private-svd" => Ok(DirectionsArg::PrivateSvd),
        _ => match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(DirectionsArg::File(PathBuf::from(p))),
            _ => Err(MvgError::param(format!(
                "--directions must be identity, file:PATH or private-svd, got {s:?}"
            ))),
        },
    }
}

fn cmd_perturb(a: &PerturbArgs) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let f_x = read_matrix_csv(&a.input).code(EXIT_PARAMETER)?;
    let seed = RandomSeed::new(a.seed, 0);
    let (m, n) = f_x.shape();
    let (value, details) = match a.mechanism {
        MechanismArg::Gaussian => {
            let s2 = a.s2.ok_or_else(|| MvgError::param("--s2 is required")).code(EXIT_PARAMETER)?;
            let delta = a.delta.ok_or_else(|| MvgError::param("--delta is required")).code(EXIT_PARAMETER)?;
            let p = PrivacyParams::new(a.epsilon, delta).code(EXIT_PARAMETER)?;
            if !(s2 >= 0.0 && s2.is_finite()) {
                return Err(MvgError::param("--s2 must be non-negative")).code(EXIT_PARAMETER);
            }
            let scale = gaussian_scale(s2, &p);
            let out = runtime(add_gaussian_noise(&f_x, scale, &mut seed.rng()))?;
            (out, json!({ "noise_scale": scale }))
        }
        MechanismArg::Laplace => {
            let s1 = a.s1.ok_or_else(|| MvgError::param("--s1 is required")).code(EXIT_PARAMETER)?;
            let out = crate::mechanism::baseline_laplace(&f_x, s1, a.epsilon, seed).code(EXIT_PARAMETER)?;
            (out, json!({ "noise_scale": s1 / a.epsilon }))
        }
        MechanismArg::MvgUnimodal | MechanismArg::MvgEquimodal => perturb_mvg(a, &f_x, m, n, seed)?,
    };
    std::fs::create_dir_all(&a.out).map_err(MvgError::from).code(EXIT_OUTPUT)?;
    let file = std::fs::File::create(a.out.join("output.csv")).map_err(MvgError::from).code(EXIT_OUTPUT)?;
    write_matrix_csv(std::io::BufWriter::new(file), &value).code(EXIT_OUTPUT)?;
    let mut doc = manifest("perturb", to_json(a), Some(a.seed));
    doc["outputs"] = json!({ "matrix": "output.csv", "shape": [m, n], "mechanism": details });
    write_json(&a.out.join("manifest.json"), &doc)?;
    write_timing(&a.out, start)
}

fn perturb_mvg(
    a: &PerturbArgs,
    f_x: &Matrix,
    m: usize,
    n: usize,
    seed: RandomSeed,
) -> std::result::Result<(Matrix, serde_json::Value), Failure> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| MvgError::param(format!("--{flag} is required for MVG mechanisms")))
            .code(EXIT_PARAMETER)
    };
    let (s2, gamma, delta) = (need(a.s2, "s2")?, need(a.gamma, "gamma")?, need(a.delta, "delta")?);
    let p = PrivacyParams::new(a.epsilon, delta).code(EXIT_PARAMETER)?;
    let q = QuerySpec::new(m, n, s2, gamma, a.structure.into()).code(EXIT_PARAMETER)?;
    let directions = parse_directions(&a.directions).code(EXIT_PARAMETER)?;
    let explicit_theta = match &a.theta {
        Some(path) => Some(read_theta(path).code(EXIT_PARAMETER)?),
        None => None,
    };
    let tau = match a.tau {
        Some(t) if !(t > 0.0 && t < 100.0) => {
            return Err(MvgError::param("--tau is a percentage in (0, 100)")).code(EXIT_PARAMETER)
        }
        t => t.map(|t| t / 100.0),
    };
    let theorem: Theorem = a.theorem.into();

    let (dirs, p_mech, private_lambda) = match directions {
        DirectionsArg::Identity => (NoiseDirections::identity(m), p, None),
        DirectionsArg::File(path) => {
            let w = read_matrix_csv(&path).code(EXIT_PARAMETER)?;
            (NoiseDirections::new(w).code(EXIT_PARAMETER)?, p, None)
        }
        DirectionsArg::PrivateSvd => {
            let c = a
                .value_bound
                .ok_or_else(|| MvgError::param("--value-bound is required for private-svd"))
                .code(EXIT_PARAMETER)?;
            let pd = private_directions(f_x, c, a.frac, &p, seed.derive(2)).code(EXIT_PARAMETER)?;
            let lambda: Vec<f64> = pd.eigenvalues.iter().map(|l| l * n as f64).collect();
            (pd.dirs, pd.remaining, Some(lambda))
        }
    };
    let mech = runtime((|| {
        let alloc = match (explicit_theta, tau, private_lambda) {
            (Some(theta), _, _) => PrecisionAllocation::new(theta)?,
            (None, Some(t), _) => PrecisionAllocation::binary(m, &a.flagged, t)?,
            (None, None, Some(lambda)) if lambda[0] > 0.0 => {
                let floor = lambda[0] * 1e-12;
                let lambda: Vec<f64> = lambda.iter().map(|l| l.max(floor)).collect();
                let budget = match a.mechanism {
                    MechanismArg::MvgUnimodal => precision_budget(&q, &p_mech, PrecisionMode::Unimodal)?,
                    _ => equimodal_budget(&q, &p_mech, theorem)?,
                };
                max_pnr_allocation(&lambda, budget)?
            }
            _ => PrecisionAllocation::equal(m)?,
        };
        match a.mechanism {
            MechanismArg::MvgUnimodal => MvgMechanism::unimodal(&q, &p_mech, &dirs, &alloc),
            _ => MvgMechanism::equimodal(&q, &p_mech, &dirs, &alloc, theorem),
        }
    })())?;
    let out = runtime(mech.apply(f_x, seed))?;
    let details = json!({
        "condition_report": out.condition_report,
        "budget": out.budget,
        "budget_spent": out.budget_spent,
        "sampler": out.sampler,
        "epsilon": p_mech.epsilon(),
        "delta": p_mech.delta(),
    });
    Ok((out.value, details))
}

/// Experiment description after merging the config file, flags and
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedExperiment {
    pub task: Task,
    pub trials: usize,
    pub privacy: PrivacySetting,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub rows: Vec<ResolvedRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedRow {
    pub label: String,
    pub mechanism: MechanismChoice,
    pub directions: DirectionSource,
}

fn parse_synthetic(s: &str, task: Option<&Task>) -> Result<SyntheticKind> {
    match s {
        "auto" => Ok(match task {
            Some(Task::Regression { .. }) => SyntheticKind::Liver,
            Some(Task::CovarianceEstimation) => SyntheticKind::Ctg,
            _ => SyntheticKind::Movement,
        }),
        "liver" => Ok(SyntheticKind::Liver),
        "movement" => Ok(SyntheticKind::Movement),
        "ctg" => Ok(SyntheticKind::Ctg),
        other => Err(MvgError::Config(format!("unknown synthetic dataset {other:?}"))),
    }
}

fn default_rows(task: &Task, informative: Option<Vec<usize>>) -> Vec<MechanismEntry> {
    let basis = informative.map(|indices| DirectionSource::StandardBasis { indices, tau: None });
    let entry = |mechanism, directions: Option<DirectionSource>| MechanismEntry {
        label: None,
        mechanism,
        directions,
    };
    let mut rows = match task {
        Task::FirstPc => vec![
            entry(MechanismChoice::MvgEquimodal { theorem: Theorem::General }, basis.clone()),
            entry(MechanismChoice::MvgEquimodal { theorem: Theorem::Psd }, basis.clone()),
        ],
        _ => vec![entry(MechanismChoice::MvgUnimodal, basis.clone())],
    };
    if matches!(task, Task::Regression { .. }) {
        rows.push(MechanismEntry {
            label: Some("mvg-unimodal-private-svd".into()),
            mechanism: MechanismChoice::MvgUnimodal,
            directions: Some(DirectionSource::PrivateSvd {
                frac: crate::evalharness::DEFAULT_DIRECTION_FRAC,
            }),
        });
    }
    rows.push(entry(MechanismChoice::Gaussian, None));
    rows.push(entry(MechanismChoice::Laplace { s1: None }, None));
    if matches!(task, Task::Regression { .. }) {
        rows.push(entry(MechanismChoice::NonPrivate, None));
    }
    rows
}

/// Merges the config file with command-line flags.
pub fn resolve_experiment(a: &ExperimentArgs, file: ExperimentFile) -> Result<ResolvedExperiment> {
    let mut dataset = file.dataset.clone().unwrap_or_default();
    let task = match (a.task, file.task.clone()) {
        (None, Some(t)) => t,
        (Some(TaskArg::FirstPc), _) => Task::FirstPc,
        (Some(TaskArg::CovarianceEstimation), _) => Task::CovarianceEstimation,
        (Some(TaskArg::Regression), Some(t @ Task::Regression { .. })) => t,
        (Some(TaskArg::Regression), _) => Task::Regression {
            target: SyntheticKind::Liver.target().expect("liver has a target").into(),
            holdout: crate::evalharness::DEFAULT_HOLDOUT,
        },
        (None, None) => return Err(MvgError::Config("no task given (--task or config `task`)".into())),
    };
    if let Some(s) = &a.synthetic {
        dataset.synthetic = Some(parse_synthetic(s, Some(&task))?);
        dataset.path = None;
    }
    if let Some(path) = &a.dataset {
        dataset.path = Some(path.clone());
        dataset.synthetic = None;
    }
    if let Some(r) = &a.value_range {
        if r.len() != 2 {
            return Err(MvgError::Config("--value-range takes LO,HI".into()));
        }
        dataset.value_range = Some((r[0], r[1]));
    }
    match (&dataset.path, &dataset.synthetic, &dataset.value_range) {
        (None, None, _) => {
            return Err(MvgError::Config("no dataset given (--dataset PATH or --synthetic)".into()))
        }
        (Some(_), _, None) => {
            return Err(MvgError::Config("a dataset file needs a declared value range".into()))
        }
        _ => {}
    }
    let privacy = PrivacySetting {
        epsilon: a
            .epsilon
            .or(file.privacy.map(|p| p.epsilon))
            .unwrap_or(1.0),
        delta: a.delta.or(file.privacy.and_then(|p| p.delta)),
    };
    let trials = a.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS);
    let informative = dataset.synthetic.map(|k| k.informative());
    let entries = if file.mechanisms.is_empty() {
        default_rows(&task, informative.clone())
    } else {
        file.mechanisms.clone()
    };
    let fallback = file
        .directions
        .clone()
        .or(informative.map(|indices| DirectionSource::StandardBasis { indices, tau: None }))
        .unwrap_or(DirectionSource::Iid);
    let rows = entries
        .into_iter()
        .map(|e| {
            let directions = e.directions.clone().unwrap_or_else(|| fallback.clone());
            let label = e.label.clone().unwrap_or_else(|| e.mechanism.label());
            ResolvedRow {
                label,
                mechanism: e.mechanism,
                directions,
            }
        })
        .collect();
    Ok(ResolvedExperiment {
        task,
        trials,
        privacy,
        seed: a.seed,
        dataset,
        rows,
    })
}

fn load_dataset(src: &DatasetSource, seed: u64) -> Result<Dataset> {
    match (&src.path, src.synthetic) {
        (Some(path), _) => Dataset::from_csv_path(path, src.value_range.expect("checked in resolve")),
        (None, Some(kind)) => Ok(synthetic_dataset(kind, RandomSeed::new(seed, 0).derive(LABEL_SYNTHETIC).seed)),
        (None, None) => Err(MvgError::Config("no dataset".into())),
    }
}

/// Runs every row of a resolved experiment; rows share the seed and are
/// therefore paired trial by trial.
pub fn run_resolved(res: &ResolvedExperiment, data: &Dataset) -> Result<Vec<(String, TrialReport)>> {
    let configs: Vec<(String, ExperimentConfig)> = res
        .rows
        .iter()
        .map(|row| {
            (
                row.label.clone(),
                ExperimentConfig {
                    task: res.task.clone(),
                    mechanism: row.mechanism,
                    privacy: res.privacy,
                    trials: res.trials,
                    seed: RandomSeed::new(res.seed, 0),
                    directions: row.directions.clone(),
                },
            )
        })
        .collect();
    configs
        .into_iter()
        .map(|(label, cfg)| Ok((label, run_experiment(&cfg, data)?)))
        .collect()
}

fn cmd_experiment(a: &ExperimentArgs) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let file = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(MvgError::from).code(EXIT_CONFIG)?;
            toml::from_str::<ExperimentFile>(&text)
                .map_err(|e| MvgError::Config(format!("{}: {e}", path.display())))
                .code(EXIT_CONFIG)?
        }
        None => ExperimentFile::default(),
    };
    let res = resolve_experiment(a, file).code(EXIT_CONFIG)?;
    let data = load_dataset(&res.dataset, res.seed).code(EXIT_PARAMETER)?;
    log::info!(
        "running {} rows x {} trials on a {}x{} dataset",
        res.rows.len(),
        res.trials,
        data.m(),
        data.n()
    );
    let reports = runtime(run_resolved(&res, &data))?;

    std::fs::create_dir_all(&a.out).map_err(MvgError::from).code(EXIT_OUTPUT)?;
    let rows: Vec<serde_json::Value> = reports
        .iter()
        .map(|(label, r)| {
            let mut v = to_json(r);
            v["label"] = json!(label);
            v
        })
        .collect();
    let doc = json!({
        "manifest": manifest("experiment", to_json(&res), Some(res.seed)),
        "results": rows,
    });
    write_json(&a.out.join("results.json"), &doc)?;

    let file = std::fs::File::create(a.out.join("results.csv")).map_err(MvgError::from).code(EXIT_OUTPUT)?;
    write_results_csv(std::io::BufWriter::new(file), &reports).code(EXIT_OUTPUT)?;
    write_timing(&a.out, start)
}

pub fn write_results_csv<W: Write>(writer: W, reports: &[(String, TrialReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "mechanism", "metric", "mean", "ci_half_width", "trials", "epsilon", "delta", "tau"])?;
    for (label, r) in reports {
        w.write_record([
            label.clone(),
            r.mechanism.clone(),
            r.metric.clone(),
            r.mean.to_string(),
            r.ci_half_width.to_string(),
            r.values.len().to_string(),
            r.epsilon.to_string(),
            r.delta.to_string(),
            r.tau.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
