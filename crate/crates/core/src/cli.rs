//! Command-line front end. Every command writes `config.json` next to its
//! results with the fully resolved parameters it ran with.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_model, load_trialset, sensor_groups, write_json, LinearModel, Penalty, RegularizerSpec, SensorLayout,
    Standardizer, TaskCollection, TrialSet,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, selection_frequency, wilcoxon_signed_rank};
use crate::mtl::{fit_independent, fit_mtl, fit_pooled, mtl_objective, MtlSpec};
use crate::protocol::{
    cross_validate, evaluate_tasks, pair_by_seed, record, simulate_subjects, subsample, summarize, EvalRow, Method,
    MethodSummary, MtlGrid, MtlMethod, MtlRun, RunRecord,
};
use crate::selection::{default_lambda_s, default_lambdas, default_qs, GridPoint, GridSpec};
use crate::solver::{fit, objective, SolveSettings, StepMode};
use crate::synthetic::{generate, GroundTruth, SimConfig};

#[derive(Parser, Debug)]
#[command(name = "groupsvm", version, about = "Sensor-selecting linear classifiers for ERP trials")]
pub struct Cli {
    /// Worker threads for grid points and repeats.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a simulated train/test split with known relevant sensors.
    Simulate(SimulateArgs),
    /// Fit one regularizer at a fixed lambda.
    Fit(FitArgs),
    /// Cross-validate one or more methods, optionally over repeated runs.
    Cv(CvArgs),
    /// Multi-subject fits: joint, per-subject or pooled.
    Mtl(MtlArgs),
    /// Score saved models on a test set.
    Eval(EvalArgs),
    /// Wilcoxon signed-rank test between two methods' per-seed AUCs.
    Compare(CompareArgs),
    /// Mean/std table from evaluation CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimArgs {
    /// JSON simulation config; explicit flags override it.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub relevant: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub n_total: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub positive_rate: Option<f64>,
}

impl SimArgs {
    fn resolve(&self, seed: u64) -> Result<SimConfig> {
        let mut cfg = match &self.sim_config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
            }
            None => SimConfig::default(),
        };
        cfg.seed = seed;
        if let Some(v) = self.channels {
            cfg.p = v;
        }
        if let Some(v) = self.relevant {
            cfg.relevant = v;
        }
        if let Some(v) = self.samples {
            cfg.r = v;
        }
        if let Some(v) = self.n_total {
            cfg.n_total = v;
        }
        if let Some(v) = self.n_train {
            cfg.n_train = v;
        }
        if let Some(v) = self.noise_std {
            cfg.noise_std = v;
        }
        if let Some(v) = self.positive_rate {
            cfg.positive_rate = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Backtracking line search instead of the fixed 1/L step.
    #[arg(long)]
    pub backtracking: bool,
    /// Momentum on the forward step.
    #[arg(long)]
    pub accelerated: bool,
}

impl SolverArgs {
    fn settings(&self) -> Result<SolveSettings> {
        let s = SolveSettings {
            max_iterations: self.max_iter,
            rel_objective_tol: self.tol,
            step_mode: if self.backtracking { StepMode::Backtracking } else { StepMode::Fixed },
            accelerated: self.accelerated,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArgs {
    /// Training trials CSV.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    /// Test trials CSV; without it no evaluation row is written.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Ground-truth JSON for the F-measure.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Centre and scale features with training-set statistics.
    #[arg(long)]
    pub standardize: bool,
}

struct Loaded {
    train: TrialSet,
    test: Option<TrialSet>,
    truth: Option<GroundTruth>,
}

impl DataArgs {
    fn load(&self) -> Result<Loaded> {
        let train = load_trialset(&self.train, &self.layout)?;
        let test = self.test.as_ref().map(|t| load_trialset(t, &self.layout)).transpose()?;
        let truth = self.truth.as_ref().map(GroundTruth::load).transpose()?;
        let (train, test) = standardize(self.standardize, train, test)?;
        Ok(Loaded { train, test, truth })
    }
}

fn standardize(on: bool, train: TrialSet, test: Option<TrialSet>) -> Result<(TrialSet, Option<TrialSet>)> {
    if !on {
        return Ok((train, test));
    }
    let st = Standardizer::fit(&train);
    let test = test.map(|t| st.apply(&t)).transpose()?;
    Ok((st.apply(&train)?, test))
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// l2, l1, gl2, glq or adaptive.
    #[arg(long)]
    pub reg: Method,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Key written to the evaluation row.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn penalty_for(method: Method, q: f64) -> Penalty {
    match method {
        Method::GsvmP => Penalty::GroupLq { q },
        Method::GsvmA => Penalty::AdaptiveGroupLq { q },
        m => m.family(),
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CvArgs {
    /// Training trials CSV. Without it every repeat simulates fresh data.
    #[arg(long, requires = "layout")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub standardize: bool,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
    pub method: Vec<Method>,
    /// Lambda grid, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = default_lambdas())]
    pub grid: Vec<f64>,
    /// q grid for gsvm-p.
    #[arg(long, value_delimiter = ',', default_values_t = default_qs())]
    pub qs: Vec<f64>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// First seed; repeat k uses `seed + k` for its splits (and its data when simulating).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MtlArgs {
    /// Per-subject training CSVs, comma separated. Without them subjects are simulated.
    #[arg(long, value_delimiter = ',', requires = "layout")]
    pub tasks: Vec<PathBuf>,
    /// Per-subject test CSVs in the same order.
    #[arg(long, value_delimiter = ',')]
    pub test: Vec<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Simulated subjects when no task files are given.
    #[arg(long, default_value_t = 3)]
    pub subjects: usize,
    #[arg(long)]
    pub method: MtlMethod,
    /// Fixed group strength; cross-validated over the default grid when absent.
    #[arg(long)]
    pub lambda_r: Option<f64>,
    /// Fixed similarity strength (mgsvm2s only).
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Keep only the first N training trials of every subject.
    #[arg(long)]
    pub n_per_task: Option<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Model JSON files, comma separated; row k gets seed k.
    #[arg(long, value_delimiter = ',', required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Rows of `a` to use when it holds several methods.
    #[arg(long)]
    pub method_a: Option<String>,
    #[arg(long)]
    pub method_b: Option<String>,
    /// Output JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Evaluation CSVs, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eval: Vec<PathBuf>,
    #[arg(long, default_value = "svm")]
    pub baseline: String,
    /// Also write the summaries as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Mtl(a) => cmd_mtl(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Report(a) => cmd_report(&a),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    args: &'a A,
    resolved: R,
}

fn write_config<A: Serialize, R: Serialize>(dir: &Path, command: &str, args: &A, resolved: R) -> Result<()> {
    write_json(
        &dir.join("config.json"),
        &Resolved {
            command,
            args,
            resolved,
        },
    )
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an evaluation CSV (`method,seed,auc,selection_rate,f_measure`).
pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Serialize)]
struct GridRow {
    lambda: f64,
    q: Option<f64>,
    lambda_s: Option<f64>,
    fold: usize,
    auc: f64,
}

fn grid_rows(points: &[GridPoint]) -> Vec<GridRow> {
    points
        .iter()
        .flat_map(|p| {
            p.fold_auc.iter().enumerate().map(|(fold, &auc)| GridRow {
                lambda: p.lambda,
                q: p.q,
                lambda_s: p.lambda_s,
                fold,
                auc,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FrequencyRow {
    sensor: usize,
    count: usize,
}

fn write_frequency(path: &Path, models: &[LinearModel], layout: &SensorLayout) -> Result<()> {
    let rows: Vec<FrequencyRow> = selection_frequency(models, layout)?
        .into_iter()
        .enumerate()
        .map(|(sensor, count)| FrequencyRow { sensor, count })
        .collect();
    write_rows(path, &rows)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.sim.resolve(a.seed)?;
    let sim = generate(&cfg)?;
    create_dir(&a.out)?;
    sim.train.write_csv(a.out.join("train.csv"))?;
    sim.test.write_csv(a.out.join("test.csv"))?;
    sim.train.layout().save(a.out.join("layout.json"))?;
    sim.truth.save(a.out.join("truth.json"))?;
    write_config(&a.out, "simulate", a, &cfg)?;
    info!("wrote {} train and {} test trials to {}", sim.train.n(), sim.test.n(), a.out.display());
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let data = a.data.load()?;
    let settings = a.solver.settings()?;
    let spec = RegularizerSpec::new(penalty_for(a.reg, a.q), a.lambda)?;
    let groups = sensor_groups(data.train.layout());
    let model = fit(&data.train, &spec, &groups, &settings)?;
    create_dir(&a.out)?;
    model.save(a.out.join("model.json"))?;
    if let Some(test) = &data.test {
        let e = evaluate(&model, test, data.truth.as_ref())?;
        let row = EvalRow {
            method: a.reg.to_string(),
            seed: a.seed,
            auc: e.auc,
            selection_rate: e.selection_rate,
            f_measure: e.f_measure,
        };
        write_rows(&a.out.join("eval.csv"), &[row])?;
    }
    write_config(&a.out, "fit", a, (&spec, &settings))?;
    info!(
        "{} lambda={} iterations={} objective={}",
        a.reg, a.lambda, model.diagnostics.iterations, model.diagnostics.final_objective
    );
    Ok(())
}

#[derive(Serialize)]
struct Chosen {
    method: Method,
    seed: u64,
    point: GridPoint,
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let settings = a.solver.settings()?;
    let base = GridSpec {
        lambdas: a.grid.clone(),
        qs: Some(a.qs.clone()),
        folds: a.folds as usize,
        seed: a.seed,
    };
    base.validate()?;
    let files = match &a.train {
        Some(train) => Some(
            DataArgs {
                train: train.clone(),
                layout: a.layout.clone().expect("clap requires layout with train"),
                test: a.test.clone(),
                truth: a.truth.clone(),
                standardize: a.standardize,
            }
            .load()?,
        ),
        None => None,
    };
    create_dir(&a.out)?;
    let mut records: Vec<RunRecord> = Vec::new();
    let mut models: BTreeMap<Method, Vec<LinearModel>> = BTreeMap::new();
    let mut chosen = Vec::new();
    let mut layout = None;
    for k in 0..a.repeats {
        let seed = a.seed + k;
        let sim;
        let (train, test, truth) = match &files {
            Some(d) => (&d.train, d.test.as_ref(), d.truth.as_ref()),
            None => {
                sim = generate(&a.sim.resolve(seed)?)?;
                (&sim.train, Some(&sim.test), Some(&sim.truth))
            }
        };
        layout = Some(train.layout().clone());
        let grid = GridSpec { seed, ..base.clone() };
        for &method in &a.method {
            let report = cross_validate(method, train, &grid, &settings)?;
            write_rows(&a.out.join(format!("grid_{method}_{seed}.csv")), &grid_rows(&report.points))?;
            chosen.push(Chosen {
                method,
                seed,
                point: report.best().clone(),
            });
            if let Some(test) = test {
                records.push(record(method, seed, &report, test, truth)?);
            }
            let model = report.model;
            let name = if a.repeats == 1 { format!("model_{method}.json") } else { format!("model_{method}_{seed}.json") };
            model.save(a.out.join(name))?;
            info!("seed {seed} {method}: lambda={}", chosen[chosen.len() - 1].point.lambda);
            models.entry(method).or_default().push(model);
        }
    }
    write_json(&a.out.join("chosen.json"), &chosen)?;
    if !records.is_empty() {
        let rows: Vec<EvalRow> = records.iter().map(EvalRow::from).collect();
        write_rows(&a.out.join("eval.csv"), &rows)?;
        let baseline = if a.method.contains(&Method::Svm) { "svm" } else { a.method[0].name() };
        write_json(&a.out.join("summary.json"), &summarize(&rows, baseline)?)?;
    }
    if let Some(layout) = layout {
        for (method, ms) in &models {
            write_frequency(&a.out.join(format!("selection_{method}.csv")), ms, &layout)?;
        }
    }
    let sim = if files.is_none() { Some(a.sim.resolve(a.seed)?) } else { None };
    write_config(&a.out, "cv", a, (&base, &settings, sim))?;
    Ok(())
}

#[derive(Serialize)]
struct MtlSummary {
    method: MtlMethod,
    seed: u64,
    lambda_r: f64,
    lambda_s: Option<f64>,
    /// Training objective at fixed hyperparameters; absent after CV.
    objective: Option<f64>,
}

#[derive(Serialize)]
struct TaskRow {
    seed: u64,
    task: usize,
    auc: f64,
    selection_rate: f64,
    f_measure: Option<f64>,
}

fn fixed_mtl_run(a: &MtlArgs, lambda_r: f64, train: &TaskCollection, settings: &SolveSettings) -> Result<(MtlRun, f64)> {
    let groups = sensor_groups(train.layout());
    let spec = RegularizerSpec::l2(lambda_r)?;
    let (models, lambda_s, obj) = match a.method {
        MtlMethod::Mgsvm2 | MtlMethod::Mgsvm2s => {
            let ls = if a.method == MtlMethod::Mgsvm2 { 0.0 } else { a.lambda_s.unwrap_or(0.0) };
            let spec = MtlSpec::new(lambda_r, ls)?;
            let model = fit_mtl(train, &spec, settings)?;
            let obj = mtl_objective(train, &spec, model.weight_matrix().view(), &model.biases())?;
            (model.tasks, Some(ls), obj)
        }
        MtlMethod::Svm => {
            let models = fit_independent(train, &spec, &groups, settings)?;
            let obj = models
                .iter()
                .zip(train.tasks())
                .map(|(m, t)| objective(t, &spec, &groups, m.w.view(), m.b))
                .sum::<Result<f64>>()?;
            (models, None, obj)
        }
        MtlMethod::SvmFull => {
            let model = fit_pooled(train, &spec, &groups, settings)?;
            let obj = objective(&train.pooled(), &spec, &groups, model.w.view(), model.b)?;
            (vec![model; train.m()], None, obj)
        }
    };
    let rise = models
        .iter()
        .map(|m| m.diagnostics.max_relative_increase())
        .fold(f64::NEG_INFINITY, f64::max);
    let run = MtlRun {
        method: a.method,
        models,
        lambda_r,
        lambda_s,
        max_relative_increase: rise,
    };
    Ok((run, obj))
}

fn cmd_mtl(a: &MtlArgs) -> Result<()> {
    let settings = a.solver.settings()?;
    if a.lambda_s.is_some() && a.method != MtlMethod::Mgsvm2s {
        return Err(Error::invalid("lambda_s", "only mgsvm2s has a similarity term"));
    }
    if !a.test.is_empty() && a.test.len() != a.tasks.len() {
        return Err(Error::invalid("test", "one test file per task file is required"));
    }
    create_dir(&a.out)?;
    let mut eval_rows = Vec::new();
    let mut task_rows = Vec::new();
    let mut summaries = Vec::new();
    let seeds: Vec<u64> = if a.tasks.is_empty() { (0..a.repeats).map(|k| a.seed + k).collect() } else { vec![a.seed] };
    for seed in seeds {
        let (train, test, truth): (Vec<TrialSet>, Vec<TrialSet>, Option<GroundTruth>) = if a.tasks.is_empty() {
            let subs = simulate_subjects(&a.sim.resolve(seed)?, a.subjects, seed)?;
            let truth = subs[0].truth.clone();
            let (tr, te) = subs.into_iter().map(|s| (s.train, s.test)).unzip();
            (tr, te, Some(truth))
        } else {
            let layout = a.layout.as_ref().expect("clap requires layout with tasks");
            let tr = a.tasks.iter().map(|p| load_trialset(p, layout)).collect::<Result<Vec<_>>>()?;
            let te = a.test.iter().map(|p| load_trialset(p, layout)).collect::<Result<Vec<_>>>()?;
            (tr, te, None)
        };
        let train = match a.n_per_task {
            Some(n) => subsample(&train, n)?,
            None => TaskCollection::new(train)?,
        };
        let (train, test) = if a.standardize {
            let st = Standardizer::fit(&train.pooled());
            let tr = train.tasks().iter().map(|t| st.apply(t)).collect::<Result<Vec<_>>>()?;
            let te = test.iter().map(|t| st.apply(t)).collect::<Result<Vec<_>>>()?;
            (TaskCollection::new(tr)?, te)
        } else {
            (train, test)
        };
        let (run, obj) = match a.lambda_r {
            Some(lr) => {
                let (run, obj) = fixed_mtl_run(a, lr, &train, &settings)?;
                (run, Some(obj))
            }
            None => {
                let grid = MtlGrid {
                    lambda_r: default_lambdas(),
                    lambda_s: a.lambda_s.map(|s| vec![s]).unwrap_or_else(default_lambda_s),
                    folds: a.folds as usize,
                    seed,
                };
                let run = crate::protocol::run_mtl_method(a.method, &train, &grid, &settings)?;
                (run, None)
            }
        };
        for (t, m) in run.models.iter().enumerate() {
            let name = if a.tasks.is_empty() { format!("model_{seed}_task{t}.json") } else { format!("model_task{t}.json") };
            m.save(a.out.join(name))?;
        }
        if !test.is_empty() {
            let reports = evaluate_tasks(&run, &test, truth.as_ref())?;
            for (t, e) in reports.iter().enumerate() {
                task_rows.push(TaskRow {
                    seed,
                    task: t,
                    auc: e.auc,
                    selection_rate: e.selection_rate,
                    f_measure: e.f_measure,
                });
            }
            let k = reports.len() as f64;
            if a.tasks.is_empty() {
                let f: Option<Vec<f64>> = reports.iter().map(|e| e.f_measure).collect();
                eval_rows.push(EvalRow {
                    method: a.method.to_string(),
                    seed,
                    auc: reports.iter().map(|e| e.auc).sum::<f64>() / k,
                    selection_rate: reports.iter().map(|e| e.selection_rate).sum::<f64>() / k,
                    f_measure: f.map(|v| v.iter().sum::<f64>() / k),
                });
            } else {
                // Subjects are the pairing key for real data.
                for (t, e) in reports.iter().enumerate() {
                    eval_rows.push(EvalRow {
                        method: a.method.to_string(),
                        seed: t as u64,
                        auc: e.auc,
                        selection_rate: e.selection_rate,
                        f_measure: e.f_measure,
                    });
                }
            }
        }
        summaries.push(MtlSummary {
            method: a.method,
            seed,
            lambda_r: run.lambda_r,
            lambda_s: run.lambda_s,
            objective: obj,
        });
    }
    if !eval_rows.is_empty() {
        write_rows(&a.out.join("eval.csv"), &eval_rows)?;
        write_rows(&a.out.join("tasks.csv"), &task_rows)?;
    }
    write_json(&a.out.join("fit.json"), &summaries)?;
    write_config(&a.out, "mtl", a, &settings)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let test = load_trialset(&a.test, &a.layout)?;
    let truth = a.truth.as_ref().map(GroundTruth::load).transpose()?;
    let models = a.model.iter().map(load_model).collect::<Result<Vec<_>>>()?;
    let rows = models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let e = evaluate(m, &test, truth.as_ref())?;
            Ok(EvalRow {
                method: a.method.clone(),
                seed: k as u64,
                auc: e.auc,
                selection_rate: e.selection_rate,
                f_measure: e.f_measure,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    write_rows(&a.out.join("eval.csv"), &rows)?;
    write_frequency(&a.out.join("selection.csv"), &models, test.layout())?;
    write_config(&a.out, "eval", a, ())?;
    Ok(())
}

/// Result of `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub p_value: f64,
    pub statistic: f64,
    pub pairs: usize,
}

fn pick(rows: Vec<EvalRow>, method: Option<&str>, path: &Path) -> Result<(String, Vec<EvalRow>)> {
    let name = match method {
        Some(m) => m.to_string(),
        None => {
            let first = rows.first().ok_or_else(|| Error::Pairing(format!("{} has no rows", path.display())))?;
            if rows.iter().any(|r| r.method != first.method) {
                return Err(Error::Pairing(format!("{} holds several methods; pick one", path.display())));
            }
            first.method.clone()
        }
    };
    let rows = rows.into_iter().filter(|r| r.method == name).collect();
    Ok((name, rows))
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let (name_a, rows_a) = pick(read_eval_csv(&a.a)?, a.method_a.as_deref(), &a.a)?;
    let (name_b, rows_b) = pick(read_eval_csv(&a.b)?, a.method_b.as_deref(), &a.b)?;
    let (x, y) = pair_by_seed(&rows_a, &rows_b)?;
    let w = wilcoxon_signed_rank(&x, &y)?;
    let out = Comparison {
        method_a: name_a,
        method_b: name_b,
        p_value: w.p_value,
        statistic: w.statistic,
        pairs: x.len(),
    };
    match &a.out {
        Some(path) => write_json(path, &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Error::Schema(e.to_string()))?);
            Ok(())
        }
    }
}

/// Markdown table in percent with two decimals.
pub fn format_report(summaries: &[MethodSummary]) -> String {
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let mut s = String::from("| method | runs | AUC | AUC std | p-value | Sel | F-measure |\n|---|---|---|---|---|---|---|\n");
    for m in summaries {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            m.method,
            m.runs,
            pct(m.auc_mean),
            pct(m.auc_std),
            m.p_value.map_or("-".into(), |p| format!("{p:.3}")),
            pct(m.selection_rate_mean),
            m.f_measure_mean.map_or("-".into(), pct),
        ));
    }
    s
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.eval {
        rows.extend(read_eval_csv(path)?);
    }
    let summaries = summarize(&rows, &a.baseline)?;
    print!("{}", format_report(&summaries));
    if let Some(out) = &a.out {
        write_json(out, &summaries)?;
    }
    Ok(())
}
