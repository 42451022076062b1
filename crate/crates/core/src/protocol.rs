//! Experiment runners: the five single-subject methods on simulated data,
//! and the multi-subject comparison at a fixed number of trials per subject.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sensor_groups, LinearModel, Penalty, TaskCollection, TrialSet};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, model_auc, wilcoxon_signed_rank, EvalReport};
use crate::selection::{cv_select, cv_select_mtl, default_lambda_s, CvReport, GridSpec};
use crate::solver::SolveSettings;
use crate::synthetic::{generate, GroundTruth, SimConfig, SimulatedData};

/// Single-subject methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "svm")]
    Svm,
    #[serde(rename = "svm-1")]
    Svm1,
    #[serde(rename = "gsvm-2")]
    Gsvm2,
    #[serde(rename = "gsvm-p")]
    GsvmP,
    #[serde(rename = "gsvm-a")]
    GsvmA,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Svm, Method::Svm1, Method::Gsvm2, Method::GsvmP, Method::GsvmA];

    pub fn name(self) -> &'static str {
        match self {
            Method::Svm => "svm",
            Method::Svm1 => "svm-1",
            Method::Gsvm2 => "gsvm-2",
            Method::GsvmP => "gsvm-p",
            Method::GsvmA => "gsvm-a",
        }
    }

    /// The regularizer family. The q of `GsvmP` is a placeholder that the
    /// q grid overrides.
    pub fn family(self) -> Penalty {
        match self {
            Method::Svm => Penalty::L2,
            Method::Svm1 => Penalty::L1,
            Method::Gsvm2 => Penalty::GroupLq { q: 2.0 },
            Method::GsvmP => Penalty::GroupLq { q: 2.0 },
            Method::GsvmA => Penalty::AdaptiveGroupLq { q: 2.0 },
        }
    }

    /// `base` with the q grid kept only where q is searched.
    pub fn grid(self, base: &GridSpec) -> GridSpec {
        GridSpec {
            qs: if self == Method::GsvmP { base.qs.clone() } else { None },
            ..base.clone()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the method names and the regularizer aliases `l2`, `l1`,
    /// `gl2`, `glq`, `adaptive`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "svm" | "l2" => Method::Svm,
            "svm-1" | "gsvm-1" | "l1" => Method::Svm1,
            "gsvm-2" | "gl2" => Method::Gsvm2,
            "gsvm-p" | "glq" => Method::GsvmP,
            "gsvm-a" | "adaptive" => Method::GsvmA,
            _ => return Err(Error::invalid("method", format!("unknown method {s:?}"))),
        })
    }
}

/// One method on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub auc: f64,
    pub selection_rate: f64,
    pub f_measure: Option<f64>,
    pub selected_sensors: Vec<usize>,
    pub lambda: f64,
    pub q: Option<f64>,
    pub cv_auc: f64,
    pub max_relative_increase: f64,
}

/// Scores the refit model of a CV report on `test`.
pub fn record(
    method: Method,
    seed: u64,
    report: &CvReport<LinearModel>,
    test: &TrialSet,
    truth: Option<&GroundTruth>,
) -> Result<RunRecord> {
    let eval = evaluate(&report.model, test, truth)?;
    let best = report.best();
    Ok(RunRecord {
        method,
        seed,
        auc: eval.auc,
        selection_rate: eval.selection_rate,
        f_measure: eval.f_measure,
        selected_sensors: eval.selected_sensors,
        lambda: best.lambda,
        q: report.model.regularizer.and_then(|r| r.penalty.q()),
        cv_auc: best.mean_auc,
        max_relative_increase: report.max_relative_increase,
    })
}

/// Cross-validates `method` on `train` and scores the refit on `test`.
pub fn run_method(
    method: Method,
    seed: u64,
    train: &TrialSet,
    test: &TrialSet,
    truth: Option<&GroundTruth>,
    grid: &GridSpec,
    settings: &SolveSettings,
) -> Result<(RunRecord, LinearModel)> {
    let report = cross_validate(method, train, grid, settings)?;
    Ok((record(method, seed, &report, test, truth)?, report.model))
}

/// [`cv_select`] with the method's family and grid on sensor groups.
pub fn cross_validate(
    method: Method,
    train: &TrialSet,
    grid: &GridSpec,
    settings: &SolveSettings,
) -> Result<CvReport<LinearModel>> {
    let groups = sensor_groups(train.layout());
    cv_select(train, method.family(), &method.grid(grid), &groups, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub settings: SolveSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sim: SimConfig::default(),
            seeds: (0..10).collect(),
            methods: Method::ALL.to_vec(),
            grid: GridSpec::default(),
            settings: SolveSettings::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Study {
    /// Seed-major, methods in configured order.
    pub records: Vec<RunRecord>,
    pub models: Vec<LinearModel>,
}

/// Regenerates the data for every seed and runs every method on it. The
/// CV split seed follows the data seed, so each repeat gets fresh folds.
pub fn simulated_study(config: &StudyConfig) -> Result<Study> {
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let sim: SimulatedData = generate(&config.sim.clone().with_seed_value(seed))?;
            let grid = GridSpec {
                seed,
                ..config.grid.clone()
            };
            config
                .methods
                .iter()
                .map(|&m| run_method(m, seed, &sim.train, &sim.test, Some(&sim.truth), &grid, &config.settings))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, models) = per_seed.into_iter().flatten().unzip();
    Ok(Study { records, models })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates over seeds for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub selection_rate_mean: f64,
    pub selection_rate_std: f64,
    pub f_measure_mean: Option<f64>,
    pub f_measure_std: Option<f64>,
    /// Wilcoxon signed-rank p-value of the per-seed AUCs against the baseline.
    pub p_value: Option<f64>,
}

/// A row of an evaluation table; `seed` doubles as the subject key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub seed: u64,
    pub auc: f64,
    pub selection_rate: f64,
    pub f_measure: Option<f64>,
}

impl From<&RunRecord> for EvalRow {
    fn from(r: &RunRecord) -> Self {
        EvalRow {
            method: r.method.to_string(),
            seed: r.seed,
            auc: r.auc,
            selection_rate: r.selection_rate,
            f_measure: r.f_measure,
        }
    }
}

/// Pairs the rows of two methods by seed. Every seed must appear in both.
pub fn pair_by_seed(a: &[EvalRow], b: &[EvalRow]) -> Result<(Vec<f64>, Vec<f64>)> {
    let key = |rows: &[EvalRow]| -> Result<std::collections::BTreeMap<u64, f64>> {
        let mut map = std::collections::BTreeMap::new();
        for r in rows {
            if map.insert(r.seed, r.auc).is_some() {
                return Err(Error::Pairing(format!("seed {} appears twice for {}", r.seed, r.method)));
            }
        }
        Ok(map)
    };
    let (ka, kb) = (key(a)?, key(b)?);
    if ka.keys().ne(kb.keys()) {
        let only: Vec<u64> = ka.keys().filter(|k| !kb.contains_key(k)).chain(kb.keys().filter(|k| !ka.contains_key(k))).copied().collect();
        return Err(Error::Pairing(format!("unpaired seeds {only:?}")));
    }
    if ka.is_empty() {
        return Err(Error::Pairing("no rows to pair".into()));
    }
    Ok((ka.values().copied().collect(), kb.values().copied().collect()))
}

/// One summary per method in order of first appearance.
pub fn summarize(rows: &[EvalRow], baseline: &str) -> Result<Vec<MethodSummary>> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    let base: Vec<EvalRow> = rows.iter().filter(|r| r.method == baseline).cloned().collect();
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<EvalRow> = rows.iter().filter(|r| r.method == name).cloned().collect();
            let aucs: Vec<f64> = mine.iter().map(|r| r.auc).collect();
            let sels: Vec<f64> = mine.iter().map(|r| r.selection_rate).collect();
            let fs: Option<Vec<f64>> = mine.iter().map(|r| r.f_measure).collect();
            let (auc_mean, auc_std) = mean_std(&aucs);
            let (selection_rate_mean, selection_rate_std) = mean_std(&sels);
            let f = fs.filter(|v| !v.is_empty()).map(|v| mean_std(&v));
            let p_value = if name != baseline && !base.is_empty() {
                let (a, b) = pair_by_seed(&mine, &base)?;
                Some(wilcoxon_signed_rank(&a, &b)?.p_value)
            } else {
                None
            };
            Ok(MethodSummary {
                method: name.to_string(),
                runs: mine.len(),
                auc_mean,
                auc_std,
                selection_rate_mean,
                selection_rate_std,
                f_measure_mean: f.map(|x| x.0),
                f_measure_std: f.map(|x| x.1),
                p_value,
            })
        })
        .collect()
}

/// Multi-subject methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MtlMethod {
    /// Joint sensor selection only (no similarity term).
    Mgsvm2,
    /// Joint sensor selection plus similarity to the mean classifier.
    Mgsvm2s,
    /// One l2 SVM per subject.
    Svm,
    /// One l2 SVM on every subject's trials pooled.
    SvmFull,
}

impl MtlMethod {
    pub fn name(self) -> &'static str {
        match self {
            MtlMethod::Mgsvm2 => "mgsvm2",
            MtlMethod::Mgsvm2s => "mgsvm2s",
            MtlMethod::Svm => "svm",
            MtlMethod::SvmFull => "svm-full",
        }
    }
}

impl fmt::Display for MtlMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MtlMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mgsvm2" | "mgsvm-2" => MtlMethod::Mgsvm2,
            "mgsvm2s" | "mgsvm-2s" => MtlMethod::Mgsvm2s,
            "svm" => MtlMethod::Svm,
            "svm-full" | "svmfull" => MtlMethod::SvmFull,
            _ => return Err(Error::invalid("method", format!("unknown multi-task method {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlGrid {
    pub lambda_r: Vec<f64>,
    /// Only used by `Mgsvm2s`.
    pub lambda_s: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for MtlGrid {
    fn default() -> Self {
        MtlGrid {
            lambda_r: crate::selection::default_lambdas(),
            lambda_s: default_lambda_s(),
            folds: 3,
            seed: 0,
        }
    }
}

/// Per-subject models from one multi-subject method.
#[derive(Clone, Debug)]
pub struct MtlRun {
    pub method: MtlMethod,
    pub models: Vec<LinearModel>,
    pub lambda_r: f64,
    pub lambda_s: Option<f64>,
    pub max_relative_increase: f64,
}

/// Fits `method` on `train` with hyperparameters chosen by cross-validation.
pub fn run_mtl_method(
    method: MtlMethod,
    train: &TaskCollection,
    grid: &MtlGrid,
    settings: &SolveSettings,
) -> Result<MtlRun> {
    let single = GridSpec {
        lambdas: grid.lambda_r.clone(),
        qs: None,
        folds: grid.folds,
        seed: grid.seed,
    };
    let groups = sensor_groups(train.layout());
    match method {
        MtlMethod::Mgsvm2 | MtlMethod::Mgsvm2s => {
            let ls = if method == MtlMethod::Mgsvm2 { vec![0.0] } else { grid.lambda_s.clone() };
            let rep = cv_select_mtl(train, &grid.lambda_r, &ls, grid.folds, grid.seed, settings)?;
            let best = rep.best().clone();
            Ok(MtlRun {
                method,
                models: rep.model.tasks,
                lambda_r: best.lambda,
                lambda_s: best.lambda_s,
                max_relative_increase: rep.max_relative_increase,
            })
        }
        MtlMethod::Svm => {
            let reps = train
                .tasks()
                .iter()
                .map(|t| cv_select(t, Penalty::L2, &single, &groups, settings))
                .collect::<Result<Vec<_>>>()?;
            let rise = reps.iter().map(|r| r.max_relative_increase).fold(f64::NEG_INFINITY, f64::max);
            let lambda_r = reps[0].best().lambda;
            Ok(MtlRun {
                method,
                models: reps.into_iter().map(|r| r.model).collect(),
                lambda_r,
                lambda_s: None,
                max_relative_increase: rise,
            })
        }
        MtlMethod::SvmFull => {
            let rep = cv_select(&train.pooled(), Penalty::L2, &single, &groups, settings)?;
            Ok(MtlRun {
                method,
                models: vec![rep.model.clone(); train.m()],
                lambda_r: rep.best().lambda,
                lambda_s: None,
                max_relative_increase: rep.max_relative_increase,
            })
        }
    }
}

/// Per-subject evaluation of a multi-subject run.
pub fn evaluate_tasks(run: &MtlRun, test: &[TrialSet], truth: Option<&GroundTruth>) -> Result<Vec<EvalReport>> {
    if run.models.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: run.models.len(),
            actual: test.len(),
        });
    }
    run.models.iter().zip(test).map(|(m, t)| evaluate(m, t, truth)).collect()
}

/// Simulated subjects sharing one set of relevant sensors, drawn from `seed`.
/// Subject `t` uses data seed `seed * 1000 + t + 1`.
pub fn simulate_subjects(config: &SimConfig, m: usize, seed: u64) -> Result<Vec<SimulatedData>> {
    let shared = generate(&config.clone().with_seed_value(seed))?.truth.relevant_sensors;
    (0..m)
        .map(|t| {
            generate(&SimConfig {
                relevant_sensors: Some(shared.clone()),
                seed: seed.wrapping_mul(1000).wrapping_add(t as u64 + 1),
                ..config.clone()
            })
        })
        .collect()
}

/// Keeps the first `n` trials of every task (the simulated sets are
/// already shuffled).
pub fn subsample(tasks: &[TrialSet], n: usize) -> Result<TaskCollection> {
    let cut = tasks
        .iter()
        .map(|t| {
            if n > t.n() {
                return Err(Error::invalid("n_per_task", format!("{n} trials requested, {} available", t.n())));
            }
            t.select(&(0..n).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    TaskCollection::new(cut)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub n_per_task: usize,
    pub method: MtlMethod,
    pub task_auc: Vec<f64>,
    pub mean_auc: f64,
    pub max_relative_increase: f64,
}

/// Fits each method on `n_per_task` training trials of `m` simulated
/// subjects and scores it on each subject's full test split.
pub fn learning_curve_point(
    config: &SimConfig,
    m: usize,
    n_per_task: usize,
    seed: u64,
    methods: &[MtlMethod],
    grid: &MtlGrid,
    settings: &SolveSettings,
) -> Result<Vec<CurvePoint>> {
    let subjects = simulate_subjects(config, m, seed)?;
    let train = subsample(&subjects.iter().map(|s| s.train.clone()).collect::<Vec<_>>(), n_per_task)?;
    let grid = MtlGrid { seed, ..grid.clone() };
    methods
        .iter()
        .map(|&method| {
            let run = run_mtl_method(method, &train, &grid, settings)?;
            let task_auc = run
                .models
                .iter()
                .zip(&subjects)
                .map(|(model, s)| model_auc(model, &s.test))
                .collect::<Result<Vec<_>>>()?;
            Ok(CurvePoint {
                seed,
                n_per_task,
                method,
                mean_auc: task_auc.iter().sum::<f64>() / task_auc.len() as f64,
                task_auc,
                max_relative_increase: run.max_relative_increase,
            })
        })
        .collect()
}
