//! Grid search with k-fold cross-validation on AUC.
//!
//! Each (q, fold) pair walks its λ values from largest to smallest,
//! warm-starting every fit from the previous solution.

use std::cmp::Ordering;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupPartition, LinearModel, Penalty, RegularizerSpec, TaskCollection, TrialSet};
use crate::error::{Error, Result};
use crate::evaluation::model_auc;
use crate::mtl::{fit_mtl, fit_mtl_from, MtlModel, MtlSpec};
use crate::solver::{fbs_solve_from, fit, fit_adaptive_from, SolveSettings};

/// `n` points evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

pub fn default_lambdas() -> Vec<f64> {
    log_grid(1e-3, 1e1, 13)
}

pub fn default_qs() -> Vec<f64> {
    vec![1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
}

/// `{0}` followed by the default λ grid.
pub fn default_lambda_s() -> Vec<f64> {
    std::iter::once(0.0).chain(default_lambdas()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    /// Only consulted for the plain group family; `None` keeps the family's own q.
    pub qs: Option<Vec<f64>>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambdas: default_lambdas(),
            qs: Some(default_qs()),
            folds: 3,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::invalid("lambdas", "grid is empty"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid("lambdas", format!("{l} is not a positive real")));
        }
        if let Some(qs) = &self.qs {
            if qs.is_empty() {
                return Err(Error::invalid("qs", "grid is empty"));
            }
            if let Some(q) = qs.iter().find(|q| !(1.0..=2.0).contains(*q)) {
                return Err(Error::invalid("qs", format!("{q} is outside [1, 2]")));
            }
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds", "at least 2 folds are required"));
        }
        Ok(())
    }
}

/// One (train, validation) index pair per fold.
pub type Folds = Vec<(Vec<usize>, Vec<usize>)>;

fn folds_from_order(order: &[usize], folds: usize, chunked: bool) -> Folds {
    let n = order.len();
    let mut assign = vec![0usize; n];
    if chunked {
        let (base, extra) = (n / folds, n % folds);
        let mut start = 0;
        for k in 0..folds {
            let len = base + usize::from(k < extra);
            for &i in &order[start..start + len] {
                assign[i] = k;
            }
            start += len;
        }
    } else {
        for (pos, &i) in order.iter().enumerate() {
            assign[i] = pos % folds;
        }
    }
    (0..folds)
        .map(|k| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == k);
            (train, valid)
        })
        .collect()
}

/// Seeded shuffle of `0..n` cut into `folds` contiguous chunks.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Folds> {
    if folds < 2 || folds > n {
        return Err(Error::invalid("folds", format!("{folds} folds for {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(folds_from_order(&order, folds, true))
}

/// Like [`kfold_split`], but positives and negatives are dealt round-robin
/// so every fold gets its share of each class.
pub fn stratified_kfold(labels: &[f64], folds: usize, seed: u64) -> Result<Folds> {
    let n = labels.len();
    if folds < 2 || folds > n {
        return Err(Error::invalid("folds", format!("{folds} folds for {n} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] > 0.0);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.extend(neg);
    let out = folds_from_order(&pos, folds, false);
    for (k, (train, valid)) in out.iter().enumerate() {
        for (name, idx) in [("training", train), ("validation", valid)] {
            let p = idx.iter().filter(|&&i| labels[i] > 0.0).count();
            if p == 0 || p == idx.len() {
                return Err(Error::Data(format!("{name} part of fold {k} holds a single class")));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub q: Option<f64>,
    pub lambda_s: Option<f64>,
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Clone, Debug)]
pub struct CvReport<M> {
    /// In grid enumeration order.
    pub points: Vec<GridPoint>,
    pub chosen: usize,
    pub model: M,
    /// Worst relative objective increase seen in any fit, refit included.
    pub max_relative_increase: f64,
}

impl<M> CvReport<M> {
    pub fn best(&self) -> &GridPoint {
        &self.points[self.chosen]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn unique_descending(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

fn position(path: &[f64], value: f64) -> usize {
    path.iter().position(|&v| v == value).expect("value comes from the path")
}

/// Highest mean AUC; ties go to larger λ, then smaller q, then larger λ_s.
fn choose(points: &[GridPoint]) -> usize {
    let key = |p: &GridPoint| (p.mean_auc, p.lambda, -p.q.unwrap_or(0.0), p.lambda_s.unwrap_or(0.0));
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let (a, b) = (key(p), key(&points[best]));
        let ord = a
            .0
            .total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.total_cmp(&b.3));
        if ord == Ordering::Greater {
            best = i;
        }
    }
    best
}

/// (AUC, worst objective rise) for each λ of one warm-started descending path.
fn path_aucs(
    train: &TrialSet,
    valid: &TrialSet,
    penalty: Penalty,
    path: &[f64],
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<Vec<(f64, f64)>> {
    let mut w = Array1::zeros(train.dim());
    let mut b = 0.0;
    let mut out = Vec::with_capacity(path.len());
    for &lambda in path {
        let (model, first) = match penalty {
            Penalty::AdaptiveGroupLq { q } => {
                let both = fit_adaptive_from(train, q, lambda, groups, settings, w.view(), b)?;
                w = both.stage_one.w.clone();
                b = both.stage_one.b;
                let first = both.stage_one.diagnostics.max_relative_increase();
                (both.model, first)
            }
            _ => {
                let spec = RegularizerSpec::new(penalty, lambda)?;
                let model = fbs_solve_from(train, &spec, groups, settings, w.view(), b)?;
                w = model.w.clone();
                b = model.b;
                (model, f64::NEG_INFINITY)
            }
        };
        let rise = first.max(model.diagnostics.max_relative_increase());
        out.push((model_auc(&model, valid)?, rise));
    }
    Ok(out)
}

/// Cross-validates one regularizer family over `grid` and refits the best
/// point on all of `train`.
///
/// For [`Penalty::GroupLq`] the q grid (when given) replaces the family's q;
/// other families ignore it.
pub fn cv_select(
    train: &TrialSet,
    family: Penalty,
    grid: &GridSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<CvReport<LinearModel>> {
    grid.validate()?;
    settings.validate()?;
    let qs: Vec<Option<f64>> = match (family, &grid.qs) {
        (Penalty::GroupLq { .. }, Some(qs)) => qs.iter().map(|&q| Some(q)).collect(),
        _ => vec![family.q()],
    };
    let with_q = |q: Option<f64>| match (family, q) {
        (Penalty::GroupLq { .. }, Some(q)) => Penalty::GroupLq { q },
        _ => family,
    };
    let folds = stratified_kfold(train.labels().as_slice().expect("contiguous labels"), grid.folds, grid.seed)?;
    let parts = folds
        .iter()
        .map(|(t, v)| Ok((train.select(t)?, train.select(v)?)))
        .collect::<Result<Vec<_>>>()?;
    let path = unique_descending(&grid.lambdas);

    let jobs: Vec<(usize, usize)> = (0..qs.len()).flat_map(|a| (0..parts.len()).map(move |k| (a, k))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(a, k)| path_aucs(&parts[k].0, &parts[k].1, with_q(qs[a]), &path, groups, settings))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for (a, &q) in qs.iter().enumerate() {
        for &lambda in &grid.lambdas {
            let j = position(&path, lambda);
            let fold_auc: Vec<f64> = (0..parts.len()).map(|k| runs[a * parts.len() + k][j].0).collect();
            points.push(GridPoint {
                lambda,
                q,
                lambda_s: None,
                mean_auc: mean(&fold_auc),
                fold_auc,
            });
        }
    }
    let chosen = choose(&points);
    let best = &points[chosen];
    let spec = RegularizerSpec::new(with_q(best.q), best.lambda)?;
    let (model, refit_rise) = match spec.penalty {
        Penalty::AdaptiveGroupLq { q } => {
            let zero = Array1::zeros(train.dim());
            let both = fit_adaptive_from(train, q, spec.lambda, groups, settings, zero.view(), 0.0)?;
            let rise = both.stage_one.diagnostics.max_relative_increase();
            (both.model, rise)
        }
        _ => (fit(train, &spec, groups, settings)?, f64::NEG_INFINITY),
    };
    let max_relative_increase = runs
        .iter()
        .flatten()
        .map(|r| r.1)
        .fold(refit_rise.max(model.diagnostics.max_relative_increase()), f64::max);
    Ok(CvReport {
        points,
        chosen,
        model,
        max_relative_increase,
    })
}

/// Mean over tasks of each task model's AUC on its own validation trials.
fn mtl_auc(model: &MtlModel, valid: &[TrialSet]) -> Result<f64> {
    let aucs = model
        .tasks
        .iter()
        .zip(valid)
        .map(|(m, v)| model_auc(m, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&aucs))
}

/// Two-dimensional search over (λ_r, λ_s). Fold k trains on every task's
/// fold-k training trials and is scored by the task-averaged validation AUC.
pub fn cv_select_mtl(
    tasks: &TaskCollection,
    lambda_r: &[f64],
    lambda_s: &[f64],
    folds: usize,
    seed: u64,
    settings: &SolveSettings,
) -> Result<CvReport<MtlModel>> {
    let grid = GridSpec {
        lambdas: lambda_r.to_vec(),
        qs: None,
        folds,
        seed,
    };
    grid.validate()?;
    settings.validate()?;
    if lambda_s.is_empty() {
        return Err(Error::invalid("lambda_s", "grid is empty"));
    }
    for &s in lambda_s {
        MtlSpec::new(1.0, s)?;
    }
    let per_task = tasks
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let labels = task.labels().as_slice().expect("contiguous labels");
            stratified_kfold(labels, folds, seed.wrapping_add(t as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let parts = (0..folds)
        .map(|k| {
            let mut train = Vec::new();
            let mut valid = Vec::new();
            for (task, split) in tasks.tasks().iter().zip(&per_task) {
                train.push(task.select(&split[k].0)?);
                valid.push(task.select(&split[k].1)?);
            }
            Ok((TaskCollection::new(train)?, valid))
        })
        .collect::<Result<Vec<_>>>()?;
    let path = unique_descending(lambda_r);

    let jobs: Vec<(usize, usize)> = (0..lambda_s.len()).flat_map(|a| (0..folds).map(move |k| (a, k))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(a, k)| {
            let (train, valid) = &parts[k];
            let mut w = Array2::zeros((train.m(), train.dim()));
            let mut b = vec![0.0; train.m()];
            path.iter()
                .map(|&lr| {
                    let model = fit_mtl_from(train, &MtlSpec::new(lr, lambda_s[a])?, settings, w.view(), &b)?;
                    w = model.weight_matrix();
                    b = model.biases();
                    Ok((mtl_auc(&model, valid)?, model.diagnostics.max_relative_increase()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for (a, &ls) in lambda_s.iter().enumerate() {
        for &lambda in lambda_r {
            let j = position(&path, lambda);
            let fold_auc: Vec<f64> = (0..folds).map(|k| runs[a * folds + k][j].0).collect();
            points.push(GridPoint {
                lambda,
                q: None,
                lambda_s: Some(ls),
                mean_auc: mean(&fold_auc),
                fold_auc,
            });
        }
    }
    let chosen = choose(&points);
    let best = &points[chosen];
    let model = fit_mtl(tasks, &MtlSpec::new(best.lambda, best.lambda_s.unwrap_or(0.0))?, settings)?;
    let max_relative_increase = runs
        .iter()
        .flatten()
        .map(|r| r.1)
        .fold(model.diagnostics.max_relative_increase(), f64::max);
    Ok(CvReport {
        points,
        chosen,
        model,
        max_relative_increase,
    })
}
