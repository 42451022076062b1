//! Joint multi-task fitting with a sensor-wise group penalty across subjects
//! and a similarity penalty pulling every classifier towards the average one.
//!
//! Weights are stacked task-major: coordinate `(t, j)` lives at `t * d + j`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{build_mtl_groups, GroupPartition, LinearModel, Penalty, RegularizerSpec, TaskCollection, TrialSet};
use crate::error::{check_dim, Error, Result};
use crate::prox::{prox_group_l2, regularizer_value};
use crate::solver::{fit, run_fbs, Composite, FitDiagnostics, SolveSettings};
use crate::smooth::MultiTaskSmooth;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlSpec {
    /// Strength of the cross-task sensor group penalty.
    pub lambda_r: f64,
    /// Strength of the similarity-to-average penalty.
    pub lambda_s: f64,
}

impl MtlSpec {
    pub fn new(lambda_r: f64, lambda_s: f64) -> Result<Self> {
        for (name, v) in [("lambda_r", lambda_r), ("lambda_s", lambda_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("{v} is not a finite non-negative value")));
            }
        }
        Ok(MtlSpec { lambda_r, lambda_s })
    }
}

#[derive(Clone, Debug)]
pub struct MtlModel {
    pub tasks: Vec<LinearModel>,
    pub diagnostics: FitDiagnostics,
    /// Sensor groups whose stacked block is nonzero.
    pub selected_groups: Vec<usize>,
    pub spec: MtlSpec,
}

impl MtlModel {
    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    /// `m x d` matrix whose rows are the task weight vectors.
    pub fn weight_matrix(&self) -> Array2<f64> {
        let d = self.tasks[0].dim();
        let mut w = Array2::zeros((self.m(), d));
        for (t, model) in self.tasks.iter().enumerate() {
            w.row_mut(t).assign(&model.w);
        }
        w
    }

    pub fn biases(&self) -> Vec<f64> {
        self.tasks.iter().map(|m| m.b).collect()
    }

    /// `max_t ||w_t - mean(w)||_2`.
    pub fn max_deviation_from_mean(&self) -> f64 {
        let w = self.weight_matrix();
        let mean = w.mean_axis(ndarray::Axis(0)).expect("m >= 1");
        w.rows()
            .into_iter()
            .map(|row| (&row - &mean).mapv(|v| v * v).sum().sqrt())
            .fold(0.0, f64::max)
    }
}

struct MultiTask<'a> {
    smooth: MultiTaskSmooth<'a>,
    lambda_r: f64,
    groups: GroupPartition,
}

impl Composite for MultiTask<'_> {
    fn dim(&self) -> usize {
        self.groups.dim()
    }

    fn n_bias(&self) -> usize {
        self.smooth.tasks.m()
    }

    fn smooth(&self, w: ArrayView1<f64>, b: &[f64]) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        self.smooth.value_grad(w, b)
    }

    fn penalty(&self, w: ArrayView1<f64>) -> Result<f64> {
        if self.lambda_r == 0.0 {
            return Ok(0.0);
        }
        Ok(self.lambda_r * regularizer_value(w, Penalty::GroupLq { q: 2.0 }, &self.groups)?)
    }

    fn prox(&self, u: ArrayView1<f64>, step: f64) -> Result<Array1<f64>> {
        if self.lambda_r == 0.0 {
            return Ok(u.to_owned());
        }
        Ok(prox_group_l2(u, step * self.lambda_r, &self.groups)?.x)
    }

    fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz()
    }
}

fn stack(weights: ArrayView2<f64>) -> Array1<f64> {
    Array1::from_iter(weights.iter().copied())
}

/// Full multi-task objective for weights `W` (m x d) and per-task biases.
pub fn mtl_objective(tasks: &TaskCollection, spec: &MtlSpec, weights: ArrayView2<f64>, biases: &[f64]) -> Result<f64> {
    check_dim(tasks.m(), weights.nrows())?;
    check_dim(tasks.dim(), weights.ncols())?;
    let problem = MultiTask {
        smooth: MultiTaskSmooth::new(tasks, spec.lambda_s),
        lambda_r: spec.lambda_r,
        groups: build_mtl_groups(tasks.layout(), tasks.m())?,
    };
    let w = stack(weights);
    let smooth = problem.smooth.value(w.view(), biases)?;
    Ok(smooth + problem.penalty(w.view())?)
}

/// Joint fit from zero weights and biases.
pub fn fit_mtl(tasks: &TaskCollection, spec: &MtlSpec, settings: &SolveSettings) -> Result<MtlModel> {
    let zero = Array2::zeros((tasks.m(), tasks.dim()));
    fit_mtl_from(tasks, spec, settings, zero.view(), &vec![0.0; tasks.m()])
}

pub fn fit_mtl_from(
    tasks: &TaskCollection,
    spec: &MtlSpec,
    settings: &SolveSettings,
    w0: ArrayView2<f64>,
    b0: &[f64],
) -> Result<MtlModel> {
    let spec = MtlSpec::new(spec.lambda_r, spec.lambda_s)?;
    check_dim(tasks.m(), w0.nrows())?;
    check_dim(tasks.dim(), w0.ncols())?;
    let groups = build_mtl_groups(tasks.layout(), tasks.m())?;
    let problem = MultiTask {
        smooth: MultiTaskSmooth::new(tasks, spec.lambda_s),
        lambda_r: spec.lambda_r,
        groups,
    };
    let out = run_fbs(&problem, settings, stack(w0), b0.to_vec())?;
    let selected_groups = problem.groups.nonzero_groups(out.w.view());

    let d = tasks.dim();
    let sensor = crate::data::sensor_groups(tasks.layout());
    let models = (0..tasks.m())
        .map(|t| {
            let w = out.w.slice(s![t * d..(t + 1) * d]).to_owned();
            let mut model = LinearModel::new(w, out.b[t], &sensor)?;
            model.diagnostics = out.diagnostics.clone();
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MtlModel {
        tasks: models,
        diagnostics: out.diagnostics,
        selected_groups,
        spec,
    })
}

/// One model trained on every task's trials pooled together, with one bias.
pub fn fit_pooled(
    tasks: &TaskCollection,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<LinearModel> {
    let pooled: TrialSet = tasks.pooled();
    fit(&pooled, spec, groups, settings)
}

/// Independent single-task fits, one per subject.
pub fn fit_independent(
    tasks: &TaskCollection,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<Vec<LinearModel>> {
    tasks.tasks().iter().map(|task| fit(task, spec, groups, settings)).collect()
}
