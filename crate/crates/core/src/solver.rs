//! Forward-backward splitting for `min_{w,b} f1(w, b) + lambda * Omega(w)`.
//!
//! Each iteration takes a gradient step on the smooth part (the squared
//! hinge loss, plus the ridge term for the L2 family) and then applies the
//! proximal map of the penalty to `w`. The bias is never penalized and is
//! updated by the gradient step alone, with the same step size.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{GroupPartition, LinearModel, Penalty, RegularizerSpec, TrialSet};
use crate::error::{check_dim, Error, Result};
use crate::prox::{adaptive_weights, prox_penalty, regularizer_value};
use crate::smooth::SingleTaskSmooth;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `gamma = 1 / L` with `L` the global gradient Lipschitz bound.
    Fixed,
    /// Sufficient-decrease backtracking, never exceeding the global bound.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub max_iterations: usize,
    pub rel_objective_tol: f64,
    pub step_mode: StepMode,
    /// Nesterov momentum on the forward step. Traces are not monotone in this mode.
    #[serde(default)]
    pub accelerated: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            max_iterations: 10_000,
            rel_objective_tol: 1e-6,
            step_mode: StepMode::Fixed,
            accelerated: false,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        if !(self.rel_objective_tol.is_finite() && self.rel_objective_tol > 0.0) {
            return Err(Error::invalid(
                "rel_objective_tol",
                format!("{} is not a positive real", self.rel_objective_tol),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    NotFitted,
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    pub stop_reason: StopReason,
    /// Global gradient Lipschitz bound of the smooth part.
    pub lipschitz: f64,
    /// Objective at the initial point followed by one value per iteration.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl FitDiagnostics {
    /// Largest increase between consecutive trace entries, relative to
    /// `max(1, |previous|)`. Zero or negative means the trace never went up.
    pub fn max_relative_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective_trace.len() < 2 || self.max_relative_increase() <= slack
    }
}

/// A composite problem `smooth(w, b) + penalty(w)` with a cheap proximal map.
pub(crate) trait Composite {
    fn dim(&self) -> usize;
    fn n_bias(&self) -> usize;
    /// Smooth value, gradient in `w`, gradient in the biases.
    fn smooth(&self, w: ArrayView1<f64>, b: &[f64]) -> Result<(f64, Array1<f64>, Vec<f64>)>;
    /// Penalty value including its strength.
    fn penalty(&self, w: ArrayView1<f64>) -> Result<f64>;
    /// Proximal map of `step * penalty`.
    fn prox(&self, u: ArrayView1<f64>, step: f64) -> Result<Array1<f64>>;
    fn lipschitz(&self) -> f64;
}

pub(crate) struct FbsOutput {
    pub w: Array1<f64>,
    pub b: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

struct Point {
    w: Array1<f64>,
    b: Vec<f64>,
    smooth: f64,
    grad_w: Array1<f64>,
    grad_b: Vec<f64>,
}

impl Point {
    fn at<P: Composite>(problem: &P, w: Array1<f64>, b: Vec<f64>) -> Result<Self> {
        let (smooth, grad_w, grad_b) = problem.smooth(w.view(), &b)?;
        Ok(Point {
            w,
            b,
            smooth,
            grad_w,
            grad_b,
        })
    }

    /// Proximal gradient step with step size `1 / l`.
    fn step<P: Composite>(&self, problem: &P, l: f64) -> Result<(Array1<f64>, Vec<f64>)> {
        let gamma = 1.0 / l;
        let mut u = self.w.clone();
        u.scaled_add(-gamma, &self.grad_w);
        let w = problem.prox(u.view(), gamma)?;
        let b = self
            .b
            .iter()
            .zip(&self.grad_b)
            .map(|(b, g)| b - gamma * g)
            .collect();
        Ok((w, b))
    }

    /// Quadratic upper model of the smooth part at `(w, b)` around `self`.
    fn upper_model(&self, w: &Array1<f64>, b: &[f64], l: f64) -> f64 {
        let dw = w - &self.w;
        let mut lin = self.grad_w.dot(&dw);
        let mut sq = dw.dot(&dw);
        for ((bn, bo), g) in b.iter().zip(&self.b).zip(&self.grad_b) {
            let db = bn - bo;
            lin += g * db;
            sq += db * db;
        }
        self.smooth + lin + 0.5 * l * sq
    }
}

pub(crate) fn run_fbs<P: Composite>(
    problem: &P,
    settings: &SolveSettings,
    w0: Array1<f64>,
    b0: Vec<f64>,
) -> Result<FbsOutput> {
    settings.validate()?;
    check_dim(problem.dim(), w0.len())?;
    check_dim(problem.n_bias(), b0.len())?;
    if w0.iter().chain(&b0).any(|v| !v.is_finite()) {
        return Err(Error::invalid("w0", "initial point must be finite"));
    }
    let lipschitz = problem.lipschitz();
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(Error::Data(format!("invalid Lipschitz bound {lipschitz}")));
    }

    let mut current = Point::at(problem, w0, b0)?;
    let mut objective = current.smooth + problem.penalty(current.w.view())?;
    if !objective.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            value: objective,
        });
    }
    let mut trace = vec![objective];
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;

    // Backtracking state.
    let mut local_l = lipschitz / 1024.0;
    // Momentum state: extrapolated point and its sequence parameter.
    let mut theta: f64 = 1.0;
    let mut previous_w = current.w.clone();
    let mut previous_b = current.b.clone();

    for k in 1..=settings.max_iterations {
        iterations = k;
        let next = if settings.accelerated {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            theta = theta_next;
            let yw = &current.w + &((&current.w - &previous_w) * beta);
            let yb: Vec<f64> = current
                .b
                .iter()
                .zip(&previous_b)
                .map(|(c, p)| c + beta * (c - p))
                .collect();
            let anchor = Point::at(problem, yw, yb)?;
            let (w, b) = anchor.step(problem, lipschitz)?;
            previous_w = current.w.clone();
            previous_b = current.b.clone();
            Point::at(problem, w, b)?
        } else {
            match settings.step_mode {
                StepMode::Fixed => {
                    let (w, b) = current.step(problem, lipschitz)?;
                    Point::at(problem, w, b)?
                }
                StepMode::Backtracking => loop {
                    let (w, b) = current.step(problem, local_l)?;
                    let bound = current.upper_model(&w, &b, local_l);
                    let candidate = Point::at(problem, w, b)?;
                    if local_l >= lipschitz || candidate.smooth <= bound {
                        break candidate;
                    }
                    local_l = (2.0 * local_l).min(lipschitz);
                },
            }
        };

        let next_objective = next.smooth + problem.penalty(next.w.view())?;
        if !next_objective.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                value: next_objective,
            });
        }
        trace.push(next_objective);
        let change = (objective - next_objective).abs() / objective.abs().max(1.0);
        current = next;
        objective = next_objective;
        if change < settings.rel_objective_tol {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    Ok(FbsOutput {
        w: current.w,
        b: current.b,
        diagnostics: FitDiagnostics {
            iterations,
            final_objective: objective,
            stop_reason,
            lipschitz,
            objective_trace: trace,
        },
    })
}

struct SingleTask<'a> {
    smooth: SingleTaskSmooth<'a>,
    spec: RegularizerSpec,
    groups: &'a GroupPartition,
}

impl<'a> SingleTask<'a> {
    fn new(data: &'a TrialSet, spec: RegularizerSpec, groups: &'a GroupPartition) -> Result<Self> {
        spec.validate()?;
        check_dim(data.dim(), groups.dim())?;
        let l2 = if spec.penalty == Penalty::L2 { spec.lambda } else { 0.0 };
        Ok(SingleTask {
            smooth: SingleTaskSmooth::new(data, l2),
            spec,
            groups,
        })
    }
}

impl Composite for SingleTask<'_> {
    fn dim(&self) -> usize {
        self.smooth.data.dim()
    }

    fn n_bias(&self) -> usize {
        1
    }

    fn smooth(&self, w: ArrayView1<f64>, b: &[f64]) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        let (v, gw, gb) = self.smooth.value_grad(w, b[0])?;
        Ok((v, gw, vec![gb]))
    }

    fn penalty(&self, w: ArrayView1<f64>) -> Result<f64> {
        match self.spec.penalty {
            // Carried by the smooth part.
            Penalty::L2 => Ok(0.0),
            p => Ok(self.spec.lambda * regularizer_value(w, p, self.groups)?),
        }
    }

    fn prox(&self, u: ArrayView1<f64>, step: f64) -> Result<Array1<f64>> {
        Ok(prox_penalty(u, step * self.spec.lambda, self.spec.penalty, self.groups)?.x)
    }

    fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz()
    }
}

/// Full training objective: squared hinge loss plus `lambda * Omega(w)`.
pub fn objective(
    data: &TrialSet,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    w: ArrayView1<f64>,
    b: f64,
) -> Result<f64> {
    let problem = SingleTask::new(data, *spec, groups)?;
    let (smooth, _, _) = problem.smooth(w, &[b])?;
    Ok(smooth + problem.penalty(w)?)
}

/// Forward-backward splitting from `w = 0, b = 0`.
///
/// The weights carried by `groups` are used as given, so an adaptive
/// second stage is just a call with a reweighted partition.
pub fn fbs_solve(
    data: &TrialSet,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<LinearModel> {
    fbs_solve_from(data, spec, groups, settings, Array1::zeros(data.dim()).view(), 0.0)
}

/// Forward-backward splitting from a given starting point.
pub fn fbs_solve_from(
    data: &TrialSet,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
    w0: ArrayView1<f64>,
    b0: f64,
) -> Result<LinearModel> {
    let problem = SingleTask::new(data, *spec, groups)?;
    let out = run_fbs(&problem, settings, w0.to_owned(), vec![b0])?;
    let mut model = LinearModel::new(out.w, out.b[0], groups)?;
    model.regularizer = Some(*spec);
    model.diagnostics = out.diagnostics;
    Ok(model)
}

/// Both stages of an adaptive fit.
#[derive(Clone, Debug)]
pub struct AdaptiveFit {
    pub stage_one: LinearModel,
    pub weighted_groups: GroupPartition,
    pub model: LinearModel,
}

/// Two-stage adaptive mixed-norm fit: an unweighted l1-lq fit gives `w*`,
/// then the problem is re-solved with `beta_g = 1 / ||w*_g||_q` at the same
/// `lambda`, warm-started from `w*`.
pub fn fit_adaptive(
    data: &TrialSet,
    q: f64,
    lambda: f64,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<LinearModel> {
    let zero = Array1::zeros(data.dim());
    Ok(fit_adaptive_from(data, q, lambda, groups, settings, zero.view(), 0.0)?.model)
}

pub fn fit_adaptive_from(
    data: &TrialSet,
    q: f64,
    lambda: f64,
    groups: &GroupPartition,
    settings: &SolveSettings,
    w0: ArrayView1<f64>,
    b0: f64,
) -> Result<AdaptiveFit> {
    let unit = groups.unit_weights();
    let first = RegularizerSpec::group_lq(q, lambda)?;
    let stage_one = fbs_solve_from(data, &first, &unit, settings, w0, b0)?;
    let weighted_groups = adaptive_weights(stage_one.w.view(), &unit, q)?;
    let second = RegularizerSpec::adaptive(q, lambda)?;
    let mut model = fbs_solve_from(
        data,
        &second,
        &weighted_groups,
        settings,
        stage_one.w.view(),
        stage_one.b,
    )?;
    // Report selection against the plain sensor partition.
    model.selected_groups = groups.nonzero_groups(model.w.view());
    Ok(AdaptiveFit {
        stage_one,
        weighted_groups,
        model,
    })
}

/// Fits any regularizer family; the adaptive family runs both stages.
pub fn fit(
    data: &TrialSet,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    settings: &SolveSettings,
) -> Result<LinearModel> {
    match spec.penalty {
        Penalty::AdaptiveGroupLq { q } => fit_adaptive(data, q, spec.lambda, groups, settings),
        _ => fbs_solve(data, spec, groups, settings),
    }
}

/// One more fixed-step iteration from `(w, b)`; used to check fixed points.
pub fn fbs_step(
    data: &TrialSet,
    spec: &RegularizerSpec,
    groups: &GroupPartition,
    w: ArrayView1<f64>,
    b: f64,
) -> Result<(Array1<f64>, f64)> {
    let problem = SingleTask::new(data, *spec, groups)?;
    let point = Point::at(&problem, w.to_owned(), vec![b])?;
    let (w, b) = point.step(&problem, problem.lipschitz())?;
    Ok((w, b[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sensor_groups, SensorLayout};
    use crate::smooth::sq_hinge_value;
    use ndarray::{array, Array2};

    fn separable() -> TrialSet {
        TrialSet::new(
            array![[1.0, 0.0], [-1.0, 0.0]],
            array![1.0, -1.0],
            SensorLayout::new(2, 1).unwrap(),
        )
        .unwrap()
    }

    fn noisy(n: usize, seed: u64) -> TrialSet {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layout = SensorLayout::new(3, 2).unwrap();
        let mut x = Array2::zeros((n, 6));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let label = if rng.random::<f64>() < 0.4 { 1.0 } else { -1.0 };
            y[i] = label;
            for j in 0..6 {
                let signal = if j < 2 && label > 0.0 { 0.8 } else { 0.0 };
                x[[i, j]] = signal + rng.random::<f64>() - 0.5;
            }
        }
        TrialSet::new(x, y, layout).unwrap()
    }

    #[test]
    fn separable_case_is_classified() {
        let data = separable();
        let groups = sensor_groups(data.layout());
        let model = fbs_solve(&data, &RegularizerSpec::l1(1e-3).unwrap(), &groups, &SolveSettings::default()).unwrap();
        assert_eq!(model.diagnostics.stop_reason, StopReason::Converged);
        let s = model.decision_values(&data).unwrap();
        assert!(s[0] > 0.0 && s[1] < 0.0);
    }

    #[test]
    fn huge_lambda_zeroes_weights_and_fits_bias() {
        let data = noisy(60, 1);
        let groups = sensor_groups(data.layout());
        let n_pos = data.n_positive() as f64;
        let n = data.n() as f64;
        // Loss in b alone is n+(1-b)^2 + n-(1+b)^2, minimized at (n+ - n-)/n.
        let b_star = (2.0 * n_pos - n) / n;
        for spec in [
            RegularizerSpec::l1(1e6).unwrap(),
            RegularizerSpec::group_l2(1e6).unwrap(),
            RegularizerSpec::group_lq(1.5, 1e6).unwrap(),
        ] {
            let model = fbs_solve(&data, &spec, &groups, &SolveSettings::default()).unwrap();
            assert!(model.w.iter().all(|v| *v == 0.0));
            assert!(model.selected_groups.is_empty());
            assert!((model.b - b_star).abs() < 1e-3, "{} vs {b_star}", model.b);
        }
    }

    #[test]
    fn objective_examples() {
        let data = noisy(40, 2);
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::group_l2(0.5).unwrap();
        let zero = Array1::zeros(6);
        assert_eq!(objective(&data, &spec, &groups, zero.view(), 0.0).unwrap(), 40.0);
        let model = fbs_solve(&data, &spec, &groups, &SolveSettings::default()).unwrap();
        assert!(model.diagnostics.final_objective <= 40.0);
        assert!(model.diagnostics.is_monotone(1e-12));
        let direct = objective(&data, &spec, &groups, model.w.view(), model.b).unwrap();
        assert_eq!(direct, model.diagnostics.final_objective);
    }

    #[test]
    fn l2_objective_includes_half_squared_norm() {
        let data = separable();
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::l2(2.0).unwrap();
        let w = array![3.0, 4.0];
        let loss = sq_hinge_value(w.view(), 0.5, &data).unwrap();
        assert_eq!(objective(&data, &spec, &groups, w.view(), 0.5).unwrap(), loss + 25.0);
        let model = fbs_solve(&data, &spec, &groups, &SolveSettings::default()).unwrap();
        assert_eq!(model.selected_groups, vec![0]);
    }

    #[test]
    fn converged_model_is_a_fixed_point() {
        let data = noisy(80, 3);
        let groups = sensor_groups(data.layout());
        let settings = SolveSettings {
            rel_objective_tol: 1e-12,
            max_iterations: 100_000,
            ..Default::default()
        };
        for spec in [
            RegularizerSpec::l1(2.0).unwrap(),
            RegularizerSpec::group_l2(2.0).unwrap(),
            RegularizerSpec::group_lq(1.3, 2.0).unwrap(),
        ] {
            let model = fbs_solve(&data, &spec, &groups, &settings).unwrap();
            let (w, b) = fbs_step(&data, &spec, &groups, model.w.view(), model.b).unwrap();
            let moved = ((&w - &model.w).mapv(|v| v * v).sum() + (b - model.b).powi(2)).sqrt();
            assert!(moved < 1e-4, "{spec:?} moved {moved}");
        }
    }

    #[test]
    fn initialization_does_not_change_the_optimum() {
        let data = noisy(80, 4);
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::group_l2(1.0).unwrap();
        let settings = SolveSettings {
            rel_objective_tol: 1e-12,
            max_iterations: 100_000,
            ..Default::default()
        };
        let a = fbs_solve(&data, &spec, &groups, &settings).unwrap();
        let w0 = array![0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
        let b = fbs_solve_from(&data, &spec, &groups, &settings, w0.view(), 0.4).unwrap();
        let (fa, fb) = (a.diagnostics.final_objective, b.diagnostics.final_objective);
        assert!((fa - fb).abs() / fa.max(1.0) < 1e-4);
    }

    #[test]
    fn backtracking_and_momentum_reach_the_same_objective() {
        let data = noisy(80, 5);
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::group_l2(1.0).unwrap();
        let tight = SolveSettings {
            rel_objective_tol: 1e-12,
            max_iterations: 100_000,
            ..Default::default()
        };
        let fixed = fbs_solve(&data, &spec, &groups, &tight).unwrap();
        let bt = fbs_solve(&data, &spec, &groups, &SolveSettings { step_mode: StepMode::Backtracking, ..tight }).unwrap();
        assert!(bt.diagnostics.is_monotone(1e-12));
        let acc = fbs_solve(&data, &spec, &groups, &SolveSettings { accelerated: true, ..tight }).unwrap();
        let f = fixed.diagnostics.final_objective;
        for other in [bt.diagnostics.final_objective, acc.diagnostics.final_objective] {
            assert!((other - f).abs() / f < 1e-6, "{other} vs {f}");
        }
    }

    #[test]
    fn adaptive_keeps_eliminated_groups_at_zero() {
        let data = noisy(100, 6);
        let groups = sensor_groups(data.layout());
        let settings = SolveSettings::default();
        let zero = Array1::zeros(6);
        let fit = fit_adaptive_from(&data, 2.0, 3.0, &groups, &settings, zero.view(), 0.0).unwrap();
        for g in 0..groups.len() {
            if !fit.stage_one.selected_groups.contains(&g) {
                assert!(!fit.model.selected_groups.contains(&g));
            }
        }
        assert!(fit.model.selected_groups.len() <= fit.stage_one.selected_groups.len());
    }

    #[test]
    fn adaptive_with_unit_norm_blocks_is_unchanged() {
        let data = noisy(60, 7);
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::group_l2(0.8).unwrap();
        let settings = SolveSettings {
            rel_objective_tol: 1e-12,
            max_iterations: 100_000,
            ..Default::default()
        };
        let plain = fbs_solve(&data, &spec, &groups, &settings).unwrap();
        // Unit-norm blocks give beta = 1: the second stage solves the same problem.
        let unit = adaptive_weights(array![1.0, 0.0, 0.6, 0.8, 0.0, 1.0].view(), &groups, 2.0).unwrap();
        assert!(unit.weights().iter().all(|w| *w == crate::data::GroupWeight::Active(1.0)));
        let again = fbs_solve_from(
            &data,
            &RegularizerSpec::adaptive(2.0, 0.8).unwrap(),
            &unit,
            &settings,
            plain.w.view(),
            plain.b,
        )
        .unwrap();
        assert!((&again.w - &plain.w).iter().all(|d| d.abs() < 1e-4));
    }

    #[test]
    fn rejects_bad_settings_and_dims() {
        let data = separable();
        let groups = sensor_groups(data.layout());
        let spec = RegularizerSpec::l1(1.0).unwrap();
        let bad = SolveSettings { max_iterations: 0, ..Default::default() };
        assert!(fbs_solve(&data, &spec, &groups, &bad).is_err());
        let w0 = array![1.0];
        assert!(fbs_solve_from(&data, &spec, &groups, &SolveSettings::default(), w0.view(), 0.0).is_err());
    }
}
