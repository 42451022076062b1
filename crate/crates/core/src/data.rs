//! Trials, sensor layouts, group partitions, models and their file formats.
//!
//! Features are stored sensor-major: column `j` belongs to sensor `j / r`.
//! Labels are strictly `-1.0` or `+1.0`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::solver::FitDiagnostics;

/// Current version of the model file schema.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLayout {
    p: usize,
    r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor_names: Option<Vec<String>>,
}

impl SensorLayout {
    pub fn new(p: usize, r: usize) -> Result<Self> {
        let layout = SensorLayout {
            p,
            r,
            sensor_names: None,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_names(p: usize, r: usize, names: Vec<String>) -> Result<Self> {
        let layout = SensorLayout {
            p,
            r,
            sensor_names: Some(names),
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("p", "at least one sensor is required"));
        }
        if self.r == 0 {
            return Err(Error::invalid("r", "at least one feature per sensor is required"));
        }
        if let Some(names) = &self.sensor_names {
            if names.len() != self.p {
                return Err(Error::invalid(
                    "sensor_names",
                    format!("{} names for {} sensors", names.len(), self.p),
                ));
            }
        }
        Ok(())
    }

    /// Number of sensors.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Features per sensor.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.p * self.r
    }

    pub fn sensor_names(&self) -> Option<&[String]> {
        self.sensor_names.as_deref()
    }

    pub fn sensor_of(&self, column: usize) -> usize {
        column / self.r
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let layout: SensorLayout = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// A labelled set of trials sharing one sensor layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    features: Array2<f64>,
    labels: Array1<f64>,
    layout: SensorLayout,
}

impl TrialSet {
    pub fn new(features: Array2<f64>, labels: Array1<f64>, layout: SensorLayout) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::Data("a trial set needs at least one trial".into()));
        }
        check_dim(n, labels.len())?;
        if d != layout.dim() {
            return Err(Error::LayoutMismatch {
                columns: d,
                expected: layout.dim(),
            });
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(Error::LabelDomain {
                    line: i + 1,
                    value: y.to_string(),
                });
            }
        }
        for ((i, j), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line: i + 1,
                    column: j,
                });
            }
        }
        // Hot loops read rows as contiguous slices.
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().to_owned()
        };
        Ok(TrialSet {
            features,
            labels,
            layout,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn layout(&self) -> &SensorLayout {
        &self.layout
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.0).count()
    }

    pub fn n_negative(&self) -> usize {
        self.n() - self.n_positive()
    }

    /// Trials at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<TrialSet> {
        if indices.is_empty() {
            return Err(Error::Data("cannot select an empty subset of trials".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Data(format!(
                "trial index {bad} out of range for {} trials",
                self.n()
            )));
        }
        Ok(TrialSet {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            layout: self.layout.clone(),
        })
    }

    /// Stacks trial sets with identical layouts.
    pub fn concat(sets: &[&TrialSet]) -> Result<TrialSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        for s in sets {
            if s.layout.p != first.layout.p || s.layout.r != first.layout.r {
                return Err(Error::Data("trial sets have different sensor layouts".into()));
            }
        }
        let views: Vec<_> = sets.iter().map(|s| s.features.view()).collect();
        let labels: Vec<_> = sets.iter().map(|s| s.labels.view()).collect();
        Ok(TrialSet {
            features: ndarray::concatenate(Axis(0), &views).expect("same width"),
            labels: ndarray::concatenate(Axis(0), &labels).expect("1-d"),
            layout: first.layout.clone(),
        })
    }

    /// Decision values `x_i . w + b` for every trial.
    pub fn scores(&self, w: ArrayView1<f64>, b: f64) -> Result<Array1<f64>> {
        check_dim(self.dim(), w.len())?;
        Ok(self.features.dot(&w) + b)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        out.write_record(&header).map_err(|e| csv_error(path, e))?;
        let mut record = Vec::with_capacity(self.dim() + 1);
        for (row, &y) in self.features.rows().into_iter().zip(self.labels.iter()) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(if y > 0.0 { "1".into() } else { "-1".into() });
            out.write_record(&record).map_err(|e| csv_error(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Reads a trials CSV (`f0,...,f{d-1},label`) and validates it against a layout file.
pub fn load_trialset(trials_path: impl AsRef<Path>, layout_path: impl AsRef<Path>) -> Result<TrialSet> {
    let layout = SensorLayout::load(layout_path)?;
    read_trials_csv(trials_path, layout)
}

pub fn read_trials_csv(path: impl AsRef<Path>, layout: SensorLayout) -> Result<TrialSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("label") {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "header must end with a `label` column".into(),
        });
    }
    let d = header.len() - 1;
    if d != layout.dim() {
        return Err(Error::LayoutMismatch {
            columns: d,
            expected: layout.dim(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        for (column, field) in record.iter().take(d).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("column {column}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { line, column });
            }
            values.push(v);
        }
        let raw = &record[d];
        match raw.parse::<f64>() {
            Ok(y) if y == 1.0 || y == -1.0 => labels.push(y),
            _ => {
                return Err(Error::LabelDomain {
                    line,
                    value: raw.to_string(),
                })
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{} contains no trials", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row-major fill");
    TrialSet::new(features, Array1::from(labels), layout)
}

/// Per-group penalty weight. `Eliminated` pins the group to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupWeight {
    Active(f64),
    Eliminated,
}

impl GroupWeight {
    pub fn value(self) -> Option<f64> {
        match self {
            GroupWeight::Active(beta) => Some(beta),
            GroupWeight::Eliminated => None,
        }
    }
}

/// Disjoint groups covering `0..dim`, each with a penalty weight.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPartition {
    dim: usize,
    groups: Vec<Vec<usize>>,
    weights: Vec<GroupWeight>,
}

impl GroupPartition {
    pub fn new(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let weights = vec![GroupWeight::Active(1.0); groups.len()];
        Self::with_weights(dim, groups, weights)
    }

    pub fn with_weights(dim: usize, groups: Vec<Vec<usize>>, weights: Vec<GroupWeight>) -> Result<Self> {
        if weights.len() != groups.len() {
            return Err(Error::InvalidPartition(format!(
                "{} weights for {} groups",
                weights.len(),
                groups.len()
            )));
        }
        let mut seen = vec![false; dim];
        for (g, idx) in groups.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidPartition(format!("group {g} is empty")));
            }
            for &i in idx {
                if i >= dim {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} in group {g} exceeds dimension {dim}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!("index {i} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {missing} is not covered")));
        }
        for (g, w) in weights.iter().enumerate() {
            if let GroupWeight::Active(beta) = w {
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(Error::InvalidPartition(format!(
                        "group {g} has weight {beta}, expected a finite positive value"
                    )));
                }
            }
        }
        Ok(GroupPartition {
            dim,
            groups,
            weights,
        })
    }

    /// One group per coordinate.
    pub fn singletons(dim: usize) -> Self {
        GroupPartition {
            dim,
            groups: (0..dim).map(|i| vec![i]).collect(),
            weights: vec![GroupWeight::Active(1.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn weights(&self) -> &[GroupWeight] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], GroupWeight)> {
        self.groups
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    pub fn reweighted(&self, weights: Vec<GroupWeight>) -> Result<Self> {
        Self::with_weights(self.dim, self.groups.clone(), weights)
    }

    pub fn unit_weights(&self) -> Self {
        GroupPartition {
            dim: self.dim,
            groups: self.groups.clone(),
            weights: vec![GroupWeight::Active(1.0); self.groups.len()],
        }
    }

    /// Indices of groups whose block of `w` has at least one nonzero entry.
    pub fn nonzero_groups(&self, w: ArrayView1<f64>) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, idx)| idx.iter().any(|&i| w[i] != 0.0))
            .map(|(g, _)| g)
            .collect()
    }
}

/// Sensor-wise partition: group `g` holds columns `g*r .. g*r + r`.
pub fn sensor_groups(layout: &SensorLayout) -> GroupPartition {
    let r = layout.r();
    let groups = (0..layout.p()).map(|g| (g * r..(g + 1) * r).collect()).collect();
    GroupPartition::new(layout.dim(), groups).expect("sensor blocks partition the columns")
}

/// Partition over task-stacked coordinates `t*d + j`; group `g` gathers sensor `g`
/// across all `m` tasks.
pub fn build_mtl_groups(layout: &SensorLayout, m: usize) -> Result<GroupPartition> {
    if m == 0 {
        return Err(Error::invalid("m", "at least one task is required"));
    }
    let (d, r) = (layout.dim(), layout.r());
    let groups = (0..layout.p())
        .map(|g| {
            (0..m)
                .flat_map(|t| (g * r..(g + 1) * r).map(move |j| t * d + j))
                .collect()
        })
        .collect();
    GroupPartition::new(d * m, groups)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    L2,
    L1,
    GroupLq { q: f64 },
    AdaptiveGroupLq { q: f64 },
}

impl Penalty {
    pub fn q(&self) -> Option<f64> {
        match *self {
            Penalty::GroupLq { q } | Penalty::AdaptiveGroupLq { q } => Some(q),
            _ => None,
        }
    }
}

/// Regularizer family and its strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    #[serde(flatten)]
    pub penalty: Penalty,
    pub lambda: f64,
}

impl RegularizerSpec {
    pub fn new(penalty: Penalty, lambda: f64) -> Result<Self> {
        let spec = RegularizerSpec { penalty, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn l2(lambda: f64) -> Result<Self> {
        Self::new(Penalty::L2, lambda)
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(Penalty::L1, lambda)
    }

    pub fn group_lq(q: f64, lambda: f64) -> Result<Self> {
        Self::new(Penalty::GroupLq { q }, lambda)
    }

    pub fn group_l2(lambda: f64) -> Result<Self> {
        Self::group_lq(2.0, lambda)
    }

    pub fn adaptive(q: f64, lambda: f64) -> Result<Self> {
        Self::new(Penalty::AdaptiveGroupLq { q }, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("{} is not a positive real", self.lambda)));
        }
        if let Some(q) = self.penalty.q() {
            if !(1.0..=2.0).contains(&q) {
                return Err(Error::invalid("q", format!("{q} is outside [1, 2]")));
            }
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.penalty, lambda)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: Array1<f64>,
    pub b: f64,
    pub regularizer: Option<RegularizerSpec>,
    pub diagnostics: FitDiagnostics,
    pub selected_groups: Vec<usize>,
}

impl LinearModel {
    pub fn new(w: Array1<f64>, b: f64, groups: &GroupPartition) -> Result<Self> {
        check_dim(groups.dim(), w.len())?;
        let selected_groups = groups.nonzero_groups(w.view());
        Ok(LinearModel {
            w,
            b,
            regularizer: None,
            diagnostics: FitDiagnostics::default(),
            selected_groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision_values(&self, data: &TrialSet) -> Result<Array1<f64>> {
        data.scores(self.w.view(), self.b)
    }

    pub fn predict(&self, data: &TrialSet) -> Result<Array1<f64>> {
        Ok(self
            .decision_values(data)?
            .mapv(|s| if s >= 0.0 { 1.0 } else { -1.0 }))
    }

    /// Sensors whose weight block is not exactly zero.
    pub fn selected_sensors(&self, layout: &SensorLayout) -> Result<BTreeSet<usize>> {
        check_dim(layout.dim(), self.dim())?;
        Ok(self
            .w
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| layout.sensor_of(j))
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            version: MODEL_SCHEMA_VERSION,
            w: self.w.to_vec(),
            b: self.b,
            regularizer: self.regularizer,
            selected_groups: self.selected_groups.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        write_json(path.as_ref(), &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if raw.version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                raw.version
            )));
        }
        if raw.w.iter().any(|v| !v.is_finite()) || !raw.b.is_finite() {
            return Err(Error::Schema("model contains non-finite parameters".into()));
        }
        Ok(LinearModel {
            w: Array1::from(raw.w),
            b: raw.b,
            regularizer: raw.regularizer,
            diagnostics: raw.diagnostics,
            selected_groups: raw.selected_groups,
        })
    }
}

pub fn save_model(model: &LinearModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    LinearModel::load(path)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    w: Vec<f64>,
    b: f64,
    regularizer: Option<RegularizerSpec>,
    selected_groups: Vec<usize>,
    diagnostics: FitDiagnostics,
}

/// Several subjects' trials sharing one layout.
#[derive(Clone, Debug)]
pub struct TaskCollection {
    tasks: Vec<TrialSet>,
}

impl TaskCollection {
    pub fn new(tasks: Vec<TrialSet>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::Data("a task collection needs at least one task".into()))?;
        for (t, task) in tasks.iter().enumerate().skip(1) {
            if task.layout().p() != first.layout().p() || task.layout().r() != first.layout().r() {
                return Err(Error::Data(format!(
                    "task {t} layout {}x{} differs from task 0 layout {}x{}",
                    task.layout().p(),
                    task.layout().r(),
                    first.layout().p(),
                    first.layout().r()
                )));
            }
        }
        let sizes: BTreeSet<usize> = tasks.iter().map(TrialSet::n).collect();
        if sizes.len() > 1 {
            log::warn!("tasks have unequal trial counts {sizes:?}; losses are summed unweighted");
        }
        Ok(TaskCollection { tasks })
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    pub fn layout(&self) -> &SensorLayout {
        self.tasks[0].layout()
    }

    pub fn tasks(&self) -> &[TrialSet] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TrialSet {
        &self.tasks[t]
    }

    pub fn total_trials(&self) -> usize {
        self.tasks.iter().map(TrialSet::n).sum()
    }

    pub fn pooled(&self) -> TrialSet {
        let refs: Vec<&TrialSet> = self.tasks.iter().collect();
        TrialSet::concat(&refs).expect("layouts checked at construction")
    }
}

/// Per-column centring and scaling estimated on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &TrialSet) -> Self {
        let x = data.features();
        let mean = x.mean_axis(Axis(0)).expect("n >= 1");
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 { s } else { 1.0 });
        Standardizer {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        }
    }

    pub fn apply(&self, data: &TrialSet) -> Result<TrialSet> {
        check_dim(self.mean.len(), data.dim())?;
        let mut x = data.features().clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        TrialSet::new(x, data.labels().clone(), data.layout().clone())
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
