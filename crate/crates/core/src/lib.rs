//! Sparse, group-sparse, adaptive and multi-task squared-hinge classifiers
//! for selecting EEG sensors in event-related-potential decoding.
//!
//! Models are fit by forward-backward splitting: a gradient step on the
//! squared hinge loss followed by the proximal map of the penalty, which
//! zeroes whole sensor blocks exactly.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod mtl;
pub mod protocol;
pub mod prox;
pub mod selection;
pub mod smooth;
pub mod solver;
pub mod synthetic;

pub use data::{
    build_mtl_groups, load_model, load_trialset, save_model, sensor_groups, GroupPartition, GroupWeight,
    LinearModel, Penalty, RegularizerSpec, SensorLayout, TaskCollection, TrialSet,
};
pub use error::{Error, Result};
pub use mtl::{fit_mtl, fit_pooled, MtlModel, MtlSpec};
pub use selection::{cv_select, cv_select_mtl, kfold_split, CvReport, GridPoint, GridSpec};
pub use solver::{fbs_solve, fit, fit_adaptive, FitDiagnostics, SolveSettings, StepMode, StopReason};
pub use synthetic::{generate, GroundTruth, SimConfig};
