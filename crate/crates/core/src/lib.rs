//! Pain recognition from peripheral physiology: skin-conductance and ECG
//! windows in, 17 hand-crafted features out, classified by pooled linear
//! baselines and by neural networks with person-specific output heads.
//!
//! The crate is organised as a pipeline:
//!
//! - [`signal`]: zero-phase Butterworth filtering, R-peak detection,
//!   inter-beat intervals.
//! - [`features`]: the 12 skin-conductance and 5 heart-rate-variability
//!   features plus train-set standardization.
//! - [`data`]: dataset model, CSV ingestion, stratified k-fold splitting,
//!   and a seeded synthetic generator used as ground truth in tests.
//! - [`nn`]: dense networks trained by backpropagation — single-task, or
//!   multi-task with a shared trunk and one hidden layer + sigmoid head per
//!   subject.
//! - [`baselines`]: pooled logistic regression and linear-kernel SVM.
//! - [`eval`]: cross-validation orchestration and table/CSV reporting.

pub mod baselines;
pub mod data;
pub mod eval;
pub mod features;
pub mod model_io;
pub mod nn;
pub mod seed;
pub mod signal;

pub use data::{ClassLabel, Dataset, FoldAssignment, Sample, SynthConfig};
pub use eval::{Classifier, CvReport, ExperimentSpec, FeatureSet, FoldResult};
pub use nn::{NetworkParams, NetworkSpec, TrainConfig};
pub use features::{FeatureVector, StandardizationStats, NUM_FEATURES};
pub use signal::{BandpassSpec, BeatSeries, IbiSeries, SampledSignal};
