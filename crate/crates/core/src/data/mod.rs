//! Dataset model for the stimulation-window experiment: subjects, the five
//! intensity classes, 5.5 s signal windows, CSV ingestion, stratified
//! k-fold splitting, and a seeded synthetic generator.

mod csv_io;
mod split;
mod synth;

pub use csv_io::{
    load_csv, load_csv_path, save_feature_csv, save_ground_truth_csv, save_raw_csv,
};
pub use split::kfold_split;
pub use synth::{synthesize_dataset, synthesize_ecg, GroundTruth, GroundTruthRecord};

use crate::features::{
    extract_window_features, ExtractionConfig, FeatureError, FeatureVector,
};
use crate::signal::{SampledSignal, SignalError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Nominal window duration; raw windows must match it to within one sample
/// period.
pub const WINDOW_DURATION_S: f64 = 5.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("CSV schema mismatch: {0}")]
    Schema(String),
    #[error("row {row}: unknown class label {label:?}")]
    Label { row: usize, label: String },
    #[error("sample must carry raw windows or features")]
    EmptySample,
    #[error(
        "window duration {got_s:.4} s differs from {WINDOW_DURATION_S} s by more than one \
         sample period"
    )]
    WindowDuration { got_s: f64 },
    #[error("k-fold requires k >= 2, got {0}")]
    InvalidK(usize),
    #[error("subject {subject:?} class {label} has {count} samples, fewer than k = {k}")]
    TooFewSamples {
        subject: String,
        label: ClassLabel,
        count: usize,
        k: usize,
    },
    #[error("positive class for a binary task must be a pain level, got {0}")]
    InvalidPositiveClass(ClassLabel),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stimulation intensity class: baseline plus four calibrated pain levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Bln,
    P1,
    P2,
    P3,
    P4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Bln,
        ClassLabel::P1,
        ClassLabel::P2,
        ClassLabel::P3,
        ClassLabel::P4,
    ];

    pub const PAIN_LEVELS: [ClassLabel; 4] = [
        ClassLabel::P1,
        ClassLabel::P2,
        ClassLabel::P3,
        ClassLabel::P4,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Bln => "BLN",
            ClassLabel::P1 => "P1",
            ClassLabel::P2 => "P2",
            ClassLabel::P3 => "P3",
            ClassLabel::P4 => "P4",
        }
    }

    /// 0 for baseline through 4 for the strongest stimulation.
    pub fn index(&self) -> usize {
        match self {
            ClassLabel::Bln => 0,
            ClassLabel::P1 => 1,
            ClassLabel::P2 => 2,
            ClassLabel::P3 => 3,
            ClassLabel::P4 => 4,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BLN" => Ok(ClassLabel::Bln),
            "P1" => Ok(ClassLabel::P1),
            "P2" => Ok(ClassLabel::P2),
            "P3" => Ok(ClassLabel::P3),
            "P4" => Ok(ClassLabel::P4),
            _ => Err(()),
        }
    }
}

/// One stimulation window: identity, class, and raw signals and/or the
/// extracted feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub label: ClassLabel,
    pub sc_window: Option<SampledSignal>,
    pub ecg_window: Option<SampledSignal>,
    pub features: Option<FeatureVector>,
}

impl Sample {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.sc_window.is_none() && self.ecg_window.is_none() && self.features.is_none() {
            return Err(DataError::EmptySample);
        }
        for window in [&self.sc_window, &self.ecg_window].into_iter().flatten() {
            let period = 1.0 / window.sample_rate_hz();
            let got = window.duration_s();
            if (got - WINDOW_DURATION_S).abs() > period + 1e-9 {
                return Err(DataError::WindowDuration { got_s: got });
            }
        }
        Ok(())
    }
}

/// An immutable collection of samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, DataError> {
        for s in &samples {
            s.validate()?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn has_features(&self) -> bool {
        self.samples.iter().all(|s| s.features.is_some())
    }

    /// Extracts features for every sample that does not already carry them.
    /// Windows where beat detection fails keep masked-invalid HRV entries;
    /// the summary counts them. Windows are processed in parallel.
    pub fn extract_features(
        &mut self,
        cfg: &ExtractionConfig,
    ) -> Result<ExtractionSummary, DataError> {
        use rayon::prelude::*;
        let per_sample: Vec<Result<ExtractionSummary, DataError>> = self
            .samples
            .par_iter_mut()
            .map(|sample| {
                let mut summary = ExtractionSummary::default();
                if sample.features.is_some() {
                    summary.n_skipped = 1;
                    return Ok(summary);
                }
                let fv = extract_window_features(
                    sample.sc_window.as_ref(),
                    sample.ecg_window.as_ref(),
                    cfg,
                )?;
                if sample.ecg_window.is_some() && !fv.hrv_valid() {
                    summary.n_invalid_hrv = 1;
                }
                sample.features = Some(fv);
                summary.n_extracted = 1;
                Ok(summary)
            })
            .collect();

        let mut total = ExtractionSummary::default();
        for s in per_sample {
            let s = s?;
            total.n_extracted += s.n_extracted;
            total.n_skipped += s.n_skipped;
            total.n_invalid_hrv += s.n_invalid_hrv;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionSummary {
    pub n_extracted: usize,
    pub n_skipped: usize,
    /// Windows whose ECG produced no usable beat sequence.
    pub n_invalid_hrv: usize,
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of_sample: Vec<usize>,
}

impl FoldAssignment {
    pub(crate) fn new(k: usize, fold_of_sample: Vec<usize>) -> Self {
        Self { k, fold_of_sample }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, sample_index: usize) -> usize {
        self.fold_of_sample[sample_index]
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_sample.len())
            .filter(|&i| self.fold_of_sample[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_sample.len())
            .filter(|&i| self.fold_of_sample[i] != fold)
            .collect()
    }
}

/// Synthetic-dataset knobs. The generator is deterministic in `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub per_class: usize,
    pub sample_rate_hz: f64,
    /// Class-separation strength: scales the skin-conductance response
    /// amplitude (signal units) and the heart-rate shift across classes.
    pub effect_size: f64,
    /// Spread of the per-subject response gain around 1. Large values
    /// produce negative gains, i.e. subjects whose response direction is
    /// reversed, which no population decision rule can absorb.
    pub subject_heterogeneity: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 4,
            per_class: 20,
            sample_rate_hz: 512.0,
            effect_size: 1.0,
            subject_heterogeneity: 0.0,
            noise_sd: 0.05,
            seed: 0,
        }
    }
}

/// Restricts a dataset to the baseline class and one pain level, the
/// two-class view used by every reported task.
pub fn binary_view(ds: &Dataset, positive: ClassLabel) -> Result<Dataset, DataError> {
    if positive == ClassLabel::Bln {
        return Err(DataError::InvalidPositiveClass(positive));
    }
    let samples = ds
        .samples()
        .iter()
        .filter(|s| s.label == ClassLabel::Bln || s.label == positive)
        .cloned()
        .collect();
    Ok(Dataset { samples })
}

/// Binary target for a sample under a given positive class: baseline is 0,
/// the positive level is 1.
pub fn binary_target(label: ClassLabel, positive: ClassLabel) -> Option<f64> {
    if label == ClassLabel::Bln {
        Some(0.0)
    } else if label == positive {
        Some(1.0)
    } else {
        None
    }
}
