//! TOML config overlay. Sections mirror the library config structs;
//! explicit command-line flags always win over file values. Unknown keys
//! anywhere are errors.

use painrec_core::data::{ClassLabel, SynthConfig};
use painrec_core::eval::{Classifier, FeatureSet};
use painrec_core::nn::TrainConfig;
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: Option<SynthConfig>,
    pub train: Option<TrainConfig>,
    pub extract: Option<ExtractSection>,
    pub run: Option<RunSection>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    pub band_low: Option<f64>,
    pub band_high: Option<f64>,
    pub filter_order: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub l2: Option<f64>,
    pub svm_c: Option<f64>,
    pub shared_width: Option<usize>,
    pub task_width: Option<usize>,
    pub grid_search: Option<bool>,
    pub classifier: Option<Classifier>,
    pub task: Option<ClassLabel>,
    pub features: Option<FeatureSet>,
}

impl RunSection {
    pub fn classifier(&self) -> Option<Classifier> {
        self.classifier
    }

    pub fn task(&self) -> Option<ClassLabel> {
        self.task
    }

    pub fn features(&self) -> Option<FeatureSet> {
        self.features
    }
}
