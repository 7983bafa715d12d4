//! Cross-validation harness: run any classifier over the binary tasks and
//! feature sets, aggregate per-fold accuracies, and render the results as
//! a human table or machine CSV.

use crate::baselines::{
    linear_accuracy, train_linear_svm, train_logistic, BaselineConfig, BaselineError,
};
use crate::data::{binary_target, binary_view, kfold_split, ClassLabel, DataError, Dataset};
use crate::features::{
    apply_standardization, fit_standardization, FeatureError, FeatureVector, NUM_FEATURES,
    NUM_SC_FEATURES,
};
use crate::nn::{predict_accuracy, train, NetworkSpec, NnError, TrainConfig, TrainItem};
use crate::seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("dataset has samples without features; run extraction first")]
    MissingFeatures,
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalStepError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalStepError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

/// Classifier families that can fill a table row. The RBF-kernel SVM is
/// not implemented; its row renders as `n/a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    Lr,
    SvmLinear,
    StNn,
    MtNn,
}

impl Classifier {
    pub const ALL: [Classifier; 4] = [
        Classifier::Lr,
        Classifier::SvmLinear,
        Classifier::StNn,
        Classifier::MtNn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Classifier::Lr => "LR",
            Classifier::SvmLinear => "SVM-L",
            Classifier::StNn => "ST-NN",
            Classifier::MtNn => "MT-NN",
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which feature columns feed the classifier. Fusion of the two modalities
/// is plain concatenation of their standardized columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Sc,
    Ecg,
    ScEcg,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Sc, FeatureSet::Ecg, FeatureSet::ScEcg];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSet::Sc => "SC",
            FeatureSet::Ecg => "ECG",
            FeatureSet::ScEcg => "SC+ECG",
        }
    }

    pub fn columns(&self) -> std::ops::Range<usize> {
        match self {
            FeatureSet::Sc => 0..NUM_SC_FEATURES,
            FeatureSet::Ecg => NUM_SC_FEATURES..NUM_FEATURES,
            FeatureSet::ScEcg => 0..NUM_FEATURES,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One cell of the results table: classifier x feature set x binary task,
/// evaluated by seeded k-fold cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub classifier: Classifier,
    pub feature_set: FeatureSet,
    /// Positive class; the negative class is always the baseline.
    pub task: ClassLabel,
    pub k: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<(), EvalError> {
        if self.task == ClassLabel::Bln {
            return Err(EvalError::InvalidSpec(
                "task must be a pain level, not the baseline".into(),
            ));
        }
        if self.k < 2 {
            return Err(EvalError::InvalidSpec(format!("k must be >= 2, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub accuracy: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub spec: ExperimentSpec,
    pub folds: Vec<FoldResult>,
    /// Unweighted mean of fold accuracies (folds are equal-sized by
    /// construction; with unequal folds this differs from pooled accuracy).
    pub mean_acc: f64,
    /// Sample standard deviation over folds.
    pub std_acc: f64,
    /// Windows whose HRV block is masked invalid; they stay in the data
    /// with zeroed ECG features rather than being dropped.
    pub n_invalid_hrv: usize,
}

/// Whether standardization statistics are fitted per training fold or once
/// on the full dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardizationScope {
    /// Fit on each fold's training partition only (no train/test leakage).
    FoldLocal,
    /// Fit once on everything; kept for comparison runs.
    Global,
}

/// Hyperparameters that the experiment spec does not pin down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Ridge strength for logistic regression.
    pub l2: f64,
    /// Hinge-loss weight for the linear SVM.
    pub svm_c: f64,
    pub shared_width: usize,
    pub task_width: usize,
    pub standardization: StandardizationScope,
    /// Inner 3-fold grid search over {0.01, 0.1, 1, 10} for l2 / svm_c.
    pub grid_search: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            l2: 1e-3,
            svm_c: 1.0,
            shared_width: 32,
            task_width: 8,
            standardization: StandardizationScope::FoldLocal,
            grid_search: false,
        }
    }
}

fn project(rows: &[FeatureVector], set: FeatureSet) -> Vec<Vec<f64>> {
    let cols = set.columns();
    rows.iter()
        .map(|r| r.values()[cols.clone()].to_vec())
        .collect()
}

struct FoldData {
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    subj_train: Vec<String>,
    x_test: Vec<Vec<f64>>,
    y_test: Vec<f64>,
    subj_test: Vec<String>,
}

fn assemble_fold(
    view: &Dataset,
    positive: ClassLabel,
    train_idx: &[usize],
    test_idx: &[usize],
    set: FeatureSet,
    scope: StandardizationScope,
) -> Result<FoldData, EvalStepError> {
    let rows_of = |idx: &[usize]| -> Vec<FeatureVector> {
        idx.iter()
            .map(|&i| view.samples()[i].features.clone().expect("features checked"))
            .collect()
    };
    let mut train_rows = rows_of(train_idx);
    let mut test_rows = rows_of(test_idx);

    let stats = match scope {
        StandardizationScope::FoldLocal => fit_standardization(&train_rows)?,
        StandardizationScope::Global => {
            let all: Vec<FeatureVector> = view
                .samples()
                .iter()
                .map(|s| s.features.clone().expect("features checked"))
                .collect();
            fit_standardization(&all)?
        }
    };
    apply_standardization(&mut train_rows, &stats);
    apply_standardization(&mut test_rows, &stats);

    let labels = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .map(|&i| binary_target(view.samples()[i].label, positive).expect("binary view"))
            .collect()
    };
    let subjects = |idx: &[usize]| -> Vec<String> {
        idx.iter()
            .map(|&i| view.samples()[i].subject_id.clone())
            .collect()
    };

    Ok(FoldData {
        x_train: project(&train_rows, set),
        y_train: labels(train_idx),
        subj_train: subjects(train_idx),
        x_test: project(&test_rows, set),
        y_test: labels(test_idx),
        subj_test: subjects(test_idx),
    })
}

const GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Inner 3-fold accuracy sweep over [`GRID`], used for both l2 and c.
fn grid_pick(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &BaselineConfig,
    train_one: impl Fn(&[Vec<f64>], &[f64], f64, &BaselineConfig) -> Result<
        crate::baselines::LinearModel,
        BaselineError,
    >,
) -> Result<f64, BaselineError> {
    let mut best = (GRID[0], -1.0);
    for &candidate in &GRID {
        let mut accs = Vec::new();
        for fold in 0..3 {
            let test_sel: Vec<usize> = (0..x.len()).filter(|i| i % 3 == fold).collect();
            let train_sel: Vec<usize> = (0..x.len()).filter(|i| i % 3 != fold).collect();
            let xt: Vec<Vec<f64>> = train_sel.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = train_sel.iter().map(|&i| y[i]).collect();
            let xv: Vec<Vec<f64>> = test_sel.iter().map(|&i| x[i].clone()).collect();
            let yv: Vec<f64> = test_sel.iter().map(|&i| y[i]).collect();
            match train_one(&xt, &yt, candidate, cfg) {
                Ok(model) => accs.push(linear_accuracy(&model, &xv, &yv)?),
                Err(BaselineError::SingleClassData) => continue,
                Err(e) => return Err(e),
            }
        }
        let mean = if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        };
        if mean > best.1 {
            best = (candidate, mean);
        }
    }
    Ok(best.0)
}

fn nn_items(x: &[Vec<f64>], y: &[f64], subjects: &[String], pooled: bool) -> Vec<TrainItem> {
    x.iter()
        .zip(y)
        .zip(subjects)
        .map(|((xi, &yi), subject)| TrainItem {
            x: xi.clone(),
            y: yi,
            task_id: if pooled {
                "pooled".to_string()
            } else {
                subject.clone()
            },
        })
        .collect()
}

fn run_fold(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    view: &Dataset,
    fold: usize,
    data: FoldData,
) -> Result<FoldResult, EvalStepError> {
    let fold_seed = seed::derive(spec.seed, "fold", fold as u64);
    let accuracy = match spec.classifier {
        Classifier::Lr => {
            let l2 = if opts.grid_search {
                grid_pick(&data.x_train, &data.y_train, &opts.baseline, train_logistic)?
            } else {
                opts.l2
            };
            let model = train_logistic(&data.x_train, &data.y_train, l2, &opts.baseline)?;
            linear_accuracy(&model, &data.x_test, &data.y_test)?
        }
        Classifier::SvmLinear => {
            let c = if opts.grid_search {
                grid_pick(&data.x_train, &data.y_train, &opts.baseline, train_linear_svm)?
            } else {
                opts.svm_c
            };
            let model = train_linear_svm(&data.x_train, &data.y_train, c, &opts.baseline)?;
            linear_accuracy(&model, &data.x_test, &data.y_test)?
        }
        Classifier::StNn => {
            let dim = spec.feature_set.columns().len();
            let net_spec =
                NetworkSpec::single_task(dim, vec![opts.shared_width], vec![opts.task_width])?;
            let cfg = TrainConfig {
                seed: fold_seed,
                ..opts.train
            };
            let items = nn_items(&data.x_train, &data.y_train, &data.subj_train, true);
            let (params, _) = train(&net_spec, &cfg, &items)?;
            let test = nn_items(&data.x_test, &data.y_test, &data.subj_test, true);
            predict_accuracy(&params, &net_spec, &test)?
        }
        Classifier::MtNn => {
            let dim = spec.feature_set.columns().len();
            let net_spec = NetworkSpec::new(
                dim,
                vec![opts.shared_width],
                vec![opts.task_width],
                view.subjects(),
            )?;
            let cfg = TrainConfig {
                seed: fold_seed,
                ..opts.train
            };
            let items = nn_items(&data.x_train, &data.y_train, &data.subj_train, false);
            let (params, _) = train(&net_spec, &cfg, &items)?;
            let test = nn_items(&data.x_test, &data.y_test, &data.subj_test, false);
            predict_accuracy(&params, &net_spec, &test)?
        }
    };
    Ok(FoldResult {
        fold_index: fold,
        accuracy,
        n_test: data.y_test.len(),
    })
}

/// Runs one experiment: binary view, within-subject k-fold, per-fold
/// standardization fit on the training partition, classifier training,
/// test accuracy. Folds execute in parallel; results are deterministic in
/// the experiment seed regardless of thread count.
pub fn run_experiment(
    spec: &ExperimentSpec,
    ds: &Dataset,
    opts: &RunOptions,
) -> Result<CvReport, EvalError> {
    spec.validate()?;
    if !ds.has_features() {
        return Err(EvalError::MissingFeatures);
    }
    let view = binary_view(ds, spec.task)?;
    let folds = kfold_split(&view, spec.k, seed::derive(spec.seed, "kfold", 0))?;

    let n_invalid_hrv = view
        .samples()
        .iter()
        .filter(|s| {
            s.features
                .as_ref()
                .map(|f| !f.hrv_valid())
                .unwrap_or(false)
        })
        .count();

    let fold_results: Vec<Result<FoldResult, EvalError>> = (0..spec.k)
        .into_par_iter()
        .map(|fold| {
            let data = assemble_fold(
                &view,
                spec.task,
                &folds.train_indices(fold),
                &folds.test_indices(fold),
                spec.feature_set,
                opts.standardization,
            )
            .map_err(|e| EvalError::Fold {
                fold,
                source: Box::new(e),
            })?;
            run_fold(spec, opts, &view, fold, data).map_err(|e| EvalError::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect();

    let mut results = Vec::with_capacity(spec.k);
    for r in fold_results {
        results.push(r?);
    }

    let mean_acc = results.iter().map(|f| f.accuracy).sum::<f64>() / results.len() as f64;
    let var = results
        .iter()
        .map(|f| (f.accuracy - mean_acc).powi(2))
        .sum::<f64>()
        / (results.len() - 1) as f64;
    Ok(CvReport {
        spec: *spec,
        folds: results,
        mean_acc,
        std_acc: var.sqrt(),
        n_invalid_hrv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Human,
    Csv,
}

/// Formats a mean/std pair as the table cell convention: percent with two
/// decimals, std in parentheses.
fn cell(mean: f64, std: f64) -> String {
    format!("{:.2}({:.2})", mean * 100.0, std * 100.0)
}

/// Renders collected reports either as the human results table (rows
/// grouped by task, one line per classifier, one column per feature set)
/// or as per-fold CSV.
pub fn report_table(reports: &[CvReport], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut out = String::from("task,classifier,feature_set,fold,accuracy\n");
            for r in reports {
                for f in &r.folds {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        r.spec.task, r.spec.classifier, r.spec.feature_set, f.fold_index, f.accuracy
                    ));
                }
            }
            out
        }
        TableFormat::Human => {
            let mut out = String::new();
            let header = format!(
                "{:<11} {:<8} {:<14} {:<14} {:<14}",
                "Task", "ML", "SC", "ECG", "SC+ECG"
            );
            out.push_str(header.trim_end());
            out.push('\n');
            out.push_str(&"-".repeat(64));
            out.push('\n');
            let tasks = [ClassLabel::P4, ClassLabel::P3, ClassLabel::P2, ClassLabel::P1];
            for task in tasks {
                if !reports.iter().any(|r| r.spec.task == task) {
                    continue;
                }
                let mut first = true;
                for classifier_row in ["LR", "SVM-L", "SVM-RBF", "ST-NN", "MT-NN"] {
                    let label = if first {
                        format!("BLN vs {task}")
                    } else {
                        String::new()
                    };
                    first = false;
                    let mut line = format!("{label:<11} {classifier_row:<8}");
                    for set in FeatureSet::ALL {
                        let text = if classifier_row == "SVM-RBF" {
                            "n/a".to_string()
                        } else {
                            reports
                                .iter()
                                .find(|r| {
                                    r.spec.task == task
                                        && r.spec.classifier.as_str() == classifier_row
                                        && r.spec.feature_set == set
                                })
                                .map(|r| cell(r.mean_acc, r.std_acc))
                                .unwrap_or_else(|| "-".to_string())
                        };
                        line.push_str(&format!(" {text:<14}"));
                    }
                    out.push_str(line.trim_end());
                    out.push('\n');
                }
            }
            out
        }
    }
}

/// Writes the machine-readable results into a directory: per-fold rows,
/// a summary with mean/std per experiment, and the human table.
pub fn write_reports(dir: &Path, reports: &[CvReport]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("folds.csv"), report_table(reports, TableFormat::Csv))?;

    let mut summary =
        String::from("task,classifier,feature_set,mean_acc,std_acc,n_folds,n_invalid_hrv\n");
    for r in reports {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.spec.task,
            r.spec.classifier,
            r.spec.feature_set,
            r.mean_acc,
            r.std_acc,
            r.folds.len(),
            r.n_invalid_hrv
        ));
    }
    std::fs::write(dir.join("summary.csv"), summary)?;
    std::fs::write(
        dir.join("table.txt"),
        report_table(reports, TableFormat::Human),
    )?;
    Ok(())
}
