//! Mini-batch trainer: Adam (or plain SGD) on the batch-mean cross-entropy
//! with inverted dropout, per-unit max-norm projection after every update,
//! and patience-based early stopping on a stratified validation split.

use super::{
    backward, bce_loss, forward_trace, DropoutMasks, NetworkParams, NetworkSpec, NnError,
};
use crate::seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Optimization and regularization knobs. Training is deterministic given
/// the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Inverted-dropout rate on hidden activations, training only.
    pub dropout_rate: f64,
    /// Upper bound on each unit's incoming weight-row norm, enforced by
    /// projection after every update.
    pub max_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            dropout_rate: 0.2,
            max_norm: 3.0,
            patience: 10,
            validation_fraction: 0.15,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(msg.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.max_norm.is_finite() && self.max_norm > 0.0) {
            return bad("max_norm must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        Ok(())
    }
}

/// One training or test sample: features, binary label, owning task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x: Vec<f64>,
    pub y: f64,
    pub task_id: String,
}

/// What happened during a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epochs actually executed; equals the stopping epoch.
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the returned (restored) parameters.
    pub restored_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub stopped_early: bool,
}

struct AdamState {
    m: NetworkParams,
    v: NetworkParams,
    t: u32,
}

fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, lr: f64) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    state.t += 1;
    let bc1 = 1.0 - B1.powi(state.t as i32);
    let bc2 = 1.0 - B2.powi(state.t as i32);
    let iter = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().zip(state.v.tensors_mut()));
    for ((theta, g), (m, v)) in iter {
        for i in 0..theta.len() {
            m[i] = B1 * m[i] + (1.0 - B1) * g[i];
            v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
        }
    }
}

fn sgd_step(params: &mut NetworkParams, grads: &NetworkParams, lr: f64) {
    for (theta, g) in params.tensors_mut().zip(grads.tensors()) {
        for i in 0..theta.len() {
            theta[i] -= lr * g[i];
        }
    }
}

/// Stratified validation split: within every (task, label) group a seeded
/// shuffle puts `validation_fraction` of the items aside. Afterwards every
/// task is guaranteed at least one item on each side, or the task is
/// reported starved.
fn validation_split(
    resolved: &[(Vec<f64>, f64, usize)],
    spec: &NetworkSpec,
    frac: f64,
    seed_value: u64,
) -> Result<(Vec<usize>, Vec<usize>), NnError> {
    let mut groups: BTreeMap<(usize, bool), Vec<usize>> = BTreeMap::new();
    for (i, (_, y, task)) in resolved.iter().enumerate() {
        groups.entry((*task, *y >= 0.5)).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "valsplit", 0));
    let mut val = Vec::new();
    let mut train = Vec::new();
    for members in groups.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut n_val = (frac * shuffled.len() as f64).round() as usize;
        n_val = n_val.min(shuffled.len() - 1);
        val.extend_from_slice(&shuffled[..n_val]);
        train.extend_from_slice(&shuffled[n_val..]);
    }

    for (t, task_id) in spec.task_ids.iter().enumerate() {
        let in_train = train.iter().filter(|&&i| resolved[i].2 == t).count();
        let in_val = val.iter().filter(|&&i| resolved[i].2 == t).count();
        if in_train + in_val < 2 {
            return Err(NnError::EmptyTask(task_id.clone(), "train and validation"));
        }
        if in_val == 0 {
            // move one of the task's training items over
            let pos = train
                .iter()
                .position(|&i| resolved[i].2 == t)
                .expect("task has items");
            val.push(train.remove(pos));
        } else if in_train == 0 {
            let pos = val
                .iter()
                .position(|&i| resolved[i].2 == t)
                .expect("task has items");
            train.push(val.remove(pos));
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

fn make_masks(
    spec: &NetworkSpec,
    rate: f64,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Vec<DropoutMasks> {
    let keep = 1.0 - rate;
    let draw = |width: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..width)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    };
    (0..n)
        .map(|_| DropoutMasks {
            shared: spec
                .shared_widths
                .iter()
                .map(|&w| draw(w, rng))
                .collect(),
            task: spec.task_widths.iter().map(|&w| draw(w, rng)).collect(),
        })
        .collect()
}

fn mean_loss(
    params: &NetworkParams,
    resolved: &[(Vec<f64>, f64, usize)],
    indices: &[usize],
) -> f64 {
    indices
        .iter()
        .map(|&i| {
            let (x, y, task) = &resolved[i];
            bce_loss(forward_trace(params, *task, x, None).p, *y)
        })
        .sum::<f64>()
        / indices.len() as f64
}

/// Trains a network on `items`, returning the parameters that achieved the
/// best validation loss together with the epoch-by-epoch record.
pub fn train(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    items: &[TrainItem],
) -> Result<(NetworkParams, TrainReport), NnError> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(NnError::EmptyBatch);
    }

    let mut resolved = Vec::with_capacity(items.len());
    for item in items {
        let task = spec
            .task_index(&item.task_id)
            .ok_or_else(|| NnError::UnknownTask(item.task_id.clone()))?;
        if item.x.len() != spec.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: spec.input_dim,
                got: item.x.len(),
            });
        }
        if item.y != 0.0 && item.y != 1.0 {
            return Err(NnError::InvalidConfig(format!(
                "labels must be 0 or 1, got {}",
                item.y
            )));
        }
        resolved.push((item.x.clone(), item.y, task));
    }
    for (t, task_id) in spec.task_ids.iter().enumerate() {
        if !resolved.iter().any(|(_, _, task)| *task == t) {
            return Err(NnError::EmptyTask(task_id.clone(), "training"));
        }
    }

    let (train_idx, val_idx) =
        validation_split(&resolved, spec, cfg.validation_fraction, cfg.seed)?;

    let mut params = NetworkParams::init(spec, seed::derive(cfg.seed, "init", 0));
    params.project_max_norm(cfg.max_norm);
    let mut adam = AdamState {
        m: NetworkParams::zeros(spec),
        v: NetworkParams::zeros(spec),
        t: 0,
    };

    let mut best_params = params.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_without_improvement = 0usize;
    let mut stopped_early = false;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order = train_idx.clone();
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "order", epoch as u64));
        order.shuffle(&mut order_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "dropout", epoch as u64));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, f64, usize)> =
                chunk.iter().map(|&i| resolved[i].clone()).collect();
            let masks = if cfg.dropout_rate > 0.0 {
                Some(make_masks(
                    spec,
                    cfg.dropout_rate,
                    &mut dropout_rng,
                    batch.len(),
                ))
            } else {
                None
            };
            let (grads, batch_loss) = backward(&params, spec, &batch, masks.as_deref())?;
            loss_sum += batch_loss * batch.len() as f64;
            match cfg.optimizer {
                Optimizer::Adam => adam_step(&mut params, &grads, &mut adam, cfg.learning_rate),
                Optimizer::Sgd => sgd_step(&mut params, &grads, cfg.learning_rate),
            }
            params.project_max_norm(cfg.max_norm);
        }

        let train_loss = loss_sum / train_idx.len() as f64;
        let val_loss = mean_loss(&params, &resolved, &val_idx);
        if !train_loss.is_finite() || !val_loss.is_finite() || !params.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        train_losses.push(train_loss);
        val_losses.push(val_loss);
        epochs_run = epoch + 1;

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let restored_val_loss = mean_loss(&best_params, &resolved, &val_idx);
    let report = TrainReport {
        stopped_epoch: epochs_run,
        best_epoch,
        best_val_loss,
        restored_val_loss,
        train_losses,
        val_losses,
        stopped_early,
    };
    Ok((best_params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::predict_accuracy;
    use rand::{Rng, SeedableRng};

    fn blob_items(n: usize, seed: u64) -> Vec<TrainItem> {
        // two well-separated 2-D blobs
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let y = (i % 2) as f64;
                let center = if y > 0.5 { 2.0 } else { -2.0 };
                TrainItem {
                    x: vec![
                        center + rng.gen_range(-0.5..0.5),
                        center + rng.gen_range(-0.5..0.5),
                    ],
                    y,
                    task_id: "pooled".into(),
                }
            })
            .collect()
    }

    /// Two tasks with opposite decision rules on the same 1-D feature:
    /// no pooled rule beats chance, yet each task is trivially separable.
    fn opposed_items(n_per_task: usize, seed: u64, task_ids: [&str; 2]) -> Vec<TrainItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        for (task, task_id) in task_ids.iter().enumerate() {
            for _ in 0..n_per_task {
                let x: f64 = if rng.gen::<bool>() {
                    rng.gen_range(0.2..1.0)
                } else {
                    rng.gen_range(-1.0..-0.2)
                };
                let y = if task == 0 {
                    if x > 0.0 { 1.0 } else { 0.0 }
                } else if x < 0.0 {
                    1.0
                } else {
                    0.0
                };
                items.push(TrainItem {
                    x: vec![x],
                    y,
                    task_id: (*task_id).into(),
                });
            }
        }
        items
    }

    #[test]
    fn separable_blobs_train_to_perfect_accuracy() {
        let spec = NetworkSpec::single_task(2, vec![8], vec![4]).unwrap();
        let cfg = TrainConfig {
            max_epochs: 100,
            seed: 1,
            ..TrainConfig::default()
        };
        let items = blob_items(200, 10);
        let (params, report) = train(&spec, &cfg, &items).unwrap();
        let acc = predict_accuracy(&params, &spec, &items).unwrap();
        assert_eq!(acc, 1.0, "training accuracy {acc}");
        assert!(
            report.best_val_loss < report.val_losses[0],
            "validation never improved: {:?}",
            &report.val_losses[..4.min(report.val_losses.len())]
        );
    }

    #[test]
    fn opposed_tasks_need_the_multi_task_architecture() {
        let train_items = opposed_items(120, 21, ["a", "b"]);
        let test_items = opposed_items(200, 22, ["a", "b"]);

        let mt_spec = NetworkSpec::new(1, vec![8], vec![4], vec!["a".into(), "b".into()]).unwrap();
        let cfg = TrainConfig {
            max_epochs: 300,
            patience: 30,
            seed: 2,
            ..TrainConfig::default()
        };
        let (mt_params, _) = train(&mt_spec, &cfg, &train_items).unwrap();
        for task in ["a", "b"] {
            let task_test: Vec<TrainItem> = test_items
                .iter()
                .filter(|i| i.task_id == task)
                .cloned()
                .collect();
            let acc = predict_accuracy(&mt_params, &mt_spec, &task_test).unwrap();
            assert!(acc >= 0.95, "task {task} accuracy {acc}");
        }

        // pooling both tasks erases the signal for a single-task network
        let st_spec = NetworkSpec::single_task(1, vec![8], vec![4]).unwrap();
        let pooled_train: Vec<TrainItem> = train_items
            .iter()
            .map(|i| TrainItem {
                task_id: "pooled".into(),
                ..i.clone()
            })
            .collect();
        let pooled_test: Vec<TrainItem> = test_items
            .iter()
            .map(|i| TrainItem {
                task_id: "pooled".into(),
                ..i.clone()
            })
            .collect();
        let (st_params, _) = train(&st_spec, &cfg, &pooled_train).unwrap();
        let acc = predict_accuracy(&st_params, &st_spec, &pooled_test).unwrap();
        assert!(acc <= 0.6, "pooled accuracy {acc} should stay near chance");
    }

    #[test]
    fn tight_max_norm_is_enforced_after_training() {
        let spec = NetworkSpec::single_task(2, vec![6], vec![3]).unwrap();
        let cfg = TrainConfig {
            max_norm: 0.5,
            max_epochs: 30,
            seed: 3,
            ..TrainConfig::default()
        };
        let (params, _) = train(&spec, &cfg, &blob_items(100, 11)).unwrap();
        assert!(
            params.max_row_norm() <= 0.5 + 1e-9,
            "row norm {}",
            params.max_row_norm()
        );
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let spec = NetworkSpec::new(2, vec![5], vec![3], vec!["a".into(), "b".into()]).unwrap();
        let mut items = blob_items(60, 12);
        for (i, item) in items.iter_mut().enumerate() {
            item.task_id = if i % 2 == 0 { "a".into() } else { "b".into() };
        }
        let cfg = TrainConfig {
            max_epochs: 20,
            seed: 4,
            ..TrainConfig::default()
        };
        let (p1, r1) = train(&spec, &cfg, &items).unwrap();
        let (p2, r2) = train(&spec, &cfg, &items).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let spec = NetworkSpec::single_task(2, vec![8], vec![4]).unwrap();
        let cfg = TrainConfig {
            max_epochs: 150,
            patience: 5,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &cfg, &blob_items(80, 13)).unwrap();
        assert!(report.stopped_epoch <= cfg.max_epochs);
        let min_val = report
            .val_losses
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, min_val);
        assert_eq!(report.restored_val_loss, report.best_val_loss);
        assert_eq!(report.val_losses[report.best_epoch], report.best_val_loss);
    }

    #[test]
    fn starved_task_is_reported() {
        let spec = NetworkSpec::new(2, vec![4], vec![2], vec!["a".into(), "b".into()]).unwrap();
        let mut items = blob_items(40, 14);
        for item in items.iter_mut() {
            item.task_id = "a".into();
        }
        items[0].task_id = "b".into(); // one lonely sample
        match train(&spec, &TrainConfig::default(), &items) {
            Err(NnError::EmptyTask(id, _)) => assert_eq!(id, "b"),
            other => panic!("expected EmptyTask, got {other:?}"),
        }
    }

    #[test]
    fn unknown_task_in_items_is_an_error() {
        let spec = NetworkSpec::single_task(2, vec![4], vec![2]).unwrap();
        let mut items = blob_items(10, 15);
        items[3].task_id = "mystery".into();
        assert!(matches!(
            train(&spec, &TrainConfig::default(), &items),
            Err(NnError::UnknownTask(_))
        ));
    }

    #[test]
    fn divergence_is_detected() {
        let spec = NetworkSpec::single_task(1, vec![4], vec![], ).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e308,
            optimizer: Optimizer::Sgd,
            max_epochs: 5,
            dropout_rate: 0.0,
            seed: 6,
            ..TrainConfig::default()
        };
        let items: Vec<TrainItem> = (0..20)
            .map(|i| TrainItem {
                x: vec![1e3 * ((i % 2) as f64 * 2.0 - 1.0)],
                y: (i % 2) as f64,
                task_id: "pooled".into(),
            })
            .collect();
        assert!(matches!(
            train(&spec, &cfg, &items),
            Err(NnError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn validation_split_is_stratified_and_complete() {
        let spec = NetworkSpec::new(1, vec![], vec![], vec!["a".into(), "b".into()]).unwrap();
        let resolved: Vec<(Vec<f64>, f64, usize)> = (0..40)
            .map(|i| (vec![i as f64], (i % 2) as f64, i % 2))
            .collect();
        let (train_idx, val_idx) = validation_split(&resolved, &spec, 0.25, 9).unwrap();
        assert_eq!(train_idx.len() + val_idx.len(), 40);
        for t in 0..2 {
            assert!(train_idx.iter().any(|&i| resolved[i].2 == t));
            assert!(val_idx.iter().any(|&i| resolved[i].2 == t));
        }
        let mut all: Vec<usize> = train_idx.iter().chain(&val_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }
}
