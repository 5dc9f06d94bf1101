//! The four baseline training regimes: plain SGD with early stopping, and
//! its CutMix, adversarial, and backdoor-adversarial variants.
//!
//! All trainers share one batch schedule so that, with their mixing
//! fraction at zero, they reproduce `train_standard` bit for bit. The
//! subspace trainer reuses the same schedule for its per-endpoint loops.

use crate::attack::{pgd_attack, AttackConfig};
use crate::error::CoreError;
use crate::model::ModelSpec;
use crate::nn::{self, Targets};
use crate::params::{sgd_step, ParamVector};
use crate::rng::{self, purpose};
use crate::shift::{backdoor_trigger, cutmix_batch, paste_trigger};
use crate::task::TaskSet;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once the epoch-mean batch loss reaches this value.
    pub early_stop_loss: f32,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            batch_size: 32,
            max_epochs: 500,
            early_stop_loss: 1.0,
            train_seed: 1,
            test_seed: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(CoreError::InvalidParameter(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CoreError::InvalidParameter("batch size and epochs must be positive".into()));
        }
        if self.early_stop_loss <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "early-stop threshold {} must be positive",
                self.early_stop_loss
            )));
        }
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    /// Mean of the per-batch task losses.
    pub mean_loss: f32,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ParamVector<f32>,
    pub epochs: Vec<EpochStat>,
    pub stopped_early: bool,
}

/// Seeded sample order for one epoch; shared by every trainer.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, purpose::SHUFFLE, epoch as u64);
    rng::permutation(&mut rng, n)
}

/// Samples marked for augmentation this epoch (seeded choice of
/// `round(fraction * n)` indices).
fn marked_samples(n: usize, fraction: f32, seed: u64, epoch: usize) -> Vec<bool> {
    let count = ((fraction as f64) * n as f64).round() as usize;
    let mut rng = rng::stream(seed, purpose::AUG_PICK, epoch as u64);
    let order = rng::permutation(&mut rng, n);
    let mut marked = vec![false; n];
    for &i in &order[..count] {
        marked[i] = true;
    }
    marked
}

fn map_divergence(err: CoreError, epoch: usize, endpoint: Option<usize>) -> CoreError {
    match err {
        CoreError::NonFinite { .. } => CoreError::Divergence { epoch, endpoint },
        other => other,
    }
}

/// One SGD update from a prepared batch. Returns the updated parameters and
/// the task loss. `extra` adds a pre-scaled regularizer gradient.
pub(crate) fn batch_update(
    model: &ModelSpec,
    params: &ParamVector<f32>,
    bx: &Tensor<f32>,
    targets: Targets<f32>,
    lr: f32,
    batch_id: u64,
    extra: Option<&ParamVector<f32>>,
    epoch: usize,
    endpoint: Option<usize>,
) -> Result<(ParamVector<f32>, f32)> {
    let mut rec = nn::backward(model, params, bx, targets, batch_id)
        .map_err(|e| map_divergence(e, epoch, endpoint))?;
    if !rec.loss.is_finite() {
        return Err(CoreError::Divergence { epoch, endpoint });
    }
    if let Some(extra_grad) = extra {
        for (g, e) in rec.grad.values_mut().iter_mut().zip(extra_grad.values()) {
            *g += *e;
        }
    }
    let next = sgd_step(params, &rec, lr)?;
    next.err_if_not_finite("updated parameters")
        .map_err(|_| CoreError::Divergence { epoch, endpoint })?;
    Ok((next, rec.loss))
}

/// What a regime does to each raw batch before the SGD step.
enum Regime<'a> {
    Standard,
    CutMix { fraction: f32, classes: usize },
    Adversarial { attack: &'a AttackConfig, fraction: f32 },
}

fn train_with_regime(
    model: &ModelSpec,
    task: &TaskSet,
    cfg: &TrainConfig,
    regime: Regime,
) -> Result<TrainRun> {
    cfg.validate()?;
    model.validate()?;
    if task.is_empty() {
        return Err(CoreError::Empty("training task".into()));
    }
    let norm = task.normalized();
    let n = norm.len();
    let mut params = model.init_params::<f32>(cfg.train_seed);
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let order = epoch_order(n, cfg.train_seed, epoch);
        let marked = match &regime {
            Regime::Standard => Vec::new(),
            Regime::CutMix { fraction, .. } | Regime::Adversarial { fraction, .. } => {
                marked_samples(n, *fraction, cfg.train_seed, epoch)
            }
        };
        let mut loss_sum = 0.0f32;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut bx = norm.inputs.gather_rows(chunk);
            let by: Vec<u16> = chunk.iter().map(|&i| norm.fine[i]).collect();
            let batch_id = (epoch as u64) << 32 | bi as u64;

            // Positions within this batch that the regime transforms.
            let picked: Vec<usize> = chunk
                .iter()
                .enumerate()
                .filter(|(_, &i)| marked.get(i).copied().unwrap_or(false))
                .map(|(pos, _)| pos)
                .collect();

            let (next, loss) = match &regime {
                Regime::CutMix { classes, .. } if picked.len() >= 2 => {
                    let sub = bx.gather_rows(&picked);
                    let sub_labels: Vec<u16> = picked.iter().map(|&p| by[p]).collect();
                    let (mixed, soft_sub) =
                        cutmix_batch(&sub, &sub_labels, *classes, mix_seed(cfg.train_seed, epoch, bi))?;
                    let mut soft = Tensor::zeros(vec![chunk.len(), *classes]);
                    for (pos, &label) in by.iter().enumerate() {
                        soft.row_mut(pos)[label as usize] = 1.0;
                    }
                    for (k, &pos) in picked.iter().enumerate() {
                        bx.row_mut(pos).copy_from_slice(mixed.row(k));
                        soft.row_mut(pos).copy_from_slice(soft_sub.row(k));
                    }
                    batch_update(model, &params, &bx, Targets::Soft(&soft), cfg.lr, batch_id, None, epoch, None)?
                }
                Regime::Adversarial { attack, .. } if !picked.is_empty() => {
                    let sub = bx.gather_rows(&picked);
                    let sub_labels: Vec<u16> = picked.iter().map(|&p| by[p]).collect();
                    let adv = pgd_attack(model, &params, &sub, &sub_labels, attack)?;
                    for (k, &pos) in picked.iter().enumerate() {
                        bx.row_mut(pos).copy_from_slice(adv.row(k));
                    }
                    batch_update(model, &params, &bx, Targets::Hard(&by), cfg.lr, batch_id, None, epoch, None)?
                }
                _ => batch_update(model, &params, &bx, Targets::Hard(&by), cfg.lr, batch_id, None, epoch, None)?,
            };
            params = next;
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f32;
        epochs.push(EpochStat { epoch, mean_loss });
        if mean_loss <= cfg.early_stop_loss {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainRun { params, epochs, stopped_early })
}

fn mix_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 20) ^ batch as u64
}

/// SGD with cross-entropy, stopping once the epoch-mean train loss reaches
/// the threshold.
pub fn train_standard(model: &ModelSpec, task: &TaskSet, cfg: &TrainConfig) -> Result<TrainRun> {
    train_with_regime(model, task, cfg, Regime::Standard)
}

/// As standard, with a seeded fraction of each epoch's samples passed
/// through per-batch CutMix (soft labels).
pub fn train_cutmix(
    model: &ModelSpec,
    task: &TaskSet,
    cfg: &TrainConfig,
    aug_fraction: f32,
) -> Result<TrainRun> {
    if !(0.0..=1.0).contains(&aug_fraction) {
        return Err(CoreError::InvalidParameter(format!("aug fraction {aug_fraction}")));
    }
    train_with_regime(
        model,
        task,
        cfg,
        Regime::CutMix { fraction: aug_fraction, classes: model.classes },
    )
}

/// As standard, with a seeded fraction of each epoch's samples replaced by
/// PGD examples generated against the current parameters.
pub fn train_adversarial(
    model: &ModelSpec,
    task: &TaskSet,
    cfg: &TrainConfig,
    attack: &AttackConfig,
    fraction: f32,
) -> Result<TrainRun> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoreError::InvalidParameter(format!("adversarial fraction {fraction}")));
    }
    attack.validate()?;
    train_with_regime(model, task, cfg, Regime::Adversarial { attack, fraction })
}

/// Backdoor adversarial training: defender-generated triggers (seeds
/// `1..=trigger_count`) are pasted onto a seeded fraction of the training
/// set while keeping the existing labels, each trigger decorating an equal
/// share of the perturbed allocation; then standard training runs on the
/// decorated task.
pub fn train_backdoor_adv(
    model: &ModelSpec,
    task: &TaskSet,
    cfg: &TrainConfig,
    trigger_count: usize,
    fraction: f32,
    epsilon: f32,
) -> Result<TrainRun> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoreError::InvalidParameter(format!("backdoor fraction {fraction}")));
    }
    let decorated = decorate_with_triggers(task, cfg.train_seed, trigger_count, fraction, epsilon)?;
    train_with_regime(model, &decorated, cfg, Regime::Standard)
}

/// The trigger decoration used by backdoor adversarial training, exposed so
/// the allocation can be inspected. Returns the decorated task.
pub fn decorate_with_triggers(
    task: &TaskSet,
    seed: u64,
    trigger_count: usize,
    fraction: f32,
    epsilon: f32,
) -> Result<TaskSet> {
    if fraction == 0.0 || trigger_count == 0 {
        return Ok(task.clone());
    }
    let dims = task.image_dims()?;
    let n = task.len();
    let total = ((fraction as f64) * n as f64).round() as usize;
    let mut rng = rng::stream(seed, purpose::AUG_PICK, u64::MAX);
    let order = rng::permutation(&mut rng, n);
    let mut out = task.clone();
    // Equal consecutive shares; earlier triggers absorb the remainder.
    for t in 0..trigger_count {
        let start = total * t / trigger_count;
        let end = total * (t + 1) / trigger_count;
        if start == end {
            continue;
        }
        let trigger = backdoor_trigger(epsilon, t as u64 + 1, t as u64 + 1, dims)?;
        paste_trigger(&mut out, &trigger, &order[start..end])?;
    }
    out.provenance.push(format!(
        "backdoor-adversarial decoration: {trigger_count} triggers over {total} samples"
    ));
    Ok(out)
}
