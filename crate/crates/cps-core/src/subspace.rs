//! Compressed-subspace training: N endpoints trained in parallel from one
//! constant initialization, each on its own task, with the mean cosine
//! distance to the other endpoints added to the loss (scaled by beta).
//!
//! Endpoints freeze individually once their epoch-mean task loss reaches the
//! early-stop threshold, so with beta = 0 every endpoint's trajectory is
//! bit-identical to an independent standard training run on its task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::CoreError;
use crate::model::ModelSpec;
use crate::nn::Targets;
use crate::params::{
    avg_cosine_distance_grad, cosine_distance, cosine_similarity_raw, interpolate_params,
    ParamVector,
};
use crate::task::{Coeffs, TaskSet};
use crate::trainer::{batch_update, epoch_order, TrainConfig};
use crate::Result;

/// Per-epoch subspace trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Epoch-mean task loss per endpoint (last recorded value once frozen).
    pub train_loss: Vec<f32>,
    /// Mean cosine distance of each endpoint to the others, at epoch end.
    pub mean_dist_to_others: Vec<f32>,
    /// Cosine distance of each endpoint to the subspace centre.
    pub dist_to_centre: Vec<f32>,
    /// Cosine similarity of the cumulative updates (theta_i - init,
    /// theta_j - init) for each pair i < j.
    pub pair_update_sim: Vec<(usize, usize, f32)>,
}

/// N jointly trained endpoints plus everything needed to reuse them.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub model: ModelSpec,
    pub endpoints: Vec<ParamVector<f32>>,
    pub beta: f32,
    pub init_seed: u64,
    pub task_names: Vec<String>,
    pub logs: Vec<EpochLog>,
}

impl Subspace {
    pub fn validate(&self) -> Result<()> {
        if self.endpoints.len() < 2 {
            return Err(CoreError::InvalidParameter(format!(
                "subspace needs at least 2 endpoints, got {}",
                self.endpoints.len()
            )));
        }
        for e in &self.endpoints {
            if e.fingerprint() != self.model.fingerprint() {
                return Err(CoreError::FingerprintMismatch {
                    expected: self.model.fingerprint(),
                    got: e.fingerprint(),
                });
            }
        }
        Ok(())
    }

    pub fn endpoint_count(&self) -> usize {
        self.endpoints.len()
    }
}

/// Trains the compressed subspace per the parallel protocol: per epoch, per
/// endpoint in index order, per batch, endpoint i descends its task loss
/// plus `beta` times its mean cosine distance to the other endpoints (the
/// others held constant within i's batch loop).
pub fn train_cps(
    model: &ModelSpec,
    tasks: &[TaskSet],
    beta: f32,
    cfg: &TrainConfig,
) -> Result<Subspace> {
    cfg.validate()?;
    model.validate()?;
    if tasks.len() < 2 {
        return Err(CoreError::InvalidParameter(format!(
            "train_cps needs at least 2 tasks, got {}",
            tasks.len()
        )));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(CoreError::InvalidParameter(format!("beta {beta} must be non-negative")));
    }
    for t in tasks {
        if t.is_empty() {
            return Err(CoreError::Empty(format!("task {}", t.name)));
        }
    }

    let n = tasks.len();
    let norm: Vec<TaskSet> = tasks.iter().map(TaskSet::normalized).collect();
    let init = model.init_params::<f32>(cfg.train_seed);
    let mut endpoints = vec![init.clone(); n];
    let mut converged = vec![false; n];
    let mut last_loss = vec![f32::NAN; n];
    let mut logs = Vec::new();

    for epoch in 0..cfg.max_epochs {
        for i in 0..n {
            if converged[i] {
                continue;
            }
            let samples = norm[i].len();
            let order = epoch_order(samples, cfg.train_seed, epoch);
            let mut loss_sum = 0.0f32;
            let mut batches = 0usize;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let bx = norm[i].inputs.gather_rows(chunk);
                let by: Vec<u16> = chunk.iter().map(|&s| norm[i].fine[s]).collect();
                let batch_id = (epoch as u64) << 32 | bi as u64;
                let extra = if beta != 0.0 {
                    let (_, mut rec) = avg_cosine_distance_grad(i, &endpoints)?;
                    for g in rec.grad.values_mut() {
                        *g *= beta;
                    }
                    Some(rec.grad)
                } else {
                    None
                };
                let (next, loss) = batch_update(
                    model,
                    &endpoints[i],
                    &bx,
                    Targets::Hard(&by),
                    cfg.lr,
                    batch_id,
                    extra.as_ref(),
                    epoch,
                    Some(i),
                )?;
                endpoints[i] = next;
                loss_sum += loss;
                batches += 1;
            }
            let mean = loss_sum / batches as f32;
            last_loss[i] = mean;
            if mean <= cfg.early_stop_loss {
                converged[i] = true;
            }
        }

        logs.push(epoch_snapshot(epoch, &endpoints, &init, &last_loss)?);
        if converged.iter().all(|&c| c) {
            break;
        }
    }

    Ok(Subspace {
        model: model.clone(),
        endpoints,
        beta,
        init_seed: cfg.train_seed,
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        logs,
    })
}

fn epoch_snapshot(
    epoch: usize,
    endpoints: &[ParamVector<f32>],
    init: &ParamVector<f32>,
    last_loss: &[f32],
) -> Result<EpochLog> {
    let n = endpoints.len();
    let centre_params = centre_of(endpoints)?;
    let mut mean_dist = Vec::with_capacity(n);
    let mut centre_dist = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0f32;
        for (j, other) in endpoints.iter().enumerate() {
            if i != j {
                acc += cosine_distance(&endpoints[i], other)?;
            }
        }
        mean_dist.push(acc / (n - 1) as f32);
        centre_dist.push(cosine_distance(&endpoints[i], &centre_params)?);
    }
    let deltas: Vec<Vec<f32>> = endpoints
        .iter()
        .map(|e| {
            e.values()
                .iter()
                .zip(init.values())
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let mut pair_update_sim = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pair_update_sim.push((i, j, cosine_similarity_raw(&deltas[i], &deltas[j])));
        }
    }
    Ok(EpochLog {
        epoch,
        train_loss: last_loss.to_vec(),
        mean_dist_to_others: mean_dist,
        dist_to_centre: centre_dist,
        pair_update_sim,
    })
}

fn centre_of(endpoints: &[ParamVector<f32>]) -> Result<ParamVector<f32>> {
    interpolate_params(&Coeffs::uniform(endpoints.len()), endpoints)
}

/// The uniform average of the endpoints.
pub fn centre(subspace: &Subspace) -> Result<ParamVector<f32>> {
    subspace.validate()?;
    centre_of(&subspace.endpoints)
}

// ---------------------------------------------------------------------------
// Checkpoint format: a directory of endpoint checkpoints plus a manifest and
// the epoch-log tables.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SubspaceManifest {
    format: String,
    beta: f32,
    init_seed: u64,
    model: ModelSpec,
    task_names: Vec<String>,
    endpoints: Vec<String>,
    epoch_log: String,
    pair_log: String,
}

const MANIFEST_FORMAT: &str = "cps-subspace v1";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const PAIR_LOG_FILE: &str = "pair_similarity.csv";

pub fn save_subspace(subspace: &Subspace, dir: impl AsRef<Path>) -> Result<()> {
    subspace.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut endpoint_files = Vec::new();
    for (i, e) in subspace.endpoints.iter().enumerate() {
        let file = format!("endpoint_{i}.cpv");
        checkpoint::save_params(e, dir.join(&file))?;
        endpoint_files.push(file);
    }

    let mut epoch_csv = String::from(
        "epoch,endpoint,train_loss,mean_cos_dist_to_others,cos_dist_to_centre,dist_term\n",
    );
    for log in &subspace.logs {
        for i in 0..subspace.endpoints.len() {
            epoch_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                log.epoch,
                i,
                log.train_loss[i],
                log.mean_dist_to_others[i],
                log.dist_to_centre[i],
                subspace.beta * log.mean_dist_to_others[i],
            ));
        }
    }
    std::fs::write(dir.join(EPOCH_LOG_FILE), epoch_csv)?;

    let mut pair_csv = String::from("epoch,endpoint_a,endpoint_b,update_cosine_similarity\n");
    for log in &subspace.logs {
        for (i, j, sim) in &log.pair_update_sim {
            pair_csv.push_str(&format!("{},{},{},{}\n", log.epoch, i, j, sim));
        }
    }
    std::fs::write(dir.join(PAIR_LOG_FILE), pair_csv)?;

    let manifest = SubspaceManifest {
        format: MANIFEST_FORMAT.into(),
        beta: subspace.beta,
        init_seed: subspace.init_seed,
        model: subspace.model.clone(),
        task_names: subspace.task_names.clone(),
        endpoints: endpoint_files,
        epoch_log: EPOCH_LOG_FILE.into(),
        pair_log: PAIR_LOG_FILE.into(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| CoreError::MalformedData(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

pub fn load_subspace(dir: impl AsRef<Path>) -> Result<Subspace> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: SubspaceManifest =
        toml::from_str(&text).map_err(|e| CoreError::MalformedData(format!("manifest: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CoreError::MalformedData(format!(
            "unsupported subspace format {}",
            manifest.format
        )));
    }
    let mut endpoints = Vec::new();
    for file in &manifest.endpoints {
        endpoints.push(checkpoint::load_params(dir.join(file))?);
    }
    let logs = parse_logs(
        &std::fs::read_to_string(dir.join(&manifest.epoch_log))?,
        &std::fs::read_to_string(dir.join(&manifest.pair_log))?,
        endpoints.len(),
    )?;
    let subspace = Subspace {
        model: manifest.model,
        endpoints,
        beta: manifest.beta,
        init_seed: manifest.init_seed,
        task_names: manifest.task_names,
        logs,
    };
    subspace.validate()?;
    Ok(subspace)
}

fn parse_logs(epoch_csv: &str, pair_csv: &str, n: usize) -> Result<Vec<EpochLog>> {
    let bad = |line: &str| CoreError::MalformedData(format!("bad log line: {line}"));
    let mut logs: Vec<EpochLog> = Vec::new();
    for line in epoch_csv.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad(line));
        }
        let epoch: usize = cols[0].parse().map_err(|_| bad(line))?;
        let endpoint: usize = cols[1].parse().map_err(|_| bad(line))?;
        if logs.last().map(|l| l.epoch) != Some(epoch) {
            logs.push(EpochLog {
                epoch,
                train_loss: vec![0.0; n],
                mean_dist_to_others: vec![0.0; n],
                dist_to_centre: vec![0.0; n],
                pair_update_sim: Vec::new(),
            });
        }
        let log = logs.last_mut().unwrap();
        log.train_loss[endpoint] = cols[2].parse().map_err(|_| bad(line))?;
        log.mean_dist_to_others[endpoint] = cols[3].parse().map_err(|_| bad(line))?;
        log.dist_to_centre[endpoint] = cols[4].parse().map_err(|_| bad(line))?;
    }
    for line in pair_csv.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(line));
        }
        let epoch: usize = cols[0].parse().map_err(|_| bad(line))?;
        let log = logs
            .iter_mut()
            .find(|l| l.epoch == epoch)
            .ok_or_else(|| bad(line))?;
        log.pair_update_sim.push((
            cols[1].parse().map_err(|_| bad(line))?,
            cols[2].parse().map_err(|_| bad(line))?,
            cols[3].parse().map_err(|_| bad(line))?,
        ));
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputShape;
    use crate::task::{make_synthetic_tasks, SyntheticMode};
    use crate::trainer::train_standard;

    fn setup() -> (ModelSpec, Vec<TaskSet>, TrainConfig) {
        let model = ModelSpec::dense(vec![16], InputShape::Flat { features: 100 }, 3).unwrap();
        let tasks = make_synthetic_tasks(1, 3, 3, 12, SyntheticMode::RotatedGaussians).unwrap();
        let cfg = TrainConfig { max_epochs: 15, early_stop_loss: 0.4, ..TrainConfig::default() };
        (model, tasks, cfg)
    }

    #[test]
    fn beta_zero_matches_independent_standard_runs() {
        let (model, tasks, cfg) = setup();
        let subspace = train_cps(&model, &tasks, 0.0, &cfg).unwrap();
        for (i, task) in tasks.iter().enumerate() {
            let run = train_standard(&model, task, &cfg).unwrap();
            assert_eq!(subspace.endpoints[i], run.params, "endpoint {i}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, tasks, cfg) = setup();
        let a = train_cps(&model, &tasks, 1.0, &cfg).unwrap();
        let b = train_cps(&model, &tasks, 1.0, &cfg).unwrap();
        assert_eq!(a.endpoints, b.endpoints);
        assert_eq!(a.logs, b.logs);
    }

    #[test]
    fn rejects_single_task() {
        let (model, tasks, cfg) = setup();
        assert!(train_cps(&model, &tasks[..1], 1.0, &cfg).is_err());
    }

    #[test]
    fn centre_averages_endpoints() {
        let (model, tasks, cfg) = setup();
        let subspace = train_cps(&model, &tasks, 0.0, &cfg).unwrap();
        let c = centre(&subspace).unwrap();
        let k = subspace.endpoints.len() as f32;
        for (idx, v) in c.values().iter().enumerate() {
            let mean: f32 = subspace
                .endpoints
                .iter()
                .map(|e| e.values()[idx] / k)
                .sum();
            assert!((v - mean).abs() < 1e-6);
        }
        // Centre of identical endpoints is that endpoint.
        let degenerate = Subspace {
            endpoints: vec![subspace.endpoints[0].clone(); 3],
            ..subspace.clone()
        };
        let c0 = centre(&degenerate).unwrap();
        for (a, b) in c0.values().iter().zip(subspace.endpoints[0].values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn logs_cover_every_epoch_and_pair() {
        let (model, tasks, cfg) = setup();
        let subspace = train_cps(&model, &tasks, 1.0, &cfg).unwrap();
        assert!(!subspace.logs.is_empty());
        for log in &subspace.logs {
            assert_eq!(log.train_loss.len(), 3);
            assert_eq!(log.pair_update_sim.len(), 3);
            for d in &log.mean_dist_to_others {
                assert!((0.0..=2.0).contains(d));
            }
            for (_, _, s) in &log.pair_update_sim {
                assert!((-1.0..=1.0).contains(s));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (model, tasks, cfg) = setup();
        let subspace = train_cps(&model, &tasks, 1.0, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subspace");
        save_subspace(&subspace, &path).unwrap();
        let loaded = load_subspace(&path).unwrap();
        assert_eq!(loaded.endpoints, subspace.endpoints);
        assert_eq!(loaded.beta, subspace.beta);
        assert_eq!(loaded.init_seed, subspace.init_seed);
        assert_eq!(loaded.task_names, subspace.task_names);
        assert_eq!(loaded.logs, subspace.logs);
    }
}
