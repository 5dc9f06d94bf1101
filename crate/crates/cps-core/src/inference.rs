//! Subspace inference: centre, ensemble over sampled coefficients,
//! lowest-loss interpolated / boundary selection, and the multi-task
//! variant. Coefficient sampling and grids normalize to convex combinations
//! by default; the raw box mode is kept behind the `_raw` variants.

use rand::Rng;

use crate::error::CoreError;
use crate::nn::{self, softmax};
use crate::params::interpolate_params;
use crate::rng::{self, purpose};
use crate::subspace::{centre, Subspace};
use crate::task::{Coeffs, TaskSet};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    Centre,
    Ensemble,
    Interpolated,
    Boundary,
    MultiTask,
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            InferenceMode::Centre => "centre",
            InferenceMode::Ensemble => "ensemble",
            InferenceMode::Interpolated => "interpolated",
            InferenceMode::Boundary => "boundary",
            InferenceMode::MultiTask => "multi-task",
        };
        f.write_str(name)
    }
}

/// Result of one inference-mode evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub mode: InferenceMode,
    /// The selected coefficients, where the mode picks a single point.
    pub coeffs: Option<Coeffs>,
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
    /// Per-task accuracies for the multi-task mode.
    pub per_task_accuracy: Vec<f64>,
}

/// M coefficient vectors, each drawn uniform on [0,1] per axis and then
/// normalized to sum 1.
pub fn sample_coeffs(seed: u64, m: usize, n: usize) -> Result<Vec<Coeffs>> {
    Ok(raw_draws(seed, m, n)?
        .into_iter()
        .map(|c| c.normalized().expect("uniform draws cannot all be zero"))
        .collect())
}

/// The raw box mode: the same draws without normalization.
pub fn sample_coeffs_raw(seed: u64, m: usize, n: usize) -> Result<Vec<Coeffs>> {
    raw_draws(seed, m, n)
}

fn raw_draws(seed: u64, m: usize, n: usize) -> Result<Vec<Coeffs>> {
    if m == 0 || n == 0 {
        return Err(CoreError::InvalidParameter("sample_coeffs needs m, n >= 1".into()));
    }
    let mut rng = rng::stream(seed, purpose::COEFFS, 0);
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let alpha: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0f32)).collect();
        out.push(Coeffs::new(alpha)?);
    }
    Ok(out)
}

/// Per-axis grid over [0,1] with `segments` values, normalized to the
/// simplex; exact duplicates after normalization keep their first
/// occurrence, and `exclude_boundary` removes the one-hot vectors.
pub fn grid_coeffs(segments: usize, n: usize, exclude_boundary: bool) -> Result<Vec<Coeffs>> {
    let raw = raw_grid(segments, n)?;
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    let mut out = Vec::new();
    for coeffs in raw {
        if coeffs.alpha().iter().all(|&a| a == 0.0) {
            continue;
        }
        let normalized = coeffs.normalized()?;
        if exclude_boundary && normalized.is_one_hot() {
            continue;
        }
        let key: Vec<u32> = normalized.alpha().iter().map(|a| a.to_bits()).collect();
        if seen.insert(key) {
            out.push(normalized);
        }
    }
    if out.is_empty() {
        return Err(CoreError::Empty("grid_coeffs produced no coefficients".into()));
    }
    Ok(out)
}

/// The raw box grid: every axis combination kept unnormalized (the all-zero
/// point included); `exclude_boundary` still removes exact one-hot vectors.
pub fn grid_coeffs_raw(segments: usize, n: usize, exclude_boundary: bool) -> Result<Vec<Coeffs>> {
    let raw = raw_grid(segments, n)?;
    let out: Vec<Coeffs> = raw
        .into_iter()
        .filter(|c| !(exclude_boundary && c.is_one_hot()))
        .collect();
    if out.is_empty() {
        return Err(CoreError::Empty("grid_coeffs produced no coefficients".into()));
    }
    Ok(out)
}

fn raw_grid(segments: usize, n: usize) -> Result<Vec<Coeffs>> {
    if segments < 2 {
        return Err(CoreError::InvalidParameter("segments must be >= 2".into()));
    }
    if n == 0 {
        return Err(CoreError::InvalidParameter("grid needs n >= 1".into()));
    }
    let axis: Vec<f32> = (0..segments).map(|i| i as f32 / (segments - 1) as f32).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(Coeffs::new(idx.iter().map(|&i| axis[i]).collect())?);
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < segments {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Evaluates the subspace centre on a normalized task.
pub fn centre_report(subspace: &Subspace, task: &TaskSet) -> Result<InferenceReport> {
    let params = centre(subspace)?;
    let metrics = nn::evaluate(&subspace.model, &params, task)?;
    Ok(InferenceReport {
        mode: InferenceMode::Centre,
        coeffs: Some(Coeffs::uniform(subspace.endpoint_count())),
        accuracy: metrics.accuracy,
        loss: metrics.loss,
        samples: metrics.samples,
        per_task_accuracy: Vec::new(),
    })
}

/// Mean-softmax ensemble over the given coefficient list: per sample the
/// class probabilities of every interpolated parameter are averaged and the
/// argmax of the mean is the prediction. The reported loss is the negative
/// log mean probability of the true class.
pub fn ensemble_predict(
    subspace: &Subspace,
    coeff_list: &[Coeffs],
    task: &TaskSet,
) -> Result<InferenceReport> {
    subspace.validate()?;
    if coeff_list.is_empty() {
        return Err(CoreError::Empty("ensemble coefficient list".into()));
    }
    if task.is_empty() {
        return Err(CoreError::Empty("ensemble task".into()));
    }
    let n = task.len();
    let classes = subspace.model.classes;
    let mut mean_probs = vec![0.0f64; n * classes];
    for coeffs in coeff_list {
        let params = interpolate_params(coeffs, &subspace.endpoints)?;
        let logits = nn::forward(&subspace.model, &params, &task.inputs)?;
        let probs = softmax(&logits);
        for (acc, &p) in mean_probs.iter_mut().zip(probs.data()) {
            *acc += p as f64;
        }
    }
    let m = coeff_list.len() as f64;
    for p in mean_probs.iter_mut() {
        *p /= m;
    }
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = &mean_probs[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        let y = task.fine[i] as usize;
        if y >= classes {
            return Err(CoreError::LabelOutOfRange { label: task.fine[i] as u32, classes });
        }
        if best == y {
            correct += 1;
        }
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
    }
    Ok(InferenceReport {
        mode: InferenceMode::Ensemble,
        coeffs: None,
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
        samples: n,
        per_task_accuracy: Vec::new(),
    })
}

/// Evaluates every candidate on the full task and returns the first-instance
/// argmin by list order.
pub fn lowest_loss_interpolated(
    subspace: &Subspace,
    task: &TaskSet,
    coeff_list: &[Coeffs],
) -> Result<InferenceReport> {
    subspace.validate()?;
    if coeff_list.is_empty() {
        return Err(CoreError::Empty("interpolated coefficient list".into()));
    }
    let mut best: Option<(usize, f64, f64, usize)> = None;
    for (idx, coeffs) in coeff_list.iter().enumerate() {
        let params = interpolate_params(coeffs, &subspace.endpoints)?;
        let metrics = nn::evaluate(&subspace.model, &params, task)?;
        if best.map(|(_, loss, _, _)| metrics.loss < loss).unwrap_or(true) {
            best = Some((idx, metrics.loss, metrics.accuracy, metrics.samples));
        }
    }
    let (idx, loss, accuracy, samples) = best.expect("non-empty candidate list");
    Ok(InferenceReport {
        mode: InferenceMode::Interpolated,
        coeffs: Some(coeff_list[idx].clone()),
        accuracy,
        loss,
        samples,
        per_task_accuracy: Vec::new(),
    })
}

/// Argmin over the N endpoints only; first-instance ties.
pub fn lowest_loss_boundary(subspace: &Subspace, task: &TaskSet) -> Result<InferenceReport> {
    subspace.validate()?;
    let mut best: Option<(usize, f64, f64, usize)> = None;
    for (idx, endpoint) in subspace.endpoints.iter().enumerate() {
        let metrics = nn::evaluate(&subspace.model, endpoint, task)?;
        if best.map(|(_, loss, _, _)| metrics.loss < loss).unwrap_or(true) {
            best = Some((idx, metrics.loss, metrics.accuracy, metrics.samples));
        }
    }
    let (idx, loss, accuracy, samples) = best.expect("subspace has endpoints");
    Ok(InferenceReport {
        mode: InferenceMode::Boundary,
        coeffs: Some(Coeffs::one_hot(subspace.endpoint_count(), idx)),
        accuracy,
        loss,
        samples,
        per_task_accuracy: Vec::new(),
    })
}

/// One parameter point minimizing the summed loss across tasks; the report
/// carries per-task accuracies and the pooled accuracy.
pub fn multi_task_lowest_loss(
    subspace: &Subspace,
    tasks: &[TaskSet],
    coeff_list: &[Coeffs],
) -> Result<InferenceReport> {
    subspace.validate()?;
    if tasks.is_empty() {
        return Err(CoreError::Empty("multi-task task list".into()));
    }
    if coeff_list.is_empty() {
        return Err(CoreError::Empty("multi-task coefficient list".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, coeffs) in coeff_list.iter().enumerate() {
        let params = interpolate_params(coeffs, &subspace.endpoints)?;
        let mut summed = 0.0f64;
        for task in tasks {
            summed += nn::evaluate(&subspace.model, &params, task)?.loss;
        }
        if best.map(|(_, loss)| summed < loss).unwrap_or(true) {
            best = Some((idx, summed));
        }
    }
    let (idx, loss) = best.expect("non-empty candidate list");
    let params = interpolate_params(&coeff_list[idx], &subspace.endpoints)?;
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut correct = 0.0f64;
    let mut samples = 0usize;
    for task in tasks {
        let metrics = nn::evaluate(&subspace.model, &params, task)?;
        per_task.push(metrics.accuracy);
        correct += metrics.accuracy * metrics.samples as f64;
        samples += metrics.samples;
    }
    Ok(InferenceReport {
        mode: InferenceMode::MultiTask,
        coeffs: Some(coeff_list[idx].clone()),
        accuracy: correct / samples as f64,
        loss,
        samples,
        per_task_accuracy: per_task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputShape, ModelSpec};
    use crate::subspace::train_cps;
    use crate::task::{make_synthetic_tasks, SyntheticMode};
    use crate::trainer::TrainConfig;

    fn trained() -> (Subspace, Vec<TaskSet>) {
        let model = ModelSpec::dense(vec![12], InputShape::Flat { features: 100 }, 3).unwrap();
        let tasks = make_synthetic_tasks(1, 3, 3, 10, SyntheticMode::RotatedGaussians).unwrap();
        let cfg = TrainConfig { max_epochs: 10, early_stop_loss: 0.5, ..TrainConfig::default() };
        let subspace = train_cps(&model, &tasks, 1.0, &cfg).unwrap();
        let norm: Vec<TaskSet> = tasks.iter().map(TaskSet::normalized).collect();
        (subspace, norm)
    }

    fn degenerate(subspace: &Subspace) -> Subspace {
        Subspace {
            endpoints: vec![subspace.endpoints[0].clone(); subspace.endpoints.len()],
            ..subspace.clone()
        }
    }

    #[test]
    fn sampled_coeffs_sum_to_one_and_are_seeded() {
        let coeffs = sample_coeffs(9, 50, 3).unwrap();
        assert_eq!(coeffs.len(), 50);
        for c in &coeffs {
            assert!((c.sum() - 1.0).abs() < 1e-6);
        }
        assert_eq!(coeffs, sample_coeffs(9, 50, 3).unwrap());
        let raw = sample_coeffs_raw(9, 50, 3).unwrap();
        assert!(raw.iter().any(|c| (c.sum() - 1.0).abs() > 1e-3));
    }

    #[test]
    fn grid_matches_hand_enumeration() {
        let grid = grid_coeffs(2, 2, false).unwrap();
        let alphas: Vec<&[f32]> = grid.iter().map(|c| c.alpha()).collect();
        assert_eq!(alphas, vec![&[0.0, 1.0][..], &[1.0, 0.0][..], &[0.5, 0.5][..]]);
    }

    #[test]
    fn raw_grid_size_is_segments_to_the_n() {
        let raw = grid_coeffs_raw(50, 3, false).unwrap();
        assert_eq!(raw.len(), 50 * 50 * 50);
    }

    #[test]
    fn boundary_exclusion_removes_exactly_the_one_hots() {
        let with = grid_coeffs(5, 3, false).unwrap();
        let without = grid_coeffs(5, 3, true).unwrap();
        assert_eq!(with.len() - without.len(), 3);
        assert!(without.iter().all(|c| !c.is_one_hot()));
    }

    #[test]
    fn ensemble_of_identical_endpoints_matches_single_model() {
        let (subspace, tasks) = trained();
        let degen = degenerate(&subspace);
        let coeffs = sample_coeffs(3, 16, 3).unwrap();
        let ensemble = ensemble_predict(&degen, &coeffs, &tasks[0]).unwrap();
        let single = nn::evaluate(&degen.model, &degen.endpoints[0], &tasks[0]).unwrap();
        assert_eq!(ensemble.accuracy, single.accuracy);
    }

    #[test]
    fn ensemble_with_centre_weights_matches_centre() {
        let (subspace, tasks) = trained();
        let uniform = vec![Coeffs::uniform(3)];
        let ens = ensemble_predict(&subspace, &uniform, &tasks[1]).unwrap();
        let cen = centre_report(&subspace, &tasks[1]).unwrap();
        assert_eq!(ens.accuracy, cen.accuracy);
    }

    #[test]
    fn interpolated_tie_break_takes_first_instance() {
        let (subspace, tasks) = trained();
        let degen = degenerate(&subspace);
        let list = vec![
            Coeffs::new(vec![0.5, 0.25, 0.25]).unwrap(),
            Coeffs::new(vec![0.25, 0.5, 0.25]).unwrap(),
        ];
        let report = lowest_loss_interpolated(&degen, &tasks[0], &list).unwrap();
        assert_eq!(report.coeffs.as_ref().unwrap(), &list[0]);
    }

    #[test]
    fn boundary_report_is_consistent_with_direct_evaluation() {
        let (subspace, tasks) = trained();
        let report = lowest_loss_boundary(&subspace, &tasks[0]).unwrap();
        let chosen = report.coeffs.as_ref().unwrap().argmax();
        let direct = nn::evaluate(&subspace.model, &subspace.endpoints[chosen], &tasks[0]).unwrap();
        assert_eq!(report.loss, direct.loss);
        assert_eq!(report.accuracy, direct.accuracy);
    }

    #[test]
    fn degenerate_subspace_modes_coincide() {
        let (subspace, tasks) = trained();
        let degen = degenerate(&subspace);
        let task = &tasks[0];
        let cen = centre_report(&degen, task).unwrap();
        let ens = ensemble_predict(&degen, &sample_coeffs(7, 20, 3).unwrap(), task).unwrap();
        let bnd = lowest_loss_boundary(&degen, task).unwrap();
        let intp =
            lowest_loss_interpolated(&degen, task, &grid_coeffs(3, 3, false).unwrap()).unwrap();
        assert_eq!(cen.accuracy, ens.accuracy);
        assert_eq!(cen.accuracy, bnd.accuracy);
        assert_eq!(cen.accuracy, intp.accuracy);
        // Boundary ties resolve to endpoint 0.
        assert_eq!(bnd.coeffs.as_ref().unwrap().argmax(), 0);
    }

    #[test]
    fn multi_task_reduces_to_single_and_doubles_loss() {
        let (subspace, tasks) = trained();
        let grid = grid_coeffs(3, 3, false).unwrap();
        let single = lowest_loss_interpolated(&subspace, &tasks[2], &grid).unwrap();
        let multi_one = multi_task_lowest_loss(&subspace, &tasks[2..3], &grid).unwrap();
        assert_eq!(single.coeffs, multi_one.coeffs);
        assert!((single.loss - multi_one.loss).abs() < 1e-12);
        let doubled =
            multi_task_lowest_loss(&subspace, &[tasks[2].clone(), tasks[2].clone()], &grid).unwrap();
        assert_eq!(doubled.coeffs, multi_one.coeffs);
        assert!((doubled.loss - 2.0 * multi_one.loss).abs() < 1e-9);
        assert_eq!(doubled.per_task_accuracy.len(), 2);
    }

    #[test]
    fn argmin_is_invariant_under_monotone_loss_transform() {
        let (subspace, tasks) = trained();
        let grid = grid_coeffs(4, 3, false).unwrap();
        let mut losses = Vec::new();
        for c in &grid {
            let p = interpolate_params(c, &subspace.endpoints).unwrap();
            losses.push(nn::evaluate(&subspace.model, &p, &tasks[0]).unwrap().loss);
        }
        let argmin_plain = losses
            .iter()
            .enumerate()
            .fold(0usize, |best, (i, &l)| if l < losses[best] { i } else { best });
        let argmin_exp = losses
            .iter()
            .map(|l| l.exp())
            .enumerate()
            .fold((0usize, f64::INFINITY), |acc, (i, l)| if l < acc.1 { (i, l) } else { acc })
            .0;
        assert_eq!(argmin_plain, argmin_exp);
        let report = lowest_loss_interpolated(&subspace, &tasks[0], &grid).unwrap();
        assert_eq!(report.coeffs.as_ref().unwrap(), &grid[argmin_plain]);
    }
}
