//! Seeded perturbation generators and input-space task interpolation.
//!
//! Every generator is a pure function of (task, spec, seed): calling it
//! twice yields bitwise-identical output. Pixel-domain operations expect
//! inputs in [0, 255].

use rand::Rng;

use crate::error::CoreError;
use crate::rng::{self, purpose};
use crate::task::{Coeffs, TaskSet};
use crate::tensor::Tensor;
use crate::Result;

/// How poisoned samples get their new label.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TargetRule {
    /// Uniform over the task's classes excluding the true label, so every
    /// poisoned sample actually changes label.
    RandomExcludingTrue,
    Fixed(u16),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShiftKind {
    Backdoor {
        poison_rate: f32,
        epsilon: f32,
        target: TargetRule,
    },
    Rotation {
        degrees: f32,
    },
    Permutation,
    Cutmix,
}

/// A seeded description of one perturbation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn backdoor(poison_rate: f32, epsilon: f32, seed: u64) -> Result<Self> {
        let spec = ShiftSpec {
            kind: ShiftKind::Backdoor {
                poison_rate,
                epsilon,
                target: TargetRule::RandomExcludingTrue,
            },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rotation(degrees: f32, seed: u64) -> Result<Self> {
        let spec = ShiftSpec { kind: ShiftKind::Rotation { degrees }, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ShiftKind::Backdoor { poison_rate, epsilon, .. } => {
                for (name, v) in [("poison rate", poison_rate), ("epsilon", epsilon)] {
                    if !(0.0..=1.0).contains(v) || !v.is_finite() {
                        return Err(CoreError::InvalidParameter(format!(
                            "backdoor {name} {v} not in [0,1]"
                        )));
                    }
                }
            }
            ShiftKind::Rotation { degrees } => {
                if !(0.0..360.0).contains(degrees) {
                    return Err(CoreError::InvalidParameter(format!(
                        "rotation degrees {degrees} not in [0,360)"
                    )));
                }
            }
            ShiftKind::Permutation | ShiftKind::Cutmix => {}
        }
        Ok(())
    }
}

/// The paper's rotation degree presets, stored verbatim.
pub mod presets {
    /// Train-time rotation per subset index.
    pub const TRAIN_ROTATIONS: [f32; 12] =
        [90.0, 0.0, 270.0, 180.0, 45.0, 135.0, 61.0, 315.0, 60.0, 315.0, 20.0, 75.0];

    /// Test-time rotations (100 seeded draws).
    pub const TEST_ROTATIONS: [u16; 100] = [
        20, 47, 77, 109, 304, 87, 304, 254, 146, 94, 98, 39, 306, 114, 267, 42, 231, 120, 40, 339,
        352, 14, 264, 288, 203, 175, 308, 355, 324, 76, 213, 209, 167, 4, 170, 234, 120, 87, 43,
        337, 300, 358, 29, 237, 107, 62, 84, 95, 9, 327, 203, 331, 1, 27, 59, 122, 52, 294, 64,
        128, 263, 39, 141, 291, 25, 39, 176, 79, 104, 243, 265, 166, 270, 113, 23, 65, 297, 19,
        196, 134, 119, 169, 42, 178, 250, 253, 276, 354, 291, 298, 20, 0, 343, 263, 164, 246, 217,
        184, 163, 98,
    ];
}

fn task_classes(task: &TaskSet) -> usize {
    task.fine.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
}

/// One static trigger: a square patch at a fixed position with fixed pixel
/// values per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub y: usize,
    pub x: usize,
    pub side: usize,
    /// channels * side * side pixel values in [0, 255].
    pub values: Vec<f32>,
}

/// Builds the seeded trigger for a (seed, set_index) pair on images of the
/// given dims: side `floor(sqrt(epsilon) * min(H, W))` at a uniform position
/// with uniform random pixel values.
pub fn backdoor_trigger(
    epsilon: f32,
    seed: u64,
    set_index: u64,
    dims: (usize, usize, usize),
) -> Result<Trigger> {
    let (c, h, w) = dims;
    let side = ((epsilon as f64).sqrt() * h.min(w) as f64).floor() as usize;
    if side == 0 {
        return Err(CoreError::InvalidParameter(format!(
            "backdoor epsilon {epsilon} yields a zero-side patch on {h}x{w} inputs"
        )));
    }
    let mut rng = rng::stream(seed, purpose::BACKDOOR, set_index);
    let y = rng.random_range(0..=(h - side));
    let x = rng.random_range(0..=(w - side));
    let mut values = Vec::with_capacity(c * side * side);
    for _ in 0..(c * side * side) {
        values.push(rng.random_range(0..=255u32) as f32);
    }
    Ok(Trigger { y, x, side, values })
}

/// Pastes a trigger onto the listed samples in place. Labels untouched.
pub fn paste_trigger(task: &mut TaskSet, trigger: &Trigger, indices: &[usize]) -> Result<()> {
    let (c, h, w) = task.image_dims()?;
    for &i in indices {
        let row = task.inputs.row_mut(i);
        for ci in 0..c {
            for dy in 0..trigger.side {
                for dx in 0..trigger.side {
                    row[ci * h * w + (trigger.y + dy) * w + (trigger.x + dx)] =
                        trigger.values[(ci * trigger.side + dy) * trigger.side + dx];
                }
            }
        }
    }
    Ok(())
}

/// Inserts a seeded static trigger into a fraction `poison_rate` of the
/// samples (seeded choice) and rewrites the poisoned labels per the target
/// rule. `set_index` is the perturbation-set index that makes each trigger
/// distinct.
pub fn apply_backdoor(task: &TaskSet, spec: &ShiftSpec, set_index: u64) -> Result<TaskSet> {
    spec.validate()?;
    let (poison_rate, epsilon, target) = match &spec.kind {
        ShiftKind::Backdoor { poison_rate, epsilon, target } => (*poison_rate, *epsilon, *target),
        other => {
            return Err(CoreError::InvalidParameter(format!(
                "apply_backdoor called with {other:?}"
            )))
        }
    };
    task.image_dims()?;
    let mut out = task.clone();
    out.provenance
        .push(format!("backdoor p={poison_rate} eps={epsilon} seed={} set={set_index}", spec.seed));
    if poison_rate == 0.0 {
        return Ok(out);
    }
    out.name = format!("{}-backdoor{set_index}", task.name);

    let trigger = backdoor_trigger(epsilon, spec.seed, set_index, task.image_dims()?)?;
    let n = task.len();
    let poisoned = ((poison_rate as f64) * n as f64).round() as usize;
    let mut rng = rng::stream(spec.seed, purpose::BACKDOOR_SELECT, set_index);
    let order = rng::permutation(&mut rng, n);
    let mut chosen: Vec<usize> = order[..poisoned].to_vec();
    chosen.sort_unstable();
    paste_trigger(&mut out, &trigger, &chosen)?;

    let classes = task_classes(task);
    for &i in &chosen {
        out.fine[i] = match target {
            TargetRule::Fixed(label) => label,
            TargetRule::RandomExcludingTrue => {
                if classes < 2 {
                    return Err(CoreError::InvalidParameter(
                        "random target labels need at least 2 classes".into(),
                    ));
                }
                let draw = rng.random_range(0..(classes - 1)) as u16;
                if draw >= task.fine[i] {
                    draw + 1
                } else {
                    draw
                }
            }
        };
    }
    Ok(out)
}

/// Indices of samples a backdoor spec would poison (for allocation checks).
pub fn backdoor_poisoned_indices(task: &TaskSet, spec: &ShiftSpec, set_index: u64) -> Result<Vec<usize>> {
    let before = apply_backdoor(task, spec, set_index)?;
    Ok((0..task.len())
        .filter(|&i| before.inputs.row(i) != task.inputs.row(i))
        .collect())
}

/// Rotates every image about its centre by `degrees`, bilinear sampling with
/// zero fill outside the frame. Quarter turns use the exact pixel mapping.
/// Labels are unchanged.
pub fn apply_rotation(task: &TaskSet, degrees: f32) -> Result<TaskSet> {
    let (c, h, w) = task.image_dims()?;
    let mut out = task.clone();
    out.provenance.push(format!("rotation {degrees} degrees"));
    if degrees == 0.0 {
        return Ok(out);
    }
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    // Inverse mapping: destination pixel samples the source at -degrees.
    let exact_quarter = degrees == 90.0 || degrees == 180.0 || degrees == 270.0;
    let (cos_t, sin_t) = if exact_quarter {
        match degrees as u32 {
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = degrees.to_radians();
        (r.cos(), r.sin())
    };
    for i in 0..task.len() {
        let src = task.inputs.row(i).to_vec();
        let dst = out.inputs.row_mut(i);
        for ci in 0..c {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f32 - cy;
                    let dx = x as f32 - cx;
                    let sy = cos_t * dy + sin_t * dx + cy;
                    let sx = -sin_t * dy + cos_t * dx + cx;
                    dst[ci * h * w + y * w + x] = bilinear(plane, h, w, sy, sx);
                }
            }
        }
    }
    Ok(out)
}

fn bilinear(plane: &[f32], h: usize, w: usize, sy: f32, sx: f32) -> f32 {
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= h as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= w as i64 || wx == 0.0 {
                continue;
            }
            acc += wy * wx * plane[yy as usize * w + xx as usize];
        }
    }
    acc
}

/// The seeded pixel-position permutation used by [`apply_permutation`].
/// Seed 0 is the degenerate identity mode.
pub fn pixel_permutation(seed: u64, n: usize) -> Vec<usize> {
    if seed == 0 {
        (0..n).collect()
    } else {
        let mut rng = rng::stream(seed, purpose::PERMUTE, 0);
        rng::permutation(&mut rng, n)
    }
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Applies one seeded fixed permutation of pixel positions identically to
/// every image (all channels move together). Labels are unchanged.
pub fn apply_permutation(task: &TaskSet, seed: u64) -> Result<TaskSet> {
    let positions = match task.inputs.shape() {
        [_, _, h, w] => h * w,
        [_, f] => *f,
        other => {
            return Err(CoreError::shape(
                "apply_permutation",
                "(n,c,h,w) or (n,features)".to_string(),
                format!("{other:?}"),
            ))
        }
    };
    let perm = pixel_permutation(seed, positions);
    let mut out = apply_pixel_permutation(task, &perm)?;
    out.provenance.push(format!("permutation seed={seed}"));
    Ok(out)
}

/// Applies an explicit pixel-position permutation: output position `i` takes
/// the value at `perm[i]`.
pub fn apply_pixel_permutation(task: &TaskSet, perm: &[usize]) -> Result<TaskSet> {
    let (channels, positions) = match task.inputs.shape() {
        [_, c, h, w] => (*c, h * w),
        [_, f] => (1, *f),
        other => {
            return Err(CoreError::shape(
                "apply_pixel_permutation",
                "(n,c,h,w) or (n,features)".to_string(),
                format!("{other:?}"),
            ))
        }
    };
    if perm.len() != positions {
        return Err(CoreError::shape(
            "pixel permutation",
            format!("{positions}"),
            format!("{}", perm.len()),
        ));
    }
    let mut out = task.clone();
    for i in 0..task.len() {
        let src = task.inputs.row(i);
        let dst = out.inputs.row_mut(i);
        for c in 0..channels {
            let base = c * positions;
            for (pos, &from) in perm.iter().enumerate() {
                dst[base + pos] = src[base + from];
            }
        }
    }
    Ok(out)
}

/// A pixel box in (row, col, height, width) form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

/// CutMix with an explicit partner assignment and box; soft labels mix the
/// one-hot rows proportionally to pixel counts.
pub fn cutmix_with_box(
    inputs: &Tensor<f32>,
    labels: &[u16],
    classes: usize,
    partner: &[usize],
    cut: CutBox,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (c, h, w) = match inputs.shape() {
        [_, c, h, w] => (*c, *h, *w),
        other => {
            return Err(CoreError::shape(
                "cutmix inputs",
                "(n,c,h,w)".to_string(),
                format!("{other:?}"),
            ))
        }
    };
    let n = inputs.outer_len();
    if cut.y + cut.h > h || cut.x + cut.w > w {
        return Err(CoreError::InvalidParameter("cutmix box outside image".into()));
    }
    let mut mixed = inputs.clone();
    let weight = cut.area() as f32 / (h * w) as f32;
    let mut soft = Tensor::zeros(vec![n, classes]);
    for i in 0..n {
        let p = partner[i];
        let src = inputs.row(p).to_vec();
        let dst = mixed.row_mut(i);
        for ci in 0..c {
            for dy in 0..cut.h {
                for dx in 0..cut.w {
                    let idx = ci * h * w + (cut.y + dy) * w + (cut.x + dx);
                    dst[idx] = src[idx];
                }
            }
        }
        let row = soft.row_mut(i);
        if labels[i] as usize >= classes || labels[p] as usize >= classes {
            return Err(CoreError::LabelOutOfRange {
                label: labels[i].max(labels[p]) as u32,
                classes,
            });
        }
        row[labels[i] as usize] += 1.0 - weight;
        row[labels[p] as usize] += weight;
    }
    Ok((mixed, soft))
}

/// Seeded CutMix over one batch: lambda ~ U[0,1] fixes the box scale
/// (sides proportional to sqrt(1-lambda)), the centre is uniform with the
/// box clipped to the frame, and partners come from a seeded shuffle.
pub fn cutmix_batch(
    inputs: &Tensor<f32>,
    labels: &[u16],
    classes: usize,
    seed: u64,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let n = inputs.outer_len();
    if n < 2 {
        return Err(CoreError::InvalidParameter("cutmix needs a batch of at least 2".into()));
    }
    let (_, h, w) = match inputs.shape() {
        [_, c, h, w] => (*c, *h, *w),
        other => {
            return Err(CoreError::shape(
                "cutmix inputs",
                "(n,c,h,w)".to_string(),
                format!("{other:?}"),
            ))
        }
    };
    let mut rng = rng::stream(seed, purpose::CUTMIX, 0);
    let lambda: f64 = rng.random_range(0.0..1.0);
    let scale = (1.0 - lambda).sqrt();
    let rh = ((h as f64) * scale).floor() as usize;
    let rw = ((w as f64) * scale).floor() as usize;
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    let y0 = cy.saturating_sub(rh / 2);
    let x0 = cx.saturating_sub(rw / 2);
    let cut = CutBox {
        y: y0,
        x: x0,
        h: rh.min(h - y0),
        w: rw.min(w - x0),
    };
    let partner = rng::permutation(&mut rng, n);
    cutmix_with_box(inputs, labels, classes, &partner, cut)
}

/// Linearly interpolates label-shared tasks: pixels are the coefficient-
/// weighted sum clipped to [0, 255]; labels come from the task with the
/// largest coefficient (ties to the lowest index).
pub fn interpolate_tasks(tasks: &[TaskSet], coeffs: &Coeffs) -> Result<TaskSet> {
    if tasks.is_empty() {
        return Err(CoreError::Empty("interpolate_tasks".into()));
    }
    if tasks.len() != coeffs.len() {
        return Err(CoreError::shape(
            "interpolate_tasks",
            format!("{} coefficients", tasks.len()),
            format!("{}", coeffs.len()),
        ));
    }
    let first = &tasks[0];
    for t in &tasks[1..] {
        if t.len() != first.len() || t.inputs.shape() != first.inputs.shape() {
            return Err(CoreError::shape(
                "interpolate_tasks",
                format!("{} samples of {:?}", first.len(), first.inputs.shape()),
                format!("{} samples of {:?}", t.len(), t.inputs.shape()),
            ));
        }
        if t.coarse != first.coarse {
            return Err(CoreError::InvalidParameter(
                "interpolate_tasks requires label-shared tasks (identical coarse labels)".into(),
            ));
        }
    }
    let mut data = vec![0.0f32; first.inputs.len()];
    for (alpha, task) in coeffs.alpha().iter().zip(tasks) {
        for (acc, v) in data.iter_mut().zip(task.inputs.data()) {
            *acc += alpha * v;
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 255.0);
    }
    let src = &tasks[coeffs.argmax()];
    let alphas: Vec<String> = coeffs.alpha().iter().map(|a| a.to_string()).collect();
    Ok(TaskSet {
        inputs: Tensor::new(first.inputs.shape().to_vec(), data)?,
        fine: src.fine.clone(),
        coarse: src.coarse.clone(),
        name: format!("interp[{}]", alphas.join(",")),
        provenance: vec![format!(
            "interpolated from [{}] with alpha [{}]",
            tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", "),
            alphas.join(",")
        )],
    })
}

/// Cartesian per-axis grid over [0, 1] with `segments` values per axis,
/// excluding the all-zero coefficient (the all-ones case is kept). Returns
/// each coefficient paired with its interpolated task, enumerated with the
/// last axis fastest.
pub fn enumerate_task_grid(tasks: &[TaskSet], segments: usize) -> Result<Vec<(Coeffs, TaskSet)>> {
    if segments < 2 {
        return Err(CoreError::InvalidParameter("segments must be >= 2".into()));
    }
    let n = tasks.len();
    if n == 0 {
        return Err(CoreError::Empty("enumerate_task_grid".into()));
    }
    let axis: Vec<f32> = (0..segments).map(|i| i as f32 / (segments - 1) as f32).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        if idx.iter().any(|&i| i != 0) {
            let alpha: Vec<f32> = idx.iter().map(|&i| axis[i]).collect();
            let coeffs = Coeffs::new(alpha)?;
            let task = interpolate_tasks(tasks, &coeffs)?;
            out.push((coeffs, task));
        }
        // Odometer increment, last axis fastest.
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{make_synthetic_tasks, SyntheticMode};

    fn image_task(n: usize, c: usize, h: usize, w: usize, seed: u64) -> TaskSet {
        use rand::Rng;
        let mut rng = rng::stream(seed, 99, 0);
        let data: Vec<f32> = (0..n * c * h * w).map(|_| rng.random_range(0..=255u32) as f32).collect();
        let labels: Vec<u16> = (0..n).map(|i| (i % 4) as u16).collect();
        TaskSet::new(Tensor::new(vec![n, c, h, w], data).unwrap(), labels.clone(), labels, "fixture").unwrap()
    }

    #[test]
    fn backdoor_poison_counts_and_patch() {
        let task = image_task(1000, 3, 32, 32, 5);
        let spec = ShiftSpec::backdoor(0.4, 0.4, 1).unwrap();
        let out = apply_backdoor(&task, &spec, 1).unwrap();
        let poisoned = backdoor_poisoned_indices(&task, &spec, 1).unwrap();
        assert!((poisoned.len() as i64 - 400).abs() <= 1, "poisoned {}", poisoned.len());
        // First poisoned sample: changed pixels form a 20x20 patch per channel.
        let i = poisoned[0];
        let changed: Vec<usize> = (0..task.inputs.inner_len())
            .filter(|&k| task.inputs.row(i)[k] != out.inputs.row(i)[k])
            .collect();
        assert!(changed.len() <= 3 * 400);
        // All changed positions agree across samples (static trigger).
        let j = poisoned[1];
        let changed_j: Vec<usize> = (0..task.inputs.inner_len())
            .filter(|&k| task.inputs.row(j)[k] != out.inputs.row(j)[k])
            .collect();
        for k in &changed {
            assert_eq!(out.inputs.row(i)[*k], out.inputs.row(j)[*k]);
        }
        assert!(changed_j.len() <= 3 * 400);
        // Patch geometry: floor(sqrt(0.4) * 32) = 20.
        let side = ((0.4f64).sqrt() * 32.0).floor() as usize;
        assert_eq!(side, 20);
    }

    #[test]
    fn backdoor_zero_rate_is_identity() {
        let task = image_task(10, 1, 8, 8, 2);
        let spec = ShiftSpec::backdoor(0.0, 0.4, 1).unwrap();
        let out = apply_backdoor(&task, &spec, 1).unwrap();
        assert_eq!(out.inputs, task.inputs);
        assert_eq!(out.fine, task.fine);
    }

    #[test]
    fn backdoor_is_deterministic_per_index() {
        let task = image_task(50, 1, 8, 8, 3);
        let spec = ShiftSpec::backdoor(0.5, 0.4, 7).unwrap();
        let a = apply_backdoor(&task, &spec, 2).unwrap();
        let b = apply_backdoor(&task, &spec, 2).unwrap();
        assert_eq!(a, b);
        let c = apply_backdoor(&task, &spec, 3).unwrap();
        assert_ne!(a.inputs.data(), c.inputs.data());
    }

    #[test]
    fn backdoor_changes_poisoned_labels() {
        let task = image_task(100, 1, 8, 8, 4);
        let spec = ShiftSpec::backdoor(0.3, 0.5, 1).unwrap();
        let out = apply_backdoor(&task, &spec, 1).unwrap();
        let poisoned = backdoor_poisoned_indices(&task, &spec, 1).unwrap();
        for &i in &poisoned {
            assert_ne!(out.fine[i], task.fine[i], "sample {i}");
        }
        for i in 0..task.len() {
            if !poisoned.contains(&i) {
                assert_eq!(out.fine[i], task.fine[i]);
            }
        }
    }

    #[test]
    fn backdoor_rejects_zero_patch() {
        let task = image_task(10, 1, 8, 8, 2);
        let spec = ShiftSpec::backdoor(0.5, 0.001, 1).unwrap();
        assert!(apply_backdoor(&task, &spec, 1).is_err());
    }

    #[test]
    fn rotation_zero_is_identity() {
        let task = image_task(5, 3, 9, 9, 6);
        let out = apply_rotation(&task, 0.0).unwrap();
        assert_eq!(out.inputs, task.inputs);
    }

    #[test]
    fn rotation_180_twice_is_identity() {
        let task = image_task(4, 1, 8, 8, 7);
        let once = apply_rotation(&task, 180.0).unwrap();
        let twice = apply_rotation(&once, 180.0).unwrap();
        for (a, b) in twice.inputs.data().iter().zip(task.inputs.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(twice.fine, task.fine);
    }

    #[test]
    fn rotation_presets_match_paper_lists() {
        assert_eq!(presets::TRAIN_ROTATIONS[..4], [90.0, 0.0, 270.0, 180.0]);
        assert_eq!(presets::TRAIN_ROTATIONS.len(), 12);
        assert_eq!(presets::TEST_ROTATIONS.len(), 100);
        assert_eq!(presets::TEST_ROTATIONS[..5], [20, 47, 77, 109, 304]);
        assert_eq!(presets::TEST_ROTATIONS[99], 98);
        assert!(presets::TEST_ROTATIONS.iter().all(|&d| d < 360));
    }

    #[test]
    fn permutation_inverse_recovers_input() {
        let task = image_task(6, 3, 8, 8, 8);
        let perm = pixel_permutation(5, 64);
        let forward = apply_pixel_permutation(&task, &perm).unwrap();
        assert_ne!(forward.inputs.data(), task.inputs.data());
        let back = apply_pixel_permutation(&forward, &invert_permutation(&perm)).unwrap();
        assert_eq!(back.inputs, task.inputs);
        assert_eq!(forward.fine, task.fine);
    }

    #[test]
    fn permutation_identity_and_determinism() {
        let task = image_task(3, 1, 6, 6, 9);
        let id = apply_permutation(&task, 0).unwrap();
        assert_eq!(id.inputs, task.inputs);
        let a = apply_permutation(&task, 11).unwrap();
        let b = apply_permutation(&task, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cutmix_box_label_weights() {
        let task = image_task(2, 1, 8, 8, 10);
        let partner = vec![1, 0];
        // 25% area: 4x4 of 8x8.
        let (mixed, soft) = cutmix_with_box(
            &task.inputs,
            &task.fine,
            4,
            &partner,
            CutBox { y: 0, x: 0, h: 4, w: 4 },
        )
        .unwrap();
        assert_eq!(soft.row(0)[task.fine[0] as usize], 0.75);
        assert_eq!(soft.row(0)[task.fine[1] as usize], 0.25);
        // Zero-area box: identity inputs, one-hot labels.
        let (same, hard) = cutmix_with_box(
            &task.inputs,
            &task.fine,
            4,
            &partner,
            CutBox { y: 0, x: 0, h: 0, w: 0 },
        )
        .unwrap();
        assert_eq!(same, task.inputs);
        assert_eq!(hard.row(0)[task.fine[0] as usize], 1.0);
        // Full box: partner image, partner weight 1.
        let (full, flipped) = cutmix_with_box(
            &task.inputs,
            &task.fine,
            4,
            &partner,
            CutBox { y: 0, x: 0, h: 8, w: 8 },
        )
        .unwrap();
        assert_eq!(full.row(0), task.inputs.row(1));
        assert_eq!(flipped.row(0)[task.fine[1] as usize], 1.0);
        let _ = mixed;
    }

    #[test]
    fn cutmix_batch_is_seeded() {
        let task = image_task(8, 1, 8, 8, 12);
        let a = cutmix_batch(&task.inputs, &task.fine, 4, 3).unwrap();
        let b = cutmix_batch(&task.inputs, &task.fine, 4, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(cutmix_batch(&task.inputs.gather_rows(&[0]), &task.fine[..1], 4, 3).is_err());
    }

    #[test]
    fn interpolation_identity_and_argmax() {
        let tasks = make_synthetic_tasks(1, 3, 3, 4, SyntheticMode::RotatedGaussians).unwrap();
        let one_hot = interpolate_tasks(&tasks, &Coeffs::one_hot(3, 0)).unwrap();
        assert_eq!(one_hot.inputs, tasks[0].inputs);
        assert_eq!(one_hot.fine, tasks[0].fine);
        let skewed = interpolate_tasks(&tasks, &Coeffs::new(vec![0.2, 0.8, 0.0]).unwrap()).unwrap();
        assert_eq!(skewed.fine, tasks[1].fine);
    }

    #[test]
    fn interpolation_clips_to_pixel_range() {
        let bright = image_task(3, 1, 4, 4, 13);
        let tasks = vec![bright.clone(), bright.clone(), bright];
        let summed = interpolate_tasks(&tasks, &Coeffs::new(vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert!(summed.inputs.data().iter().all(|&v| v <= 255.0));
        let has_clipped = summed
            .inputs
            .data()
            .iter()
            .zip(tasks[0].inputs.data())
            .any(|(&s, &o)| s == 255.0 && o > 85.0 && o < 255.0);
        assert!(has_clipped, "expected some pixel to hit the 255 clip");
    }

    #[test]
    fn grid_excludes_all_zero_keeps_all_ones() {
        let tasks = make_synthetic_tasks(2, 3, 3, 2, SyntheticMode::RotatedGaussians).unwrap();
        let grid = enumerate_task_grid(&tasks, 5).unwrap();
        assert_eq!(grid.len(), 124);
        assert!(grid.iter().all(|(c, _)| c.alpha().iter().any(|&a| a != 0.0)));
        assert!(grid.iter().any(|(c, _)| c.alpha() == [1.0, 1.0, 1.0]));
        // Determinism, including order.
        let again = enumerate_task_grid(&tasks, 5).unwrap();
        assert!(grid.iter().zip(&again).all(|(a, b)| a.0 == b.0 && a.1 == b.1));

        let two = make_synthetic_tasks(2, 2, 3, 2, SyntheticMode::RotatedGaussians).unwrap();
        let small = enumerate_task_grid(&two, 2).unwrap();
        let coeffs: Vec<&[f32]> = small.iter().map(|(c, _)| c.alpha()).collect();
        assert_eq!(coeffs, vec![&[0.0, 1.0][..], &[1.0, 0.0][..], &[1.0, 1.0][..]]);
    }
}
