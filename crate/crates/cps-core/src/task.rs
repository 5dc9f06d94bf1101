//! Datasets and interpolation coefficients.
//!
//! A [`TaskSet`] is one train- or test-time distribution: an input tensor
//! (pixel values in [0, 255] until [`TaskSet::normalized`] maps them to
//! [0, 1]), fine labels, and coarse labels. CIFAR binary parsers, the seeded
//! synthetic generators, and the 80-20 split all live here.

use std::io::Read;
use std::path::Path;

use rand::Rng;

use crate::error::CoreError;
use crate::rng::{self, purpose};
use crate::tensor::Tensor;
use crate::Result;

/// Interpolation coefficient vector; each entry lies in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Coeffs {
    alpha: Vec<f32>,
}

impl Coeffs {
    pub fn new(alpha: Vec<f32>) -> Result<Self> {
        for &a in &alpha {
            if !a.is_finite() || !(0.0..=1.0).contains(&a) {
                return Err(CoreError::CoeffOutOfRange { value: a as f64 });
            }
        }
        Ok(Coeffs { alpha })
    }

    /// Uniform convex weights `1/n`.
    pub fn uniform(n: usize) -> Self {
        Coeffs { alpha: vec![1.0 / n as f32; n] }
    }

    /// One-hot vector selecting endpoint `index`.
    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut alpha = vec![0.0; n];
        alpha[index] = 1.0;
        Coeffs { alpha }
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn sum(&self) -> f32 {
        self.alpha.iter().sum()
    }

    /// Rescaled view with sum 1; errors on an all-zero vector.
    pub fn normalized(&self) -> Result<Coeffs> {
        let s = self.sum();
        if s == 0.0 {
            return Err(CoreError::zero_norm("coefficient normalization"));
        }
        Ok(Coeffs { alpha: self.alpha.iter().map(|a| a / s).collect() })
    }

    /// Index of the largest coefficient; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_one_hot(&self) -> bool {
        let mut ones = 0;
        for &a in &self.alpha {
            if a == 1.0 {
                ones += 1;
            } else if a != 0.0 {
                return false;
            }
        }
        ones == 1
    }
}

/// A labeled dataset representing one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub inputs: Tensor<f32>,
    pub fine: Vec<u16>,
    pub coarse: Vec<u16>,
    pub name: String,
    pub provenance: Vec<String>,
}

impl TaskSet {
    pub fn new(
        inputs: Tensor<f32>,
        fine: Vec<u16>,
        coarse: Vec<u16>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if inputs.outer_len() != fine.len() || fine.len() != coarse.len() {
            return Err(CoreError::shape(
                "task construction",
                format!("{} labels", inputs.outer_len()),
                format!("{} fine / {} coarse", fine.len(), coarse.len()),
            ));
        }
        Ok(TaskSet {
            inputs,
            fine,
            coarse,
            name: name.into(),
            provenance: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }

    /// Pixel dimensions (channels, height, width) for image tasks.
    pub fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.inputs.shape() {
            [_, c, h, w] => Ok((*c, *h, *w)),
            other => Err(CoreError::shape(
                "image task",
                "(count, channels, height, width)".to_string(),
                format!("{other:?}"),
            )),
        }
    }

    /// Inputs divided by 255: the [0, 1] view used for training and attacks.
    pub fn normalized(&self) -> TaskSet {
        let mut out = self.clone();
        for v in out.inputs.data_mut() {
            *v /= 255.0;
        }
        out.provenance.push("normalized".into());
        out
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance.push(note.into());
        self
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;
const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;

fn cifar_records(bytes: &[u8], stride: usize, what: &str) -> Result<usize> {
    if bytes.len() % stride != 0 {
        return Err(CoreError::MalformedData(format!(
            "{what}: length {} is not a multiple of the {stride}-byte record size",
            bytes.len()
        )));
    }
    Ok(bytes.len() / stride)
}

/// Parses CIFAR-10 binary records (1 label byte + 3072 pixel bytes).
pub fn load_cifar10_bytes(bytes: &[u8]) -> Result<TaskSet> {
    let count = cifar_records(bytes, CIFAR10_RECORD, "cifar-10")?;
    let mut data = Vec::with_capacity(count * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(count);
    for rec in 0..count {
        let offset = rec * CIFAR10_RECORD;
        let label = bytes[offset];
        if label >= 10 {
            return Err(CoreError::LabelOutOfRange { label: label as u32, classes: 10 });
        }
        labels.push(label as u16);
        data.extend(bytes[offset + 1..offset + CIFAR10_RECORD].iter().map(|&b| b as f32));
    }
    let inputs = Tensor::new(vec![count, 3, 32, 32], data)?;
    TaskSet::new(inputs, labels.clone(), labels, "cifar10")
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<TaskSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    Ok(load_cifar10_bytes(&bytes)?.with_provenance(format!("file {}", path.as_ref().display())))
}

/// Parses CIFAR-100 binary records (coarse byte, fine byte, 3072 pixels).
pub fn load_cifar100_bytes(bytes: &[u8]) -> Result<TaskSet> {
    let count = cifar_records(bytes, CIFAR100_RECORD, "cifar-100")?;
    let mut data = Vec::with_capacity(count * CIFAR_PIXELS);
    let mut fine = Vec::with_capacity(count);
    let mut coarse = Vec::with_capacity(count);
    for rec in 0..count {
        let offset = rec * CIFAR100_RECORD;
        let (c, f) = (bytes[offset], bytes[offset + 1]);
        if c >= 20 {
            return Err(CoreError::LabelOutOfRange { label: c as u32, classes: 20 });
        }
        if f >= 100 {
            return Err(CoreError::LabelOutOfRange { label: f as u32, classes: 100 });
        }
        coarse.push(c as u16);
        fine.push(f as u16);
        data.extend(bytes[offset + 2..offset + CIFAR100_RECORD].iter().map(|&b| b as f32));
    }
    let inputs = Tensor::new(vec![count, 3, 32, 32], data)?;
    TaskSet::new(inputs, fine, coarse, "cifar100")
}

pub fn load_cifar100(path: impl AsRef<Path>) -> Result<TaskSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    Ok(load_cifar100_bytes(&bytes)?.with_provenance(format!("file {}", path.as_ref().display())))
}

fn pixel_byte(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Inverse of [`load_cifar10_bytes`]; pixel values are rounded into bytes.
pub fn serialize_cifar10(task: &TaskSet) -> Result<Vec<u8>> {
    let (c, h, w) = task.image_dims()?;
    if (c, h, w) != (3, 32, 32) {
        return Err(CoreError::shape("cifar-10 serialization", "3x32x32", format!("{c}x{h}x{w}")));
    }
    let mut out = Vec::with_capacity(task.len() * CIFAR10_RECORD);
    for i in 0..task.len() {
        out.push(task.fine[i] as u8);
        out.extend(task.inputs.row(i).iter().map(|&v| pixel_byte(v)));
    }
    Ok(out)
}

/// Inverse of [`load_cifar100_bytes`].
pub fn serialize_cifar100(task: &TaskSet) -> Result<Vec<u8>> {
    let (c, h, w) = task.image_dims()?;
    if (c, h, w) != (3, 32, 32) {
        return Err(CoreError::shape("cifar-100 serialization", "3x32x32", format!("{c}x{h}x{w}")));
    }
    let mut out = Vec::with_capacity(task.len() * CIFAR100_RECORD);
    for i in 0..task.len() {
        out.push(task.coarse[i] as u8);
        out.push(task.fine[i] as u8);
        out.extend(task.inputs.row(i).iter().map(|&v| pixel_byte(v)));
    }
    Ok(out)
}

/// Subset of `base` keeping only the listed fine labels, re-indexed to
/// `0..L-1` in list order. Original labels are recorded in provenance.
pub fn filter_task(base: &TaskSet, fine_labels: &[u16]) -> Result<TaskSet> {
    if fine_labels.is_empty() {
        return Err(CoreError::Empty("filter_task label list".into()));
    }
    for &l in fine_labels {
        if !base.fine.contains(&l) {
            return Err(CoreError::LabelOutOfRange {
                label: l as u32,
                classes: fine_labels.len(),
            });
        }
    }
    let mut keep = Vec::new();
    let mut fine = Vec::new();
    let mut coarse = Vec::new();
    for (i, &l) in base.fine.iter().enumerate() {
        if let Some(pos) = fine_labels.iter().position(|&want| want == l) {
            keep.push(i);
            fine.push(pos as u16);
            coarse.push(base.coarse[i]);
        }
    }
    let inputs = base.inputs.gather_rows(&keep);
    Ok(TaskSet {
        inputs,
        fine,
        coarse,
        name: format!("{}-filtered", base.name),
        provenance: {
            let mut p = base.provenance.clone();
            p.push(format!("filter fine labels {fine_labels:?}"));
            p
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticMode {
    /// Gaussian class clusters on an off-centre arc; each task rotates the
    /// whole constellation about the canvas centre.
    RotatedGaussians,
    /// Concentric class rings; each task shifts the ring centre.
    ShiftedRings,
}

/// Canvas side of the synthetic image tasks.
pub const SYNTH_IMG_SIDE: usize = 10;
/// Per-task rotation step (degrees) for [`SyntheticMode::RotatedGaussians`].
pub const TASK_ROTATION_STEP: f32 = 50.0;
/// Per-task centre shift (pixels) for [`SyntheticMode::ShiftedRings`].
pub const TASK_RING_SHIFT: f32 = 0.9;

/// Seeded single-channel image tasks sharing one label set, with the
/// inter-task shift controlled by `mode`. Each sample is a 2-D point drawn
/// once from the seed and rendered as a gaussian bump; task `t` applies its
/// transform to the same base draws, so samples are index-aligned across
/// tasks and input-space interpolation is meaningful.
pub fn make_synthetic_tasks(
    seed: u64,
    n_tasks: usize,
    classes: usize,
    samples_per_class: usize,
    mode: SyntheticMode,
) -> Result<Vec<TaskSet>> {
    if n_tasks == 0 {
        return Err(CoreError::InvalidParameter("n_tasks must be >= 1".into()));
    }
    if classes < 2 {
        return Err(CoreError::InvalidParameter("classes must be >= 2".into()));
    }
    if samples_per_class == 0 {
        return Err(CoreError::InvalidParameter("samples_per_class must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, purpose::SYNTH, 0);
    let count = classes * samples_per_class;
    let side = SYNTH_IMG_SIDE;
    let centre = (side as f32 - 1.0) / 2.0;

    // Base points in centre-origin coordinates, shared by every task.
    let mut base = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    match mode {
        SyntheticMode::RotatedGaussians => {
            // Off-centre arc: class angles cover only part of the circle so
            // the constellation centroid moves when a task rotates it.
            let radius = 2.0f32;
            let sigma = 0.8f32;
            for class in 0..classes {
                let angle = 2.0 * std::f32::consts::PI * (class as f32) / (classes as f32 + 0.5);
                let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
                for _ in 0..samples_per_class {
                    let (gx, gy) = gauss2(&mut rng);
                    base.push(cx + sigma * gx);
                    base.push(cy + sigma * gy);
                    labels.push(class as u16);
                }
            }
        }
        SyntheticMode::ShiftedRings => {
            let base_radius = 1.4f32;
            let ring_gap = 1.6f32;
            let sigma = 0.22f32;
            for class in 0..classes {
                let r = base_radius + ring_gap * class as f32;
                for _ in 0..samples_per_class {
                    let angle: f32 = rng.random_range(0.0..(2.0 * std::f32::consts::PI));
                    let (gx, gy) = gauss2(&mut rng);
                    base.push(r * angle.cos() + sigma * gx);
                    base.push(r * angle.sin() + sigma * gy);
                    labels.push(class as u16);
                }
            }
        }
    }

    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let mut data = Vec::with_capacity(count * side * side);
        for j in 0..count {
            let (x, y) = (base[2 * j], base[2 * j + 1]);
            let (px, py) = match mode {
                SyntheticMode::RotatedGaussians => {
                    let theta = (TASK_ROTATION_STEP * t as f32).to_radians();
                    let (c, s) = (theta.cos(), theta.sin());
                    (x * c - y * s, x * s + y * c)
                }
                SyntheticMode::ShiftedRings => {
                    let angle = 2.0 * std::f32::consts::PI * (t as f32) / (n_tasks.max(2) as f32);
                    (
                        x + TASK_RING_SHIFT * t as f32 * angle.cos(),
                        y + TASK_RING_SHIFT * t as f32 * angle.sin(),
                    )
                }
            };
            render_bump(&mut data, side, px + centre, py + centre);
        }
        let inputs = Tensor::new(vec![count, 1, side, side], data)?;
        let task = TaskSet::new(inputs, labels.clone(), labels.clone(), format!("synthetic-{t}"))?
            .with_provenance(format!("synthetic seed={seed} mode={mode:?} task={t}"));
        tasks.push(task);
    }
    Ok(tasks)
}

/// Renders one point as a gaussian intensity bump, appending `side * side`
/// pixel values in [0, 255].
fn render_bump(data: &mut Vec<f32>, side: usize, x: f32, y: f32) {
    const BUMP_SIGMA: f32 = 0.85;
    let inv = 1.0 / (2.0 * BUMP_SIGMA * BUMP_SIGMA);
    for py in 0..side {
        for px in 0..side {
            let dx = px as f32 - x;
            let dy = py as f32 - y;
            let v = 255.0 * (-(dx * dx + dy * dy) * inv).exp();
            data.push(v.clamp(0.0, 255.0));
        }
    }
}

fn gauss2(rng: &mut rand_chacha::ChaCha8Rng) -> (f32, f32) {
    // Box-Muller over two uniforms keeps the draw count fixed per sample.
    let u1: f32 = rng.random_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = 2.0 * std::f32::consts::PI * u2;
    (r * phi.cos(), r * phi.sin())
}

/// Seeded shuffle then split: first `floor(ratio * n)` samples train, the
/// rest test. Disjoint, and their union is the input task.
pub fn train_test_split(task: &TaskSet, ratio: f64, seed: u64) -> Result<(TaskSet, TaskSet)> {
    if task.is_empty() {
        return Err(CoreError::Empty("train_test_split task".into()));
    }
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(CoreError::InvalidParameter(format!("split ratio {ratio} not in (0,1)")));
    }
    let mut rng = rng::stream(seed, purpose::SPLIT, 0);
    let order = rng::permutation(&mut rng, task.len());
    let train_len = ((task.len() as f64) * ratio).floor() as usize;
    let pick = |idx: &[usize], tag: &str| -> TaskSet {
        TaskSet {
            inputs: task.inputs.gather_rows(idx),
            fine: idx.iter().map(|&i| task.fine[i]).collect(),
            coarse: idx.iter().map(|&i| task.coarse[i]).collect(),
            name: format!("{}-{tag}", task.name),
            provenance: {
                let mut p = task.provenance.clone();
                p.push(format!("split {tag} ratio={ratio} seed={seed}"));
                p
            },
        }
    };
    Ok((pick(&order[..train_len], "train"), pick(&order[train_len..], "test")))
}

/// TaskSet file format: text header, then raw little-endian f32 inputs,
/// then fine and coarse labels as little-endian u16.
pub fn export_task(task: &TaskSet, path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let mut out = Vec::new();
    writeln!(out, "cps-task v1").unwrap();
    writeln!(out, "name {}", task.name).unwrap();
    let dims: Vec<String> = task.inputs.shape().iter().map(|d| d.to_string()).collect();
    writeln!(out, "shape {}", dims.join("x")).unwrap();
    for p in &task.provenance {
        writeln!(out, "provenance {p}").unwrap();
    }
    writeln!(out, "data").unwrap();
    for v in task.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &task.fine {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &l in &task.coarse {
        out.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn import_task(path: impl AsRef<Path>) -> Result<TaskSet> {
    let bytes = std::fs::read(path)?;
    let header_end = bytes
        .windows(5)
        .position(|w| w == b"data\n")
        .ok_or_else(|| CoreError::MalformedData("task file missing data marker".into()))?
        + 5;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| CoreError::MalformedData("task header is not utf-8".into()))?;
    let mut name = String::new();
    let mut shape: Vec<usize> = Vec::new();
    let mut provenance = Vec::new();
    let mut lines = header.lines();
    match lines.next() {
        Some("cps-task v1") => {}
        other => {
            return Err(CoreError::MalformedData(format!(
                "unsupported task format marker {other:?}"
            )))
        }
    }
    for line in lines {
        if line == "data" {
            break;
        } else if let Some(rest) = line.strip_prefix("name ") {
            name = rest.to_string();
        } else if let Some(rest) = line.strip_prefix("shape ") {
            shape = rest
                .split('x')
                .map(|d| d.parse().map_err(|_| CoreError::MalformedData(format!("bad shape {rest}"))))
                .collect::<Result<_>>()?;
        } else if let Some(rest) = line.strip_prefix("provenance ") {
            provenance.push(rest.to_string());
        }
    }
    let value_count: usize = shape.iter().product();
    let count = shape.first().copied().unwrap_or(0);
    let expected = header_end + value_count * 4 + count * 4;
    if bytes.len() != expected {
        return Err(CoreError::MalformedData(format!(
            "task file size {} does not match header ({expected} expected)",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(value_count);
    let mut cursor = header_end;
    for _ in 0..value_count {
        data.push(f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()));
        cursor += 4;
    }
    let read_labels = |cursor: &mut usize| -> Vec<u16> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(u16::from_le_bytes(bytes[*cursor..*cursor + 2].try_into().unwrap()));
            *cursor += 2;
        }
        out
    };
    let fine = read_labels(&mut cursor);
    let coarse = read_labels(&mut cursor);
    let mut task = TaskSet::new(Tensor::new(shape, data)?, fine, coarse, name)?;
    task.provenance = provenance;
    Ok(task)
}
