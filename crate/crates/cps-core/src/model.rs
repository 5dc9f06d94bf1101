//! Model specifications and the parameter layout they induce.
//!
//! A [`ModelSpec`] fixes the architecture exactly; the derived [`Layout`]
//! names every parameter block, and a stable fingerprint of both is what
//! makes two flat parameter vectors interpolation-compatible.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::params::ParamVector;
use crate::rng::{self, purpose};
use crate::tensor::Scalar;
use crate::Result;

/// Convolution kernel side used by every conv layer.
pub const CONV_KERNEL: usize = 3;
/// Conv layers per block; a 2x2 max-pool follows each full block.
pub const LAYERS_PER_BLOCK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// 3x3 stride-1 same-padding conv stack with 2x2 max-pool per block and
    /// a global-average-pooled linear head.
    Conv,
    /// Fully-connected stack with ReLU between hidden layers and a linear head.
    Dense,
}

/// Shape of a single input sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputShape {
    Image { channels: usize, height: usize, width: usize },
    Flat { features: usize },
}

impl InputShape {
    pub fn feature_count(&self) -> usize {
        match self {
            InputShape::Image { channels, height, width } => channels * height * width,
            InputShape::Flat { features } => *features,
        }
    }

    /// Shape of a batch of `n` samples.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match self {
            InputShape::Image { channels, height, width } => vec![n, *channels, *height, *width],
            InputShape::Flat { features } => vec![n, *features],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ArchKind,
    /// Per-layer channel counts (conv) or hidden unit counts (dense).
    /// Dense models accept an empty list: a pure linear classifier.
    pub widths: Vec<usize>,
    pub input: InputShape,
    pub classes: usize,
}

/// One named parameter block in the flat layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered parameter blocks; block offsets follow declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn total_size(&self) -> usize {
        self.entries.iter().map(LayoutEntry::size).sum()
    }

    /// (offset, size) of the entry at `index`.
    pub fn span(&self, index: usize) -> (usize, usize) {
        let offset = self.entries[..index].iter().map(LayoutEntry::size).sum();
        (offset, self.entries[index].size())
    }
}

impl ModelSpec {
    pub fn conv(widths: Vec<usize>, input: InputShape, classes: usize) -> Result<Self> {
        let spec = ModelSpec { kind: ArchKind::Conv, widths, input, classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dense(widths: Vec<usize>, input: InputShape, classes: usize) -> Result<Self> {
        let spec = ModelSpec { kind: ArchKind::Dense, widths, input, classes };
        spec.validate()?;
        Ok(spec)
    }

    /// The paper's four CNN presets by name.
    pub fn preset(name: &str, input: InputShape, classes: usize) -> Result<Self> {
        let widths = match name {
            "3-layer" => vec![16, 16, 16],
            "6-layer" => vec![16, 16, 16, 32, 32, 32],
            "9-layer" => vec![16, 16, 16, 32, 32, 32, 32, 32, 32],
            "6-layer-wide" => vec![256, 256, 256, 512, 512, 512],
            other => {
                return Err(CoreError::InvalidParameter(format!(
                    "unknown model preset '{other}'"
                )))
            }
        };
        ModelSpec::conv(widths, input, classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(CoreError::InvalidParameter(format!(
                "class count must be >= 2, got {}",
                self.classes
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(CoreError::InvalidParameter("zero-width layer".into()));
        }
        match self.kind {
            ArchKind::Conv => {
                if self.widths.is_empty() {
                    return Err(CoreError::InvalidParameter("conv model needs at least one layer".into()));
                }
                if !matches!(self.input, InputShape::Image { .. }) {
                    return Err(CoreError::InvalidParameter("conv model needs image input".into()));
                }
            }
            // Dense allows an empty width list: that is the degenerate
            // single-linear-layer model used by the identity checks.
            ArchKind::Dense => {}
        }
        if self.input.feature_count() == 0 {
            return Err(CoreError::InvalidParameter("empty input shape".into()));
        }
        Ok(())
    }

    /// Parameter layout induced by the architecture.
    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        match self.kind {
            ArchKind::Conv => {
                let in_ch = match &self.input {
                    InputShape::Image { channels, .. } => *channels,
                    InputShape::Flat { .. } => unreachable!("validated"),
                };
                let mut prev = in_ch;
                for (i, &w) in self.widths.iter().enumerate() {
                    entries.push(LayoutEntry {
                        name: format!("conv{i}.weight"),
                        shape: vec![w, prev, CONV_KERNEL, CONV_KERNEL],
                    });
                    entries.push(LayoutEntry { name: format!("conv{i}.bias"), shape: vec![w] });
                    prev = w;
                }
                entries.push(LayoutEntry { name: "head.weight".into(), shape: vec![self.classes, prev] });
                entries.push(LayoutEntry { name: "head.bias".into(), shape: vec![self.classes] });
            }
            ArchKind::Dense => {
                let mut prev = self.input.feature_count();
                for (i, &w) in self.widths.iter().enumerate() {
                    entries.push(LayoutEntry { name: format!("fc{i}.weight"), shape: vec![w, prev] });
                    entries.push(LayoutEntry { name: format!("fc{i}.bias"), shape: vec![w] });
                    prev = w;
                }
                entries.push(LayoutEntry { name: "head.weight".into(), shape: vec![self.classes, prev] });
                entries.push(LayoutEntry { name: "head.bias".into(), shape: vec![self.classes] });
            }
        }
        Layout { entries }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total_size()
    }

    /// Stable fingerprint over the architecture and its layout (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut text = String::new();
        text.push_str(match self.kind {
            ArchKind::Conv => "conv|",
            ArchKind::Dense => "dense|",
        });
        match &self.input {
            InputShape::Image { channels, height, width } => {
                text.push_str(&format!("img {channels}x{height}x{width}|"))
            }
            InputShape::Flat { features } => text.push_str(&format!("flat {features}|")),
        }
        text.push_str(&format!("classes {}|", self.classes));
        for entry in &self.layout().entries {
            text.push_str(&entry.name);
            for d in &entry.shape {
                text.push_str(&format!(" {d}"));
            }
            text.push(';');
        }
        fnv1a(text.as_bytes())
    }

    /// Seeded uniform initialization, bound 1/sqrt(fan_in) per block, biases
    /// included. Draws are made in f64 so the same seed yields the same
    /// values (up to rounding) in both precisions.
    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamVector<F> {
        use rand::Rng;
        let layout = self.layout();
        let mut rng = rng::stream(seed, purpose::INIT, self.fingerprint());
        let mut values = Vec::with_capacity(layout.total_size());
        for entry in &layout.entries {
            let fan_in: usize = if entry.shape.len() > 1 {
                entry.shape.iter().skip(1).product()
            } else {
                // Biases share the bound of the weight block they follow; the
                // weight immediately precedes its bias in the layout.
                1
            };
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for _ in 0..entry.size() {
                let v: f64 = rng.random_range(-bound..bound);
                values.push(F::from_f64(v));
            }
        }
        ParamVector::from_parts(values, layout, self.fingerprint())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img8() -> InputShape {
        InputShape::Image { channels: 3, height: 8, width: 8 }
    }

    #[test]
    fn paper_presets_are_expressible() {
        for name in ["3-layer", "6-layer", "9-layer", "6-layer-wide"] {
            let spec = ModelSpec::preset(name, img8(), 10).unwrap();
            assert!(spec.param_count() > 0, "{name}");
        }
    }

    #[test]
    fn three_layer_layout_sizes() {
        let spec = ModelSpec::preset("3-layer", img8(), 10).unwrap();
        let layout = spec.layout();
        // conv0 16x3x3x3 + 16, conv1/conv2 16x16x3x3 + 16, head 10x16 + 10
        assert_eq!(layout.total_size(), 448 + 2320 + 2320 + 170);
        assert_eq!(layout.entries.len(), 8);
    }

    #[test]
    fn fingerprints_distinguish_architectures() {
        let a = ModelSpec::preset("3-layer", img8(), 10).unwrap();
        let b = ModelSpec::preset("6-layer", img8(), 10).unwrap();
        let c = ModelSpec::preset("3-layer", img8(), 10).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::dense(vec![4], InputShape::Flat { features: 2 }, 3).unwrap();
        let a = spec.init_params::<f32>(1);
        let b = spec.init_params::<f32>(1);
        assert_eq!(a.values(), b.values());
        let c = spec.init_params::<f32>(2);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn dense_allows_pure_linear_model() {
        let spec = ModelSpec::dense(vec![], InputShape::Flat { features: 3 }, 3).unwrap();
        assert_eq!(spec.layout().entries.len(), 2);
        assert_eq!(spec.param_count(), 9 + 3);
    }

    #[test]
    fn class_count_must_be_at_least_two() {
        assert!(ModelSpec::dense(vec![4], InputShape::Flat { features: 2 }, 1).is_err());
    }
}
