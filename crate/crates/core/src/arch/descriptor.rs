//! On-disk descriptor schema. Field names are fixed; unknown fields are
//! rejected at parse time.

use serde::{Deserialize, Serialize};

use super::LayerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorFile {
    pub name: String,
    pub input: InputShape,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accounting: Option<Accounting>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

/// Cost-accounting switches calibrated per descriptor.
///
/// `elementwise_flops` adds per-output-element operations on top of the
/// multiply-accumulate count: one for the bias add (when `conv_bias`), two for
/// batch-norm scale and shift (when `batch_norm`) and one for the activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accounting {
    #[serde(default = "yes")]
    pub conv_bias: bool,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default)]
    pub elementwise_flops: bool,
}

fn yes() -> bool {
    true
}

impl Default for Accounting {
    fn default() -> Self {
        Accounting {
            conv_bias: true,
            batch_norm: true,
            elementwise_flops: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelEntry {
    Square(usize),
    Rect([usize; 2]),
}

impl KernelEntry {
    pub fn dims(self) -> (usize, usize) {
        match self {
            KernelEntry::Square(k) => (k, k),
            KernelEntry::Rect([h, w]) => (h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    /// Absent means "the previous layer" (or the network input for the first
    /// layer); an explicit empty list means the network input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predecessors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_group: Option<String>,
    #[serde(default)]
    pub prunable: bool,
}
