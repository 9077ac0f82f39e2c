//! Architecture descriptors and cost accounting.
//!
//! An [`ArchitectureSpec`] is a validated layer graph. Its searchable
//! dimensions are the prunable layers, with every `tie_group` collapsed into a
//! single dimension, in order of first appearance. The length of a
//! [`PrunedStructure`](crate::space::PrunedStructure) is the number of
//! dimensions.

mod cost;
pub mod descriptor;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{
    count_channels, count_flops, count_params, cost_report, resolve_channels, structure_from_layer_widths,
    CostReport, ResolvedLayer,
};
pub use descriptor::{Accounting, DescriptorFile, InputShape, KernelEntry, LayerEntry};

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("cannot read descriptor {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed descriptor: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("layer `{layer}`: {reason}")]
    Validation { layer: String, reason: String },
    #[error("structure has {got} entries but the architecture has {expected} searchable dimensions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {dim} (`{label}`): {channels} channels is outside 1..={base}")]
    ChannelsOutOfRange {
        dim: usize,
        label: String,
        channels: usize,
        base: usize,
    },
    #[error("tie group `{group}` assigned inconsistent widths ({first} vs {second})")]
    TieInconsistent { group: String, first: usize, second: usize },
    #[error("add layer `{layer}` joins inputs of {left} and {right} channels")]
    AddMismatch { layer: String, left: usize, right: usize },
}

impl ArchError {
    fn invalid(layer: &str, reason: impl Into<String>) -> Self {
        ArchError::Validation {
            layer: layer.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    #[serde(rename = "fc")]
    FullyConnected,
    Pool,
    #[serde(rename = "add")]
    ElementwiseAdd,
    Concat,
    GlobalPool,
}

impl LayerKind {
    /// Layers that carry weights and an explicit output width.
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::FullyConnected)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "conv",
            LayerKind::FullyConnected => "fc",
            LayerKind::Pool => "pool",
            LayerKind::ElementwiseAdd => "add",
            LayerKind::Concat => "concat",
            LayerKind::GlobalPool => "global-pool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// Base width `c_j`; present for conv and fc layers only.
    pub base_out_channels: Option<usize>,
    /// Indices of earlier layers. Empty means the network input.
    pub predecessors: Vec<usize>,
    pub tie_group: Option<String>,
    pub prunable: bool,
}

/// One searchable coordinate: a lone prunable layer or a whole tie group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub label: String,
    pub layers: Vec<usize>,
    pub base_channels: usize,
}

#[derive(Debug, Clone)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub accounting: Accounting,
    pub layers: Vec<LayerDesc>,
    dimensions: Vec<Dimension>,
    layer_dimension: Vec<Option<usize>>,
}

impl ArchitectureSpec {
    /// Number of searchable dimensions (`L`).
    pub fn num_dimensions(&self) -> usize {
        self.dimensions.len()
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn base_channels(&self) -> Vec<usize> {
        self.dimensions.iter().map(|d| d.base_channels).collect()
    }

    /// The dimension a layer's width is taken from, if it is prunable.
    pub fn dimension_of(&self, layer: usize) -> Option<usize> {
        self.layer_dimension[layer]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let file: DescriptorFile = serde_json::from_str(text)?;
        Self::from_descriptor(file)
    }

    pub fn from_descriptor(file: DescriptorFile) -> Result<Self, ArchError> {
        let DescriptorFile {
            name,
            input,
            num_classes,
            accounting,
            layers: entries,
        } = file;
        if input.h == 0 || input.w == 0 || input.c == 0 {
            return Err(ArchError::invalid("<input>", "input dimensions must be positive"));
        }
        if num_classes == 0 {
            return Err(ArchError::invalid("<input>", "num_classes must be positive"));
        }
        if entries.is_empty() {
            return Err(ArchError::invalid("<input>", "descriptor has no layers"));
        }

        let mut index: HashMap<String, usize> = HashMap::new();
        let mut layers = Vec::with_capacity(entries.len());
        for (i, entry) in entries.into_iter().enumerate() {
            let layer = lower_entry(entry, i, &index)?;
            if index.insert(layer.name.clone(), i).is_some() {
                return Err(ArchError::invalid(&layer.name, "duplicate layer name"));
            }
            layers.push(layer);
        }

        let (dimensions, layer_dimension) = collect_dimensions(&layers)?;
        let spec = ArchitectureSpec {
            name,
            input_height: input.h,
            input_width: input.w,
            input_channels: input.c,
            num_classes,
            accounting: accounting.unwrap_or_default(),
            layers,
            dimensions,
            layer_dimension,
        };

        // Shape propagation at base widths catches add mismatches and
        // degenerate spatial sizes.
        let resolved = cost::resolve_widths(&spec, &spec.base_channels())?;
        let last = resolved.last().expect("non-empty");
        if last.out_channels != spec.num_classes {
            return Err(ArchError::invalid(
                &last.name,
                format!(
                    "final layer produces {} outputs but num_classes is {}",
                    last.out_channels, spec.num_classes
                ),
            ));
        }
        Ok(spec)
    }
}

pub fn load_architecture(path: impl AsRef<Path>) -> Result<ArchitectureSpec, ArchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ArchitectureSpec::from_json(&text)
}

fn lower_entry(entry: LayerEntry, position: usize, index: &HashMap<String, usize>) -> Result<LayerDesc, ArchError> {
    let LayerEntry {
        name,
        kind,
        kernel,
        stride,
        out_channels,
        predecessors,
        tie_group,
        prunable,
    } = entry;
    if name.is_empty() {
        return Err(ArchError::invalid(&format!("#{position}"), "empty layer name"));
    }

    let predecessors = match predecessors {
        None if position == 0 => Vec::new(),
        None => vec![position - 1],
        Some(names) => names
            .iter()
            .map(|p| {
                index.get(p).copied().ok_or_else(|| {
                    ArchError::invalid(&name, format!("predecessor `{p}` is not an earlier layer"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    match kind {
        LayerKind::ElementwiseAdd if predecessors.len() < 2 => {
            return Err(ArchError::invalid(&name, "add needs at least two predecessors"));
        }
        LayerKind::Concat if predecessors.is_empty() => {
            return Err(ArchError::invalid(&name, "concat needs at least one predecessor"));
        }
        LayerKind::Conv | LayerKind::FullyConnected | LayerKind::Pool | LayerKind::GlobalPool
            if predecessors.len() > 1 =>
        {
            return Err(ArchError::invalid(&name, format!("{kind} takes a single predecessor")));
        }
        _ => {}
    }

    let (kernel_h, kernel_w) = match (kind, kernel) {
        (LayerKind::Conv | LayerKind::Pool, Some(k)) => k.dims(),
        (LayerKind::Conv | LayerKind::Pool, None) => {
            return Err(ArchError::invalid(&name, format!("{kind} requires a kernel")));
        }
        (_, Some(_)) => return Err(ArchError::invalid(&name, format!("{kind} takes no kernel"))),
        (_, None) => (1, 1),
    };
    if kernel_h == 0 || kernel_w == 0 {
        return Err(ArchError::invalid(&name, "kernel dimensions must be positive"));
    }

    let stride = match (kind, stride) {
        (LayerKind::Conv | LayerKind::Pool, s) => s.unwrap_or(1),
        (_, Some(_)) => return Err(ArchError::invalid(&name, format!("{kind} takes no stride"))),
        (_, None) => 1,
    };
    if stride == 0 {
        return Err(ArchError::invalid(&name, "stride must be positive"));
    }

    let base_out_channels = match (kind.has_weights(), out_channels) {
        (true, Some(0)) => return Err(ArchError::invalid(&name, "out_channels must be positive")),
        (true, Some(c)) => Some(c),
        (true, None) => return Err(ArchError::invalid(&name, format!("{kind} requires out_channels"))),
        (false, Some(_)) => {
            return Err(ArchError::invalid(&name, format!("{kind} derives its width; out_channels not allowed")))
        }
        (false, None) => None,
    };

    if !kind.has_weights() && (prunable || tie_group.is_some()) {
        return Err(ArchError::invalid(&name, format!("{kind} layers cannot be prunable or tied")));
    }

    Ok(LayerDesc {
        name,
        kind,
        kernel_h,
        kernel_w,
        stride,
        base_out_channels,
        predecessors,
        tie_group,
        prunable,
    })
}

fn collect_dimensions(layers: &[LayerDesc]) -> Result<(Vec<Dimension>, Vec<Option<usize>>), ArchError> {
    let mut dims: Vec<Dimension> = Vec::new();
    let mut by_group: HashMap<&str, usize> = HashMap::new();
    let mut group_prunable: HashMap<&str, bool> = HashMap::new();
    let mut layer_dim = vec![None; layers.len()];

    for (i, layer) in layers.iter().enumerate() {
        if let Some(group) = layer.tie_group.as_deref() {
            match group_prunable.get(group) {
                Some(&p) if p != layer.prunable => {
                    return Err(ArchError::invalid(
                        &layer.name,
                        format!("tie group `{group}` mixes prunable and fixed layers"),
                    ));
                }
                _ => {
                    group_prunable.insert(group, layer.prunable);
                }
            }
        }
        if !layer.prunable {
            continue;
        }
        let base = layer.base_out_channels.expect("prunable layers carry widths");
        let slot = match layer.tie_group.as_deref() {
            Some(group) => match by_group.get(group) {
                Some(&d) => {
                    if dims[d].base_channels != base {
                        return Err(ArchError::invalid(
                            &layer.name,
                            format!(
                                "tie group `{group}` has base width {} but this layer has {base}",
                                dims[d].base_channels
                            ),
                        ));
                    }
                    dims[d].layers.push(i);
                    d
                }
                None => {
                    dims.push(Dimension {
                        label: group.to_string(),
                        layers: vec![i],
                        base_channels: base,
                    });
                    by_group.insert(group, dims.len() - 1);
                    dims.len() - 1
                }
            },
            None => {
                dims.push(Dimension {
                    label: layer.name.clone(),
                    layers: vec![i],
                    base_channels: base,
                });
                dims.len() - 1
            }
        };
        layer_dim[i] = Some(slot);
    }
    Ok((dims, layer_dim))
}
