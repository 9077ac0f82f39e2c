use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ArchError, ArchitectureSpec, LayerKind};
use crate::space::PrunedStructure;

/// Resolved wiring of one layer under a given structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLayer {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub channels: u64,
    pub flops: u64,
    pub params: u64,
}

fn check_structure(spec: &ArchitectureSpec, structure: &PrunedStructure) -> Result<(), ArchError> {
    let expected = spec.num_dimensions();
    if structure.len() != expected {
        return Err(ArchError::DimensionMismatch {
            expected,
            got: structure.len(),
        });
    }
    for (dim, (&c, d)) in structure.channels().iter().zip(spec.dimensions()).enumerate() {
        if c == 0 || c > d.base_channels {
            return Err(ArchError::ChannelsOutOfRange {
                dim,
                label: d.label.clone(),
                channels: c,
                base: d.base_channels,
            });
        }
    }
    Ok(())
}

fn widths_for(spec: &ArchitectureSpec, structure: Option<&PrunedStructure>) -> Result<Vec<usize>, ArchError> {
    match structure {
        Some(s) => {
            check_structure(spec, s)?;
            Ok(s.channels().to_vec())
        }
        None => Ok(spec.base_channels()),
    }
}

/// Per-layer `(in, out)` channel table.
///
/// Prunable layers take their width from the structure, fixed layers keep
/// their base width, and derived layers follow their inputs: concat sums, add
/// requires a common value, pools pass the width through.
pub fn resolve_channels(spec: &ArchitectureSpec, structure: &PrunedStructure) -> Result<Vec<ResolvedLayer>, ArchError> {
    check_structure(spec, structure)?;
    resolve_widths(spec, structure.channels())
}

pub(super) fn resolve_widths(spec: &ArchitectureSpec, widths: &[usize]) -> Result<Vec<ResolvedLayer>, ArchError> {
    let input = (spec.input_height, spec.input_width, spec.input_channels);
    let mut out: Vec<ResolvedLayer> = Vec::with_capacity(spec.layers.len());

    for (i, layer) in spec.layers.iter().enumerate() {
        let inputs: Vec<(usize, usize, usize)> = if layer.predecessors.is_empty() {
            vec![input]
        } else {
            layer
                .predecessors
                .iter()
                .map(|&p| (out[p].out_h, out[p].out_w, out[p].out_channels))
                .collect()
        };
        let (in_h, in_w, first_c) = inputs[0];
        if inputs.iter().any(|&(h, w, _)| (h, w) != (in_h, in_w)) {
            return Err(ArchError::Validation {
                layer: layer.name.clone(),
                reason: "inputs have different spatial sizes".into(),
            });
        }

        let own_width = || match spec.dimension_of(i) {
            Some(d) => widths[d],
            None => layer.base_out_channels.expect("weight layers carry widths"),
        };

        let (in_channels, out_channels, out_h, out_w) = match layer.kind {
            LayerKind::Conv => {
                let (h, w) = (in_h.div_ceil(layer.stride), in_w.div_ceil(layer.stride));
                (first_c, own_width(), h, w)
            }
            LayerKind::Pool => {
                let (h, w) = (in_h.div_ceil(layer.stride), in_w.div_ceil(layer.stride));
                (first_c, first_c, h, w)
            }
            LayerKind::GlobalPool => (first_c, first_c, 1, 1),
            LayerKind::FullyConnected => (first_c, own_width(), 1, 1),
            LayerKind::Concat => {
                let total = inputs.iter().map(|&(_, _, c)| c).sum();
                (total, total, in_h, in_w)
            }
            LayerKind::ElementwiseAdd => {
                if let Some(&(_, _, other)) = inputs.iter().find(|&&(_, _, c)| c != first_c) {
                    return Err(ArchError::AddMismatch {
                        layer: layer.name.clone(),
                        left: first_c,
                        right: other,
                    });
                }
                (first_c, first_c, in_h, in_w)
            }
        };
        if out_h == 0 || out_w == 0 || out_channels == 0 {
            return Err(ArchError::Validation {
                layer: layer.name.clone(),
                reason: "output shape collapsed to zero".into(),
            });
        }
        out.push(ResolvedLayer {
            name: layer.name.clone(),
            kind: layer.kind,
            in_channels,
            out_channels,
            in_h,
            in_w,
            out_h,
            out_w,
        });
    }
    Ok(out)
}

/// Builds a structure from per-layer widths, enforcing equal widths inside a
/// tie group. Layers not mentioned keep their base width.
pub fn structure_from_layer_widths<'a>(
    spec: &ArchitectureSpec,
    widths: impl IntoIterator<Item = (&'a str, usize)>,
) -> Result<PrunedStructure, ArchError> {
    let mut assigned: Vec<Option<usize>> = vec![None; spec.num_dimensions()];
    let given: HashMap<&str, usize> = widths.into_iter().collect();
    for (name, width) in &given {
        let idx = spec.layer_index(name).ok_or_else(|| ArchError::Validation {
            layer: name.to_string(),
            reason: "no such layer".into(),
        })?;
        match spec.dimension_of(idx) {
            Some(d) => match assigned[d] {
                Some(prev) if prev != *width => {
                    return Err(ArchError::TieInconsistent {
                        group: spec.dimensions()[d].label.clone(),
                        first: prev,
                        second: *width,
                    });
                }
                _ => assigned[d] = Some(*width),
            },
            None if spec.layers[idx].base_out_channels == Some(*width) => {}
            None => {
                return Err(ArchError::Validation {
                    layer: name.to_string(),
                    reason: "layer is not prunable".into(),
                });
            }
        }
    }
    let channels = assigned
        .into_iter()
        .zip(spec.dimensions())
        .map(|(w, d)| w.unwrap_or(d.base_channels))
        .collect();
    let structure = PrunedStructure::new(channels);
    check_structure(spec, &structure)?;
    Ok(structure)
}

/// Σ of output widths over every conv layer and every fc layer except the
/// final classifier.
pub fn count_channels(spec: &ArchitectureSpec, structure: Option<&PrunedStructure>) -> Result<u64, ArchError> {
    Ok(cost_report(spec, structure)?.channels)
}

pub fn count_flops(spec: &ArchitectureSpec, structure: Option<&PrunedStructure>) -> Result<u64, ArchError> {
    Ok(cost_report(spec, structure)?.flops)
}

pub fn count_params(spec: &ArchitectureSpec, structure: Option<&PrunedStructure>) -> Result<u64, ArchError> {
    Ok(cost_report(spec, structure)?.params)
}

pub fn cost_report(spec: &ArchitectureSpec, structure: Option<&PrunedStructure>) -> Result<CostReport, ArchError> {
    let widths = widths_for(spec, structure)?;
    let resolved = resolve_widths(spec, &widths)?;
    let acct = spec.accounting;
    let last = resolved.len() - 1;
    let mut report = CostReport::default();

    for (i, layer) in resolved.iter().enumerate() {
        let cin = layer.in_channels as u64;
        let cout = layer.out_channels as u64;
        match layer.kind {
            LayerKind::Conv => {
                let desc = &spec.layers[i];
                let kernel = (desc.kernel_h * desc.kernel_w) as u64;
                let positions = (layer.out_h * layer.out_w) as u64;
                report.flops += positions * kernel * cin * cout;
                if acct.elementwise_flops {
                    let per_element = u64::from(acct.conv_bias) + 2 * u64::from(acct.batch_norm) + 1;
                    report.flops += positions * cout * per_element;
                }
                report.params += kernel * cin * cout;
                if acct.conv_bias {
                    report.params += cout;
                }
                if acct.batch_norm {
                    report.params += 2 * cout;
                }
                report.channels += cout;
            }
            LayerKind::FullyConnected => {
                let features = (layer.in_h * layer.in_w) as u64 * cin;
                report.flops += features * cout;
                if acct.elementwise_flops && acct.conv_bias {
                    report.flops += cout;
                }
                report.params += features * cout + cout;
                if i != last {
                    report.channels += cout;
                }
            }
            _ => {}
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> ArchitectureSpec {
        ArchitectureSpec::from_json(
            r#"{"name":"chain","input":{"h":8,"w":8,"c":3},"num_classes":10,"layers":[
                {"name":"c1","kind":"conv","kernel":3,"out_channels":64,"prunable":true},
                {"name":"c2","kind":"conv","kernel":3,"out_channels":128,"prunable":true},
                {"name":"gap","kind":"global-pool"},
                {"name":"fc","kind":"fc","out_channels":10}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn direct_wiring_follows_predecessor_width() {
        let spec = chain();
        let table = resolve_channels(&spec, &PrunedStructure::new(vec![32, 64])).unwrap();
        assert_eq!((table[1].in_channels, table[1].out_channels), (32, 64));
        assert_eq!(table[3].in_channels, 64);
    }

    #[test]
    fn concat_sums_branch_widths() {
        let spec = ArchitectureSpec::from_json(
            r#"{"name":"cat","input":{"h":8,"w":8,"c":3},"num_classes":4,"layers":[
                {"name":"a","kind":"conv","kernel":1,"out_channels":20,"predecessors":[],"prunable":true},
                {"name":"b","kind":"conv","kernel":3,"out_channels":32,"predecessors":[],"prunable":true},
                {"name":"cat","kind":"concat","predecessors":["a","b"]},
                {"name":"next","kind":"conv","kernel":1,"out_channels":8},
                {"name":"gap","kind":"global-pool"},
                {"name":"fc","kind":"fc","out_channels":4}]}"#,
        )
        .unwrap();
        let table = resolve_channels(&spec, &PrunedStructure::new(vec![10, 16])).unwrap();
        assert_eq!(table[2].out_channels, 26);
        assert_eq!(table[3].in_channels, 26);
    }

    /// Two residual blocks sharing one stage width. Hand trace with the group
    /// at 48: stem, b1.conv2, b2.conv2 all emit 48; inner convs keep their own
    /// widths; every add sees 48 on both sides.
    #[test]
    fn tied_residual_group_moves_together() {
        let spec = ArchitectureSpec::from_json(
            r#"{"name":"res","input":{"h":8,"w":8,"c":3},"num_classes":10,"layers":[
                {"name":"stem","kind":"conv","kernel":3,"out_channels":64,"tie_group":"s","prunable":true},
                {"name":"b1.conv1","kind":"conv","kernel":3,"out_channels":64,"prunable":true},
                {"name":"b1.conv2","kind":"conv","kernel":3,"out_channels":64,"tie_group":"s","prunable":true},
                {"name":"b1.add","kind":"add","predecessors":["b1.conv2","stem"]},
                {"name":"b2.conv1","kind":"conv","kernel":3,"out_channels":64,"prunable":true},
                {"name":"b2.conv2","kind":"conv","kernel":3,"out_channels":64,"tie_group":"s","prunable":true},
                {"name":"b2.add","kind":"add","predecessors":["b2.conv2","b1.add"]},
                {"name":"gap","kind":"global-pool"},
                {"name":"fc","kind":"fc","out_channels":10}]}"#,
        )
        .unwrap();
        assert_eq!(spec.num_dimensions(), 3);
        let structure = PrunedStructure::new(vec![48, 20, 30]);
        let table = resolve_channels(&spec, &structure).unwrap();
        let by_name: HashMap<_, _> = table.iter().map(|l| (l.name.as_str(), l)).collect();
        for member in ["stem", "b1.conv2", "b2.conv2", "b1.add", "b2.add"] {
            assert_eq!(by_name[member].out_channels, 48, "{member}");
        }
        assert_eq!(by_name["b1.conv1"].in_channels, 48);
        assert_eq!(by_name["b1.conv2"].in_channels, 20);
        assert_eq!(by_name["b2.conv1"].in_channels, 48);
        assert_eq!(by_name["b2.conv2"].in_channels, 30);
        assert_eq!(by_name["fc"].in_channels, 48);

        let err = structure_from_layer_widths(&spec, [("stem", 48), ("b2.conv2", 40)]).unwrap_err();
        assert!(matches!(err, ArchError::TieInconsistent { .. }));
        let ok = structure_from_layer_widths(&spec, [("stem", 48), ("b1.conv2", 48)]).unwrap();
        assert_eq!(ok.channels(), &[48, 64, 64]);
    }

    #[test]
    fn untied_add_breaks_after_pruning() {
        let spec = ArchitectureSpec::from_json(
            r#"{"name":"bad","input":{"h":8,"w":8,"c":3},"num_classes":10,"layers":[
                {"name":"a","kind":"conv","kernel":3,"out_channels":16,"predecessors":[],"prunable":true},
                {"name":"b","kind":"conv","kernel":3,"out_channels":16,"predecessors":[],"prunable":true},
                {"name":"sum","kind":"add","predecessors":["a","b"]},
                {"name":"gap","kind":"global-pool"},
                {"name":"fc","kind":"fc","out_channels":10}]}"#,
        )
        .unwrap();
        let err = resolve_channels(&spec, &PrunedStructure::new(vec![8, 16])).unwrap_err();
        assert!(matches!(err, ArchError::AddMismatch { .. }));
    }

    #[test]
    fn single_conv_flops() {
        let spec = ArchitectureSpec::from_json(
            r#"{"name":"one","input":{"h":4,"w":4,"c":3},"num_classes":8,
                "layers":[{"name":"conv","kind":"conv","kernel":3,"stride":1,"out_channels":8,"prunable":true}]}"#,
        )
        .unwrap();
        assert_eq!(count_flops(&spec, None).unwrap(), 4 * 4 * 3 * 3 * 3 * 8);
        // weights + bias + batch-norm scale/shift
        assert_eq!(count_params(&spec, None).unwrap(), 3 * 3 * 3 * 8 + 8 + 16);
        assert_eq!(count_channels(&spec, Some(&PrunedStructure::new(vec![5]))).unwrap(), 5);
    }

    #[test]
    fn structure_length_and_range_are_checked() {
        let spec = chain();
        assert!(matches!(
            count_flops(&spec, Some(&PrunedStructure::new(vec![1]))),
            Err(ArchError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            count_flops(&spec, Some(&PrunedStructure::new(vec![65, 1]))),
            Err(ArchError::ChannelsOutOfRange { dim: 0, .. })
        ));
        assert!(count_flops(&spec, Some(&PrunedStructure::new(vec![0, 1]))).is_err());
    }

    #[test]
    fn elementwise_accounting_adds_four_ops_per_output() {
        let text = r#"{"name":"one","input":{"h":4,"w":4,"c":3},"num_classes":8,
            "accounting":{"conv_bias":true,"batch_norm":true,"elementwise_flops":true},
            "layers":[{"name":"conv","kind":"conv","kernel":3,"out_channels":8,"prunable":true}]}"#;
        let spec = ArchitectureSpec::from_json(text).unwrap();
        assert_eq!(count_flops(&spec, None).unwrap(), 3456 + 4 * 4 * 8 * 4);
    }
}
