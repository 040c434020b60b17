//! Rewrite passes that retarget a network's receptive field.
//!
//! Two families of edits are supported: shrinking kernels to 1x1 (tail
//! first, which affects parameters but not depth) and adding or removing
//! 2x2 max pools (which changes the cumulative stride without touching
//! parameters). `solve_target_rf` applies the minimal amount of either
//! edit to reach a target RF; `sweep` enumerates whole families of edits
//! for systematic comparisons.

use crate::axis::Axis2;
use crate::ir::{
    count_params, structure, validate_network, Diagnostic, LayerSpec, NetworkSpec, Node,
    PoolKind, PoolSpec, Shortcut,
};
use crate::rf::network_rf;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which kernel axes a filter conversion rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertAxes {
    Both,
    Time,
    Freq,
}

impl ConvertAxes {
    fn eligible(self, kernel: Axis2) -> bool {
        match self {
            ConvertAxes::Both => kernel.freq > 1 || kernel.time > 1,
            ConvertAxes::Time => kernel.time > 1,
            ConvertAxes::Freq => kernel.freq > 1,
        }
    }

    fn apply(self, kernel: Axis2) -> Axis2 {
        match self {
            ConvertAxes::Both => Axis2::ONE,
            ConvertAxes::Time => Axis2::new(kernel.freq, 1),
            ConvertAxes::Freq => Axis2::new(1, kernel.time),
        }
    }
}

/// Strategy for [`solve_target_rf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    Truncate,
    ConvertBoth,
    ConvertTime,
    ConvertFreq,
}

impl SolveStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SolveStrategy::Truncate => "truncate",
            SolveStrategy::ConvertBoth => "convert_both",
            SolveStrategy::ConvertTime => "convert_time",
            SolveStrategy::ConvertFreq => "convert_freq",
        }
    }
}

/// Strategy for [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStrategy {
    ConvertBoth,
    ConvertTime,
    ConvertFreq,
    Pooling,
}

impl SweepStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SweepStrategy::ConvertBoth => "convert_both",
            SweepStrategy::ConvertTime => "convert_time",
            SweepStrategy::ConvertFreq => "convert_freq",
            SweepStrategy::Pooling => "pooling",
        }
    }
}

/// One architecture of a sweep, annotated with its recomputed RF and
/// parameter total.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub net: NetworkSpec,
    pub rf: Axis2,
    pub params: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<Diagnostic>),
    #[error("unreachable target for {strategy}: {detail}")]
    TargetUnreachable { strategy: String, detail: String },
    #[error("count {count} out of range: only {max} convs are convertible")]
    CountOutOfRange { count: usize, max: usize },
    #[error("invalid layer index {index}: {reason}")]
    InvalidIndex { index: usize, reason: String },
    #[error("layer {index} is not a pool, so it cannot be removed by a pooling edit")]
    NotAPool { index: usize },
}

fn check_valid(net: &NetworkSpec) -> Result<(), TransformError> {
    let diags = validate_network(net);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(TransformError::InvalidNetwork(diags))
    }
}

/// Layer indices of convs convertible on the selected axes, last conv first.
fn convertible_indices(net: &NetworkSpec, axes: ConvertAxes) -> Vec<usize> {
    net.layers
        .iter()
        .enumerate()
        .rev()
        .filter_map(|(i, l)| l.as_conv().map(|c| (i, c.kernel)))
        .filter(|(_, k)| axes.eligible(*k))
        .map(|(i, _)| i)
        .collect()
}

/// Sets the selected kernel axes to 1 on `count` convolutions, walking from
/// the last convolution backward. Channels, strides and depth are unchanged.
pub fn convert_tail_filters(
    net: &NetworkSpec,
    count: usize,
    axes: ConvertAxes,
) -> Result<NetworkSpec, TransformError> {
    check_valid(net)?;
    let eligible = convertible_indices(net, axes);
    if count > eligible.len() {
        return Err(TransformError::CountOutOfRange { count, max: eligible.len() });
    }
    let mut out = net.clone();
    for &idx in eligible.iter().take(count) {
        if let LayerSpec::Conv(c) = &mut out.layers[idx] {
            c.kernel = axes.apply(c.kernel);
        }
    }
    Ok(out)
}

/// Removes whole residual blocks (together with the pools that immediately
/// follow them) from the tail until the RF fits within `target` on both
/// axes. Head layers (global average pool, classifier) are kept.
pub fn truncate_tail(net: &NetworkSpec, target: Axis2) -> Result<NetworkSpec, TransformError> {
    check_valid(net)?;
    let mut current = net.clone();
    loop {
        let rf = network_rf(&current).expect("truncation preserves validity");
        if rf.fits_within(target) {
            return Ok(current);
        }
        let Some((start, end)) = last_removable_block(&current) else {
            return Err(TransformError::TargetUnreachable {
                strategy: "truncate".into(),
                detail: format!("no residual block left to remove, but RF {rf} still exceeds target {target}"),
            });
        };
        // Take the pools that trail the block as part of the removal unit so
        // the truncation point carries no orphaned striding.
        let mut cut_end = end;
        while current.layers.get(cut_end + 1).is_some_and(LayerSpec::is_pool) {
            cut_end += 1;
        }
        current.layers.drain(start..=cut_end);
    }
}

/// Finds the last residual block that is actually at the tail: only pools
/// and head layers may follow it, otherwise removing it would break the
/// channel chain of whatever comes after.
fn last_removable_block(net: &NetworkSpec) -> Option<(usize, usize)> {
    let mut end = None;
    for (i, layer) in net.layers.iter().enumerate().rev() {
        match layer {
            LayerSpec::Pool(_) | LayerSpec::GlobalAveragePool | LayerSpec::Classifier { .. } => {}
            LayerSpec::ResidualBlockEnd => {
                end = Some(i);
                break;
            }
            _ => return None,
        }
    }
    let end = end?;
    let start = net.layers[..end]
        .iter()
        .rposition(|l| matches!(l, LayerSpec::ResidualBlockStart { .. }))?;
    Some((start, end))
}

/// Inserts 2x2/s2 max pools after the given layer indices and removes the
/// pools at the given indices (both sets refer to positions in the input
/// network). Residual-block shortcuts are re-derived afterwards so the
/// stride-match invariant keeps holding; edits that stay outside blocks
/// leave every parameter count untouched.
pub fn edit_pooling(
    net: &NetworkSpec,
    insert_after: &[usize],
    remove: &[usize],
) -> Result<NetworkSpec, TransformError> {
    check_valid(net)?;
    let len = net.layers.len();
    let first_head = net
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::GlobalAveragePool | LayerSpec::Classifier { .. }))
        .unwrap_or(len);

    // Dense blocks cannot host pools: their feature maps must stay
    // concatenable.
    let mut dense_spans = Vec::new();
    {
        let mut open = None;
        for (i, l) in net.layers.iter().enumerate() {
            match l {
                LayerSpec::DenseBlockStart { .. } => open = Some(i),
                LayerSpec::DenseBlockEnd => {
                    if let Some(s) = open.take() {
                        dense_spans.push((s, i));
                    }
                }
                _ => {}
            }
        }
    }

    for &idx in insert_after {
        if idx >= len {
            return Err(TransformError::InvalidIndex { index: idx, reason: format!("network has {len} layers") });
        }
        if idx >= first_head {
            return Err(TransformError::InvalidIndex { index: idx, reason: "cannot insert a pool after the network head".into() });
        }
        if dense_spans.iter().any(|&(s, e)| idx >= s && idx < e) {
            return Err(TransformError::InvalidIndex { index: idx, reason: "cannot insert a pool inside a dense block".into() });
        }
    }
    for &idx in remove {
        if idx >= len {
            return Err(TransformError::InvalidIndex { index: idx, reason: format!("network has {len} layers") });
        }
        if !net.layers[idx].is_pool() {
            return Err(TransformError::NotAPool { index: idx });
        }
    }

    let mut layers = Vec::with_capacity(len + insert_after.len());
    for (i, layer) in net.layers.iter().enumerate() {
        if !remove.contains(&i) {
            layers.push(layer.clone());
        }
        for _ in insert_after.iter().filter(|&&p| p == i) {
            layers.push(LayerSpec::Pool(PoolSpec {
                kind: PoolKind::Max,
                kernel: Axis2::splat(2),
                stride: Axis2::splat(2),
            }));
        }
    }

    let mut out = NetworkSpec { name: net.name.clone(), input_channels: net.input_channels, layers };
    rederive_shortcuts(&mut out);
    check_valid(&out)?;
    Ok(out)
}

/// Re-derives every residual shortcut stride from its main path. Identity
/// shortcuts whose main path gained a stride are promoted to 1x1
/// projections; existing projections keep their kernel and track the new
/// stride.
fn rederive_shortcuts(net: &mut NetworkSpec) {
    let fixes: Vec<(usize, Axis2)> = {
        let Ok(nodes) = structure(net) else { return };
        fn collect(nodes: &[Node<'_>], fixes: &mut Vec<(usize, Axis2)>) {
            for node in nodes {
                if let Node::Residual { start, body, .. } = node {
                    let mut s = Axis2::ONE;
                    for inner in body {
                        match inner {
                            Node::Conv { spec, .. } => s = s.saturating_mul(spec.stride),
                            Node::Pool { spec, .. } => s = s.saturating_mul(spec.stride),
                            _ => {}
                        }
                    }
                    fixes.push((*start, s));
                }
            }
        }
        let mut fixes = Vec::new();
        collect(&nodes, &mut fixes);
        fixes
    };
    for (start, main_stride) in fixes {
        if let LayerSpec::ResidualBlockStart { shortcut } = &mut net.layers[start] {
            match shortcut {
                Shortcut::Identity => {
                    if main_stride != Axis2::ONE {
                        *shortcut = Shortcut::Projection { kernel: Axis2::ONE, stride: main_stride };
                    }
                }
                Shortcut::Projection { stride, .. } => *stride = main_stride,
            }
        }
    }
}

/// Applies the minimal amount of the chosen strategy so the RF fits the
/// target on every axis the strategy controls. Minimality doubles as
/// tightness: undoing the last unit of change exceeds the target again.
pub fn solve_target_rf(
    net: &NetworkSpec,
    target: Axis2,
    strategy: SolveStrategy,
) -> Result<NetworkSpec, TransformError> {
    check_valid(net)?;
    let current = network_rf(net).expect("validated above");
    let axes = match strategy {
        SolveStrategy::Truncate => return truncate_tail(net, target),
        SolveStrategy::ConvertBoth => ConvertAxes::Both,
        SolveStrategy::ConvertTime => {
            if current.freq > target.freq {
                return Err(TransformError::TargetUnreachable {
                    strategy: strategy.name().into(),
                    detail: format!("strategy does not control the frequency axis (current RF {current}, target {target})"),
                });
            }
            ConvertAxes::Time
        }
        SolveStrategy::ConvertFreq => {
            if current.time > target.time {
                return Err(TransformError::TargetUnreachable {
                    strategy: strategy.name().into(),
                    detail: format!("strategy does not control the time axis (current RF {current}, target {target})"),
                });
            }
            ConvertAxes::Freq
        }
    };

    let fits = |rf: Axis2| match axes {
        ConvertAxes::Both => rf.fits_within(target),
        ConvertAxes::Time => rf.time <= target.time,
        ConvertAxes::Freq => rf.freq <= target.freq,
    };
    let max = convertible_indices(net, axes).len();
    for count in 0..=max {
        let candidate = convert_tail_filters(net, count, axes)?;
        let rf = network_rf(&candidate).expect("conversion preserves validity");
        if fits(rf) {
            return Ok(candidate);
        }
    }
    Err(TransformError::TargetUnreachable {
        strategy: strategy.name().into(),
        detail: format!("converting all {max} eligible convs still leaves the RF above {target}"),
    })
}

fn sweep_point(net: &NetworkSpec, label: String) -> SweepPoint {
    let rf = network_rf(net).expect("sweep candidates validate");
    let params = count_params(net).total;
    SweepPoint { net: net.clone(), rf, params, label }
}

/// Enumerates a family of systematically edited architectures.
///
/// Convert strategies yield one point per conversion count from 0 to the
/// number of convertible convs (tail first), so the RF is monotone
/// non-increasing down the list. The pooling strategy yields the unedited
/// network, then one point per removable pool, then one point per residual
/// block with a 2x2 max pool inserted after it. Output order is fixed by
/// the enumeration, independent of how points are computed.
pub fn sweep(net: &NetworkSpec, strategy: SweepStrategy) -> Result<Vec<SweepPoint>, TransformError> {
    check_valid(net)?;
    match strategy {
        SweepStrategy::ConvertBoth | SweepStrategy::ConvertTime | SweepStrategy::ConvertFreq => {
            let axes = match strategy {
                SweepStrategy::ConvertBoth => ConvertAxes::Both,
                SweepStrategy::ConvertTime => ConvertAxes::Time,
                SweepStrategy::ConvertFreq => ConvertAxes::Freq,
                SweepStrategy::Pooling => unreachable!(),
            };
            let max = convertible_indices(net, axes).len();
            let counts: Vec<usize> = (0..=max).collect();
            let make = |count: &usize| {
                let edited = convert_tail_filters(net, *count, axes).expect("count within range");
                sweep_point(&edited, format!("{}:{}", strategy.name(), count))
            };
            #[cfg(feature = "parallel")]
            let points = counts.par_iter().map(make).collect();
            #[cfg(not(feature = "parallel"))]
            let points = counts.iter().map(make).collect();
            Ok(points)
        }
        SweepStrategy::Pooling => {
            enum Edit {
                Base,
                Remove(usize),
                InsertAfter { layer: usize, block_no: usize },
            }
            let mut candidates = vec![Edit::Base];
            for (i, l) in net.layers.iter().enumerate() {
                if l.is_pool() {
                    candidates.push(Edit::Remove(i));
                }
            }
            let mut block_no = 0;
            for (i, l) in net.layers.iter().enumerate() {
                if matches!(l, LayerSpec::ResidualBlockEnd) {
                    block_no += 1;
                    candidates.push(Edit::InsertAfter { layer: i, block_no });
                }
            }
            let make = |edit: &Edit| -> Option<SweepPoint> {
                match edit {
                    Edit::Base => Some(sweep_point(net, "pooling:base".into())),
                    Edit::Remove(i) => edit_pooling(net, &[], &[*i])
                        .ok()
                        .map(|n| sweep_point(&n, format!("pooling:drop_pool_{i}"))),
                    Edit::InsertAfter { layer, block_no } => edit_pooling(net, &[*layer], &[])
                        .ok()
                        .map(|n| sweep_point(&n, format!("pooling:add_pool_after_rb{block_no}"))),
                }
            };
            #[cfg(feature = "parallel")]
            let raw: Vec<Option<SweepPoint>> = candidates.par_iter().map(make).collect();
            #[cfg(not(feature = "parallel"))]
            let raw: Vec<Option<SweepPoint>> = candidates.iter().map(make).collect();
            Ok(raw.into_iter().flatten().collect())
        }
    }
}
