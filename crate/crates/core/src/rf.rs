//! Receptive-field arithmetic.
//!
//! The maximum RF of a unit is folded layer by layer, per axis: a layer
//! with kernel `k`, stride `s` and dilation `d` seen at cumulative stride
//! `S` (the spacing, in input pixels, between adjacent units of the
//! incoming feature map) updates the state as
//!
//! ```text
//! rf' = rf + (k - 1) * d * S
//! S'  = S * s
//! ```
//!
//! The kernel term multiplies the *incoming* cumulative stride: a layer's
//! own stride only changes the spacing of its outputs, not how far apart
//! its taps land on the input. Residual blocks fold both branches and take
//! the per-axis maximum (a unit's RF is the union of input pixels reachable
//! through any path); dense blocks contribute their deepest chain.

use crate::axis::Axis2;
use crate::ir::{structure, validate_network, Diagnostic, LayerSpec, NetworkSpec, Node, Shortcut};

/// Cumulative stride and receptive field accumulated up to some layer,
/// both per axis and measured in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfState {
    pub cum_stride: Axis2,
    pub rf: Axis2,
}

impl RfState {
    /// State at the network input: every unit sees exactly itself.
    pub fn initial() -> Self {
        RfState { cum_stride: Axis2::ONE, rf: Axis2::ONE }
    }
}

/// Folds one layer into the state. Layers without spatial extent (block
/// markers, global pooling, the classifier) leave the state unchanged.
pub fn rf_step(state: RfState, layer: &LayerSpec) -> RfState {
    match layer {
        LayerSpec::Conv(c) => fold_window(state, c.kernel, c.stride, c.dilation),
        LayerSpec::Pool(p) => fold_window(state, p.kernel, p.stride, Axis2::ONE),
        _ => state,
    }
}

fn fold_window(state: RfState, kernel: Axis2, stride: Axis2, dilation: Axis2) -> RfState {
    fn axis(rf: u32, s: u32, k: u32, st: u32, d: u32) -> (u32, u32) {
        let grown = rf.saturating_add((k - 1).saturating_mul(d).saturating_mul(s));
        (grown, s.saturating_mul(st))
    }
    let (rf_f, s_f) = axis(state.rf.freq, state.cum_stride.freq, kernel.freq, stride.freq, dilation.freq);
    let (rf_t, s_t) = axis(state.rf.time, state.cum_stride.time, kernel.time, stride.time, dilation.time);
    RfState { cum_stride: Axis2::new(s_f, s_t), rf: Axis2::new(rf_f, rf_t) }
}

/// One entry of a per-layer trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub layer_index: usize,
    pub description: String,
    pub state: RfState,
}

/// Per-layer receptive-field trace: one step per conv/pool layer, in
/// network order, plus the final state after block merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: RfState,
}

/// Receptive field of one provenance path through a dense block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseRfEntry {
    pub channels: u32,
    pub rf: Axis2,
}

/// Per-path receptive fields of a dense block, ascending. The k-th conv of
/// the block emits `growth_rate` channels whose RF is the chain through the
/// first k convs; earlier outputs pass through to the block output
/// unchanged and keep their smaller RF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseRfProfile {
    pub entries: Vec<DenseRfEntry>,
}

/// Spectrogram resolution, for converting RF pixels into physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramContext {
    pub frames_per_second: f64,
    pub mel_bins: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<Diagnostic>),
    #[error("layer index {0} is out of range")]
    IndexOutOfRange(usize),
    #[error("layer {0} is not a dense block")]
    NotDenseBlock(usize),
}

fn checked_structure(net: &NetworkSpec) -> Result<Vec<Node<'_>>, AnalysisError> {
    let diags = validate_network(net);
    if !diags.is_empty() {
        return Err(AnalysisError::InvalidNetwork(diags));
    }
    structure(net).map_err(AnalysisError::InvalidNetwork)
}

fn fold_shortcut(entry: RfState, shortcut: &Shortcut) -> RfState {
    match shortcut {
        Shortcut::Identity => entry,
        Shortcut::Projection { kernel, stride } => fold_window(entry, *kernel, *stride, Axis2::ONE),
    }
}

/// Folds a node list, optionally recording per-layer steps.
fn fold_nodes(nodes: &[Node<'_>], mut state: RfState, steps: Option<&mut Vec<TraceStep>>) -> RfState {
    let mut steps = steps;
    for node in nodes {
        match node {
            Node::Conv { index, spec } => {
                state = fold_window(state, spec.kernel, spec.stride, spec.dilation);
                if let Some(steps) = steps.as_deref_mut() {
                    steps.push(TraceStep {
                        layer_index: *index,
                        description: LayerSpec::Conv((*spec).clone()).describe(),
                        state,
                    });
                }
            }
            Node::Pool { index, spec } => {
                state = fold_window(state, spec.kernel, spec.stride, Axis2::ONE);
                if let Some(steps) = steps.as_deref_mut() {
                    steps.push(TraceStep {
                        layer_index: *index,
                        description: LayerSpec::Pool((*spec).clone()).describe(),
                        state,
                    });
                }
            }
            Node::Residual { shortcut, body, .. } => {
                let entry = state;
                let main = fold_nodes(body, entry, steps.as_deref_mut());
                let side = fold_shortcut(entry, shortcut);
                // Both branches feed the sum, so the block RF is the union
                // of what either branch can see. Valid blocks agree on the
                // cumulative stride; the main path's is used.
                state = RfState { cum_stride: main.cum_stride, rf: main.rf.max(side.rf) };
            }
            Node::Dense { body, .. } => {
                // The deepest chain dominates every shallower provenance path.
                state = fold_nodes(body, state, steps.as_deref_mut());
            }
            Node::GlobalAveragePool { .. } | Node::Classifier { .. } => {}
        }
    }
    state
}

/// Final cumulative stride and RF of a validated network.
pub fn network_rf_state(net: &NetworkSpec) -> Result<RfState, AnalysisError> {
    let nodes = checked_structure(net)?;
    Ok(fold_nodes(&nodes, RfState::initial(), None))
}

/// Final receptive field of a validated network, in input pixels per axis.
pub fn network_rf(net: &NetworkSpec) -> Result<Axis2, AnalysisError> {
    network_rf_state(net).map(|s| s.rf)
}

/// Per-layer trace of the RF recurrence: one step per conv/pool layer.
///
/// Steps inside residual blocks show the main-path accumulation; the final
/// state additionally folds shortcut branches. For every architecture whose
/// shortcut RFs are dominated by the main path (all presets, and anything
/// with 1x1 projections) the final state equals the last step's state.
pub fn rf_trace(net: &NetworkSpec) -> Result<RfTrace, AnalysisError> {
    let nodes = checked_structure(net)?;
    let mut steps = Vec::new();
    let final_state = fold_nodes(&nodes, RfState::initial(), Some(&mut steps));
    Ok(RfTrace { steps, final_state })
}

/// Enumerates the provenance paths of the dense block whose
/// `DenseBlockStart` marker sits at `block_index` in `net.layers`.
pub fn dense_rf_profile(net: &NetworkSpec, block_index: usize) -> Result<DenseRfProfile, AnalysisError> {
    if block_index >= net.layers.len() {
        return Err(AnalysisError::IndexOutOfRange(block_index));
    }
    if !matches!(net.layers[block_index], LayerSpec::DenseBlockStart { .. }) {
        return Err(AnalysisError::NotDenseBlock(block_index));
    }
    let nodes = checked_structure(net)?;
    profile_in_nodes(&nodes, RfState::initial(), block_index)
        .ok_or(AnalysisError::NotDenseBlock(block_index))
}

fn profile_in_nodes(
    nodes: &[Node<'_>],
    mut state: RfState,
    block_index: usize,
) -> Option<DenseRfProfile> {
    for node in nodes {
        if let Node::Dense { start, growth_rate, body, .. } = node {
            if *start == block_index {
                let mut entries = Vec::new();
                let mut chain = state;
                for inner in body {
                    if let Node::Conv { spec, .. } = inner {
                        chain = fold_window(chain, spec.kernel, spec.stride, spec.dilation);
                        entries.push(DenseRfEntry { channels: *growth_rate, rf: chain.rf });
                    }
                }
                // Chain RFs are monotone, so entries are already ascending.
                return Some(DenseRfProfile { entries });
            }
        }
        state = fold_nodes(std::slice::from_ref(node), state, None);
    }
    None
}

/// Converts an RF box into seconds of audio and the covered fraction of
/// the mel axis (capped at full coverage).
pub fn context_of_rf(rf: Axis2, ctx: &SpectrogramContext) -> (f64, f64) {
    let seconds = rf.time as f64 / ctx.frames_per_second;
    let coverage = (rf.freq as f64 / ctx.mel_bins as f64).min(1.0);
    (seconds, coverage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ConvSpec, PoolKind, PoolSpec};

    fn conv_layer(kernel: Axis2, stride: Axis2, in_channels: u32, out_channels: u32) -> LayerSpec {
        LayerSpec::Conv(ConvSpec {
            kernel,
            stride,
            dilation: Axis2::ONE,
            in_channels,
            out_channels,
            has_batchnorm: true,
            has_bias: false,
            activation: crate::ir::Activation::Relu,
        })
    }

    fn pool22() -> LayerSpec {
        LayerSpec::Pool(PoolSpec { kind: PoolKind::Max, kernel: Axis2::splat(2), stride: Axis2::splat(2) })
    }

    #[test]
    fn identity_conv_leaves_state_unchanged() {
        let s = rf_step(RfState::initial(), &conv_layer(Axis2::ONE, Axis2::ONE, 1, 1));
        assert_eq!(s, RfState::initial());
    }

    #[test]
    fn strided_conv_from_initial_state() {
        let s = rf_step(RfState::initial(), &conv_layer(Axis2::splat(5), Axis2::splat(2), 1, 1));
        assert_eq!(s.rf, Axis2::splat(5));
        assert_eq!(s.cum_stride, Axis2::splat(2));
    }

    #[test]
    fn pool_uses_incoming_stride() {
        let state = RfState { cum_stride: Axis2::splat(2), rf: Axis2::splat(9) };
        let s = rf_step(state, &pool22());
        assert_eq!(s.rf, Axis2::splat(11)); // 9 + (2-1)*2
        assert_eq!(s.cum_stride, Axis2::splat(4));
    }

    #[test]
    fn dilation_scales_the_kernel_term() {
        let mut c = conv_layer(Axis2::splat(3), Axis2::ONE, 1, 1);
        if let LayerSpec::Conv(spec) = &mut c {
            spec.dilation = Axis2::new(2, 3);
        }
        let s = rf_step(RfState::initial(), &c);
        assert_eq!(s.rf, Axis2::new(5, 7)); // 1 + 2*d per axis
    }

    #[test]
    fn two_stacked_3x3_convs_see_5x5() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![
                conv_layer(Axis2::splat(3), Axis2::ONE, 1, 4),
                conv_layer(Axis2::splat(3), Axis2::ONE, 4, 4),
            ],
        };
        assert_eq!(network_rf(&net).unwrap(), Axis2::splat(5));
    }

    #[test]
    fn trace_counts_only_convs_and_pools() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![
                conv_layer(Axis2::splat(5), Axis2::splat(2), 1, 4),
                LayerSpec::GlobalAveragePool,
                LayerSpec::Classifier { classes: 10 },
            ],
        };
        let trace = rf_trace(&net).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].description, "conv5x5s2");
        assert_eq!(trace.final_state.rf, Axis2::splat(5));
        assert_eq!(trace.final_state, trace.steps.last().unwrap().state);
    }

    #[test]
    fn empty_body_traces_to_identity() {
        let net = NetworkSpec { name: "t".into(), input_channels: 1, layers: vec![] };
        let trace = rf_trace(&net).unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(trace.final_state.rf, Axis2::ONE);
    }

    #[test]
    fn dense_profile_chains_per_layer() {
        let mut layers = vec![LayerSpec::DenseBlockStart { growth_rate: 4 }];
        for k in 0..3u32 {
            layers.push(conv_layer(Axis2::splat(3), Axis2::ONE, 1 + k * 4, 4));
        }
        layers.push(LayerSpec::DenseBlockEnd);
        let net = NetworkSpec { name: "t".into(), input_channels: 1, layers };
        let profile = dense_rf_profile(&net, 0).unwrap();
        let rfs: Vec<Axis2> = profile.entries.iter().map(|e| e.rf).collect();
        assert_eq!(rfs, vec![Axis2::splat(3), Axis2::splat(5), Axis2::splat(7)]);
        assert!(profile.entries.iter().all(|e| e.channels == 4));
        // channel counts sum to the block output width
        let sum: u32 = profile.entries.iter().map(|e| e.channels).sum();
        assert_eq!(sum, 12);
        // the deepest path matches the whole-network RF
        assert_eq!(profile.entries.last().unwrap().rf, network_rf(&net).unwrap());
    }

    #[test]
    fn dense_profile_errors() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![conv_layer(Axis2::splat(3), Axis2::ONE, 1, 4)],
        };
        assert!(matches!(dense_rf_profile(&net, 9), Err(AnalysisError::IndexOutOfRange(9))));
        assert!(matches!(dense_rf_profile(&net, 0), Err(AnalysisError::NotDenseBlock(0))));
    }

    #[test]
    fn context_arithmetic() {
        let ctx = SpectrogramContext { frames_per_second: 43.0, mel_bins: 256 };
        let (secs, cov) = context_of_rf(Axis2::splat(135), &ctx);
        assert!((secs - 135.0 / 43.0).abs() < 1e-12);
        assert!((cov - 135.0 / 256.0).abs() < 1e-12);
        let (secs1, cov1) = context_of_rf(Axis2::ONE, &ctx);
        assert_eq!(secs1, 1.0 / 43.0);
        assert_eq!(cov1, 1.0 / 256.0);
        let (secs_big, cov_big) = context_of_rf(Axis2::splat(583), &ctx);
        assert!((secs_big - 583.0 / 43.0).abs() < 1e-12);
        assert_eq!(cov_big, 1.0); // capped at full coverage
    }

    #[test]
    fn residual_merge_takes_branch_maximum() {
        // Main path is all-1x1 while the projection has a 3x3 kernel, so
        // the shortcut dominates the block RF.
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![
                LayerSpec::ResidualBlockStart {
                    shortcut: Shortcut::Projection { kernel: Axis2::splat(3), stride: Axis2::ONE },
                },
                conv_layer(Axis2::ONE, Axis2::ONE, 1, 2),
                LayerSpec::ResidualBlockEnd,
            ],
        };
        assert_eq!(network_rf(&net).unwrap(), Axis2::splat(3));
    }

    #[test]
    fn invalid_network_propagates_diagnostics() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![conv_layer(Axis2::splat(3), Axis2::ONE, 7, 4)],
        };
        assert!(matches!(network_rf(&net), Err(AnalysisError::InvalidNetwork(_))));
    }
}
