//! Architecture intermediate representation.
//!
//! A [`NetworkSpec`] is a flat, ordered list of [`LayerSpec`]s in which
//! residual and dense blocks are delimited by start/end markers. All values
//! are immutable after construction and safe to share across threads.

mod parse;
mod serialize;

pub use parse::{parse_network, ParseError};
pub use serialize::serialize_network;

use crate::axis::Axis2;

/// Activation applied after a convolution (batch norm, when present, is
/// modeled as a convolution attribute because it never changes the
/// receptive field).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// A single 2-D convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: Axis2,
    pub stride: Axis2,
    pub dilation: Axis2,
    pub in_channels: u32,
    pub out_channels: u32,
    pub has_batchnorm: bool,
    pub has_bias: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
}

/// A spatial pooling layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub kernel: Axis2,
    pub stride: Axis2,
}

/// Shortcut branch of a residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    Projection { kernel: Axis2, stride: Axis2 },
}

/// One layer (or block marker) of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Pool(PoolSpec),
    ResidualBlockStart { shortcut: Shortcut },
    ResidualBlockEnd,
    DenseBlockStart { growth_rate: u32 },
    DenseBlockEnd,
    GlobalAveragePool,
    Classifier { classes: u32 },
}

impl LayerSpec {
    pub fn as_conv(&self) -> Option<&ConvSpec> {
        match self {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerSpec::Pool(_))
    }

    /// Compact single-token description, used in traces and reports.
    pub fn describe(&self) -> String {
        fn geom(kernel: Axis2, stride: Axis2, dilation: Option<Axis2>) -> String {
            let mut s = format!("{}x{}", kernel.freq, kernel.time);
            if stride != Axis2::ONE {
                if stride.freq == stride.time {
                    s.push_str(&format!("s{}", stride.freq));
                } else {
                    s.push_str(&format!("s{}x{}", stride.freq, stride.time));
                }
            }
            if let Some(d) = dilation {
                if d != Axis2::ONE {
                    if d.freq == d.time {
                        s.push_str(&format!("d{}", d.freq));
                    } else {
                        s.push_str(&format!("d{}x{}", d.freq, d.time));
                    }
                }
            }
            s
        }
        match self {
            LayerSpec::Conv(c) => format!("conv{}", geom(c.kernel, c.stride, Some(c.dilation))),
            LayerSpec::Pool(p) => match p.kind {
                PoolKind::Max => format!("maxpool{}", geom(p.kernel, p.stride, None)),
                PoolKind::Average => format!("avgpool{}", geom(p.kernel, p.stride, None)),
            },
            LayerSpec::ResidualBlockStart { .. } => "resblock{".to_string(),
            LayerSpec::ResidualBlockEnd => "}resblock".to_string(),
            LayerSpec::DenseBlockStart { growth_rate } => format!("denseblock(g={growth_rate}){{"),
            LayerSpec::DenseBlockEnd => "}denseblock".to_string(),
            LayerSpec::GlobalAveragePool => "gap".to_string(),
            LayerSpec::Classifier { classes } => format!("classifier({classes})"),
        }
    }
}

/// An ordered layer-graph description of a convolutional architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: u32,
    pub layers: Vec<LayerSpec>,
}

/// One invariant violation, pointing at the offending layer index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub layer_index: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer {}: {}", self.layer_index, self.message)
    }
}

fn diag(layer_index: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic { layer_index, message: message.into() }
}

/// Nested view of a network, with block markers resolved into block nodes.
///
/// Indices refer back to positions in `NetworkSpec::layers`; block nodes
/// keep both marker positions so diagnostics can point at either end.
#[derive(Debug, Clone)]
pub enum Node<'a> {
    Conv { index: usize, spec: &'a ConvSpec },
    Pool { index: usize, spec: &'a PoolSpec },
    Residual { start: usize, end: usize, shortcut: &'a Shortcut, body: Vec<Node<'a>> },
    Dense { start: usize, end: usize, growth_rate: u32, body: Vec<Node<'a>> },
    GlobalAveragePool { index: usize },
    Classifier { index: usize, classes: u32 },
}

/// Resolves block markers into a nested node tree.
///
/// Fails with diagnostics when markers are unbalanced, blocks nest, or
/// head layers appear inside a block.
pub fn structure(net: &NetworkSpec) -> Result<Vec<Node<'_>>, Vec<Diagnostic>> {
    enum Open<'a> {
        Residual { start: usize, shortcut: &'a Shortcut, body: Vec<Node<'a>> },
        Dense { start: usize, growth_rate: u32, body: Vec<Node<'a>> },
    }

    fn push_node<'a>(open: &mut Option<Open<'a>>, top: &mut Vec<Node<'a>>, node: Node<'a>) {
        match open {
            Some(Open::Residual { body, .. }) | Some(Open::Dense { body, .. }) => body.push(node),
            None => top.push(node),
        }
    }

    let mut top: Vec<Node<'_>> = Vec::new();
    let mut open: Option<Open<'_>> = None;
    let mut diags = Vec::new();

    for (index, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(spec) => push_node(&mut open, &mut top, Node::Conv { index, spec }),
            LayerSpec::Pool(spec) => push_node(&mut open, &mut top, Node::Pool { index, spec }),
            LayerSpec::GlobalAveragePool => {
                if open.is_some() {
                    diags.push(diag(index, "global average pool is not allowed inside a block"));
                } else {
                    top.push(Node::GlobalAveragePool { index });
                }
            }
            LayerSpec::Classifier { classes } => {
                if open.is_some() {
                    diags.push(diag(index, "classifier is not allowed inside a block"));
                } else {
                    top.push(Node::Classifier { index, classes: *classes });
                }
            }
            LayerSpec::ResidualBlockStart { shortcut } => {
                if open.is_some() {
                    diags.push(diag(index, "blocks cannot nest: residual block opened inside a block"));
                } else {
                    open = Some(Open::Residual { start: index, shortcut, body: Vec::new() });
                }
            }
            LayerSpec::DenseBlockStart { growth_rate } => {
                if open.is_some() {
                    diags.push(diag(index, "blocks cannot nest: dense block opened inside a block"));
                } else {
                    open = Some(Open::Dense { start: index, growth_rate: *growth_rate, body: Vec::new() });
                }
            }
            LayerSpec::ResidualBlockEnd => match open.take() {
                Some(Open::Residual { start, shortcut, body }) => {
                    top.push(Node::Residual { start, end: index, shortcut, body });
                }
                Some(other) => {
                    diags.push(diag(index, "unbalanced block: residual end closes a dense block"));
                    open = Some(other);
                }
                None => diags.push(diag(index, "unbalanced block: residual end without a start")),
            },
            LayerSpec::DenseBlockEnd => match open.take() {
                Some(Open::Dense { start, growth_rate, body }) => {
                    top.push(Node::Dense { start, end: index, growth_rate, body });
                }
                Some(other) => {
                    diags.push(diag(index, "unbalanced block: dense end closes a residual block"));
                    open = Some(other);
                }
                None => diags.push(diag(index, "unbalanced block: dense end without a start")),
            },
        }
    }
    if let Some(o) = open {
        let (start, kind) = match o {
            Open::Residual { start, .. } => (start, "residual"),
            Open::Dense { start, .. } => (start, "dense"),
        };
        diags.push(diag(start, format!("unbalanced block: {kind} block is never closed")));
    }
    if diags.is_empty() {
        Ok(top)
    } else {
        Err(diags)
    }
}

/// Per-axis product of all conv/pool strides in a node list.
fn stride_product(nodes: &[Node<'_>]) -> Axis2 {
    let mut s = Axis2::ONE;
    for node in nodes {
        match node {
            Node::Conv { spec, .. } => s = s.saturating_mul(spec.stride),
            Node::Pool { spec, .. } => s = s.saturating_mul(spec.stride),
            Node::Residual { body, .. } => s = s.saturating_mul(stride_product(body)),
            // Dense bodies are stride-1 by construction (validated).
            Node::Dense { .. } | Node::GlobalAveragePool { .. } | Node::Classifier { .. } => {}
        }
    }
    s
}

/// Checks every `NetworkSpec` invariant and returns one diagnostic per
/// violation. An empty list means the network is valid.
pub fn validate_network(net: &NetworkSpec) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    if net.name.is_empty()
        || net.name.chars().any(|c| c.is_whitespace() || c == '#' || c == '{' || c == '}')
    {
        diags.push(diag(0, format!("network name {:?} must be a single token without '#', '{{' or '}}'", net.name)));
    }
    if net.input_channels == 0 {
        diags.push(diag(0, "input_channels must be at least 1"));
    }

    // Geometry checks are per layer and do not need block context.
    for (index, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(c) => {
                if !c.kernel.is_positive() || !c.stride.is_positive() || !c.dilation.is_positive() {
                    diags.push(diag(index, format!("conv kernel/stride/dilation components must be >= 1 (k={} s={} d={})", c.kernel, c.stride, c.dilation)));
                }
                if c.in_channels == 0 || c.out_channels == 0 {
                    diags.push(diag(index, "conv channel counts must be >= 1"));
                }
            }
            LayerSpec::Pool(p) => {
                if !p.kernel.is_positive() || !p.stride.is_positive() {
                    diags.push(diag(index, format!("pool kernel/stride components must be >= 1 (k={} s={})", p.kernel, p.stride)));
                }
            }
            LayerSpec::ResidualBlockStart { shortcut: Shortcut::Projection { kernel, stride } } => {
                if !kernel.is_positive() || !stride.is_positive() {
                    diags.push(diag(index, "projection kernel/stride components must be >= 1"));
                }
            }
            LayerSpec::DenseBlockStart { growth_rate } => {
                if *growth_rate == 0 {
                    diags.push(diag(index, "dense block growth rate must be >= 1"));
                }
            }
            LayerSpec::Classifier { classes } => {
                if *classes == 0 {
                    diags.push(diag(index, "classifier must have at least 1 class"));
                }
            }
            _ => {}
        }
    }

    let nodes = match structure(net) {
        Ok(nodes) => nodes,
        Err(mut marker_diags) => {
            diags.append(&mut marker_diags);
            return diags;
        }
    };

    // Channel chaining and block invariants over the nested view.
    let mut channels = net.input_channels;
    let mut seen_gap = false;
    let mut seen_classifier = false;
    for node in &nodes {
        if seen_classifier {
            let index = node_first_index(node);
            diags.push(diag(index, "no layer may follow the classifier"));
            break;
        }
        match node {
            Node::Conv { index, spec } => {
                if seen_gap {
                    diags.push(diag(*index, "spatial layer after global average pool"));
                }
                if spec.in_channels != channels {
                    diags.push(diag(*index, format!("channel mismatch: conv expects in_channels={}, but {} channels are produced before it", spec.in_channels, channels)));
                }
                channels = spec.out_channels;
            }
            Node::Pool { index, .. } => {
                if seen_gap {
                    diags.push(diag(*index, "spatial layer after global average pool"));
                }
            }
            Node::Residual { start, shortcut, body, .. } => {
                if seen_gap {
                    diags.push(diag(*start, "spatial layer after global average pool"));
                }
                let entering = channels;
                let mut c = entering;
                for inner in body {
                    match inner {
                        Node::Conv { index, spec } => {
                            if spec.in_channels != c {
                                diags.push(diag(*index, format!("channel mismatch: conv expects in_channels={}, but {} channels are produced before it", spec.in_channels, c)));
                            }
                            c = spec.out_channels;
                        }
                        Node::Pool { .. } => {}
                        _ => unreachable!("structure() rejects nested blocks and head layers"),
                    }
                }
                let main_stride = stride_product(body);
                match shortcut {
                    Shortcut::Identity => {
                        if main_stride != Axis2::ONE {
                            diags.push(diag(*start, format!("shortcut stride mismatch: main path has cumulative stride {main_stride} but the identity shortcut has 1x1")));
                        }
                        if c != entering {
                            diags.push(diag(*start, format!("identity shortcut requires equal channel counts (block maps {entering} -> {c})")));
                        }
                    }
                    Shortcut::Projection { stride, .. } => {
                        if *stride != main_stride {
                            diags.push(diag(*start, format!("shortcut stride mismatch: main path has cumulative stride {main_stride} but the projection has {stride}")));
                        }
                    }
                }
                channels = c;
            }
            Node::Dense { start, growth_rate, body, .. } => {
                if seen_gap {
                    diags.push(diag(*start, "spatial layer after global average pool"));
                }
                let entering = channels;
                let mut k = 0u32;
                for inner in body {
                    match inner {
                        Node::Conv { index, spec } => {
                            let expected_in = entering.saturating_add(k.saturating_mul(*growth_rate));
                            if spec.in_channels != expected_in {
                                diags.push(diag(*index, format!("channel mismatch in dense block: layer {} expects in_channels={}, found {}", k + 1, expected_in, spec.in_channels)));
                            }
                            if spec.out_channels != *growth_rate {
                                diags.push(diag(*index, format!("dense block conv must produce growth_rate={} channels, found {}", growth_rate, spec.out_channels)));
                            }
                            if spec.stride != Axis2::ONE {
                                diags.push(diag(*index, "dense block convs must have stride 1x1 so feature maps stay concatenable"));
                            }
                            k += 1;
                        }
                        Node::Pool { index, .. } => {
                            diags.push(diag(*index, "pooling is not allowed inside a dense block"));
                        }
                        _ => unreachable!("structure() rejects nested blocks and head layers"),
                    }
                }
                if k == 0 {
                    diags.push(diag(*start, "dense block must contain at least one conv"));
                }
                channels = k.saturating_mul(*growth_rate);
            }
            Node::GlobalAveragePool { index } => {
                if seen_gap {
                    diags.push(diag(*index, "at most one global average pool is allowed"));
                }
                seen_gap = true;
            }
            Node::Classifier { .. } => {
                seen_classifier = true;
            }
        }
    }

    diags
}

fn node_first_index(node: &Node<'_>) -> usize {
    match node {
        Node::Conv { index, .. }
        | Node::Pool { index, .. }
        | Node::GlobalAveragePool { index }
        | Node::Classifier { index, .. } => *index,
        Node::Residual { start, .. } | Node::Dense { start, .. } => *start,
    }
}

/// Trainable-parameter totals, per layer and overall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: u64,
    pub by_layer: Vec<(usize, u64)>,
}

fn conv_params(kernel: Axis2, in_channels: u32, out_channels: u32, has_bias: bool, has_batchnorm: bool) -> u64 {
    let mut p = kernel.freq as u64 * kernel.time as u64 * in_channels as u64 * out_channels as u64;
    if has_bias {
        p += out_channels as u64;
    }
    if has_batchnorm {
        p += 2 * out_channels as u64;
    }
    p
}

/// Counts trainable parameters layer by layer.
///
/// Convention: convs count `kf*kt*in*out`, plus `out` for a bias and
/// `2*out` for batch-norm scale/shift; pooling and activations are free.
/// A projection shortcut is a batch-normalized conv attributed to the
/// block-start marker. The classifier is a 1x1 batch-normalized conv from
/// the incoming feature channels to the classes (`features*classes +
/// 2*classes`), the usual head of fully convolutional classifiers.
///
/// Expects a valid network; on inconsistent channel chains it still
/// returns counts computed from each layer's stored channel fields.
pub fn count_params(net: &NetworkSpec) -> ParamCount {
    let mut by_layer = Vec::with_capacity(net.layers.len());
    let mut total = 0u64;

    // Channels entering each open block, for projection and classifier sizing.
    let mut channels = net.input_channels;
    let mut block_entry: Option<(usize, u32)> = None;
    let mut dense_layers = 0u32;
    let mut dense_growth = 0u32;
    let mut pending_projection: Option<usize> = None;

    for (index, layer) in net.layers.iter().enumerate() {
        let count = match layer {
            LayerSpec::Conv(c) => {
                channels = c.out_channels;
                if dense_growth > 0 {
                    dense_layers += 1;
                }
                conv_params(c.kernel, c.in_channels, c.out_channels, c.has_bias, c.has_batchnorm)
            }
            LayerSpec::ResidualBlockStart { shortcut } => {
                block_entry = Some((index, channels));
                if matches!(shortcut, Shortcut::Projection { .. }) {
                    pending_projection = Some(index);
                }
                0
            }
            LayerSpec::ResidualBlockEnd => {
                // Resolve the projection now that the block output width is known.
                if let (Some(start), Some((_, entering))) = (pending_projection.take(), block_entry) {
                    if let LayerSpec::ResidualBlockStart { shortcut: Shortcut::Projection { kernel, .. } } = &net.layers[start] {
                        let p = conv_params(*kernel, entering, channels, false, true);
                        if let Some(entry) = by_layer.iter_mut().find(|(i, _)| *i == start) {
                            entry.1 = p;
                        }
                        total += p;
                    }
                }
                block_entry = None;
                0
            }
            LayerSpec::DenseBlockStart { growth_rate } => {
                block_entry = Some((index, channels));
                dense_growth = *growth_rate;
                dense_layers = 0;
                0
            }
            LayerSpec::DenseBlockEnd => {
                channels = dense_layers.saturating_mul(dense_growth);
                dense_growth = 0;
                dense_layers = 0;
                block_entry = None;
                0
            }
            LayerSpec::Classifier { classes } => {
                channels as u64 * *classes as u64 + 2 * *classes as u64
            }
            LayerSpec::Pool(_) | LayerSpec::GlobalAveragePool => 0,
        };
        by_layer.push((index, count));
        total += count;
    }

    ParamCount { total, by_layer }
}
