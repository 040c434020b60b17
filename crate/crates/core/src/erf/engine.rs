//! Forward and reverse pass over a network, recording a tape.
//!
//! Convolutions use centered "same" zero padding (output extent is
//! `ceil(in/stride)` per axis, extra padding goes to the high side), so a
//! center output pixel exists for any input size. Pools are unpadded and
//! fail with a dimension underflow when the input is smaller than the
//! window. Batch norm never carries weights here and is treated as the
//! identity; activations are conv attributes; residual sums carry no
//! activation of their own.
//!
//! Only input gradients are ever needed, so the tape stores layer geometry,
//! ReLU sign masks and max-pool argmax indices, never activations.

use super::tensor::Tensor4;
use super::{ChannelMode, ErfError};
use crate::ir::{
    structure, validate_network, ConvSpec, LayerSpec, NetworkSpec, Node, PoolKind, PoolSpec,
    Shortcut,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// How the engine fills conv (and projection) weights.
#[derive(Debug, Clone)]
pub enum WeightInit {
    /// Every weight 1.0; biases, where present, 0.0.
    AllOnes,
    /// Reproducible uniform draws from `[-scale, scale]`: the same seed
    /// always yields bit-identical weights.
    Seeded { seed: u64, scale: f64 },
    /// Caller-provided tensors, keyed by layer index.
    Explicit(ExplicitWeights),
}

/// Explicit weight tensors: conv weights are `(out, in, kf, kt)` row-major,
/// keyed by the conv's layer index; projection weights are keyed by the
/// residual block's start-marker index; biases (only for convs declaring
/// one) are `out`-sized.
#[derive(Debug, Clone, Default)]
pub struct ExplicitWeights {
    pub conv: BTreeMap<usize, Vec<f64>>,
    pub projection: BTreeMap<usize, Vec<f64>>,
    pub bias: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvWeights {
    pub w: Vec<f64>, // (out, in, kf, kt)
    pub bias: Option<Vec<f64>>,
    pub out: usize,
    pub inp: usize,
    pub kf: usize,
    pub kt: usize,
}

#[derive(Debug, Default)]
pub(crate) struct NetWeights {
    conv: BTreeMap<usize, ConvWeights>,
    projection: BTreeMap<usize, ConvWeights>,
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    // 53 high bits -> [0, 1); stable across dependency versions.
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

fn draw(rng: &mut ChaCha8Rng, scale: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * unit_f64(rng) - 1.0)).collect()
}

/// Materializes weights for every conv and projection, walking layers in
/// order so seeded draws are position-stable.
pub(crate) fn materialize(net: &NetworkSpec, init: &WeightInit) -> Result<NetWeights, ErfError> {
    let mut rng = match init {
        WeightInit::Seeded { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut weights = NetWeights::default();
    let mut channels = net.input_channels as usize;
    let mut block_entry = 0usize;
    let mut pending_projection: Option<(usize, usize, usize)> = None; // (start, kf, kt)
    let mut dense: Option<(usize, usize, usize)> = None; // (entry, growth, layers)

    for (index, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(c) => {
                let inp = match &mut dense {
                    Some((entry, growth, layers)) => {
                        let i = *entry + *layers * *growth;
                        *layers += 1;
                        i
                    }
                    None => channels,
                };
                let out = c.out_channels as usize;
                let (kf, kt) = (c.kernel.freq as usize, c.kernel.time as usize);
                let n = out * inp * kf * kt;
                let w = match init {
                    WeightInit::AllOnes => vec![1.0; n],
                    WeightInit::Seeded { scale, .. } => draw(rng.as_mut().unwrap(), *scale, n),
                    WeightInit::Explicit(e) => {
                        let w = e.conv.get(&index).ok_or(ErfError::MissingWeights { layer: index })?;
                        if w.len() != n {
                            return Err(ErfError::WeightLength { layer: index, expected: n, found: w.len() });
                        }
                        w.clone()
                    }
                };
                let bias = if c.has_bias {
                    Some(match init {
                        WeightInit::AllOnes => vec![0.0; out],
                        WeightInit::Seeded { scale, .. } => draw(rng.as_mut().unwrap(), *scale, out),
                        WeightInit::Explicit(e) => {
                            let b = e.bias.get(&index).ok_or(ErfError::MissingWeights { layer: index })?;
                            if b.len() != out {
                                return Err(ErfError::WeightLength { layer: index, expected: out, found: b.len() });
                            }
                            b.clone()
                        }
                    })
                } else {
                    None
                };
                weights.conv.insert(index, ConvWeights { w, bias, out, inp, kf, kt });
                channels = out;
            }
            LayerSpec::ResidualBlockStart { shortcut } => {
                block_entry = channels;
                if let Shortcut::Projection { kernel, .. } = shortcut {
                    pending_projection = Some((index, kernel.freq as usize, kernel.time as usize));
                }
            }
            LayerSpec::ResidualBlockEnd => {
                if let Some((start, kf, kt)) = pending_projection.take() {
                    let (inp, out) = (block_entry, channels);
                    let n = out * inp * kf * kt;
                    let w = match init {
                        WeightInit::AllOnes => vec![1.0; n],
                        WeightInit::Seeded { scale, .. } => draw(rng.as_mut().unwrap(), *scale, n),
                        WeightInit::Explicit(e) => {
                            let w = e.projection.get(&start).ok_or(ErfError::MissingWeights { layer: start })?;
                            if w.len() != n {
                                return Err(ErfError::WeightLength { layer: start, expected: n, found: w.len() });
                            }
                            w.clone()
                        }
                    };
                    weights.projection.insert(start, ConvWeights { w, bias: None, out, inp, kf, kt });
                }
            }
            LayerSpec::DenseBlockStart { growth_rate } => {
                dense = Some((channels, *growth_rate as usize, 0));
            }
            LayerSpec::DenseBlockEnd => {
                if let Some((_, growth, layers)) = dense.take() {
                    channels = growth * layers;
                }
            }
            LayerSpec::Pool(_) | LayerSpec::GlobalAveragePool | LayerSpec::Classifier { .. } => {}
        }
    }
    Ok(weights)
}

/// Per-axis "same" geometry: output extent and low-side padding.
fn same_axis(input: usize, k: usize, s: usize, d: usize) -> (usize, usize) {
    let out = input.div_ceil(s);
    let eff = (k - 1) * d + 1;
    let needed = (out - 1) * s + eff;
    let pad_total = needed.saturating_sub(input);
    (out, pad_total / 2)
}

#[derive(Debug)]
struct ConvGeom {
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: (usize, usize),
    in_dims: [usize; 4],
    out_dims: [usize; 4],
}

#[derive(Debug)]
enum TapeNode {
    Conv { key: usize, projection: bool, geom: ConvGeom, relu_mask: Option<Vec<bool>> },
    Pool {
        kind: PoolKind,
        kernel: (usize, usize),
        stride: (usize, usize),
        in_dims: [usize; 4],
        out_dims: [usize; 4],
        argmax: Option<Vec<usize>>,
    },
    Residual { main: Vec<TapeNode>, shortcut: Option<Box<TapeNode>> },
    Dense { layers: Vec<TapeNode>, entry_channels: usize, growth: usize },
}

/// Execution record of one forward pass; consumed by
/// [`backward_from_pixel`](super::backward_from_pixel).
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    weights: Arc<NetWeights>,
    input_dims: [usize; 4],
    output_dims: [usize; 4],
}

impl Tape {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }

    /// Dims of the last feature map before any global pooling.
    pub fn output_dims(&self) -> [usize; 4] {
        self.output_dims
    }
}

fn conv_forward(
    x: &Tensor4,
    w: &ConvWeights,
    stride: (usize, usize),
    dilation: (usize, usize),
    relu: bool,
    key: usize,
    projection: bool,
) -> (Tensor4, TapeNode) {
    let [b, _, in_f, in_t] = x.dims();
    let (out_f, pad_f) = same_axis(in_f, w.kf, stride.0, dilation.0);
    let (out_t, pad_t) = same_axis(in_t, w.kt, stride.1, dilation.1);
    let out_dims = [b, w.out, out_f, out_t];
    let mut y = Tensor4::zeros(out_dims);
    let mut mask = if relu { Some(vec![false; b * w.out * out_f * out_t]) } else { None };

    let mut flat = 0usize;
    for bi in 0..b {
        for co in 0..w.out {
            let wc = &w.w[co * w.inp * w.kf * w.kt..(co + 1) * w.inp * w.kf * w.kt];
            for of in 0..out_f {
                for ot in 0..out_t {
                    let mut acc = w.bias.as_ref().map_or(0.0, |bv| bv[co]);
                    for ci in 0..w.inp {
                        for kf in 0..w.kf {
                            let fi = of * stride.0 + kf * dilation.0;
                            let Some(fi) = fi.checked_sub(pad_f) else { continue };
                            if fi >= in_f {
                                continue;
                            }
                            for kt in 0..w.kt {
                                let ti = ot * stride.1 + kt * dilation.1;
                                let Some(ti) = ti.checked_sub(pad_t) else { continue };
                                if ti >= in_t {
                                    continue;
                                }
                                acc += wc[(ci * w.kf + kf) * w.kt + kt] * x.at(bi, ci, fi, ti);
                            }
                        }
                    }
                    let v = if relu {
                        mask.as_mut().unwrap()[flat] = acc > 0.0;
                        acc.max(0.0)
                    } else {
                        acc
                    };
                    *y.at_mut(bi, co, of, ot) = v;
                    flat += 1;
                }
            }
        }
    }

    let geom = ConvGeom {
        stride,
        dilation,
        pad: (pad_f, pad_t),
        in_dims: x.dims(),
        out_dims,
    };
    (y, TapeNode::Conv { key, projection, geom, relu_mask: mask })
}

fn pool_forward(x: &Tensor4, spec: &PoolSpec, layer: usize) -> Result<(Tensor4, TapeNode), ErfError> {
    let [b, c, in_f, in_t] = x.dims();
    let (kf, kt) = (spec.kernel.freq as usize, spec.kernel.time as usize);
    let (sf, st) = (spec.stride.freq as usize, spec.stride.time as usize);
    if in_f < kf || in_t < kt {
        return Err(ErfError::DimUnderflow { layer, dims: (in_f, in_t), kernel: (kf, kt) });
    }
    let out_f = (in_f - kf) / sf + 1;
    let out_t = (in_t - kt) / st + 1;
    let out_dims = [b, c, out_f, out_t];
    let mut y = Tensor4::zeros(out_dims);
    let mut argmax = if spec.kind == PoolKind::Max {
        Some(vec![0usize; b * c * out_f * out_t])
    } else {
        None
    };

    let mut flat = 0usize;
    for bi in 0..b {
        for ci in 0..c {
            for of in 0..out_f {
                for ot in 0..out_t {
                    match spec.kind {
                        PoolKind::Max => {
                            // Scan in (f, t) order; strict comparison keeps
                            // the first (lowest-index) maximum on ties.
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0usize;
                            for wf in 0..kf {
                                for wt in 0..kt {
                                    let (fi, ti) = (of * sf + wf, ot * st + wt);
                                    let v = x.at(bi, ci, fi, ti);
                                    if v > best {
                                        best = v;
                                        best_idx = ((bi * c + ci) * in_f + fi) * in_t + ti;
                                    }
                                }
                            }
                            *y.at_mut(bi, ci, of, ot) = best;
                            argmax.as_mut().unwrap()[flat] = best_idx;
                        }
                        PoolKind::Average => {
                            let mut acc = 0.0;
                            for wf in 0..kf {
                                for wt in 0..kt {
                                    acc += x.at(bi, ci, of * sf + wf, ot * st + wt);
                                }
                            }
                            *y.at_mut(bi, ci, of, ot) = acc / (kf * kt) as f64;
                        }
                    }
                    flat += 1;
                }
            }
        }
    }

    Ok((y, TapeNode::Pool {
        kind: spec.kind,
        kernel: (kf, kt),
        stride: (sf, st),
        in_dims: x.dims(),
        out_dims,
        argmax,
    }))
}

fn run_conv_spec(x: &Tensor4, spec: &ConvSpec, index: usize, weights: &NetWeights) -> (Tensor4, TapeNode) {
    let w = &weights.conv[&index];
    conv_forward(
        x,
        w,
        (spec.stride.freq as usize, spec.stride.time as usize),
        (spec.dilation.freq as usize, spec.dilation.time as usize),
        spec.activation == crate::ir::Activation::Relu,
        index,
        false,
    )
}

fn run_nodes(
    nodes: &[Node<'_>],
    mut x: Tensor4,
    weights: &NetWeights,
    tape: &mut Vec<TapeNode>,
) -> Result<Tensor4, ErfError> {
    for node in nodes {
        match node {
            Node::Conv { index, spec } => {
                let (y, t) = run_conv_spec(&x, spec, *index, weights);
                tape.push(t);
                x = y;
            }
            Node::Pool { index, spec } => {
                let (y, t) = pool_forward(&x, spec, *index)?;
                tape.push(t);
                x = y;
            }
            Node::Residual { start, shortcut, body, .. } => {
                let mut main_tape = Vec::new();
                let main = run_nodes(body, x.clone(), weights, &mut main_tape)?;
                let (side, side_tape) = match shortcut {
                    Shortcut::Identity => (x, None),
                    Shortcut::Projection { stride, .. } => {
                        let w = &weights.projection[start];
                        let (y, t) = conv_forward(
                            &x,
                            w,
                            (stride.freq as usize, stride.time as usize),
                            (1, 1),
                            false,
                            *start,
                            true,
                        );
                        (y, Some(Box::new(t)))
                    }
                };
                if main.dims() != side.dims() {
                    return Err(ErfError::ShapeMismatch {
                        layer: *start,
                        main: main.dims(),
                        shortcut: side.dims(),
                    });
                }
                let mut sum = main;
                sum.add_assign(&side);
                tape.push(TapeNode::Residual { main: main_tape, shortcut: side_tape });
                x = sum;
            }
            Node::Dense { growth_rate, body, .. } => {
                let entry_channels = x.channels();
                let mut values = vec![x];
                let mut layer_tapes = Vec::new();
                for inner in body {
                    if let Node::Conv { index, spec } = inner {
                        let refs: Vec<&Tensor4> = values.iter().collect();
                        let concat = Tensor4::concat_channels(&refs);
                        let (y, t) = run_conv_spec(&concat, spec, *index, weights);
                        layer_tapes.push(t);
                        values.push(y);
                    }
                }
                let refs: Vec<&Tensor4> = values[1..].iter().collect();
                x = Tensor4::concat_channels(&refs);
                tape.push(TapeNode::Dense {
                    layers: layer_tapes,
                    entry_channels,
                    growth: *growth_rate as usize,
                });
            }
            Node::GlobalAveragePool { .. } | Node::Classifier { .. } => {}
        }
    }
    Ok(x)
}

/// Runs the spatial body of `net` on `input`, returning the last feature
/// map before global pooling together with the tape for the reverse pass.
pub fn forward(
    net: &NetworkSpec,
    init: &WeightInit,
    input: &Tensor4,
) -> Result<(Tensor4, Tape), ErfError> {
    let weights = Arc::new(materialize_checked(net, init, input)?);
    forward_with(net, weights, input)
}

pub(crate) fn materialize_checked(
    net: &NetworkSpec,
    init: &WeightInit,
    input: &Tensor4,
) -> Result<NetWeights, ErfError> {
    let diags = validate_network(net);
    if !diags.is_empty() {
        return Err(ErfError::InvalidNetwork(diags));
    }
    if input.channels() != net.input_channels as usize {
        return Err(ErfError::ChannelMismatch {
            expected: net.input_channels as usize,
            found: input.channels(),
        });
    }
    if input.batch() == 0 {
        return Err(ErfError::BadTensor("batch must be at least 1".into()));
    }
    materialize(net, init)
}

pub(crate) fn forward_with(
    net: &NetworkSpec,
    weights: Arc<NetWeights>,
    input: &Tensor4,
) -> Result<(Tensor4, Tape), ErfError> {
    let nodes = structure(net).map_err(ErfError::InvalidNetwork)?;
    let mut tape_nodes = Vec::new();
    let out = run_nodes(&nodes, input.clone(), &weights, &mut tape_nodes)?;
    let tape = Tape {
        nodes: tape_nodes,
        weights,
        input_dims: input.dims(),
        output_dims: out.dims(),
    };
    Ok((out, tape))
}

fn conv_backward(
    geom: &ConvGeom,
    relu_mask: Option<&[bool]>,
    w: &ConvWeights,
    grad_out: &Tensor4,
) -> Tensor4 {
    let [b, _, in_f, in_t] = geom.in_dims;
    let [_, _, out_f, out_t] = geom.out_dims;
    let (sf, st) = geom.stride;
    let (df, dt) = geom.dilation;
    let (pad_f, pad_t) = geom.pad;
    let mut grad_in = Tensor4::zeros(geom.in_dims);

    let mut flat = 0usize;
    for bi in 0..b {
        for co in 0..w.out {
            let wc = &w.w[co * w.inp * w.kf * w.kt..(co + 1) * w.inp * w.kf * w.kt];
            for of in 0..out_f {
                for ot in 0..out_t {
                    let mut g = grad_out.at(bi, co, of, ot);
                    if let Some(mask) = relu_mask {
                        if !mask[flat] {
                            g = 0.0;
                        }
                    }
                    flat += 1;
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..w.inp {
                        for kf in 0..w.kf {
                            let fi = of * sf + kf * df;
                            let Some(fi) = fi.checked_sub(pad_f) else { continue };
                            if fi >= in_f {
                                continue;
                            }
                            for kt in 0..w.kt {
                                let ti = ot * st + kt * dt;
                                let Some(ti) = ti.checked_sub(pad_t) else { continue };
                                if ti >= in_t {
                                    continue;
                                }
                                *grad_in.at_mut(bi, ci, fi, ti) += wc[(ci * w.kf + kf) * w.kt + kt] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn node_backward(node: &TapeNode, weights: &NetWeights, grad: Tensor4) -> Tensor4 {
    match node {
        TapeNode::Conv { key, projection, geom, relu_mask } => {
            let w = if *projection { &weights.projection[key] } else { &weights.conv[key] };
            conv_backward(geom, relu_mask.as_deref(), w, &grad)
        }
        TapeNode::Pool { kind, kernel, stride, in_dims, out_dims, argmax } => {
            let mut grad_in = Tensor4::zeros(*in_dims);
            let [b, c, out_f, out_t] = *out_dims;
            match kind {
                PoolKind::Max => {
                    let argmax = argmax.as_ref().expect("max pools record argmax");
                    let mut flat = 0usize;
                    for bi in 0..b {
                        for ci in 0..c {
                            for of in 0..out_f {
                                for ot in 0..out_t {
                                    let g = grad.at(bi, ci, of, ot);
                                    if g != 0.0 {
                                        let idx = argmax[flat];
                                        let f = (idx / in_dims[3]) % in_dims[2];
                                        let t = idx % in_dims[3];
                                        *grad_in.at_mut(bi, ci, f, t) += g;
                                    }
                                    flat += 1;
                                }
                            }
                        }
                    }
                }
                PoolKind::Average => {
                    let (kf, kt) = *kernel;
                    let (sf, st) = *stride;
                    let share = 1.0 / (kf * kt) as f64;
                    for bi in 0..b {
                        for ci in 0..c {
                            for of in 0..out_f {
                                for ot in 0..out_t {
                                    let g = grad.at(bi, ci, of, ot) * share;
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for wf in 0..kf {
                                        for wt in 0..kt {
                                            *grad_in.at_mut(bi, ci, of * sf + wf, ot * st + wt) += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            grad_in
        }
        TapeNode::Residual { main, shortcut } => {
            let mut g_in = nodes_backward(main, weights, grad.clone());
            let g_side = match shortcut {
                None => grad,
                Some(proj) => node_backward(proj, weights, grad),
            };
            g_in.add_assign(&g_side);
            g_in
        }
        TapeNode::Dense { layers, entry_channels, growth } => {
            // Value 0 is the block input; value k>0 is layer k's output.
            let n = layers.len();
            let [b, _, f, t] = grad.dims();
            let mut grads: Vec<Tensor4> = Vec::with_capacity(n + 1);
            grads.push(Tensor4::zeros([b, *entry_channels, f, t]));
            for _ in 0..n {
                grads.push(Tensor4::zeros([b, *growth, f, t]));
            }
            // The block output is the concat of layer outputs 1..=n.
            for k in 0..n {
                grads[k + 1].add_assign(&grad.channel_slice(k * growth, *growth));
            }
            // Layer k consumed concat(input, out_1 .. out_{k-1}).
            for k in (0..n).rev() {
                let g_out = grads[k + 1].clone();
                let g_in = node_backward(&layers[k], weights, g_out);
                grads[0].add_assign(&g_in.channel_slice(0, *entry_channels));
                for j in 0..k {
                    grads[j + 1].add_assign(&g_in.channel_slice(entry_channels + j * growth, *growth));
                }
            }
            grads.swap_remove(0)
        }
    }
}

fn nodes_backward(nodes: &[TapeNode], weights: &NetWeights, mut grad: Tensor4) -> Tensor4 {
    for node in nodes.iter().rev() {
        grad = node_backward(node, weights, grad);
    }
    grad
}

/// Seeds a unit gradient at one spatial pixel of the recorded output map
/// (on all output channels, or a single one) and accumulates it back to the
/// network input. Reduction order is fixed, so results are bit-stable.
pub fn backward_from_pixel(
    tape: &Tape,
    location: (usize, usize),
    mode: ChannelMode,
) -> Result<Tensor4, ErfError> {
    let [b, c, f, t] = tape.output_dims;
    if location.0 >= f || location.1 >= t {
        return Err(ErfError::LocationOutOfRange { location, dims: (f, t) });
    }
    let mut seed = Tensor4::zeros([b, c, f, t]);
    match mode {
        ChannelMode::All => {
            for bi in 0..b {
                for ci in 0..c {
                    *seed.at_mut(bi, ci, location.0, location.1) = 1.0;
                }
            }
        }
        ChannelMode::Single(ci) => {
            if ci >= c {
                return Err(ErfError::ChannelOutOfRange { channel: ci, channels: c });
            }
            for bi in 0..b {
                *seed.at_mut(bi, ci, location.0, location.1) = 1.0;
            }
        }
    }
    Ok(nodes_backward(&tape.nodes, &tape.weights, seed))
}
