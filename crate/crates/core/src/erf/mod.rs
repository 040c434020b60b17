//! Empirical effective-receptive-field estimation.
//!
//! A unit gradient is seeded at one output pixel of the last feature map
//! before global pooling, back-propagated to the input, and the absolute
//! input gradients are summed over channels, averaged over the batch and
//! normalized by their peak. Pixels the gradient never reaches lie outside
//! the unit's effective receptive field; the support box of the nonzero
//! region can never exceed the analytic RF, but shows how influence is
//! actually distributed inside it.
//!
//! Per-sample passes may run on separate threads (`parallel` feature), but
//! the batch average always reduces in sample order, so results are
//! bit-identical no matter how many workers run.

mod engine;
mod tensor;

pub use engine::{backward_from_pixel, forward, ExplicitWeights, Tape, WeightInit};
pub use tensor::Tensor4;

use crate::axis::Axis2;
use crate::ir::{Diagnostic, NetworkSpec};
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ErfError {
    #[error("invalid network: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<Diagnostic>),
    #[error("bad tensor: {0}")]
    BadTensor(String),
    #[error("input has {found} channels but the network expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("dimension underflow at layer {layer}: input {dims:?} is smaller than the pool window {kernel:?}")]
    DimUnderflow { layer: usize, dims: (usize, usize), kernel: (usize, usize) },
    #[error("residual branch shapes diverge at layer {layer}: main {main:?} vs shortcut {shortcut:?}")]
    ShapeMismatch { layer: usize, main: [usize; 4], shortcut: [usize; 4] },
    #[error("location {location:?} outside the output map {dims:?}")]
    LocationOutOfRange { location: (usize, usize), dims: (usize, usize) },
    #[error("channel {channel} outside the output channel count {channels}")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("explicit weights missing for layer {layer}")]
    MissingWeights { layer: usize },
    #[error("explicit weights for layer {layer} have {found} values, expected {expected}")]
    WeightLength { layer: usize, expected: usize, found: usize },
}

/// Which output channels receive the seeded gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    All,
    Single(usize),
}

/// Output pixel the gradient is seeded at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErfLocation {
    /// The center of the output map, `(freq/2, time/2)`.
    Center,
    At(usize, usize),
}

/// A dense `(freq, time)` grid of non-negative reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub freq: usize,
    pub time: usize,
    pub data: Vec<f64>,
}

impl Grid2 {
    pub fn zeros(freq: usize, time: usize) -> Self {
        Grid2 { freq, time, data: vec![0.0; freq * time] }
    }

    #[inline]
    pub fn at(&self, f: usize, t: usize) -> f64 {
        self.data[f * self.time + t]
    }

    #[inline]
    pub fn at_mut(&mut self, f: usize, t: usize) -> &mut f64 {
        &mut self.data[f * self.time + t]
    }
}

/// Entries above this fraction of the peak count as ERF support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// An estimated effective receptive field.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    /// Peak-normalized grid (all zeros when degenerate).
    pub grid: Grid2,
    /// Batch-averaged absolute input gradients before normalization.
    pub raw: Grid2,
    /// First row-major position of the peak.
    pub peak_location: (usize, usize),
    /// Extent of the support bounding box, per axis.
    pub support_box: Axis2,
    /// Set when the averaged gradient is identically zero (for example,
    /// every ReLU dead); the grid is left unnormalized in that case.
    pub degenerate: bool,
}

fn sample_grid(
    net: &NetworkSpec,
    weights: Arc<engine::NetWeights>,
    sample: &Tensor4,
    location: ErfLocation,
) -> Result<Grid2, ErfError> {
    let (_, tape) = engine::forward_with(net, weights, sample)?;
    let [_, _, out_f, out_t] = tape.output_dims();
    let loc = match location {
        ErfLocation::Center => (out_f / 2, out_t / 2),
        ErfLocation::At(f, t) => (f, t),
    };
    let grad = backward_from_pixel(&tape, loc, ChannelMode::All)?;
    let [_, c, f, t] = grad.dims();
    let mut grid = Grid2::zeros(f, t);
    for ci in 0..c {
        for fi in 0..f {
            for ti in 0..t {
                *grid.at_mut(fi, ti) += grad.at(0, ci, fi, ti).abs();
            }
        }
    }
    Ok(grid)
}

fn finish(grids: Vec<Grid2>) -> ErfMap {
    let batch = grids.len() as f64;
    let mut raw = Grid2::zeros(grids[0].freq, grids[0].time);
    for g in &grids {
        for (acc, v) in raw.data.iter_mut().zip(&g.data) {
            *acc += *v;
        }
    }
    for v in &mut raw.data {
        *v /= batch;
    }

    let mut peak = 0.0f64;
    let mut peak_location = (0usize, 0usize);
    for f in 0..raw.freq {
        for t in 0..raw.time {
            let v = raw.at(f, t);
            if v > peak {
                peak = v;
                peak_location = (f, t);
            }
        }
    }

    if peak == 0.0 {
        return ErfMap {
            grid: raw.clone(),
            raw,
            peak_location: (0, 0),
            support_box: Axis2::new(0, 0),
            degenerate: true,
        };
    }

    let mut grid = raw.clone();
    for v in &mut grid.data {
        *v /= peak;
    }

    let (mut f_min, mut f_max, mut t_min, mut t_max) = (usize::MAX, 0, usize::MAX, 0);
    for f in 0..grid.freq {
        for t in 0..grid.time {
            if grid.at(f, t) > SUPPORT_THRESHOLD {
                f_min = f_min.min(f);
                f_max = f_max.max(f);
                t_min = t_min.min(t);
                t_max = t_max.max(t);
            }
        }
    }
    let support_box = Axis2::new((f_max - f_min + 1) as u32, (t_max - t_min + 1) as u32);

    ErfMap { grid, raw, peak_location, support_box, degenerate: false }
}

fn erf_impl(
    net: &NetworkSpec,
    init: &WeightInit,
    inputs: &Tensor4,
    location: ErfLocation,
    parallel: bool,
) -> Result<ErfMap, ErfError> {
    let weights = Arc::new(engine::materialize_checked(net, init, inputs)?);
    let samples: Vec<Tensor4> = (0..inputs.batch()).map(|b| inputs.batch_slice(b)).collect();

    let run = |s: &Tensor4| sample_grid(net, Arc::clone(&weights), s, location);
    let grids: Vec<Result<Grid2, ErfError>>;
    #[cfg(feature = "parallel")]
    {
        grids = if parallel {
            samples.par_iter().map(run).collect()
        } else {
            samples.iter().map(run).collect()
        };
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = parallel;
        grids = samples.iter().map(run).collect();
    }

    let mut collected = Vec::with_capacity(grids.len());
    for g in grids {
        collected.push(g?);
    }
    Ok(finish(collected))
}

/// Estimates the ERF of `net` under the given weights, seeding the
/// gradient at `location` for every sample of `inputs`.
///
/// With the `parallel` feature, samples run on the rayon pool; the result
/// is bit-identical to [`estimate_erf_seq`].
pub fn estimate_erf(
    net: &NetworkSpec,
    init: &WeightInit,
    inputs: &Tensor4,
    location: ErfLocation,
) -> Result<ErfMap, ErfError> {
    erf_impl(net, init, inputs, location, true)
}

/// Sequential reference implementation of [`estimate_erf`].
pub fn estimate_erf_seq(
    net: &NetworkSpec,
    init: &WeightInit,
    inputs: &Tensor4,
    location: ErfLocation,
) -> Result<ErfMap, ErfError> {
    erf_impl(net, init, inputs, location, false)
}

/// Central-difference derivative of the seeded-output sum with respect to
/// one input pixel `(channel, freq, time)` of batch element 0, with step
/// `1e-5 * max(1, |x|)`. Independent of the reverse pass; exists to check it.
pub fn finite_diff_gradient(
    net: &NetworkSpec,
    init: &WeightInit,
    input: &Tensor4,
    location: (usize, usize),
    pixel: (usize, usize, usize),
) -> Result<f64, ErfError> {
    let (ch, f, t) = pixel;
    let x = input.at(0, ch, f, t);
    let h = 1e-5 * x.abs().max(1.0);

    let eval = |v: f64| -> Result<f64, ErfError> {
        let mut perturbed = input.clone();
        *perturbed.at_mut(0, ch, f, t) = v;
        let (out, _) = forward(net, init, &perturbed)?;
        let [b, c, out_f, out_t] = out.dims();
        if location.0 >= out_f || location.1 >= out_t {
            return Err(ErfError::LocationOutOfRange { location, dims: (out_f, out_t) });
        }
        let mut acc = 0.0;
        for bi in 0..b {
            for ci in 0..c {
                acc += out.at(bi, ci, location.0, location.1);
            }
        }
        Ok(acc)
    };

    let plus = eval(x + h)?;
    let minus = eval(x - h)?;
    Ok((plus - minus) / (2.0 * h))
}
