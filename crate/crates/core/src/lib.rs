//! Static receptive-field analysis for convolutional networks over
//! spectrogram inputs, plus the rewrites and measurements built on it.
//!
//! The crate is organized as a small pipeline:
//!
//! * [`ir`] — the architecture description: types, a line-oriented text
//!   format with a canonical serializer, validation and parameter counts.
//! * [`rf`] — the per-axis receptive-field recurrence: folds kernels,
//!   strides and dilations into cumulative stride and RF, traces networks
//!   layer by layer, and profiles dense blocks per provenance path.
//! * [`transforms`] — rewrite passes that retarget the RF: tail
//!   truncation, tail-first 1x1 filter conversion, pooling edits, a
//!   minimal-change target solver and sweep generators.
//! * [`presets`] — builders for the reference architectures (`rn1`,
//!   `rn2`, `rn3`, `rn_base`, `dn1`) and the 135x135 adaptation target.
//! * [`erf`] — a deterministic forward/backward engine that estimates
//!   effective receptive fields empirically and cross-checks the static
//!   analysis.
//!
//! Batch ERF estimation and sweep generation use rayon when the default
//! `parallel` feature is enabled; disabling it leaves a dependency-free
//! sequential build with bit-identical results.

pub mod axis;
pub mod erf;
pub mod ir;
pub mod presets;
pub mod rf;
pub mod testgen;
pub mod transforms;

pub use axis::Axis2;
pub use ir::{
    count_params, parse_network, serialize_network, validate_network, Diagnostic, LayerSpec,
    NetworkSpec, ParamCount, ParseError,
};
pub use rf::{
    context_of_rf, dense_rf_profile, network_rf, network_rf_state, rf_step, rf_trace,
    AnalysisError, RfState, RfTrace, SpectrogramContext,
};
