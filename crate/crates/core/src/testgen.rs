//! Deterministic generation of random valid networks.
//!
//! Property tests and sweep experiments need a stream of structurally
//! varied architectures that always validate. Generation is seeded, so a
//! failing case can be reproduced from its seed alone. Spatial dimensions
//! are tracked while generating (convs use same-padding arithmetic, pools
//! are unpadded), so pools are only placed where the engine can run them.

use crate::axis::Axis2;
use crate::ir::{Activation, ConvSpec, LayerSpec, NetworkSpec, PoolKind, PoolSpec, Shortcut};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct NetGenConfig {
    /// Budget of conv/pool layers, counting the ones inside blocks.
    pub max_units: usize,
    pub max_channels: u32,
    pub max_kernel: u32,
    pub allow_pools: bool,
    pub allow_residual: bool,
    pub allow_dense: bool,
    pub allow_stride2: bool,
    pub allow_dilation: bool,
    /// Append global average pooling and a classifier.
    pub attach_head: bool,
    /// Spatial extent the network will be evaluated on; pools are only
    /// generated while both axes can still afford one.
    pub input_spatial: (usize, usize),
}

impl Default for NetGenConfig {
    fn default() -> Self {
        NetGenConfig {
            max_units: 8,
            max_channels: 4,
            max_kernel: 5,
            allow_pools: true,
            allow_residual: true,
            allow_dense: true,
            allow_stride2: true,
            allow_dilation: true,
            attach_head: false,
            input_spatial: (64, 64),
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick(&mut self, n: u32) -> u32 {
        self.rng.next_u32() % n
    }

    fn chance(&mut self, percent: u32) -> bool {
        self.pick(100) < percent
    }
}

/// Generates one random valid network from a seed. The same seed and
/// config always produce the same network.
pub fn random_network(seed: u64, cfg: &NetGenConfig) -> NetworkSpec {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed) };
    let input_channels = 1 + g.pick(3);
    let mut layers = Vec::new();
    let mut channels = input_channels;
    let mut spatial = cfg.input_spatial;
    let mut units = 0usize;
    let budget = 1 + g.pick(cfg.max_units as u32) as usize;

    let mut conv_spec = |g: &mut Gen, in_c: u32, out_c: u32, stride2_ok: bool| -> ConvSpec {
        let kernel = Axis2::new(1 + g.pick(cfg.max_kernel), 1 + g.pick(cfg.max_kernel));
        let stride = if stride2_ok && cfg.allow_stride2 && g.chance(20) {
            Axis2::new(1 + g.pick(2), 1 + g.pick(2))
        } else {
            Axis2::ONE
        };
        let dilation = if cfg.allow_dilation && g.chance(20) {
            Axis2::new(1 + g.pick(2), 1 + g.pick(2))
        } else {
            Axis2::ONE
        };
        ConvSpec {
            kernel,
            stride,
            dilation,
            in_channels: in_c,
            out_channels: out_c,
            has_batchnorm: g.chance(70),
            has_bias: g.chance(30),
            activation: if g.chance(60) { Activation::Relu } else { Activation::Linear },
        }
    };

    while units < budget {
        let roll = g.pick(100);
        if roll < 45 || units + 1 == budget {
            // plain conv
            let out = 1 + g.pick(cfg.max_channels);
            let spec = conv_spec(&mut g, channels, out, true);
            spatial = (
                spatial.0.div_ceil(spec.stride.freq as usize),
                spatial.1.div_ceil(spec.stride.time as usize),
            );
            channels = out;
            layers.push(LayerSpec::Conv(spec));
            units += 1;
        } else if roll < 60 {
            if cfg.allow_pools && spatial.0 >= 2 && spatial.1 >= 2 {
                let kind = if g.chance(50) { PoolKind::Max } else { PoolKind::Average };
                layers.push(LayerSpec::Pool(PoolSpec {
                    kind,
                    kernel: Axis2::splat(2),
                    stride: Axis2::splat(2),
                }));
                spatial = ((spatial.0 - 2) / 2 + 1, (spatial.1 - 2) / 2 + 1);
                units += 1;
            }
        } else if roll < 85 {
            if cfg.allow_residual && units + 1 < budget {
                // 1-2 stride-1 convs; strided or channel-changing main
                // paths get a projection shortcut, others stay identity.
                let depth = 1 + g.pick(2) as usize;
                let depth = depth.min(budget - units);
                let identity = g.chance(60);
                let out = if identity { channels } else { 1 + g.pick(cfg.max_channels) };
                let mut body = Vec::new();
                let mut c = channels;
                for i in 0..depth {
                    let o = if i + 1 == depth { out } else { 1 + g.pick(cfg.max_channels) };
                    let mut spec = conv_spec(&mut g, c, o, false);
                    spec.stride = Axis2::ONE;
                    body.push(LayerSpec::Conv(spec));
                    c = o;
                }
                let shortcut = if identity && out == channels {
                    Shortcut::Identity
                } else {
                    let k = if g.chance(80) { 1 } else { 3 };
                    Shortcut::Projection { kernel: Axis2::splat(k), stride: Axis2::ONE }
                };
                layers.push(LayerSpec::ResidualBlockStart { shortcut });
                units += body.len();
                layers.extend(body);
                layers.push(LayerSpec::ResidualBlockEnd);
                channels = out;
            }
        } else if cfg.allow_dense && units + 1 < budget {
            let growth = 1 + g.pick(3);
            let depth = (1 + g.pick(3) as usize).min(budget - units);
            layers.push(LayerSpec::DenseBlockStart { growth_rate: growth });
            for k in 0..depth {
                let mut spec = conv_spec(&mut g, channels + k as u32 * growth, growth, false);
                spec.stride = Axis2::ONE;
                layers.push(LayerSpec::Conv(spec));
            }
            layers.push(LayerSpec::DenseBlockEnd);
            channels = depth as u32 * growth;
            units += depth;
        }
    }

    if cfg.attach_head {
        layers.push(LayerSpec::GlobalAveragePool);
        layers.push(LayerSpec::Classifier { classes: 1 + g.pick(10) });
    }

    NetworkSpec { name: format!("rand{seed}"), input_channels, layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate_network;

    #[test]
    fn generated_networks_validate() {
        let cfg = NetGenConfig { attach_head: true, ..NetGenConfig::default() };
        for seed in 0..200 {
            let net = random_network(seed, &cfg);
            let diags = validate_network(&net);
            assert!(diags.is_empty(), "seed {seed}: {diags:?}");
            assert!(net.layers.iter().any(|l| matches!(l, LayerSpec::Conv(_) | LayerSpec::Pool(_))));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = NetGenConfig::default();
        assert_eq!(random_network(42, &cfg), random_network(42, &cfg));
    }
}
