//! Builders for the reference architectures used throughout the toolkit.
//!
//! The ResNet-family presets share one skeleton: a 5x5/stride-2 input conv,
//! residual blocks of two convs each with 2x2 max pools after selected
//! blocks, a channel plan of 128/256/512 by block position, then global
//! average pooling into a 10-class head. They differ only in kernel plans
//! and how many blocks carry 3x3 filters; all of them land on a 135x135
//! receptive field. `rn_base` is the all-3x3 variant the sweep experiments
//! start from.

use crate::axis::Axis2;
use crate::ir::{Activation, ConvSpec, LayerSpec, NetworkSpec, PoolKind, PoolSpec, Shortcut};
use std::collections::BTreeMap;

fn conv(kernel: Axis2, stride: Axis2, in_channels: u32, out_channels: u32) -> LayerSpec {
    LayerSpec::Conv(ConvSpec {
        kernel,
        stride,
        dilation: Axis2::ONE,
        in_channels,
        out_channels,
        has_batchnorm: true,
        has_bias: false,
        activation: Activation::Relu,
    })
}

fn max_pool_2x2() -> LayerSpec {
    LayerSpec::Pool(PoolSpec { kind: PoolKind::Max, kernel: Axis2::splat(2), stride: Axis2::splat(2) })
}

/// One residual block: `(first kernel, second kernel, output channels,
/// 2x2 max pool after the block)`.
type BlockPlan = (u32, u32, u32, bool);

fn resnet_from_plan(name: &str, plan: &[BlockPlan]) -> NetworkSpec {
    let mut layers = vec![conv(Axis2::splat(5), Axis2::splat(2), 1, 128)];
    let mut channels = 128;
    for &(k1, k2, out, pool) in plan {
        let shortcut = if channels == out {
            Shortcut::Identity
        } else {
            Shortcut::Projection { kernel: Axis2::ONE, stride: Axis2::ONE }
        };
        layers.push(LayerSpec::ResidualBlockStart { shortcut });
        layers.push(conv(Axis2::splat(k1), Axis2::ONE, channels, out));
        layers.push(conv(Axis2::splat(k2), Axis2::ONE, out, out));
        layers.push(LayerSpec::ResidualBlockEnd);
        if pool {
            layers.push(max_pool_2x2());
        }
        channels = out;
    }
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Classifier { classes: 10 });
    NetworkSpec { name: name.into(), input_channels: 1, layers }
}

/// Five residual blocks; the shallow variant of the family.
pub fn build_rn1() -> NetworkSpec {
    resnet_from_plan(
        "rn1",
        &[
            (3, 1, 128, true),
            (3, 3, 128, true),
            (3, 3, 128, false),
            (3, 3, 256, true),
            (3, 1, 512, false),
        ],
    )
}

/// Twelve residual blocks; keeps the depth but converts many filters to 1x1.
pub fn build_rn2() -> NetworkSpec {
    resnet_from_plan(
        "rn2",
        &[
            (3, 1, 128, true),
            (3, 1, 128, false),
            (3, 1, 128, false),
            (1, 1, 128, true),
            (3, 1, 256, false),
            (3, 1, 256, false),
            (3, 1, 256, false),
            (3, 1, 256, true),
            (3, 1, 512, false),
            (1, 1, 512, false),
            (1, 1, 512, false),
            (1, 1, 512, false),
        ],
    )
}

/// Like `rn1` but the tail is kept at full depth with 1x1 filters instead
/// of being deleted.
pub fn build_rn3() -> NetworkSpec {
    resnet_from_plan(
        "rn3",
        &[
            (3, 1, 128, true),
            (3, 3, 128, true),
            (3, 3, 128, false),
            (3, 3, 128, true),
            (3, 1, 256, false),
            (1, 1, 256, false),
            (1, 1, 256, false),
            (1, 1, 256, false),
            (1, 1, 512, false),
            (1, 1, 512, false),
            (1, 1, 512, false),
            (1, 1, 512, false),
        ],
    )
}

/// The `rn2` skeleton with every conv kernel at 3x3: twelve blocks, same
/// pooling positions and channel plan. Starting point for the sweeps.
pub fn build_rn_base() -> NetworkSpec {
    resnet_from_plan(
        "rn_base",
        &[
            (3, 3, 128, true),
            (3, 3, 128, false),
            (3, 3, 128, false),
            (3, 3, 128, true),
            (3, 3, 256, false),
            (3, 3, 256, false),
            (3, 3, 256, false),
            (3, 3, 256, true),
            (3, 3, 512, false),
            (3, 3, 512, false),
            (3, 3, 512, false),
            (3, 3, 512, false),
        ],
    )
}

/// Dense-block network whose deepest provenance path sees 135x135.
///
/// Layout: 5x5/stride-2 input conv into three dense blocks of 5, 3 and 5
/// convs, with a 1x1 transition conv and a 2x2 max pool between blocks.
/// The depth split (5/3/5 under stride doublings 2/4/8/16) is what pins the
/// deepest chain at exactly 135 per axis, for any growth rate.
pub fn build_dn1(growth: u32) -> NetworkSpec {
    let name = "dn1";
    let stem = (3 * growth / 4).max(1);
    let mut layers = vec![conv(Axis2::splat(5), Axis2::splat(2), 1, stem)];
    let mut channels = stem;
    for (i, depth) in [5u32, 3, 5].into_iter().enumerate() {
        layers.push(LayerSpec::DenseBlockStart { growth_rate: growth });
        for k in 0..depth {
            layers.push(conv(Axis2::splat(3), Axis2::ONE, channels + k * growth, growth));
        }
        layers.push(LayerSpec::DenseBlockEnd);
        channels = depth * growth;
        if i != 2 {
            layers.push(conv(Axis2::ONE, Axis2::ONE, channels, growth));
            layers.push(max_pool_2x2());
            channels = growth;
        }
    }
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Classifier { classes: 10 });
    NetworkSpec { name: name.into(), input_channels: 1, layers }
}

/// The receptive field of the VGG-style reference model that the presets
/// are adapted to match. The reference is represented by this constant
/// only; its layer stack is not part of the toolkit.
pub fn vgg_ref_rf() -> Axis2 {
    Axis2::splat(135)
}

/// A named preset: either a network builder or a bare RF target.
#[derive(Clone, Copy)]
pub enum Preset {
    Network(fn() -> NetworkSpec),
    RfTarget(Axis2),
}

/// Name-indexed registry of the shipped presets.
pub struct PresetCatalog {
    entries: BTreeMap<&'static str, Preset>,
}

fn dn1_default() -> NetworkSpec {
    build_dn1(128)
}

impl PresetCatalog {
    pub fn standard() -> Self {
        let mut entries: BTreeMap<&'static str, Preset> = BTreeMap::new();
        entries.insert("rn_base", Preset::Network(build_rn_base));
        entries.insert("rn1", Preset::Network(build_rn1));
        entries.insert("rn2", Preset::Network(build_rn2));
        entries.insert("rn3", Preset::Network(build_rn3));
        entries.insert("dn1", Preset::Network(dn1_default));
        entries.insert("vgg_ref_rf", Preset::RfTarget(vgg_ref_rf()));
        PresetCatalog { entries }
    }

    pub fn get(&self, name: &str) -> Option<Preset> {
        self.entries.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

impl Default for PresetCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{count_params, parse_network, serialize_network, validate_network};
    use crate::rf::{dense_rf_profile, network_rf, network_rf_state, rf_trace};

    fn residual_block_count(net: &NetworkSpec) -> usize {
        net.layers.iter().filter(|l| matches!(l, LayerSpec::ResidualBlockStart { .. })).count()
    }

    #[test]
    fn all_presets_validate_and_round_trip() {
        for build in [build_rn1, build_rn2, build_rn3, build_rn_base, dn1_default] {
            let net = build();
            assert!(validate_network(&net).is_empty(), "{} has diagnostics", net.name);
            let reparsed = parse_network(&serialize_network(&net)).unwrap();
            assert_eq!(reparsed, net, "{} does not round-trip", net.name);
        }
    }

    #[test]
    fn family_members_share_the_reference_rf() {
        for build in [build_rn1, build_rn2, build_rn3, dn1_default] {
            let net = build();
            assert_eq!(network_rf(&net).unwrap(), vgg_ref_rf(), "{}", net.name);
        }
    }

    #[test]
    fn block_counts() {
        assert_eq!(residual_block_count(&build_rn1()), 5);
        assert_eq!(residual_block_count(&build_rn2()), 12);
        assert_eq!(residual_block_count(&build_rn3()), 12);
        assert_eq!(residual_block_count(&build_rn_base()), 12);
    }

    #[test]
    fn rn1_trace_hits_known_milestones() {
        let trace = rf_trace(&build_rn1()).unwrap();
        // conv5x5s2, then 3x3/1x1 and the first pool: RF 11x11 at stride 4x4
        assert_eq!(trace.steps[0].state.rf, Axis2::splat(5));
        assert_eq!(trace.steps[3].description, "maxpool2x2s2");
        assert_eq!(trace.steps[3].state.rf, Axis2::splat(11));
        assert_eq!(trace.steps[3].state.cum_stride, Axis2::splat(4));
        assert_eq!(trace.final_state.rf, Axis2::splat(135));
        assert_eq!(trace.final_state, trace.steps.last().unwrap().state);
    }

    #[test]
    fn rn_base_is_all_3x3_with_rf_459() {
        let net = build_rn_base();
        for l in &net.layers {
            if let Some(c) = l.as_conv() {
                if c.kernel != Axis2::splat(5) {
                    assert_eq!(c.kernel, Axis2::splat(3));
                }
            }
        }
        let state = network_rf_state(&net).unwrap();
        assert_eq!(state.rf, Axis2::splat(459));
        assert_eq!(state.cum_stride, Axis2::splat(16));
    }

    #[test]
    fn parameter_totals() {
        assert_eq!(count_params(&build_rn1()).total, 3_258_772);
        assert_eq!(count_params(&build_rn2()).total, 6_053_780);
        assert_eq!(count_params(&dn1_default()).total, 5_268_020);
    }

    #[test]
    fn dn1_profile_is_growth_granular_and_peaks_at_135() {
        let net = dn1_default();
        let mut max_rf = Axis2::ONE;
        for (i, l) in net.layers.iter().enumerate() {
            if matches!(l, LayerSpec::DenseBlockStart { .. }) {
                let profile = dense_rf_profile(&net, i).unwrap();
                assert!(profile.entries.iter().all(|e| e.channels % 128 == 0));
                max_rf = max_rf.max(profile.entries.last().unwrap().rf);
            }
        }
        assert_eq!(max_rf, Axis2::splat(135));
    }

    #[test]
    fn dn1_is_parametric_in_growth() {
        for growth in [1, 4, 32, 128] {
            let net = build_dn1(growth);
            assert!(validate_network(&net).is_empty());
            assert_eq!(network_rf(&net).unwrap(), Axis2::splat(135), "growth {growth}");
        }
    }

    #[test]
    fn rn3_extends_rn1_kernel_plan_with_1x1_blocks() {
        // Same kernel and pooling plan on the first five blocks, then pure
        // 1x1 blocks (the channel ramp follows block position, so channel
        // counts are not compared here).
        fn kernel_plan(net: &NetworkSpec) -> Vec<(u32, u32, bool)> {
            let mut plan = Vec::new();
            let mut i = 0;
            while i < net.layers.len() {
                if matches!(net.layers[i], LayerSpec::ResidualBlockStart { .. }) {
                    let k1 = net.layers[i + 1].as_conv().unwrap().kernel.freq;
                    let k2 = net.layers[i + 2].as_conv().unwrap().kernel.freq;
                    let pooled = net.layers.get(i + 4).is_some_and(LayerSpec::is_pool);
                    plan.push((k1, k2, pooled));
                    i += 4;
                } else {
                    i += 1;
                }
            }
            plan
        }
        let rn1 = kernel_plan(&build_rn1());
        let rn3 = kernel_plan(&build_rn3());
        assert_eq!(&rn3[..5], &rn1[..]);
        assert!(rn3[5..].iter().all(|&(k1, k2, _)| k1 == 1 && k2 == 1));
    }

    #[test]
    fn catalog_contains_the_required_names() {
        let catalog = PresetCatalog::standard();
        for name in ["rn_base", "rn1", "rn2", "rn3", "dn1", "vgg_ref_rf"] {
            assert!(catalog.get(name).is_some(), "missing {name}");
        }
        assert!(matches!(catalog.get("vgg_ref_rf"), Some(Preset::RfTarget(rf)) if rf == Axis2::splat(135)));
    }
}
