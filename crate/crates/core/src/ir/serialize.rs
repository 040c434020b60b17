//! Canonical serializer for the architecture description format.
//!
//! The output is bit-exact canonical: lowercase keywords, one space between
//! tokens, defaults omitted, no indentation, LF line endings and a trailing
//! newline. `parse_network(serialize_network(net))` is structurally equal to
//! `net` for every valid network.

use super::{Activation, LayerSpec, NetworkSpec, PoolKind, Shortcut};
use std::fmt::Write;

pub fn serialize_network(net: &NetworkSpec) -> String {
    let mut out = String::new();
    writeln!(out, "network {} in_channels={}", net.name, net.input_channels).unwrap();
    for layer in &net.layers {
        match layer {
            LayerSpec::Conv(c) => {
                write!(out, "conv k={} s={}", c.kernel, c.stride).unwrap();
                if c.dilation != crate::axis::Axis2::ONE {
                    write!(out, " d={}", c.dilation).unwrap();
                }
                write!(out, " c={}", c.out_channels).unwrap();
                if !c.has_batchnorm {
                    out.push_str(" bn=off");
                }
                if c.has_bias {
                    out.push_str(" bias");
                }
                if c.activation == Activation::Linear {
                    out.push_str(" act=linear");
                }
                out.push('\n');
            }
            LayerSpec::Pool(p) => {
                let kind = match p.kind {
                    PoolKind::Max => "max",
                    PoolKind::Average => "avg",
                };
                writeln!(out, "pool {kind} k={} s={}", p.kernel, p.stride).unwrap();
            }
            LayerSpec::ResidualBlockStart { shortcut } => match shortcut {
                Shortcut::Identity => out.push_str("resblock {\n"),
                Shortcut::Projection { kernel, stride } => {
                    writeln!(out, "resblock proj k={kernel} s={stride} {{").unwrap();
                }
            },
            LayerSpec::DenseBlockStart { growth_rate } => {
                writeln!(out, "denseblock growth={growth_rate} {{").unwrap();
            }
            LayerSpec::ResidualBlockEnd | LayerSpec::DenseBlockEnd => out.push_str("}\n"),
            LayerSpec::GlobalAveragePool => out.push_str("gap\n"),
            LayerSpec::Classifier { classes } => {
                writeln!(out, "classifier classes={classes}").unwrap();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_network;
    use super::*;
    use crate::axis::Axis2;
    use crate::ir::ConvSpec;

    #[test]
    fn one_conv_network_is_one_canonical_line() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![LayerSpec::Conv(ConvSpec {
                kernel: Axis2::splat(3),
                stride: Axis2::ONE,
                dilation: Axis2::ONE,
                in_channels: 1,
                out_channels: 4,
                has_batchnorm: true,
                has_bias: false,
                activation: Activation::Relu,
            })],
        };
        assert_eq!(
            serialize_network(&net),
            "network t in_channels=1\nconv k=3x3 s=1x1 c=4\n"
        );
    }

    #[test]
    fn non_defaults_are_written() {
        let net = NetworkSpec {
            name: "t".into(),
            input_channels: 1,
            layers: vec![LayerSpec::Conv(ConvSpec {
                kernel: Axis2::splat(3),
                stride: Axis2::new(2, 1),
                dilation: Axis2::splat(2),
                in_channels: 1,
                out_channels: 4,
                has_batchnorm: false,
                has_bias: true,
                activation: Activation::Linear,
            })],
        };
        assert_eq!(
            serialize_network(&net),
            "network t in_channels=1\nconv k=3x3 s=2x1 d=2x2 c=4 bn=off bias act=linear\n"
        );
    }

    #[test]
    fn dense_block_round_trips_with_markers() {
        let text = "network t in_channels=4\ndenseblock growth=2 {\nconv k=3x3 s=1x1 c=2\n}\n";
        let net = parse_network(text).unwrap();
        let printed = serialize_network(&net);
        assert!(printed.contains("denseblock growth=2 {\n"));
        assert!(printed.contains("}\n"));
        assert_eq!(parse_network(&printed).unwrap(), net);
    }
}
