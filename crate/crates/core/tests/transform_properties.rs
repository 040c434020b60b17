//! Properties of the rewrite passes: validity preservation, sweep
//! monotonicity, pooling parameter invariance and solver tightness.

use rfscope::ir::{count_params, validate_network, LayerSpec, NetworkSpec};
use rfscope::presets::{build_dn1, build_rn1, build_rn2, build_rn3, build_rn_base};
use rfscope::rf::network_rf;
use rfscope::testgen::{random_network, NetGenConfig};
use rfscope::transforms::{
    convert_tail_filters, edit_pooling, solve_target_rf, sweep, truncate_tail, ConvertAxes,
    SolveStrategy, SweepStrategy, TransformError,
};
use rfscope::Axis2;

fn presets() -> Vec<NetworkSpec> {
    vec![build_rn1(), build_rn2(), build_rn3(), build_rn_base(), build_dn1(128)]
}

fn convertible(net: &NetworkSpec, axes: ConvertAxes) -> usize {
    net.layers
        .iter()
        .filter_map(|l| l.as_conv())
        .filter(|c| match axes {
            ConvertAxes::Both => c.kernel.freq > 1 || c.kernel.time > 1,
            ConvertAxes::Time => c.kernel.time > 1,
            ConvertAxes::Freq => c.kernel.freq > 1,
        })
        .count()
}

#[test]
fn transform_outputs_always_validate() {
    for net in presets() {
        for axes in [ConvertAxes::Both, ConvertAxes::Time, ConvertAxes::Freq] {
            let max = convertible(&net, axes);
            for count in [0, 1, max / 2, max] {
                let out = convert_tail_filters(&net, count, axes).unwrap();
                assert!(validate_network(&out).is_empty(), "{} count {count}", net.name);
            }
        }
        for strategy in [SweepStrategy::ConvertBoth, SweepStrategy::Pooling] {
            for point in sweep(&net, strategy).unwrap() {
                assert!(validate_network(&point.net).is_empty(), "{}", point.label);
            }
        }
    }
}

#[test]
fn convert_sweeps_are_monotone_on_controlled_axes() {
    let net = build_rn_base();
    for (strategy, freq_controlled, time_controlled) in [
        (SweepStrategy::ConvertBoth, true, true),
        (SweepStrategy::ConvertTime, false, true),
        (SweepStrategy::ConvertFreq, true, false),
    ] {
        let points = sweep(&net, strategy).unwrap();
        for pair in points.windows(2) {
            if freq_controlled {
                assert!(pair[1].rf.freq <= pair[0].rf.freq);
            } else {
                assert_eq!(pair[1].rf.freq, pair[0].rf.freq);
            }
            if time_controlled {
                assert!(pair[1].rf.time <= pair[0].rf.time);
            } else {
                assert_eq!(pair[1].rf.time, pair[0].rf.time);
            }
        }
    }
}

#[test]
fn sweep_points_carry_recomputed_rf_and_params() {
    let net = build_rn_base();
    for strategy in [SweepStrategy::ConvertBoth, SweepStrategy::Pooling] {
        for point in sweep(&net, strategy).unwrap() {
            assert_eq!(point.rf, network_rf(&point.net).unwrap(), "{}", point.label);
            assert_eq!(point.params, count_params(&point.net).total, "{}", point.label);
        }
    }
}

#[test]
fn pooling_edits_outside_blocks_preserve_params_exactly() {
    let net = build_rn_base();
    let before = count_params(&net).total;
    let block_ends: Vec<usize> = net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::ResidualBlockEnd))
        .map(|(i, _)| i)
        .collect();
    let pools: Vec<usize> = net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_pool())
        .map(|(i, _)| i)
        .collect();
    for &e in &block_ends {
        let edited = edit_pooling(&net, &[e], &[]).unwrap();
        assert_eq!(count_params(&edited).total, before);
    }
    for &p in &pools {
        let edited = edit_pooling(&net, &[], &[p]).unwrap();
        assert_eq!(count_params(&edited).total, before);
    }
    let edited = edit_pooling(&net, &block_ends, &pools).unwrap();
    assert_eq!(count_params(&edited).total, before);
}

#[test]
fn converting_all_then_none_is_idempotent() {
    for net in presets() {
        let max = convertible(&net, ConvertAxes::Both);
        let once = convert_tail_filters(&net, max, ConvertAxes::Both).unwrap();
        assert_eq!(convertible(&once, ConvertAxes::Both), 0);
        let twice = convert_tail_filters(&once, 0, ConvertAxes::Both).unwrap();
        assert_eq!(once, twice);
    }
}

/// The solver must pick the smallest edit: its result satisfies the target
/// on the controlled axes and converting one conv fewer does not.
fn assert_convert_tightness(net: &NetworkSpec, target: Axis2, strategy: SolveStrategy, axes: ConvertAxes) {
    let solved = solve_target_rf(net, target, strategy).unwrap();
    let rf = network_rf(&solved).unwrap();
    let fits = |rf: Axis2| match axes {
        ConvertAxes::Both => rf.fits_within(target),
        ConvertAxes::Time => rf.time <= target.time,
        ConvertAxes::Freq => rf.freq <= target.freq,
    };
    assert!(fits(rf), "{}: solved rf {rf} vs target {target}", net.name);
    let used: usize = net
        .layers
        .iter()
        .zip(&solved.layers)
        .filter(|(a, b)| a != b)
        .count();
    if used > 0 {
        let looser = convert_tail_filters(net, used - 1, axes).unwrap();
        let rf = network_rf(&looser).unwrap();
        assert!(!fits(rf), "{}: undoing one conversion still fits ({rf})", net.name);
    }
}

#[test]
fn solver_is_tight_on_presets() {
    let target = Axis2::splat(135);
    for net in [build_rn_base(), build_rn3()] {
        assert_convert_tightness(&net, target, SolveStrategy::ConvertBoth, ConvertAxes::Both);
        let rf = network_rf(&net).unwrap();
        assert_convert_tightness(
            &net,
            Axis2::new(rf.freq, 135),
            SolveStrategy::ConvertTime,
            ConvertAxes::Time,
        );
        assert_convert_tightness(
            &net,
            Axis2::new(135, rf.time),
            SolveStrategy::ConvertFreq,
            ConvertAxes::Freq,
        );
    }
}

#[test]
fn solver_is_tight_on_random_networks() {
    let cfg = NetGenConfig { max_units: 10, ..NetGenConfig::default() };
    let mut tested = 0;
    let mut seed = 1000u64;
    while tested < 100 {
        let net = random_network(seed, &cfg);
        seed += 1;
        let max = convertible(&net, ConvertAxes::Both);
        if max == 0 {
            continue;
        }
        // A target that is achievable by construction: the RF after
        // converting a prefix of the tail.
        let k = (seed as usize * 7919) % (max + 1);
        let target = network_rf(&convert_tail_filters(&net, k, ConvertAxes::Both).unwrap()).unwrap();
        assert_convert_tightness(&net, target, SolveStrategy::ConvertBoth, ConvertAxes::Both);
        tested += 1;
    }
}

#[test]
fn truncate_is_tight_on_the_all_3x3_network() {
    let net = build_rn_base();
    let target = Axis2::splat(135);
    let truncated = truncate_tail(&net, target).unwrap();
    let rf = network_rf(&truncated).unwrap();
    assert!(rf.fits_within(target));
    assert!(validate_network(&truncated).is_empty());
    // Re-adding the last removed block must exceed the target: rebuild the
    // prefix of the original with one more block than the truncation kept.
    let kept_blocks = truncated
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::ResidualBlockStart { .. }))
        .count();
    let mut depth = 0usize;
    let mut blocks_seen = 0usize;
    let mut cut = None;
    for (i, l) in net.layers.iter().enumerate() {
        match l {
            LayerSpec::ResidualBlockStart { .. } => depth += 1,
            LayerSpec::ResidualBlockEnd => {
                depth -= 1;
                blocks_seen += 1;
                if blocks_seen == kept_blocks + 1 {
                    cut = Some(i + 1);
                    break;
                }
            }
            _ => {}
        }
    }
    let cut = cut.expect("the original has one more block than the truncation");
    let longer = NetworkSpec {
        name: net.name.clone(),
        input_channels: net.input_channels,
        layers: net.layers[..cut].to_vec(),
    };
    let rf_longer = network_rf(&longer).unwrap();
    assert!(!rf_longer.fits_within(target), "re-adding a block should exceed {target}, got {rf_longer}");
}

#[test]
fn truncate_keeps_the_head() {
    let net = build_rn_base();
    let truncated = truncate_tail(&net, Axis2::splat(135)).unwrap();
    assert!(truncated.layers.iter().any(|l| matches!(l, LayerSpec::GlobalAveragePool)));
    assert!(matches!(truncated.layers.last(), Some(LayerSpec::Classifier { .. })));
}

#[test]
fn unreachable_targets_error() {
    let net = build_rn_base();
    assert!(matches!(
        truncate_tail(&net, Axis2::ONE),
        Err(TransformError::TargetUnreachable { .. })
    ));
    assert!(matches!(
        solve_target_rf(&net, Axis2::splat(3), SolveStrategy::ConvertBoth),
        Err(TransformError::TargetUnreachable { .. })
    ));
}
