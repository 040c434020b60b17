//! The shipped .arch files must stay byte-identical to the canonical
//! serialization of their builders.

use rfscope::ir::serialize_network;
use rfscope::presets::{build_dn1, build_rn1, build_rn2, build_rn3, build_rn_base};
use rfscope::NetworkSpec;
use std::fs;
use std::path::PathBuf;

fn preset_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.arch"))
}

fn check(name: &str, net: NetworkSpec) {
    let path = preset_path(name);
    let on_disk = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    assert_eq!(on_disk, serialize_network(&net), "{name}.arch is out of date");
}

#[test]
fn preset_files_match_their_builders() {
    check("rn1", build_rn1());
    check("rn2", build_rn2());
    check("rn3", build_rn3());
    check("rn_base", build_rn_base());
    check("dn1", build_dn1(128));
}
