use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let header = cbindgen::generate(&crate_dir).expect("cbindgen failed");

    let include_dir = crate_dir.join("include");
    std::fs::create_dir_all(&include_dir).expect("create include dir");
    header.write_to_file(include_dir.join("coarsim.h"));

    // Mirror into OUT_DIR for build systems that consume it from there.
    let out_dir = PathBuf::from(env::var("OUT_DIR").unwrap());
    header.write_to_file(out_dir.join("coarsim.h"));
}
