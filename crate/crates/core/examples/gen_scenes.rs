//! Regenerate the mesh assets under `scenes/meshes/`.
//!
//! Run from the workspace root: `cargo run -p coarsim --example gen_scenes`.

use std::fmt::Write as _;
use std::path::PathBuf;

#[allow(unused_imports)]
use coarsim::math::Vec3;
use coarsim::mesh::{gen, Element};

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes/meshes");
    std::fs::create_dir_all(&root).expect("create scenes/meshes");

    // Tet cube, 7x7x7 vertices, edge 0.15 m.
    let (positions, elements) = gen::tet_grid(7, 7, 7, 0.025);
    let mut text = String::new();
    for p in &positions {
        writeln!(text, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    for e in &elements {
        if let Element::Tetrahedron([a, b, c, d]) = e {
            writeln!(text, "t {a} {b} {c} {d}").unwrap();
        }
    }
    std::fs::write(root.join("cube_7.tet"), &text).unwrap();
    println!(
        "cube_7.tet: {} vertices, {} tets",
        positions.len(),
        elements.len()
    );

    // Cloth, 16x16 vertices, 1.5 m square in the x-z plane.
    let (positions, elements) = gen::cloth_grid(16, 16, 0.1);
    let mut text = String::new();
    for p in &positions {
        writeln!(text, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    for e in &elements {
        if let Element::Triangle([a, b, c]) = e {
            writeln!(text, "f {} {} {}", a + 1, b + 1, c + 1).unwrap();
        }
    }
    std::fs::write(root.join("cloth_16.obj"), &text).unwrap();
    println!(
        "cloth_16.obj: {} vertices, {} triangles",
        positions.len(),
        elements.len()
    );

    // Rod, 48 vertices along x with a slight spatial zig-zag. The offsets keep
    // the rest positions non-coplanar so large affine aggregates stay full
    // rank.
    let n = 48;
    let positions: Vec<_> = (0..n)
        .map(|i| {
            let x = i as f64 * 0.025;
            let y = 0.004 * ((i % 3) as f64 - 1.0);
            let z = 0.004 * ((i % 2) as f64 - 0.5);
            coarsim::math::Vec3::new(x, y, z)
        })
        .collect();
    let mut text = String::new();
    for p in &positions {
        writeln!(text, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    let mut record = String::from("l");
    for i in 1..=positions.len() {
        write!(record, " {i}").unwrap();
    }
    writeln!(text, "{record}").unwrap();
    std::fs::write(root.join("rod_48.obj"), &text).unwrap();
    println!("rod_48.obj: {} vertices, {} edges", positions.len(), n - 1);
}
