//! Parse an OBJ with quads and a negative index, normalize it to the
//! default extent, settle it on the ground and write it back.

use umbra::mesh::{parse_obj, prepare, write_obj, DEFAULT_TARGET_EXTENT};

const WEDGE: &str = "\
v 0 0 1
v 4 0 1
v 4 2 1
v 0 2 1
v 0 0 3
v 0 2 3
f 1 2 3 4
f 1 5 -1 4
f 1 2 5
f 4 3 6
f 2 3 6 5
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = parse_obj("wedge", WEDGE.as_bytes())?;
    println!(
        "parsed {} vertices, {} triangles ({} degenerate dropped)",
        parsed.mesh.vertices.len(),
        parsed.mesh.triangles.len(),
        parsed.degenerate_dropped
    );
    let mesh = prepare(parsed.mesh, DEFAULT_TARGET_EXTENT)?;
    let b = mesh.bounds();
    println!("bounds {:?} .. {:?}", b.min, b.max);
    print!("{}", write_obj(&mesh));
    Ok(())
}
