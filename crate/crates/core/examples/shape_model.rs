//! Builds the procedural PCA head, walks the first identity and expression
//! directions and writes the meshes as OBJ.
//!
//! `cargo run --example shape_model -- [out_dir]`

use std::path::PathBuf;

use facefit::shape::synthetic::{synthetic_shape_model, SyntheticShapeConfig};
use facefit::shape::{self, ShapeCoeffs};
use facefit::Tape;

fn main() -> facefit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("facefit-shape"));
    std::fs::create_dir_all(&out).map_err(|e| facefit::Error::Io { path: out.clone(), msg: e.to_string() })?;

    let model = synthetic_shape_model(&SyntheticShapeConfig::default())?;
    println!(
        "{} vertices, {} triangles, {} identity and {} expression components",
        model.n_vertices(),
        model.mesh.n_triangles(),
        model.n_id(),
        model.n_expr()
    );

    let sd_id = model.id_eig[0].sqrt();
    let sd_ex = model.expr_eig[0].sqrt();
    for (name, a, b) in [("mean", 0.0, 0.0), ("id0_plus", 2.0, 0.0), ("id0_minus", -2.0, 0.0), ("expr0", 0.0, 2.0)] {
        let mut c = ShapeCoeffs::zeros(&model);
        c.p_s[0] = a * sd_id;
        c.p_e[0] = b * sd_ex;
        let s = model.reconstruct(&c)?;
        let tape = Tape::new();
        let (normals, _) = shape::vertex_normals(tape.constant(&s), &model.mesh)?;
        let path = out.join(format!("{name}.obj"));
        shape::write_obj(&path, s.data(), &normals.data(), &model.mesh.uv, &model.mesh.triangles)?;

        let lm = model.landmarks[30];
        let p = &s.data()[3 * lm..3 * lm + 3];
        println!("{name:>10}: landmark 30 at ({:+.3}, {:+.3}, {:+.3}) -> {}", p[0], p[1], p[2], path.display());
    }
    Ok(())
}
