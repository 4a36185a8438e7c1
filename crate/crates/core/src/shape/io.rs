//! `FMSM` model container and Wavefront OBJ export.
//!
//! Layout after the magic and version: u32 V, K_s, K_e, T; then as
//! length-prefixed arrays mean (3V f64), U_s (3V*K_s f64, row-major),
//! eig_s, U_e, eig_e, triangles (3T u32), uv (2V f64), landmarks (u32).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::binary::{Reader, Writer};

use super::PcaShapeModel;

const MAGIC: &[u8; 4] = b"FMSM";
const VERSION: u32 = 1;

pub fn save_shape_model(model: &PcaShapeModel, path: &Path) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(model.n_vertices() as u32);
    w.u32(model.n_id() as u32);
    w.u32(model.n_expr() as u32);
    w.u32(model.mesh.n_triangles() as u32);
    w.f64s(&model.mean);
    w.f64s(&model.id_basis);
    w.f64s(&model.id_eig);
    w.f64s(&model.expr_basis);
    w.f64s(&model.expr_eig);
    let tri: Vec<u32> = model.mesh.triangles.iter().flatten().map(|&i| i as u32).collect();
    w.u32s(tri.into_iter());
    let uv: Vec<f64> = model.mesh.uv.iter().flatten().copied().collect();
    w.f64s(&uv);
    w.u32s(model.landmarks.iter().map(|&i| i as u32));
    w.finish(path)
}

pub fn load_shape_model(path: &Path) -> Result<PcaShapeModel> {
    let (mut r, version) = Reader::open(path, "shape model", MAGIC)?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let v = r.u32()? as usize;
    let ks = r.u32()? as usize;
    let ke = r.u32()? as usize;
    let t = r.u32()? as usize;
    let mean = r.f64s_exact(3 * v, "mean")?;
    let id_basis = r.f64s_exact(3 * v * ks, "identity basis")?;
    let id_eig = r.f64s_exact(ks, "identity eigenvalues")?;
    let expr_basis = r.f64s_exact(3 * v * ke, "expression basis")?;
    let expr_eig = r.f64s_exact(ke, "expression eigenvalues")?;
    let tri = r.u32s()?;
    if tri.len() != 3 * t {
        return Err(r.fail(format!("expected {t} triangles")));
    }
    let uv = r.f64s_exact(2 * v, "uv")?;
    let landmarks = r.u32s()?;
    r.finish()?;
    let model = PcaShapeModel::new(
        mean,
        id_basis,
        id_eig,
        expr_basis,
        expr_eig,
        tri.chunks_exact(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect(),
        uv.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        landmarks.into_iter().map(|i| i as usize).collect(),
    );
    model.map_err(|e| Error::format("shape model", path, e.to_string()))
}

/// Writes `v`, `vt`, `vn` and `f` records. Texture rows run top to bottom in
/// this crate, so `vt` stores `1 - v` as OBJ expects.
pub fn write_obj(
    path: &Path,
    positions: &[f64],
    normals: &[f64],
    uv: &[[f64; 2]],
    triangles: &[[usize; 3]],
) -> Result<()> {
    assert_eq!(positions.len(), normals.len(), "contract violation: normal count");
    assert_eq!(positions.len(), uv.len() * 3, "contract violation: uv count");
    let mut s = String::new();
    for p in positions.chunks_exact(3) {
        writeln!(s, "v {} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for t in uv {
        writeln!(s, "vt {} {}", t[0], 1.0 - t[1]).unwrap();
    }
    for n in normals.chunks_exact(3) {
        writeln!(s, "vn {} {} {}", n[0], n[1], n[2]).unwrap();
    }
    for t in triangles {
        let [a, b, c] = t.map(|i| i + 1);
        writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
