//! Linear morphable shape model: mean plus identity and expression bases,
//! mesh normals, landmark projection and Mahalanobis regularizers.

mod io;
pub mod synthetic;

use std::rc::Rc;

pub use io::{load_shape_model, save_shape_model, write_obj};

use crate::error::{Error, Result, Warning};
use crate::render::{self, Camera, CameraVars};
use crate::tensor::{SparseRows, Tape, Tensor, Var};

pub const N_LANDMARKS: usize = 68;

/// Tolerance on the unit-norm convention for basis columns.
const BASIS_NORM_TOL: f64 = 1e-6;

/// Triangle topology with the sparse operators that normals and
/// interpolation need, built once per mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub triangles: Vec<[usize; 3]>,
    pub uv: Vec<[f64; 2]>,
    n_vertices: usize,
    corners: [Rc<SparseRows>; 3],
    face_to_vertex: Rc<SparseRows>,
    one_ring: Rc<SparseRows>,
    isolated: Vec<usize>,
}

impl Mesh {
    pub fn new(n_vertices: usize, triangles: Vec<[usize; 3]>, uv: Vec<[f64; 2]>) -> Result<Self> {
        if uv.len() != n_vertices {
            return Err(Error::contract(
                "mesh",
                format!("{} uv coordinates for {n_vertices} vertices", uv.len()),
            ));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n_vertices)) {
            return Err(Error::contract("mesh", format!("triangle {t:?} indexes past {n_vertices} vertices")));
        }
        if uv.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::contract("mesh", "uv coordinates outside [0, 1]"));
        }

        let corners = [0, 1, 2].map(|k| {
            let rows: Vec<usize> = triangles.iter().map(|t| t[k]).collect();
            Rc::new(SparseRows::gather(&rows, n_vertices))
        });

        let mut faces_of = vec![Vec::new(); n_vertices];
        let mut ring: Vec<Vec<usize>> = (0..n_vertices).map(|v| vec![v]).collect();
        for (f, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                faces_of[t[k]].push(f);
                for j in 1..3 {
                    let other = t[(k + j) % 3];
                    if !ring[t[k]].contains(&other) {
                        ring[t[k]].push(other);
                    }
                }
            }
        }
        let mut face_to_vertex = SparseRows::new(triangles.len());
        let mut one_ring = SparseRows::new(n_vertices);
        let mut isolated = Vec::new();
        for v in 0..n_vertices {
            if faces_of[v].is_empty() {
                isolated.push(v);
            }
            face_to_vertex.push_row(faces_of[v].iter().map(|&f| (f, 1.0)));
            ring[v].sort_unstable();
            let w = 1.0 / ring[v].len() as f64;
            one_ring.push_row(ring[v].iter().map(|&u| (u, w)));
        }

        Ok(Mesh {
            triangles,
            uv,
            n_vertices,
            corners,
            face_to_vertex: Rc::new(face_to_vertex),
            one_ring: Rc::new(one_ring),
            isolated,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn isolated_vertices(&self) -> &[usize] {
        &self.isolated
    }
}

#[derive(Debug, Clone)]
pub struct PcaShapeModel {
    /// `V x 3` mean positions, row-major.
    pub mean: Rc<Vec<f64>>,
    /// `(3V) x K_s`, row-major; unit-norm columns.
    pub id_basis: Rc<Vec<f64>>,
    pub id_eig: Vec<f64>,
    /// `(3V) x K_e`, row-major; unit-norm columns.
    pub expr_basis: Rc<Vec<f64>>,
    pub expr_eig: Vec<f64>,
    pub mesh: Mesh,
    pub landmarks: Vec<usize>,
}

impl PcaShapeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mean: Vec<f64>,
        id_basis: Vec<f64>,
        id_eig: Vec<f64>,
        expr_basis: Vec<f64>,
        expr_eig: Vec<f64>,
        triangles: Vec<[usize; 3]>,
        uv: Vec<[f64; 2]>,
        landmarks: Vec<usize>,
    ) -> Result<Self> {
        if !mean.len().is_multiple_of(3) || mean.is_empty() {
            return Err(Error::contract("shape model", "mean must hold V x 3 positions"));
        }
        let n = mean.len();
        let v = n / 3;
        for (name, basis, eig) in [("identity", &id_basis, &id_eig), ("expression", &expr_basis, &expr_eig)] {
            if basis.len() != n * eig.len() {
                return Err(Error::contract(
                    "shape model",
                    format!("{name} basis has {} values, expected {}", basis.len(), n * eig.len()),
                ));
            }
            validate_eigenvalues(name, eig)?;
            for k in 0..eig.len() {
                let norm = (0..n).map(|r| basis[r * eig.len() + k].powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > BASIS_NORM_TOL {
                    return Err(Error::contract(
                        "shape model",
                        format!("{name} basis column {k} has norm {norm}"),
                    ));
                }
            }
        }
        if landmarks.len() != N_LANDMARKS {
            return Err(Error::contract(
                "shape model",
                format!("{} landmark indices, expected {N_LANDMARKS}", landmarks.len()),
            ));
        }
        if let Some(&l) = landmarks.iter().find(|&&l| l >= v) {
            return Err(Error::contract("shape model", format!("landmark index {l} >= {v}")));
        }
        let mesh = Mesh::new(v, triangles, uv)?;
        Ok(PcaShapeModel {
            mean: Rc::new(mean),
            id_basis: Rc::new(id_basis),
            id_eig,
            expr_basis: Rc::new(expr_basis),
            expr_eig,
            mesh,
            landmarks,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn n_id(&self) -> usize {
        self.id_eig.len()
    }

    pub fn n_expr(&self) -> usize {
        self.expr_eig.len()
    }

    /// Plain-value evaluation of [`reconstruct_shape`].
    pub fn reconstruct(&self, c: &ShapeCoeffs) -> Result<Tensor> {
        let tape = Tape::new();
        let ps = tape.constant(&Tensor::vector(c.p_s.clone()));
        let pe = tape.constant(&Tensor::vector(c.p_e.clone()));
        Ok(reconstruct_shape(self, ps, pe)?.value())
    }
}

fn validate_eigenvalues(name: &str, eig: &[f64]) -> Result<()> {
    if let Some(e) = eig.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::contract("shape model", format!("{name} eigenvalue {e} is not positive")));
    }
    if eig.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::contract("shape model", format!("{name} eigenvalues are not non-increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoeffs {
    pub p_s: Vec<f64>,
    pub p_e: Vec<f64>,
}

impl ShapeCoeffs {
    pub fn zeros(model: &PcaShapeModel) -> Self {
        ShapeCoeffs {
            p_s: vec![0.0; model.n_id()],
            p_e: vec![0.0; model.n_expr()],
        }
    }
}

/// `S = m + U_s p_s + U_e p_e` as a `[V x 3]` tape value.
pub fn reconstruct_shape<'t>(model: &PcaShapeModel, p_s: Var<'t>, p_e: Var<'t>) -> Result<Var<'t>> {
    let tape = p_s.tape();
    let v = model.n_vertices();
    for (name, p, k) in [("p_s", p_s, model.n_id()), ("p_e", p_e, model.n_expr())] {
        if p.numel() != k {
            return Err(Error::contract(
                "reconstruct_shape",
                format!("{name} has {} coefficients, basis has {k}", p.numel()),
            ));
        }
    }
    let mut s = tape.constant_shared(&[v, 3], model.mean.clone());
    for (basis, p) in [(&model.id_basis, p_s), (&model.expr_basis, p_e)] {
        let k = p.numel();
        if k == 0 {
            continue;
        }
        let u = tape.constant_shared(&[3 * v, k], basis.clone());
        s = s + Var::matvec(u, p.reshape(&[k])).reshape(&[v, 3]);
    }
    Ok(s)
}

/// Area-weighted vertex normals. Vertices outside every triangle get +Z
/// and a warning.
pub fn vertex_normals<'t>(positions: Var<'t>, mesh: &Mesh) -> Result<(Var<'t>, Vec<Warning>)> {
    let tape = positions.tape();
    let [c0, c1, c2] = &mesh.corners;
    let p0 = positions.sparse(c0.clone());
    let e1 = positions.sparse(c1.clone()) - p0;
    let e2 = positions.sparse(c2.clone()) - p0;
    // The cross product's length is twice the area, which is the weight.
    let mut sum = e1.cross3(e2).sparse(mesh.face_to_vertex.clone());
    let mut warnings = Vec::new();
    if !mesh.isolated.is_empty() {
        let mut fill = vec![0.0; mesh.n_vertices * 3];
        for &v in &mesh.isolated {
            fill[3 * v + 2] = 1.0;
        }
        sum = sum + tape.constant(&Tensor::new(vec![mesh.n_vertices, 3], fill));
        warnings.push(Warning::new(
            "vertex_normals",
            format!("{} isolated vertices given +Z normals", mesh.isolated.len()),
        ));
    }
    Ok((sum.normalize3()?, warnings))
}

/// Rounds of one-ring averaging (including the vertex itself), each followed
/// by renormalization.
pub fn smooth_normals<'t>(normals: Var<'t>, mesh: &Mesh, iterations: usize) -> Result<Var<'t>> {
    let mut n = normals;
    for _ in 0..iterations {
        n = n.sparse(mesh.one_ring.clone()).normalize3()?;
    }
    Ok(n)
}

/// Pixel positions `[68 x 2]` of the model's landmark vertices.
pub fn project_landmarks<'t>(
    positions: Var<'t>,
    landmarks: &[usize],
    cam: &Camera,
    vars: &CameraVars<'t>,
) -> Result<Var<'t>> {
    let n_v = positions.numel() / 3;
    let picked = positions.sparse(Rc::new(SparseRows::gather(landmarks, n_v)));
    let pc = vars.transform(picked);
    let depths = pc.data();
    for (i, &idx) in landmarks.iter().enumerate() {
        let z = depths[3 * i + 2];
        if !(z > Camera::NEAR) {
            return Err(Error::domain(
                "project_landmarks",
                format!("landmark {i} (vertex {idx}) at depth {z} is behind the camera"),
            ));
        }
    }
    render::project(pc, cam)
}

/// Squared Mahalanobis norm `sum_k p_k^2 / eig_k`.
pub fn shape_regularizer<'t>(p: Var<'t>, eig: &[f64]) -> Var<'t> {
    assert_eq!(p.numel(), eig.len(), "contract violation: coefficient count");
    let inv = p.tape().constant(&Tensor::vector(eig.iter().map(|e| 1.0 / e).collect()));
    (p.reshape(&[eig.len()]).square() * inv).sum()
}
