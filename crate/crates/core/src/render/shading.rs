//! Blinn-Phong shading with separate diffuse and specular normal fields.
//! Light directions point from the surface towards the light and live in
//! camera space.

use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::tensor::{softplus, softplus_inverse, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Light {
    /// Unnormalized; normalized wherever it is used.
    pub direction: Vec3,
    /// Softplus pre-image of the RGB intensity.
    pub intensity_raw: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lighting {
    /// Softplus pre-image of the ambient gain `c_a`.
    pub ambient_raw: f64,
    pub lights: Vec<Light>,
    pub log_shininess: f64,
}

/// Softplus pre-image that maps 0 to negative infinity (softplus of which
/// is exactly 0).
fn raw_of(v: f64) -> f64 {
    if v == 0.0 {
        f64::NEG_INFINITY
    } else {
        softplus_inverse(v)
    }
}

impl Lighting {
    pub const DEFAULT_SHININESS: f64 = 20.0;

    /// Builds a lighting record from physical values.
    pub fn new(ambient: f64, lights: &[(Vec3, [f64; 3])], shininess: f64) -> Result<Self> {
        if lights.is_empty() {
            return Err(Error::contract("lighting", "at least one light is required"));
        }
        let bad = |v: f64| !(v >= 0.0 && v.is_finite());
        if bad(ambient) || lights.iter().any(|(_, c)| c.iter().any(|&v| bad(v))) {
            return Err(Error::contract("lighting", "intensities must be finite and nonnegative"));
        }
        if !(shininess > 0.0 && shininess.is_finite()) {
            return Err(Error::contract("lighting", format!("shininess {shininess} must be positive")));
        }
        if lights.iter().any(|(d, _)| geometry::norm(*d) < 1e-12 || d.iter().any(|v| !v.is_finite())) {
            return Err(Error::contract("lighting", "degenerate light direction"));
        }
        Ok(Lighting {
            ambient_raw: raw_of(ambient),
            lights: lights
                .iter()
                .map(|(d, c)| Light {
                    direction: *d,
                    intensity_raw: c.map(raw_of),
                })
                .collect(),
            log_shininess: shininess.ln(),
        })
    }

    /// One white light from the camera's direction, `c_a = 1`, `s = 20`.
    pub fn frontal_white() -> Self {
        Lighting::new(1.0, &[([0.0, 0.0, -1.0], [1.0; 3])], Self::DEFAULT_SHININESS).unwrap()
    }

    pub fn ambient(&self) -> f64 {
        softplus(self.ambient_raw)
    }

    pub fn intensity(&self, j: usize) -> [f64; 3] {
        self.lights[j].intensity_raw.map(softplus)
    }

    pub fn shininess(&self) -> f64 {
        self.log_shininess.exp()
    }

    pub fn n_lights(&self) -> usize {
        self.lights.len()
    }

    /// Same lighting with every intensity multiplied by `alpha >= 0`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for (l, src) in out.lights.iter_mut().zip(&self.lights) {
            l.intensity_raw = src.intensity_raw.map(|r| raw_of(alpha * softplus(r)));
        }
        out
    }

    /// Records the raw parameters on `tape` (as leaves when `trainable`)
    /// and derives the physical quantities.
    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<LightingVars<'t>> {
        let n = self.lights.len();
        let leaf = |t: Tensor| if trainable { tape.param(&t) } else { tape.constant(&t) };
        let ambient_raw = leaf(Tensor::scalar(self.ambient_raw));
        let dirs = leaf(Tensor::new(vec![n, 3], self.lights.iter().flat_map(|l| l.direction).collect()));
        let raw = leaf(Tensor::new(vec![n, 3], self.lights.iter().flat_map(|l| l.intensity_raw).collect()));
        let log_s = leaf(Tensor::scalar(self.log_shininess));
        let unit = dirs.normalize3()?;
        let c = raw.softplus();
        Ok(LightingVars {
            ambient_raw,
            direction_raw: dirs,
            intensity_raw: raw,
            log_shininess: log_s,
            ambient: ambient_raw.softplus(),
            directions: (0..n).map(|j| unit.narrow(3 * j, &[3])).collect(),
            intensities: (0..n).map(|j| c.narrow(3 * j, &[3])).collect(),
            shininess: log_s.exp(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LightingVars<'t> {
    pub ambient_raw: Var<'t>,
    /// `[n_l x 3]`
    pub direction_raw: Var<'t>,
    /// `[n_l x 3]`
    pub intensity_raw: Var<'t>,
    pub log_shininess: Var<'t>,
    pub ambient: Var<'t>,
    pub directions: Vec<Var<'t>>,
    pub intensities: Vec<Var<'t>>,
    pub shininess: Var<'t>,
}

impl<'t> LightingVars<'t> {
    pub fn leaves(&self) -> [Var<'t>; 4] {
        [self.ambient_raw, self.direction_raw, self.intensity_raw, self.log_shininess]
    }
}

fn as_rgb<'t>(per_pixel: Var<'t>) -> Var<'t> {
    let p = per_pixel.numel();
    per_pixel.reshape(&[p]).expand_last(3)
}

/// `c_a * A_D * sum_j max(0, N_D . l_j) c_j` for `[P x 3]` albedo and
/// unit normals.
pub fn shade_diffuse<'t>(albedo: Var<'t>, normals: Var<'t>, light: &LightingVars<'t>) -> Var<'t> {
    shade_diffuse_with(albedo, normals, light, true)
}

/// [`shade_diffuse`] with the clamp on `N_D . l_j` optional; unclamped,
/// back-facing lights subtract energy as the bare formula says.
pub fn shade_diffuse_with<'t>(albedo: Var<'t>, normals: Var<'t>, light: &LightingVars<'t>, clamp: bool) -> Var<'t> {
    let mut acc: Option<Var<'t>> = None;
    for (l, c) in light.directions.iter().zip(&light.intensities) {
        let cos = (normals * *l).sum_last();
        let term = as_rgb(if clamp { cos.max0() } else { cos }) * *c;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    albedo * acc.expect("at least one light") * light.ambient
}

/// Where both `N . a > 0` and `N . b > 0`; a constant, so gradients treat
/// it like a raster decision.
fn facing_both<'t>(normals: Var<'t>, a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let na = (normals * a).sum_last().data();
    let nb = (normals * b).sum_last().data();
    let gate: Vec<f64> = na.iter().zip(nb.iter()).map(|(x, y)| (*x > 0.0 && *y > 0.0) as u8 as f64).collect();
    normals.tape().constant(&Tensor::new(vec![gate.len()], gate))
}

/// `A_S * sum_j max(0, N . h_j)^s c_j` with `h_j = normalize(l_j + v)`,
/// zero wherever `N` faces away from the light or the viewer. Without the
/// gate, lights behind the head light up grazing fragments through an
/// almost perpendicular half vector. `spec_albedo` is `[P x 1]`, normals
/// and view directions `[P x 3]`.
pub fn shade_specular<'t>(
    spec_albedo: Var<'t>,
    normals: Var<'t>,
    view: Var<'t>,
    light: &LightingVars<'t>,
) -> Result<Var<'t>> {
    let mut acc: Option<Var<'t>> = None;
    for (l, c) in light.directions.iter().zip(&light.intensities) {
        let h = (view + *l).normalize3()?;
        let gate = facing_both(normals, *l, view);
        let lobe = (normals * h).sum_last().max0().pow_tensor(light.shininess)? * gate;
        let term = as_rgb(lobe) * *c;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    Ok(as_rgb(spec_albedo) * acc.expect("at least one light"))
}

/// Maps tangent-space detail normals to camera space: Gram-Schmidt the
/// frame against the shape normal, then `normalize(T x + B y + N z)`.
pub fn tangent_to_object<'t>(
    detail: Var<'t>,
    tangent: Var<'t>,
    bitangent: Var<'t>,
    normal: Var<'t>,
) -> Result<Var<'t>> {
    let along = |a: Var<'t>, dir: Var<'t>| as_rgb(a.dot3(dir)) * dir;
    let t = (tangent - along(tangent, normal)).normalize3()?;
    let b = (bitangent - along(bitangent, normal) - along(bitangent, t)).normalize3()?;
    let x = as_rgb(detail.slice_last(0, 1));
    let y = as_rgb(detail.slice_last(1, 1));
    let z = as_rgb(detail.slice_last(2, 1));
    (t * x + b * y + normal * z).normalize3()
}
