//! Pinhole rasterization and Blinn-Phong shading on the tape.

mod camera;
mod raster;
mod shading;

pub use camera::{project, Camera, CameraVars};
pub use raster::{rasterize, FragmentBuffer, BACKGROUND};
pub use shading::{shade_diffuse, shade_diffuse_with, shade_specular, tangent_to_object, Light, Lighting, LightingVars};

use crate::error::{Result, Warning};
use crate::shape::{self, Mesh};
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
    /// One-ring smoothing rounds turning geometric normals into diffuse
    /// normals.
    pub diffuse_smoothing: usize,
    /// Half-width of the C1 blend used for the final tone clamp.
    pub tone_band: f64,
    /// Clamp `N_D . l` at zero in the diffuse term.
    pub clamp_diffuse: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: [0.0; 3],
            diffuse_smoothing: 2,
            tone_band: 0.01,
            clamp_diffuse: true,
        }
    }
}

/// Reflectance textures on the tape, each `[C x R x R]`.
#[derive(Debug, Clone, Copy)]
pub struct MapVars<'t> {
    pub albedo: Var<'t>,
    pub specular: Var<'t>,
    pub normals: Var<'t>,
}

pub struct Rendered<'t> {
    /// `[3 x H x W]` composite clamped below at zero.
    pub linear: Var<'t>,
    /// [`Rendered::linear`] tone-clamped to [0, 1].
    pub image: Var<'t>,
    /// Per-fragment `[P x 3]` shading terms.
    pub diffuse: Var<'t>,
    pub specular: Var<'t>,
    pub fragments: FragmentBuffer,
    pub warnings: Vec<Warning>,
}

/// Renders model-space positions `[V x 3]` with the given textures, camera
/// and lighting.
pub fn render<'t>(
    shape_positions: Var<'t>,
    mesh: &Mesh,
    maps: &MapVars<'t>,
    cam: &Camera,
    cam_vars: &CameraVars<'t>,
    light: &LightingVars<'t>,
    settings: &RenderSettings,
) -> Result<Rendered<'t>> {
    cam.validate()?;
    let tape = shape_positions.tape();
    let pc = cam_vars.transform(shape_positions);
    let (normals, mut warnings) = shape::vertex_normals(pc, mesh)?;
    let diffuse_normals = shape::smooth_normals(normals, mesh, settings.diffuse_smoothing)?;
    let frags = rasterize(&pc.data(), mesh, cam);
    warnings.extend(frags.warnings.iter().cloned());

    let (diffuse, specular) = if frags.n_covered() == 0 {
        let none = tape.constant(&Tensor::zeros(&[0, 3]));
        (none, none)
    } else {
        let pos = frags.interpolate(pc);
        let n = frags.interpolate(normals).normalize3()?;
        let nd = frags.interpolate(diffuse_normals).normalize3()?;
        let uv = tape.constant(&frags.uv);
        let a_d = Var::bilinear_sample(maps.albedo, uv);
        let a_s = Var::bilinear_sample(maps.specular, uv);
        let detail = Var::bilinear_sample(maps.normals, uv);
        let (t, b) = frags.frames(pc);
        let n_spec = tangent_to_object(detail, t, b, n)?;
        let view = pos.scale(-1.0).normalize3()?;
        (shade_diffuse_with(a_d, nd, light, settings.clamp_diffuse), shade_specular(a_s, n_spec, view, light)?)
    };
    let linear = (diffuse + specular)
        .composite(frags.pixels.clone(), settings.background, cam.height, cam.width)
        .max0();
    let image = linear.soft_cap1(settings.tone_band);
    Ok(Rendered {
        linear,
        image,
        diffuse,
        specular,
        fragments: frags,
        warnings,
    })
}
