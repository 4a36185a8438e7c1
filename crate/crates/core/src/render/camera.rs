use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::tensor::{Tape, Tensor, Var};

/// Pinhole camera. Camera space follows the computer-vision convention:
/// x right, y down, z forward; pixel `(i, j)` covers `[i, i+1] x [j, j+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// Exponential-map rotation from model to camera space, radians.
    pub rotation: Vec3,
    pub translation: Vec3,
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Points at or closer than this depth are rejected by projection.
    pub const NEAR: f64 = 1e-3;

    /// A camera on the model's +Z axis looking back at the origin, with the
    /// model's +Y mapped to image up.
    pub fn frontal(width: usize, height: usize, focal: f64, distance: f64) -> Self {
        Camera {
            rotation: [std::f64::consts::PI, 0.0, 0.0],
            translation: [0.0, 0.0, distance],
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        }
    }

    /// [`Camera::frontal`] orbited about the model's vertical axis by `yaw`
    /// radians, keeping the origin at the same depth.
    pub fn orbit(width: usize, height: usize, focal: f64, distance: f64, yaw: f64) -> Self {
        let r = geometry::mat_mul(&geometry::rot_x(std::f64::consts::PI), &geometry::rot_y(yaw));
        Camera {
            rotation: geometry::rotation_log(&r),
            ..Camera::frontal(width, height, focal, distance)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .rotation
            .iter()
            .chain(&self.translation)
            .chain(&self.principal)
            .all(|v| v.is_finite());
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::contract("camera", format!("focal {} must be positive", self.focal)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::contract(
                "camera",
                format!("image size {}x{} below 8x8", self.width, self.height),
            ));
        }
        if !finite {
            return Err(Error::contract("camera", "non-finite pose"));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub fn rotation_matrix(&self) -> geometry::Mat3 {
        geometry::rotation_matrix(self.rotation)
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        geometry::add(geometry::mat_vec(&self.rotation_matrix(), p), self.translation)
    }

    /// Projects a camera-space point; `None` when it is not in front of the
    /// near plane.
    pub fn project_point(&self, pc: Vec3) -> Option<[f64; 2]> {
        (pc[2] > Self::NEAR).then(|| {
            [
                self.focal * pc[0] / pc[2] + self.principal[0],
                self.focal * pc[1] / pc[2] + self.principal[1],
            ]
        })
    }

    /// Records the pose on `tape`, as parameters when `trainable`.
    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> CameraVars<'t> {
        let r = Tensor::vector(self.rotation.to_vec());
        let t = Tensor::vector(self.translation.to_vec());
        if trainable {
            CameraVars {
                rotation: tape.param(&r),
                translation: tape.param(&t),
            }
        } else {
            CameraVars {
                rotation: tape.constant(&r),
                translation: tape.constant(&t),
            }
        }
    }
}

/// The differentiable 6-DoF part of a [`Camera`].
#[derive(Debug, Clone, Copy)]
pub struct CameraVars<'t> {
    pub rotation: Var<'t>,
    pub translation: Var<'t>,
}

impl<'t> CameraVars<'t> {
    /// Model-space `[N x 3]` points to camera space.
    pub fn transform(&self, points: Var<'t>) -> Var<'t> {
        Var::rotate(points, self.rotation) + self.translation
    }
}

/// Pinhole projection of camera-space points to pixels.
pub fn project<'t>(camera_points: Var<'t>, cam: &Camera) -> Result<Var<'t>> {
    camera_points.project(cam.focal, cam.principal[0], cam.principal[1], Camera::NEAR)
}
