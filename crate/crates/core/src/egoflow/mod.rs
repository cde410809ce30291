//! Camera-induced ("ego") optical flow from depth, intrinsics and relative
//! pose, its subtraction from observed flow, and flow/depth image codecs.

mod codec;
mod color;
mod geometry;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use codec::{decode_depth_png, decode_flow_png, encode_depth_png, encode_flow_png, snap_flow_to_png_grid};
pub use color::{flow_to_color, RgbImage};
pub use geometry::{compute_ego_flow, suppress_ego_flow, MIN_REPROJECTED_DEPTH};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = Error;
    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Rigid transform taking frame-1 camera coordinates to frame-2 camera
/// coordinates: `P' = R P + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl TryFrom<PoseRepr> for PoseSE3 {
    type Error = Error;
    fn try_from(p: PoseRepr) -> Result<Self> {
        PoseSE3::from_rows(p.r, p.t)
    }
}

impl From<PoseSE3> for PoseRepr {
    fn from(p: PoseSE3) -> Self {
        let r = p.rotation;
        PoseRepr {
            r: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!("rotation determinant {det} != 1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_rows(r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        Self::new(m, Vector3::from(t))
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation from roll/pitch/yaw (radians) followed by translation `t`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// The frame-2 → frame-1 transform, for datasets using that convention.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Per-pixel depth in meters with a validity mask. Valid depths are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    z: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, z: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if z.len() != width * height || valid.len() != z.len() {
            return Err(Error::BufferSize {
                width,
                height,
                len: z.len().min(valid.len()),
            });
        }
        if let Some(i) = (0..z.len()).find(|&i| valid[i] && !(z[i] > 0.0 && z[i].is_finite())) {
            return Err(Error::OutOfRange(format!("invalid depth {} at pixel {i}", z[i])));
        }
        Ok(Self { width, height, z, valid })
    }

    /// Builds a map from `f(x, y)`; `None` marks the pixel invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self> {
        let mut z = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let d = f(x, y);
                z.push(d.unwrap_or(0.0));
                valid.push(d.is_some());
            }
        }
        Self::new(width, height, z, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn depth(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.z[i])
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Every valid depth multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.z.iter().map(|z| z * factor).collect(),
            self.valid.clone(),
        )
    }
}

/// Per-pixel displacement `(u, v)` in pixels with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::BufferSize {
                width,
                height,
                len: u.len().min(v.len()).min(valid.len()),
            });
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !(u[i].is_finite() && v[i].is_finite())) {
            return Err(Error::OutOfRange(format!("non-finite flow at pixel {i}")));
        }
        Ok(Self { width, height, u, v, valid })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// Builds a field from `f(x, y)`; `None` marks the pixel invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<(f64, f64)>,
    ) -> Result<Self> {
        let n = width * height;
        let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let d = f(x, y);
                let (a, b) = d.unwrap_or((0.0, 0.0));
                u.push(a);
                v.push(b);
                valid.push(d.is_some());
            }
        }
        Self::new(width, height, u, v, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    /// Adds `(du, dv)` at pixel `(x, y)`; no-op on invalid pixels.
    pub fn add_at(&mut self, x: usize, y: usize, du: f64, dv: f64) {
        let i = y * self.width + x;
        if self.valid[i] {
            self.u[i] += du;
            self.v[i] += dv;
        }
    }

    pub fn norm_at(&self, i: usize) -> Option<f64> {
        self.valid[i].then(|| self.u[i].hypot(self.v[i]))
    }

    /// Largest flow magnitude over valid pixels (0 when none are valid).
    pub fn max_norm(&self) -> f64 {
        (0..self.u.len())
            .filter_map(|i| self.norm_at(i))
            .fold(0.0, f64::max)
    }
}
