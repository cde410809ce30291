use nalgebra::Vector3;
use rayon::prelude::*;

use super::{CameraIntrinsics, DepthMap, FlowField, PoseSE3};
use crate::{Error, Result};

/// Reprojected points at or below this depth (meters) are marked invalid.
pub const MIN_REPROJECTED_DEPTH: f64 = 1e-6;

/// Flow induced purely by camera motion: each valid pixel is back-projected
/// with its depth, moved by `pose`, and reprojected. Points that land
/// behind the second camera are marked invalid.
///
/// The intrinsics and pose types enforce their own invariants, so the only
/// failure left is an empty depth map.
pub fn compute_ego_flow(depth: &DepthMap, k: &CameraIntrinsics, pose: &PoseSE3) -> Result<FlowField> {
    let (w, h) = depth.dims();
    if w == 0 || h == 0 {
        return Err(Error::DimensionMismatch {
            expected: (1, 1),
            actual: (w, h),
        });
    }
    let rows: Vec<Vec<Option<(f64, f64)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let z = depth.depth(x, y)?;
                    // P = z * (xn, yn, 1); work with P / z so that identity and
                    // pure rotation poses are exact.
                    let xn = (x as f64 - k.cx) / k.fx;
                    let yn = (y as f64 - k.cy) / k.fy;
                    let q = pose.rotation() * Vector3::new(xn, yn, 1.0) + pose.translation() / z;
                    if q.z * z <= MIN_REPROJECTED_DEPTH {
                        return None;
                    }
                    Some((k.fx * (q.x / q.z - xn), k.fy * (q.y / q.z - yn)))
                })
                .collect()
        })
        .collect();
    let mut it = rows.into_iter().flatten();
    FlowField::from_fn(w, h, |_, _| it.next().unwrap())
}

/// `observed - ego` per pixel; invalid wherever either input is.
pub fn suppress_ego_flow(observed: &FlowField, ego: &FlowField) -> Result<FlowField> {
    if observed.dims() != ego.dims() {
        return Err(Error::DimensionMismatch {
            expected: observed.dims(),
            actual: ego.dims(),
        });
    }
    FlowField::from_fn(observed.width(), observed.height(), |x, y| {
        let (ou, ov) = observed.get(x, y)?;
        let (eu, ev) = ego.get(x, y)?;
        Some((ou - eu, ov - ev))
    })
}
