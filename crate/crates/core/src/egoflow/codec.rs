//! 16-bit PNG storage for flow and depth.
//!
//! Flow: three channels `(u, v, valid)`, each flow component stored as
//! `round(component * 64) + 32768`. Depth: one channel, meters × 256, 0 = invalid.

use super::{DepthMap, FlowField};
use crate::pngio;
use crate::{Error, Result};

const FLOW_SCALE: f64 = 64.0;
const FLOW_OFFSET: f64 = 32768.0;
const DEPTH_SCALE: f64 = 256.0;

fn quantize_flow(c: f64) -> Result<u16> {
    let s = (c * FLOW_SCALE).round() + FLOW_OFFSET;
    if !(0.0..=65535.0).contains(&s) {
        return Err(Error::OutOfRange(format!("flow component {c} outside the 16-bit range")));
    }
    Ok(s as u16)
}

/// Rounds every valid component to the flow PNG grid of 1/64 px, so flow
/// computed in memory can be compared exactly against decoded flow.
pub fn snap_flow_to_png_grid(f: &FlowField) -> FlowField {
    let snap = |c: f64| (c * FLOW_SCALE).round() / FLOW_SCALE;
    FlowField::from_fn(f.width(), f.height(), |x, y| f.get(x, y).map(|(u, v)| (snap(u), snap(v)))).unwrap()
}

pub fn encode_flow_png(f: &FlowField) -> Result<Vec<u8>> {
    let mut samples = Vec::with_capacity(3 * f.u().len());
    for i in 0..f.u().len() {
        if f.valid()[i] {
            samples.extend([quantize_flow(f.u()[i])?, quantize_flow(f.v()[i])?, 1]);
        } else {
            samples.extend([FLOW_OFFSET as u16, FLOW_OFFSET as u16, 0]);
        }
    }
    pngio::encode_16(f.width(), f.height(), 3, &samples)
}

pub fn decode_flow_png(bytes: &[u8]) -> Result<FlowField> {
    let img = pngio::decode_16(bytes)?;
    if img.channels != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "flow PNG must have 3 channels, got {}",
            img.channels
        )));
    }
    let mut px = img.samples.chunks_exact(3);
    FlowField::from_fn(img.width, img.height, |_, _| {
        let s = px.next().unwrap();
        (s[2] != 0).then(|| {
            (
                (s[0] as f64 - FLOW_OFFSET) / FLOW_SCALE,
                (s[1] as f64 - FLOW_OFFSET) / FLOW_SCALE,
            )
        })
    })
}

pub fn encode_depth_png(d: &DepthMap) -> Result<Vec<u8>> {
    let samples = (0..d.z().len())
        .map(|i| {
            if !d.valid()[i] {
                return Ok(0);
            }
            let s = (d.z()[i] * DEPTH_SCALE).round();
            if !(1.0..=65535.0).contains(&s) {
                return Err(Error::OutOfRange(format!(
                    "depth {} m not representable at 1/256 m",
                    d.z()[i]
                )));
            }
            Ok(s as u16)
        })
        .collect::<Result<Vec<u16>>>()?;
    pngio::encode_16(d.width(), d.height(), 1, &samples)
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let img = pngio::decode_16(bytes)?;
    if img.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "depth PNG must be single-channel, got {} channels",
            img.channels
        )));
    }
    let mut it = img.samples.iter();
    DepthMap::from_fn(img.width, img.height, |_, _| {
        let s = *it.next().unwrap();
        (s != 0).then(|| s as f64 / DEPTH_SCALE)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pngio::decode_16;

    #[test]
    fn stored_values() {
        let f = FlowField::from_fn(2, 1, |x, _| Some(if x == 0 { (1.0, 0.0) } else { (0.0, -1.0) })).unwrap();
        let img = decode_16(&encode_flow_png(&f).unwrap()).unwrap();
        // u = 1.0 -> 32768 + 64
        assert_eq!(&img.samples[..3], &[32832, 32768, 1]);
        assert_eq!(&img.samples[3..], &[32768, 32704, 1]);
    }

    #[test]
    fn validity_survives_round_trip() {
        let f = FlowField::from_fn(3, 2, |x, y| ((x + y) % 2 == 0).then_some((0.5, -0.25))).unwrap();
        let g = decode_flow_png(&encode_flow_png(&f).unwrap()).unwrap();
        assert_eq!(f.valid(), g.valid());
        assert_eq!(g.get(0, 0), Some((0.5, -0.25)));
    }

    #[test]
    fn out_of_range_rejected() {
        let f = FlowField::from_fn(1, 1, |_, _| Some((600.0, 0.0))).unwrap();
        assert!(matches!(encode_flow_png(&f), Err(Error::OutOfRange(_))));
        let d = DepthMap::from_fn(1, 1, |_, _| Some(300.0)).unwrap();
        assert!(matches!(encode_depth_png(&d), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn depth_values_and_invalid() {
        let d = DepthMap::from_fn(2, 1, |x, _| (x == 1).then_some(10.5)).unwrap();
        let img = decode_16(&encode_depth_png(&d).unwrap()).unwrap();
        assert_eq!(img.samples, vec![0, 2688]);
        let back = decode_depth_png(&encode_depth_png(&d).unwrap()).unwrap();
        assert_eq!(back.depth(0, 0), None);
        assert_eq!(back.depth(1, 0), Some(10.5));
    }

    #[test]
    fn wrong_channel_count() {
        let d = DepthMap::from_fn(2, 2, |_, _| Some(1.0)).unwrap();
        assert!(decode_flow_png(&encode_depth_png(&d).unwrap()).is_err());
        assert!(decode_depth_png(&encode_flow_png(&FlowField::zeros(2, 2)).unwrap()).is_err());
    }

    #[test]
    fn snapping_matches_decoding() {
        let f = FlowField::from_fn(4, 1, |x, _| (x != 3).then_some((x as f64 * 0.3137, -1.0 / 3.0))).unwrap();
        assert_eq!(snap_flow_to_png_grid(&f), decode_flow_png(&encode_flow_png(&f).unwrap()).unwrap());
    }
}
