//! Binary tensor file: three little-endian `u32` (height, width, channels)
//! followed by `height * width * channels` little-endian `f32`, pixel-major.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

const HEADER_LEN: usize = 12;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    debug_assert_eq!(t.data.len(), t.height * t.width * t.channels);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    for d in [t.height, t.width, t.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedTensor(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::MalformedTensor("dimensions overflow".into()))?;
    if bytes.len() != HEADER_LEN + 4 * count {
        return Err(Error::MalformedTensor(format!(
            "expected {} payload bytes for {height}x{width}x{channels}, got {}",
            4 * count,
            bytes.len() - HEADER_LEN
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        height,
        width,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor { height: 1, width: 2, channels: 1, data: vec![1.0, -2.5] };
        let b = encode_tensor(&t);
        assert_eq!(&b[..12], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_rejected() {
        let b = encode_tensor(&Tensor { height: 2, width: 2, channels: 3, data: vec![0.0; 12] });
        assert!(decode_tensor(&b[..b.len() - 2]).is_err());
        assert!(decode_tensor(&b[..5]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(h in 0usize..4, w in 0usize..4, c in 1usize..4, seed in any::<u32>()) {
            let data: Vec<f32> = (0..h * w * c).map(|i| (i as f32 + seed as f32) * 0.37).collect();
            let t = Tensor { height: h, width: w, channels: c, data };
            prop_assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
        }
    }
}
