use super::LabelMap;
use crate::pngio;
use crate::{Error, Result};

/// Decodes a 16-bit single-channel PNG into a label map, id per pixel verbatim.
pub fn decode_panoptic_png(bytes: &[u8]) -> Result<LabelMap> {
    let img = pngio::decode_16(bytes)?;
    if img.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "label PNG must be single-channel, got {} channels",
            img.channels
        )));
    }
    LabelMap::new(
        img.width,
        img.height,
        img.samples.into_iter().map(u32::from).collect(),
    )
}

/// Encodes a label map as a 16-bit grayscale PNG. Ids must fit in 16 bits.
pub fn encode_panoptic_png(map: &LabelMap) -> Result<Vec<u8>> {
    let samples = map
        .ids()
        .iter()
        .map(|&id| {
            u16::try_from(id)
                .map_err(|_| Error::OutOfRange(format!("segment id {id} exceeds 16 bits")))
        })
        .collect::<Result<Vec<u16>>>()?;
    pngio::encode_16(map.width(), map.height(), 1, &samples)
}

/// Binary sidecar: `u32 width`, `u32 height`, then one little-endian `u32` id
/// per pixel. Used for ids that do not fit the 16-bit PNG.
pub fn encode_label_sidecar(map: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * map.ids().len());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for id in map.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

pub fn decode_label_sidecar(bytes: &[u8]) -> Result<LabelMap> {
    let word = |i: usize| {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let (w, h) = match (word(0), word(1)) {
        (Some(w), Some(h)) => (w as usize, h as usize),
        _ => return Err(Error::MalformedImage("truncated sidecar header".into())),
    };
    if bytes.len() != 8 + 4 * w * h {
        return Err(Error::MalformedImage(format!(
            "sidecar of {} bytes does not hold {w}x{h} ids",
            bytes.len()
        )));
    }
    LabelMap::new(w, h, (0..w * h).map(|i| word(2 + i).unwrap()).collect())
}
