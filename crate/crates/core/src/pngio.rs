//! Thin PNG helpers shared by the label, depth, flow and color codecs.

use std::io::Cursor;

use crate::{Error, Result};

/// Decoded 16-bit image: big-endian samples already converted to host order.
pub(crate) struct Image16 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u16>,
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::MalformedImage(e.to_string())
}

pub(crate) fn decode_16(bytes: &[u8]) -> Result<Image16> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat(format!(
            "expected 16-bit samples, got {:?}",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "unsupported color type {other:?}"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed("image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    buf.truncate(frame.buffer_size());
    let samples: Vec<u16> = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    if samples.len() != width * height * channels {
        return Err(malformed("sample count does not match header"));
    }
    Ok(Image16 {
        width,
        height,
        channels,
        samples,
    })
}

pub(crate) fn encode_16(width: usize, height: usize, channels: usize, samples: &[u16]) -> Result<Vec<u8>> {
    debug_assert_eq!(samples.len(), width * height * channels);
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => unreachable!("only gray and rgb are written"),
    };
    let data: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
    write(width, height, color, png::BitDepth::Sixteen, &data)
}

pub(crate) fn encode_rgb8(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    write(width, height, png::ColorType::Rgb, png::BitDepth::Eight, data)
}

fn write(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::OutOfRange("cannot encode an empty image".into()));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder.write_header().map_err(malformed)?;
        writer.write_image_data(data).map_err(malformed)?;
        writer.finish().map_err(malformed)?;
    }
    Ok(out)
}
