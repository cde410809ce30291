use super::FlowField;
use crate::pngio;
use crate::Result;

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        pngio::encode_rgb8(self.width, self.height, &self.data)
    }
}

/// Color-wheel visualization: hue is the flow direction `atan2(v, u)`,
/// saturation is `|flow| / max_norm` clamped to 1, value is 1. Zero flow is
/// white; invalid pixels are black. With `max_norm = None` the largest valid
/// magnitude is used.
pub fn flow_to_color(f: &FlowField, max_norm: Option<f64>) -> RgbImage {
    let scale = max_norm.unwrap_or_else(|| f.max_norm());
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut data = Vec::with_capacity(3 * f.u().len());
    for i in 0..f.u().len() {
        if !f.valid()[i] {
            data.extend([0, 0, 0]);
            continue;
        }
        let (u, v) = (f.u()[i], f.v()[i]);
        let sat = (u.hypot(v) / scale).min(1.0);
        let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
        data.extend(hsv_to_rgb(hue, sat, 1.0));
    }
    RgbImage {
        width: f.width(),
        height: f.height(),
        data,
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hue in degrees of an 8-bit RGB triple.
    fn hue_of([r, g, b]: [u8; 3]) -> f64 {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        let (max, min) = (r.max(g).max(b), r.min(g).min(b));
        let d = max - min;
        let h = if max == r {
            60.0 * ((g - b) / d).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / d + 2.0)
        } else {
            60.0 * ((r - g) / d + 4.0)
        };
        h.rem_euclid(360.0)
    }

    #[test]
    fn zero_field_is_white() {
        let img = flow_to_color(&FlowField::zeros(4, 3), None);
        assert!(img.data.iter().all(|&c| c == 255));
    }

    #[test]
    fn opposite_flows_are_opposite_hues() {
        for (u, v) in [(2.0, 0.0), (1.0, 1.0), (0.3, -2.0)] {
            let f = FlowField::from_fn(2, 1, |x, _| Some(if x == 0 { (u, v) } else { (-u, -v) })).unwrap();
            let img = flow_to_color(&f, None);
            let d = (hue_of(img.pixel(0, 0)) - hue_of(img.pixel(1, 0))).abs();
            assert!((d - 180.0).abs() < 1.0, "hue gap {d}");
        }
    }

    #[test]
    fn saturation_follows_norm() {
        // Norm == max_norm: fully saturated pure red for +u.
        let f = FlowField::from_fn(3, 1, |x, _| Some((x as f64 * 2.5, 0.0))).unwrap();
        let img = flow_to_color(&f, Some(5.0));
        assert_eq!(img.pixel(2, 0), [255, 0, 0]);
        // Half the norm: half saturation.
        assert_eq!(img.pixel(1, 0), [255, 128, 128]);
        // Beyond max_norm clamps.
        assert_eq!(flow_to_color(&f, Some(1.0)).pixel(1, 0), [255, 0, 0]);
        assert!(img.to_png().is_ok());
    }
}
