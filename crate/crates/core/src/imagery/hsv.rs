//! Hexcone HSV conversion for 8-bit RGB channels.

/// HSV triple with hue wrapping in `[0, 1)` and saturation/value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> HsvPixel {
    let rf = r as f64 / 255.0;
    let gf = g as f64 / 255.0;
    let bf = b as f64 / 255.0;
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;

    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == rf {
        (((gf - bf) / delta).rem_euclid(6.0)) / 6.0
    } else if max == gf {
        ((bf - rf) / delta + 2.0) / 6.0
    } else {
        ((rf - gf) / delta + 4.0) / 6.0
    };
    HsvPixel {
        h: h.rem_euclid(1.0),
        s,
        v,
    }
}

pub fn hsv_to_rgb(p: HsvPixel) -> [u8; 3] {
    let s = p.s.clamp(0.0, 1.0);
    let v = p.v.clamp(0.0, 1.0);
    let h6 = p.h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as u32) % 6;
    let f = h6 - h6.floor();

    let lo = v * (1.0 - s);
    let mid_down = v * (1.0 - s * f);
    let mid_up = v * (1.0 - s * (1.0 - f));

    let (rf, gf, bf) = match sector {
        0 => (v, mid_up, lo),
        1 => (mid_down, v, lo),
        2 => (lo, v, mid_up),
        3 => (lo, mid_down, v),
        4 => (mid_up, lo, v),
        _ => (v, lo, mid_down),
    };
    let to_byte = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    [to_byte(rf), to_byte(gf), to_byte(bf)]
}
