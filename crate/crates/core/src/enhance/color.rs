//! sRGB <-> CIELAB conversion under D65, with the piecewise sRGB gamma.
//!
//! The reference white is taken as the image of sRGB (1,1,1) under the
//! forward matrix, so white maps to exactly L=100, a=b=0 and round-trips
//! are limited only by floating-point error.

use super::{ImageF32, LabImage};

// sRGB -> XYZ (D65) matrix.
const M: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// XYZ -> linear sRGB.
const M_INV: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

// Reference white = row sums of M (the image of (1,1,1)).
const WHITE: [f64; 3] = [
    M[0][0] + M[0][1] + M[0][2],
    M[1][0] + M[1][1] + M[1][2],
    M[2][0] + M[2][1] + M[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub fn srgb_pixel_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let (rl, gl, bl) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = M[0][0] * rl + M[0][1] * gl + M[0][2] * bl;
    let y = M[1][0] * rl + M[1][1] * gl + M[1][2] * bl;
    let z = M[2][0] * rl + M[2][1] * gl + M[2][2] * bl;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub fn lab_pixel_to_srgb(l: f64, a: f64, b: f64) -> (f64, f64, f64) {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let x = WHITE[0] * lab_f_inv(fx);
    let y = WHITE[1] * lab_f_inv(fy);
    let z = WHITE[2] * lab_f_inv(fz);
    let rl = M_INV[0][0] * x + M_INV[0][1] * y + M_INV[0][2] * z;
    let gl = M_INV[1][0] * x + M_INV[1][1] * y + M_INV[1][2] * z;
    let bl = M_INV[2][0] * x + M_INV[2][1] * y + M_INV[2][2] * z;
    (
        linear_to_srgb(rl).clamp(0.0, 1.0),
        linear_to_srgb(gl).clamp(0.0, 1.0),
        linear_to_srgb(bl).clamp(0.0, 1.0),
    )
}

/// Convert a whole image to CIELAB (L in [0,100], a/b roughly [-128,127]).
pub fn srgb_to_lab(img: &ImageF32) -> LabImage {
    let mut out = LabImage::zeros(img.width, img.height);
    for i in 0..img.width * img.height {
        let (r, g, b) = img.pixel(i);
        let (l, a, bb) = srgb_pixel_to_lab(r as f64, g as f64, b as f64);
        out.set_pixel(i, l as f32, a as f32, bb as f32);
    }
    out
}

/// Convert back to sRGB, clipping each channel to [0,1].
pub fn lab_to_srgb(lab: &LabImage) -> ImageF32 {
    let mut out = ImageF32::zeros(lab.width, lab.height);
    for i in 0..lab.width * lab.height {
        let (l, a, b) = lab.pixel(i);
        let (r, g, bb) = lab_pixel_to_srgb(l as f64, a as f64, b as f64);
        out.set_pixel(i, r as f32, g as f32, bb as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_maps_to_l100() {
        let (l, a, b) = srgb_pixel_to_lab(1.0, 1.0, 1.0);
        assert!((l - 100.0).abs() < 0.01, "L={l}");
        assert!(a.abs() < 0.01 && b.abs() < 0.01, "a={a} b={b}");
    }

    #[test]
    fn black_maps_to_origin() {
        let (l, a, b) = srgb_pixel_to_lab(0.0, 0.0, 0.0);
        assert_eq!((l, a, b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn round_trip_under_half_lsb() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let (r, g, b) =
                (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let (l, a, bb) = srgb_pixel_to_lab(r, g, b);
            let (r2, g2, b2) = lab_pixel_to_srgb(l, a, bb);
            worst = worst.max((r - r2).abs()).max((g - g2).abs()).max((b - b2).abs());
        }
        assert!(worst < 0.5 / 255.0, "max round-trip error {worst}");
    }
}
