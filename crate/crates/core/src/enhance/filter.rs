//! Single-channel filtering primitives: separable Gaussian blur, box
//! statistics via integral images, and the guided filter.

use super::Plane;

/// Separable Gaussian blur with kernel radius ceil(3*sigma), clamp-to-edge
/// boundary handling, kernel normalized to sum 1.
pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    assert!(sigma > 0.0, "gaussian_blur requires sigma > 0");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 * inv).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (w, h) = (src.width as i64, src.height as i64);
    // horizontal pass
    let mut tmp = Plane::zeros(src.width, src.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (ki, kv) in kernel.iter().enumerate() {
                let ix = (x + ki as i64 - radius).clamp(0, w - 1);
                acc += kv * src.data[(y * w + ix) as usize] as f64;
            }
            tmp.data[(y * w + x) as usize] = acc as f32;
        }
    }
    // vertical pass
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (ki, kv) in kernel.iter().enumerate() {
                let iy = (y + ki as i64 - radius).clamp(0, h - 1);
                acc += kv * tmp.data[(iy * w + x) as usize] as f64;
            }
            out.data[(y * w + x) as usize] = acc as f32;
        }
    }
    out
}

/// Windowed means over (2r+1)^2 boxes clipped to the image; each pixel
/// divides by its actual window population.
pub fn box_mean(src: &Plane, r: usize) -> Plane {
    let (w, h) = (src.width, src.height);
    // integral image with a zero top row / left column
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += src.data[y * w + x] as f64;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            out.data[y * w + x] = (sum / ((y1 - y0) * (x1 - x0)) as f64) as f32;
        }
    }
    out
}

/// Standard guided filter: a = cov(guide,src)/(var(guide)+eps),
/// b = mean(src) - a*mean(guide), output = mean(a)*guide + mean(b).
pub fn guided_filter(guide: &Plane, src: &Plane, r: usize, eps: f64) -> Plane {
    assert_eq!(
        (guide.width, guide.height),
        (src.width, src.height),
        "guided_filter requires matching dimensions"
    );
    let n = guide.width * guide.height;
    let mut gg = Plane::zeros(guide.width, guide.height);
    let mut gs = Plane::zeros(guide.width, guide.height);
    for i in 0..n {
        gg.data[i] = guide.data[i] * guide.data[i];
        gs.data[i] = guide.data[i] * src.data[i];
    }
    let mean_g = box_mean(guide, r);
    let mean_s = box_mean(src, r);
    let mean_gg = box_mean(&gg, r);
    let mean_gs = box_mean(&gs, r);

    let mut a = Plane::zeros(guide.width, guide.height);
    let mut b = Plane::zeros(guide.width, guide.height);
    for i in 0..n {
        let var = mean_gg.data[i] as f64 - (mean_g.data[i] as f64).powi(2);
        let cov = mean_gs.data[i] as f64 - mean_g.data[i] as f64 * mean_s.data[i] as f64;
        let ai = cov / (var + eps);
        a.data[i] = ai as f32;
        b.data[i] = (mean_s.data[i] as f64 - ai * mean_g.data[i] as f64) as f32;
    }
    let mean_a = box_mean(&a, r);
    let mean_b = box_mean(&b, r);
    let mut out = Plane::zeros(guide.width, guide.height);
    for i in 0..n {
        out.data[i] = mean_a.data[i] * guide.data[i] + mean_b.data[i];
    }
    out
}
