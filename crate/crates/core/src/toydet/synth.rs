//! Synthetic detection data: colored shapes on a pale blue-green gradient,
//! plus a deterministic underwater degradation model.

use super::{SynthSample, IMG_SIZE, NUM_CLASSES};
use crate::enhance::{color, gaussian_blur, ImageF32};
use crate::fgiou::{iou, BBox};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const MIN_SIDE: f64 = 10.0;
const MAX_SIDE: f64 = 28.0;
const NOISE_SIGMA: f64 = 0.03;

/// Per-class fill hues (r, g, b ranges). All warm so the scene keeps a
/// healthy red/green balance before degradation.
const HUES: [[(f32, f32); 3]; NUM_CLASSES] = [
    // disc: red
    [(0.75, 0.95), (0.15, 0.35), (0.20, 0.40)],
    // square: yellow
    [(0.80, 0.95), (0.70, 0.90), (0.15, 0.35)],
    // triangle: magenta
    [(0.70, 0.90), (0.15, 0.30), (0.65, 0.90)],
];

/// Deterministic dataset: the same (n, seed) always produces bitwise
/// identical samples, and prefixes are stable in n.
pub fn synth_dataset(n: usize, seed: u64) -> Vec<SynthSample> {
    assert!(n >= 1, "synth_dataset requires n >= 1");
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sample_seed = master.gen::<u64>();
            synth_sample(sample_seed)
        })
        .collect()
}

fn synth_sample(seed: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = IMG_SIZE;
    let mut image = ImageF32::zeros(s, s);

    // pale blue-green vertical gradient background
    let top = (
        rng.gen_range(0.48..0.60f32),
        rng.gen_range(0.58..0.75f32),
        rng.gen_range(0.62..0.80f32),
    );
    let fade = rng.gen_range(0.75..0.90f32);
    for y in 0..s {
        let t = y as f32 / (s - 1) as f32;
        let k = 1.0 - t * (1.0 - fade);
        for x in 0..s {
            image.set_pixel(y * s + x, top.0 * k, top.1 * k, top.2 * k);
        }
    }

    // 1..=4 shapes, rejection-sampled to limit mutual overlap
    let want = rng.gen_range(1..=4usize);
    let mut objects: Vec<(usize, BBox)> = Vec::new();
    for _ in 0..want {
        let mut placed = false;
        for _attempt in 0..20 {
            let w = rng.gen_range(MIN_SIDE..MAX_SIDE);
            let h = rng.gen_range(MIN_SIDE..MAX_SIDE);
            let x1 = rng.gen_range(0.0..(s as f64 - w));
            let y1 = rng.gen_range(0.0..(s as f64 - h));
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h);
            if objects.iter().all(|(_, existing)| iou(&bbox, existing) < 0.25) {
                let class_id = rng.gen_range(0..NUM_CLASSES);
                draw_shape(&mut image, class_id, &bbox, &mut rng);
                objects.push((class_id, bbox));
                placed = true;
                break;
            }
        }
        if !placed && objects.is_empty() {
            // always at least one object
            let w = rng.gen_range(MIN_SIDE..MAX_SIDE);
            let h = rng.gen_range(MIN_SIDE..MAX_SIDE);
            let x1 = rng.gen_range(0.0..(s as f64 - w));
            let y1 = rng.gen_range(0.0..(s as f64 - h));
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h);
            let class_id = rng.gen_range(0..NUM_CLASSES);
            draw_shape(&mut image, class_id, &bbox, &mut rng);
            objects.push((class_id, bbox));
        }
    }

    // sensor noise
    let normal = Normal::new(0.0, NOISE_SIGMA).unwrap();
    for v in image.data_mut() {
        *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
    }

    SynthSample { image, objects, seed }
}

fn draw_shape(image: &mut ImageF32, class_id: usize, bbox: &BBox, rng: &mut ChaCha8Rng) {
    let hue = &HUES[class_id];
    let color = (
        rng.gen_range(hue[0].0..hue[0].1),
        rng.gen_range(hue[1].0..hue[1].1),
        rng.gen_range(hue[2].0..hue[2].1),
    );
    let s = image.width;
    let (x1, y1, x2, y2) = (bbox.x1, bbox.y1, bbox.x2, bbox.y2);
    let inside = |x: f64, y: f64| -> bool {
        match class_id {
            0 => {
                // disc inscribed in the box
                let (cx, cy) = bbox.center();
                let rx = (x2 - x1) / 2.0;
                let ry = (y2 - y1) / 2.0;
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            1 => true, // filled rectangle
            _ => {
                // upward triangle: apex top-center, base at the bottom
                let t = (y - y1) / (y2 - y1);
                let cx = (x1 + x2) / 2.0;
                let half = (x2 - x1) / 2.0 * t;
                (x - cx).abs() <= half
            }
        }
    };
    let px_lo = x1.floor().max(0.0) as usize;
    let px_hi = (x2.ceil() as usize).min(s);
    let py_lo = y1.floor().max(0.0) as usize;
    let py_hi = (y2.ceil() as usize).min(s);
    for py in py_lo..py_hi {
        for px in px_lo..px_hi {
            let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
            if fx >= x1 && fx < x2 && fy >= y1 && fy < y2 && inside(fx, fy) {
                image.set_pixel(py * s + px, color.0, color.1, color.2);
            }
        }
    }
}

const DEGRADE_RED_SCALE: f32 = 0.4;
const DEGRADE_BLUE_SCALE: f32 = 0.85;
const DEGRADE_VEIL: f32 = 0.25;
const DEGRADE_AIRLIGHT: (f32, f32, f32) = (0.7, 0.9, 0.9);
const DEGRADE_BLUR_SIGMA: f64 = 0.8;
const DEGRADE_CONTRAST: f32 = 0.6;

/// Deterministic underwater degradation: red/blue attenuation, a flat haze
/// veil toward a cyan airlight, slight blur, and luminance-contrast
/// compression about the mean.
pub fn degrade_underwater(img: &ImageF32) -> ImageF32 {
    let mut out = img.clone();
    let n = out.num_pixels();
    for i in 0..n {
        let (r, g, b) = out.pixel(i);
        let (r, b) = (r * DEGRADE_RED_SCALE, b * DEGRADE_BLUE_SCALE);
        out.set_pixel(
            i,
            (1.0 - DEGRADE_VEIL) * r + DEGRADE_VEIL * DEGRADE_AIRLIGHT.0,
            (1.0 - DEGRADE_VEIL) * g + DEGRADE_VEIL * DEGRADE_AIRLIGHT.1,
            (1.0 - DEGRADE_VEIL) * b + DEGRADE_VEIL * DEGRADE_AIRLIGHT.2,
        );
    }
    for c in 0..3 {
        let blurred = gaussian_blur(&out.channel_plane(c), DEGRADE_BLUR_SIGMA);
        out.set_channel_plane(c, &blurred);
    }
    // compress L about its mean
    let mut lab = color::srgb_to_lab(&out);
    let mut l = lab.l_plane();
    let mean = l.data.iter().map(|&v| v as f64).sum::<f64>() / l.data.len() as f64;
    for v in &mut l.data {
        *v = (mean as f32 + DEGRADE_CONTRAST * (*v - mean as f32)).clamp(0.0, 100.0);
    }
    lab.set_l_plane(&l);
    let mut out = color::lab_to_srgb(&lab);
    out.clip_in_place();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::{enhance_pipeline, EnhanceConfig};

    #[test]
    fn dataset_is_deterministic_and_prefix_stable() {
        let a = synth_dataset(5, 42);
        let b = synth_dataset(5, 42);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.objects, y.objects);
        }
        let longer = synth_dataset(8, 42);
        assert_eq!(a[4].image, longer[4].image);
        assert_ne!(synth_dataset(5, 43)[0].image, a[0].image);
    }

    #[test]
    fn samples_satisfy_invariants() {
        for sample in synth_dataset(1000, 7) {
            assert!((1..=4).contains(&sample.objects.len()));
            for (class_id, b) in &sample.objects {
                assert!(*class_id < NUM_CLASSES);
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0);
                assert!(b.x2 <= IMG_SIZE as f64 && b.y2 <= IMG_SIZE as f64);
                assert!(b.x2 - b.x1 >= 8.0 && b.y2 - b.y1 >= 8.0, "min side violated");
            }
            assert!(sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn class_histogram_is_roughly_uniform() {
        let mut counts = [0usize; NUM_CLASSES];
        let mut total = 0usize;
        for sample in synth_dataset(3000, 11) {
            for (class_id, _) in &sample.objects {
                counts[*class_id] += 1;
                total += 1;
            }
        }
        let expect = total as f64 / NUM_CLASSES as f64;
        for (c, &count) in counts.iter().enumerate() {
            let dev = (count as f64 - expect).abs() / expect;
            assert!(dev < 0.05, "class {c} frequency off by {:.1}%", dev * 100.0);
        }
    }

    #[test]
    fn degrade_is_deterministic_and_induces_cyan_cast() {
        let sample = &synth_dataset(1, 3)[0];
        let a = degrade_underwater(&sample.image);
        let b = degrade_underwater(&sample.image);
        assert_eq!(a, b);
        let ratio = |img: &ImageF32| img.channel_mean(0) / img.channel_mean(1).max(1e-9);
        assert!(ratio(&a) < ratio(&sample.image), "red channel was not suppressed");
    }

    #[test]
    fn enhancement_restores_color_balance_on_degraded_samples() {
        let cfg = EnhanceConfig::default();
        let samples = synth_dataset(100, 13);
        let mut restored = 0usize;
        for sample in &samples {
            let ratio = |img: &ImageF32| img.channel_mean(0) / img.channel_mean(1).max(1e-9);
            let clean = ratio(&sample.image);
            let degraded_img = degrade_underwater(&sample.image);
            let degraded = ratio(&degraded_img);
            let enhanced = ratio(&enhance_pipeline(&degraded_img, &cfg));
            if (enhanced - clean).abs() < (degraded - clean).abs() {
                restored += 1;
            }
        }
        assert!(restored >= 95, "only {restored}/100 samples moved closer to the clean ratio");
    }
}
