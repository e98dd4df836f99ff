//! Deterministic multi-stage enhancement for degraded underwater imagery.
//!
//! Four sequential phases, none learned: channel-gain color correction
//! toward the green channel, CLAHE on the CIELAB luminance only, a
//! Gaussian-guided soft dehaze, and guided-filter edge refinement with a
//! mild unsharp boost. All hyperparameters are fixed in [`EnhanceConfig`].

mod clahe;
pub mod color;
mod filter;
pub mod io;

pub use clahe::clahe_plane;
pub use color::{lab_to_srgb, srgb_to_lab};
pub use filter::{box_mean, gaussian_blur, guided_filter};

/// H x W x 3 image with float channels in [0,1] at module boundaries,
/// interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "pixel buffer size mismatch");
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> (f32, f32, f32) {
        (self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, i: usize, r: f32, g: f32, b: f32) {
        self.data[3 * i] = r;
        self.data[3 * i + 1] = g;
        self.data[3 * i + 2] = b;
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel_plane(&self, c: usize) -> Plane {
        let mut p = Plane::zeros(self.width, self.height);
        for i in 0..self.num_pixels() {
            p.data[i] = self.data[3 * i + c];
        }
        p
    }

    pub fn set_channel_plane(&mut self, c: usize, plane: &Plane) {
        for i in 0..self.num_pixels() {
            self.data[3 * i + c] = plane.data[i];
        }
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.num_pixels();
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|i| self.data[3 * i + c] as f64).sum::<f64>() / n as f64
    }

    pub fn clip_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Single-channel float plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }
}

/// CIELAB image: L in [0,100], a/b opponent axes, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl LabImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> (f32, f32, f32) {
        (self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, i: usize, l: f32, a: f32, b: f32) {
        self.data[3 * i] = l;
        self.data[3 * i + 1] = a;
        self.data[3 * i + 2] = b;
    }

    pub fn l_plane(&self) -> Plane {
        let mut p = Plane::zeros(self.width, self.height);
        for i in 0..self.width * self.height {
            p.data[i] = self.data[3 * i];
        }
        p
    }

    pub fn set_l_plane(&mut self, l: &Plane) {
        for i in 0..self.width * self.height {
            self.data[3 * i] = l.data[i];
        }
    }
}

/// Fixed, non-learnable hyperparameters of the pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub red_gain_clamp: (f64, f64),
    pub blue_gain_clamp: (f64, f64),
    pub clahe_clip: f64,
    pub clahe_tiles: (usize, usize),
    pub dehaze_omega: f64,
    pub dehaze_t_floor: f64,
    pub dehaze_sigma_divisor: f64,
    pub guided_radius: usize,
    pub guided_eps: f64,
    pub sharpen_beta: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            red_gain_clamp: (1.0, 3.0),
            blue_gain_clamp: (0.5, 1.5),
            clahe_clip: 2.0,
            clahe_tiles: (8, 8),
            dehaze_omega: 0.75,
            dehaze_t_floor: 0.1,
            dehaze_sigma_divisor: 30.0,
            guided_radius: 4,
            guided_eps: 1e-3,
            sharpen_beta: 0.5,
        }
    }
}

/// Gray-world color correction toward the green channel: R and B are
/// rescaled so their means approach the green mean, with clamped gains.
pub fn color_correct(img: &ImageF32, cfg: &EnhanceConfig) -> ImageF32 {
    let mu_r = img.channel_mean(0);
    let mu_g = img.channel_mean(1);
    let mu_b = img.channel_mean(2);
    let g_r = (mu_g / mu_r.max(1e-6)).clamp(cfg.red_gain_clamp.0, cfg.red_gain_clamp.1);
    let g_b = (mu_g / mu_b.max(1e-6)).clamp(cfg.blue_gain_clamp.0, cfg.blue_gain_clamp.1);
    let mut out = img.clone();
    for i in 0..img.num_pixels() {
        let (r, g, b) = img.pixel(i);
        out.set_pixel(
            i,
            ((r as f64 * g_r) as f32).clamp(0.0, 1.0),
            g,
            ((b as f64 * g_b) as f32).clamp(0.0, 1.0),
        );
    }
    out
}

/// CLAHE applied to the CIELAB luminance only; a and b pass through
/// untouched (up to the color-space round trip, which clips to the sRGB
/// gamut).
pub fn clahe_luminance(img: &ImageF32, cfg: &EnhanceConfig) -> ImageF32 {
    lab_to_srgb(&clahe_luminance_lab(img, cfg))
}

/// The Lab-domain half of [`clahe_luminance`], before conversion back to
/// sRGB: only the L plane differs from `srgb_to_lab(img)`.
pub fn clahe_luminance_lab(img: &ImageF32, cfg: &EnhanceConfig) -> LabImage {
    let mut lab = srgb_to_lab(img);
    let equalized = clahe_plane(&lab.l_plane(), cfg.clahe_clip, cfg.clahe_tiles);
    lab.set_l_plane(&equalized);
    lab
}

/// Soft guided dehaze: a Gaussian-smoothed min-channel veil estimates the
/// haze, the brightest-veil pixels give the airlight, and each channel is
/// rescaled by the floored transmission.
pub fn soft_guided_dehaze(img: &ImageF32, cfg: &EnhanceConfig) -> ImageF32 {
    let n = img.num_pixels();
    let mut min_c = Plane::zeros(img.width, img.height);
    for i in 0..n {
        let (r, g, b) = img.pixel(i);
        min_c.data[i] = r.min(g).min(b);
    }
    let sigma = img.width.max(img.height) as f64 / cfg.dehaze_sigma_divisor;
    let veil = gaussian_blur(&min_c, sigma.max(1e-6));

    // airlight: mean color of the top 0.1% brightest veil pixels
    let take = ((n as f64 * 0.001).ceil() as usize).max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| veil.data[b].partial_cmp(&veil.data[a]).unwrap().then(a.cmp(&b)));
    let mut airlight = [0.0f64; 3];
    for &i in &order[..take] {
        let (r, g, b) = img.pixel(i);
        airlight[0] += r as f64;
        airlight[1] += g as f64;
        airlight[2] += b as f64;
    }
    for a in &mut airlight {
        *a /= take as f64;
    }

    let mut out = ImageF32::zeros(img.width, img.height);
    for i in 0..n {
        let t = (1.0 - cfg.dehaze_omega * veil.data[i] as f64).max(cfg.dehaze_t_floor);
        let (r, g, b) = img.pixel(i);
        let recover = |v: f32, a: f64| (((v as f64 - a) / t + a) as f32).clamp(0.0, 1.0);
        out.set_pixel(i, recover(r, airlight[0]), recover(g, airlight[1]), recover(b, airlight[2]));
    }
    out
}

/// Edge-preserving refinement: self-guided filtering denoises homogeneous
/// regions, then an unsharp term re-boosts boundaries.
pub fn edge_refine(img: &ImageF32, cfg: &EnhanceConfig) -> ImageF32 {
    let mut out = ImageF32::zeros(img.width, img.height);
    for c in 0..3 {
        let plane = img.channel_plane(c);
        let q = guided_filter(&plane, &plane, cfg.guided_radius, cfg.guided_eps);
        let blurred = gaussian_blur(&q, 1.0);
        let mut sharp = Plane::zeros(img.width, img.height);
        for i in 0..sharp.data.len() {
            let v = q.data[i] as f64
                + cfg.sharpen_beta * (q.data[i] as f64 - blurred.data[i] as f64);
            sharp.data[i] = (v as f32).clamp(0.0, 1.0);
        }
        out.set_channel_plane(c, &sharp);
    }
    out
}

/// The full pipeline, in order: color correction, luminance CLAHE, soft
/// dehaze, edge refinement. Fully deterministic.
pub fn enhance_pipeline(img: &ImageF32, cfg: &EnhanceConfig) -> ImageF32 {
    enhance_stages(img, cfg).3
}

/// The four stage outputs, for inspection dumps.
pub fn enhance_stages(
    img: &ImageF32,
    cfg: &EnhanceConfig,
) -> (ImageF32, ImageF32, ImageF32, ImageF32) {
    let s1 = color_correct(img, cfg);
    let s2 = clahe_luminance(&s1, cfg);
    let s3 = soft_guided_dehaze(&s2, cfg);
    let s4 = edge_refine(&s3, cfg);
    (s1, s2, s3, s4)
}
