//! Contrast-limited adaptive histogram equalization on a single float
//! plane (the CIELAB L channel, range [0,100]).
//!
//! Per-tile 256-bin histograms are clipped at clip * mean-bin-count with
//! the excess redistributed uniformly (float histograms, so redistribution
//! is exact), then per-tile equalization CDFs are bilinearly interpolated
//! per pixel.

use super::Plane;

const BINS: usize = 256;
const L_MAX: f64 = 100.0;

#[inline]
fn bin_of(l: f32) -> usize {
    (((l as f64 / L_MAX) * BINS as f64) as usize).min(BINS - 1)
}

/// Equalize `l` (values in [0,100]) over a tiles_x x tiles_y grid. On
/// images smaller than the grid, the grid shrinks to the image dimensions.
pub fn clahe_plane(l: &Plane, clip: f64, tiles: (usize, usize)) -> Plane {
    let (w, h) = (l.width, l.height);
    let tiles_x = tiles.0.clamp(1, w.max(1));
    let tiles_y = tiles.1.clamp(1, h.max(1));
    let tile_w = w as f64 / tiles_x as f64;
    let tile_h = h as f64 / tiles_y as f64;

    // per-tile clipped histogram -> equalization LUT (bin -> L value)
    let mut luts = vec![vec![0.0f64; BINS]; tiles_x * tiles_y];
    let mut counts = vec![0usize; tiles_x * tiles_y];
    {
        let mut hists = vec![vec![0.0f64; BINS]; tiles_x * tiles_y];
        for y in 0..h {
            let ty = ((y as f64 / tile_h) as usize).min(tiles_y - 1);
            for x in 0..w {
                let tx = ((x as f64 / tile_w) as usize).min(tiles_x - 1);
                let t = ty * tiles_x + tx;
                hists[t][bin_of(l.data[y * w + x])] += 1.0;
                counts[t] += 1;
            }
        }
        for t in 0..tiles_x * tiles_y {
            let count = counts[t] as f64;
            if count == 0.0 {
                continue;
            }
            let limit = (clip * count / BINS as f64).max(1.0);
            let mut excess = 0.0;
            for b in hists[t].iter_mut() {
                if *b > limit {
                    excess += *b - limit;
                    *b = limit;
                }
            }
            let share = excess / BINS as f64;
            let mut cdf = 0.0;
            for (bin, b) in hists[t].iter().enumerate() {
                cdf += *b + share;
                luts[t][bin] = cdf / count * L_MAX;
            }
        }
    }

    // bilinear interpolation between the four surrounding tile LUTs
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let gy = (y as f64 + 0.5) / tile_h - 0.5;
        let ty0 = gy.floor().clamp(0.0, (tiles_y - 1) as f64) as usize;
        let ty1 = (ty0 + 1).min(tiles_y - 1);
        let fy = (gy - ty0 as f64).clamp(0.0, 1.0);
        for x in 0..w {
            let gx = (x as f64 + 0.5) / tile_w - 0.5;
            let tx0 = gx.floor().clamp(0.0, (tiles_x - 1) as f64) as usize;
            let tx1 = (tx0 + 1).min(tiles_x - 1);
            let fx = (gx - tx0 as f64).clamp(0.0, 1.0);
            let bin = bin_of(l.data[y * w + x]);
            let v00 = luts[ty0 * tiles_x + tx0][bin];
            let v01 = luts[ty0 * tiles_x + tx1][bin];
            let v10 = luts[ty1 * tiles_x + tx0][bin];
            let v11 = luts[ty1 * tiles_x + tx1][bin];
            let top = v00 * (1.0 - fx) + v01 * fx;
            let bot = v10 * (1.0 - fx) + v11 * fx;
            out.data[y * w + x] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    out
}
