//! Elastic distortion: a smoothed random displacement field applied by
//! bilinear resampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Gaussian smoothing radius in pixels.
    pub sigma: f64,
    /// Displacement scale in pixels.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            alpha: 8.0,
            seed: 0,
        }
    }
}

impl ElasticParams {
    pub fn is_valid(&self) -> bool {
        self.sigma > 0.0 && self.alpha >= 0.0 && self.sigma.is_finite() && self.alpha.is_finite()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable blur with edge samples clamped to the border.
fn blur(field: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * field[y * w + clamp(x as i64 + i as i64 - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp[clamp(y as i64 + i as i64 - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel `(dx, dy)` offsets in pixels, each component within `[-alpha, alpha]`.
pub fn displacement_field(h: usize, w: usize, params: &ElasticParams) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::derived(params.seed, &[0xE1A5]);
    let mut uniform = || (0..h * w).map(|_| r.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    let (ux, uy) = (uniform(), uniform());
    let kernel = gaussian_kernel(params.sigma);
    let scale = |v: Vec<f64>| v.into_iter().map(|d| d * params.alpha).collect::<Vec<_>>();
    (scale(blur(&ux, h, w, &kernel)), scale(blur(&uy, h, w, &kernel)))
}

/// Warps an `h`×`w` image; samples falling outside the frame read as background 0.
pub fn elastic_deform(image: &[f32], h: usize, w: usize, params: &ElasticParams) -> Vec<f32> {
    assert_eq!(image.len(), h * w, "image size");
    if params.alpha == 0.0 {
        return image.to_vec();
    }
    let (dx, dy) = displacement_field(h, w, params);
    let read = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            image[y as usize * w + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + dx[i];
            let sy = y as f64 + dy[i];
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = read(y0, x0) * (1.0 - fx) + read(y0, x0 + 1) * fx;
            let bottom = read(y0 + 1, x0) * (1.0 - fx) + read(y0 + 1, x0 + 1) * fx;
            out[i] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
    out
}
