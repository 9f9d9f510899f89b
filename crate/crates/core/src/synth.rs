//! Procedural grayscale images with natural-image-like statistics.
//!
//! A dead-leaves model: occluding discs and rectangles with a power-law size
//! distribution, each shaded by a linear gradient and optionally striped,
//! followed by mild sensor noise and a 3×3 blur. Useful as a training and test
//! corpus when no photographs are available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image_io::GrayImage;

#[derive(Debug, Clone, Copy)]
struct Leaf {
    cx: f64,
    cy: f64,
    r: f64,
    square: bool,
    base: f64,
    gx: f64,
    gy: f64,
    stripe: Option<(f64, f64, f64)>,
}

impl Leaf {
    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if self.square {
            dx.abs() <= self.r && dy.abs() <= self.r
        } else {
            dx * dx + dy * dy <= self.r * self.r
        }
    }

    fn shade(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let mut v = self.base + self.gx * dx + self.gy * dy;
        if let Some((fx, fy, amp)) = self.stripe {
            v += amp * (fx * dx + fy * dy).sin();
        }
        v
    }
}

/// Deterministic `width × height` dead-leaves image for `seed`.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let r_min = 2.0;
    let r_max = 0.35 * w.max(h);
    let count = (6.0 * w * h / (r_min * r_max)).ceil() as usize;
    // Leaves are stored front to back: the first leaf covering a pixel wins.
    let leaves: Vec<Leaf> = (0..count.min(6000))
        .map(|_| {
            // Density ∝ r^-3 on [r_min, r_max] (scale-invariant occlusion).
            let u: f64 = rng.random();
            let inv = 1.0 / (r_min * r_min) - u * (1.0 / (r_min * r_min) - 1.0 / (r_max * r_max));
            let r = 1.0 / inv.sqrt();
            let stripe = if rng.random_bool(0.2) {
                let period = rng.random_range(3.0..12.0);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / period;
                Some((k * angle.cos(), k * angle.sin(), rng.random_range(5.0..30.0)))
            } else {
                None
            };
            let slope = 40.0 / r.max(8.0);
            Leaf {
                cx: rng.random_range(-0.1 * w..1.1 * w),
                cy: rng.random_range(-0.1 * h..1.1 * h),
                r,
                square: rng.random_bool(0.3),
                base: rng.random_range(20.0..235.0),
                gx: rng.random_range(-slope..slope),
                gy: rng.random_range(-slope..slope),
                stripe,
            }
        })
        .collect();
    let background = rng.random_range(60.0..190.0);
    let noise = Normal::new(0.0, 2.0).expect("valid deviation");
    let mut raw = vec![0.0; width * height];
    for row in 0..height {
        for col in 0..width {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let v = leaves
                .iter()
                .find(|l| l.covers(x, y))
                .map_or(background, |l| l.shade(x, y));
            raw[row * width + col] = v + noise.sample(&mut rng);
        }
    }
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, c) = (row as i64 + dr, col as i64 + dc);
                    if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
                        let wgt = if dr == 0 && dc == 0 { 4.0 } else if dr == 0 || dc == 0 { 2.0 } else { 1.0 };
                        acc += wgt * raw[r as usize * width + c as usize];
                        n += wgt;
                    }
                }
            }
            pixels.push((acc / n).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage { width, height, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = dead_leaves(64, 48, 11);
        assert_eq!(a, dead_leaves(64, 48, 11));
        assert_ne!(a, dead_leaves(64, 48, 12));
        let (lo, hi) = a.pixels.iter().fold((255, 0), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        assert!(hi - lo > 50, "range {lo}..{hi}");
    }
}
