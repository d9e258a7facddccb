//! Synthetic phantoms: the modified Shepp-Logan head and random
//! ellipse-and-disk "walnut-like" objects used when no dataset is supplied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tomo::ImageGrid;

/// Additive ellipse on the normalized square `[-1, 1]^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Rotation in radians, counter-clockwise.
    pub angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

/// Rasterizes a sum of ellipses, averaging `supersample^2` points per pixel.
pub fn rasterize(ellipses: &[Ellipse], width: usize, supersample: usize) -> Result<ImageGrid> {
    let half = width as f64 / 2.0;
    let ss = supersample.max(1);
    ImageGrid::from_fn(width, |r, c| {
        let mut acc = 0.0;
        for sy in 0..ss {
            for sx in 0..ss {
                let x = (c as f64 + (sx as f64 + 0.5) / ss as f64 - half) / half;
                let y = (half - r as f64 - (sy as f64 + 0.5) / ss as f64) / half;
                acc += ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.intensity)
                    .sum::<f64>();
            }
        }
        acc / (ss * ss) as f64
    })
}

/// Modified (higher-contrast) Shepp-Logan ellipses.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    const E: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    E.iter()
        .map(
            |&(intensity, semi_x, semi_y, center_x, center_y, deg)| Ellipse {
                intensity,
                semi_x,
                semi_y,
                center_x,
                center_y,
                angle: deg.to_radians(),
            },
        )
        .collect()
}

pub fn shepp_logan(width: usize) -> Result<ImageGrid> {
    rasterize(&shepp_logan_ellipses(), width, 3)
}

/// Random walnut-like object: a dense shell, a softer kernel with internal
/// folds, and a few small high-contrast inclusions. Values lie in `[0, 1]` and
/// the support stays inside the reconstruction circle.
pub fn random_phantom(width: usize, seed: u64) -> Result<ImageGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7068_616e_746f_6d21);
    let mut ellipses = Vec::new();
    let sx = rng.random_range(0.55..0.8);
    let sy = rng.random_range(0.55..0.8);
    let rot = rng.random_range(0.0..std::f64::consts::PI);
    let shell = rng.random_range(0.75..0.95);
    ellipses.push(Ellipse {
        intensity: shell,
        semi_x: sx,
        semi_y: sy,
        center_x: 0.0,
        center_y: 0.0,
        angle: rot,
    });
    let thickness = rng.random_range(0.08..0.16);
    let kernel = rng.random_range(0.3..0.5);
    ellipses.push(Ellipse {
        intensity: kernel - shell,
        semi_x: sx - thickness,
        semi_y: sy - thickness,
        center_x: 0.0,
        center_y: 0.0,
        angle: rot,
    });
    let folds = rng.random_range(2..5);
    for _ in 0..folds {
        let r = rng.random_range(0.0..0.3);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        ellipses.push(Ellipse {
            intensity: rng.random_range(-0.3..-0.1),
            semi_x: rng.random_range(0.05..0.2),
            semi_y: rng.random_range(0.03..0.08),
            center_x: r * t.cos(),
            center_y: r * t.sin(),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        });
    }
    let dots = rng.random_range(1..4);
    for _ in 0..dots {
        let r = rng.random_range(0.0..0.35);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = rng.random_range(0.03..0.07);
        ellipses.push(Ellipse {
            intensity: rng.random_range(0.2..0.5),
            semi_x: rad,
            semi_y: rad,
            center_x: r * t.cos(),
            center_y: r * t.sin(),
            angle: 0.0,
        });
    }
    rasterize(&ellipses, width, 2)?.map(|v| v.clamp(0.0, 1.0))
}

/// Centered disk of radius `radius` pixels, anti-aliased by supersampling.
pub fn disk(width: usize, radius: f64, supersample: usize) -> Result<ImageGrid> {
    let r = radius / (width as f64 / 2.0);
    rasterize(
        &[Ellipse {
            intensity: 1.0,
            semi_x: r,
            semi_y: r,
            center_x: 0.0,
            center_y: 0.0,
            angle: 0.0,
        }],
        width,
        supersample,
    )
}
