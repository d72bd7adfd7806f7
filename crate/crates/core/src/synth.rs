//! Synthetic scenes drawn from the piecewise i.i.d. region model: each region
//! has its own discrete color distribution and its pixels are sampled
//! independently from it.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{hsv_to_rgb, Image};
use crate::error::{Error, Result};
use crate::input::RegionAnnotation;

/// Colors private to each region.
const PRIVATE_COLORS: usize = 8;
/// Low-saturation colors shared by every region.
const SHARED_COLORS: usize = 16;

/// A generated image, its exact ground truth and the distributions behind it.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: Image,
    pub annotation: RegionAnnotation,
    /// RGB colors the distributions range over.
    pub palette: Vec<[u8; 3]>,
    /// Per-region probability vectors over `palette` (region `i` at index `i - 1`).
    pub distributions: Vec<Vec<f64>>,
}

impl SyntheticScene {
    /// Smallest total variation between two region distributions.
    pub fn min_pairwise_tv(&self) -> f64 {
        let d = &self.distributions;
        let mut best = f64::INFINITY;
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                let tv = 0.5
                    * d[i]
                        .iter()
                        .zip(&d[j])
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>();
                best = best.min(tv);
            }
        }
        best
    }
}

fn to_rgb8(hsv: [f64; 3]) -> [u8; 3] {
    hsv_to_rgb(hsv).map(|c| (c * 255.0).round() as u8)
}

/// Palette: `SHARED_COLORS` washed-out reds, then `PRIVATE_COLORS` saturated
/// colors per region in a hue band of its own.
fn palette(m: usize) -> Vec<[u8; 3]> {
    let mut colors = Vec::with_capacity(SHARED_COLORS + m * PRIVATE_COLORS);
    for k in 0..SHARED_COLORS {
        let hue = 0.01 * (k % 4) as f64;
        let sat = 0.08 + 0.05 * (k / 4) as f64;
        colors.push(to_rgb8([hue, sat, 0.85]));
    }
    for region in 0..m {
        let center = (region + 1) as f64 / (m + 1) as f64;
        let band = 0.3 / (m + 1) as f64;
        for k in 0..PRIVATE_COLORS {
            let hue = center - band / 2.0 + band * (k / 2) as f64 / 3.0;
            let sat = if k % 2 == 0 { 0.75 } else { 0.95 };
            colors.push(to_rgb8([hue, sat, 0.85]));
        }
    }
    colors
}

/// Region `i` puts mass `v` uniformly on its private colors and `1 - v`
/// uniformly on the shared ones, so every pair is exactly `v` apart in TV.
fn distributions(m: usize, v: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|region| {
            let mut p = vec![0.0; SHARED_COLORS + m * PRIVATE_COLORS];
            p[..SHARED_COLORS].fill((1.0 - v) / SHARED_COLORS as f64);
            let start = SHARED_COLORS + region * PRIVATE_COLORS;
            p[start..start + PRIVATE_COLORS].fill(v / PRIVATE_COLORS as f64);
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse,
    Diamond,
    Rect,
}

impl Shape {
    /// Whether a point with offsets `(dy, dx)` normalized to the half-axes is inside.
    fn contains(self, dy: f64, dx: f64) -> bool {
        match self {
            Shape::Ellipse => dy * dy + dx * dx <= 1.0,
            Shape::Diamond => dy.abs() + dx.abs() <= 1.0,
            Shape::Rect => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        }
    }
}

/// Places foreground shapes on a background (region 1). Region 2 is an
/// ellipse, region 3 a pair of disjoint diamonds, region 4 a rectangle; any
/// further regions cycle through those shapes with a single component.
fn layout(m: usize, width: usize, height: usize, rng: &mut impl Rng) -> Vec<u8> {
    // (label, shape) per grid cell
    let mut pieces = Vec::new();
    for label in 2..=m {
        let shape = match label % 3 {
            2 => Shape::Ellipse,
            0 => Shape::Diamond,
            _ => Shape::Rect,
        };
        pieces.push((label as u8, shape));
        if label == 3 {
            pieces.push((label as u8, shape));
        }
    }
    let cols = (pieces.len() as f64).sqrt().ceil() as usize;
    let rows = pieces.len().div_ceil(cols);
    let (cell_w, cell_h) = (width as f64 / cols as f64, height as f64 / rows as f64);

    let mut labels = vec![1u8; width * height];
    for (slot, &(label, shape)) in pieces.iter().enumerate() {
        let (gr, gc) = (slot / cols, slot % cols);
        let ry = cell_h / 2.0 * rng.gen_range(0.55..0.85);
        let rx = cell_w / 2.0 * rng.gen_range(0.55..0.85);
        let cy = (gr as f64 + 0.5) * cell_h + rng.gen_range(-0.1..0.1) * cell_h;
        let cx = (gc as f64 + 0.5) * cell_w + rng.gen_range(-0.1..0.1) * cell_w;
        for r in 0..height {
            for c in 0..width {
                let (dy, dx) = ((r as f64 + 0.5 - cy) / ry, (c as f64 + 0.5 - cx) / rx);
                if shape.contains(dy, dx) {
                    labels[r * width + c] = label;
                }
            }
        }
    }
    labels
}

/// Draws a scene with `m` regions whose color distributions are pairwise `v`
/// apart in total variation. Everything is a function of `seed`.
pub fn generate_synthetic(
    m: usize,
    width: usize,
    height: usize,
    seed: u64,
    v: f64,
) -> Result<SyntheticScene> {
    if !(2..=255).contains(&m) {
        return Err(Error::input(format!("region count {m} outside [2, 255]")));
    }
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::input(format!("separation {v} outside (0, 1]")));
    }
    if width < 8 || height < 8 {
        return Err(Error::input("synthetic scenes need at least 8x8 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = layout(m, width, height, &mut rng);
    let annotation = RegionAnnotation::new(width, height, labels)?;

    let palette = palette(m);
    let distributions = distributions(m, v);
    let samplers: Vec<WeightedIndex<f64>> = distributions
        .iter()
        .map(|p| WeightedIndex::new(p).expect("positive mass"))
        .collect();
    let mut bytes = Vec::with_capacity(width * height * 3);
    for &l in annotation.labels() {
        let color = palette[samplers[l as usize - 1].sample(&mut rng)];
        bytes.extend_from_slice(&color);
    }
    Ok(SyntheticScene {
        image: Image::from_rgb8(width, height, &bytes)?,
        annotation,
        palette,
        distributions,
    })
}
