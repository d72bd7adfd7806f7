//! Ground-truth annotations and the simulated user-input regimes derived from
//! them: labeled-pixel fractions of masks or boxes, seed squares, and
//! perturbed boxes.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{InputSource, Pixel, PixelSet};

/// Random generator used for every simulated input (ChaCha8, seeded from a `u64`).
pub type InputRng = ChaCha8Rng;

/// A ground-truth label field with labels `1..=M` (0 = unlabeled).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    m: usize,
    regions: Vec<Vec<Pixel>>,
}

impl RegionAnnotation {
    /// Validates a label field whose labels already form `1..=M`.
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::input("label field does not match its dimensions"));
        }
        let m = labels.iter().copied().max().unwrap_or(0) as usize;
        if m == 0 {
            return Err(Error::input("label field contains no labeled pixel"));
        }
        let mut regions = vec![Vec::new(); m];
        for (i, &l) in labels.iter().enumerate() {
            if l > 0 {
                regions[l as usize - 1].push(Pixel::new(i / width, i % width));
            }
        }
        if let Some(i) = regions.iter().position(|r| r.is_empty()) {
            return Err(Error::input(format!(
                "labels are not contiguous: region {} is empty",
                i + 1
            )));
        }
        Ok(RegionAnnotation {
            width,
            height,
            labels,
            m,
            regions,
        })
    }

    /// Remaps arbitrary non-zero ids onto `1..=M`, keeping their relative
    /// order. Returns the annotation and whether any id changed.
    pub fn from_raw_ids(width: usize, height: usize, raw: &[u32]) -> Result<(Self, bool)> {
        let distinct: std::collections::BTreeSet<u32> =
            raw.iter().copied().filter(|&v| v != 0).collect();
        if distinct.len() > 255 {
            return Err(Error::input(format!(
                "{} regions found; at most 255 are supported",
                distinct.len()
            )));
        }
        let map: std::collections::HashMap<u32, u8> = distinct
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i as u8 + 1))
            .collect();
        let changed = map.iter().any(|(&v, &id)| v != u32::from(id));
        let labels = raw
            .iter()
            .map(|v| if *v == 0 { 0 } else { map[v] })
            .collect();
        Ok((Self::new(width, height, labels)?, changed))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of regions `M`.
    pub fn regions(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_at(&self, p: Pixel) -> u8 {
        self.labels[p.index(self.width)]
    }

    /// Pixels of region `label` (1-based).
    pub fn region(&self, label: usize) -> &[Pixel] {
        &self.regions[label - 1]
    }
}

/// Axis-aligned box given by its top-left and bottom-right corners (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub r1: usize,
    pub c1: usize,
    pub r2: usize,
    pub c2: usize,
}

impl BoundingBox {
    pub fn new(r1: usize, c1: usize, r2: usize, c2: usize) -> Result<Self> {
        if r1 > r2 || c1 > c2 {
            return Err(Error::input(format!(
                "box corners ({r1}, {c1}) - ({r2}, {c2}) are not ordered"
            )));
        }
        Ok(BoundingBox { r1, c1, r2, c2 })
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.r2 < height && self.c2 < width
    }

    pub fn area(&self) -> usize {
        (self.r2 - self.r1 + 1) * (self.c2 - self.c1 + 1)
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        (self.r1..=self.r2).flat_map(move |r| (self.c1..=self.c2).map(move |c| Pixel::new(r, c)))
    }
}

/// Minimal enclosing box of a non-empty pixel set.
pub fn tight_bbox(pixels: &[Pixel]) -> Result<BoundingBox> {
    let first = pixels
        .first()
        .ok_or_else(|| Error::input("bounding box of an empty region"))?;
    let mut b = BoundingBox {
        r1: first.row,
        c1: first.col,
        r2: first.row,
        c2: first.col,
    };
    for p in pixels {
        b.r1 = b.r1.min(p.row);
        b.r2 = b.r2.max(p.row);
        b.c1 = b.c1.min(p.col);
        b.c2 = b.c2.max(p.col);
    }
    Ok(b)
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 100.0 {
        Ok(())
    } else {
        Err(Error::input(format!("fraction {f}% outside (0, 100]")))
    }
}

/// Uniform sample without replacement of `max(1, floor(|pixels| f / 100))`
/// pixels, returned in their original order.
pub fn sample_fraction(pixels: &[Pixel], f: f64, rng: &mut impl Rng) -> Result<Vec<Pixel>> {
    check_fraction(f)?;
    if pixels.is_empty() {
        return Ok(Vec::new());
    }
    let size = ((pixels.len() as f64 * f / 100.0).floor() as usize).clamp(1, pixels.len());
    if size == pixels.len() {
        return Ok(pixels.to_vec());
    }
    let mut picked = index::sample(rng, pixels.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pixels[i]).collect())
}

/// Moves each box coordinate uniformly within `±(extent · p / 200)` of its
/// value (row coordinates use the box height, column coordinates its width),
/// rounds, clamps to the image, and swaps inverted corners.
pub fn perturb_bbox(
    bbox: BoundingBox,
    p: f64,
    rng: &mut impl Rng,
    width: usize,
    height: usize,
) -> Result<BoundingBox> {
    if !(p >= 0.0) {
        return Err(Error::input(format!(
            "perturbation {p}% must be non-negative"
        )));
    }
    if !bbox.fits(width, height) {
        return Err(Error::input("box does not fit the image"));
    }
    if p == 0.0 {
        return Ok(bbox);
    }
    let half_r = (bbox.r2 - bbox.r1) as f64 * p / 200.0;
    let half_c = (bbox.c2 - bbox.c1) as f64 * p / 200.0;
    let mut draw = |v: usize, half: f64, limit: usize| -> usize {
        let x = if half > 0.0 {
            rng.gen_range(v as f64 - half..=v as f64 + half)
        } else {
            v as f64
        };
        x.round().clamp(0.0, (limit - 1) as f64) as usize
    };
    let r1 = draw(bbox.r1, half_r, height);
    let c1 = draw(bbox.c1, half_c, width);
    let r2 = draw(bbox.r2, half_r, height);
    let c2 = draw(bbox.c2, half_c, width);
    Ok(BoundingBox {
        r1: r1.min(r2),
        c1: c1.min(c2),
        r2: r1.max(r2),
        c2: c1.max(c2),
    })
}

/// `side x side` square starting `side / 2` rows and columns before `seed`,
/// clipped to the image. For even sides the seed sits just below and right
/// of the geometric center.
pub fn seed_square(seed: Pixel, side: usize, width: usize, height: usize) -> BoundingBox {
    let half = side / 2;
    let r1 = seed.row.saturating_sub(half);
    let c1 = seed.col.saturating_sub(half);
    let r2 = (seed.row + side - half - 1).min(height - 1);
    let c2 = (seed.col + side - half - 1).min(width - 1);
    BoundingBox { r1, c1, r2, c2 }
}

/// Draws `t` seeds uniformly without replacement from `region` and returns the
/// union of the squares around them. Squares may cover pixels of other regions.
pub fn seed_squares(
    region: &[Pixel],
    t: usize,
    side: usize,
    rng: &mut impl Rng,
    width: usize,
    height: usize,
) -> Result<Vec<Pixel>> {
    if t == 0 || side == 0 {
        return Err(Error::input("seed count and square side must be positive"));
    }
    if region.is_empty() {
        return Err(Error::input("cannot plant seeds in an empty region"));
    }
    let t = if t > region.len() {
        log::warn!(
            "{t} seeds requested from a region of {} pixels; using {}",
            region.len(),
            region.len()
        );
        region.len()
    } else {
        t
    };
    let mut covered = vec![false; width * height];
    let mut out = Vec::new();
    for i in index::sample(rng, region.len(), t) {
        for p in seed_square(region[i], side, width, height).pixels() {
            let k = p.index(width);
            if !covered[k] {
                covered[k] = true;
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// How the training sets are derived from the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// `f%` of each ground-truth mask.
    GtFraction { f: f64 },
    /// `f%` of each tight bounding box.
    BbFraction { f: f64 },
    /// `t` seeds per region, each expanded to a `side x side` square.
    SeedSquares { t: usize, side: usize },
    /// Boxes with corners perturbed by `p%`, of which `f%` is sampled.
    BbPerturbed { p: f64, f: f64 },
    /// Explicit user-provided sets.
    Manual { sets: Vec<PixelSet> },
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        match self {
            Regime::GtFraction { f } | Regime::BbFraction { f } => check_fraction(*f),
            Regime::SeedSquares { t, side } => {
                if *t == 0 || *side == 0 {
                    Err(Error::input("seed regime needs t >= 1 and side >= 1"))
                } else {
                    Ok(())
                }
            }
            Regime::BbPerturbed { p, f } => {
                check_fraction(*f)?;
                if *p >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::input("perturbation must be non-negative"))
                }
            }
            Regime::Manual { sets } => {
                if sets.is_empty() {
                    Err(Error::input("manual regime without pixel sets"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Short family name used in reports (`gt`, `bb`, `pts`, `bbp`, `manual`).
    pub fn family(&self) -> &'static str {
        match self {
            Regime::GtFraction { .. } => "gt",
            Regime::BbFraction { .. } => "bb",
            Regime::SeedSquares { .. } => "pts",
            Regime::BbPerturbed { .. } => "bbp",
            Regime::Manual { .. } => "manual",
        }
    }

    /// The swept parameter of the regime (`f`, `t` or `p`).
    pub fn parameter(&self) -> f64 {
        match self {
            Regime::GtFraction { f } | Regime::BbFraction { f } => *f,
            Regime::SeedSquares { t, .. } => *t as f64,
            Regime::BbPerturbed { p, .. } => *p,
            Regime::Manual { sets } => sets.len() as f64,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::GtFraction { f: x } => write!(f, "gt:{x}"),
            Regime::BbFraction { f: x } => write!(f, "bb:{x}"),
            Regime::SeedSquares { t, side } => write!(f, "pts:{t}:{side}"),
            Regime::BbPerturbed { p, f: x } => write!(f, "bbp:{p}:{x}"),
            Regime::Manual { sets } => write!(f, "manual:{}", sets.len()),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    /// Parses `gt:F`, `bb:F`, `pts:T[:SIDE]`, `bbp:P[:F]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::input(format!("regime `{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::input(format!("regime `{s}`: {e}")))
        };
        let regime = match parts[0] {
            "gt" => Regime::GtFraction { f: num(1)? },
            "bb" => Regime::BbFraction { f: num(1)? },
            "pts" => Regime::SeedSquares {
                t: num(1)? as usize,
                side: if parts.len() > 2 {
                    num(2)? as usize
                } else {
                    50
                },
            },
            "bbp" => Regime::BbPerturbed {
                p: num(1)?,
                f: if parts.len() > 2 { num(2)? } else { 100.0 },
            },
            other => return Err(Error::input(format!("unknown regime `{other}`"))),
        };
        if parts.len() > 3 || (matches!(parts[0], "gt" | "bb") && parts.len() > 2) {
            return Err(Error::input(format!("regime `{s}` has too many fields")));
        }
        regime.validate()?;
        Ok(regime)
    }
}

/// Independent stream for region `label`: seed `rng_seed ^ label`.
pub fn region_rng(rng_seed: u64, label: usize) -> InputRng {
    InputRng::seed_from_u64(rng_seed ^ label as u64)
}

/// Builds one training set per annotated region under `regime`.
pub fn training_sets(
    annotation: &RegionAnnotation,
    regime: &Regime,
    rng_seed: u64,
) -> Result<Vec<PixelSet>> {
    regime.validate()?;
    let (w, h) = (annotation.width, annotation.height);
    if let Regime::Manual { sets } = regime {
        return Ok(sets.clone());
    }
    (1..=annotation.m)
        .map(|label| {
            let mut rng = region_rng(rng_seed, label);
            let region = annotation.region(label);
            let (pixels, source) = match regime {
                Regime::GtFraction { f } => (
                    sample_fraction(region, *f, &mut rng)?,
                    InputSource::GtFraction,
                ),
                Regime::BbFraction { f } => {
                    let boxed: Vec<Pixel> = tight_bbox(region)?.pixels().collect();
                    (
                        sample_fraction(&boxed, *f, &mut rng)?,
                        InputSource::BbFraction,
                    )
                }
                Regime::BbPerturbed { p, f } => {
                    let b = perturb_bbox(tight_bbox(region)?, *p, &mut rng, w, h)?;
                    let boxed: Vec<Pixel> = b.pixels().collect();
                    (
                        sample_fraction(&boxed, *f, &mut rng)?,
                        InputSource::BbPerturbed,
                    )
                }
                Regime::SeedSquares { t, side } => (
                    seed_squares(region, *t, *side, &mut rng, w, h)?,
                    InputSource::SeedSquares,
                ),
                Regime::Manual { .. } => unreachable!(),
            };
            PixelSet::new(label, pixels, source, w, h).map_err(|_| {
                Error::input(format!(
                    "regime {regime} left region {label} without pixels"
                ))
            })
        })
        .collect()
}
