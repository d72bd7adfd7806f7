//! User-labeled pixel sets and the quantized histograms built from them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::color::{Image, QuantizationSpec};
use crate::error::{Error, Result};

/// A pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub const fn new(row: usize, col: usize) -> Self {
        Pixel { row, col }
    }

    /// Raster index in an image of the given width.
    pub fn index(self, width: usize) -> usize {
        self.row * width + self.col
    }
}

impl From<(usize, usize)> for Pixel {
    fn from((row, col): (usize, usize)) -> Self {
        Pixel { row, col }
    }
}

/// Where a training set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    GtFraction,
    BbFraction,
    SeedSquares,
    BbPerturbed,
    Manual,
}

/// The user-labeled pixels `T_i` of one region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelSet {
    label: usize,
    pixels: Vec<Pixel>,
    source: InputSource,
}

impl PixelSet {
    /// Validates and deduplicates a pixel list (first occurrence kept).
    pub fn new(
        label: usize,
        pixels: impl IntoIterator<Item = Pixel>,
        source: InputSource,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if label == 0 {
            return Err(Error::input("region labels start at 1"));
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for p in pixels {
            if p.row >= height || p.col >= width {
                return Err(Error::input(format!(
                    "pixel ({}, {}) outside {width}x{height} image",
                    p.row, p.col
                )));
            }
            if seen.insert(p) {
                kept.push(p);
            }
        }
        if kept.is_empty() {
            return Err(Error::input(format!(
                "region {label} has no labeled pixels"
            )));
        }
        Ok(PixelSet {
            label,
            pixels: kept,
            source,
        })
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn source(&self) -> InputSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Normalized empirical distribution over the cells of a quantization spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    spec: QuantizationSpec,
    mass: Vec<f64>,
    support_count: usize,
}

impl Histogram {
    /// Counts cell ids and normalizes by their number.
    pub fn from_cells(
        spec: &QuantizationSpec,
        cells: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let size = spec.alphabet_size();
        let mut counts = vec![0u64; size];
        let mut total = 0usize;
        for c in cells {
            let c = c as usize;
            if c >= size {
                return Err(Error::input(format!("cell {c} outside alphabet of {size}")));
            }
            counts[c] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::input("cannot build a histogram from zero pixels"));
        }
        // A true division is correctly rounded, so equal count ratios in two
        // histograms give bit-identical masses and Scheffé ties stay ties.
        let total_f = total as f64;
        Ok(Histogram {
            spec: spec.clone(),
            mass: counts.into_iter().map(|c| c as f64 / total_f).collect(),
            support_count: total,
        })
    }

    /// Builds from an explicit probability vector (normalized here).
    pub fn from_mass(
        spec: &QuantizationSpec,
        mass: Vec<f64>,
        support_count: usize,
    ) -> Result<Self> {
        if mass.len() != spec.alphabet_size() {
            return Err(Error::input(format!(
                "mass has {} entries, alphabet has {}",
                mass.len(),
                spec.alphabet_size()
            )));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::input(
                "histogram mass must be finite and non-negative",
            ));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::input("histogram mass sums to zero"));
        }
        if support_count == 0 {
            return Err(Error::input("support count must be positive"));
        }
        Ok(Histogram {
            spec: spec.clone(),
            mass: mass.into_iter().map(|m| m / total).collect(),
            support_count,
        })
    }

    /// Histogram of a pixel set given the image's precomputed cell ids.
    pub fn from_pixel_set(
        set: &PixelSet,
        cells: &[u32],
        width: usize,
        spec: &QuantizationSpec,
    ) -> Result<Self> {
        Self::from_cells(spec, set.pixels().iter().map(|p| cells[p.index(width)]))
    }

    pub fn spec(&self) -> &QuantizationSpec {
        &self.spec
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn support_count(&self) -> usize {
        self.support_count
    }

    /// Total mass on the cells where `member` is true.
    pub fn mass_of(&self, member: impl Fn(usize) -> bool) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .filter(|(q, _)| member(*q))
            .map(|(_, m)| m)
            .sum()
    }
}

/// `Q_i(q) = |{X in T_i : cell(X) = q}| / |T_i|`.
pub fn build_histogram(
    set: &PixelSet,
    image: &Image,
    spec: &QuantizationSpec,
) -> Result<Histogram> {
    let width = image.width();
    for p in set.pixels() {
        if p.row >= image.height() || p.col >= width {
            return Err(Error::input("pixel set does not fit the image"));
        }
    }
    let cells = spec.quantize(image)?;
    Histogram::from_pixel_set(set, &cells, width, spec)
}

/// Half the L1 distance between two histograms over the same alphabet.
pub fn total_variation(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.spec != h2.spec {
        return Err(Error::input(format!(
            "histograms over different alphabets ({} vs {})",
            h1.spec, h2.spec
        )));
    }
    let l1: f64 = h1
        .mass
        .iter()
        .zip(&h2.mass)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * l1).min(1.0))
}

/// Smallest pairwise total variation and the (1-based) pair attaining it;
/// ties go to the lexicographically smallest pair.
pub fn min_pairwise_tv(hists: &[Histogram]) -> Result<(f64, (usize, usize))> {
    if hists.len() < 2 {
        return Err(Error::input(format!(
            "need at least two histograms, got {}",
            hists.len()
        )));
    }
    let mut best = (f64::INFINITY, (0, 0));
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            let v = total_variation(&hists[i], &hists[j])?;
            if v < best.0 {
                best = (v, (i + 1, j + 1));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::ColorSpace;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> QuantizationSpec {
        QuantizationSpec::new(ColorSpace::Gray, vec![0], vec![n]).unwrap()
    }

    fn hist(m: &[f64]) -> Histogram {
        Histogram::from_mass(&spec(m.len()), m.to_vec(), 1).unwrap()
    }

    /// max over every subset A of |h1(A) - h2(A)|.
    fn brute_force_scheffe(h1: &[f64], h2: &[f64]) -> f64 {
        let n = h1.len();
        (0u32..1 << n)
            .map(|mask| {
                (0..n)
                    .filter(|q| mask >> q & 1 == 1)
                    .map(|q| h1[q] - h2[q])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn point_mass_and_split() {
        let h = Histogram::from_cells(&spec(4), [2, 2, 2, 2]).unwrap();
        assert_eq!(h.mass(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(h.support_count(), 4);
        let h = Histogram::from_cells(&spec(4), [0, 0, 1, 1]).unwrap();
        assert_eq!(h.mass(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn build_from_image() {
        let img = Image::from_gray8(2, 2, &[0, 80, 200, 255]).unwrap();
        let set = PixelSet::new(
            1,
            [Pixel::new(0, 0), Pixel::new(1, 0), Pixel::new(1, 1)],
            InputSource::Manual,
            2,
            2,
        )
        .unwrap();
        let h = build_histogram(&set, &img, &spec(4)).unwrap();
        assert_eq!(h.support_count(), 3);
        assert_abs_diff_eq!(h.mass()[0], 1.0 / 3.0);
        assert_abs_diff_eq!(h.mass()[3], 2.0 / 3.0);
    }

    #[test]
    fn pixel_set_validation() {
        let empty = PixelSet::new(1, [], InputSource::Manual, 4, 4);
        assert!(matches!(empty, Err(Error::Input(_))));
        assert!(PixelSet::new(1, [Pixel::new(4, 0)], InputSource::Manual, 4, 4).is_err());
        assert!(PixelSet::new(0, [Pixel::new(0, 0)], InputSource::Manual, 4, 4).is_err());
        let dup = PixelSet::new(
            2,
            [Pixel::new(1, 1), Pixel::new(0, 0), Pixel::new(1, 1)],
            InputSource::Manual,
            4,
            4,
        )
        .unwrap();
        assert_eq!(dup.pixels(), &[Pixel::new(1, 1), Pixel::new(0, 0)]);
    }

    #[test]
    fn tv_examples() {
        let a = hist(&[0.7, 0.3]);
        let b = hist(&[0.4, 0.6]);
        assert_abs_diff_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(
            total_variation(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0])).unwrap(),
            1.0
        );
        let oracle = brute_force_scheffe(&[0.7, 0.3], &[0.4, 0.6]);
        assert_abs_diff_eq!(oracle, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(total_variation(&a, &b).unwrap(), oracle, epsilon = 1e-12);
        assert!(total_variation(&a, &hist(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn min_pairwise_examples() {
        let same = hist(&[0.5, 0.5, 0.0]);
        let other = hist(&[0.0, 0.0, 1.0]);
        assert_eq!(
            min_pairwise_tv(&[same.clone(), same.clone(), other]).unwrap(),
            (0.0, (1, 2))
        );
        // pairwise TVs: (1,2)=0.5, (1,3)=0.8, (2,3)=0.3 (exhaustive scan by hand)
        let hs = [
            hist(&[1.0, 0.0, 0.0]),
            hist(&[0.5, 0.5, 0.0]),
            hist(&[0.2, 0.7, 0.1]),
        ];
        let (v, pair) = min_pairwise_tv(&hs).unwrap();
        assert_abs_diff_eq!(v, 0.3, epsilon = 1e-12);
        assert_eq!(pair, (2, 3));
        let (v, pair) = min_pairwise_tv(&hs[..2]).unwrap();
        assert_abs_diff_eq!(v, total_variation(&hs[0], &hs[1]).unwrap());
        assert_eq!(pair, (1, 2));
        assert!(min_pairwise_tv(&hs[..1]).is_err());
    }

    /// Two-cell source with P(cell 0) = 0.9 and 200 draws: the probability
    /// that the empirical mass of cell 0 leaves [0.8, 0.97] is the binomial
    /// tail sum, computed exactly here.
    #[test]
    fn two_cell_sampling_concentrates() {
        let (n, p) = (200u64, 0.9f64);
        let ln_choose =
            |k: u64| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
        let outside: f64 = (0..=n)
            .filter(|&k| {
                let f = k as f64 / n as f64;
                !(0.8..=0.97).contains(&f)
            })
            .map(|k| (ln_choose(k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
            .sum();
        assert!(outside <= 0.01, "tail mass {outside}");

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut misses = 0;
        for _ in 0..200 {
            let cells: Vec<u32> = (0..n).map(|_| u32::from(rng.gen::<f64>() >= p)).collect();
            let h = Histogram::from_cells(&spec(2), cells).unwrap();
            if !(0.8..=0.97).contains(&h.mass()[0]) {
                misses += 1;
            }
        }
        assert!(misses <= 10);
    }

    fn mass_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n)
            .prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn tv_matches_scheffe_maximum(n in 2usize..=12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let (ha, hb) = (hist(&a), hist(&b));
            let tv = total_variation(&ha, &hb).unwrap();
            prop_assert!((tv - brute_force_scheffe(ha.mass(), hb.mass())).abs() < 1e-12);
            prop_assert!((tv - total_variation(&hb, &ha).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn tv_triangle(a in mass_strategy(6), b in mass_strategy(6), c in mass_strategy(6)) {
            let (a, b, c) = (hist(&a), hist(&b), hist(&c));
            let ab = total_variation(&a, &b).unwrap();
            let bc = total_variation(&b, &c).unwrap();
            let ac = total_variation(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn histogram_mass_sums_to_one(cells in proptest::collection::vec(0u32..37, 1..500)) {
            let h = Histogram::from_cells(&spec(37), cells.iter().copied()).unwrap();
            prop_assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(h.mass().iter().all(|&m| m >= 0.0));
        }
    }
}
