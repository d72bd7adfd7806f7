//! Color-space conversion and quantization of intensities onto a discrete
//! product alphabet.
//!
//! All intensities are normalized to `[0, 1]` at ingest, so one binning rule
//! serves every bit depth: channel `k` with `n_k` equidistant bins maps `v` to
//! `min(floor(v * n_k), n_k - 1)`, and the per-channel bins are composed
//! row-major (first selected channel most significant) into a single cell id.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working color space of an image or quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Gray,
    /// CIELAB, rescaled so every component lies in `[0, 1]`.
    Lab,
}

impl ColorSpace {
    pub fn channel_count(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::Hsv | ColorSpace::Lab => 3,
        }
    }
}

impl std::str::FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorSpace::Rgb),
            "hsv" => Ok(ColorSpace::Hsv),
            "gray" | "grey" => Ok(ColorSpace::Gray),
            "lab" => Ok(ColorSpace::Lab),
            other => Err(Error::config(format!("unknown color space `{other}`"))),
        }
    }
}

impl std::fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Hsv => "hsv",
            ColorSpace::Gray => "gray",
            ColorSpace::Lab => "lab",
        };
        f.write_str(s)
    }
}

/// A pixel grid with `channels` interleaved components per pixel, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from row-major interleaved samples.
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        let channels = space.channel_count();
        if width == 0 || height == 0 {
            return Err(Error::input("image must contain at least one pixel"));
        }
        if data.len() != width * height * channels {
            return Err(Error::input(format!(
                "expected {} samples for a {width}x{height}x{channels} image, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            channels,
            space,
            data,
        })
    }

    /// Builds an RGB image from 8-bit samples.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            ColorSpace::Rgb,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            ColorSpace::Gray,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    /// Number of pixels `N`.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_at(&self, index: usize) -> &[f64] {
        let i = index * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Converts the image into another color space.
    ///
    /// Grayscale sources are treated as achromatic RGB. Conversions out of HSV
    /// or Lab are not supported; keep the ingested image around instead.
    pub fn to_space(&self, target: ColorSpace) -> Result<Image> {
        if target == self.space {
            return Ok(self.clone());
        }
        let rgb_of = |px: &[f64]| -> Result<[f64; 3]> {
            match self.space {
                ColorSpace::Rgb => Ok([px[0], px[1], px[2]]),
                ColorSpace::Gray => Ok([px[0], px[0], px[0]]),
                other => Err(Error::config(format!(
                    "cannot convert a {other} image to {target}"
                ))),
            }
        };
        let mut data = Vec::with_capacity(self.len() * target.channel_count());
        for px in self.data.chunks_exact(self.channels) {
            let rgb = rgb_of(px)?;
            match target {
                ColorSpace::Rgb => data.extend_from_slice(&rgb),
                ColorSpace::Hsv => data.extend_from_slice(&rgb_to_hsv(rgb)?),
                ColorSpace::Lab => data.extend_from_slice(&rgb_to_lab_unit(rgb)),
                ColorSpace::Gray => data.push(luma(rgb)),
            }
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: target.channel_count(),
            space: target,
            data,
        })
    }

    /// Keeps only the listed channels, in order. The result is tagged with the
    /// source color space but carries `channels.len()` components per pixel.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Vec<f64>> {
        if let Some(&c) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(Error::config(format!(
                "channel {c} not present in a {}-channel image",
                self.channels
            )));
        }
        let mut out = Vec::with_capacity(self.len() * channels.len());
        for px in self.data.chunks_exact(self.channels) {
            out.extend(channels.iter().map(|&c| px[c]));
        }
        Ok(out)
    }

    /// 8-bit RGB rendering, used for overlays and round-trip tests.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let to8 = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let mut out = Vec::with_capacity(self.len() * 3);
        for px in self.data.chunks_exact(self.channels) {
            match self.space {
                ColorSpace::Gray => out.extend_from_slice(&[to8(px[0]); 3]),
                ColorSpace::Hsv => {
                    let [r, g, b] = hsv_to_rgb([px[0], px[1], px[2]]);
                    out.extend_from_slice(&[to8(r), to8(g), to8(b)]);
                }
                _ => out.extend(px.iter().take(3).map(|&v| to8(v))),
            }
        }
        out
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]).clamp(0.0, 1.0)
}

/// Hexcone RGB to HSV with every output component in `[0, 1]`.
///
/// Hue is reported in turns (`[0, 1)`); achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> Result<[f64; 3]> {
    if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("RGB component {v} outside [0, 1]")));
    }
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let h = if delta == 0.0 {
        0.0
    } else {
        let sector = if max == r {
            ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        };
        let h = sector / 6.0;
        if h >= 1.0 {
            0.0
        } else {
            h
        }
    };
    Ok([h, s, v])
}

/// Inverse of [`rgb_to_hsv`].
pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h * 6.0).rem_euclid(6.0);
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// sRGB (D65) to CIELAB, rescaled to `[0, 1]`: `L/100`, `(a+128)/255`, `(b+128)/255`.
pub fn rgb_to_lab_unit(rgb: [f64; 3]) -> [f64; 3] {
    fn linear(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const EPS: f64 = 216.0 / 24389.0;
        const KAPPA: f64 = 24389.0 / 27.0;
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }
    let [r, g, b] = rgb.map(linear);
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (f(x), f(y), f(z));
    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let bb = 200.0 * (fy - fz);
    [
        (l / 100.0).clamp(0.0, 1.0),
        ((a + 128.0) / 255.0).clamp(0.0, 1.0),
        ((bb + 128.0) / 255.0).clamp(0.0, 1.0),
    ]
}

/// Which channels of which color space are binned, and into how many bins each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizationSpec {
    color_space: ColorSpace,
    channels: Vec<usize>,
    bins: Vec<usize>,
}

impl QuantizationSpec {
    pub fn new(color_space: ColorSpace, channels: Vec<usize>, bins: Vec<usize>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::config("at least one channel must be selected"));
        }
        if channels.len() != bins.len() {
            return Err(Error::config(format!(
                "{} channels selected but {} bin counts given",
                channels.len(),
                bins.len()
            )));
        }
        for (i, &c) in channels.iter().enumerate() {
            if c >= color_space.channel_count() {
                return Err(Error::config(format!(
                    "channel {c} invalid for color space {color_space}"
                )));
            }
            if channels[..i].contains(&c) {
                return Err(Error::config(format!("channel {c} selected twice")));
            }
        }
        if let Some(&b) = bins.iter().find(|&&b| b < 2) {
            return Err(Error::config(format!(
                "every channel needs >= 2 bins, got {b}"
            )));
        }
        let size = bins
            .iter()
            .try_fold(1usize, |acc, &b| acc.checked_mul(b))
            .filter(|&s| s <= u32::MAX as usize)
            .ok_or_else(|| Error::config("alphabet size overflows a 32-bit cell id"))?;
        debug_assert!(size >= 2);
        Ok(QuantizationSpec {
            color_space,
            channels,
            bins,
        })
    }

    /// The default working alphabet: HSV hue and saturation, 1024 bins each.
    pub fn hsv_hs(bins: usize) -> Result<Self> {
        Self::new(ColorSpace::Hsv, vec![0, 1], vec![bins, bins])
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    /// `|X|`, the number of cells in the product alphabet.
    pub fn alphabet_size(&self) -> usize {
        self.bins.iter().product()
    }

    /// Maps every pixel of `image` to its cell id.
    pub fn quantize(&self, image: &Image) -> Result<Vec<u32>> {
        let converted = image.to_space(self.color_space)?;
        let values = converted.select_channels(&self.channels)?;
        Ok(values
            .chunks_exact(self.channels.len())
            .map(|v| cell_index(v, self) as u32)
            .collect())
    }
}

impl std::fmt::Display for QuantizationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bins: Vec<String> = self.bins.iter().map(|b| b.to_string()).collect();
        let chans: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        write!(
            f,
            "{}[{}]:{}",
            self.color_space,
            chans.join(","),
            bins.join("x")
        )
    }
}

/// Cell id of an intensity vector already expressed in the spec's color space
/// and restricted to its selected channels.
pub fn cell_index(intensity: &[f64], spec: &QuantizationSpec) -> usize {
    debug_assert_eq!(intensity.len(), spec.bins.len());
    intensity
        .iter()
        .zip(&spec.bins)
        .fold(0usize, |acc, (&v, &n)| {
            let b = ((v * n as f64).floor() as usize).min(n - 1);
            acc * n + b
        })
}

/// Shrinks the alphabet so that `|X'| <= pixel_budget`, using the same number
/// of bins for every selected channel (the floor of the `d'`-th root of the budget).
pub fn reduce_alphabet(spec: &QuantizationSpec, pixel_budget: usize) -> Result<QuantizationSpec> {
    if pixel_budget < 2 {
        return Err(Error::config(format!(
            "pixel budget {pixel_budget} is below the minimum of 2"
        )));
    }
    if spec.alphabet_size() <= pixel_budget {
        return Ok(spec.clone());
    }
    let d = spec.channels.len() as u32;
    let per_channel = integer_root(pixel_budget, d);
    if per_channel < 2 {
        return Err(Error::config(format!(
            "budget {pixel_budget} cannot grant 2 bins to each of {d} channels"
        )));
    }
    QuantizationSpec::new(
        spec.color_space,
        spec.channels.clone(),
        vec![per_channel; d as usize],
    )
}

/// Largest `b` with `b^d <= n`.
fn integer_root(n: usize, d: u32) -> usize {
    let pow = |b: usize| b.checked_pow(d);
    let mut b = (n as f64).powf(1.0 / f64::from(d)).floor() as usize;
    while pow(b + 1).is_some_and(|p| p <= n) {
        b += 1;
    }
    while b > 0 && pow(b).map_or(true, |p| p > n) {
        b -= 1;
    }
    b
}
