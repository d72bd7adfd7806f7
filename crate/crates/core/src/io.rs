//! Image and label-map files, dataset manifests and run configuration.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::{ColorSpace, Image, QuantizationSpec};
use crate::error::{Error, Result};
use crate::input::{Regime, RegionAnnotation};
use crate::pipeline::SegmentConfig;
use crate::superpixel::{SlicFeatures, SlicParams};

/// Decodes an 8-bit PNG, PPM or PGM file. Gray stays single-channel, anything
/// else becomes RGB (alpha is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Input(msg) => Error::io(path, msg),
        other => other,
    })
}

/// Decodes an in-memory PNG/PPM/PGM payload.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let img = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::input(e.to_string()))?
        .decode()
        .map_err(|e| Error::input(format!("cannot decode image: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        image::ColorType::L8 | image::ColorType::L16 => {
            Image::from_gray8(w, h, img.to_luma8().as_raw())
        }
        _ => Image::from_rgb8(w, h, img.to_rgb8().as_raw()),
    }
}

/// Encodes an image as 8-bit PNG (gray or RGB).
pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let rgb = image.to_rgb8();
    let mut out = Vec::new();
    image::RgbImage::from_raw(w, h, rgb)
        .ok_or_else(|| Error::input("image buffer size mismatch"))?
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::input(e.to_string()))?;
    Ok(out)
}

/// Reads an 8-bit single-channel label map (gray or palette PNG, or PGM).
/// Zero is unlabeled; other values are remapped to `1..=M` if needed.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<RegionAnnotation> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, raw) = label_samples(&bytes).map_err(|e| Error::io(path, e))?;
    let (annotation, remapped) = RegionAnnotation::from_raw_ids(w, h, &raw)?;
    if remapped {
        log::warn!(
            "{}: region ids remapped to 1..={}",
            path.display(),
            annotation.regions()
        );
    }
    Ok(annotation)
}

/// [`load_label_map`] for an in-memory payload.
pub fn decode_label_map(bytes: &[u8]) -> Result<RegionAnnotation> {
    let (w, h, raw) = label_samples(bytes).map_err(Error::Input)?;
    let (annotation, remapped) = RegionAnnotation::from_raw_ids(w, h, &raw)?;
    if remapped {
        log::warn!("label map ids remapped to 1..={}", annotation.regions());
    }
    Ok(annotation)
}

fn label_samples(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u32>), String> {
    let (w, h, raw) = if bytes.starts_with(b"\x89PNG") {
        read_png_indices(bytes)?
    } else {
        let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
        if img.color() != image::ColorType::L8 {
            return Err("label map must be 8-bit single-channel".into());
        }
        let (w, h) = (img.width() as usize, img.height() as usize);
        (w, h, img.into_luma8().into_raw())
    };
    Ok((w, h, raw.into_iter().map(u32::from).collect()))
}

/// Raw sample values of an 8-bit gray or indexed PNG (palette not applied).
fn read_png_indices(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight
        || !matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed)
    {
        return Err(format!(
            "label map must be 8-bit gray or indexed, got {color:?} at {depth:?}"
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or("label map too large to decode")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        out.extend_from_slice(&row[..w]);
    }
    Ok((w, h, out))
}

/// Distinct display color for each label; 0 is black.
pub fn label_palette() -> Vec<[u8; 3]> {
    (0..256u32)
        .map(|l| {
            if l == 0 {
                return [0, 0, 0];
            }
            // golden-ratio hue walk
            let hue = (f64::from(l) * 0.618_033_988_749_895).fract();
            let sat = if l % 2 == 0 { 0.65 } else { 0.9 };
            let rgb = crate::color::hsv_to_rgb([hue, sat, 0.95]);
            rgb.map(|c| (c * 255.0).round() as u8)
        })
        .collect()
}

/// Encodes labels as an 8-bit indexed PNG whose indices are the labels.
pub fn encode_label_map(width: usize, height: usize, labels: &[u8]) -> Result<Vec<u8>> {
    if labels.len() != width * height {
        return Err(Error::input("label field does not match its dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(label_palette().concat());
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::input(e.to_string()))?;
        writer
            .write_image_data(labels)
            .map_err(|e| Error::input(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_label_map(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    labels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_label_map(width, height, labels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One image with its ground-truth annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotations: Vec<PathBuf>,
}

/// A dataset description, stored as TOML with paths relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a manifest and resolves its paths against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut manifest.entries {
            e.image = base.join(&e.image);
            for a in &mut e.annotations {
                *a = base.join(&*a);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks that every image has an annotation and every file exists.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.annotations.is_empty() {
                return Err(Error::input(format!(
                    "{} has no annotation",
                    e.image.display()
                )));
            }
            for p in std::iter::once(&e.image).chain(&e.annotations) {
                if !p.is_file() {
                    return Err(Error::io(p, "file not found"));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Benchmark settings. Stored as TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    /// Input regimes, e.g. `gt:100`, `bb:50`, `pts:10:50`, `bbp:5`.
    pub regimes: Vec<String>,
    pub colorspace: ColorSpace,
    pub channels: Vec<usize>,
    pub bins: Vec<usize>,
    pub reduce_to_linear: bool,
    pub superpixels: usize,
    pub compactness: f64,
    /// Color space SLIC clusters in: `hsv` (H/S channels) or `lab`.
    pub slic_colorspace: ColorSpace,
    pub exclusion: f64,
    pub click_cost: usize,
    /// Write `refinement.svg` next to the CSV reports.
    pub plot: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rng_seed: 0,
            regimes: [
                "gt:25", "gt:50", "gt:75", "gt:100", "bb:25", "bb:50", "bb:75", "bb:100", "pts:10",
                "pts:15", "pts:20", "bbp:5", "bbp:10", "bbp:15",
            ]
            .map(String::from)
            .to_vec(),
            colorspace: ColorSpace::Hsv,
            channels: vec![0, 1],
            bins: vec![1024, 1024],
            reduce_to_linear: false,
            superpixels: 500,
            compactness: 10.0,
            slic_colorspace: ColorSpace::Hsv,
            exclusion: 0.0,
            click_cost: 2,
            plot: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::io(path, e))?;
        cfg.parsed_regimes()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn parsed_regimes(&self) -> Result<Vec<Regime>> {
        if self.regimes.is_empty() {
            return Err(Error::config("no regimes configured"));
        }
        self.regimes
            .iter()
            .map(|s| {
                let r: Regime = s.parse()?;
                if matches!(r, Regime::Manual { .. }) {
                    return Err(Error::config("manual inputs cannot be benchmarked"));
                }
                Ok(r)
            })
            .collect()
    }

    pub fn segment_config(&self) -> Result<SegmentConfig> {
        if !(0.0..0.5).contains(&self.exclusion) {
            return Err(Error::config(format!(
                "exclusion {} outside [0, 0.5)",
                self.exclusion
            )));
        }
        let features = match self.slic_colorspace {
            ColorSpace::Hsv => SlicFeatures::hsv_hs(),
            ColorSpace::Lab => SlicFeatures::lab(),
            other => {
                return Err(Error::config(format!("SLIC cannot cluster in {other}")));
            }
        };
        Ok(SegmentConfig {
            quantization: QuantizationSpec::new(
                self.colorspace,
                self.channels.clone(),
                self.bins.clone(),
            )?,
            reduce_to_linear: self.reduce_to_linear,
            slic: SlicParams {
                features,
                ..SlicParams::new(self.superpixels, self.compactness)
            },
            click_cost: self.click_cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_png(path: &Path, img: image::DynamicImage) {
        img.save(path).unwrap();
    }

    #[test]
    fn loads_red_png_and_gray_pgm() {
        let dir = tempdir().unwrap();
        let red = dir.path().join("red.png");
        write_png(
            &red,
            image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0])).into(),
        );
        let img = load_image(&red).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert!((0..4).all(|i| img.pixel_at(i) == [1.0, 0.0, 0.0]));

        let gray = dir.path().join("g.pgm");
        fs::write(&gray, b"P5\n3 1\n255\n\x00\x80\xff").unwrap();
        let img = load_image(&gray).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data()[2], 1.0);
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.png");
        let mut bytes = Vec::new();
        image::RgbImage::from_pixel(8, 8, image::Rgb([1, 2, 3]))
            .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Io { .. })));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn label_map_values_and_remap() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png(
            &p,
            image::GrayImage::from_raw(2, 2, vec![1, 2, 2, 0])
                .unwrap()
                .into(),
        );
        assert_eq!(load_label_map(&p).unwrap().regions(), 2);

        write_png(
            &p,
            image::GrayImage::from_raw(2, 2, vec![3, 7, 0, 7])
                .unwrap()
                .into(),
        );
        assert_eq!(load_label_map(&p).unwrap().labels(), &[1, 2, 0, 2]);

        write_png(
            &p,
            image::GrayImage::from_raw(2, 1, vec![0, 0]).unwrap().into(),
        );
        assert!(load_label_map(&p).is_err());

        let pgm = dir.path().join("a.pgm");
        fs::write(&pgm, b"P5\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!(load_label_map(&pgm).unwrap().regions(), 2);

        let rgb = dir.path().join("rgb.png");
        write_png(
            &rgb,
            image::RgbImage::from_pixel(2, 2, image::Rgb([1, 1, 1])).into(),
        );
        assert!(load_label_map(&rgb).is_err());
    }

    #[test]
    fn indexed_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.png");
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 + 1) as u8).collect();
        write_label_map(&p, 10, 6, &labels).unwrap();
        let back = load_label_map(&p).unwrap();
        assert_eq!(back.labels(), &labels[..]);
        assert_eq!(back.regions(), 3);
        // the palette makes it viewable as color
        assert_eq!(image::open(&p).unwrap().color(), image::ColorType::Rgb8);
        assert!(write_label_map(&p, 10, 5, &labels).is_err());
    }

    #[test]
    fn manifest_resolves_and_validates() {
        let dir = tempdir().unwrap();
        write_png(&dir.path().join("i.png"), image::RgbImage::new(2, 2).into());
        write_label_map(dir.path().join("l.png"), 2, 2, &[1, 1, 2, 2]).unwrap();
        let m = dir.path().join("m.toml");
        fs::write(
            &m,
            "name = \"t\"\n[[entries]]\nimage = \"i.png\"\nannotations = [\"l.png\"]\n",
        )
        .unwrap();
        let manifest = DatasetManifest::load(&m).unwrap();
        assert_eq!(manifest.entries[0].image, dir.path().join("i.png"));

        fs::write(
            &m,
            "name = \"t\"\n[[entries]]\nimage = \"i.png\"\nannotations = [\"x.png\"]\n",
        )
        .unwrap();
        assert!(DatasetManifest::load(&m).is_err());
        fs::write(
            &m,
            "name = \"t\"\n[[entries]]\nimage = \"i.png\"\nannotations = []\n",
        )
        .unwrap();
        assert!(DatasetManifest::load(&m).is_err());
    }

    #[test]
    fn run_config_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.parsed_regimes().unwrap().len(), 14);
        let seg = cfg.segment_config().unwrap();
        assert_eq!(seg.quantization.alphabet_size(), 1 << 20);

        let partial: RunConfig =
            toml::from_str("regimes = [\"gt:100\"]\nsuperpixels = 50").unwrap();
        assert_eq!(partial.superpixels, 50);
        assert_eq!(partial.click_cost, 2);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let bad = RunConfig {
            regimes: vec!["gt:0".into()],
            ..RunConfig::default()
        };
        assert!(bad.parsed_regimes().is_err());
    }
}
