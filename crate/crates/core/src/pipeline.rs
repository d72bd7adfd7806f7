//! End-to-end segmentation: training sets to histograms, histograms to a DGL
//! test, and one test decision per superpixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{reduce_alphabet, Image, QuantizationSpec};
use crate::dgl::{DecisionStats, DglTest};
use crate::error::{Error, Result};
use crate::histogram::{Histogram, PixelSet};
use crate::superpixel::{slic, SlicParams, SuperpixelPartition};

/// Largest alphabet the pipeline will allocate histograms for (2^24 cells).
pub const MAX_ALPHABET: usize = 1 << 24;

/// Everything that determines a segmentation besides the image and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub quantization: QuantizationSpec,
    /// Shrink the alphabet to at most `N` cells before testing.
    pub reduce_to_linear: bool,
    pub slic: SlicParams,
    /// Clicks charged per superpixel relabel.
    pub click_cost: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            quantization: QuantizationSpec::hsv_hs(1024).expect("valid default alphabet"),
            reduce_to_linear: false,
            slic: SlicParams::default(),
            click_cost: 2,
        }
    }
}

impl SegmentConfig {
    /// The alphabet actually used for an image of `pixels` pixels.
    pub fn effective_spec(&self, pixels: usize) -> Result<QuantizationSpec> {
        let spec = if self.reduce_to_linear {
            reduce_alphabet(&self.quantization, pixels)?
        } else {
            self.quantization.clone()
        };
        if spec.alphabet_size() > MAX_ALPHABET {
            return Err(Error::config(format!(
                "alphabet of {} cells exceeds the limit of {MAX_ALPHABET}; reduce the bins",
                spec.alphabet_size()
            )));
        }
        Ok(spec)
    }
}

/// Labels and test statistics for every superpixel of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub partition: SuperpixelPartition,
    /// 1-based region label of each superpixel.
    pub superpixel_labels: Vec<usize>,
    /// Per-pixel labels derived from `superpixel_labels`.
    pub pixel_labels: Vec<u8>,
    pub stats: Vec<DecisionStats>,
    /// Superpixels whose label was set by the user rather than the test.
    pub overridden: Vec<bool>,
    /// Number of hypotheses `M`.
    pub regions: usize,
    /// Clicks spent on relabeling so far.
    pub clicks: usize,
    /// Alphabet the test ran on (after any reduction).
    pub spec: QuantizationSpec,
    pub config: SegmentConfig,
}

impl SegmentationResult {
    /// Overrides the label of superpixel `k` and charges the configured click cost.
    pub fn relabel_superpixel(&mut self, k: usize, label: usize) -> Result<()> {
        if k >= self.superpixel_labels.len() {
            return Err(Error::input(format!(
                "superpixel {k} does not exist (K' = {})",
                self.superpixel_labels.len()
            )));
        }
        if label == 0 || label > self.regions {
            return Err(Error::input(format!(
                "label {label} outside [1, {}]",
                self.regions
            )));
        }
        self.superpixel_labels[k] = label;
        for &i in self.partition.members(k) {
            self.pixel_labels[i as usize] = label as u8;
        }
        self.overridden[k] = true;
        self.clicks += self.config.click_cost;
        Ok(())
    }

    /// Rebuilds the pixel field from the superpixel labels.
    pub fn derived_pixel_labels(&self) -> Vec<u8> {
        self.partition
            .assignment()
            .iter()
            .map(|&k| self.superpixel_labels[k as usize] as u8)
            .collect()
    }
}

/// Orders the sets by label and checks they cover `1..=M` exactly once.
fn hypotheses_in_order(sets: &[PixelSet]) -> Result<Vec<&PixelSet>> {
    let m = sets.len();
    if m < 2 {
        return Err(Error::input(format!(
            "segmentation needs at least two labeled regions, got {m}"
        )));
    }
    if m > 255 {
        return Err(Error::input("at most 255 regions are supported"));
    }
    let mut ordered: Vec<Option<&PixelSet>> = vec![None; m];
    for s in sets {
        let l = s.label();
        if l == 0 || l > m {
            return Err(Error::input(format!(
                "region label {l} outside [1, {m}]; labels must be contiguous"
            )));
        }
        if ordered[l - 1].replace(s).is_some() {
            return Err(Error::input(format!("two training sets for region {l}")));
        }
    }
    Ok(ordered
        .into_iter()
        .map(|s| s.expect("all labels seen"))
        .collect())
}

/// Superpixels the image with SLIC and segments it.
pub fn segment(
    image: &Image,
    training_sets: &[PixelSet],
    config: &SegmentConfig,
) -> Result<SegmentationResult> {
    hypotheses_in_order(training_sets)?;
    let partition = slic(image, &config.slic)?;
    segment_with_partition(image, partition, training_sets, config)
}

/// Segments with a precomputed partition (reused across input regimes).
pub fn segment_with_partition(
    image: &Image,
    partition: SuperpixelPartition,
    training_sets: &[PixelSet],
    config: &SegmentConfig,
) -> Result<SegmentationResult> {
    if partition.width() != image.width() || partition.height() != image.height() {
        return Err(Error::input("partition and image sizes differ"));
    }
    let ordered = hypotheses_in_order(training_sets)?;
    let spec = config.effective_spec(image.len())?;
    let cells = spec.quantize(image)?;
    let width = image.width();
    let hists = ordered
        .par_iter()
        .map(|s| {
            if s.pixels()
                .iter()
                .any(|p| p.row >= image.height() || p.col >= width)
            {
                return Err(Error::input(format!(
                    "training set of region {} leaves the image",
                    s.label()
                )));
            }
            Histogram::from_pixel_set(s, &cells, width, &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let test = DglTest::new(&hists)?;

    let stats = partition
        .member_lists()
        .par_iter()
        .map(|members| {
            let seq: Vec<u32> = members.iter().map(|&i| cells[i as usize]).collect();
            test.classify(&seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let superpixel_labels: Vec<usize> = stats.iter().map(|s| s.chosen_label).collect();
    let pixel_labels = partition
        .assignment()
        .iter()
        .map(|&k| superpixel_labels[k as usize] as u8)
        .collect();
    let k = partition.len();
    Ok(SegmentationResult {
        partition,
        superpixel_labels,
        pixel_labels,
        stats,
        overridden: vec![false; k],
        regions: ordered.len(),
        clicks: 0,
        spec,
        config: config.clone(),
    })
}
