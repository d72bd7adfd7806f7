//! Region segmentation by Devroye-Gyorfi-Lugosi hypothesis tests over
//! quantized color histograms of superpixels.

pub mod bench;
pub mod color;
pub mod dgl;
pub mod error;
pub mod histogram;
pub mod input;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod superpixel;
pub mod synth;

pub use color::{ColorSpace, Image, QuantizationSpec};
pub use dgl::{BoundParams, DecisionStats, DglTest, ErrorBound};
pub use error::{Error, Result};
pub use histogram::{Histogram, InputSource, Pixel, PixelSet};
pub use input::{Regime, RegionAnnotation};
pub use pipeline::{segment, segment_with_partition, SegmentConfig, SegmentationResult};
pub use superpixel::{slic, SlicParams, SuperpixelPartition};
