use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dglseg::bench::run_benchmark;
use dglseg::input::training_sets;
use dglseg::io::{
    encode_png, load_image, load_label_map, write_label_map, DatasetManifest, ManifestEntry,
    RunConfig,
};
use dglseg::metrics::pixel_accuracy;
use dglseg::superpixel::SlicFeatures;
use dglseg::synth::generate_synthetic;
use dglseg::{
    segment, segment_with_partition, slic, ColorSpace, DglTest, Histogram, Image, QuantizationSpec,
    Regime, RegionAnnotation, SegmentConfig, SlicParams,
};

/// 64x64, left half cell 0 with probability 0.9, right half cell 1 with
/// probability 0.9; returned with its two-region ground truth.
fn bernoulli_scene(seed: u64) -> (Image, RegionAnnotation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = Vec::with_capacity(64 * 64);
    let mut gt = Vec::with_capacity(64 * 64);
    for _r in 0..64 {
        for c in 0..64 {
            let left = c < 32;
            let home = rng.gen_bool(0.9);
            px.push(if left == home { 0u8 } else { 255 });
            gt.push(if left { 1 } else { 2 });
        }
    }
    (
        Image::from_gray8(64, 64, &px).unwrap(),
        RegionAnnotation::new(64, 64, gt).unwrap(),
    )
}

fn gray_config(k: usize) -> SegmentConfig {
    SegmentConfig {
        quantization: QuantizationSpec::new(ColorSpace::Gray, vec![0], vec![2]).unwrap(),
        slic: SlicParams {
            features: SlicFeatures {
                space: ColorSpace::Gray,
                channels: vec![0],
            },
            ..SlicParams::new(k, 10.0)
        },
        ..SegmentConfig::default()
    }
}

#[test]
fn bernoulli_halves_are_recovered() {
    let cfg = gray_config(64);
    let mut total = 0.0;
    for seed in 0..10 {
        let (image, gt) = bernoulli_scene(seed);
        let sets = training_sets(&gt, &Regime::GtFraction { f: 100.0 }, seed).unwrap();
        let r = segment(&image, &sets, &cfg).unwrap();
        total += pixel_accuracy(&r.pixel_labels, gt.labels(), 0.0).unwrap();
    }
    let mean = total / 10.0;
    assert!(mean >= 0.95, "mean accuracy {mean}");
}

#[test]
fn point_masses_send_region_two_superpixels_to_two() {
    // region 1 is all cell 0, region 2 all cell 1, and the image is region 2 throughout
    let image = Image::from_gray8(16, 16, &[255; 256]).unwrap();
    let cfg = gray_config(16);
    let spec = cfg.effective_spec(256).unwrap();
    let h1 = Histogram::from_cells(&spec, [0; 20]).unwrap();
    let h2 = Histogram::from_cells(&spec, [1; 20]).unwrap();
    let test = DglTest::new(&[h1, h2]).unwrap();
    let cells = spec.quantize(&image).unwrap();
    let partition = slic(&image, &cfg.slic).unwrap();
    for members in partition.member_lists() {
        let seq: Vec<u32> = members.iter().map(|&i| cells[i as usize]).collect();
        assert_eq!(test.classify(&seq).unwrap().chosen_label, 2);
    }
}

#[test]
fn superpixel_order_does_not_matter() {
    let (image, gt) = bernoulli_scene(7);
    let cfg = gray_config(64);
    let sets = training_sets(&gt, &Regime::GtFraction { f: 50.0 }, 7).unwrap();
    let r = segment(&image, &sets, &cfg).unwrap();

    let spec = cfg.effective_spec(image.len()).unwrap();
    let cells = spec.quantize(&image).unwrap();
    let hists: Vec<Histogram> = sets
        .iter()
        .map(|s| Histogram::from_pixel_set(s, &cells, 64, &spec).unwrap())
        .collect();
    let test = DglTest::new(&hists).unwrap();
    for k in (0..r.partition.len()).rev() {
        let seq: Vec<u32> = r
            .partition
            .members(k)
            .iter()
            .map(|&i| cells[i as usize])
            .collect();
        assert_eq!(
            test.classify(&seq).unwrap().chosen_label,
            r.superpixel_labels[k]
        );
    }
    assert_eq!(segment(&image, &sets, &cfg).unwrap(), r);
}

#[test]
fn relabel_sequences_keep_the_label_field_consistent() {
    let (image, gt) = bernoulli_scene(3);
    let sets = training_sets(&gt, &Regime::GtFraction { f: 100.0 }, 3).unwrap();
    let mut r = segment(&image, &sets, &gray_config(64)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for step in 1..=50 {
        let k = rng.gen_range(0..r.partition.len());
        let label = rng.gen_range(1..=2);
        r.relabel_superpixel(k, label).unwrap();
        assert_eq!(r.pixel_labels, r.derived_pixel_labels());
        assert_eq!(r.superpixel_labels[k], label);
        assert_eq!(r.clicks, 2 * step);
    }
}

#[test]
fn label_map_round_trip_reproduces_the_segmentation() {
    let scene = generate_synthetic(4, 160, 120, 11, 0.5).unwrap();
    let sets = training_sets(&scene.annotation, &Regime::GtFraction { f: 100.0 }, 0).unwrap();
    let cfg = SegmentConfig {
        slic: SlicParams::new(300, 10.0),
        ..SegmentConfig::default()
    };
    let r = segment(&scene.image, &sets, &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("labels.png");
    write_label_map(&path, 160, 120, &r.pixel_labels).unwrap();
    let back = load_label_map(&path).unwrap();
    assert_eq!(back.labels(), &r.pixel_labels[..]);
    assert_eq!(back.regions(), r.regions);
}

#[test]
fn one_entry_benchmark_equals_the_direct_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = generate_synthetic(3, 200, 150, 21, 0.6).unwrap();
    fs::write(
        tmp.path().join("img.png"),
        encode_png(&scene.image).unwrap(),
    )
    .unwrap();
    write_label_map(
        tmp.path().join("gt.png"),
        200,
        150,
        scene.annotation.labels(),
    )
    .unwrap();
    let manifest = DatasetManifest {
        name: "one".into(),
        notes: String::new(),
        entries: vec![ManifestEntry {
            image: tmp.path().join("img.png"),
            annotations: vec![tmp.path().join("gt.png")],
        }],
    };
    let cfg = RunConfig {
        regimes: vec!["gt:100".into(), "gt:50".into(), "pts:10:9".into()],
        superpixels: 470,
        rng_seed: 5,
        ..RunConfig::default()
    };
    let report = run_benchmark(&manifest, &cfg).unwrap();
    assert_eq!(report.runs.len(), 3);

    // the same steps by hand
    let image = load_image(tmp.path().join("img.png")).unwrap();
    let gt = load_label_map(tmp.path().join("gt.png")).unwrap();
    let seg = cfg.segment_config().unwrap();
    let partition = slic(&image, &seg.slic).unwrap();
    for (run, regime) in report.runs.iter().zip(cfg.parsed_regimes().unwrap()) {
        let sets = training_sets(&gt, &regime, 5).unwrap();
        let r = segment_with_partition(&image, partition.clone(), &sets, &seg).unwrap();
        let acc = pixel_accuracy(&r.pixel_labels, gt.labels(), 0.0).unwrap();
        assert_eq!(run.record.accuracy, acc, "{regime}");
        assert_eq!(run.record.superpixels, r.partition.len());
    }
    let acc = |f: f64| {
        report
            .runs
            .iter()
            .find(|r| r.record.regime == "gt" && r.record.parameter == f)
            .unwrap()
            .record
            .accuracy
    };
    assert!(acc(100.0) >= 0.95, "{}", acc(100.0));
    assert!(acc(100.0) >= acc(50.0) - 0.05);
}

#[test]
fn synthetic_separation_extremes() {
    let w = 481;
    let h = 321;
    let scene = generate_synthetic(2, w, h, 4, 1.0).unwrap();
    let cfg = SegmentConfig {
        slic: SlicParams::new(w * h / 64, 10.0),
        ..SegmentConfig::default()
    };
    let sets = training_sets(&scene.annotation, &Regime::GtFraction { f: 100.0 }, 0).unwrap();
    let r = segment(&scene.image, &sets, &cfg).unwrap();
    let acc = pixel_accuracy(&r.pixel_labels, scene.annotation.labels(), 0.0).unwrap();
    assert!(acc >= 0.99, "{acc}");

    let blurred = generate_synthetic(4, 64, 64, 4, 0.01).unwrap();
    assert!(blurred.min_pairwise_tv() < 0.05);
}
