//! Benchmark runs over a dataset manifest: every image x annotation x input
//! regime is segmented and scored, then summarized per regime.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::color::Image;
use crate::error::{Error, Result};
use crate::input::{training_sets, Regime, RegionAnnotation};
use crate::io::{load_image, load_label_map, DatasetManifest, RunConfig};
use crate::metrics::{
    aggregate, clicks_to_reach, genie_refinement_curve, mean_curve, pixel_accuracy, CurvePoint,
    RegimeSummary, RunRecord,
};
use crate::pipeline::{segment_with_partition, SegmentConfig};
use crate::superpixel::{slic, SuperpixelPartition};

/// One scored run together with its refinement curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub record: RunRecord,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub runs: Vec<Run>,
    pub summary: Vec<RegimeSummary>,
    /// Images or runs that were skipped, with the reason.
    pub failures: Vec<(String, String)>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

/// Scores every regime on one image/annotation pair with a shared partition.
/// Regimes that cannot produce training sets are reported in the error list.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_regimes(
    image_name: &str,
    annotation_name: &str,
    image: &Image,
    partition: &SuperpixelPartition,
    annotation: &RegionAnnotation,
    regimes: &[Regime],
    seg: &SegmentConfig,
    rng_seed: u64,
    exclusion: f64,
) -> (Vec<Run>, Vec<(String, String)>) {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for regime in regimes {
        let started = Instant::now();
        let outcome = training_sets(annotation, regime, rng_seed).and_then(|sets| {
            let result = segment_with_partition(image, partition.clone(), &sets, seg)?;
            let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            let accuracy = pixel_accuracy(&result.pixel_labels, annotation.labels(), exclusion)?;
            let curve = genie_refinement_curve(&result, annotation.labels(), seg.click_cost)?;
            Ok((result, accuracy, curve, elapsed_ms))
        });
        match outcome {
            Ok((result, accuracy, curve, elapsed_ms)) => {
                let ceiling = curve.last().map_or(accuracy, |p| p.accuracy);
                runs.push(Run {
                    record: RunRecord {
                        image: image_name.to_string(),
                        annotation: annotation_name.to_string(),
                        regime: regime.family().to_string(),
                        parameter: regime.parameter(),
                        rng_seed,
                        regions: result.regions,
                        superpixels: result.partition.len(),
                        accuracy,
                        ceiling,
                        corrections: curve.len() - 1,
                        clicks_to_99: clicks_to_reach(&curve, 0.99),
                        elapsed_ms,
                    },
                    curve,
                });
            }
            Err(e) => {
                log::warn!("{image_name}/{annotation_name} {regime}: {e}");
                failures.push((
                    format!("{image_name}/{annotation_name} {regime}"),
                    e.to_string(),
                ));
            }
        }
    }
    (runs, failures)
}

fn evaluate_entry(
    image_path: &Path,
    annotations: &[PathBuf],
    regimes: &[Regime],
    seg: &SegmentConfig,
    config: &RunConfig,
) -> Result<(Vec<Run>, Vec<(String, String)>)> {
    let image = load_image(image_path)?;
    let partition = slic(&image, &seg.slic)?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for path in annotations {
        let annotation = match load_label_map(path) {
            Ok(a) if a.width() == image.width() && a.height() == image.height() => a,
            Ok(_) => {
                failures.push((path.display().to_string(), "size differs from image".into()));
                continue;
            }
            Err(e) => {
                failures.push((path.display().to_string(), e.to_string()));
                continue;
            }
        };
        let (r, f) = evaluate_regimes(
            &stem(image_path),
            &stem(path),
            &image,
            &partition,
            &annotation,
            regimes,
            seg,
            config.rng_seed,
            config.exclusion,
        );
        runs.extend(r);
        failures.extend(f);
    }
    Ok((runs, failures))
}

/// Runs every manifest entry (in parallel over images). Failures are logged
/// and skipped; it is an error only if nothing could be scored.
pub fn run_benchmark(manifest: &DatasetManifest, config: &RunConfig) -> Result<BenchReport> {
    if manifest.entries.is_empty() {
        return Err(Error::input("manifest has no entries"));
    }
    let regimes = config.parsed_regimes()?;
    let seg = config.segment_config()?;
    let per_image: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| {
            evaluate_entry(&e.image, &e.annotations, &regimes, &seg, config).unwrap_or_else(|err| {
                log::warn!("{}: {err}", e.image.display());
                (
                    Vec::new(),
                    vec![(e.image.display().to_string(), err.to_string())],
                )
            })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_image {
        runs.extend(r);
        failures.extend(f);
    }
    if runs.is_empty() {
        return Err(Error::input(format!(
            "every benchmark run failed ({} failures)",
            failures.len()
        )));
    }
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    Ok(BenchReport {
        summary: aggregate(&records)?,
        runs,
        failures,
    })
}

/// The run config as `#` comment lines, prepended to every CSV report.
fn provenance(config: &RunConfig) -> String {
    config
        .to_toml()
        .lines()
        .map(|l| format!("# {l}\n"))
        .collect()
}

fn csv_string<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(serde::Serialize)]
struct CurveRow<'a> {
    image: &'a str,
    annotation: &'a str,
    regime: &'a str,
    parameter: f64,
    clicks: usize,
    accuracy: f64,
}

/// Writes `runs.csv`, `summary.csv`, `curves.csv` and (if enabled)
/// `refinement.svg` into `out_dir`. Returns the written paths.
pub fn write_reports(
    report: &BenchReport,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let header = provenance(config);
    let curve_rows = report.runs.iter().flat_map(|run| {
        run.curve.iter().map(move |p| CurveRow {
            image: &run.record.image,
            annotation: &run.record.annotation,
            regime: &run.record.regime,
            parameter: run.record.parameter,
            clicks: p.clicks,
            accuracy: p.accuracy,
        })
    });
    let mut files = vec![
        (
            "runs.csv",
            csv_string(report.runs.iter().map(|r| &r.record))?,
        ),
        ("summary.csv", csv_string(&report.summary)?),
        ("curves.csv", csv_string(curve_rows)?),
    ];
    for (_, body) in &mut files {
        body.insert_str(0, &header);
    }
    if config.plot {
        files.push(("refinement.svg", refinement_svg(report)));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Mean accuracy-versus-clicks curve of every regime as an SVG line chart.
pub fn refinement_svg(report: &BenchReport) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let max_clicks = report
        .runs
        .iter()
        .filter_map(|r| r.curve.last())
        .map(|p| p.clicks)
        .max()
        .unwrap_or(0)
        .max(1);
    let step = max_clicks.div_ceil(100);
    let mut curves = Vec::new();
    for row in &report.summary {
        let members: Vec<Vec<CurvePoint>> = report
            .runs
            .iter()
            .filter(|r| r.record.regime == row.regime && r.record.parameter == row.parameter)
            .map(|r| r.curve.clone())
            .collect();
        curves.push((
            format!("{}:{}", row.regime, row.parameter),
            mean_curve(&members, max_clicks, step),
        ));
    }
    let lo = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.accuracy))
        .fold(1.0f64, f64::min)
        .min(0.9)
        .max(0.0);
    let x = |c: usize| pad + (w - 2.0 * pad) * c as f64 / max_clicks as f64;
    let y = |a: f64| h - pad - (h - 2.0 * pad) * (a - lo) / (1.0 - lo).max(1e-9);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">clicks</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">accuracy</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (tick, label) in [(lo, format!("{lo:.2}")), (1.0, "1.00".to_string())] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            pad - 4.0,
            y(tick) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{max_clicks}</text>"#,
        w - pad,
        h - pad + 14.0
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let hue = (i as f64 * 0.618_034).fract() * 360.0;
        let points: Vec<String> = curve
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.clicks), y(p.accuracy)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="hsl({hue:.0},70%,45%)" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="hsl({hue:.0},70%,45%)">{name}</text>"#,
            w - pad + 4.0 - 90.0,
            pad + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_label_map, ManifestEntry};
    use crate::synth::generate_synthetic;
    use tempfile::tempdir;

    fn small_config() -> RunConfig {
        RunConfig {
            regimes: vec!["gt:100".into(), "gt:50".into(), "bb:100".into()],
            bins: vec![64, 64],
            superpixels: 64,
            ..RunConfig::default()
        }
    }

    fn synthetic_manifest(dir: &Path, count: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..count {
            let s = generate_synthetic(3, 64, 48, i as u64, 0.8).unwrap();
            let img = dir.join(format!("s{i}.png"));
            fs::write(&img, crate::io::encode_png(&s.image).unwrap()).unwrap();
            let gt = dir.join(format!("s{i}_gt.png"));
            write_label_map(&gt, 64, 48, s.annotation.labels()).unwrap();
            entries.push(ManifestEntry {
                image: img,
                annotations: vec![gt],
            });
        }
        DatasetManifest {
            name: "synthetic".into(),
            notes: String::new(),
            entries,
        }
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let m = DatasetManifest {
            name: "none".into(),
            notes: String::new(),
            entries: vec![],
        };
        assert!(matches!(
            run_benchmark(&m, &small_config()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn skips_broken_entries_and_writes_reports() {
        let dir = tempdir().unwrap();
        let mut m = synthetic_manifest(dir.path(), 2);
        let bogus = dir.path().join("bogus.png");
        fs::write(&bogus, b"not an image").unwrap();
        m.entries.push(ManifestEntry {
            image: bogus.clone(),
            annotations: vec![bogus],
        });
        let cfg = small_config();
        let report = run_benchmark(&m, &cfg).unwrap();
        assert_eq!(report.runs.len(), 6);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.summary.len(), 3);

        let again = run_benchmark(&m, &cfg).unwrap();
        let strip = |r: &BenchReport| {
            r.runs
                .iter()
                .map(|x| (x.record.accuracy, x.record.clicks_to_99, x.curve.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&report), strip(&again));

        let out = dir.path().join("out");
        let files = write_reports(&report, &cfg, &out).unwrap();
        assert_eq!(files.len(), 4);
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary.starts_with("# rng_seed = 0"));
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(summary.as_bytes());
        let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(
            headers,
            [
                "regime",
                "parameter",
                "runs",
                "mean_accuracy",
                "stdev",
                "mean_clicks_to_99"
            ]
        );
        assert_eq!(rdr.records().count(), 3);
        assert!(fs::read_to_string(out.join("refinement.svg"))
            .unwrap()
            .contains("<polyline"));
    }

    #[test]
    fn all_failures_is_an_error() {
        let dir = tempdir().unwrap();
        let bogus = dir.path().join("bogus.png");
        fs::write(&bogus, b"not an image").unwrap();
        let m = DatasetManifest {
            name: "bad".into(),
            notes: String::new(),
            entries: vec![ManifestEntry {
                image: bogus.clone(),
                annotations: vec![bogus],
            }],
        };
        assert!(run_benchmark(&m, &small_config()).is_err());
    }
}
