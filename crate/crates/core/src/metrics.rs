//! Pixel accuracy, simulated (genie) refinement and benchmark aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SegmentationResult;
use crate::superpixel::SuperpixelPartition;

/// Fraction of ground-truth-labeled pixels (`gt != 0`) whose prediction matches.
///
/// With `exclusion = e > 0`, `floor(e * total)` pixels are dropped from both
/// numerator and denominator before the ratio is taken. Regions are visited
/// from the worst per-region accuracy up, and within a region mislabeled
/// pixels are dropped before correct ones.
pub fn pixel_accuracy(pred: &[u8], gt: &[u8], exclusion: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if !(0.0..0.5).contains(&exclusion) {
        return Err(Error::input(format!(
            "exclusion {exclusion} outside [0, 0.5)"
        )));
    }
    // (size, correct) per region
    let mut regions: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if g != 0 {
            let e = regions.entry(g).or_default();
            e.0 += 1;
            e.1 += usize::from(p == g);
        }
    }
    let total: usize = regions.values().map(|r| r.0).sum();
    if total == 0 {
        return Err(Error::input("ground truth has no labeled pixels"));
    }
    let correct: usize = regions.values().map(|r| r.1).sum();
    let mut budget = (exclusion * total as f64 + 1e-9).floor() as usize;
    if budget == 0 {
        return Ok(correct as f64 / total as f64);
    }
    let dropped = budget;
    let mut order: Vec<(usize, usize)> = regions.values().copied().collect();
    // worst accuracy first: a/b < c/d  <=>  a d < c b
    order.sort_by(|x, y| (x.1 * y.0).cmp(&(y.1 * x.0)));
    let mut dropped_correct = 0;
    for (size, good) in order {
        if budget == 0 {
            break;
        }
        let wrong = (size - good).min(budget);
        budget -= wrong;
        let right = good.min(budget);
        budget -= right;
        dropped_correct += right;
    }
    Ok((correct - dropped_correct) as f64 / (total - dropped) as f64)
}

/// Ground-truth majority label of every superpixel (`None` if it covers no
/// labeled pixel). Ties go to the smallest label.
pub fn majority_labels(partition: &SuperpixelPartition, gt: &[u8]) -> Vec<Option<u8>> {
    partition
        .member_lists()
        .iter()
        .map(|members| {
            let mut counts = [0usize; 256];
            for &i in members {
                counts[gt[i as usize] as usize] += 1;
            }
            let (label, n) = counts
                .iter()
                .enumerate()
                .skip(1)
                .fold(
                    (0, 0),
                    |best, (l, &n)| if n > best.1 { (l, n) } else { best },
                );
            (n > 0).then_some(label as u8)
        })
        .collect()
}

/// One point of a refinement curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub clicks: usize,
    pub accuracy: f64,
}

/// Simulates an optimal user who fixes mislabeled superpixels, largest
/// accuracy gain first, at `click_cost` clicks each.
///
/// A superpixel is corrected when some ground-truth label covers more of its
/// pixels than its current label does; it is then set to the majority label.
/// The last point is the accuracy of the majority labeling.
pub fn genie_refinement_curve(
    result: &SegmentationResult,
    gt: &[u8],
    click_cost: usize,
) -> Result<Vec<CurvePoint>> {
    let partition = &result.partition;
    if gt.len() != partition.assignment().len() {
        return Err(Error::input("ground truth and segmentation sizes differ"));
    }
    let total = gt.iter().filter(|&&g| g != 0).count();
    if total == 0 {
        return Err(Error::input("ground truth has no labeled pixels"));
    }
    let mut correct = 0usize;
    let mut gains: Vec<(usize, usize)> = Vec::new();
    for (k, members) in partition.member_lists().iter().enumerate() {
        let mut counts = [0usize; 256];
        for &i in members {
            counts[gt[i as usize] as usize] += 1;
        }
        let current = result.superpixel_labels[k].min(255);
        let have = counts[current];
        correct += have;
        let best = counts[1..].iter().copied().max().unwrap_or(0);
        if best > have {
            gains.push((best - have, k));
        }
    }
    gains.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut curve = Vec::with_capacity(gains.len() + 1);
    curve.push(CurvePoint {
        clicks: 0,
        accuracy: correct as f64 / total as f64,
    });
    for (step, (gain, _)) in gains.into_iter().enumerate() {
        correct += gain;
        curve.push(CurvePoint {
            clicks: (step + 1) * click_cost,
            accuracy: correct as f64 / total as f64,
        });
    }
    Ok(curve)
}

/// Clicks needed to reach `target` accuracy, or to reach the end of the
/// curve if it never gets there.
pub fn clicks_to_reach(curve: &[CurvePoint], target: f64) -> usize {
    curve
        .iter()
        .find(|p| p.accuracy >= target)
        .or(curve.last())
        .map_or(0, |p| p.clicks)
}

/// Fraction of ground-truth boundary pixels within `tolerance` (Chebyshev
/// distance) of a superpixel boundary pixel.
pub fn boundary_recall(partition: &SuperpixelPartition, gt: &[u8], tolerance: usize) -> f64 {
    let (w, h) = (partition.width(), partition.height());
    let sp = partition.boundary_mask();
    let t = tolerance as isize;
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let on_gt = (c + 1 < w && gt[i + 1] != gt[i]) || (r + 1 < h && gt[i + w] != gt[i]);
            if !on_gt {
                continue;
            }
            total += 1;
            let found = (-t..=t).any(|dr| {
                (-t..=t).any(|dc| {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && sp[rr as usize * w + cc as usize]
                })
            });
            hits += usize::from(found);
        }
    }
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Outcome of one image x annotation x regime run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub image: String,
    pub annotation: String,
    /// Regime family: `gt`, `bb`, `pts`, `bbp` or `manual`.
    pub regime: String,
    /// Swept parameter of the regime (`f`, `t` or `p`).
    pub parameter: f64,
    pub rng_seed: u64,
    pub regions: usize,
    pub superpixels: usize,
    pub accuracy: f64,
    /// Accuracy after every genie correction.
    pub ceiling: f64,
    pub corrections: usize,
    pub clicks_to_99: usize,
    pub elapsed_ms: f64,
}

/// Per-regime summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: String,
    pub parameter: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Population standard deviation across runs.
    pub stdev: f64,
    pub mean_clicks_to_99: f64,
}

/// Order-independent mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

fn family_rank(regime: &str) -> usize {
    ["gt", "bb", "pts", "bbp", "manual"]
        .iter()
        .position(|&r| r == regime)
        .unwrap_or(usize::MAX)
}

/// Unweighted per-regime means over runs (per image, then across images).
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<RegimeSummary>> {
    if records.is_empty() {
        return Err(Error::input("nothing to aggregate"));
    }
    let mut groups: BTreeMap<(usize, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                family_rank(&r.regime),
                r.regime.clone(),
                r.parameter.to_bits(),
            ))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<RegimeSummary> = groups
        .into_iter()
        .map(|((_, regime, param), runs)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let clicks: Vec<f64> = runs.iter().map(|r| r.clicks_to_99 as f64).collect();
            let (mean_accuracy, stdev) = mean_std(&acc);
            RegimeSummary {
                regime,
                parameter: f64::from_bits(param),
                runs: runs.len(),
                mean_accuracy,
                stdev,
                mean_clicks_to_99: mean_std(&clicks).0,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        family_rank(&a.regime)
            .cmp(&family_rank(&b.regime))
            .then(a.regime.cmp(&b.regime))
            .then(a.parameter.total_cmp(&b.parameter))
    });
    Ok(rows)
}

/// Mean of step-function refinement curves sampled every `step` clicks up to `max_clicks`.
pub fn mean_curve(curves: &[Vec<CurvePoint>], max_clicks: usize, step: usize) -> Vec<CurvePoint> {
    let step = step.max(1);
    (0..=max_clicks / step)
        .map(|s| {
            let clicks = s * step;
            let values: Vec<f64> = curves
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| {
                    c.iter()
                        .take_while(|p| p.clicks <= clicks)
                        .last()
                        .unwrap_or(&c[0])
                        .accuracy
                })
                .collect();
            CurvePoint {
                clicks,
                accuracy: if values.is_empty() {
                    0.0
                } else {
                    mean_std(&values).0
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::QuantizationSpec;
    use crate::dgl::DecisionStats;
    use crate::pipeline::SegmentConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_abs_diff_eq!(
            pixel_accuracy(&[1, 1, 2, 2], &[1, 2, 2, 2], 0.0).unwrap(),
            0.75
        );
        let field = [1, 2, 3, 1, 2, 3];
        for e in [0.0, 0.1, 0.3, 0.49] {
            assert_eq!(pixel_accuracy(&field, &field, e).unwrap(), 1.0);
        }
        // gt 0 pixels are ignored
        assert_abs_diff_eq!(pixel_accuracy(&[1, 2, 2], &[1, 0, 1], 0.0).unwrap(), 0.5);
        assert!(pixel_accuracy(&[1], &[1, 2], 0.0).is_err());
        assert!(pixel_accuracy(&[1], &[1], 0.5).is_err());
        assert!(pixel_accuracy(&[1], &[0], 0.0).is_err());
    }

    #[test]
    fn exclusion_drops_worst_region() {
        // 100 pixels; region 3 (10 px) entirely wrong, the rest right.
        let mut gt = vec![1u8; 60];
        gt.extend([2u8; 30]);
        gt.extend([3u8; 10]);
        let mut pred = gt.clone();
        pred[90..].fill(1);
        assert_abs_diff_eq!(pixel_accuracy(&pred, &gt, 0.0).unwrap(), 0.9);
        assert_eq!(pixel_accuracy(&pred, &gt, 0.10).unwrap(), 1.0);
        // 5% exclusion drops 5 wrong pixels: 90 / 95
        assert_abs_diff_eq!(pixel_accuracy(&pred, &gt, 0.05).unwrap(), 90.0 / 95.0);
    }

    fn result_with(partition: SuperpixelPartition, labels: Vec<usize>) -> SegmentationResult {
        let pixel_labels = partition
            .assignment()
            .iter()
            .map(|&k| labels[k as usize] as u8)
            .collect();
        let k = partition.len();
        SegmentationResult {
            partition,
            stats: labels
                .iter()
                .map(|&l| DecisionStats {
                    chosen_label: l,
                    scores: vec![],
                    pair_measures: vec![],
                })
                .collect(),
            superpixel_labels: labels,
            pixel_labels,
            overridden: vec![false; k],
            regions: 2,
            clicks: 0,
            spec: QuantizationSpec::hsv_hs(4).unwrap(),
            config: SegmentConfig::default(),
        }
    }

    /// 1x12 strip split into 4 superpixels of 3 pixels.
    fn strip() -> (SuperpixelPartition, Vec<u8>) {
        let p =
            SuperpixelPartition::from_assignment(12, 1, (0..12).map(|i| i / 3).collect()).unwrap();
        let gt = vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2];
        (p, gt)
    }

    #[test]
    fn genie_with_nothing_to_fix() {
        let (p, gt) = strip();
        let r = result_with(p, vec![1, 1, 2, 2]);
        let curve = genie_refinement_curve(&r, &gt, 2).unwrap();
        assert_eq!(curve.len(), 1);
        assert_abs_diff_eq!(curve[0].accuracy, 11.0 / 12.0);
    }

    #[test]
    fn genie_fixes_three_superpixels() {
        let (p, gt) = strip();
        let r = result_with(p, vec![2, 2, 1, 1]);
        let curve = genie_refinement_curve(&r, &gt, 2).unwrap();
        // initial: sp0 0/3, sp1 1/3 (pixel 5 has gt 2), sp2 0, sp3 0 -> 1 / 12
        assert_abs_diff_eq!(curve[0].accuracy, 1.0 / 12.0);
        assert_eq!(curve.len(), 5);
        assert_eq!(curve.last().unwrap().clicks, 8);
        let oracle = 11.0 / 12.0;
        assert_abs_diff_eq!(curve.last().unwrap().accuracy, oracle);
        assert!(curve.windows(2).all(|w| w[1].accuracy > w[0].accuracy));

        let r = result_with(strip().0, vec![2, 1, 1, 1]);
        let curve = genie_refinement_curve(&r, &gt, 2).unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(curve.last().unwrap().clicks, 6);
        assert_abs_diff_eq!(curve.last().unwrap().accuracy, oracle);
        // gains 3, 3, 1 (sp1 keeps label 1 but only the 2-majority sp2/sp3 are fixed first)
        assert_eq!(clicks_to_reach(&curve, 0.99), 6);
    }

    #[test]
    fn majority_ties_pick_smallest() {
        let p = SuperpixelPartition::from_assignment(4, 1, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(majority_labels(&p, &[2, 1, 0, 0]), vec![Some(1), None]);
    }

    #[test]
    fn boundary_recall_of_aligned_partition() {
        let (p, gt) = strip();
        // gt boundary between 4 and 5; superpixel boundaries at 2, 5, 8
        assert_eq!(boundary_recall(&p, &gt, 0), 0.0);
        assert_eq!(boundary_recall(&p, &gt, 1), 1.0);
    }

    fn record(regime: &str, parameter: f64, accuracy: f64) -> RunRecord {
        RunRecord {
            image: "img".into(),
            annotation: "gt".into(),
            regime: regime.into(),
            parameter,
            rng_seed: 0,
            regions: 2,
            superpixels: 10,
            accuracy,
            ceiling: 1.0,
            corrections: 0,
            clicks_to_99: 4,
            elapsed_ms: 1.0,
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[record("gt", 100.0, 0.8)]).unwrap();
        assert_eq!(one[0].mean_accuracy, 0.8);
        assert_eq!(one[0].stdev, 0.0);
        let two = aggregate(&[record("gt", 100.0, 0.8), record("gt", 100.0, 0.9)]).unwrap();
        assert_abs_diff_eq!(two[0].mean_accuracy, 0.85, epsilon = 1e-12);
        assert!(aggregate(&[]).is_err());
        let rows = aggregate(&[
            record("bbp", 5.0, 0.7),
            record("gt", 50.0, 0.9),
            record("gt", 25.0, 0.8),
        ])
        .unwrap();
        let order: Vec<(&str, f64)> = rows
            .iter()
            .map(|r| (r.regime.as_str(), r.parameter))
            .collect();
        assert_eq!(order, vec![("gt", 25.0), ("gt", 50.0), ("bbp", 5.0)]);
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(values in proptest::collection::vec(0.0f64..1.0, 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let records: Vec<RunRecord> = values.iter().enumerate()
                .map(|(i, &v)| record(if i % 2 == 0 { "gt" } else { "bb" }, 50.0, v))
                .collect();
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&records).unwrap(), aggregate(&shuffled).unwrap());
        }

        #[test]
        fn self_accuracy_is_one(field in proptest::collection::vec(1u8..5, 1..200), e in 0.0f64..0.5) {
            prop_assert_eq!(pixel_accuracy(&field, &field, e).unwrap(), 1.0);
        }
    }
}
