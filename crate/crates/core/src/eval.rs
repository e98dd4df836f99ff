//! Detection-quality metrics: greedy score-ordered matching, precision /
//! recall / F1, average precision with exact all-point and 101-point
//! interpolated integration, and mean AP over classes and IoU thresholds.

use crate::fgiou::{iou, BBox};
use std::collections::HashMap;

/// One scored, class-labeled predicted box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: i64,
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// One annotated box.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: i64,
    pub class_id: usize,
    pub bbox: BBox,
}

/// AP integration mode: exact area under the precision envelope, or the
/// COCO-style mean of the envelope sampled at 101 recall points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMode {
    AllPoint,
    Coco101,
}

/// Greedy matching per image and class: detections in descending score
/// order (ties: lower input index first) claim the highest-IoU unclaimed
/// ground truth with IoU strictly above the threshold. Returns a TP flag
/// per detection in input order.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Vec<bool> {
    let mut gt_groups: HashMap<(i64, usize), Vec<usize>> = HashMap::new();
    for (gi, gt) in gts.iter().enumerate() {
        gt_groups.entry((gt.image_id, gt.class_id)).or_default().push(gi);
    }
    let mut det_groups: HashMap<(i64, usize), Vec<usize>> = HashMap::new();
    for (di, det) in dets.iter().enumerate() {
        det_groups.entry((det.image_id, det.class_id)).or_default().push(di);
    }

    let mut tp = vec![false; dets.len()];
    let mut claimed = vec![false; gts.len()];
    for (key, det_idxs) in det_groups.iter() {
        let mut order = det_idxs.clone();
        order.sort_by(|&a, &b| {
            dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b))
        });
        let empty = Vec::new();
        let cand_gts = gt_groups.get(key).unwrap_or(&empty);
        for &di in &order {
            let mut best_iou = 0.0;
            let mut best_gt = None;
            for &gi in cand_gts {
                if claimed[gi] {
                    continue;
                }
                let v = iou(&dets[di].bbox, &gts[gi].bbox);
                if v > best_iou {
                    best_iou = v;
                    best_gt = Some(gi);
                }
            }
            if let Some(gi) = best_gt {
                if best_iou > iou_thresh {
                    claimed[gi] = true;
                    tp[di] = true;
                }
            }
        }
    }
    tp
}

/// Precision, recall and F1 from raw counts, with the zero conventions
/// P := 0 when TP+FP = 0, R := 0 when TP+FN = 0, F1 := 0 when P+R = 0.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Cumulative PR points for one class at one IoU threshold, in descending
/// score order. Returns (recalls, precisions); empty when the class has no
/// ground truths.
fn pr_points(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_id: usize,
    iou_thresh: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let class_gts: Vec<GroundTruth> =
        gts.iter().filter(|g| g.class_id == class_id).cloned().collect();
    if class_gts.is_empty() {
        return None;
    }
    let mut class_dets: Vec<Detection> =
        dets.iter().filter(|d| d.class_id == class_id).cloned().collect();
    class_dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let flags = match_detections(&class_dets, &class_gts, iou_thresh);

    let num_gt = class_gts.len() as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recalls = Vec::with_capacity(class_dets.len());
    let mut precisions = Vec::with_capacity(class_dets.len());
    for (i, _) in class_dets.iter().enumerate() {
        if flags[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / num_gt);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    Some((recalls, precisions))
}

/// Precision envelope: env[i] = max precision at recall >= recalls[i].
fn envelope(precisions: &[f64]) -> Vec<f64> {
    let mut env = precisions.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

/// Average precision for one class. All-point mode integrates the exact
/// area under the precision envelope; 101-point mode averages the envelope
/// at recalls {0.00, 0.01, ..., 1.00}. Zero ground truths of the class
/// yield 0 by convention.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_id: usize,
    iou_thresh: f64,
    mode: ApMode,
) -> f64 {
    let Some((recalls, precisions)) = pr_points(dets, gts, class_id, iou_thresh) else {
        return 0.0;
    };
    if recalls.is_empty() {
        return 0.0;
    }
    let env = envelope(&precisions);
    match mode {
        ApMode::AllPoint => {
            let mut area = 0.0;
            let mut prev_r = 0.0;
            for i in 0..recalls.len() {
                area += (recalls[i] - prev_r) * env[i];
                prev_r = recalls[i];
            }
            area
        }
        ApMode::Coco101 => {
            let mut total = 0.0;
            for step in 0..=100 {
                let r = step as f64 / 100.0;
                // first PR point with recall >= r carries the envelope value
                let v = recalls
                    .iter()
                    .position(|&rc| rc >= r - 1e-12)
                    .map_or(0.0, |i| env[i]);
                total += v;
            }
            total / 101.0
        }
    }
}

/// Mean AP over classes: mAP@0.5 uses exact all-point integration;
/// mAP@0.5:0.95 averages 101-point AP over IoU thresholds 0.50..0.95 in
/// steps of 0.05.
pub fn mean_ap(dets: &[Detection], gts: &[GroundTruth], classes: &[usize]) -> (f64, f64) {
    assert!(!classes.is_empty(), "mean_ap requires at least one class");
    let map50 = classes
        .iter()
        .map(|&c| average_precision(dets, gts, c, 0.5, ApMode::AllPoint))
        .sum::<f64>()
        / classes.len() as f64;
    let mut grand = 0.0;
    for step in 0..10 {
        let thresh = 0.5 + step as f64 * 0.05;
        for &c in classes {
            grand += average_precision(dets, gts, c, thresh, ApMode::Coco101);
        }
    }
    let map50_95 = grand / (10 * classes.len()) as f64;
    (map50, map50_95)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(image_id: i64, class_id: usize, score: f64, b: [f64; 4]) -> Detection {
        Detection { image_id, class_id, score, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    fn gt(image_id: i64, class_id: usize, b: [f64; 4]) -> GroundTruth {
        GroundTruth { image_id, class_id, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    #[test]
    fn match_exact_overlap_is_tp() {
        let d = vec![det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0])];
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0])];
        assert_eq!(match_detections(&d, &g, 0.5), vec![true]);
    }

    #[test]
    fn match_single_gt_single_claim() {
        let d = vec![
            det(0, 0, 0.6, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0, 0.9, [1.0, 1.0, 11.0, 11.0]),
        ];
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0])];
        // higher-scored detection claims the gt, the other is FP
        assert_eq!(match_detections(&d, &g, 0.5), vec![false, true]);
    }

    #[test]
    fn match_three_dets_two_gts_hand_layout() {
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0]), gt(0, 0, [20.0, 0.0, 30.0, 10.0])];
        let d = vec![
            det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0]),  // IoU 1.0 with gt0 -> TP
            det(0, 0, 0.8, [0.0, 0.0, 10.0, 10.0]),  // gt0 taken -> FP
            det(0, 0, 0.7, [21.0, 0.0, 31.0, 10.0]), // IoU 9/11 with gt1 -> TP
        ];
        assert_eq!(match_detections(&d, &g, 0.5), vec![true, false, true]);
    }

    #[test]
    fn match_is_deterministic_under_score_ties() {
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0])];
        let d = vec![
            det(0, 0, 0.5, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0, 0.5, [0.0, 0.0, 10.0, 10.0]),
        ];
        // lower detection index wins the tie
        assert_eq!(match_detections(&d, &g, 0.5), vec![true, false]);
    }

    #[test]
    fn prf1_hand_cases() {
        assert_eq!(precision_recall_f1(2, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(precision_recall_f1(0, 0, 5), (0.0, 0.0, 0.0));
        let (p, r, f1) = precision_recall_f1(2, 1, 1);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_detection_is_one() {
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0]), gt(1, 0, [5.0, 5.0, 20.0, 20.0])];
        let d = vec![
            det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(1, 0, 0.8, [5.0, 5.0, 20.0, 20.0]),
        ];
        assert_eq!(average_precision(&d, &g, 0, 0.5, ApMode::AllPoint), 1.0);
    }

    #[test]
    fn ap_hand_curve_five_sixths() {
        // 2 gts; score-ordered flags (TP, FP, TP):
        // recalls (0.5, 0.5, 1.0), envelope (1, 2/3, 2/3) -> 5/6
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0]), gt(0, 0, [20.0, 0.0, 30.0, 10.0])];
        let d = vec![
            det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0, 0.8, [40.0, 40.0, 50.0, 50.0]),
            det(0, 0, 0.7, [20.0, 0.0, 30.0, 10.0]),
        ];
        let ap = average_precision(&d, &g, 0, 0.5, ApMode::AllPoint);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn ap_zero_gts_is_zero() {
        let d = vec![det(0, 3, 0.9, [0.0, 0.0, 1.0, 1.0])];
        assert_eq!(average_precision(&d, &[], 3, 0.5, ApMode::AllPoint), 0.0);
    }

    // ---- brute-force threshold-enumeration oracle ----

    /// Independent matcher: O(n^2) greedy in score order within one class.
    fn oracle_flags(dets: &[(i64, f64, BBox)], gts: &[(i64, BBox)], iou_thresh: f64) -> Vec<bool> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));
        let mut used = vec![false; gts.len()];
        let mut tp = vec![false; dets.len()];
        for &di in &order {
            let mut best = 0.0;
            let mut pick = None;
            for (gi, g) in gts.iter().enumerate() {
                if used[gi] || g.0 != dets[di].0 {
                    continue;
                }
                let v = iou(&dets[di].2, &g.1);
                if v > best {
                    best = v;
                    pick = Some(gi);
                }
            }
            if let Some(gi) = pick {
                if best > iou_thresh {
                    used[gi] = true;
                    tp[di] = true;
                }
            }
        }
        tp
    }

    /// Enumerates every distinct score threshold, computes (P, R) at each,
    /// and sums the area under the max-precision envelope step by step.
    fn oracle_allpoint_ap(
        dets: &[(i64, f64, BBox)],
        gts: &[(i64, BBox)],
        iou_thresh: f64,
    ) -> f64 {
        if gts.is_empty() {
            return 0.0;
        }
        let mut thresholds: Vec<f64> = dets.iter().map(|d| d.1).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();

        let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
        for &t in &thresholds {
            let kept: Vec<(i64, f64, BBox)> =
                dets.iter().filter(|d| d.1 >= t).cloned().collect();
            let flags = oracle_flags(&kept, gts, iou_thresh);
            let tp = flags.iter().filter(|&&f| f).count();
            let fp = kept.len() - tp;
            let recall = tp as f64 / gts.len() as f64;
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            points.push((recall, precision));
        }
        // envelope by direct definition, area without trapezoids
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let env_at = |r: f64| -> f64 {
            points
                .iter()
                .filter(|p| p.0 >= r - 1e-15)
                .map(|p| p.1)
                .fold(0.0f64, f64::max)
        };
        let mut area = 0.0;
        let mut prev_r = 0.0;
        for &(r, _) in &points {
            if r > prev_r {
                area += (r - prev_r) * env_at(r);
                prev_r = r;
            }
        }
        area
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
        let nd = rng.gen_range(1..=6);
        let ng = rng.gen_range(1..=4);
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..nd {
            let x = rng.gen_range(0.0..40.0);
            let y = rng.gen_range(0.0..40.0);
            dets.push(det(
                rng.gen_range(0..2),
                0,
                rng.gen_range(0.0..1.0),
                [x, y, x + rng.gen_range(4.0..20.0), y + rng.gen_range(4.0..20.0)],
            ));
        }
        for _ in 0..ng {
            let x = rng.gen_range(0.0..40.0);
            let y = rng.gen_range(0.0..40.0);
            gts.push(gt(
                rng.gen_range(0..2),
                0,
                [x, y, x + rng.gen_range(4.0..20.0), y + rng.gen_range(4.0..20.0)],
            ));
        }
        (dets, gts)
    }

    #[test]
    fn allpoint_ap_matches_threshold_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let (dets, gts) = random_instance(&mut rng);
            let ap = average_precision(&dets, &gts, 0, 0.5, ApMode::AllPoint);
            let od: Vec<(i64, f64, BBox)> =
                dets.iter().map(|d| (d.image_id, d.score, d.bbox)).collect();
            let og: Vec<(i64, BBox)> = gts.iter().map(|g| (g.image_id, g.bbox)).collect();
            let oracle = oracle_allpoint_ap(&od, &og, 0.5);
            assert!((ap - oracle).abs() < 1e-9, "ap={ap} oracle={oracle}");
        }
    }

    #[test]
    fn ap_non_increasing_in_iou_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let (dets, gts) = random_instance(&mut rng);
            let mut last = f64::INFINITY;
            for step in 0..6 {
                let t = 0.3 + 0.1 * step as f64;
                let ap = average_precision(&dets, &gts, 0, t, ApMode::AllPoint);
                assert!((0.0..=1.0).contains(&ap));
                assert!(ap <= last + 1e-12);
                last = ap;
            }
        }
    }

    #[test]
    fn envelope_is_non_increasing() {
        let env = envelope(&[1.0, 0.5, 0.66, 0.5, 0.6]);
        for w in env.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn trailing_detection_effects() {
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0]), gt(0, 0, [20.0, 0.0, 30.0, 10.0])];
        let base = vec![det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0])];
        let ap0 = average_precision(&base, &g, 0, 0.5, ApMode::AllPoint);
        // appending a lower-scored TP raises recall -> AP cannot drop
        let mut with_tp = base.clone();
        with_tp.push(det(0, 0, 0.1, [20.0, 0.0, 30.0, 10.0]));
        assert!(average_precision(&with_tp, &g, 0, 0.5, ApMode::AllPoint) >= ap0);
        // appending a lower-scored FP at rank end cannot raise AP
        let mut with_fp = base.clone();
        with_fp.push(det(0, 0, 0.1, [50.0, 50.0, 60.0, 60.0]));
        assert!(average_precision(&with_fp, &g, 0, 0.5, ApMode::AllPoint) <= ap0);
    }

    #[test]
    fn mean_ap_single_and_two_classes() {
        let g = vec![gt(0, 0, [0.0, 0.0, 10.0, 10.0]), gt(0, 1, [20.0, 0.0, 30.0, 10.0])];
        let d = vec![
            det(0, 0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            // class 1: FP then TP -> AP = 0.5
            det(0, 1, 0.9, [40.0, 40.0, 50.0, 50.0]),
            det(0, 1, 0.8, [20.0, 0.0, 30.0, 10.0]),
        ];
        let (map50_single, _) = mean_ap(&d, &g, &[0]);
        assert_eq!(map50_single, 1.0);
        let (map50, _) = mean_ap(&d, &g, &[0, 1]);
        assert!((map50 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn map_50_95_not_above_map_50_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let (dets, gts) = random_instance(&mut rng);
            let (map50, map50_95) = mean_ap(&dets, &gts, &[0]);
            assert!(
                map50_95 <= map50 + 1e-12,
                "map50={map50} map50_95={map50_95}"
            );
        }
    }
}
