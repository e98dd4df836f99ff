//! Composite detection loss: GIoU box regression, focal classification,
//! focal-weighted objectness, and the task-aligned assigner that feeds them.
//!
//! All loss math runs in f64 scalars. Gradients are analytic and exposed
//! alongside each value so the toy trainer can chain them; assignment
//! targets are treated as constants (no gradient flows through the
//! assigner).

/// Axis-aligned box in corner form. Degenerate boxes (zero area) are valid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

/// Focal-loss shape parameters. Defaults are the canonical alpha 0.25,
/// gamma 2.0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

/// Weights of the composite loss: total = w_box*giou + w_cls*focal +
/// w_obj*obj_focal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub w_box: f64,
    pub w_cls: f64,
    pub w_obj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_box: 7.5, w_cls: 0.5, w_obj: 1.0 }
    }
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Per-anchor predictions plus the anchor grid that produced them.
#[derive(Debug, Clone)]
pub struct AnchorPreds {
    /// Decoded boxes, one per anchor.
    pub boxes: Vec<BBox>,
    /// Per-anchor per-class probabilities in (0,1).
    pub class_scores: Vec<Vec<f64>>,
    /// Per-anchor objectness in (0,1).
    pub objectness: Vec<f64>,
    /// Anchor center points.
    pub centers: Vec<(f64, f64)>,
}

/// Output of the task-aligned assigner.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignResult {
    pub fg_mask: Vec<bool>,
    /// Ground-truth index per anchor; only meaningful where fg_mask is set.
    pub matched_gt: Vec<usize>,
    /// Normalized alignment in [0,1]; 0 for background anchors.
    pub alignment: Vec<f64>,
}

impl AssignResult {
    pub fn num_foreground(&self) -> usize {
        self.fg_mask.iter().filter(|&&m| m).count()
    }
}

/// Per-component loss values and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub giou: f64,
    pub focal: f64,
    pub obj_focal: f64,
    pub total: f64,
    pub num_pos: usize,
}

/// Gradients of the weighted total w.r.t. the prediction probabilities and
/// box coordinates (targets detached).
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub d_boxes: Vec<[f64; 4]>,
    pub d_class_scores: Vec<Vec<f64>>,
    pub d_objectness: Vec<f64>,
}

const LOG_FLOOR: f64 = 1e-12;

#[inline]
fn safe_ln(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// Intersection-over-union of two boxes; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU and its gradient w.r.t. the first box's coordinates (one-sided on
/// the tie sets).
pub fn iou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let aw = a.x2 - a.x1;
    let ah = a.y2 - a.y1;
    let d_area = [-ah, -aw, ah, aw];
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
        let dx1 = if a.x1 >= b.x1 { -ih } else { 0.0 };
        let dy1 = if a.y1 >= b.y1 { -iw } else { 0.0 };
        let dx2 = if a.x2 <= b.x2 { ih } else { 0.0 };
        let dy2 = if a.y2 <= b.y2 { iw } else { 0.0 };
        (iw * ih, [dx1, dy1, dx2, dy2])
    } else {
        (0.0, [0.0; 4])
    };
    let union = aw * ah + b.area() - inter;
    if union <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let v = inter / union;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        grad[k] = (d_inter[k] * union - inter * d_union) / (union * union);
    }
    (v, grad)
}

/// GIoU regression loss in [0, 2]: 1 - (IoU - |C \ (A u B)| / |C|) with C
/// the minimal enclosing axis-aligned hull. Zero hull area (both boxes
/// degenerate and coincident) yields 1 by convention.
pub fn giou_loss(a: &BBox, b: &BBox) -> f64 {
    giou_loss_with_grad(a, b).0
}

/// GIoU loss and its gradient w.r.t. the first box's four coordinates.
/// On the measure-zero tie sets (equal edges) a one-sided derivative is
/// returned.
pub fn giou_loss_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let aw = a.x2 - a.x1;
    let ah = a.y2 - a.y1;
    let area_a = aw * ah;
    let area_b = b.area();
    // d area_a / d (ax1, ay1, ax2, ay2)
    let d_area = [-ah, -aw, ah, aw];

    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
        let dx1 = if a.x1 >= b.x1 { -ih } else { 0.0 };
        let dy1 = if a.y1 >= b.y1 { -iw } else { 0.0 };
        let dx2 = if a.x2 <= b.x2 { ih } else { 0.0 };
        let dy2 = if a.y2 <= b.y2 { iw } else { 0.0 };
        (iw * ih, [dx1, dy1, dx2, dy2])
    } else {
        (0.0, [0.0; 4])
    };

    let union = area_a + area_b - inter;
    let d_union = [
        d_area[0] - d_inter[0],
        d_area[1] - d_inter[1],
        d_area[2] - d_inter[2],
        d_area[3] - d_inter[3],
    ];

    let hw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hh = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = hw * hh;
    if hull <= 0.0 {
        return (1.0, [0.0; 4]);
    }
    let d_hull = [
        if a.x1 <= b.x1 { -hh } else { 0.0 },
        if a.y1 <= b.y1 { -hw } else { 0.0 },
        if a.x2 >= b.x2 { hh } else { 0.0 },
        if a.y2 >= b.y2 { hw } else { 0.0 },
    ];

    let (iou_v, d_iou) = if union > 0.0 {
        let v = inter / union;
        let mut d = [0.0; 4];
        for k in 0..4 {
            d[k] = (d_inter[k] * union - inter * d_union[k]) / (union * union);
        }
        (v, d)
    } else {
        (0.0, [0.0; 4])
    };

    // loss = 2 - iou - union/hull
    let loss = 2.0 - iou_v - union / hull;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = -d_iou[k] - (d_union[k] * hull - union * d_hull[k]) / (hull * hull);
    }
    (loss, grad)
}

/// Multi-class focal loss for one positive anchor: mean over classes of
/// -alpha_t (1-p_t)^gamma log(p_t), with p_t = p for the true class and
/// 1-p otherwise (sigmoid per-class convention).
pub fn focal_loss(probs: &[f64], target_class: usize, fp: &FocalParams) -> f64 {
    focal_loss_with_grad(probs, target_class, fp).0
}

/// Focal loss and its gradient w.r.t. each class probability.
pub fn focal_loss_with_grad(
    probs: &[f64],
    target_class: usize,
    fp: &FocalParams,
) -> (f64, Vec<f64>) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (c, &p) in probs.iter().enumerate() {
        if c == target_class {
            let q = 1.0 - p;
            loss += -fp.alpha * q.powf(fp.gamma) * safe_ln(p);
            let d_log = if p > LOG_FLOOR { 1.0 / p } else { 0.0 };
            grad[c] = (fp.alpha * fp.gamma * q.powf(fp.gamma - 1.0) * safe_ln(p)
                - fp.alpha * q.powf(fp.gamma) * d_log)
                / n;
        } else {
            let q = 1.0 - p;
            loss += -(1.0 - fp.alpha) * p.powf(fp.gamma) * safe_ln(q);
            let d_log = if q > LOG_FLOOR { -1.0 / q } else { 0.0 };
            grad[c] = -(1.0 - fp.alpha)
                * (fp.gamma * p.powf(fp.gamma - 1.0) * safe_ln(q) + p.powf(fp.gamma) * d_log)
                / n;
        }
    }
    (loss / n, grad)
}

/// Focal-weighted binary cross-entropy on an objectness score. `t` may be a
/// continuous target in [0,1]; the focal weight and alpha follow the sign
/// of t (positive when t > 0.5).
pub fn obj_focal_loss(p: f64, t: f64, fp: &FocalParams) -> f64 {
    obj_focal_loss_with_grad(p, t, fp).0
}

/// Objectness focal loss and its gradient w.r.t. p.
pub fn obj_focal_loss_with_grad(p: f64, t: f64, fp: &FocalParams) -> (f64, f64) {
    let positive = t > 0.5;
    let (alpha_t, w, dw) = if positive {
        let q = 1.0 - p;
        (fp.alpha, q.powf(fp.gamma), -fp.gamma * q.powf(fp.gamma - 1.0))
    } else {
        (1.0 - fp.alpha, p.powf(fp.gamma), fp.gamma * p.powf(fp.gamma - 1.0))
    };
    let bce = -(t * safe_ln(p) + (1.0 - t) * safe_ln(1.0 - p));
    let d_bce = -(t * if p > LOG_FLOOR { 1.0 / p } else { 0.0 }
        - (1.0 - t) * if 1.0 - p > LOG_FLOOR { 1.0 / (1.0 - p) } else { 0.0 });
    (alpha_t * w * bce, alpha_t * (dw * bce + w * d_bce))
}

/// Task-aligned assignment: candidate anchors per gt are those whose center
/// lies inside the gt box; alignment metric m = s^0.5 * IoU^6; top-10
/// candidates per gt are kept; conflicts go to the gt with the larger m
/// (ties: lower gt index); per-gt alignment is rescaled so its max equals
/// the max IoU over that gt's anchors.
pub fn task_aligned_assign(
    class_scores: &[Vec<f64>],
    boxes: &[BBox],
    centers: &[(f64, f64)],
    gts: &[GtBox],
) -> AssignResult {
    const TOP_K: usize = 10;
    const ALIGN_ALPHA: f64 = 0.5;
    const ALIGN_BETA: f64 = 6.0;

    let num_anchors = centers.len();
    let mut fg_mask = vec![false; num_anchors];
    let mut matched_gt = vec![0usize; num_anchors];
    let mut alignment = vec![0.0; num_anchors];
    if gts.is_empty() {
        return AssignResult { fg_mask, matched_gt, alignment };
    }

    // top-k candidates per gt: (anchor, metric, iou)
    let mut per_gt: Vec<Vec<(usize, f64, f64)>> = Vec::with_capacity(gts.len());
    for gt in gts {
        let mut cands: Vec<(usize, f64, f64)> = Vec::new();
        for (ai, &(cx, cy)) in centers.iter().enumerate() {
            if !gt.bbox.contains(cx, cy) {
                continue;
            }
            let iou_v = iou(&boxes[ai], &gt.bbox);
            let s = class_scores[ai][gt.class_id];
            let m = s.powf(ALIGN_ALPHA) * iou_v.powf(ALIGN_BETA);
            cands.push((ai, m, iou_v));
        }
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        cands.truncate(TOP_K);
        per_gt.push(cands);
    }

    // resolve multi-claimed anchors: larger metric wins, lower gt index on ties
    let mut claim: Vec<Option<(usize, f64, f64)>> = vec![None; num_anchors]; // (gt, m, iou)
    for (gi, cands) in per_gt.iter().enumerate() {
        for &(ai, m, iou_v) in cands {
            match claim[ai] {
                Some((_, best_m, _)) if best_m >= m => {}
                _ => claim[ai] = Some((gi, m, iou_v)),
            }
        }
    }

    // per-gt normalization over the anchors it finally owns
    let mut max_m = vec![0.0f64; gts.len()];
    let mut max_iou = vec![0.0f64; gts.len()];
    for c in claim.iter().flatten() {
        let (gi, m, iou_v) = *c;
        max_m[gi] = max_m[gi].max(m);
        max_iou[gi] = max_iou[gi].max(iou_v);
    }
    for (ai, c) in claim.iter().enumerate() {
        if let Some((gi, m, _)) = *c {
            fg_mask[ai] = true;
            matched_gt[ai] = gi;
            alignment[ai] = if max_m[gi] > 0.0 { m / max_m[gi] * max_iou[gi] } else { 0.0 };
        }
    }
    AssignResult { fg_mask, matched_gt, alignment }
}

/// The full composite loss: giou and focal averaged over foreground anchors,
/// objectness focal averaged over all anchors with the normalized alignment
/// as target (0 for background), then weighted.
pub fn fgiou_total(
    pred: &AnchorPreds,
    gts: &[GtBox],
    fp: &FocalParams,
    w: &LossWeights,
) -> LossBreakdown {
    fgiou_total_with_grad(pred, gts, fp, w).0
}

/// Composite loss plus gradients of the weighted total w.r.t. boxes, class
/// probabilities, and objectness probabilities.
pub fn fgiou_total_with_grad(
    pred: &AnchorPreds,
    gts: &[GtBox],
    fp: &FocalParams,
    w: &LossWeights,
) -> (LossBreakdown, LossGrads, AssignResult) {
    let assign = task_aligned_assign(&pred.class_scores, &pred.boxes, &pred.centers, gts);
    let (breakdown, grads) = fgiou_with_assignment(pred, gts, &assign, fp, w);
    (breakdown, grads, assign)
}

/// The loss terms for a fixed assignment (targets treated as constants).
pub fn fgiou_with_assignment(
    pred: &AnchorPreds,
    gts: &[GtBox],
    assign: &AssignResult,
    fp: &FocalParams,
    w: &LossWeights,
) -> (LossBreakdown, LossGrads) {
    let num_anchors = pred.boxes.len();
    let num_pos = assign.num_foreground();
    let pos_norm = 1.0 / num_pos.max(1) as f64;
    let all_norm = 1.0 / num_anchors.max(1) as f64;

    let mut giou_sum = 0.0;
    let mut focal_sum = 0.0;
    let mut obj_sum = 0.0;
    let mut d_boxes = vec![[0.0; 4]; num_anchors];
    let mut d_scores: Vec<Vec<f64>> =
        pred.class_scores.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut d_obj = vec![0.0; num_anchors];

    for ai in 0..num_anchors {
        if assign.fg_mask[ai] {
            let gt = &gts[assign.matched_gt[ai]];
            let (gl, gg) = giou_loss_with_grad(&pred.boxes[ai], &gt.bbox);
            giou_sum += gl;
            for k in 0..4 {
                d_boxes[ai][k] = w.w_box * pos_norm * gg[k];
            }
            let (fl, fg) = focal_loss_with_grad(&pred.class_scores[ai], gt.class_id, fp);
            focal_sum += fl;
            for (c, g) in fg.iter().enumerate() {
                d_scores[ai][c] = w.w_cls * pos_norm * g;
            }
        }
        let (ol, og) = obj_focal_loss_with_grad(pred.objectness[ai], assign.alignment[ai], fp);
        obj_sum += ol;
        d_obj[ai] = w.w_obj * all_norm * og;
    }

    let giou = giou_sum * pos_norm;
    let focal = focal_sum * pos_norm;
    let obj_focal = obj_sum * all_norm;
    let breakdown = LossBreakdown {
        giou,
        focal,
        obj_focal,
        total: w.w_box * giou + w.w_cls * focal + w.w_obj * obj_focal,
        num_pos,
    };
    (breakdown, LossGrads { d_boxes, d_class_scores: d_scores, d_objectness: d_obj })
}
