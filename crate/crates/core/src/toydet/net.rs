//! Minimal anchor-free grid detector: three conv+SiLU stages, a pyramid
//! pooling block (DPSA_SPPF or plain SPPF), and a 1x1 head predicting
//! objectness, class logits, and box deltas per cell.
//!
//! Box decode per cell: center = cell center + tanh(delta) * stride,
//! size = stride * exp(clamp(delta, -4, 4)), emitted in corner form, so
//! decoded boxes always satisfy x2 >= x1 and y2 >= y1.

use super::{HEAD_CH, IMG_SIZE, NUM_CLASSES, STRIDE};
use crate::dpsa::{
    dpsa_sppf_backward, dpsa_sppf_forward_cached, DpsaSppfCache, DpsaSppfGrads, DpsaSppfParams,
};
use crate::eval::Detection;
use crate::fgiou::{iou, AnchorPreds, BBox, LossGrads};
use crate::tensor::{
    channel_concat, channel_slice, conv2d, conv2d_backward, maxpool2d_backward,
    maxpool2d_indexed, silu, silu_backward, ConvGrads, ConvParams, Scalar, Tensor, TensorError,
};
use rand::Rng;

/// Init gain for feature-path convolutions; without normalization layers,
/// plain 1/sqrt(fan_in) weights collapse activation variance by roughly
/// half per conv+SiLU stage.
const GAIN: f64 = std::f64::consts::SQRT_2 * 1.7320508075688772; // sqrt(6)

/// Plain SPPF: same reduce/pool/concat/expand wiring, no attention.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainSppf<T = f32> {
    pub cv1: ConvParams<T>,
    pub cv2: ConvParams<T>,
}

impl<T: Scalar> PlainSppf<T> {
    pub fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let hidden = (c_in / 2).max(1);
        Self {
            cv1: ConvParams::init_uniform_gain(hidden, c_in, 1, 1, 0, GAIN, rng),
            cv2: ConvParams::init_uniform_gain(c_out, 4 * hidden, 1, 1, 0, GAIN, rng),
        }
    }

    pub fn to_f64(&self) -> PlainSppf<f64> {
        PlainSppf { cv1: self.cv1.to_f64(), cv2: self.cv2.to_f64() }
    }
}

#[derive(Debug, Clone)]
pub struct PlainSppfCache<T = f32> {
    pre1: Tensor<T>,
    y0: Tensor<T>,
    pool_idx: [Vec<usize>; 3],
    cat: Tensor<T>,
    pre2: Tensor<T>,
}

fn plain_sppf_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &PlainSppf<T>,
) -> Result<(Tensor<T>, PlainSppfCache<T>), TensorError> {
    let pre1 = conv2d(x, &p.cv1)?;
    let y0 = silu(&pre1);
    let (p5, i5) = maxpool2d_indexed(&y0, 5, 1, 2)?;
    let (p9, i9) = maxpool2d_indexed(&y0, 9, 1, 4)?;
    let (p13, i13) = maxpool2d_indexed(&y0, 13, 1, 6)?;
    let cat = channel_concat(&[&y0, &p5, &p9, &p13])?;
    let pre2 = conv2d(&cat, &p.cv2)?;
    let out = silu(&pre2);
    Ok((out, PlainSppfCache { pre1, y0, pool_idx: [i5, i9, i13], cat, pre2 }))
}

fn plain_sppf_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &PlainSppf<T>,
    cache: &PlainSppfCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, PlainSppfGrads<T>), TensorError> {
    let dpre2 = silu_backward(&cache.pre2, dy);
    let (dcat, g_cv2) = conv2d_backward(&cache.cat, &p.cv2, &dpre2)?;
    let hidden = cache.y0.shape()[1];
    let mut dy0 = channel_slice(&dcat, 0, hidden)?;
    for (k, idx) in cache.pool_idx.iter().enumerate() {
        let dpool = channel_slice(&dcat, (k + 1) * hidden, (k + 2) * hidden)?;
        dy0.add_assign(&maxpool2d_backward(cache.y0.shape(), idx, &dpool));
    }
    let dpre1 = silu_backward(&cache.pre1, &dy0);
    let (dx, g_cv1) = conv2d_backward(x, &p.cv1, &dpre1)?;
    Ok((dx, PlainSppfGrads { cv1: g_cv1, cv2: g_cv2 }))
}

#[derive(Debug, Clone)]
pub struct PlainSppfGrads<T = f32> {
    pub cv1: ConvGrads<T>,
    pub cv2: ConvGrads<T>,
}

/// The pyramid block of the net: attention-equipped or plain.
#[derive(Debug, Clone, PartialEq)]
pub enum SppfBlock<T = f32> {
    Dpsa(DpsaSppfParams<T>),
    Plain(PlainSppf<T>),
}

impl<T: Scalar> SppfBlock<T> {
    pub fn to_f64(&self) -> SppfBlock<f64> {
        match self {
            SppfBlock::Dpsa(p) => SppfBlock::Dpsa(p.to_f64()),
            SppfBlock::Plain(p) => SppfBlock::Plain(p.to_f64()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SppfBlockCache<T = f32> {
    Dpsa(DpsaSppfCache<T>),
    Plain(PlainSppfCache<T>),
}

#[derive(Debug, Clone)]
pub enum SppfBlockGrads<T = f32> {
    Dpsa(DpsaSppfGrads<T>),
    Plain(PlainSppfGrads<T>),
}

/// The full detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet<T = f32> {
    pub stem: ConvParams<T>,
    pub down1: ConvParams<T>,
    pub down2: ConvParams<T>,
    pub sppf: SppfBlock<T>,
    pub head: ConvParams<T>,
}

impl<T: Scalar> ToyNet<T> {
    /// 3 -> 8 -> 16 -> 32 channels, SPPF 32 -> 32, head 32 -> 8.
    pub fn init(use_dpsa: bool, rng: &mut impl Rng) -> Self {
        let mut head = ConvParams::init_uniform(HEAD_CH, 32, 1, 1, 0, rng);
        // objectness/class biases start at a low prior (sigmoid(-3) ~ 0.047)
        // so the dense negatives begin nearly satisfied and the positive
        // signal is not drowned out early in training
        if let Some(b) = head.bias.as_mut() {
            for c in 0..1 + NUM_CLASSES {
                b.data_mut()[c] = T::from_f64(-3.0);
            }
        }
        Self {
            stem: ConvParams::init_uniform_gain(8, 3, 3, 1, 1, GAIN, rng),
            down1: ConvParams::init_uniform_gain(16, 8, 3, 2, 1, GAIN, rng),
            down2: ConvParams::init_uniform_gain(32, 16, 3, 2, 1, GAIN, rng),
            sppf: if use_dpsa {
                SppfBlock::Dpsa(DpsaSppfParams::init(32, 32, rng))
            } else {
                SppfBlock::Plain(PlainSppf::init(32, 32, rng))
            },
            head,
        }
    }

    pub fn to_f64(&self) -> ToyNet<f64> {
        ToyNet {
            stem: self.stem.to_f64(),
            down1: self.down1.to_f64(),
            down2: self.down2.to_f64(),
            sppf: self.sppf.to_f64(),
            head: self.head.to_f64(),
        }
    }

    /// Named parameter tensors in a stable order (serialization, probing).
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        let mut convs: Vec<(String, &ConvParams<T>)> = vec![
            ("stem".into(), &self.stem),
            ("down1".into(), &self.down1),
            ("down2".into(), &self.down2),
        ];
        match &self.sppf {
            SppfBlock::Dpsa(p) => {
                convs.push(("sppf.cv1".into(), &p.cv1));
                convs.push(("sppf.cv2".into(), &p.cv2));
                convs.push(("sppf.dpsa.channel.reduce".into(), &p.dpsa.channel.reduce));
                convs.push(("sppf.dpsa.channel.expand".into(), &p.dpsa.channel.expand));
                convs.push(("sppf.dpsa.spatial.conv".into(), &p.dpsa.spatial.conv));
            }
            SppfBlock::Plain(p) => {
                convs.push(("sppf.cv1".into(), &p.cv1));
                convs.push(("sppf.cv2".into(), &p.cv2));
            }
        }
        convs.push(("head".into(), &self.head));
        for (name, cp) in convs {
            out.push((format!("{name}.weight"), &cp.weight));
            if let Some(b) = &cp.bias {
                out.push((format!("{name}.bias"), b));
            }
        }
        out
    }

    /// Mutable parameter tensors, in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn push<'a, T: Scalar>(v: &mut Vec<&'a mut Tensor<T>>, cp: &'a mut ConvParams<T>) {
            v.push(&mut cp.weight);
            if let Some(b) = cp.bias.as_mut() {
                v.push(b);
            }
        }
        let mut v = Vec::new();
        push(&mut v, &mut self.stem);
        push(&mut v, &mut self.down1);
        push(&mut v, &mut self.down2);
        match &mut self.sppf {
            SppfBlock::Dpsa(p) => {
                push(&mut v, &mut p.cv1);
                push(&mut v, &mut p.cv2);
                push(&mut v, &mut p.dpsa.channel.reduce);
                push(&mut v, &mut p.dpsa.channel.expand);
                push(&mut v, &mut p.dpsa.spatial.conv);
            }
            SppfBlock::Plain(p) => {
                push(&mut v, &mut p.cv1);
                push(&mut v, &mut p.cv2);
            }
        }
        push(&mut v, &mut self.head);
        v
    }
}

#[derive(Debug, Clone)]
pub struct NetCache<T = f32> {
    pre_stem: Tensor<T>,
    act_stem: Tensor<T>,
    pre_d1: Tensor<T>,
    act_d1: Tensor<T>,
    pre_d2: Tensor<T>,
    act_d2: Tensor<T>,
    sppf: SppfBlockCache<T>,
    sppf_out: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct NetGrads<T = f32> {
    pub stem: ConvGrads<T>,
    pub down1: ConvGrads<T>,
    pub down2: ConvGrads<T>,
    pub sppf: SppfBlockGrads<T>,
    pub head: ConvGrads<T>,
}

impl<T: Scalar> NetGrads<T> {
    /// Gradient tensors in the same order as `ToyNet::params_mut`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        fn push<'a, T: Scalar>(v: &mut Vec<&'a Tensor<T>>, g: &'a ConvGrads<T>) {
            v.push(&g.weight);
            if let Some(b) = &g.bias {
                v.push(b);
            }
        }
        let mut v = Vec::new();
        push(&mut v, &self.stem);
        push(&mut v, &self.down1);
        push(&mut v, &self.down2);
        match &self.sppf {
            SppfBlockGrads::Dpsa(g) => {
                push(&mut v, &g.cv1);
                push(&mut v, &g.cv2);
                push(&mut v, &g.dpsa.channel.reduce);
                push(&mut v, &g.dpsa.channel.expand);
                push(&mut v, &g.dpsa.spatial.conv);
            }
            SppfBlockGrads::Plain(g) => {
                push(&mut v, &g.cv1);
                push(&mut v, &g.cv2);
            }
        }
        push(&mut v, &self.head);
        v
    }

    pub fn add_assign(&mut self, other: &NetGrads<T>) {
        fn add<T: Scalar>(a: &mut ConvGrads<T>, b: &ConvGrads<T>) {
            a.weight.add_assign(&b.weight);
            if let (Some(ab), Some(bb)) = (a.bias.as_mut(), b.bias.as_ref()) {
                ab.add_assign(bb);
            }
        }
        add(&mut self.stem, &other.stem);
        add(&mut self.down1, &other.down1);
        add(&mut self.down2, &other.down2);
        match (&mut self.sppf, &other.sppf) {
            (SppfBlockGrads::Dpsa(a), SppfBlockGrads::Dpsa(b)) => {
                add(&mut a.cv1, &b.cv1);
                add(&mut a.cv2, &b.cv2);
                add(&mut a.dpsa.channel.reduce, &b.dpsa.channel.reduce);
                add(&mut a.dpsa.channel.expand, &b.dpsa.channel.expand);
                add(&mut a.dpsa.spatial.conv, &b.dpsa.spatial.conv);
            }
            (SppfBlockGrads::Plain(a), SppfBlockGrads::Plain(b)) => {
                add(&mut a.cv1, &b.cv1);
                add(&mut a.cv2, &b.cv2);
            }
            _ => panic!("mismatched sppf grad variants"),
        }
        add(&mut self.head, &other.head);
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn push<'a, T: Scalar>(v: &mut Vec<&'a mut Tensor<T>>, g: &'a mut ConvGrads<T>) {
            v.push(&mut g.weight);
            if let Some(b) = g.bias.as_mut() {
                v.push(b);
            }
        }
        let mut v = Vec::new();
        push(&mut v, &mut self.stem);
        push(&mut v, &mut self.down1);
        push(&mut v, &mut self.down2);
        match &mut self.sppf {
            SppfBlockGrads::Dpsa(g) => {
                push(&mut v, &mut g.cv1);
                push(&mut v, &mut g.cv2);
                push(&mut v, &mut g.dpsa.channel.reduce);
                push(&mut v, &mut g.dpsa.channel.expand);
                push(&mut v, &mut g.dpsa.spatial.conv);
            }
            SppfBlockGrads::Plain(g) => {
                push(&mut v, &mut g.cv1);
                push(&mut v, &mut g.cv2);
            }
        }
        push(&mut v, &mut self.head);
        v
    }
}

/// Forward pass for a 64x64 input; errors on any other spatial size.
pub fn forward_detect<T: Scalar>(
    net: &ToyNet<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, NetCache<T>), TensorError> {
    let (_, _, h, w) = x.dims4("forward_detect")?;
    if h != IMG_SIZE || w != IMG_SIZE {
        return Err(TensorError::AxisMismatch {
            op: "forward_detect",
            axis: "spatial",
            expected: IMG_SIZE,
            got: h.max(w),
        });
    }
    let pre_stem = conv2d(x, &net.stem)?;
    let act_stem = silu(&pre_stem);
    let pre_d1 = conv2d(&act_stem, &net.down1)?;
    let act_d1 = silu(&pre_d1);
    let pre_d2 = conv2d(&act_d1, &net.down2)?;
    let act_d2 = silu(&pre_d2);
    let (sppf_out, sppf_cache) = match &net.sppf {
        SppfBlock::Dpsa(p) => {
            let (y, c) = dpsa_sppf_forward_cached(&act_d2, p)?;
            (y, SppfBlockCache::Dpsa(c))
        }
        SppfBlock::Plain(p) => {
            let (y, c) = plain_sppf_forward(&act_d2, p)?;
            (y, SppfBlockCache::Plain(c))
        }
    };
    let head = conv2d(&sppf_out, &net.head)?;
    Ok((
        head,
        NetCache { pre_stem, act_stem, pre_d1, act_d1, pre_d2, act_d2, sppf: sppf_cache, sppf_out },
    ))
}

/// Backward from head gradients to every parameter gradient.
pub fn backward_detect<T: Scalar>(
    net: &ToyNet<T>,
    x: &Tensor<T>,
    cache: &NetCache<T>,
    dhead: &Tensor<T>,
) -> Result<NetGrads<T>, TensorError> {
    let (dsppf_out, g_head) = conv2d_backward(&cache.sppf_out, &net.head, dhead)?;
    let (dact_d2, g_sppf) = match (&net.sppf, &cache.sppf) {
        (SppfBlock::Dpsa(p), SppfBlockCache::Dpsa(c)) => {
            let (dx, g) = dpsa_sppf_backward(&cache.act_d2, p, c, &dsppf_out)?;
            (dx, SppfBlockGrads::Dpsa(g))
        }
        (SppfBlock::Plain(p), SppfBlockCache::Plain(c)) => {
            let (dx, g) = plain_sppf_backward(&cache.act_d2, p, c, &dsppf_out)?;
            (dx, SppfBlockGrads::Plain(g))
        }
        _ => panic!("mismatched sppf cache variant"),
    };
    let dpre_d2 = silu_backward(&cache.pre_d2, &dact_d2);
    let (dact_d1, g_down2) = conv2d_backward(&cache.act_d1, &net.down2, &dpre_d2)?;
    let dpre_d1 = silu_backward(&cache.pre_d1, &dact_d1);
    let (dact_stem, g_down1) = conv2d_backward(&cache.act_stem, &net.down1, &dpre_d1)?;
    let dpre_stem = silu_backward(&cache.pre_stem, &dact_stem);
    let (_, g_stem) = conv2d_backward(x, &net.stem, &dpre_stem)?;
    Ok(NetGrads { stem: g_stem, down1: g_down1, down2: g_down2, sppf: g_sppf, head: g_head })
}

/// Everything needed to push loss gradients back through the box decode.
#[derive(Debug, Clone)]
pub struct DecodeAux {
    tanh_dx: Vec<f64>,
    tanh_dy: Vec<f64>,
    width: Vec<f64>,
    height: Vec<f64>,
    dw_active: Vec<bool>,
    dh_active: Vec<bool>,
}

/// Decode the head tensor into per-anchor predictions (probabilities and
/// corner boxes) plus the intermediates needed for the backward chain.
pub fn decode_anchor_preds<T: Scalar>(head: &Tensor<T>) -> (AnchorPreds, DecodeAux) {
    let (_, ch, gh, gw) = head
        .dims4("decode_anchor_preds")
        .expect("head tensor must be rank 4");
    assert_eq!(ch, HEAD_CH, "head channel count");
    let cells = gh * gw;
    let plane = cells;
    let at = |c: usize, i: usize| head.data()[c * plane + i].as_f64();
    let sigmoid = |v: f64| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    };

    let mut preds = AnchorPreds {
        boxes: Vec::with_capacity(cells),
        class_scores: Vec::with_capacity(cells),
        objectness: Vec::with_capacity(cells),
        centers: Vec::with_capacity(cells),
    };
    let mut aux = DecodeAux {
        tanh_dx: Vec::with_capacity(cells),
        tanh_dy: Vec::with_capacity(cells),
        width: Vec::with_capacity(cells),
        height: Vec::with_capacity(cells),
        dw_active: Vec::with_capacity(cells),
        dh_active: Vec::with_capacity(cells),
    };
    let stride = STRIDE as f64;
    for i in 0..cells {
        let (gy, gx) = (i / gw, i % gw);
        let cx = (gx as f64 + 0.5) * stride;
        let cy = (gy as f64 + 0.5) * stride;
        preds.centers.push((cx, cy));
        preds.objectness.push(sigmoid(at(0, i)));
        preds
            .class_scores
            .push((0..NUM_CLASSES).map(|c| sigmoid(at(1 + c, i))).collect());

        let tdx = at(1 + NUM_CLASSES, i).tanh();
        let tdy = at(2 + NUM_CLASSES, i).tanh();
        let raw_dw = at(3 + NUM_CLASSES, i);
        let raw_dh = at(4 + NUM_CLASSES, i);
        let dw = raw_dw.clamp(-4.0, 4.0);
        let dh = raw_dh.clamp(-4.0, 4.0);
        let bw = stride * dw.exp();
        let bh = stride * dh.exp();
        let bx = cx + tdx * stride;
        let by = cy + tdy * stride;
        preds.boxes.push(BBox::new(bx - bw / 2.0, by - bh / 2.0, bx + bw / 2.0, by + bh / 2.0));
        aux.tanh_dx.push(tdx);
        aux.tanh_dy.push(tdy);
        aux.width.push(bw);
        aux.height.push(bh);
        aux.dw_active.push(raw_dw.abs() < 4.0);
        aux.dh_active.push(raw_dh.abs() < 4.0);
    }
    (preds, aux)
}

/// Chain loss gradients (w.r.t. probabilities and corner coordinates) back
/// to head-logit gradients.
pub fn loss_grads_to_head<T: Scalar>(
    grads: &LossGrads,
    preds: &AnchorPreds,
    aux: &DecodeAux,
    head_shape: &[usize],
) -> Tensor<T> {
    let (gh, gw) = (head_shape[2], head_shape[3]);
    let cells = gh * gw;
    let mut dhead = Tensor::<T>::zeros(head_shape);
    let stride = STRIDE as f64;
    for i in 0..cells {
        let set = |d: &mut Tensor<T>, c: usize, v: f64| {
            d.data_mut()[c * cells + i] = T::from_f64(v);
        };
        let p_obj = preds.objectness[i];
        set(&mut dhead, 0, grads.d_objectness[i] * p_obj * (1.0 - p_obj));
        for c in 0..NUM_CLASSES {
            let p = preds.class_scores[i][c];
            set(&mut dhead, 1 + c, grads.d_class_scores[i][c] * p * (1.0 - p));
        }
        let g = grads.d_boxes[i];
        let ddx = (g[0] + g[2]) * stride * (1.0 - aux.tanh_dx[i] * aux.tanh_dx[i]);
        let ddy = (g[1] + g[3]) * stride * (1.0 - aux.tanh_dy[i] * aux.tanh_dy[i]);
        let ddw =
            if aux.dw_active[i] { (g[2] - g[0]) * aux.width[i] / 2.0 } else { 0.0 };
        let ddh =
            if aux.dh_active[i] { (g[3] - g[1]) * aux.height[i] / 2.0 } else { 0.0 };
        set(&mut dhead, 1 + NUM_CLASSES, ddx);
        set(&mut dhead, 2 + NUM_CLASSES, ddy);
        set(&mut dhead, 3 + NUM_CLASSES, ddw);
        set(&mut dhead, 4 + NUM_CLASSES, ddh);
    }
    dhead
}

/// Convert an image to a 1x3xHxW input tensor.
pub fn img_to_tensor(img: &crate::enhance::ImageF32) -> Tensor<f32> {
    let (w, h) = (img.width, img.height);
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    for c in 0..3 {
        for i in 0..w * h {
            // center to [-1, 1]
            t.data_mut()[c * w * h + i] = 2.0 * img.data()[3 * i + c] - 1.0;
        }
    }
    t
}

pub const SCORE_THRESH: f64 = 0.001;
pub const NMS_IOU: f64 = 0.6;
pub const MAX_DETECTIONS: usize = 100;

/// Decode + score + class-wise NMS for one image. Scores are
/// objectness * class probability; the full detection head is one-to-many,
/// so duplicates on the same object are pruned greedily per class.
pub fn predict<T: Scalar>(
    net: &ToyNet<T>,
    x: &Tensor<T>,
    image_id: i64,
) -> Result<Vec<Detection>, TensorError> {
    let (head, _) = forward_detect(net, x)?;
    let (preds, _) = decode_anchor_preds(&head);
    Ok(detections_from_preds(&preds, image_id))
}

/// Score + NMS over already-decoded predictions.
pub fn detections_from_preds(preds: &AnchorPreds, image_id: i64) -> Vec<Detection> {
    let mut candidates: Vec<Detection> = Vec::new();
    for (i, scores) in preds.class_scores.iter().enumerate() {
        for (class_id, &p) in scores.iter().enumerate() {
            let score = preds.objectness[i] * p;
            if score >= SCORE_THRESH {
                candidates.push(Detection {
                    image_id,
                    class_id,
                    score,
                    bbox: preds.boxes[i],
                });
            }
        }
    }
    // greedy per-class NMS, deterministic order
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.class_id.cmp(&b.class_id))
            .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
    });
    let mut kept: Vec<Detection> = Vec::new();
    for cand in candidates {
        if kept.len() >= MAX_DETECTIONS {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox, &cand.bbox) > NMS_IOU);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toydet::GRID;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_shape_is_8x16x16() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let net = ToyNet::<f32>::init(true, &mut rng);
        let x = Tensor::random_uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
        let (head, _) = forward_detect(&net, &x).unwrap();
        assert_eq!(head.shape(), &[1, HEAD_CH, GRID, GRID]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let net = ToyNet::<f32>::init(false, &mut rng);
        let x = Tensor::random_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
        assert!(forward_detect(&net, &x).is_err());
    }

    #[test]
    fn zero_deltas_decode_to_cell_sized_boxes() {
        let head = Tensor::<f32>::zeros(&[1, HEAD_CH, GRID, GRID]);
        let (preds, _) = decode_anchor_preds(&head);
        for (i, b) in preds.boxes.iter().enumerate() {
            let (cx, cy) = preds.centers[i];
            assert!((b.x1 - (cx - 2.0)).abs() < 1e-6);
            assert!((b.x2 - (cx + 2.0)).abs() < 1e-6);
            assert!((b.y1 - (cy - 2.0)).abs() < 1e-6);
            assert!((b.y2 - (cy + 2.0)).abs() < 1e-6);
            assert!((b.x2 - b.x1 - STRIDE as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn decoded_boxes_are_always_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..20 {
            let head = Tensor::<f32>::random_uniform(
                &[1, HEAD_CH, GRID, GRID],
                -10.0,
                10.0,
                &mut rng,
            );
            let (preds, _) = decode_anchor_preds(&head);
            for b in &preds.boxes {
                assert!(b.x2 >= b.x1 && b.y2 >= b.y1);
                assert!(b.area().is_finite());
            }
        }
    }

    #[test]
    fn plain_and_dpsa_nets_share_everything_but_the_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let plain = ToyNet::<f32>::init(false, &mut rng);
        match plain.sppf {
            SppfBlock::Plain(_) => {}
            _ => panic!("expected plain block"),
        }
        // dpsa variant carries 6 extra tensors (three attention convs)
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let dpsa = ToyNet::<f32>::init(true, &mut rng);
        assert_eq!(dpsa.named_params().len(), plain.named_params().len() + 6);
    }

    #[test]
    fn nms_prunes_duplicates() {
        let preds = AnchorPreds {
            boxes: vec![
                BBox::new(0.0, 0.0, 10.0, 10.0),
                BBox::new(0.5, 0.5, 10.5, 10.5),
                BBox::new(30.0, 30.0, 40.0, 40.0),
            ],
            class_scores: vec![
                vec![0.9, 0.01, 0.01],
                vec![0.8, 0.01, 0.01],
                vec![0.01, 0.7, 0.01],
            ],
            objectness: vec![0.9, 0.9, 0.9],
            centers: vec![(5.0, 5.0), (5.5, 5.5), (35.0, 35.0)],
        };
        let dets = detections_from_preds(&preds, 0);
        // the overlapping lower-scored class-0 box is suppressed
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class_id, 0);
        assert_eq!(dets[1].class_id, 1);
    }
}
