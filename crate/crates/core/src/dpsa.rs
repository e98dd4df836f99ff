//! Dual-pooling sequential attention (DPSA) and the DPSA_SPPF pyramid
//! pooling block.
//!
//! Channel attention pools globally by average and max, pushes both through
//! one shared two-layer 1x1-conv MLP (reduction ratio 16, ReLU between the
//! layers), sums, and gates channels via sigmoid. Spatial attention stacks
//! channel-wise mean and max, applies a 7x7 conv, and gates positions via
//! sigmoid. DPSA runs channel then spatial attention. DPSA_SPPF reduces
//! channels with a 1x1 conv + SiLU, runs three parallel max pools (5, 9,
//! 13, stride 1, pad k/2) from the same reduced tensor, concatenates,
//! applies DPSA, and finishes with a 1x1 conv + SiLU.
//!
//! Every block exposes a forward that captures a cache and a backward that
//! consumes it, so gradients flow without an autodiff graph.

use crate::tensor::{
    adaptive_avg_pool, adaptive_avg_pool_backward, adaptive_max_pool_backward,
    adaptive_max_pool_indexed, broadcast_mul, broadcast_mul_backward, channel_concat,
    channel_max_backward, channel_max_indexed, channel_mean, channel_mean_backward,
    channel_slice, conv2d, conv2d_backward, maxpool2d_backward, maxpool2d_indexed, relu,
    relu_backward, sigmoid, sigmoid_backward, silu, silu_backward, ConvGrads, ConvParams,
    Scalar, Tensor, TensorError,
};
use std::io::{Read, Write};
use std::path::Path;

/// Channel-MLP reduction ratio.
pub const REDUCTION: usize = 16;
/// The three parallel pooling kernels.
pub const POOL_KERNELS: [usize; 3] = [5, 9, 13];

/// Shared two-layer channel MLP: one parameter set serves both the average
/// and the max pooling branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams<T = f32> {
    pub reduce: ConvParams<T>,
    pub expand: ConvParams<T>,
}

impl<T: Scalar> ChannelAttentionParams<T> {
    /// Hidden width is max(1, channels / 16).
    pub fn init(channels: usize, rng: &mut impl rand::Rng) -> Self {
        let hidden = (channels / REDUCTION).max(1);
        Self {
            reduce: ConvParams::init_uniform(hidden, channels, 1, 1, 0, rng),
            expand: ConvParams::init_uniform(channels, hidden, 1, 1, 0, rng),
        }
    }

    pub fn to_f64(&self) -> ChannelAttentionParams<f64> {
        ChannelAttentionParams { reduce: self.reduce.to_f64(), expand: self.expand.to_f64() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttentionParams<T = f32> {
    pub conv: ConvParams<T>,
}

impl<T: Scalar> SpatialAttentionParams<T> {
    /// Fixed 7x7 kernel over the 2-channel mean/max stack, padding 3.
    pub fn init(rng: &mut impl rand::Rng) -> Self {
        Self { conv: ConvParams::init_uniform(1, 2, 7, 1, 3, rng) }
    }

    pub fn to_f64(&self) -> SpatialAttentionParams<f64> {
        SpatialAttentionParams { conv: self.conv.to_f64() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpsaParams<T = f32> {
    pub channel: ChannelAttentionParams<T>,
    pub spatial: SpatialAttentionParams<T>,
}

impl<T: Scalar> DpsaParams<T> {
    pub fn init(channels: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            channel: ChannelAttentionParams::init(channels, rng),
            spatial: SpatialAttentionParams::init(rng),
        }
    }

    pub fn to_f64(&self) -> DpsaParams<f64> {
        DpsaParams { channel: self.channel.to_f64(), spatial: self.spatial.to_f64() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpsaSppfParams<T = f32> {
    pub cv1: ConvParams<T>,
    pub cv2: ConvParams<T>,
    pub dpsa: DpsaParams<T>,
}

impl<T: Scalar> DpsaSppfParams<T> {
    /// Hidden width is max(1, c_in / 2); DPSA runs over the 4x-hidden
    /// concatenation. C_out defaults to c_in so the block drops in.
    pub fn init(c_in: usize, c_out: usize, rng: &mut impl rand::Rng) -> Self {
        let hidden = (c_in / 2).max(1);
        // feature-path convs carry sqrt(6) gain to preserve activation
        // variance; the attention convs keep the plain 1/sqrt(fan_in)
        // bound since their outputs pass through sigmoid gates
        let gain = 6.0f64.sqrt();
        Self {
            cv1: ConvParams::init_uniform_gain(hidden, c_in, 1, 1, 0, gain, rng),
            cv2: ConvParams::init_uniform_gain(c_out, 4 * hidden, 1, 1, 0, gain, rng),
            dpsa: DpsaParams::init(4 * hidden, rng),
        }
    }

    pub fn init_default(c_in: usize, rng: &mut impl rand::Rng) -> Self {
        Self::init(c_in, c_in, rng)
    }

    pub fn to_f64(&self) -> DpsaSppfParams<f64> {
        DpsaSppfParams { cv1: self.cv1.to_f64(), cv2: self.cv2.to_f64(), dpsa: self.dpsa.to_f64() }
    }
}

// ---- gradients ----

#[derive(Debug, Clone)]
pub struct ChannelAttentionGrads<T = f32> {
    pub reduce: ConvGrads<T>,
    pub expand: ConvGrads<T>,
}

#[derive(Debug, Clone)]
pub struct SpatialAttentionGrads<T = f32> {
    pub conv: ConvGrads<T>,
}

#[derive(Debug, Clone)]
pub struct DpsaGrads<T = f32> {
    pub channel: ChannelAttentionGrads<T>,
    pub spatial: SpatialAttentionGrads<T>,
}

#[derive(Debug, Clone)]
pub struct DpsaSppfGrads<T = f32> {
    pub cv1: ConvGrads<T>,
    pub cv2: ConvGrads<T>,
    pub dpsa: DpsaGrads<T>,
}

fn add_conv_grads<T: Scalar>(a: &mut ConvGrads<T>, b: &ConvGrads<T>) {
    a.weight.add_assign(&b.weight);
    if let (Some(ab), Some(bb)) = (a.bias.as_mut(), b.bias.as_ref()) {
        ab.add_assign(bb);
    }
}

// ---- channel attention ----

#[derive(Debug, Clone)]
pub struct ChannelAttentionCache<T = f32> {
    avg: Tensor<T>,
    max: Tensor<T>,
    max_idx: Vec<usize>,
    red_avg: Tensor<T>,
    red_max: Tensor<T>,
    hid_avg: Tensor<T>,
    hid_max: Tensor<T>,
    pub weights: Tensor<T>,
}

/// Channel attention: weights = sigmoid(MLP(avgpool x) + MLP(maxpool x)),
/// y = x * weights. Returns (weights, y).
pub fn channel_attention<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (y, cache) = channel_attention_forward(x, p)?;
    Ok((cache.weights, y))
}

pub fn channel_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
) -> Result<(Tensor<T>, ChannelAttentionCache<T>), TensorError> {
    let avg = adaptive_avg_pool(x)?;
    let (max, max_idx) = adaptive_max_pool_indexed(x)?;
    let red_avg = conv2d(&avg, &p.reduce)?;
    let red_max = conv2d(&max, &p.reduce)?;
    let hid_avg = relu(&red_avg);
    let hid_max = relu(&red_max);
    let mut pre = conv2d(&hid_avg, &p.expand)?;
    pre.add_assign(&conv2d(&hid_max, &p.expand)?);
    let weights = sigmoid(&pre);
    let y = broadcast_mul(x, &weights)?;
    Ok((y, ChannelAttentionCache { avg, max, max_idx, red_avg, red_max, hid_avg, hid_max, weights }))
}

pub fn channel_attention_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
    cache: &ChannelAttentionCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, ChannelAttentionGrads<T>), TensorError> {
    let (mut dx, dw) = broadcast_mul_backward(x, &cache.weights, dy)?;
    let dpre = sigmoid_backward(&cache.weights, &dw);

    // avg branch
    let (dhid_avg, mut g_expand) = conv2d_backward(&cache.hid_avg, &p.expand, &dpre)?;
    let dred_avg = relu_backward(&cache.red_avg, &dhid_avg);
    let (davg, mut g_reduce) = conv2d_backward(&cache.avg, &p.reduce, &dred_avg)?;
    dx.add_assign(&adaptive_avg_pool_backward(x.shape(), &davg));

    // max branch shares the same parameters
    let (dhid_max, g_expand_m) = conv2d_backward(&cache.hid_max, &p.expand, &dpre)?;
    let dred_max = relu_backward(&cache.red_max, &dhid_max);
    let (dmax, g_reduce_m) = conv2d_backward(&cache.max, &p.reduce, &dred_max)?;
    dx.add_assign(&adaptive_max_pool_backward(x.shape(), &cache.max_idx, &dmax));

    add_conv_grads(&mut g_expand, &g_expand_m);
    add_conv_grads(&mut g_reduce, &g_reduce_m);
    Ok((dx, ChannelAttentionGrads { reduce: g_reduce, expand: g_expand }))
}

// ---- spatial attention ----

#[derive(Debug, Clone)]
pub struct SpatialAttentionCache<T = f32> {
    stack: Tensor<T>,
    max_winners: Vec<usize>,
    pub map: Tensor<T>,
}

/// Spatial attention: map = sigmoid(conv7x7([mean_c x; max_c x])),
/// y = x * map. Returns (map, y).
pub fn spatial_attention<T: Scalar>(
    x: &Tensor<T>,
    p: &SpatialAttentionParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (y, cache) = spatial_attention_forward(x, p)?;
    Ok((cache.map, y))
}

pub fn spatial_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &SpatialAttentionParams<T>,
) -> Result<(Tensor<T>, SpatialAttentionCache<T>), TensorError> {
    let mean = channel_mean(x)?;
    let (max, max_winners) = channel_max_indexed(x)?;
    let stack = channel_concat(&[&mean, &max])?;
    let map = sigmoid(&conv2d(&stack, &p.conv)?);
    let y = broadcast_mul(x, &map)?;
    Ok((y, SpatialAttentionCache { stack, max_winners, map }))
}

pub fn spatial_attention_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &SpatialAttentionParams<T>,
    cache: &SpatialAttentionCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, SpatialAttentionGrads<T>), TensorError> {
    let (mut dx, dmap) = broadcast_mul_backward(x, &cache.map, dy)?;
    let dconv = sigmoid_backward(&cache.map, &dmap);
    let (dstack, g_conv) = conv2d_backward(&cache.stack, &p.conv, &dconv)?;
    let dmean = channel_slice(&dstack, 0, 1)?;
    let dmax = channel_slice(&dstack, 1, 2)?;
    dx.add_assign(&channel_mean_backward(x.shape(), &dmean));
    dx.add_assign(&channel_max_backward(x.shape(), &cache.max_winners, &dmax));
    Ok((dx, SpatialAttentionGrads { conv: g_conv }))
}

// ---- DPSA ----

#[derive(Debug, Clone)]
pub struct DpsaCache<T = f32> {
    after_channel: Tensor<T>,
    channel: ChannelAttentionCache<T>,
    spatial: SpatialAttentionCache<T>,
}

/// Channel attention followed by spatial attention; shape preserved.
pub fn dpsa_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaParams<T>,
) -> Result<Tensor<T>, TensorError> {
    dpsa_forward_cached(x, p).map(|(y, _)| y)
}

pub fn dpsa_forward_cached<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaParams<T>,
) -> Result<(Tensor<T>, DpsaCache<T>), TensorError> {
    let (after_channel, channel) = channel_attention_forward(x, &p.channel)?;
    let (y, spatial) = spatial_attention_forward(&after_channel, &p.spatial)?;
    Ok((y, DpsaCache { after_channel, channel, spatial }))
}

pub fn dpsa_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaParams<T>,
    cache: &DpsaCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, DpsaGrads<T>), TensorError> {
    let (dmid, g_spatial) =
        spatial_attention_backward(&cache.after_channel, &p.spatial, &cache.spatial, dy)?;
    let (dx, g_channel) = channel_attention_backward(x, &p.channel, &cache.channel, &dmid)?;
    Ok((dx, DpsaGrads { channel: g_channel, spatial: g_spatial }))
}

// ---- DPSA_SPPF ----

#[derive(Debug, Clone)]
pub struct DpsaSppfCache<T = f32> {
    pre1: Tensor<T>,
    y0: Tensor<T>,
    pool_idx: [Vec<usize>; 3],
    cat: Tensor<T>,
    dpsa: DpsaCache<T>,
    z: Tensor<T>,
    pre2: Tensor<T>,
}

/// SiLU(cv1) -> three parallel max pools from the same tensor -> concat ->
/// DPSA -> SiLU(cv2). Spatial dims are preserved.
pub fn dpsa_sppf_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaSppfParams<T>,
) -> Result<Tensor<T>, TensorError> {
    dpsa_sppf_forward_cached(x, p).map(|(y, _)| y)
}

pub fn dpsa_sppf_forward_cached<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaSppfParams<T>,
) -> Result<(Tensor<T>, DpsaSppfCache<T>), TensorError> {
    let pre1 = conv2d(x, &p.cv1)?;
    let y0 = silu(&pre1);
    let (p5, i5) = maxpool2d_indexed(&y0, POOL_KERNELS[0], 1, POOL_KERNELS[0] / 2)?;
    let (p9, i9) = maxpool2d_indexed(&y0, POOL_KERNELS[1], 1, POOL_KERNELS[1] / 2)?;
    let (p13, i13) = maxpool2d_indexed(&y0, POOL_KERNELS[2], 1, POOL_KERNELS[2] / 2)?;
    let cat = channel_concat(&[&y0, &p5, &p9, &p13])?;
    let (z, dpsa) = dpsa_forward_cached(&cat, &p.dpsa)?;
    let pre2 = conv2d(&z, &p.cv2)?;
    let out = silu(&pre2);
    Ok((out, DpsaSppfCache { pre1, y0, pool_idx: [i5, i9, i13], cat, dpsa, z, pre2 }))
}

pub fn dpsa_sppf_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DpsaSppfParams<T>,
    cache: &DpsaSppfCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, DpsaSppfGrads<T>), TensorError> {
    let dpre2 = silu_backward(&cache.pre2, dy);
    let (dz, g_cv2) = conv2d_backward(&cache.z, &p.cv2, &dpre2)?;
    let (dcat, g_dpsa) = dpsa_backward(&cache.cat, &p.dpsa, &cache.dpsa, &dz)?;

    let hidden = cache.y0.shape()[1];
    let mut dy0 = channel_slice(&dcat, 0, hidden)?;
    for (k, idx) in cache.pool_idx.iter().enumerate() {
        let dpool = channel_slice(&dcat, (k + 1) * hidden, (k + 2) * hidden)?;
        dy0.add_assign(&maxpool2d_backward(cache.y0.shape(), idx, &dpool));
    }
    let dpre1 = silu_backward(&cache.pre1, &dy0);
    let (dx, g_cv1) = conv2d_backward(x, &p.cv1, &dpre1)?;
    Ok((dx, DpsaSppfGrads { cv1: g_cv1, cv2: g_cv2, dpsa: g_dpsa }))
}

// ---- parameter serialization ----

/// Named views over the tensors of a parameter pack, in a stable order.
pub fn sppf_param_entries<T: Scalar>(p: &DpsaSppfParams<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
    for (name, cp) in [
        ("cv1", &p.cv1),
        ("cv2", &p.cv2),
        ("dpsa.channel.reduce", &p.dpsa.channel.reduce),
        ("dpsa.channel.expand", &p.dpsa.channel.expand),
        ("dpsa.spatial.conv", &p.dpsa.spatial.conv),
    ] {
        out.push((format!("{name}.weight"), &cp.weight));
        if let Some(b) = &cp.bias {
            out.push((format!("{name}.bias"), b));
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ParamIoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad header in {path}: {reason}")]
    Header { path: String, reason: String },
    #[error("tensor {name}: shape mismatch (file {file:?}, expected {expected:?})")]
    Shape { name: String, file: Vec<usize>, expected: Vec<usize> },
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamHeader {
    tensors: Vec<TensorMeta>,
}

/// Write named tensors as a JSON header (length-prefixed, little-endian
/// u64) followed by the flat f32 little-endian payload in header order.
pub fn save_named_tensors(
    path: &Path,
    entries: &[(String, &Tensor<f32>)],
) -> Result<(), ParamIoError> {
    let wrap = |source| ParamIoError::Io { path: path.display().to_string(), source };
    let header = ParamHeader {
        tensors: entries
            .iter()
            .map(|(name, t)| TensorMeta { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialization");
    let mut f = std::fs::File::create(path).map_err(wrap)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(wrap)?;
    f.write_all(&header_bytes).map_err(wrap)?;
    let mut payload = Vec::new();
    for (_, t) in entries {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&payload).map_err(wrap)
}

/// Read a file written by [`save_named_tensors`] into matching mutable
/// tensors; names and shapes must line up exactly.
pub fn load_named_tensors(
    path: &Path,
    entries: &mut [(String, &mut Tensor<f32>)],
) -> Result<(), ParamIoError> {
    let wrap = |source| ParamIoError::Io { path: path.display().to_string(), source };
    let bad = |reason: &str| ParamIoError::Header {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut f = std::fs::File::open(path).map_err(wrap)?;
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(wrap)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes).map_err(wrap)?;
    let header: ParamHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| bad(&e.to_string()))?;
    if header.tensors.len() != entries.len() {
        return Err(bad(&format!(
            "file lists {} tensors, expected {}",
            header.tensors.len(),
            entries.len()
        )));
    }
    for (meta, (name, tensor)) in header.tensors.iter().zip(entries.iter_mut()) {
        if meta.name != *name {
            return Err(bad(&format!("tensor order mismatch: file {}, expected {name}", meta.name)));
        }
        if meta.shape != tensor.shape() {
            return Err(ParamIoError::Shape {
                name: meta.name.clone(),
                file: meta.shape.clone(),
                expected: tensor.shape().to_vec(),
            });
        }
        let mut buf = vec![0u8; tensor.len() * 4];
        f.read_exact(&mut buf).map_err(wrap)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            tensor.data_mut()[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}
