//! The finite-difference validation suite: every differentiable op, the
//! attention blocks end to end, and the GIoU loss, each checked over many
//! seeds in f64.
//!
//! Used by the `gradcheck` CLI subcommand and the acceptance tests. The
//! `corrupt` hook perturbs one analytic gradient so the failure path of the
//! CLI can be exercised.

use crate::dpsa::{
    channel_attention_backward, channel_attention_forward, dpsa_sppf_backward,
    dpsa_sppf_forward, dpsa_sppf_forward_cached, spatial_attention_backward,
    spatial_attention_forward, ChannelAttentionParams, DpsaSppfParams, SpatialAttentionParams,
};
use crate::fgiou::{giou_loss, giou_loss_with_grad, BBox};
use crate::tensor::{self, grad_check, ConvParams, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Max relative error of one named check, aggregated over all seeds.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
}

const EPS: f64 = 1e-5;

// The SPPF block composes ~10 ops; its smallest input-gradient elements sit
// near 5e-6, where central differences at eps=1e-5 bottom out on f64
// cancellation noise (~1e-14 / eps). A larger step stays far above that
// floor while truncation, measured over the seed range, remains < 3e-6.
const SPPF_EPS: f64 = 1e-4;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A seeded permutation of equally spaced values in [-1, 1]: every element
/// is distinct with gaps far above the finite-difference step, so max-style
/// ops never sit on a tie.
fn well_separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(rng, 0..=i);
        values.swap(i, j);
    }
    Tensor::new(shape, values).expect("shape product matches")
}

fn corrupted(grad: Tensor<f64>) -> Tensor<f64> {
    let mut g = grad;
    g.data_mut()[0] += 0.01;
    g
}

fn maybe_corrupt(grad: Tensor<f64>, corrupt: bool) -> Tensor<f64> {
    if corrupt {
        corrupted(grad)
    } else {
        grad
    }
}

type CheckFn = fn(u64, bool) -> Result<f64, TensorError>;

fn check_conv_input(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let p = ConvParams::<f64>::init_uniform(3, 2, 3, 1, 1, &mut rng);
    grad_check(
        |x| tensor::conv2d(x, &p),
        |x| {
            let y = tensor::conv2d(x, &p)?;
            let (dx, _) = tensor::conv2d_backward(x, &p, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_conv_weight(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let p = ConvParams::<f64>::init_uniform(3, 2, 3, 1, 1, &mut rng);
    grad_check(
        |w| tensor::conv2d(&x, &ConvParams::new(w.clone(), p.bias.clone(), 1, 1)),
        |w| {
            let q = ConvParams::new(w.clone(), p.bias.clone(), 1, 1);
            let y = tensor::conv2d(&x, &q)?;
            let (_, g) = tensor::conv2d_backward(&x, &q, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(g.weight, corrupt))
        },
        &p.weight,
        EPS,
    )
}

fn check_conv_bias(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let p = ConvParams::<f64>::init_uniform(3, 2, 3, 1, 1, &mut rng);
    let b = p.bias.clone().unwrap();
    grad_check(
        |b| tensor::conv2d(&x, &ConvParams::new(p.weight.clone(), Some(b.clone()), 1, 1)),
        |b| {
            let q = ConvParams::new(p.weight.clone(), Some(b.clone()), 1, 1);
            let y = tensor::conv2d(&x, &q)?;
            let (_, g) = tensor::conv2d_backward(&x, &q, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(g.bias.unwrap(), corrupt))
        },
        &b,
        EPS,
    )
}

fn check_conv_strided(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
    let p = ConvParams::<f64>::init_uniform(2, 3, 3, 2, 1, &mut rng);
    grad_check(
        |x| tensor::conv2d(x, &p),
        |x| {
            let y = tensor::conv2d(x, &p)?;
            let (dx, _) = tensor::conv2d_backward(x, &p, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_maxpool(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = well_separated(&[1, 2, 8, 8], &mut rng);
    grad_check(
        |x| tensor::maxpool2d(x, 5, 1, 2),
        |x| {
            let (y, idx) = tensor::maxpool2d_indexed(x, 5, 1, 2)?;
            let dx = tensor::maxpool2d_backward(x.shape(), &idx, &Tensor::filled(y.shape(), 1.0));
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_adaptive_avg(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
    grad_check(
        |x| tensor::adaptive_avg_pool(x),
        |x| {
            let y = tensor::adaptive_avg_pool(x)?;
            let dx = tensor::adaptive_avg_pool_backward(x.shape(), &Tensor::filled(y.shape(), 1.0));
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_adaptive_max(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = well_separated(&[2, 3, 4, 5], &mut rng);
    grad_check(
        |x| tensor::adaptive_max_pool(x),
        |x| {
            let (y, idx) = tensor::adaptive_max_pool_indexed(x)?;
            let dx =
                tensor::adaptive_max_pool_backward(x.shape(), &idx, &Tensor::filled(y.shape(), 1.0));
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_sigmoid(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[64], -3.0, 3.0, &mut rng);
    grad_check(
        |x| Ok(tensor::sigmoid(x)),
        |x| {
            let y = tensor::sigmoid(x);
            Ok(maybe_corrupt(
                tensor::sigmoid_backward(&y, &Tensor::filled(y.shape(), 1.0)),
                corrupt,
            ))
        },
        &x,
        EPS,
    )
}

fn check_silu(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[64], -3.0, 3.0, &mut rng);
    grad_check(
        |x| Ok(tensor::silu(x)),
        |x| Ok(maybe_corrupt(tensor::silu_backward(x, &Tensor::filled(x.shape(), 1.0)), corrupt)),
        &x,
        EPS,
    )
}

fn check_relu(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    // keep samples away from the kink at 0
    let x = Tensor::<f64>::from_fn(&[64], |_| {
        let mag: f64 = rand::Rng::gen_range(&mut rng, 0.1..2.0);
        if rand::Rng::gen_bool(&mut rng, 0.5) {
            mag
        } else {
            -mag
        }
    });
    grad_check(
        |x| Ok(tensor::relu(x)),
        |x| Ok(maybe_corrupt(tensor::relu_backward(x, &Tensor::filled(x.shape(), 1.0)), corrupt)),
        &x,
        EPS,
    )
}

fn check_concat(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let other = Tensor::<f64>::random_uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
    grad_check(
        |x| tensor::channel_concat(&[x, &other]),
        |x| {
            // backward of concat w.r.t. the first input is the channel slice
            let y = tensor::channel_concat(&[x, &other])?;
            let dy = Tensor::filled(y.shape(), 1.0);
            Ok(maybe_corrupt(tensor::channel_slice(&dy, 0, 2)?, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_broadcast_mul_channel(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::random_uniform(&[1, 3, 1, 1], 0.1, 0.9, &mut rng);
    grad_check(
        |x| tensor::broadcast_mul(x, &w),
        |x| {
            let y = tensor::broadcast_mul(x, &w)?;
            let (dx, _) = tensor::broadcast_mul_backward(x, &w, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_broadcast_mul_spatial_weights(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::random_uniform(&[1, 1, 4, 4], 0.1, 0.9, &mut rng);
    grad_check(
        |w| tensor::broadcast_mul(&x, w),
        |w| {
            let y = tensor::broadcast_mul(&x, w)?;
            let (_, dw) = tensor::broadcast_mul_backward(&x, w, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dw, corrupt))
        },
        &w,
        EPS,
    )
}

fn check_channel_mean(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = Tensor::<f64>::random_uniform(&[1, 4, 4, 4], -1.0, 1.0, &mut rng);
    grad_check(
        |x| tensor::channel_mean(x),
        |x| {
            let y = tensor::channel_mean(x)?;
            Ok(maybe_corrupt(
                tensor::channel_mean_backward(x.shape(), &Tensor::filled(y.shape(), 1.0)),
                corrupt,
            ))
        },
        &x,
        EPS,
    )
}

fn check_channel_max(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let x = well_separated(&[1, 4, 4, 4], &mut rng);
    grad_check(
        |x| tensor::channel_max(x),
        |x| {
            let (y, idx) = tensor::channel_max_indexed(x)?;
            Ok(maybe_corrupt(
                tensor::channel_max_backward(x.shape(), &idx, &Tensor::filled(y.shape(), 1.0)),
                corrupt,
            ))
        },
        &x,
        EPS,
    )
}

fn channel_attention_params(rng: &mut ChaCha8Rng) -> ChannelAttentionParams<f64> {
    ChannelAttentionParams::init(4, rng)
}

fn check_channel_attention_input(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = channel_attention_params(&mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 4, 5, 5], -1.0, 1.0, &mut rng);
    grad_check(
        |x| channel_attention_forward(x, &p).map(|(y, _)| y),
        |x| {
            let (y, cache) = channel_attention_forward(x, &p)?;
            let (dx, _) =
                channel_attention_backward(x, &p, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_channel_attention_mlp(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = channel_attention_params(&mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 4, 5, 5], -1.0, 1.0, &mut rng);
    // gradient w.r.t. the shared expand weight (exercises both branches)
    grad_check(
        |w| {
            let q = ChannelAttentionParams {
                reduce: p.reduce.clone(),
                expand: ConvParams::new(w.clone(), p.expand.bias.clone(), 1, 0),
            };
            channel_attention_forward(&x, &q).map(|(y, _)| y)
        },
        |w| {
            let q = ChannelAttentionParams {
                reduce: p.reduce.clone(),
                expand: ConvParams::new(w.clone(), p.expand.bias.clone(), 1, 0),
            };
            let (y, cache) = channel_attention_forward(&x, &q)?;
            let (_, g) =
                channel_attention_backward(&x, &q, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(g.expand.weight, corrupt))
        },
        &p.expand.weight,
        EPS,
    )
}

fn check_spatial_attention_input(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = SpatialAttentionParams::<f64>::init(&mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng);
    grad_check(
        |x| spatial_attention_forward(x, &p).map(|(y, _)| y),
        |x| {
            let (y, cache) = spatial_attention_forward(x, &p)?;
            let (dx, _) =
                spatial_attention_backward(x, &p, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        EPS,
    )
}

fn check_spatial_attention_kernel(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = SpatialAttentionParams::<f64>::init(&mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng);
    grad_check(
        |w| {
            let q = SpatialAttentionParams {
                conv: ConvParams::new(w.clone(), p.conv.bias.clone(), 1, 3),
            };
            spatial_attention_forward(&x, &q).map(|(y, _)| y)
        },
        |w| {
            let q = SpatialAttentionParams {
                conv: ConvParams::new(w.clone(), p.conv.bias.clone(), 1, 3),
            };
            let (y, cache) = spatial_attention_forward(&x, &q)?;
            let (_, g) =
                spatial_attention_backward(&x, &q, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(g.conv.weight, corrupt))
        },
        &p.conv.weight,
        EPS,
    )
}

fn check_sppf_input(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = DpsaSppfParams::<f64>::init(4, 4, &mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 4, 8, 8], -1.0, 1.0, &mut rng);
    grad_check(
        |x| dpsa_sppf_forward(x, &p),
        |x| {
            let (y, cache) = dpsa_sppf_forward_cached(x, &p)?;
            let (dx, _) = dpsa_sppf_backward(x, &p, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(dx, corrupt))
        },
        &x,
        SPPF_EPS,
    )
}

fn check_sppf_params(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    let p = DpsaSppfParams::<f64>::init(4, 4, &mut rng);
    let x = Tensor::<f64>::random_uniform(&[1, 4, 8, 8], -1.0, 1.0, &mut rng);
    // gradient w.r.t. cv2 weight, the deepest parameter behind DPSA
    grad_check(
        |w| {
            let mut q = p.clone();
            q.cv2 = ConvParams::new(w.clone(), p.cv2.bias.clone(), 1, 0);
            dpsa_sppf_forward(&x, &q)
        },
        |w| {
            let mut q = p.clone();
            q.cv2 = ConvParams::new(w.clone(), p.cv2.bias.clone(), 1, 0);
            let (y, cache) = dpsa_sppf_forward_cached(&x, &q)?;
            let (_, g) = dpsa_sppf_backward(&x, &q, &cache, &Tensor::filled(y.shape(), 1.0))?;
            Ok(maybe_corrupt(g.cv2.weight, corrupt))
        },
        &p.cv2.weight,
        SPPF_EPS,
    )
}

fn check_giou(seed: u64, corrupt: bool) -> Result<f64, TensorError> {
    let mut rng = rng_for(seed);
    // random box pairs away from the measure-zero tie sets
    let (a, b) = loop {
        let r = |rng: &mut ChaCha8Rng| rand::Rng::gen_range(rng, -2.0..2.0);
        let s = |rng: &mut ChaCha8Rng| rand::Rng::gen_range(rng, 0.5..3.0);
        let (ax1, ay1) = (r(&mut rng), r(&mut rng));
        let a = BBox::new(ax1, ay1, ax1 + s(&mut rng), ay1 + s(&mut rng));
        let (bx1, by1) = (r(&mut rng), r(&mut rng));
        let b = BBox::new(bx1, by1, bx1 + s(&mut rng), by1 + s(&mut rng));
        let sep = [a.x1 - b.x1, a.y1 - b.y1, a.x2 - b.x2, a.y2 - b.y2];
        if sep.iter().all(|d| d.abs() > 1e-3) {
            break (a, b);
        }
    };
    let coords = Tensor::<f64>::new(&[4], vec![a.x1, a.y1, a.x2, a.y2])?;
    grad_check(
        |t| {
            let d = t.data();
            let bx = BBox::new(d[0], d[1], d[2], d[3]);
            Tensor::new(&[1], vec![giou_loss(&bx, &b)])
        },
        |t| {
            let d = t.data();
            let bx = BBox::new(d[0], d[1], d[2], d[3]);
            let (_, g) = giou_loss_with_grad(&bx, &b);
            Ok(maybe_corrupt(Tensor::new(&[4], g.to_vec())?, corrupt))
        },
        &coords,
        EPS,
    )
}

/// Every check in the suite, with stable names.
pub fn all_checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("conv2d/input", check_conv_input),
        ("conv2d/weight", check_conv_weight),
        ("conv2d/bias", check_conv_bias),
        ("conv2d_stride2/input", check_conv_strided),
        ("maxpool2d/input", check_maxpool),
        ("adaptive_avg_pool/input", check_adaptive_avg),
        ("adaptive_max_pool/input", check_adaptive_max),
        ("sigmoid/input", check_sigmoid),
        ("silu/input", check_silu),
        ("relu/input", check_relu),
        ("channel_concat/input", check_concat),
        ("broadcast_mul/input", check_broadcast_mul_channel),
        ("broadcast_mul/weights", check_broadcast_mul_spatial_weights),
        ("channel_mean/input", check_channel_mean),
        ("channel_max/input", check_channel_max),
        ("channel_attention/input", check_channel_attention_input),
        ("channel_attention/mlp_weight", check_channel_attention_mlp),
        ("spatial_attention/input", check_spatial_attention_input),
        ("spatial_attention/kernel", check_spatial_attention_kernel),
        ("dpsa_sppf/input", check_sppf_input),
        ("dpsa_sppf/cv2_weight", check_sppf_params),
        ("giou_loss/box", check_giou),
    ]
}

/// Run every check over `num_seeds` seeds starting at `base_seed`,
/// reporting the max relative error per check. `corrupt` perturbs the
/// analytic gradient of the named check (testing hook).
pub fn run_suite(
    base_seed: u64,
    num_seeds: usize,
    corrupt: Option<&str>,
) -> Result<Vec<CheckReport>, TensorError> {
    let mut reports = Vec::new();
    for (name, check) in all_checks() {
        let sabotage = corrupt == Some(name);
        let mut worst = 0.0f64;
        for s in 0..num_seeds {
            let rel = check(base_seed.wrapping_add(s as u64), sabotage)?;
            worst = worst.max(rel);
        }
        reports.push(CheckReport { name, max_rel_error: worst });
    }
    Ok(reports)
}
