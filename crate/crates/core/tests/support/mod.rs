//! Independent straight-line reference implementations used as oracles.
//!
//! Everything here is written as plain nested loops over `f64` buffers,
//! deliberately sharing no kernel code with the library. The layer and
//! network replays below literally re-evaluate each forward chain step by
//! step so the library's taped forwards can be checked against them.

#![allow(dead_code)]

use dynunet_core::calib::{DccLayer, DcdLayer, DcuLayer, ConvParams, INSTANCE_NORM_EPS};
use dynunet_core::network::{Block, Down, NetworkState, Up};
use dynunet_core::tensor::LabelMap;
use dynunet_core::{Shape, Tensor};

pub type T64 = Tensor<f64>;

pub fn t(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> T64 {
    Tensor::new(Shape::nchw(n, c, h, w), data).expect("oracle tensor")
}

pub fn max_abs_diff(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape, b.shape, "oracle shape mismatch");
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_rel_diff(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape, b.shape, "oracle shape mismatch");
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

pub fn conv2d(x: &T64, w: &T64, b: &[f64], stride: usize, pad: usize) -> T64 {
    let (n, cin, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (cout, k) = (w.shape.n(), w.shape.h());
    assert_eq!(w.shape.c(), cin);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data[x.shape.at(ni, ci, iy as usize, ix as usize)]
                                    * w.data[w.shape.at(co, ci, ky, kx)];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    t(n, cout, oh, ow, out)
}

/// Transposed conv, kernel 2 stride 2, weight layout [Cin, Cout, 2, 2].
pub fn conv_transpose2d(x: &T64, w: &T64, b: &[f64]) -> T64 {
    let (n, cin, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let cout = w.shape.c();
    assert_eq!(w.shape.n(), cin);
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[((ni * cout + co) * oh + oy) * ow + ox] = b[co];
                }
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.data[x.shape.at(ni, ci, iy, ix)];
                    for ky in 0..2 {
                        for kx in 0..2 {
                            for co in 0..cout {
                                out[((ni * cout + co) * oh + (2 * iy + ky)) * ow + (2 * ix + kx)] +=
                                    v * w.data[w.shape.at(ci, co, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    t(n, cout, oh, ow, out)
}

fn pool_extent(h: usize, k: usize, s: usize) -> usize {
    if h <= k {
        1
    } else {
        (h - k).div_ceil(s) + 1
    }
}

/// Average pooling, partial edge windows divided by their true element count.
pub fn avg_pool(x: &T64, k: usize, s: usize) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (oh, ow) = (pool_extent(h, k, s), pool_extent(wd, k, s));
    let mut out = vec![0.0; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    let mut cnt = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * s + ky;
                            let ix = ox * s + kx;
                            if iy < h && ix < wd {
                                acc += x.data[x.shape.at(ni, ci, iy, ix)];
                                cnt += 1;
                            }
                        }
                    }
                    out[((ni * c + ci) * oh + oy) * ow + ox] = acc / cnt as f64;
                }
            }
        }
    }
    t(n, c, oh, ow, out)
}

pub fn max_pool(x: &T64, k: usize, s: usize) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (oh, ow) = (pool_extent(h, k, s), pool_extent(wd, k, s));
    let mut out = vec![0.0; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * s + ky;
                            let ix = ox * s + kx;
                            if iy < h && ix < wd {
                                best = best.max(x.data[x.shape.at(ni, ci, iy, ix)]);
                            }
                        }
                    }
                    out[((ni * c + ci) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    t(n, c, oh, ow, out)
}

pub fn global_avg_pool(x: &T64) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let mut out = vec![0.0; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for iy in 0..h {
                for ix in 0..wd {
                    acc += x.data[x.shape.at(ni, ci, iy, ix)];
                }
            }
            out[ni * c + ci] = acc / (h * wd) as f64;
        }
    }
    t(n, c, 1, 1, out)
}

pub fn nearest_up(x: &T64, scale: usize) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (oh, ow) = (h * scale, wd * scale);
    let mut out = vec![0.0; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[((ni * c + ci) * oh + oy) * ow + ox] =
                        x.data[x.shape.at(ni, ci, oy / scale, ox / scale)];
                }
            }
        }
    }
    t(n, c, oh, ow, out)
}

pub fn crop(x: &T64, th: usize, tw: usize) -> T64 {
    let (n, c) = (x.shape.n(), x.shape.c());
    let mut out = vec![0.0; n * c * th * tw];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..th {
                for ox in 0..tw {
                    out[((ni * c + ci) * th + oy) * tw + ox] = x.data[x.shape.at(ni, ci, oy, ox)];
                }
            }
        }
    }
    t(n, c, th, tw, out)
}

pub fn sigmoid(x: &T64) -> T64 {
    T64 {
        data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
        ..x.clone()
    }
}

pub fn exp(x: &T64) -> T64 {
    T64 {
        data: x.data.iter().map(|v| v.exp()).collect(),
        ..x.clone()
    }
}

pub fn leaky_relu(x: &T64, slope: f64) -> T64 {
    T64 {
        data: x
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect(),
        ..x.clone()
    }
}

pub fn zip(a: &T64, b: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
    assert_eq!(a.shape, b.shape);
    T64 {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        ..a.clone()
    }
}

pub fn concat_channels(a: &T64, b: &T64) -> T64 {
    let (n, h, wd) = (a.shape.n(), a.shape.h(), a.shape.w());
    assert_eq!((b.shape.n(), b.shape.h(), b.shape.w()), (n, h, wd));
    let (ca, cb) = (a.shape.c(), b.shape.c());
    let mut out = Vec::with_capacity(n * (ca + cb) * h * wd);
    for ni in 0..n {
        out.extend_from_slice(&a.data[ni * ca * h * wd..(ni + 1) * ca * h * wd]);
        out.extend_from_slice(&b.data[ni * cb * h * wd..(ni + 1) * cb * h * wd]);
    }
    t(n, ca + cb, h, wd, out)
}

pub fn slice_channels(x: &T64, from: usize, to: usize) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let mut out = Vec::with_capacity(n * (to - from) * h * wd);
    for ni in 0..n {
        out.extend_from_slice(&x.data[(ni * c + from) * h * wd..(ni * c + to) * h * wd]);
    }
    t(n, to - from, h, wd, out)
}

pub fn instance_norm(x: &T64, eps: f64) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let plane = h * wd;
    let mut out = x.data.clone();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let mean = x.data[base..base + plane].iter().sum::<f64>() / plane as f64;
            let var = x.data[base..base + plane]
                .iter()
                .map(|v| (v - mean).powi(2))
                .sum::<f64>()
                / plane as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..plane {
                out[base + i] = (x.data[base + i] - mean) * inv;
            }
        }
    }
    T64 {
        data: out,
        ..x.clone()
    }
}

/// x [N,Cin,1,1], weight [Cout,Cin,1,1], bias len Cout -> [N,Cout,1,1].
pub fn linear(x: &T64, w: &T64, b: &[f64]) -> T64 {
    let (n, cin) = (x.shape.n(), x.shape.c());
    let cout = w.shape.n();
    assert_eq!(w.shape.c(), cin);
    let mut out = vec![0.0; n * cout];
    for ni in 0..n {
        for co in 0..cout {
            let mut acc = b[co];
            for ci in 0..cin {
                acc += x.data[ni * cin + ci] * w.data[co * cin + ci];
            }
            out[ni * cout + co] = acc;
        }
    }
    t(n, cout, 1, 1, out)
}

/// Multiply each channel plane of x by scale [N,C,1,1].
pub fn scale_channels(x: &T64, scale: &T64) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let mut out = x.data.clone();
    for ni in 0..n {
        for ci in 0..c {
            let s = scale.data[ni * c + ci];
            for i in 0..h * wd {
                out[(ni * c + ci) * h * wd + i] *= s;
            }
        }
    }
    T64 {
        data: out,
        ..x.clone()
    }
}

pub fn bilinear_at(x: &T64, ni: usize, ci: usize, y: f64, xx: f64) -> f64 {
    let (h, wd) = (x.shape.h(), x.shape.w());
    let y0 = y.floor() as isize;
    let x0 = xx.floor() as isize;
    let ty = y - y.floor();
    let tx = xx - xx.floor();
    let fetch = |yy: isize, xc: isize| -> f64 {
        if yy < 0 || yy >= h as isize || xc < 0 || xc >= wd as isize {
            0.0
        } else {
            x.data[x.shape.at(ni, ci, yy as usize, xc as usize)]
        }
    };
    (1.0 - ty) * ((1.0 - tx) * fetch(y0, x0) + tx * fetch(y0, x0 + 1))
        + ty * ((1.0 - tx) * fetch(y0 + 1, x0) + tx * fetch(y0 + 1, x0 + 1))
}

/// Modulated deformable conv, K odd, stride 1, pad (K-1)/2. Offsets
/// [N,2K^2,H,W] as (dy,dx) pairs per row-major tap; mask logits [N,K^2,H,W]
/// pass through a sigmoid unless `mask_one`.
pub fn deform_conv(
    x: &T64,
    w: &T64,
    b: &[f64],
    offsets: &T64,
    mask_logits: &T64,
    mask_one: bool,
) -> T64 {
    let (n, cin, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (cout, k) = (w.shape.n(), w.shape.h());
    let pad = (k - 1) as f64 / 2.0;
    let kk = k * k;
    let mut out = vec![0.0; n * cout * h * wd];
    for ni in 0..n {
        for oy in 0..h {
            for ox in 0..wd {
                for co in 0..cout {
                    let mut acc = b[co];
                    for tap in 0..kk {
                        let (ky, kx) = (tap / k, tap % k);
                        let dy = offsets.data[offsets.shape.at(ni, 2 * tap, oy, ox)];
                        let dx = offsets.data[offsets.shape.at(ni, 2 * tap + 1, oy, ox)];
                        let sy = oy as f64 + ky as f64 - pad + dy;
                        let sx = ox as f64 + kx as f64 - pad + dx;
                        let m = if mask_one {
                            1.0
                        } else {
                            let l = mask_logits.data[mask_logits.shape.at(ni, tap, oy, ox)];
                            1.0 / (1.0 + (-l).exp())
                        };
                        for ci in 0..cin {
                            acc += w.data[w.shape.at(co, ci, tap / k, tap % k)]
                                * m
                                * bilinear_at(x, ni, ci, sy, sx);
                        }
                    }
                    out[((ni * cout + co) * h + oy) * wd + ox] = acc;
                }
            }
        }
    }
    t(n, cout, h, wd, out)
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Per-pixel softmax over channels.
pub fn softmax_channels(x: &T64) -> T64 {
    let (n, c, h, wd) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let mut out = x.data.clone();
    for ni in 0..n {
        for iy in 0..h {
            for ix in 0..wd {
                let mut mx = f64::NEG_INFINITY;
                for ci in 0..c {
                    mx = mx.max(x.data[x.shape.at(ni, ci, iy, ix)]);
                }
                let mut z = 0.0;
                for ci in 0..c {
                    z += (x.data[x.shape.at(ni, ci, iy, ix)] - mx).exp();
                }
                for ci in 0..c {
                    out[x.shape.at(ni, ci, iy, ix)] =
                        (x.data[x.shape.at(ni, ci, iy, ix)] - mx).exp() / z;
                }
            }
        }
    }
    T64 {
        data: out,
        ..x.clone()
    }
}

pub fn cross_entropy(logits: &T64, labels: &LabelMap) -> f64 {
    let p = softmax_channels(logits);
    let (n, _, h, wd) = (
        logits.shape.n(),
        logits.shape.c(),
        logits.shape.h(),
        logits.shape.w(),
    );
    let mut acc = 0.0;
    for ni in 0..n {
        for iy in 0..h {
            for ix in 0..wd {
                acc -= p.data[p.shape.at(ni, labels.at(ni, iy, ix), iy, ix)].ln();
            }
        }
    }
    acc / (n * h * wd) as f64
}

pub fn soft_dice(logits: &T64, labels: &LabelMap, eps: f64) -> f64 {
    let p = softmax_channels(logits);
    let (n, c, h, wd) = (
        logits.shape.n(),
        logits.shape.c(),
        logits.shape.h(),
        logits.shape.w(),
    );
    let mut total = 0.0;
    for class in 1..c {
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut qsum = 0.0;
        for ni in 0..n {
            for iy in 0..h {
                for ix in 0..wd {
                    let pv = p.data[p.shape.at(ni, class, iy, ix)];
                    let q = (labels.at(ni, iy, ix) == class) as usize as f64;
                    inter += pv * q;
                    psum += pv;
                    qsum += q;
                }
            }
        }
        total += 1.0 - (2.0 * inter + eps) / (psum + qsum + eps);
    }
    total / (c - 1) as f64
}

// ---------------------------------------------------------------------------
// layer replays
// ---------------------------------------------------------------------------

fn bias_vec(p: &ConvParams<f64>) -> Vec<f64> {
    p.bias.data.clone()
}

pub fn conv_in_lrelu_replay(x: &T64, p: &ConvParams<f64>, stride: usize, slope: f64) -> T64 {
    let k = p.weight.shape.h();
    let y = conv2d(x, &p.weight, &bias_vec(p), stride, (k - 1) / 2);
    leaky_relu(&instance_norm(&y, INSTANCE_NORM_EPS), slope)
}

pub fn dcc_replay(layer: &DccLayer<f64>, x: &T64) -> T64 {
    let (h, wd) = (x.shape.h(), x.shape.w());
    let tp = conv2d(x, &layer.conv_pixel.weight, &bias_vec(&layer.conv_pixel), 1, 0);
    let pooled = avg_pool(x, 4, 4);
    let tr = conv2d(
        &pooled,
        &layer.conv_region.weight,
        &bias_vec(&layer.conv_region),
        1,
        1,
    );
    let tr = crop(&nearest_up(&tr, 4), h, wd);
    let ts = sigmoid(&zip(&tp, &tr, |a, b| a + b));
    let local = conv_in_lrelu_replay(x, &layer.conv_local, 1, layer.slope);
    let f1 = zip(&local, &ts, |a, b| a * b);
    let f2 = conv_in_lrelu_replay(&f1, &layer.conv_second, 1, layer.slope);
    let gap = global_avg_pool(&f2);
    let scale = sigmoid(&linear(&gap, &layer.linear.weight, &bias_vec(&layer.linear)));
    scale_channels(&f2, &scale)
}

pub fn dcd_replay(layer: &DcdLayer<f64>, f: &T64) -> T64 {
    let off_all = conv2d(
        f,
        &layer.conv_offset.weight,
        &bias_vec(&layer.conv_offset),
        1,
        1,
    );
    let offs = slice_channels(&off_all, 0, 18);
    let mlog = slice_channels(&off_all, 18, 27);
    let logits = deform_conv(
        f,
        &layer.deform.weight,
        &bias_vec(&layer.deform),
        &offs,
        &mlog,
        layer.mask_one,
    );
    let m = exp(&sigmoid(&logits));
    let num = avg_pool(&zip(&m, f, |a, b| a * b), 2, 2);
    let den = avg_pool(&m, 2, 2);
    zip(&num, &den, |a, b| a / b.max(1e-8))
}

pub fn dcu_replay(layer: &DcuLayer<f64>, f_next: &T64, skip: &T64) -> T64 {
    let fi = conv_transpose2d(f_next, &layer.up.weight, &bias_vec(&layer.up));
    let cat = concat_channels(&fi, skip);
    let off_all = conv2d(
        &cat,
        &layer.conv_offset.weight,
        &bias_vec(&layer.conv_offset),
        1,
        1,
    );
    let offs = slice_channels(&off_all, 0, 18);
    let mlog = slice_channels(&off_all, 18, 27);
    let aligned = deform_conv(
        &fi,
        &layer.deform.weight,
        &bias_vec(&layer.deform),
        &offs,
        &mlog,
        layer.mask_one,
    );
    leaky_relu(&aligned, layer.slope)
}

pub fn block_replay(block: &Block<f64>, x: &T64) -> T64 {
    match block {
        Block::Double(b) => {
            let y = conv_in_lrelu_replay(x, &b.conv1, 1, b.slope);
            conv_in_lrelu_replay(&y, &b.conv2, 1, b.slope)
        }
        Block::Dcc(b) => dcc_replay(b, x),
    }
}

/// Full-network forward replay, mirroring the library's wiring with the
/// oracle kernels above.
pub fn network_replay(net: &NetworkState<f64>, x: &T64) -> T64 {
    let levels = net.config.levels();
    let mut skips = Vec::new();
    let mut cur = x.clone();
    for i in 0..levels - 1 {
        cur = block_replay(&net.enc_blocks[i], &cur);
        skips.push(cur.clone());
        cur = match &net.downs[i] {
            Down::MaxPool => max_pool(&cur, 2, 2),
            Down::AvgPool => avg_pool(&cur, 2, 2),
            Down::Sconv { conv, slope } => conv_in_lrelu_replay(&cur, conv, 2, *slope),
            Down::Dcd(layer) => dcd_replay(layer, &cur),
        };
    }
    cur = block_replay(&net.bottleneck, &cur);
    for (d, i) in (0..levels - 1).rev().enumerate() {
        let skip = &skips[i];
        let fused = match &net.ups[d] {
            Up::Plain(p) => {
                let up = conv_transpose2d(&cur, &p.weight, &bias_vec(p));
                concat_channels(&up, skip)
            }
            Up::Dcu(layer) => {
                let aligned = dcu_replay(layer, &cur, skip);
                concat_channels(&aligned, skip)
            }
        };
        cur = block_replay(&net.dec_blocks[d], &fused);
    }
    conv2d(&cur, &net.head.weight, &net.head.bias.data, 1, 0)
}

// ---------------------------------------------------------------------------
// gradcheck driver
// ---------------------------------------------------------------------------

use dynunet_core::gradcheck::{check_module, GradReport, DEFAULT_STEP, DEFAULT_TOL};
use dynunet_core::{Tape, ValueId};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gradcheck a taped computation against central differences.
///
/// `build` maps the leaves (in `tensors` order) to one output value; the
/// output is contracted to a scalar with a fixed random projection so every
/// output element influences the loss.
pub fn gradcheck_build(
    tensors: &[(String, T64)],
    build: &dyn Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
    seed: u64,
) -> GradReport {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = tensors
        .iter()
        .map(|(_, t)| tape.leaf(&t.clone().requires_grad(true)))
        .collect();
    let out = build(&mut tape, &ids);
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726f6a);
    let proj = Tensor::rand_uniform(tape.shape(out), -1.0, 1.0, &mut prng);

    let scalarize = |tape: &mut Tape<f64>, out: ValueId| -> ValueId {
        let pid = tape.leaf(&proj);
        let prod = tape.mul(out, pid).expect("projection shapes match");
        tape.sum(prod)
    };
    let loss = scalarize(&mut tape, out);
    tape.backward(loss).expect("scalar backward");
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.shape(id).numel()])
        })
        .collect();

    let mut f = |ts: &[T64]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = ts.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &ids);
        let pid = tape.leaf(&proj);
        let prod = tape.mul(out, pid).expect("projection shapes match");
        let loss = tape.sum(prod);
        tape.value(loss).data[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_module(tensors, &analytic, &mut f, DEFAULT_STEP, DEFAULT_TOL, &mut rng)
}

pub fn named(name: &str, t: T64) -> (String, T64) {
    (name.to_string(), t)
}

pub fn assert_grad_pass(report: &GradReport) {
    if !report.pass() {
        panic!("gradient check failed:\n{report}");
    }
}

/// Gradcheck for layer forwards that bind their own parameter leaves.
///
/// `forward` receives the tape and the full tensor set (in `tensors`
/// order), performs the forward (binding parameters internally), and
/// returns the output id plus (name, leaf) pairs whose names match the
/// entries in `tensors`.
pub fn gradcheck_forward(
    tensors: &[(String, T64)],
    forward: &dyn Fn(&mut Tape<f64>, &[T64]) -> (ValueId, Vec<(String, ValueId)>),
    seed: u64,
) -> GradReport {
    let base: Vec<T64> = tensors.iter().map(|(_, t)| t.clone()).collect();
    let mut tape = Tape::new();
    let (out, binds) = forward(&mut tape, &base);
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726f6a);
    let proj = Tensor::rand_uniform(tape.shape(out), -1.0, 1.0, &mut prng);
    let pid = tape.leaf(&proj);
    let prod = tape.mul(out, pid).expect("projection shapes match");
    let loss = tape.sum(prod);
    tape.backward(loss).expect("scalar backward");
    let analytic: Vec<Vec<f64>> = tensors
        .iter()
        .map(|(name, t)| {
            let id = binds
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("no bind named {name}"))
                .1;
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut f = |ts: &[T64]| -> f64 {
        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, ts);
        let pid = tape.leaf(&proj);
        let prod = tape.mul(out, pid).expect("projection shapes match");
        let loss = tape.sum(prod);
        tape.value(loss).data[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_module(tensors, &analytic, &mut f, DEFAULT_STEP, DEFAULT_TOL, &mut rng)
}
