//! Central finite-difference validation of analytic gradients.
//!
//! Probing is exhaustive for small tensors and subsampled (seeded, >= 64
//! elements) above `FULL_PROBE_LIMIT`. All checks run at 64-bit precision;
//! the default tolerances are unreachable at 32-bit.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tensor::{Shape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const MIN_PROBES: usize = 64;
/// Central differences at step 1e-5 carry ~1e-10 of rounding noise;
/// differences below this floor are indistinguishable from a correct zero
/// gradient (e.g. a conv bias that cancels inside instance norm) and are
/// not counted as relative-error failures.
pub const ABS_NOISE_FLOOR: f64 = 1e-8;
pub const FULL_PROBE_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
pub struct WorstProbe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Result of checking one tensor's gradient.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub shape: Shape,
    pub max_rel: f64,
    pub max_abs: f64,
    pub probes: usize,
    pub pass: bool,
    pub worst: Option<WorstProbe>,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checks: Vec<TensorCheck>,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checks.extend(other.checks);
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {} {:.3e} {:.3e} {}",
                c.name,
                c.shape,
                c.max_rel,
                c.max_abs,
                if c.pass { "PASS" } else { "FAIL" }
            )?;
            if let Some(w) = &c.worst {
                if !c.pass {
                    writeln!(
                        f,
                        "  worst element {}: analytic {:.9e} vs numeric {:.9e}",
                        w.index, w.analytic, w.numeric
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub fn probe_indices<R: Rng>(numel: usize, rng: &mut R) -> Vec<usize> {
    if numel <= FULL_PROBE_LIMIT {
        (0..numel).collect()
    } else {
        let mut all: Vec<usize> = (0..numel).collect();
        all.shuffle(rng);
        all.truncate(MIN_PROBES.max(numel / 64).min(512));
        all
    }
}

/// Dense central-difference gradient of a scalar-valued function, probing
/// every element.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    step: f64,
) -> Tensor<f64> {
    let mut g = Tensor::zeros(x.shape);
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let fp = f(&probe);
        probe.data[i] = orig - step;
        let fm = f(&probe);
        probe.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Compare an analytic gradient against central differences on a probed
/// subset of elements.
pub fn check_tensor<R: Rng>(
    name: &str,
    x: &Tensor<f64>,
    analytic: &[f64],
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    step: f64,
    tol: f64,
    rng: &mut R,
) -> TensorCheck {
    let indices = probe_indices(x.numel(), rng);
    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = None;
    for &i in &indices {
        let a = analytic[i];
        let mut measure = |h: f64| -> (f64, f64, f64) {
            let orig = probe.data[i];
            probe.data[i] = orig + h;
            let fp = f(&probe);
            probe.data[i] = orig - h;
            let fm = f(&probe);
            probe.data[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let abs = (a - numeric).abs();
            let rel = if abs < ABS_NOISE_FLOOR {
                0.0
            } else {
                abs / a.abs().max(numeric.abs()).max(1e-8)
            };
            (numeric, abs, rel)
        };
        let (mut numeric, mut abs, mut rel) = measure(step);
        // Piecewise-smooth ops (bilinear sampling, max pool, leaky relu)
        // have measure-zero derivative kinks; a central difference that
        // straddles one reports a large spurious mismatch. Shrinking the
        // step moves the probe interval off the kink, while a genuinely
        // wrong analytic gradient keeps failing at every step, so retry
        // failing indices at smaller steps and keep the best measurement.
        if rel >= tol {
            for shrink in [10.0, 100.0] {
                let (n2, a2, r2) = measure(step / shrink);
                if r2 < rel {
                    (numeric, abs, rel) = (n2, a2, r2);
                }
                if rel < tol {
                    break;
                }
            }
        }
        if abs > max_abs {
            max_abs = abs;
        }
        if rel > max_rel {
            max_rel = rel;
            worst = Some(WorstProbe {
                index: i,
                analytic: a,
                numeric,
            });
        }
    }
    TensorCheck {
        name: name.to_string(),
        shape: x.shape,
        max_rel,
        max_abs,
        probes: indices.len(),
        pass: max_rel < tol,
        worst,
    }
}

/// Check several tensors feeding one scalar-valued function at once.
///
/// `tensors` are the differentiable inputs (parameters and/or data) with
/// their analytic gradients from the tape; `f` evaluates the scalar given a
/// full replacement set in the same order. Perturbation of tensor `j` keeps
/// every other tensor at its base value.
pub fn check_module<R: Rng>(
    tensors: &[(String, Tensor<f64>)],
    analytic: &[Vec<f64>],
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    step: f64,
    tol: f64,
    rng: &mut R,
) -> GradReport {
    assert_eq!(tensors.len(), analytic.len());
    let mut checks = Vec::with_capacity(tensors.len());
    let mut base: Vec<Tensor<f64>> = tensors.iter().map(|(_, t)| t.clone()).collect();
    for j in 0..tensors.len() {
        let (name, t) = &tensors[j];
        let mut single = |probe: &Tensor<f64>| -> f64 {
            let saved = std::mem::replace(&mut base[j], probe.clone());
            let v = f(&base);
            base[j] = saved;
            v
        };
        checks.push(check_tensor(
            name,
            t,
            &analytic[j],
            &mut single,
            step,
            tol,
            rng,
        ));
    }
    GradReport { checks }
}

// ---------------------------------------------------------------------------
// named check suite
// ---------------------------------------------------------------------------

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calib::{Binder, DccLayer, DcdLayer, DcuLayer};
use crate::error::{Error, Result};
use crate::network::{ArchitectureConfig, NetworkState, Variant};
use crate::tape::{Tape, ValueId};
use crate::tensor::LabelMap;

pub const SUITE_TARGETS: [&str; 6] = ["ops", "deform", "dcc", "dcd", "dcu", "network"];

fn rt(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// Random values kept away from zero, for kinked pointwise functions.
fn rt_off_kink(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = rt(shape, rng);
    for v in &mut t.data {
        *v += 0.1 * v.signum();
    }
    t
}

/// Random offsets in +-[0.1, 0.4]: at least 0.1 from every integer, where
/// bilinear sampling is kinked.
fn rt_offsets(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = rt(shape, rng);
    for v in &mut t.data {
        *v = (0.1 + 0.3 * v.abs()) * if *v >= 0.0 { 1.0 } else { -1.0 };
    }
    t
}

/// Check a taped computation whose leaves are exactly `tensors`, contracted
/// to a scalar by a fixed random projection of the output.
fn run_build(
    name: &str,
    tensors: &[(String, Tensor<f64>)],
    build: &dyn Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
    seed: u64,
) -> Result<(String, GradReport)> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = tensors
        .iter()
        .map(|(_, t)| tape.leaf(&t.clone().requires_grad(true)))
        .collect();
    let out = build(&mut tape, &ids)?;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726f6a);
    let proj = Tensor::rand_uniform(tape.shape(out), -1.0, 1.0, &mut prng);
    let pid = tape.leaf(&proj);
    let prod = tape.mul(out, pid)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.shape(id).numel()])
        })
        .collect();
    let mut f = |ts: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = ts.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &ids).expect("forward succeeded at base point");
        let pid = tape.leaf(&proj);
        let prod = tape.mul(out, pid).expect("projection shape");
        let loss = tape.sum(prod);
        tape.value(loss).data[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((
        name.to_string(),
        check_module(tensors, &analytic, &mut f, DEFAULT_STEP, DEFAULT_TOL, &mut rng),
    ))
}

fn ops_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let mut out = Vec::new();
    let x = rt(Shape::nchw(1, 3, 6, 6), &mut rng);
    let w = rt(Shape::nchw(4, 3, 3, 3), &mut rng);
    let b = rt(Shape::nchw(4, 1, 1, 1), &mut rng);
    out.push(run_build(
        "conv2d",
        &[
            ("x".into(), x.clone()),
            ("w".into(), w.clone()),
            ("b".into(), b.clone()),
        ],
        &|t, ids| t.conv2d(ids[0], ids[1], ids[2], 1, 1),
        seed,
    )?);
    out.push(run_build(
        "conv2d_stride2",
        &[("x".into(), x.clone()), ("w".into(), w), ("b".into(), b)],
        &|t, ids| t.conv2d(ids[0], ids[1], ids[2], 2, 1),
        seed,
    )?);
    let wt = rt(Shape::nchw(3, 2, 2, 2), &mut rng);
    let bt = rt(Shape::nchw(2, 1, 1, 1), &mut rng);
    out.push(run_build(
        "conv_transpose2d",
        &[("x".into(), x.clone()), ("w".into(), wt), ("b".into(), bt)],
        &|t, ids| t.conv_transpose2d(ids[0], ids[1], ids[2]),
        seed,
    )?);
    out.push(run_build(
        "avg_pool2d",
        &[("x".into(), x.clone())],
        &|t, ids| t.avg_pool2d(ids[0], 2, 2),
        seed,
    )?);
    out.push(run_build(
        "max_pool2d",
        &[("x".into(), x.clone())],
        &|t, ids| t.max_pool2d(ids[0], 2, 2),
        seed,
    )?);
    out.push(run_build(
        "global_avg_pool",
        &[("x".into(), x.clone())],
        &|t, ids| t.adaptive_avg_pool_global(ids[0]),
        seed,
    )?);
    out.push(run_build(
        "nearest_upsample",
        &[("x".into(), x.clone())],
        &|t, ids| t.nearest_upsample(ids[0], 2),
        seed,
    )?);
    out.push(run_build(
        "crop_spatial",
        &[("x".into(), x.clone())],
        &|t, ids| t.crop_spatial(ids[0], 5, 4),
        seed,
    )?);
    let lx = rt(Shape::nchw(2, 5, 1, 1), &mut rng);
    let lw = rt(Shape::nchw(3, 5, 1, 1), &mut rng);
    let lb = rt(Shape::nchw(3, 1, 1, 1), &mut rng);
    out.push(run_build(
        "linear",
        &[("x".into(), lx), ("w".into(), lw), ("b".into(), lb)],
        &|t, ids| t.linear(ids[0], ids[1], ids[2]),
        seed,
    )?);
    out.push(run_build(
        "sigmoid",
        &[("x".into(), x.clone())],
        &|t, ids| Ok(t.sigmoid(ids[0])),
        seed,
    )?);
    out.push(run_build(
        "exp",
        &[("x".into(), x.clone())],
        &|t, ids| Ok(t.exp(ids[0])),
        seed,
    )?);
    let xk = rt_off_kink(Shape::nchw(1, 3, 6, 6), &mut rng);
    out.push(run_build(
        "leaky_relu",
        &[("x".into(), xk.clone())],
        &|t, ids| Ok(t.leaky_relu(ids[0], 0.01)),
        seed,
    )?);
    out.push(run_build(
        "instance_norm",
        &[("x".into(), x.clone())],
        &|t, ids| t.instance_norm(ids[0], 1e-5),
        seed,
    )?);
    let y = rt(Shape::nchw(1, 3, 6, 6), &mut rng);
    out.push(run_build(
        "add",
        &[("a".into(), x.clone()), ("b".into(), y.clone())],
        &|t, ids| t.add(ids[0], ids[1]),
        seed,
    )?);
    out.push(run_build(
        "mul",
        &[("a".into(), x.clone()), ("b".into(), y.clone())],
        &|t, ids| t.mul(ids[0], ids[1]),
        seed,
    )?);
    let mut denom = rt(Shape::nchw(1, 3, 6, 6), &mut rng);
    for v in &mut denom.data {
        *v = 1.5 + v.abs();
    }
    out.push(run_build(
        "div",
        &[("a".into(), x.clone()), ("b".into(), denom)],
        &|t, ids| t.div(ids[0], ids[1]),
        seed,
    )?);
    out.push(run_build(
        "concat_channels",
        &[("a".into(), x.clone()), ("b".into(), y)],
        &|t, ids| t.concat_channels(ids[0], ids[1]),
        seed,
    )?);
    out.push(run_build(
        "slice_channels",
        &[("x".into(), x.clone())],
        &|t, ids| t.slice_channels(ids[0], 1, 3),
        seed,
    )?);
    let sc = rt(Shape::nchw(1, 3, 1, 1), &mut rng);
    out.push(run_build(
        "scale_channels",
        &[("x".into(), x.clone()), ("s".into(), sc)],
        &|t, ids| t.scale_channels(ids[0], ids[1]),
        seed,
    )?);
    out.push(run_build(
        "clamp_min",
        &[("x".into(), xk)],
        &|t, ids| Ok(t.clamp_min(ids[0], 0.0)),
        seed,
    )?);
    let labels = {
        let mut lrng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6273);
        let v: Vec<usize> = (0..36).map(|_| rand::Rng::gen_range(&mut lrng, 0..3)).collect();
        LabelMap::new(1, 6, 6, v)?
    };
    let l2 = labels.clone();
    out.push(run_build(
        "cross_entropy",
        &[("x".into(), x.clone())],
        &move |t, ids| t.cross_entropy(ids[0], &labels),
        seed,
    )?);
    out.push(run_build(
        "soft_dice",
        &[("x".into(), x)],
        &move |t, ids| t.soft_dice(ids[0], &l2, 1e-5),
        seed,
    )?);
    Ok(out)
}

fn deform_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(2));
    let x = rt(Shape::nchw(1, 2, 5, 5), &mut rng);
    let w = rt(Shape::nchw(2, 2, 3, 3), &mut rng);
    let b = rt(Shape::nchw(2, 1, 1, 1), &mut rng);
    let offsets = rt_offsets(Shape::nchw(1, 18, 5, 5), &mut rng);
    let mask = rt(Shape::nchw(1, 9, 5, 5), &mut rng);
    Ok(vec![run_build(
        "modulated_deform_conv2d",
        &[
            ("x".into(), x),
            ("w".into(), w),
            ("b".into(), b),
            ("offsets".into(), offsets),
            ("mask_logits".into(), mask),
        ],
        &|t, ids| t.modulated_deform_conv2d(ids[0], ids[1], ids[2], ids[3], ids[4], false),
        seed,
    )?])
}

/// Gradcheck a layer that binds its own parameters. `tensors[0]` must be
/// the input (plus `skip` for DCU); the remaining entries must carry the
/// exact bind names the layer registers under the given prefix.
fn run_layer(
    name: &str,
    tensors: &[(String, Tensor<f64>)],
    forward: &dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<(ValueId, Vec<(String, ValueId)>)>,
    seed: u64,
) -> Result<(String, GradReport)> {
    let base: Vec<Tensor<f64>> = tensors.iter().map(|(_, t)| t.clone()).collect();
    let mut tape = Tape::new();
    let (out, binds) = forward(&mut tape, &base)?;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726f6a);
    let proj = Tensor::rand_uniform(tape.shape(out), -1.0, 1.0, &mut prng);
    let pid = tape.leaf(&proj);
    let prod = tape.mul(out, pid)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = tensors
        .iter()
        .map(|(n, t)| {
            let id = binds
                .iter()
                .find(|(bn, _)| bn == n)
                .ok_or_else(|| Error::invalid(format!("no bind named {n}")))?
                .1;
            Ok(tape
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()]))
        })
        .collect::<Result<_>>()?;
    let mut f = |ts: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, ts).expect("forward succeeded at base point");
        let pid = tape.leaf(&proj);
        let prod = tape.mul(out, pid).expect("projection shape");
        let loss = tape.sum(prod);
        tape.value(loss).data[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((
        name.to_string(),
        check_module(tensors, &analytic, &mut f, DEFAULT_STEP, DEFAULT_TOL, &mut rng),
    ))
}

/// Collect a layer's parameters as (bind name, tensor) pairs by running one
/// forward pass and reading back the bound leaves.
fn layer_param_tensors(
    tape: &mut Tape<f64>,
    binds: &[(String, ValueId)],
) -> Vec<(String, Tensor<f64>)> {
    binds
        .iter()
        .map(|(n, id)| (n.clone(), tape.value(*id)))
        .collect()
}

fn dcc_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(3));
    let layer = DccLayer::<f64>::new(3, 4, 0.01, &mut rng);
    let x = rt(Shape::nchw(1, 3, 8, 8), &mut rng);
    let mut probe_tape = Tape::new();
    let xid = probe_tape.leaf(&x);
    let mut binder = Binder::new(&mut probe_tape);
    layer.forward(&mut binder, "g", xid)?;
    let binds = binder.binds.clone();
    let mut tensors = vec![("x".to_string(), x)];
    tensors.extend(layer_param_tensors(&mut probe_tape, &binds));
    let fwd = move |tape: &mut Tape<f64>, ts: &[Tensor<f64>]| {
        let mut l = layer.clone();
        for (p, t) in l.params_mut().into_iter().zip(&ts[1..]) {
            *p = t.clone();
        }
        let xid = tape.leaf(&ts[0].clone().requires_grad(true));
        let mut binder = Binder::new(tape);
        let out = l.forward(&mut binder, "g", xid)?;
        let mut binds = binder.binds.clone();
        binds.push(("x".to_string(), xid));
        Ok((out, binds))
    };
    Ok(vec![run_layer("dcc", &tensors, &fwd, seed)?])
}

fn dcd_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(4));
    let mut layer = DcdLayer::<f64>::new(3, &mut rng);
    layer.conv_offset.weight = Tensor::rand_uniform(layer.conv_offset.weight.shape, -0.1, 0.1, &mut rng);
    layer.conv_offset.bias = Tensor::rand_uniform(layer.conv_offset.bias.shape, -0.1, 0.1, &mut rng);
    let x = rt(Shape::nchw(1, 3, 6, 6), &mut rng);
    let mut probe_tape = Tape::new();
    let xid = probe_tape.leaf(&x);
    let mut binder = Binder::new(&mut probe_tape);
    layer.forward(&mut binder, "g", xid)?;
    let binds = binder.binds.clone();
    let mut tensors = vec![("x".to_string(), x)];
    tensors.extend(layer_param_tensors(&mut probe_tape, &binds));
    let fwd = move |tape: &mut Tape<f64>, ts: &[Tensor<f64>]| {
        let mut l = layer.clone();
        for (p, t) in l.params_mut().into_iter().zip(&ts[1..]) {
            *p = t.clone();
        }
        let xid = tape.leaf(&ts[0].clone().requires_grad(true));
        let mut binder = Binder::new(tape);
        let out = l.forward(&mut binder, "g", xid)?;
        let mut binds = binder.binds.clone();
        binds.push(("x".to_string(), xid));
        Ok((out, binds))
    };
    Ok(vec![run_layer("dcd", &tensors, &fwd, seed)?])
}

fn dcu_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(5));
    let mut layer = DcuLayer::<f64>::new(6, 3, 0.01, &mut rng);
    layer.conv_offset.weight = Tensor::rand_uniform(layer.conv_offset.weight.shape, -0.1, 0.1, &mut rng);
    layer.conv_offset.bias = Tensor::rand_uniform(layer.conv_offset.bias.shape, -0.1, 0.1, &mut rng);
    let f_next = rt(Shape::nchw(1, 6, 3, 3), &mut rng);
    let skip = rt(Shape::nchw(1, 3, 6, 6), &mut rng);
    let mut probe_tape = Tape::new();
    let fid = probe_tape.leaf(&f_next);
    let sid = probe_tape.leaf(&skip);
    let mut binder = Binder::new(&mut probe_tape);
    layer.forward(&mut binder, "g", fid, sid)?;
    let binds = binder.binds.clone();
    let mut tensors = vec![("f".to_string(), f_next), ("skip".to_string(), skip)];
    tensors.extend(layer_param_tensors(&mut probe_tape, &binds));
    let fwd = move |tape: &mut Tape<f64>, ts: &[Tensor<f64>]| {
        let mut l = layer.clone();
        for (p, t) in l.params_mut().into_iter().zip(&ts[2..]) {
            *p = t.clone();
        }
        let fid = tape.leaf(&ts[0].clone().requires_grad(true));
        let sid = tape.leaf(&ts[1].clone().requires_grad(true));
        let mut binder = Binder::new(tape);
        let out = l.forward(&mut binder, "g", fid, sid)?;
        let mut binds = binder.binds.clone();
        binds.push(("f".to_string(), fid));
        binds.push(("skip".to_string(), sid));
        Ok((out, binds))
    };
    Ok(vec![run_layer("dcu", &tensors, &fwd, seed)?])
}

fn network_suite(variant: Variant, seed: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(6));
    let cfg = ArchitectureConfig::new(variant, 2, vec![4, 8]);
    let mut net = NetworkState::<f64>::build(&cfg, seed)?;
    // zero-initialized offset predictors put every deformable sampling point
    // exactly on an integer grid node, where bilinear interpolation is
    // kinked; wake them with small random weights before probing
    net.visit_params_mut(&mut |name, t| {
        if name.contains("offset") {
            *t = Tensor::rand_uniform(t.shape, -0.1, 0.1, &mut rng);
        }
    });
    let x = rt(Shape::nchw(1, 1, 8, 8), &mut rng);
    let mut names = Vec::new();
    let mut tensors = vec![("x".to_string(), x)];
    net.visit_params(&mut |name, t| {
        names.push(name.clone());
        tensors.push((name, t.clone()));
    });
    let fwd = move |tape: &mut Tape<f64>, ts: &[Tensor<f64>]| {
        let mut n = net.clone();
        let mut i = 1usize;
        n.visit_params_mut(&mut |_, t| {
            *t = ts[i].clone();
            i += 1;
        });
        let xid = tape.leaf(&ts[0].clone().requires_grad(true));
        let (out, mut binds) = n.forward_on_tape(tape, xid)?;
        binds.push(("x".to_string(), xid));
        Ok((out, binds))
    };
    Ok(vec![run_layer(&format!("{variant}"), &tensors, &fwd, seed)?])
}

/// Run the named check set. Valid targets: `ops`, `deform`, `dcc`, `dcd`,
/// `dcu`, any variant name, `network` (all six variants), or `all`.
pub fn run_suite(target: &str, seeds: &[u64]) -> Result<Vec<(String, GradReport)>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let mut batch = match target {
            "ops" => ops_suite(seed)?,
            "deform" => deform_suite(seed)?,
            "dcc" => dcc_suite(seed)?,
            "dcd" => dcd_suite(seed)?,
            "dcu" => dcu_suite(seed)?,
            "network" => {
                let mut v = Vec::new();
                for variant in Variant::ALL {
                    v.extend(network_suite(variant, seed)?);
                }
                v
            }
            "all" => {
                let mut v = ops_suite(seed)?;
                v.extend(deform_suite(seed)?);
                v.extend(dcc_suite(seed)?);
                v.extend(dcd_suite(seed)?);
                v.extend(dcu_suite(seed)?);
                for variant in Variant::ALL {
                    v.extend(network_suite(variant, seed)?);
                }
                v
            }
            other => match other.parse::<Variant>() {
                Ok(v) => network_suite(v, seed)?,
                Err(_) => {
                    return Err(Error::invalid(format!(
                        "unknown gradcheck target '{other}'; valid: all, ops, deform, dcc, dcd, dcu, network, or a variant name"
                    )))
                }
            },
        };
        for (name, _) in &mut batch {
            *name = format!("{name}[seed {seed}]");
        }
        out.extend(batch);
    }
    Ok(out)
}
