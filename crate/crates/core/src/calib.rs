//! Dynamically calibrated layers: convolution (DCC), downsampling (DCD)
//! and upsampling (DCU). Each layer owns its parameters and exposes a
//! differentiable forward on a tape.
//!
//! Conventions shared by all three:
//! - learned 3x3 feature convs are followed by instance norm + leaky ReLU;
//!   calibration-path convs (pixel/region/offset) stay raw so the sigmoid /
//!   exp gates see unnormalized signals;
//! - offset-generating convs emit 3*K*K channels (2*K*K offsets then K*K
//!   modulation logits) and start at exactly zero, so every deformable
//!   layer begins life as its non-deformable counterpart.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const DCD_DENOM_GUARD: f64 = 1e-8;
/// Offset + modulation channels emitted for a K=3 deformable kernel.
pub const OFFSET_CONV_CHANNELS: usize = 27;

/// He-uniform initialization bound for a fan-in.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// One convolution's parameters (weight + bias).
#[derive(Debug, Clone)]
pub struct ConvParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Kaiming-style fan-in uniform init, zero bias.
    pub fn he_init<R: Rng>(cout: usize, cin: usize, k: usize, rng: &mut R) -> Self {
        let bound = he_bound(cin * k * k);
        ConvParams {
            weight: Tensor::rand_uniform(Shape::nchw(cout, cin, k, k), -bound, bound, rng),
            bias: Tensor::zeros(Shape::nchw(cout, 1, 1, 1)),
        }
    }

    /// All-zero init (offset-generating convs).
    pub fn zero(cout: usize, cin: usize, k: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(Shape::nchw(cout, cin, k, k)),
            bias: Tensor::zeros(Shape::nchw(cout, 1, 1, 1)),
        }
    }

    /// Transposed-conv layout [Cin, Cout, 2, 2].
    pub fn he_init_transpose<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let bound = he_bound(cin * 4);
        ConvParams {
            weight: Tensor::rand_uniform(Shape::nchw(cin, cout, 2, 2), -bound, bound, rng),
            bias: Tensor::zeros(Shape::nchw(cout, 1, 1, 1)),
        }
    }
}

/// Registers parameter leaves on the tape under hierarchical names so the
/// trainer can map gradients back to parameters.
pub struct Binder<'t, T: Scalar> {
    pub tape: &'t mut Tape<T>,
    pub binds: Vec<(String, ValueId)>,
}

impl<'t, T: Scalar> Binder<'t, T> {
    pub fn new(tape: &'t mut Tape<T>) -> Self {
        Binder {
            tape,
            binds: Vec::new(),
        }
    }

    pub fn bind(&mut self, name: String, t: &Tensor<T>) -> ValueId {
        // parameters registered here are trainable by definition
        let id = self.tape.leaf(&t.clone().requires_grad(true));
        self.binds.push((name, id));
        id
    }

    pub fn conv(&mut self, prefix: &str, p: &ConvParams<T>) -> (ValueId, ValueId) {
        let w = self.bind(format!("{prefix}.w"), &p.weight);
        let b = self.bind(format!("{prefix}.b"), &p.bias);
        (w, b)
    }
}

/// conv 3x3 -> instance norm -> leaky ReLU, the feature-path unit.
pub fn conv_in_lrelu<T: Scalar>(
    binder: &mut Binder<'_, T>,
    prefix: &str,
    p: &ConvParams<T>,
    x: ValueId,
    stride: usize,
    slope: f64,
) -> Result<ValueId> {
    let (w, b) = binder.conv(prefix, p);
    let k = p.weight.shape.h();
    let y = binder.tape.conv2d(x, w, b, stride, (k - 1) / 2)?;
    let y = binder.tape.instance_norm(y, INSTANCE_NORM_EPS)?;
    Ok(binder.tape.leaky_relu(y, slope))
}

// ---------------------------------------------------------------------------
// DCC
// ---------------------------------------------------------------------------

/// Dynamically Calibrated Convolution block (replaces a double-conv block).
///
/// Forward chain: a pixel path (1x1 conv) and a region path (4x4 avg pool,
/// 3x3 conv, nearest x4 upsample) fuse by addition into a sigmoid spatial
/// gate; the gate scales the local feature conv; a second feature conv
/// follows; finally a global-pool + linear + sigmoid channel gate rescales
/// the result.
#[derive(Debug, Clone)]
pub struct DccLayer<T: Scalar> {
    pub conv_pixel: ConvParams<T>,
    pub conv_region: ConvParams<T>,
    pub conv_local: ConvParams<T>,
    pub conv_second: ConvParams<T>,
    pub linear: ConvParams<T>, // weight [Cout, Cout] stored as [Cout, Cout, 1, 1]
    pub slope: f64,
    pub cin: usize,
    pub cout: usize,
}

pub const DCC_REGION_POOL: usize = 4;

impl<T: Scalar> DccLayer<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, slope: f64, rng: &mut R) -> Self {
        DccLayer {
            conv_pixel: ConvParams::he_init(cout, cin, 1, rng),
            conv_region: ConvParams::he_init(cout, cin, 3, rng),
            conv_local: ConvParams::he_init(cout, cin, 3, rng),
            conv_second: ConvParams::he_init(cout, cout, 3, rng),
            linear: ConvParams {
                weight: Tensor::rand_uniform(
                    Shape::nchw(cout, cout, 1, 1),
                    -he_bound(cout),
                    he_bound(cout),
                    rng,
                ),
                bias: Tensor::zeros(Shape::nchw(cout, 1, 1, 1)),
            },
            slope,
            cin,
            cout,
        }
    }

    pub fn forward(&self, binder: &mut Binder<'_, T>, prefix: &str, x: ValueId) -> Result<ValueId> {
        let xs = binder.tape.shape(x);
        if xs.c() != self.cin {
            return Err(Error::shape(format!(
                "{prefix}: DCC expects {} input channels, got {} ({xs})",
                self.cin,
                xs.c()
            )));
        }
        let (h, w) = (xs.h(), xs.w());
        // pixel-wise gate path
        let (pw, pb) = binder.conv(&format!("{prefix}.pixel"), &self.conv_pixel);
        let tp = binder.tape.conv2d(x, pw, pb, 1, 0)?;
        // region-wise gate path
        let pooled = binder.tape.avg_pool2d(x, DCC_REGION_POOL, DCC_REGION_POOL)?;
        let (rw, rb) = binder.conv(&format!("{prefix}.region"), &self.conv_region);
        let tr = binder.tape.conv2d(pooled, rw, rb, 1, 1)?;
        let tr = binder.tape.nearest_upsample(tr, DCC_REGION_POOL)?;
        let tr = binder.tape.crop_spatial(tr, h, w)?;
        let fused = binder.tape.add(tp, tr)?;
        let ts = binder.tape.sigmoid(fused);
        // spatially calibrated local features
        let local = conv_in_lrelu(
            binder,
            &format!("{prefix}.local"),
            &self.conv_local,
            x,
            1,
            self.slope,
        )?;
        let f1 = binder.tape.mul(local, ts)?;
        let f2 = conv_in_lrelu(
            binder,
            &format!("{prefix}.second"),
            &self.conv_second,
            f1,
            1,
            self.slope,
        )?;
        // channel calibration
        let gap = binder.tape.adaptive_avg_pool_global(f2)?;
        let (lw, lb) = binder.conv(&format!("{prefix}.channel"), &self.linear);
        let lin = binder.tape.linear(gap, lw, lb)?;
        let scale = binder.tape.sigmoid(lin);
        binder.tape.scale_channels(f2, scale)
    }
}

// ---------------------------------------------------------------------------
// DCD
// ---------------------------------------------------------------------------

/// Dynamically Calibrated Downsampling: a positive allocation map from a
/// modulated deformable conv drives a weighted 2x2 window mean.
#[derive(Debug, Clone)]
pub struct DcdLayer<T: Scalar> {
    pub conv_offset: ConvParams<T>,
    pub deform: ConvParams<T>,
    pub channels: usize,
    /// Test hook: force the deformable modulation mask to exactly 1.
    pub mask_one: bool,
}

pub const DCD_POOL: usize = 2;

impl<T: Scalar> DcdLayer<T> {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        DcdLayer {
            conv_offset: ConvParams::zero(OFFSET_CONV_CHANNELS, channels, 3),
            deform: ConvParams::he_init(channels, channels, 3, rng),
            channels,
            mask_one: false,
        }
    }

    pub fn forward(&self, binder: &mut Binder<'_, T>, prefix: &str, f: ValueId) -> Result<ValueId> {
        let fs = binder.tape.shape(f);
        if fs.c() != self.channels {
            return Err(Error::shape(format!(
                "{prefix}: DCD expects {} channels, got {} ({fs})",
                self.channels,
                fs.c()
            )));
        }
        if fs.h() % 2 != 0 || fs.w() % 2 != 0 {
            return Err(Error::shape(format!(
                "{prefix}: DCD requires even spatial extents, got {fs} (architecture bug)"
            )));
        }
        let (ow, ob) = binder.conv(&format!("{prefix}.offset"), &self.conv_offset);
        let off_all = binder.tape.conv2d(f, ow, ob, 1, 1)?;
        let offs = binder.tape.slice_channels(off_all, 0, 18)?;
        let mlog = binder.tape.slice_channels(off_all, 18, 27)?;
        let (dw, db) = binder.conv(&format!("{prefix}.deform"), &self.deform);
        let logits = binder
            .tape
            .modulated_deform_conv2d(f, dw, db, offs, mlog, self.mask_one)?;
        let gate = binder.tape.sigmoid(logits);
        let m = binder.tape.exp(gate);
        let weighted = binder.tape.mul(m, f)?;
        let num = binder.tape.avg_pool2d(weighted, DCD_POOL, DCD_POOL)?;
        let den = binder.tape.avg_pool2d(m, DCD_POOL, DCD_POOL)?;
        // M >= 1 keeps the denominator >= 1; the clamp only guards 32-bit
        // underflow and never perturbs reachable values.
        let den = binder.tape.clamp_min(den, DCD_DENOM_GUARD);
        binder.tape.div(num, den)
    }
}

// ---------------------------------------------------------------------------
// DCU
// ---------------------------------------------------------------------------

/// Dynamically Calibrated Upsampling: transposed-conv upsample, offsets
/// learned from [upsampled, skip], deformable realignment, leaky ReLU.
/// Concatenation with the skip happens in the network.
#[derive(Debug, Clone)]
pub struct DcuLayer<T: Scalar> {
    pub up: ConvParams<T>, // [Cin, Cout, 2, 2]
    pub conv_offset: ConvParams<T>,
    pub deform: ConvParams<T>,
    pub slope: f64,
    pub cin: usize,
    pub cout: usize,
    /// Test hook: force the deformable modulation mask to exactly 1.
    pub mask_one: bool,
}

impl<T: Scalar> DcuLayer<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, slope: f64, rng: &mut R) -> Self {
        DcuLayer {
            up: ConvParams::he_init_transpose(cin, cout, rng),
            conv_offset: ConvParams::zero(OFFSET_CONV_CHANNELS, 2 * cout, 3),
            deform: ConvParams::he_init(cout, cout, 3, rng),
            slope,
            cin,
            cout,
            mask_one: false,
        }
    }

    pub fn forward(
        &self,
        binder: &mut Binder<'_, T>,
        prefix: &str,
        f_next: ValueId,
        skip: ValueId,
    ) -> Result<ValueId> {
        let fs = binder.tape.shape(f_next);
        let ss = binder.tape.shape(skip);
        if ss.h() != 2 * fs.h() || ss.w() != 2 * fs.w() {
            return Err(Error::shape(format!(
                "{prefix}: skip extents {ss} must exactly double decoder input {fs}"
            )));
        }
        let (uw, ub) = binder.conv(&format!("{prefix}.up"), &self.up);
        let fi = binder.tape.conv_transpose2d(f_next, uw, ub)?;
        let cat = binder.tape.concat_channels(fi, skip)?;
        let (ow, ob) = binder.conv(&format!("{prefix}.offset"), &self.conv_offset);
        let off_all = binder.tape.conv2d(cat, ow, ob, 1, 1)?;
        let offs = binder.tape.slice_channels(off_all, 0, 18)?;
        let mlog = binder.tape.slice_channels(off_all, 18, 27)?;
        let (dw, db) = binder.conv(&format!("{prefix}.deform"), &self.deform);
        let aligned = binder
            .tape
            .modulated_deform_conv2d(fi, dw, db, offs, mlog, self.mask_one)?;
        Ok(binder.tape.leaky_relu(aligned, self.slope))
    }
}

impl<T: Scalar> DccLayer<T> {
    /// All parameter tensors, in the same order `forward` binds them.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.conv_pixel.weight,
            &mut self.conv_pixel.bias,
            &mut self.conv_region.weight,
            &mut self.conv_region.bias,
            &mut self.conv_local.weight,
            &mut self.conv_local.bias,
            &mut self.conv_second.weight,
            &mut self.conv_second.bias,
            &mut self.linear.weight,
            &mut self.linear.bias,
        ]
    }
}

impl<T: Scalar> DcdLayer<T> {
    /// All parameter tensors, in the same order `forward` binds them.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.conv_offset.weight,
            &mut self.conv_offset.bias,
            &mut self.deform.weight,
            &mut self.deform.bias,
        ]
    }
}

impl<T: Scalar> DcuLayer<T> {
    /// All parameter tensors, in the same order `forward` binds them.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.up.weight,
            &mut self.up.bias,
            &mut self.conv_offset.weight,
            &mut self.conv_offset.bias,
            &mut self.deform.weight,
            &mut self.deform.bias,
        ]
    }
}
