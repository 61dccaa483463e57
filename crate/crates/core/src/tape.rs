//! Recorded-operation tape for reverse-mode differentiation.
//!
//! A `Tape` owns every value produced during one forward pass. Graph-building
//! methods validate shapes, run the forward kernel, and append a record; a
//! single `backward` traversal walks the records in reverse and accumulates
//! gradients into all leaves created with `requires_grad`.

use crate::error::{Error, Result};
use crate::ops::{conv, deform, linear, loss, norm, pointwise, pool};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Shape, Tensor};

/// Index of a value in the tape arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug)]
struct Node<T: Scalar> {
    shape: Shape,
    data: Vec<T>,
    requires: bool,
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Conv2d { stride: usize, padding: usize },
    ConvTranspose2d,
    AvgPool { k: usize, s: usize },
    GlobalAvgPool,
    MaxPool { argmax: Vec<usize> },
    NearestUp { scale: usize },
    CropSpatial,
    Linear,
    Sigmoid,
    Exp,
    LeakyRelu { slope: f64 },
    Add,
    Mul,
    Div,
    AddScalar,
    MulScalar { c: f64 },
    ClampMin { c: f64 },
    ConcatChannels { c_first: usize },
    SliceChannels { from: usize },
    ScaleChannels,
    InstanceNorm { invstd: Vec<T> },
    SumAll,
    DeformConv { mask_one: bool },
    CrossEntropy { labels: LabelMap, probs: Vec<T> },
    SoftDice { labels: LabelMap, eps: f64, probs: Vec<T> },
}

#[derive(Debug)]
struct Record<T: Scalar> {
    op: Op<T>,
    inputs: Vec<ValueId>,
    output: ValueId,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn debug_check_finite<T: Scalar>(data: &[T], op: &str) {
    debug_assert!(
        data.iter().all(|x| x.is_finite()),
        "non-finite value produced by {op}"
    );
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            records: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn shape(&self, id: ValueId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn data(&self, id: ValueId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn value(&self, id: ValueId) -> Tensor<T> {
        Tensor {
            shape: self.nodes[id.0].shape,
            data: self.nodes[id.0].data.clone(),
            requires_grad: self.nodes[id.0].requires,
            grad: self.grads[id.0].clone(),
        }
    }

    /// Gradient of the last `backward` target with respect to `id`, if it
    /// was computed.
    pub fn grad(&self, id: ValueId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn leaf(&mut self, t: &Tensor<T>) -> ValueId {
        self.push(t.shape, t.data.clone(), t.requires_grad)
    }

    pub fn leaf_owned(&mut self, shape: Shape, data: Vec<T>, requires: bool) -> Result<ValueId> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "leaf data length {} does not match shape {}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(shape, data, requires))
    }

    fn push(&mut self, shape: Shape, data: Vec<T>, requires: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            requires,
        });
        self.grads.push(None);
        id
    }

    fn record(&mut self, op: Op<T>, inputs: Vec<ValueId>, shape: Shape, data: Vec<T>) -> ValueId {
        let requires = inputs.iter().any(|&i| self.nodes[i.0].requires);
        let out = self.push(shape, data, requires);
        self.records.push(Record {
            op,
            inputs,
            output: out,
        });
        out
    }

    // ---- convolution family -------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        conv::validate_conv2d(xs, ws, bs, stride, padding)?;
        let (os, out) = conv::conv2d_forward(
            self.data(x),
            xs,
            self.data(w),
            ws,
            self.data(b),
            stride,
            padding,
        );
        debug_check_finite(&out, "conv2d");
        Ok(self.record(Op::Conv2d { stride, padding }, vec![x, w, b], os, out))
    }

    /// Transposed convolution, fixed kernel 2 / stride 2 (the only
    /// configuration the architecture uses). Weight layout [Cin, Cout, 2, 2].
    pub fn conv_transpose2d(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        conv::validate_conv_transpose2d(xs, ws, bs)?;
        let (os, out) =
            conv::conv_transpose2d_forward(self.data(x), xs, self.data(w), ws, self.data(b));
        debug_check_finite(&out, "conv_transpose2d");
        Ok(self.record(Op::ConvTranspose2d, vec![x, w, b], os, out))
    }

    // ---- pooling / resampling ----------------------------------------------

    pub fn avg_pool2d(&mut self, x: ValueId, k: usize, s: usize) -> Result<ValueId> {
        if k == 0 || s == 0 {
            return Err(Error::invalid(format!(
                "avg_pool2d kernel and stride must be positive, got kernel={k} stride={s}"
            )));
        }
        let xs = self.shape(x);
        let (os, out) = pool::avg_pool2d_forward(self.data(x), xs, k, s);
        debug_check_finite(&out, "avg_pool2d");
        Ok(self.record(Op::AvgPool { k, s }, vec![x], os, out))
    }

    pub fn max_pool2d(&mut self, x: ValueId, k: usize, s: usize) -> Result<ValueId> {
        if k == 0 || s == 0 {
            return Err(Error::invalid(format!(
                "max_pool2d kernel and stride must be positive, got kernel={k} stride={s}"
            )));
        }
        let xs = self.shape(x);
        let (os, out, argmax) = pool::max_pool2d_forward(self.data(x), xs, k, s);
        debug_check_finite(&out, "max_pool2d");
        Ok(self.record(Op::MaxPool { argmax }, vec![x], os, out))
    }

    pub fn adaptive_avg_pool_global(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.shape(x);
        let (os, out) = pool::global_avg_pool_forward(self.data(x), xs);
        debug_check_finite(&out, "adaptive_avg_pool_global");
        Ok(self.record(Op::GlobalAvgPool, vec![x], os, out))
    }

    pub fn nearest_upsample(&mut self, x: ValueId, scale: usize) -> Result<ValueId> {
        if scale == 0 {
            return Err(Error::invalid("nearest_upsample scale must be >= 1"));
        }
        let xs = self.shape(x);
        let (os, out) = pool::nearest_upsample_forward(self.data(x), xs, scale);
        Ok(self.record(Op::NearestUp { scale }, vec![x], os, out))
    }

    /// Keep the top-left h x w window of each map.
    pub fn crop_spatial(&mut self, x: ValueId, h: usize, w: usize) -> Result<ValueId> {
        let xs = self.shape(x);
        if h > xs.h() || w > xs.w() {
            return Err(Error::shape(format!(
                "crop to {h}x{w} exceeds input {xs}"
            )));
        }
        let (os, out) = pool::crop_spatial_forward(self.data(x), xs, h, w);
        Ok(self.record(Op::CropSpatial, vec![x], os, out))
    }

    // ---- linear -------------------------------------------------------------

    /// Affine map on [N, Cin] tensors (stored as [N, Cin, 1, 1]).
    /// Weight layout [Cout, Cin].
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        linear::validate_linear(xs, ws, bs)?;
        let (os, out) = linear::linear_forward(self.data(x), xs, self.data(w), ws, self.data(b));
        debug_check_finite(&out, "linear");
        Ok(self.record(Op::Linear, vec![x, w, b], os, out))
    }

    // ---- pointwise ----------------------------------------------------------

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let shape = self.shape(x);
        let out = pointwise::map(self.data(x), |v| T::ONE / (T::ONE + (-v).exp()));
        self.record(Op::Sigmoid, vec![x], shape, out)
    }

    pub fn exp(&mut self, x: ValueId) -> ValueId {
        let shape = self.shape(x);
        let out = pointwise::map(self.data(x), |v| v.exp());
        debug_check_finite(&out, "exp");
        self.record(Op::Exp, vec![x], shape, out)
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: f64) -> ValueId {
        let shape = self.shape(x);
        let a = T::from_f64(slope);
        let out = pointwise::map(self.data(x), |v| if v >= T::ZERO { v } else { a * v });
        self.record(Op::LeakyRelu { slope }, vec![x], shape, out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let shape = self.binary_shape(a, b, "add")?;
        let out = pointwise::zip(self.data(a), self.data(b), |x, y| x + y);
        debug_check_finite(&out, "add");
        Ok(self.record(Op::Add, vec![a, b], shape, out))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let shape = self.binary_shape(a, b, "mul")?;
        let out = pointwise::zip(self.data(a), self.data(b), |x, y| x * y);
        debug_check_finite(&out, "mul");
        Ok(self.record(Op::Mul, vec![a, b], shape, out))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let shape = self.binary_shape(a, b, "div")?;
        let out = pointwise::zip(self.data(a), self.data(b), |x, y| x / y);
        debug_check_finite(&out, "div");
        Ok(self.record(Op::Div, vec![a, b], shape, out))
    }

    pub fn add_scalar(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.shape(x);
        let cv = T::from_f64(c);
        let out = pointwise::map(self.data(x), |v| v + cv);
        self.record(Op::AddScalar, vec![x], shape, out)
    }

    pub fn mul_scalar(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.shape(x);
        let cv = T::from_f64(c);
        let out = pointwise::map(self.data(x), |v| v * cv);
        self.record(Op::MulScalar { c }, vec![x], shape, out)
    }

    /// Elementwise max(x, c); the sub-gradient at x == c is 1.
    pub fn clamp_min(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.shape(x);
        let cv = T::from_f64(c);
        let out = pointwise::map(self.data(x), |v| v.max_s(cv));
        self.record(Op::ClampMin { c }, vec![x], shape, out)
    }

    pub fn concat_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::shape(format!(
                "concat_channels requires matching N,H,W: {sa} vs {sb}"
            )));
        }
        let (os, out) = pointwise::concat_channels(self.data(a), sa, self.data(b), sb);
        Ok(self.record(
            Op::ConcatChannels { c_first: sa.c() },
            vec![a, b],
            os,
            out,
        ))
    }

    /// Channels [from, to) of the input.
    pub fn slice_channels(&mut self, x: ValueId, from: usize, to: usize) -> Result<ValueId> {
        let xs = self.shape(x);
        if from >= to || to > xs.c() {
            return Err(Error::shape(format!(
                "slice_channels [{from}, {to}) invalid for {} channels",
                xs.c()
            )));
        }
        let (os, out) = pointwise::slice_channels(self.data(x), xs, from, to);
        Ok(self.record(Op::SliceChannels { from }, vec![x], os, out))
    }

    /// Multiply each channel map of x [N,C,H,W] by the matching scalar of
    /// s [N,C,1,1].
    pub fn scale_channels(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let (xs, ss) = (self.shape(x), self.shape(s));
        if ss.n() != xs.n() || ss.c() != xs.c() || ss.h() != 1 || ss.w() != 1 {
            return Err(Error::shape(format!(
                "scale_channels expects scales [N,C,1,1] matching {xs}, got {ss}"
            )));
        }
        let out = pointwise::scale_channels(self.data(x), xs, self.data(s));
        Ok(self.record(Op::ScaleChannels, vec![x, s], xs, out))
    }

    /// Per-sample, per-channel spatial standardization (no affine part).
    pub fn instance_norm(&mut self, x: ValueId, eps: f64) -> Result<ValueId> {
        let xs = self.shape(x);
        let (out, _mean, invstd) = norm::instance_norm_forward(self.data(x), xs, eps);
        debug_check_finite(&out, "instance_norm");
        Ok(self.record(Op::InstanceNorm { invstd }, vec![x], xs, out))
    }

    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let total: T = self.data(x).iter().copied().sum();
        self.record(Op::SumAll, vec![x], Shape::nchw(1, 1, 1, 1), vec![total])
    }

    // ---- deformable convolution --------------------------------------------

    /// Modulated deformable convolution, stride 1, padding (K-1)/2.
    ///
    /// `offsets` carries 2*K*K channels of (dy, dx) pairs per tap in row-major
    /// tap order; `mask_logits` carries K*K channels, passed through a sigmoid
    /// inside the op. `mask_one` is a test hook that forces the modulation
    /// mask to exactly 1 (no gradient flows to the logits).
    pub fn modulated_deform_conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        offsets: ValueId,
        mask_logits: ValueId,
        mask_one: bool,
    ) -> Result<ValueId> {
        let shapes = [
            self.shape(x),
            self.shape(w),
            self.shape(b),
            self.shape(offsets),
            self.shape(mask_logits),
        ];
        deform::validate_deform_conv(shapes)?;
        let (os, out) = deform::deform_conv_forward(
            self.data(x),
            shapes[0],
            self.data(w),
            shapes[1],
            self.data(b),
            self.data(offsets),
            self.data(mask_logits),
            mask_one,
        );
        debug_check_finite(&out, "modulated_deform_conv2d");
        Ok(self.record(
            Op::DeformConv { mask_one },
            vec![x, w, b, offsets, mask_logits],
            os,
            out,
        ))
    }

    // ---- losses -------------------------------------------------------------

    /// Mean over all pixels of -log softmax at the true class.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &LabelMap) -> Result<ValueId> {
        let ls = self.shape(logits);
        loss::validate_labels(ls, labels)?;
        let (value, probs) = loss::cross_entropy_forward(self.data(logits), ls, labels);
        debug_check_finite(std::slice::from_ref(&value), "cross_entropy");
        Ok(self.record(
            Op::CrossEntropy {
                labels: labels.clone(),
                probs,
            },
            vec![logits],
            Shape::nchw(1, 1, 1, 1),
            vec![value],
        ))
    }

    /// Soft Dice loss over foreground classes (class 0 is background),
    /// sums aggregated over the batch.
    pub fn soft_dice(&mut self, logits: ValueId, labels: &LabelMap, eps: f64) -> Result<ValueId> {
        let ls = self.shape(logits);
        loss::validate_labels(ls, labels)?;
        if ls.c() < 2 {
            return Err(Error::invalid(
                "soft_dice requires at least 2 classes (background + foreground)",
            ));
        }
        let (value, probs) = loss::soft_dice_forward(self.data(logits), ls, labels, eps);
        debug_check_finite(std::slice::from_ref(&value), "soft_dice");
        Ok(self.record(
            Op::SoftDice {
                labels: labels.clone(),
                eps,
                probs,
            },
            vec![logits],
            Shape::nchw(1, 1, 1, 1),
            vec![value],
        ))
    }

    fn binary_shape(&self, a: ValueId, b: ValueId, op: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!(
                "{op} requires equal shapes, got {sa} vs {sb}"
            )));
        }
        Ok(sa)
    }

    // ---- backward -----------------------------------------------------------

    /// Populate gradients of every `requires_grad` leaf reachable from the
    /// scalar `target`.
    pub fn backward(&mut self, target: ValueId) -> Result<()> {
        if self.shape(target).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward target must be scalar, got shape {}",
                self.shape(target)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[target.0] = Some(vec![T::ONE]);

        for r in (0..self.records.len()).rev() {
            let out_id = self.records[r].output;
            if !self.nodes[out_id.0].requires {
                continue;
            }
            let go = match self.grads[out_id.0].take() {
                Some(g) => g,
                None => continue, // not on a path to the target
            };
            self.step_backward(r, &go);
            // keep the target's own grad visible
            if out_id == target {
                self.grads[out_id.0] = Some(go);
            }
        }
        Ok(())
    }

    /// Take or create the grad accumulator of `id` (zeros if absent).
    fn take_grad(&mut self, id: ValueId) -> Vec<T> {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => vec![T::ZERO; self.nodes[id.0].shape.numel()],
        }
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires
    }

    fn step_backward(&mut self, rec: usize, go: &[T]) {
        // Pull grad buffers out of the arena first so kernels can borrow
        // node data immutably while writing grads. Duplicate input ids
        // (e.g. mul(x, x)) get a scratch buffer merged afterwards.
        let inputs = self.records[rec].inputs.clone();
        let out_id = self.records[rec].output;
        let mut bufs: Vec<Option<Vec<T>>> = Vec::with_capacity(inputs.len());
        let mut owners: Vec<Option<usize>> = Vec::with_capacity(inputs.len());
        for (i, &id) in inputs.iter().enumerate() {
            if !self.needs(id) {
                bufs.push(None);
                owners.push(None);
                continue;
            }
            if let Some(prev) = inputs[..i].iter().position(|&p| p == id) {
                bufs.push(Some(vec![T::ZERO; self.nodes[id.0].shape.numel()]));
                owners.push(Some(prev));
            } else {
                bufs.push(Some(self.take_grad(id)));
                owners.push(None);
            }
        }

        {
            let nodes = &self.nodes;
            let record = &self.records[rec];
            let data = |id: ValueId| -> &[T] { &nodes[id.0].data };
            let shape = |id: ValueId| -> Shape { nodes[id.0].shape };
            let out_data = data(out_id);
            // split mutable grad buffers
            let mut grads: Vec<Option<&mut [T]>> =
                bufs.iter_mut().map(|b| b.as_deref_mut()).collect();

            match &record.op {
                Op::Conv2d { stride, padding } => {
                    let (x, w, _b) = (inputs[0], inputs[1], inputs[2]);
                    let (g0, rest) = grads.split_at_mut(1);
                    let (g1, g2) = rest.split_at_mut(1);
                    conv::conv2d_backward(
                        data(x),
                        shape(x),
                        data(w),
                        shape(w),
                        *stride,
                        *padding,
                        go,
                        shape(out_id),
                        g0[0].as_deref_mut(),
                        g1[0].as_deref_mut(),
                        g2[0].as_deref_mut(),
                    );
                }
                Op::ConvTranspose2d => {
                    let (x, w) = (inputs[0], inputs[1]);
                    let (g0, rest) = grads.split_at_mut(1);
                    let (g1, g2) = rest.split_at_mut(1);
                    conv::conv_transpose2d_backward(
                        data(x),
                        shape(x),
                        data(w),
                        shape(w),
                        go,
                        shape(out_id),
                        g0[0].as_deref_mut(),
                        g1[0].as_deref_mut(),
                        g2[0].as_deref_mut(),
                    );
                }
                Op::AvgPool { k, s } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        pool::avg_pool2d_backward(shape(inputs[0]), *k, *s, go, shape(out_id), gx);
                    }
                }
                Op::MaxPool { argmax } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        for (i, &src) in argmax.iter().enumerate() {
                            gx[src] += go[i];
                        }
                    }
                }
                Op::GlobalAvgPool => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        pool::global_avg_pool_backward(shape(inputs[0]), go, gx);
                    }
                }
                Op::NearestUp { scale } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        pool::nearest_upsample_backward(shape(inputs[0]), *scale, go, gx);
                    }
                }
                Op::CropSpatial => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        pool::crop_spatial_backward(shape(inputs[0]), go, shape(out_id), gx);
                    }
                }
                Op::Linear => {
                    let (x, w) = (inputs[0], inputs[1]);
                    let (g0, rest) = grads.split_at_mut(1);
                    let (g1, g2) = rest.split_at_mut(1);
                    linear::linear_backward(
                        data(x),
                        shape(x),
                        data(w),
                        shape(w),
                        go,
                        g0[0].as_deref_mut(),
                        g1[0].as_deref_mut(),
                        g2[0].as_deref_mut(),
                    );
                }
                Op::Sigmoid => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        for i in 0..gx.len() {
                            let y = out_data[i];
                            gx[i] += go[i] * y * (T::ONE - y);
                        }
                    }
                }
                Op::Exp => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        for i in 0..gx.len() {
                            gx[i] += go[i] * out_data[i];
                        }
                    }
                }
                Op::LeakyRelu { slope } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        let a = T::from_f64(*slope);
                        let x = data(inputs[0]);
                        for i in 0..gx.len() {
                            gx[i] += go[i] * if x[i] >= T::ZERO { T::ONE } else { a };
                        }
                    }
                }
                Op::Add => {
                    for g in grads.iter_mut().flatten() {
                        for i in 0..g.len() {
                            g[i] += go[i];
                        }
                    }
                }
                Op::Mul => {
                    let (a, b) = (inputs[0], inputs[1]);
                    let (ga, gb) = grads.split_at_mut(1);
                    if let Some(g) = ga[0].as_deref_mut() {
                        let other = data(b);
                        for i in 0..g.len() {
                            g[i] += go[i] * other[i];
                        }
                    }
                    if let Some(g) = gb[0].as_deref_mut() {
                        let other = data(a);
                        for i in 0..g.len() {
                            g[i] += go[i] * other[i];
                        }
                    }
                }
                Op::Div => {
                    let (a, b) = (inputs[0], inputs[1]);
                    let (ga, gb) = grads.split_at_mut(1);
                    let bd = data(b);
                    if let Some(g) = ga[0].as_deref_mut() {
                        for i in 0..g.len() {
                            g[i] += go[i] / bd[i];
                        }
                    }
                    if let Some(g) = gb[0].as_deref_mut() {
                        let ad = data(a);
                        for i in 0..g.len() {
                            g[i] -= go[i] * ad[i] / (bd[i] * bd[i]);
                        }
                    }
                }
                Op::AddScalar => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        for i in 0..gx.len() {
                            gx[i] += go[i];
                        }
                    }
                }
                Op::ClampMin { c } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        let cv = T::from_f64(*c);
                        let x = data(inputs[0]);
                        for i in 0..gx.len() {
                            if x[i] >= cv {
                                gx[i] += go[i];
                            }
                        }
                    }
                }
                Op::MulScalar { c } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        let cv = T::from_f64(*c);
                        for i in 0..gx.len() {
                            gx[i] += go[i] * cv;
                        }
                    }
                }
                Op::ConcatChannels { c_first } => {
                    let os = shape(out_id);
                    let (ga, gb) = grads.split_at_mut(1);
                    pointwise::concat_channels_backward(
                        os,
                        *c_first,
                        go,
                        ga[0].as_deref_mut(),
                        gb[0].as_deref_mut(),
                    );
                }
                Op::SliceChannels { from } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        pointwise::slice_channels_backward(
                            shape(inputs[0]),
                            *from,
                            go,
                            shape(out_id),
                            gx,
                        );
                    }
                }
                Op::ScaleChannels => {
                    let (x, s) = (inputs[0], inputs[1]);
                    let (gx, gs) = grads.split_at_mut(1);
                    pointwise::scale_channels_backward(
                        data(x),
                        shape(x),
                        data(s),
                        go,
                        gx[0].as_deref_mut(),
                        gs[0].as_deref_mut(),
                    );
                }
                Op::InstanceNorm { invstd } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        norm::instance_norm_backward(out_data, shape(inputs[0]), invstd, go, gx);
                    }
                }
                Op::SumAll => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        for v in gx.iter_mut() {
                            *v += go[0];
                        }
                    }
                }
                Op::DeformConv { mask_one } => {
                    let (x, w, offs, mlog) = (inputs[0], inputs[1], inputs[3], inputs[4]);
                    let (g0, rest) = grads.split_at_mut(1);
                    let (g1, rest) = rest.split_at_mut(1);
                    let (g2, rest) = rest.split_at_mut(1);
                    let (g3, g4) = rest.split_at_mut(1);
                    deform::deform_conv_backward(
                        data(x),
                        shape(x),
                        data(w),
                        shape(w),
                        data(offs),
                        data(mlog),
                        *mask_one,
                        go,
                        shape(out_id),
                        g0[0].as_deref_mut(),
                        g1[0].as_deref_mut(),
                        g2[0].as_deref_mut(),
                        g3[0].as_deref_mut(),
                        g4[0].as_deref_mut(),
                    );
                }
                Op::CrossEntropy { labels, probs } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        loss::cross_entropy_backward(probs, shape(inputs[0]), labels, go[0], gx);
                    }
                }
                Op::SoftDice { labels, eps, probs } => {
                    if let Some(gx) = grads[0].as_deref_mut() {
                        loss::soft_dice_backward(probs, shape(inputs[0]), labels, *eps, go[0], gx);
                    }
                }
            }
        }

        // restore buffers, merging duplicates
        for i in (0..inputs.len()).rev() {
            if let Some(buf) = bufs[i].take() {
                match owners[i] {
                    Some(prev) => {
                        let dst = bufs[prev].as_mut().expect("owner buffer present");
                        for (d, s) in dst.iter_mut().zip(buf.iter()) {
                            *d += *s;
                        }
                    }
                    None => self.grads[inputs[i].0] = Some(buf),
                }
            }
        }
    }
}
