//! Config-driven assembly of the six encoder-decoder variants on a shared
//! skeleton: per-level encoder blocks, a downsampling step between levels,
//! a bottleneck block, and a decoder that upsamples, concatenates the skip
//! and applies another block, ending in a 1x1 class head.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{conv_in_lrelu, Binder, ConvParams, DccLayer, DcdLayer, DcuLayer};
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

pub const VARIANT_NAMES: [&str; 6] = [
    "unet",
    "sconv_unet",
    "dcc_unet",
    "dcd_unet",
    "dcu_unet",
    "dynamic_unet",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unet,
    SconvUnet,
    DccUnet,
    DcdUnet,
    DcuUnet,
    DynamicUnet,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::Unet),
            "sconv_unet" => Ok(Variant::SconvUnet),
            "dcc_unet" => Ok(Variant::DccUnet),
            "dcd_unet" => Ok(Variant::DcdUnet),
            "dcu_unet" => Ok(Variant::DcuUnet),
            "dynamic_unet" => Ok(Variant::DynamicUnet),
            other => Err(Error::Config(format!(
                "unknown variant '{other}'; valid names: {}",
                VARIANT_NAMES.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Unet => "unet",
            Variant::SconvUnet => "sconv_unet",
            Variant::DccUnet => "dcc_unet",
            Variant::DcdUnet => "dcd_unet",
            Variant::DcuUnet => "dcu_unet",
            Variant::DynamicUnet => "dynamic_unet",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Feature widths per resolution level; the last entry is the
    /// bottleneck width. Reference plan: [32, 64, 128, 256, 512, 512].
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl ArchitectureConfig {
    pub fn new(variant: Variant, num_classes: usize, channels: Vec<usize>) -> Self {
        ArchitectureConfig {
            variant,
            in_channels: 1,
            num_classes,
            channels,
            leaky_slope: 0.01,
        }
    }

    /// The full-scale channel plan.
    pub fn full_plan() -> Vec<usize> {
        vec![32, 64, 128, 256, 512, 512]
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Input extents must divide by this.
    pub fn required_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config(format!(
                "channel plan must be non-empty with positive entries, got {:?}",
                self.channels
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Component choices behind a variant; exposed so tests can assemble
/// off-matrix combinations (e.g. an avg-pool U-Net).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub block: BlockKind,
    pub down: DownKind,
    pub up: UpKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    DoubleConv,
    Dcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownKind {
    MaxPool,
    AvgPool,
    StridedConv,
    Dcd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpKind {
    TransposedConv,
    Dcu,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Unet,
        Variant::SconvUnet,
        Variant::DccUnet,
        Variant::DcdUnet,
        Variant::DcuUnet,
        Variant::DynamicUnet,
    ];

    pub fn components(self) -> Components {
        let (block, down, up) = match self {
            Variant::Unet => (BlockKind::DoubleConv, DownKind::MaxPool, UpKind::TransposedConv),
            Variant::SconvUnet => (
                BlockKind::DoubleConv,
                DownKind::StridedConv,
                UpKind::TransposedConv,
            ),
            Variant::DccUnet => (BlockKind::Dcc, DownKind::MaxPool, UpKind::TransposedConv),
            Variant::DcdUnet => (BlockKind::DoubleConv, DownKind::Dcd, UpKind::TransposedConv),
            Variant::DcuUnet => (BlockKind::DoubleConv, DownKind::MaxPool, UpKind::Dcu),
            Variant::DynamicUnet => (BlockKind::Dcc, DownKind::Dcd, UpKind::Dcu),
        };
        Components { block, down, up }
    }
}

// ---------------------------------------------------------------------------
// layer storage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DoubleConv<T: Scalar> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub slope: f64,
}

impl<T: Scalar> DoubleConv<T> {
    fn new<R: Rng>(cin: usize, cout: usize, slope: f64, rng: &mut R) -> Self {
        DoubleConv {
            conv1: ConvParams::he_init(cout, cin, 3, rng),
            conv2: ConvParams::he_init(cout, cout, 3, rng),
            slope,
        }
    }

    fn forward(&self, binder: &mut Binder<'_, T>, prefix: &str, x: ValueId) -> Result<ValueId> {
        let y = conv_in_lrelu(binder, &format!("{prefix}.conv1"), &self.conv1, x, 1, self.slope)?;
        conv_in_lrelu(binder, &format!("{prefix}.conv2"), &self.conv2, y, 1, self.slope)
    }
}

#[derive(Debug, Clone)]
pub enum Block<T: Scalar> {
    Double(DoubleConv<T>),
    Dcc(DccLayer<T>),
}

impl<T: Scalar> Block<T> {
    fn forward(&self, binder: &mut Binder<'_, T>, prefix: &str, x: ValueId) -> Result<ValueId> {
        match self {
            Block::Double(b) => b.forward(binder, prefix, x),
            Block::Dcc(b) => b.forward(binder, prefix, x),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Down<T: Scalar> {
    MaxPool,
    AvgPool,
    Sconv { conv: ConvParams<T>, slope: f64 },
    Dcd(DcdLayer<T>),
}

#[derive(Debug, Clone)]
pub enum Up<T: Scalar> {
    Plain(ConvParams<T>),
    Dcu(DcuLayer<T>),
}

#[derive(Debug, Clone)]
pub struct NetworkState<T: Scalar> {
    pub config: ArchitectureConfig,
    pub seed: u64,
    pub step: u64,
    pub enc_blocks: Vec<Block<T>>,
    pub downs: Vec<Down<T>>,
    pub bottleneck: Block<T>,
    pub ups: Vec<Up<T>>,
    pub dec_blocks: Vec<Block<T>>,
    pub head: ConvParams<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        Self::build_with(config, seed, config.variant.components())
    }

    pub fn build_with(
        config: &ArchitectureConfig,
        seed: u64,
        comps: Components,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &config.channels;
        let levels = ch.len();
        let slope = config.leaky_slope;

        let make_block = |cin: usize, cout: usize, rng: &mut ChaCha8Rng| match comps.block {
            BlockKind::DoubleConv => Block::Double(DoubleConv::new(cin, cout, slope, rng)),
            BlockKind::Dcc => Block::Dcc(DccLayer::new(cin, cout, slope, rng)),
        };

        let mut enc_blocks = Vec::new();
        let mut downs = Vec::new();
        let mut prev = config.in_channels;
        for &c in ch.iter().take(levels - 1) {
            enc_blocks.push(make_block(prev, c, &mut rng));
            downs.push(match comps.down {
                DownKind::MaxPool => Down::MaxPool,
                DownKind::AvgPool => Down::AvgPool,
                DownKind::StridedConv => Down::Sconv {
                    conv: ConvParams::he_init(c, c, 3, &mut rng),
                    slope,
                },
                DownKind::Dcd => Down::Dcd(DcdLayer::new(c, &mut rng)),
            });
            prev = c;
        }
        let bottleneck = make_block(prev, ch[levels - 1], &mut rng);

        let mut ups = Vec::new();
        let mut dec_blocks = Vec::new();
        for i in (0..levels - 1).rev() {
            let cin = if i == levels - 2 { ch[levels - 1] } else { ch[i + 1] };
            let cout = ch[i];
            ups.push(match comps.up {
                UpKind::TransposedConv => {
                    Up::Plain(ConvParams::he_init_transpose(cin, cout, &mut rng))
                }
                UpKind::Dcu => Up::Dcu(DcuLayer::new(cin, cout, slope, &mut rng)),
            });
            dec_blocks.push(make_block(2 * cout, cout, &mut rng));
        }

        let head = ConvParams::he_init(config.num_classes, ch[0], 1, &mut rng);

        Ok(NetworkState {
            config: config.clone(),
            seed,
            step: 0,
            enc_blocks,
            downs,
            bottleneck,
            ups,
            dec_blocks,
            head,
        })
    }

    /// Forward on an existing tape; returns the logits value and the
    /// (name, leaf) bindings of every parameter used.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        x: ValueId,
    ) -> Result<(ValueId, Vec<(String, ValueId)>)> {
        let xs = tape.shape(x);
        let mult = self.config.required_multiple();
        if xs.c() != self.config.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                xs.c()
            )));
        }
        if xs.h() % mult != 0 || xs.w() % mult != 0 {
            return Err(Error::shape(format!(
                "input extents {}x{} must be divisible by {mult} for {} levels",
                xs.h(),
                xs.w(),
                self.config.levels()
            )));
        }
        let mut binder = Binder::new(tape);
        let levels = self.config.levels();
        let mut skips: Vec<ValueId> = Vec::new();
        let mut cur = x;
        for i in 0..levels - 1 {
            cur = self.enc_blocks[i].forward(&mut binder, &format!("enc{i}"), cur)?;
            skips.push(cur);
            cur = match &self.downs[i] {
                Down::MaxPool => binder.tape.max_pool2d(cur, 2, 2)?,
                Down::AvgPool => binder.tape.avg_pool2d(cur, 2, 2)?,
                Down::Sconv { conv, slope } => {
                    conv_in_lrelu(&mut binder, &format!("down{i}.sconv"), conv, cur, 2, *slope)?
                }
                Down::Dcd(layer) => layer.forward(&mut binder, &format!("down{i}.dcd"), cur)?,
            };
        }
        cur = self
            .bottleneck
            .forward(&mut binder, &format!("enc{}", levels - 1), cur)?;

        for (d, i) in (0..levels - 1).rev().enumerate() {
            let skip = skips[i];
            let fused = match &self.ups[d] {
                Up::Plain(p) => {
                    let (uw, ub) = binder.conv(&format!("dec{i}.up"), p);
                    let up = binder.tape.conv_transpose2d(cur, uw, ub)?;
                    binder.tape.concat_channels(up, skip)?
                }
                Up::Dcu(layer) => {
                    let aligned = layer.forward(&mut binder, &format!("dec{i}.dcu"), cur, skip)?;
                    binder.tape.concat_channels(aligned, skip)?
                }
            };
            cur = self.dec_blocks[d].forward(&mut binder, &format!("dec{i}.block"), fused)?;
        }

        let (hw, hb) = binder.conv("head", &self.head);
        let logits = binder.tape.conv2d(cur, hw, hb, 1, 0)?;
        Ok((logits, binder.binds))
    }

    /// Inference convenience: fresh tape, no gradients.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let (logits, _) = self.forward_on_tape(&mut tape, xid)?;
        Ok(tape.value(logits))
    }

    /// Visit every parameter tensor in a fixed order matching the forward
    /// binding names.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        let levels = self.config.levels();
        let visit_conv = |name: String, p: &'a ConvParams<T>, f: &mut dyn FnMut(String, &'a Tensor<T>)| {
            f(format!("{name}.w"), &p.weight);
            f(format!("{name}.b"), &p.bias);
        };
        let visit_block = |prefix: String, b: &'a Block<T>, f: &mut dyn FnMut(String, &'a Tensor<T>)| match b {
            Block::Double(d) => {
                visit_conv(format!("{prefix}.conv1"), &d.conv1, f);
                visit_conv(format!("{prefix}.conv2"), &d.conv2, f);
            }
            Block::Dcc(d) => {
                visit_conv(format!("{prefix}.pixel"), &d.conv_pixel, f);
                visit_conv(format!("{prefix}.region"), &d.conv_region, f);
                visit_conv(format!("{prefix}.local"), &d.conv_local, f);
                visit_conv(format!("{prefix}.second"), &d.conv_second, f);
                visit_conv(format!("{prefix}.channel"), &d.linear, f);
            }
        };
        for i in 0..levels - 1 {
            visit_block(format!("enc{i}"), &self.enc_blocks[i], f);
            match &self.downs[i] {
                Down::MaxPool | Down::AvgPool => {}
                Down::Sconv { conv, .. } => visit_conv(format!("down{i}.sconv"), conv, f),
                Down::Dcd(l) => {
                    visit_conv(format!("down{i}.dcd.offset"), &l.conv_offset, f);
                    visit_conv(format!("down{i}.dcd.deform"), &l.deform, f);
                }
            }
        }
        visit_block(format!("enc{}", levels - 1), &self.bottleneck, f);
        for (d, i) in (0..levels - 1).rev().enumerate() {
            match &self.ups[d] {
                Up::Plain(p) => visit_conv(format!("dec{i}.up"), p, f),
                Up::Dcu(l) => {
                    visit_conv(format!("dec{i}.dcu.up"), &l.up, f);
                    visit_conv(format!("dec{i}.dcu.offset"), &l.conv_offset, f);
                    visit_conv(format!("dec{i}.dcu.deform"), &l.deform, f);
                }
            }
            visit_block(format!("dec{i}.block"), &self.dec_blocks[d], f);
        }
        visit_conv("head".to_string(), &self.head, f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        let levels = self.config.levels();
        let visit_conv = |name: String, p: &mut ConvParams<T>, f: &mut dyn FnMut(String, &mut Tensor<T>)| {
            f(format!("{name}.w"), &mut p.weight);
            f(format!("{name}.b"), &mut p.bias);
        };
        let visit_block = |prefix: String, b: &mut Block<T>, f: &mut dyn FnMut(String, &mut Tensor<T>)| match b {
            Block::Double(d) => {
                visit_conv(format!("{prefix}.conv1"), &mut d.conv1, f);
                visit_conv(format!("{prefix}.conv2"), &mut d.conv2, f);
            }
            Block::Dcc(d) => {
                visit_conv(format!("{prefix}.pixel"), &mut d.conv_pixel, f);
                visit_conv(format!("{prefix}.region"), &mut d.conv_region, f);
                visit_conv(format!("{prefix}.local"), &mut d.conv_local, f);
                visit_conv(format!("{prefix}.second"), &mut d.conv_second, f);
                visit_conv(format!("{prefix}.channel"), &mut d.linear, f);
            }
        };
        for i in 0..levels - 1 {
            visit_block(format!("enc{i}"), &mut self.enc_blocks[i], f);
            match &mut self.downs[i] {
                Down::MaxPool | Down::AvgPool => {}
                Down::Sconv { conv, .. } => visit_conv(format!("down{i}.sconv"), conv, f),
                Down::Dcd(l) => {
                    visit_conv(format!("down{i}.dcd.offset"), &mut l.conv_offset, f);
                    visit_conv(format!("down{i}.dcd.deform"), &mut l.deform, f);
                }
            }
        }
        visit_block(format!("enc{}", levels - 1), &mut self.bottleneck, f);
        for (d, i) in (0..levels - 1).rev().enumerate() {
            match &mut self.ups[d] {
                Up::Plain(p) => visit_conv(format!("dec{i}.up"), p, f),
                Up::Dcu(l) => {
                    visit_conv(format!("dec{i}.dcu.up"), &mut l.up, f);
                    visit_conv(format!("dec{i}.dcu.offset"), &mut l.conv_offset, f);
                    visit_conv(format!("dec{i}.dcu.deform"), &mut l.deform, f);
                }
            }
            visit_block(format!("dec{i}.block"), &mut self.dec_blocks[d], f);
        }
        visit_conv("head".to_string(), &mut self.head, f);
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Force the modulation mask of every deformable layer to 1 (test hook).
    pub fn set_mask_one(&mut self, flag: bool) {
        for d in &mut self.downs {
            if let Down::Dcd(l) = d {
                l.mask_one = flag;
            }
        }
        for u in &mut self.ups {
            if let Up::Dcu(l) = u {
                l.mask_one = flag;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkState<U> {
        let mut other: NetworkState<U> =
            NetworkState::build_with(&self.config, self.seed, self.config.variant.components())
                .expect("config validated at build time");
        other.step = self.step;
        let src = self.named_params();
        let mut idx = 0usize;
        other.visit_params_mut(&mut |name, t| {
            let (sname, stensor) = &src[idx];
            assert_eq!(&name, sname, "parameter order mismatch during cast");
            *t = stensor.cast();
            idx += 1;
        });
        other
    }

    pub fn precision(&self) -> Precision {
        match T::DTYPE_TAG {
            0 => Precision::F32,
            _ => Precision::F64,
        }
    }
}

/// Logit map -> per-pixel argmax label map.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> crate::tensor::LabelMap {
    let s = logits.shape;
    let (n, k, h, w) = (s.n(), s.c(), s.h(), s.w());
    let plane = h * w;
    let mut labels = vec![0usize; n * plane];
    for ni in 0..n {
        for p in 0..plane {
            let mut best = logits.data[(ni * k) * plane + p];
            let mut arg = 0usize;
            for c in 1..k {
                let v = logits.data[(ni * k + c) * plane + p];
                if v > best {
                    best = v;
                    arg = c;
                }
            }
            labels[ni * plane + p] = arg;
        }
    }
    crate::tensor::LabelMap {
        n,
        h,
        w,
        labels,
    }
}
