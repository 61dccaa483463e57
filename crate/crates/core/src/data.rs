//! Synthetic segmentation benchmark: randomly deformed blobs (polar shapes
//! with sinusoidal boundary perturbation) rasterized onto a label map and
//! rendered as per-class intensity plus Gaussian noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Shape, Tensor};

/// One synthetic sample: image in [0, 1], integer label map, class count.
#[derive(Debug, Clone)]
pub struct SegSample<T: Scalar> {
    /// [1, 1, H, W]
    pub image: Tensor<T>,
    /// [1, H, W]
    pub labels: LabelMap,
    pub num_classes: usize,
    pub seed: u64,
}

pub const NOISE_SIGMA: f64 = 0.05;
/// Intensity span occupied by the class ramp. Classes sit evenly spaced in
/// [INTENSITY_LO, INTENSITY_HI]; the spacing relative to NOISE_SIGMA sets
/// task difficulty.
pub const INTENSITY_LO: f64 = 0.15;
pub const INTENSITY_HI: f64 = 0.85;

struct Blob {
    cy: f64,
    cx: f64,
    r0: f64,
    ecc: f64,
    amps: [f64; 3],
    phases: [f64; 3],
}

impl Blob {
    fn radius(&self, theta: f64) -> f64 {
        let mut r = 1.0;
        for j in 0..3 {
            r += self.amps[j] * ((j as f64 + 1.0) * theta + self.phases[j]).sin();
        }
        self.r0 * r
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = y - self.cy;
        let dx = (x - self.cx) / self.ecc;
        let rho = (dy * dy + dx * dx).sqrt();
        let theta = dy.atan2(dx);
        rho <= self.radius(theta)
    }
}

/// Deterministic per seed. Places one deformed blob per foreground class
/// (centers kept apart so no class is fully overwritten), rasterizes labels
/// in class order, and renders intensities with Gaussian noise.
pub fn generate_synthetic_sample<T: Scalar>(
    seed: u64,
    h: usize,
    w: usize,
    num_classes: usize,
) -> Result<SegSample<T>> {
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!(
            "degenerate extents {h}x{w}; need at least 8x8"
        )));
    }
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = h.min(w) as f64;
    let min_dist = 0.26 * side;
    let mut blobs: Vec<Blob> = Vec::new();
    for _ in 1..num_classes {
        let r0 = rng.gen_range(0.09..0.16) * side;
        let margin = 1.5 * r0;
        let mut best = None;
        for _try in 0..60 {
            let cy = rng.gen_range(margin..h as f64 - margin);
            let cx = rng.gen_range(margin..w as f64 - margin);
            let ok = blobs
                .iter()
                .all(|b| ((b.cy - cy).powi(2) + (b.cx - cx).powi(2)).sqrt() >= min_dist);
            best = Some((cy, cx));
            if ok {
                break;
            }
        }
        let (cy, cx) = best.expect("at least one placement try");
        let mut amps = [0.0; 3];
        let mut phases = [0.0; 3];
        for j in 0..3 {
            amps[j] = rng.gen_range(0.0..0.30 / (j as f64 + 1.0));
            phases[j] = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        let ecc = rng.gen_range(0.75..1.35);
        blobs.push(Blob {
            cy,
            cx,
            r0,
            ecc,
            amps,
            phases,
        });
    }

    let mut labels = vec![0usize; h * w];
    for (ci, blob) in blobs.iter().enumerate() {
        let class = ci + 1;
        for y in 0..h {
            for x in 0..w {
                if blob.contains(y as f64, x as f64) {
                    labels[y * w + x] = class;
                }
            }
        }
    }

    let step = (INTENSITY_HI - INTENSITY_LO) / (num_classes - 1) as f64;
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut image = vec![T::ZERO; h * w];
    for i in 0..h * w {
        let base = INTENSITY_LO + step * labels[i] as f64;
        let v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
        image[i] = T::from_f64(v);
    }

    Ok(SegSample {
        image: Tensor::new(Shape::nchw(1, 1, h, w), image)?,
        labels: LabelMap::new(1, h, w, labels)?,
        num_classes,
        seed,
    })
}

/// Deterministic dataset: sample seeds are derived from the base seed.
pub fn generate_dataset<T: Scalar>(
    base_seed: u64,
    count: usize,
    h: usize,
    w: usize,
    num_classes: usize,
) -> Result<Vec<SegSample<T>>> {
    (0..count)
        .map(|i| generate_synthetic_sample(base_seed.wrapping_add(i as u64), h, w, num_classes))
        .collect()
}

/// Stack samples into one batch tensor + label map.
pub fn batch<T: Scalar>(samples: &[&SegSample<T>]) -> Result<(Tensor<T>, LabelMap)> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (h, w) = (samples[0].labels.h, samples[0].labels.w);
    let n = samples.len();
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n * h * w);
    for s in samples {
        if s.labels.h != h || s.labels.w != w {
            return Err(Error::shape("batch samples must share extents".to_string()));
        }
        data.extend_from_slice(&s.image.data);
        labels.extend_from_slice(&s.labels.labels);
    }
    Ok((
        Tensor::new(Shape::nchw(n, 1, h, w), data)?,
        LabelMap::new(n, h, w, labels)?,
    ))
}
