//! Cross-entropy and soft Dice losses on per-pixel class logits.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Shape};

pub fn validate_labels(ls: Shape, labels: &LabelMap) -> Result<()> {
    if labels.n != ls.n() || labels.h != ls.h() || labels.w != ls.w() {
        return Err(Error::shape(format!(
            "labels {}x{}x{} do not match logits {ls}",
            labels.n, labels.h, labels.w
        )));
    }
    labels.validate(ls.c())
}

/// Channel-wise softmax, stabilized by max subtraction. Probability layout
/// matches the logits layout.
pub fn softmax_channels<T: Scalar>(logits: &[T], ls: Shape) -> Vec<T> {
    let (n, k, h, w) = (ls.n(), ls.c(), ls.h(), ls.w());
    let plane = h * w;
    let mut probs = vec![T::ZERO; ls.numel()];
    for ni in 0..n {
        for p in 0..plane {
            let idx = |c: usize| (ni * k + c) * plane + p;
            let mut m = logits[idx(0)];
            for c in 1..k {
                m = m.max_s(logits[idx(c)]);
            }
            let mut z = T::ZERO;
            for c in 0..k {
                let e = (logits[idx(c)] - m).exp();
                probs[idx(c)] = e;
                z += e;
            }
            for c in 0..k {
                probs[idx(c)] /= z;
            }
        }
    }
    probs
}

pub fn cross_entropy_forward<T: Scalar>(logits: &[T], ls: Shape, labels: &LabelMap) -> (T, Vec<T>) {
    let (n, k, h, w) = (ls.n(), ls.c(), ls.h(), ls.w());
    let plane = h * w;
    let probs = softmax_channels(logits, ls);
    let mut acc = 0.0f64;
    for ni in 0..n {
        for p in 0..plane {
            let t = labels.labels[ni * plane + p];
            acc -= probs[(ni * k + t) * plane + p].to_f64().ln();
        }
    }
    (T::from_f64(acc / (n * plane) as f64), probs)
}

pub fn cross_entropy_backward<T: Scalar>(
    probs: &[T],
    ls: Shape,
    labels: &LabelMap,
    go: T,
    gx: &mut [T],
) {
    let (n, k, h, w) = (ls.n(), ls.c(), ls.h(), ls.w());
    let plane = h * w;
    let scale = go * T::from_f64(1.0 / (n * plane) as f64);
    for ni in 0..n {
        for p in 0..plane {
            let t = labels.labels[ni * plane + p];
            for c in 0..k {
                let idx = (ni * k + c) * plane + p;
                let delta = if c == t { T::ONE } else { T::ZERO };
                gx[idx] += scale * (probs[idx] - delta);
            }
        }
    }
}

/// Per-foreground-class sums used by both dice passes:
/// (2*sum(p*q) numerators are formed by the callers).
fn dice_sums<T: Scalar>(probs: &[T], ls: Shape, labels: &LabelMap) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, k, h, w) = (ls.n(), ls.c(), ls.h(), ls.w());
    let plane = h * w;
    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut qsum = vec![0.0f64; k];
    for ni in 0..n {
        for p in 0..plane {
            let t = labels.labels[ni * plane + p];
            for c in 1..k {
                let pv = probs[(ni * k + c) * plane + p].to_f64();
                psum[c] += pv;
                if t == c {
                    inter[c] += pv;
                    qsum[c] += 1.0;
                }
            }
        }
    }
    (inter, psum, qsum)
}

pub fn soft_dice_forward<T: Scalar>(
    logits: &[T],
    ls: Shape,
    labels: &LabelMap,
    eps: f64,
) -> (T, Vec<T>) {
    let k = ls.c();
    let probs = softmax_channels(logits, ls);
    let (inter, psum, qsum) = dice_sums(&probs, ls, labels);
    let mut dice = 0.0f64;
    for c in 1..k {
        dice += (2.0 * inter[c] + eps) / (psum[c] + qsum[c] + eps);
    }
    let loss = 1.0 - dice / (k - 1) as f64;
    (T::from_f64(loss), probs)
}

pub fn soft_dice_backward<T: Scalar>(
    probs: &[T],
    ls: Shape,
    labels: &LabelMap,
    eps: f64,
    go: T,
    gx: &mut [T],
) {
    let (n, k, h, w) = (ls.n(), ls.c(), ls.h(), ls.w());
    let plane = h * w;
    let (inter, psum, qsum) = dice_sums(probs, ls, labels);
    // dL/d dice_c coefficients
    let mut dnum = vec![0.0f64; k]; // coefficient of q term
    let mut dden = vec![0.0f64; k];
    let inv_fg = 1.0 / (k - 1) as f64;
    for c in 1..k {
        let den = psum[c] + qsum[c] + eps;
        // d/dp of (2I + eps)/den: (2*q_i * den - (2I + eps)) / den^2
        dnum[c] = -inv_fg * 2.0 / den;
        dden[c] = inv_fg * (2.0 * inter[c] + eps) / (den * den);
    }
    let mut dlp = vec![0.0f64; k];
    for ni in 0..n {
        for p in 0..plane {
            let t = labels.labels[ni * plane + p];
            // dL/dp_c at this pixel
            let mut dot = 0.0f64; // sum_c dL/dp_c * p_c (for softmax chain)
            dlp[0] = 0.0;
            for c in 1..k {
                let mut g = dden[c];
                if t == c {
                    g += dnum[c];
                }
                dlp[c] = g;
                dot += g * probs[(ni * k + c) * plane + p].to_f64();
            }
            for c in 0..k {
                let idx = (ni * k + c) * plane + p;
                let pv = probs[idx].to_f64();
                gx[idx] += go * T::from_f64(pv * (dlp[c] - dot));
            }
        }
    }
}
