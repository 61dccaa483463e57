//! Bilinear grid sampling and the modulated deformable convolution.
//!
//! Offsets displace each kernel tap's sampling location by a learned
//! fractional (dy, dx); each tap is additionally scaled by a sigmoid
//! modulation mask. Sampling outside the map contributes zero, matching the
//! zero-padding convention of the standard convolution this op degenerates
//! to at zero offsets.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Bilinear interpolation of one channel map at fractional (y, x).
/// Out-of-bounds neighbors contribute zero. `plane` is the [H, W] map.
#[inline]
pub fn bilinear_sample<T: Scalar>(plane: &[T], h: usize, w: usize, y: f64, x: f64) -> T {
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = T::from_f64(y - y0);
    let tx = T::from_f64(x - x0);
    let y0 = y0 as isize;
    let x0 = x0 as isize;
    let fetch = |yy: isize, xx: isize| -> T {
        if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
            T::ZERO
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1);
    let v10 = fetch(y0 + 1, x0);
    let v11 = fetch(y0 + 1, x0 + 1);
    let one = T::ONE;
    (one - ty) * ((one - tx) * v00 + tx * v01) + ty * ((one - tx) * v10 + tx * v11)
}

/// Value plus partial derivatives with respect to y and x. The derivative
/// at exact integer coordinates is the right-continuous sub-gradient
/// (floor-based cell choice).
#[inline]
fn bilinear_sample_with_grad<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    y: f64,
    x: f64,
) -> (T, T, T) {
    let y0f = y.floor();
    let x0f = x.floor();
    let ty = T::from_f64(y - y0f);
    let tx = T::from_f64(x - x0f);
    let y0 = y0f as isize;
    let x0 = x0f as isize;
    let fetch = |yy: isize, xx: isize| -> T {
        if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
            T::ZERO
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1);
    let v10 = fetch(y0 + 1, x0);
    let v11 = fetch(y0 + 1, x0 + 1);
    let one = T::ONE;
    let top = (one - tx) * v00 + tx * v01;
    let bot = (one - tx) * v10 + tx * v11;
    let val = (one - ty) * top + ty * bot;
    let dy = bot - top;
    let dx = (one - ty) * (v01 - v00) + ty * (v11 - v10);
    (val, dy, dx)
}

/// Scatter `g` into the four bilinear corners of (y, x).
#[inline]
fn bilinear_scatter<T: Scalar>(gplane: &mut [T], h: usize, w: usize, y: f64, x: f64, g: T) {
    let y0f = y.floor();
    let x0f = x.floor();
    let ty = T::from_f64(y - y0f);
    let tx = T::from_f64(x - x0f);
    let y0 = y0f as isize;
    let x0 = x0f as isize;
    let one = T::ONE;
    let mut put = |yy: isize, xx: isize, wgt: T| {
        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
            gplane[yy as usize * w + xx as usize] += g * wgt;
        }
    };
    put(y0, x0, (one - ty) * (one - tx));
    put(y0, x0 + 1, (one - ty) * tx);
    put(y0 + 1, x0, ty * (one - tx));
    put(y0 + 1, x0 + 1, ty * tx);
}

pub fn validate_deform_conv(shapes: [Shape; 5]) -> Result<()> {
    let [xs, ws, bs, offs, ms] = shapes;
    let k = ws.h();
    if k != ws.w() || k % 2 == 0 {
        return Err(Error::invalid(format!(
            "deformable conv kernel must be square and odd, got {}x{}",
            ws.h(),
            ws.w()
        )));
    }
    if ws.c() != xs.c() {
        return Err(Error::shape(format!(
            "deformable conv weight expects {} input channels but input has {}",
            ws.c(),
            xs.c()
        )));
    }
    if bs.numel() != ws.n() {
        return Err(Error::shape(format!(
            "deformable conv bias must have {} elements, got {}",
            ws.n(),
            bs.numel()
        )));
    }
    if offs.c() != 2 * k * k {
        return Err(Error::shape(format!(
            "offset field must have {} channels (2*K*K for K={k}), got {}",
            2 * k * k,
            offs.c()
        )));
    }
    if ms.c() != k * k {
        return Err(Error::shape(format!(
            "modulation field must have {} channels (K*K for K={k}), got {}",
            k * k,
            ms.c()
        )));
    }
    for s in [offs, ms] {
        if s.n() != xs.n() || s.h() != xs.h() || s.w() != xs.w() {
            return Err(Error::shape(format!(
                "offset/modulation extents {s} must match output extents {}x{}x{}",
                xs.n(),
                xs.h(),
                xs.w()
            )));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn deform_conv_forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    b: &[T],
    offsets: &[T],
    mask_logits: &[T],
    mask_one: bool,
) -> (Shape, Vec<T>) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (cout, k) = (ws.n(), ws.h());
    let pad = (k - 1) / 2;
    let kk = k * k;
    let plane = h * wd;
    let os = Shape::nchw(n, cout, h, wd);
    let mut out = vec![T::ZERO; os.numel()];
    let mut samples = vec![T::ZERO; cin * kk];
    for ni in 0..n {
        let xbase = xs.at(ni, 0, 0, 0);
        for oy in 0..h {
            for ox in 0..wd {
                let p = oy * wd + ox;
                // gather modulated samples for every (tap, channel)
                for tap in 0..kk {
                    let (kh, kw) = (tap / k, tap % k);
                    let dy = offsets[((ni * 2 * kk) + 2 * tap) * plane + p].to_f64();
                    let dx = offsets[((ni * 2 * kk) + 2 * tap + 1) * plane + p].to_f64();
                    let sy = oy as f64 + kh as f64 - pad as f64 + dy;
                    let sx = ox as f64 + kw as f64 - pad as f64 + dx;
                    let m = if mask_one {
                        T::ONE
                    } else {
                        let l = mask_logits[(ni * kk + tap) * plane + p];
                        T::ONE / (T::ONE + (-l).exp())
                    };
                    for ci in 0..cin {
                        let v = bilinear_sample(&x[xbase + ci * plane..xbase + (ci + 1) * plane], h, wd, sy, sx);
                        samples[ci * kk + tap] = m * v;
                    }
                }
                for co in 0..cout {
                    let mut acc = b[co];
                    let wrow = &w[co * cin * kk..(co + 1) * cin * kk];
                    for i in 0..cin * kk {
                        acc += wrow[i] * samples[i];
                    }
                    out[os.at(ni, co, oy, ox)] = acc;
                }
            }
        }
    }
    (os, out)
}

#[allow(clippy::too_many_arguments)]
pub fn deform_conv_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    offsets: &[T],
    mask_logits: &[T],
    mask_one: bool,
    go: &[T],
    os: Shape,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
    mut goff: Option<&mut [T]>,
    mut gmask: Option<&mut [T]>,
) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (cout, k) = (ws.n(), ws.h());
    let pad = (k - 1) / 2;
    let kk = k * k;
    let plane = h * wd;

    // per-(channel, tap) scratch: sampled value and its spatial derivatives
    let mut sval = vec![T::ZERO; cin * kk];
    let mut sdy = vec![T::ZERO; cin * kk];
    let mut sdx = vec![T::ZERO; cin * kk];
    let mut gsample = vec![T::ZERO; cin * kk];

    for ni in 0..n {
        let xbase = xs.at(ni, 0, 0, 0);
        for oy in 0..h {
            for ox in 0..wd {
                let p = oy * wd + ox;
                for tap in 0..kk {
                    let (kh, kw) = (tap / k, tap % k);
                    let dy = offsets[((ni * 2 * kk) + 2 * tap) * plane + p].to_f64();
                    let dx = offsets[((ni * 2 * kk) + 2 * tap + 1) * plane + p].to_f64();
                    let sy = oy as f64 + kh as f64 - pad as f64 + dy;
                    let sx = ox as f64 + kw as f64 - pad as f64 + dx;
                    for ci in 0..cin {
                        let (v, gy, gxv) = bilinear_sample_with_grad(
                            &x[xbase + ci * plane..xbase + (ci + 1) * plane],
                            h,
                            wd,
                            sy,
                            sx,
                        );
                        sval[ci * kk + tap] = v;
                        sdy[ci * kk + tap] = gy;
                        sdx[ci * kk + tap] = gxv;
                    }
                }
                // gsample[ci,tap] = sum_co go * w  (gradient into the
                // modulated-sample vector)
                for v in gsample.iter_mut() {
                    *v = T::ZERO;
                }
                for co in 0..cout {
                    let g = go[os.at(ni, co, oy, ox)];
                    if let Some(gb) = gb.as_deref_mut() {
                        gb[co] += g;
                    }
                    let wrow = &w[co * cin * kk..(co + 1) * cin * kk];
                    for i in 0..cin * kk {
                        gsample[i] += g * wrow[i];
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        // d out / d w = m * sample; sval holds the raw sample,
                        // modulation applied below per tap
                        let gwrow = &mut gw[co * cin * kk..(co + 1) * cin * kk];
                        for tap in 0..kk {
                            let m = if mask_one {
                                T::ONE
                            } else {
                                let l = mask_logits[(ni * kk + tap) * plane + p];
                                T::ONE / (T::ONE + (-l).exp())
                            };
                            for ci in 0..cin {
                                gwrow[ci * kk + tap] += g * m * sval[ci * kk + tap];
                            }
                        }
                    }
                }
                for tap in 0..kk {
                    let (kh, kw) = (tap / k, tap % k);
                    let dy = offsets[((ni * 2 * kk) + 2 * tap) * plane + p].to_f64();
                    let dx = offsets[((ni * 2 * kk) + 2 * tap + 1) * plane + p].to_f64();
                    let sy = oy as f64 + kh as f64 - pad as f64 + dy;
                    let sx = ox as f64 + kw as f64 - pad as f64 + dx;
                    let m = if mask_one {
                        T::ONE
                    } else {
                        let l = mask_logits[(ni * kk + tap) * plane + p];
                        T::ONE / (T::ONE + (-l).exp())
                    };
                    let mut acc_dy = T::ZERO;
                    let mut acc_dx = T::ZERO;
                    let mut acc_m = T::ZERO;
                    for ci in 0..cin {
                        let gs = gsample[ci * kk + tap];
                        acc_dy += gs * sdy[ci * kk + tap];
                        acc_dx += gs * sdx[ci * kk + tap];
                        acc_m += gs * sval[ci * kk + tap];
                        if let Some(gx) = gx.as_deref_mut() {
                            bilinear_scatter(
                                &mut gx[xbase + ci * plane..xbase + (ci + 1) * plane],
                                h,
                                wd,
                                sy,
                                sx,
                                gs * m,
                            );
                        }
                    }
                    if let Some(goff) = goff.as_deref_mut() {
                        goff[((ni * 2 * kk) + 2 * tap) * plane + p] += m * acc_dy;
                        goff[((ni * 2 * kk) + 2 * tap + 1) * plane + p] += m * acc_dx;
                    }
                    if !mask_one {
                        if let Some(gmask) = gmask.as_deref_mut() {
                            gmask[(ni * kk + tap) * plane + p] += acc_m * m * (T::ONE - m);
                        }
                    }
                }
            }
        }
    }
}
