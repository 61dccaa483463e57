//! Standard cross-correlation and the stride-2 kernel-2 transposed
//! convolution used by the decoder.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub fn conv2d_out_extent(h: usize, k: usize, stride: usize, padding: usize) -> usize {
    (h + 2 * padding - k) / stride + 1
}

pub fn validate_conv2d(xs: Shape, ws: Shape, bs: Shape, stride: usize, padding: usize) -> Result<()> {
    let k = ws.h();
    if k != ws.w() || k % 2 == 0 {
        return Err(Error::invalid(format!(
            "conv2d kernel must be square and odd, got {}x{}",
            ws.h(),
            ws.w()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    if ws.c() != xs.c() {
        return Err(Error::shape(format!(
            "conv2d weight expects {} input channels but input has {} (input {xs}, weight {ws})",
            ws.c(),
            xs.c()
        )));
    }
    if bs.numel() != ws.n() {
        return Err(Error::shape(format!(
            "conv2d bias must have {} elements, got {}",
            ws.n(),
            bs.numel()
        )));
    }
    if xs.h() + 2 * padding < k || xs.w() + 2 * padding < k {
        return Err(Error::shape(format!(
            "conv2d input {xs} too small for kernel {k} with padding {padding}"
        )));
    }
    Ok(())
}

pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    b: &[T],
    stride: usize,
    padding: usize,
) -> (Shape, Vec<T>) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (cout, k) = (ws.n(), ws.h());
    let oh = conv2d_out_extent(h, k, stride, padding);
    let ow = conv2d_out_extent(wd, k, stride, padding);
    let os = Shape::nchw(n, cout, oh, ow);
    let mut out = vec![T::ZERO; os.numel()];

    for ni in 0..n {
        for co in 0..cout {
            let bias = b[co];
            for v in &mut out[os.at(ni, co, 0, 0)..os.at(ni, co, 0, 0) + oh * ow] {
                *v = bias;
            }
            for ci in 0..cin {
                for kh in 0..k {
                    for kw in 0..k {
                        let wt = w[ws.at(co, ci, kh, kw)];
                        if wt == T::ZERO {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + kh) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xs.at(ni, ci, iy as usize, 0);
                            let orow = os.at(ni, co, oy, 0);
                            for ox in 0..ow {
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                out[orow + ox] += wt * x[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (os, out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    stride: usize,
    padding: usize,
    go: &[T],
    os: Shape,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (cout, k) = (ws.n(), ws.h());
    let (oh, ow) = (os.h(), os.w());

    if let Some(gb) = gb {
        for ni in 0..n {
            for co in 0..cout {
                let base = os.at(ni, co, 0, 0);
                let mut acc = T::ZERO;
                for i in 0..oh * ow {
                    acc += go[base + i];
                }
                gb[co] += acc;
            }
        }
    }

    for ni in 0..n {
        for co in 0..cout {
            for ci in 0..cin {
                for kh in 0..k {
                    for kw in 0..k {
                        let wt = w[ws.at(co, ci, kh, kw)];
                        let mut wacc = T::ZERO;
                        for oy in 0..oh {
                            let iy = (oy * stride + kh) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xs.at(ni, ci, iy as usize, 0);
                            let orow = os.at(ni, co, oy, 0);
                            for ox in 0..ow {
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let g = go[orow + ox];
                                wacc += g * x[xrow + ix as usize];
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[xrow + ix as usize] += g * wt;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[ws.at(co, ci, kh, kw)] += wacc;
                        }
                    }
                }
            }
        }
    }
}

pub fn validate_conv_transpose2d(xs: Shape, ws: Shape, bs: Shape) -> Result<()> {
    if ws.h() != 2 || ws.w() != 2 {
        return Err(Error::invalid(format!(
            "conv_transpose2d supports kernel 2 / stride 2 only, got kernel {}x{}",
            ws.h(),
            ws.w()
        )));
    }
    if ws.n() != xs.c() {
        return Err(Error::shape(format!(
            "conv_transpose2d weight expects {} input channels but input has {} (input {xs}, weight {ws})",
            ws.n(),
            xs.c()
        )));
    }
    if bs.numel() != ws.c() {
        return Err(Error::shape(format!(
            "conv_transpose2d bias must have {} elements, got {}",
            ws.c(),
            bs.numel()
        )));
    }
    Ok(())
}

/// Weight layout [Cin, Cout, 2, 2]; output extents double the input's. This
/// is the exact adjoint of a stride-2 kernel-2 `conv2d` (plus bias).
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    b: &[T],
) -> (Shape, Vec<T>) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let cout = ws.c();
    let os = Shape::nchw(n, cout, 2 * h, 2 * wd);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for co in 0..cout {
            let bias = b[co];
            let base = os.at(ni, co, 0, 0);
            for v in &mut out[base..base + 4 * h * wd] {
                *v = bias;
            }
            for ci in 0..cin {
                for kh in 0..2 {
                    for kw in 0..2 {
                        let wt = w[ws.at(ci, co, kh, kw)];
                        if wt == T::ZERO {
                            continue;
                        }
                        for iy in 0..h {
                            let xrow = xs.at(ni, ci, iy, 0);
                            let orow = os.at(ni, co, 2 * iy + kh, kw);
                            for ix in 0..wd {
                                out[orow + 2 * ix] += wt * x[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    (os, out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    go: &[T],
    os: Shape,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (n, cin, h, wd) = (xs.n(), xs.c(), xs.h(), xs.w());
    let cout = ws.c();
    if let Some(gb) = gb {
        for ni in 0..n {
            for co in 0..cout {
                let base = os.at(ni, co, 0, 0);
                let mut acc = T::ZERO;
                for i in 0..4 * h * wd {
                    acc += go[base + i];
                }
                gb[co] += acc;
            }
        }
    }
    for ni in 0..n {
        for co in 0..cout {
            for ci in 0..cin {
                for kh in 0..2 {
                    for kw in 0..2 {
                        let wt = w[ws.at(ci, co, kh, kw)];
                        let mut wacc = T::ZERO;
                        for iy in 0..h {
                            let xrow = xs.at(ni, ci, iy, 0);
                            let orow = os.at(ni, co, 2 * iy + kh, kw);
                            for ix in 0..wd {
                                let g = go[orow + 2 * ix];
                                wacc += g * x[xrow + ix];
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[xrow + ix] += g * wt;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[ws.at(ci, co, kh, kw)] += wacc;
                        }
                    }
                }
            }
        }
    }
}
