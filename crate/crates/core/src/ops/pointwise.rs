use crate::scalar::Scalar;
use crate::tensor::Shape;

pub fn map<T: Scalar>(x: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    x.iter().map(|&v| f(v)).collect()
}

pub fn zip<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

pub fn concat_channels<T: Scalar>(a: &[T], sa: Shape, b: &[T], sb: Shape) -> (Shape, Vec<T>) {
    let (n, h, w) = (sa.n(), sa.h(), sa.w());
    let (ca, cb) = (sa.c(), sb.c());
    let os = Shape::nchw(n, ca + cb, h, w);
    let mut out = vec![T::ZERO; os.numel()];
    let plane = h * w;
    for ni in 0..n {
        let dst = os.at(ni, 0, 0, 0);
        let asrc = sa.at(ni, 0, 0, 0);
        out[dst..dst + ca * plane].copy_from_slice(&a[asrc..asrc + ca * plane]);
        let dst = os.at(ni, ca, 0, 0);
        let bsrc = sb.at(ni, 0, 0, 0);
        out[dst..dst + cb * plane].copy_from_slice(&b[bsrc..bsrc + cb * plane]);
    }
    (os, out)
}

pub fn concat_channels_backward<T: Scalar>(
    os: Shape,
    c_first: usize,
    go: &[T],
    ga: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (n, c, h, w) = (os.n(), os.c(), os.h(), os.w());
    let plane = h * w;
    let (ca, cb) = (c_first, c - c_first);
    if let Some(ga) = ga {
        for ni in 0..n {
            let src = os.at(ni, 0, 0, 0);
            let dst = ni * ca * plane;
            for i in 0..ca * plane {
                ga[dst + i] += go[src + i];
            }
        }
    }
    if let Some(gb) = gb {
        for ni in 0..n {
            let src = os.at(ni, ca, 0, 0);
            let dst = ni * cb * plane;
            for i in 0..cb * plane {
                gb[dst + i] += go[src + i];
            }
        }
    }
}

pub fn slice_channels<T: Scalar>(x: &[T], xs: Shape, from: usize, to: usize) -> (Shape, Vec<T>) {
    let (n, h, w) = (xs.n(), xs.h(), xs.w());
    let os = Shape::nchw(n, to - from, h, w);
    let plane = h * w;
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        let src = xs.at(ni, from, 0, 0);
        let dst = os.at(ni, 0, 0, 0);
        out[dst..dst + (to - from) * plane].copy_from_slice(&x[src..src + (to - from) * plane]);
    }
    (os, out)
}

pub fn slice_channels_backward<T: Scalar>(
    xs: Shape,
    from: usize,
    go: &[T],
    os: Shape,
    gx: &mut [T],
) {
    let (n, h, w) = (xs.n(), xs.h(), xs.w());
    let plane = h * w;
    let cs = os.c();
    for ni in 0..n {
        let dst = xs.at(ni, from, 0, 0);
        let src = os.at(ni, 0, 0, 0);
        for i in 0..cs * plane {
            gx[dst + i] += go[src + i];
        }
    }
}

pub fn scale_channels<T: Scalar>(x: &[T], xs: Shape, s: &[T]) -> Vec<T> {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let plane = h * w;
    let mut out = vec![T::ZERO; xs.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let scale = s[ni * c + ci];
            let base = xs.at(ni, ci, 0, 0);
            for i in 0..plane {
                out[base + i] = x[base + i] * scale;
            }
        }
    }
    out
}

pub fn scale_channels_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    s: &[T],
    go: &[T],
    gx: Option<&mut [T]>,
    gs: Option<&mut [T]>,
) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let plane = h * w;
    if let Some(gx) = gx {
        for ni in 0..n {
            for ci in 0..c {
                let scale = s[ni * c + ci];
                let base = xs.at(ni, ci, 0, 0);
                for i in 0..plane {
                    gx[base + i] += go[base + i] * scale;
                }
            }
        }
    }
    if let Some(gs) = gs {
        for ni in 0..n {
            for ci in 0..c {
                let base = xs.at(ni, ci, 0, 0);
                let mut acc = T::ZERO;
                for i in 0..plane {
                    acc += go[base + i] * x[base + i];
                }
                gs[ni * c + ci] += acc;
            }
        }
    }
}
