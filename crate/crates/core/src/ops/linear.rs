use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub fn validate_linear(xs: Shape, ws: Shape, bs: Shape) -> Result<()> {
    if xs.h() != 1 || xs.w() != 1 {
        return Err(Error::shape(format!(
            "linear input must be [N, Cin, 1, 1], got {xs}"
        )));
    }
    if ws.c() != xs.c() {
        return Err(Error::shape(format!(
            "linear weight expects {} input features but input has {}",
            ws.c(),
            xs.c()
        )));
    }
    if bs.numel() != ws.n() {
        return Err(Error::shape(format!(
            "linear bias must have {} elements, got {}",
            ws.n(),
            bs.numel()
        )));
    }
    Ok(())
}

pub fn linear_forward<T: Scalar>(x: &[T], xs: Shape, w: &[T], ws: Shape, b: &[T]) -> (Shape, Vec<T>) {
    let (n, cin) = (xs.n(), xs.c());
    let cout = ws.n();
    let os = Shape::nchw(n, cout, 1, 1);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for co in 0..cout {
            let mut acc = b[co];
            for ci in 0..cin {
                acc += w[co * cin + ci] * x[ni * cin + ci];
            }
            out[ni * cout + co] = acc;
        }
    }
    (os, out)
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    go: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (n, cin) = (xs.n(), xs.c());
    let cout = ws.n();
    if let Some(gx) = gx {
        for ni in 0..n {
            for ci in 0..cin {
                let mut acc = T::ZERO;
                for co in 0..cout {
                    acc += go[ni * cout + co] * w[co * cin + ci];
                }
                gx[ni * cin + ci] += acc;
            }
        }
    }
    if let Some(gw) = gw {
        for co in 0..cout {
            for ci in 0..cin {
                let mut acc = T::ZERO;
                for ni in 0..n {
                    acc += go[ni * cout + co] * x[ni * cin + ci];
                }
                gw[co * cin + ci] += acc;
            }
        }
    }
    if let Some(gb) = gb {
        for co in 0..cout {
            let mut acc = T::ZERO;
            for ni in 0..n {
                acc += go[ni * cout + co];
            }
            gb[co] += acc;
        }
    }
}
