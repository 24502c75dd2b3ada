//! 2-D cross-correlation via im2col and a packed GEMM.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Shape, Tensor};

/// Geometry of one convolution, shared by forward and backward.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above state the bounds every caller
    // satisfies; all index arithmetic stays within the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Runs `f` on two reusable buffers of the requested lengths. Contents are
/// unspecified on entry.
fn with_scratch<R>(a: usize, b: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let (sa, sb) = &mut *s;
        if sa.len() < a {
            sa.resize(a, 0.0);
        }
        if sb.len() < b {
            sb.resize(b, 0.0);
        }
        f(&mut sa[..a], &mut sb[..b])
    })
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kj − pad` lies
/// inside the row.
fn valid_span(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let first = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let end = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (first, end.max(first))
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_span(g, kj);
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                            *o = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_span(g, kj);
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        for (d, v) in dst[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for (ox, v) in src.iter().enumerate().take(hi).skip(lo) {
                            dst[ox * g.stride + kj - g.pad] += v;
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Cross-correlation of `self` (N×Cin×H×W) with `weight`
    /// (Cout×Cin×kh×kw). `bias` must hold Cout values in any shape.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        const OP: &str = "conv2d";
        let xs = self.shape();
        let ws = weight.shape();
        let (cout, kh, kw) = (ws.n, ws.h, ws.w);
        if ws.c != xs.c {
            return Err(Error::shape(OP, format!("weight with {} input channels", xs.c), ws));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be positive"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(OP, format!("kernel extents must be odd, got {kh}×{kw}")));
        }
        let (hp, wp) = (xs.h + 2 * padding, xs.w + 2 * padding);
        if hp < kh || wp < kw {
            return Err(Error::invalid(OP, "padded input smaller than kernel"));
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(Error::invalid(OP, "output extent is not an integer"));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(Error::shape(OP, format!("{cout} bias values"), b.numel()));
            }
        }
        let g = ConvGeom {
            cin: xs.c,
            h: xs.h,
            w: xs.w,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        };
        let out_shape = Shape::new(xs.n, cout, g.ho, g.wo);
        let (k, p) = (g.k(), g.p());
        let mut out = vec![0.0; out_shape.numel()];
        let x = self.data();
        let scratch = if g.is_pointwise() { 0 } else { k * p };
        with_scratch(scratch, 0, |cols, _| {
            for n in 0..xs.n {
                let xn = &x[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w];
                let on = &mut out[n * cout * p..(n + 1) * cout * p];
                if let Some(b) = bias {
                    for (co, row) in on.chunks_exact_mut(p).enumerate() {
                        row.fill(b.data()[co]);
                    }
                }
                let src: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, &g, cols);
                    cols
                };
                gemm(cout, k, p, weight.data(), (k, 1), src, (p, 1), 1.0, on);
            }
        });

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Tensor::from_op(
            OP,
            out_shape,
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_>| conv_backward(ctx, &g, xs.n, cout)),
        )
    }
}

fn conv_backward(ctx: &BackwardCtx<'_>, g: &ConvGeom, batch: usize, cout: usize) -> Vec<Option<Vec<f64>>> {
    let (k, p) = (g.k(), g.p());
    let x = ctx.inputs[0].data();
    let w = ctx.inputs[1].data();
    let in_plane = g.cin * g.h * g.w;
    let mut dx = ctx.needs[0].then(|| vec![0.0; batch * in_plane]);
    let mut dw = ctx.needs[1].then(|| vec![0.0; cout * k]);
    let has_bias = ctx.inputs.len() == 3;
    let mut db = (has_bias && ctx.needs[2]).then(|| vec![0.0; cout]);
    let cols_len = if g.is_pointwise() { 0 } else { k * p };
    let dcols_len = if dx.is_some() && !g.is_pointwise() { k * p } else { 0 };
    with_scratch(cols_len, dcols_len, |cols, dcols| {
        for n in 0..batch {
            let gn = &ctx.grad[n * cout * p..(n + 1) * cout * p];
            if let Some(db) = db.as_mut() {
                for (co, row) in gn.chunks_exact(p).enumerate() {
                    db[co] += row.iter().sum::<f64>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                let xn = &x[n * in_plane..(n + 1) * in_plane];
                let src: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, g, cols);
                    cols
                };
                // dW[cout×k] += G[cout×p] · colsᵀ
                gemm(cout, p, k, gn, (p, 1), src, (1, p), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * in_plane..(n + 1) * in_plane];
                if g.is_pointwise() {
                    gemm(k, cout, p, w, (1, k), gn, (p, 1), 1.0, dxn);
                } else {
                    // dcols[k×p] = Wᵀ · G
                    gemm(k, cout, p, w, (1, k), gn, (p, 1), 0.0, dcols);
                    col2im(dcols, g, dxn);
                }
            }
        }
    });
    let mut grads = vec![dx, dw];
    if has_bias {
        grads.push(db);
    }
    grads
}
