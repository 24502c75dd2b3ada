//! Differentiable 2-D discrete Fourier transform and polar decomposition.
//!
//! Conventions: the forward transform is unnormalized,
//! `S[u,v] = Σ t[x,y]·exp(−2πi(ux/H + vy/W))`, and the inverse carries the
//! `1/(H·W)` factor. Each (n, c) plane is transformed independently.
//!
//! The 1-D kernel is a recursive mixed-radix decimation in time. A prime
//! length degenerates to a single direct O(n²) butterfly. Twiddles at the
//! quarter turns are exact, so bins that are analytically real for a real
//! input (DC and Nyquist rows/columns) carry an exactly zero imaginary part.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::branch;
use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Tensor};

/// Amplitudes below this have their decomposition gradient suppressed.
pub const AMPLITUDE_EPS: f64 = 1e-8;

/// Planned 1-D transform of a fixed length.
#[derive(Clone, Debug)]
pub struct Fft1d {
    len: usize,
    factors: Vec<usize>,
    /// `exp(−2πik/len)` for k in 0..len.
    twiddles: Vec<Complex64>,
    /// Bit-reversal permutation when `len` is a power of two.
    bitrev: Option<Vec<usize>>,
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn twiddle_table(n: usize) -> Vec<Complex64> {
    let mut tw = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        let z = if k == 0 {
            Complex64::new(1.0, 0.0)
        } else if 2 * k == n {
            Complex64::new(-1.0, 0.0)
        } else if 4 * k == n {
            Complex64::new(0.0, -1.0)
        } else {
            let angle = TAU * k as f64 / n as f64;
            Complex64::new(angle.cos(), -angle.sin())
        };
        tw[k] = z;
        if k != 0 {
            tw[n - k] = z.conj();
        }
    }
    tw
}

impl Fft1d {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "transform length must be positive");
        Fft1d {
            len,
            factors: prime_factors(len),
            twiddles: twiddle_table(len),
            bitrev: len.is_power_of_two().then(|| {
                let bits = len.trailing_zeros();
                (0..len)
                    .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                    .collect()
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forward transform of `input` (read with `stride`) into `out`.
    pub fn forward(&self, input: &[Complex64], stride: usize, out: &mut [Complex64]) {
        debug_assert!(out.len() >= self.len);
        if let Some(bitrev) = &self.bitrev {
            self.radix2(input, stride, &mut out[..self.len], bitrev);
            return;
        }
        self.recurse(input, stride, &mut out[..self.len], &self.factors, 1);
    }

    /// Iterative radix-2 decimation in time.
    fn radix2(&self, x: &[Complex64], stride: usize, out: &mut [Complex64], bitrev: &[usize]) {
        let n = out.len();
        for (o, &r) in out.iter_mut().zip(bitrev) {
            *o = x[r * stride];
        }
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for block in out.chunks_exact_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = *b * self.twiddles[k * step];
                    *b = *a - t;
                    *a += t;
                }
            }
            half *= 2;
        }
    }

    fn recurse(&self, x: &[Complex64], stride: usize, out: &mut [Complex64], factors: &[usize], tw_step: usize) {
        let n = out.len();
        if n == 1 {
            out[0] = x[0];
            return;
        }
        let p = factors[0];
        let m = n / p;
        for r in 0..p {
            self.recurse(&x[r * stride..], stride * p, &mut out[r * m..(r + 1) * m], &factors[1..], tw_step * p);
        }
        if p == 2 {
            let (lo, hi) = out.split_at_mut(m);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *b * self.twiddles[k * tw_step];
                *b = *a - t;
                *a += t;
            }
            return;
        }
        let mut column = [Complex64::new(0.0, 0.0); 16];
        let mut heap;
        let y: &mut [Complex64] = if p <= column.len() {
            &mut column[..p]
        } else {
            heap = vec![Complex64::new(0.0, 0.0); p];
            &mut heap
        };
        for k in 0..m {
            for r in 0..p {
                y[r] = out[r * m + k];
            }
            for q in 0..p {
                let bin = k + q * m;
                let mut acc = y[0];
                for (r, yr) in y.iter().enumerate().skip(1) {
                    acc += yr * self.twiddles[((r * bin) % n) * tw_step];
                }
                out[bin] = acc;
            }
        }
    }
}

/// Row-then-column transform of each `h×w` plane, in place.
fn fft2_planes(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let rows = Fft1d::new(w);
    let cols = Fft1d::new(h);
    let mut line = vec![Complex64::new(0.0, 0.0); h.max(w)];
    let mut out = vec![Complex64::new(0.0, 0.0); h.max(w)];
    if inverse {
        buf.iter_mut().for_each(|z| *z = z.conj());
    }
    for plane in buf.chunks_exact_mut(h * w) {
        for y in 0..h {
            let row = &mut plane[y * w..(y + 1) * w];
            rows.forward(row, 1, &mut out);
            row.copy_from_slice(&out[..w]);
        }
        for x in 0..w {
            for y in 0..h {
                line[y] = plane[y * w + x];
            }
            cols.forward(&line, 1, &mut out);
            for y in 0..h {
                plane[y * w + x] = out[y];
            }
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        buf.iter_mut().for_each(|z| *z = z.conj() * scale);
    }
}

/// Unnormalized forward transform of real planes.
fn dft_real(data: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_planes(&mut buf, h, w, false);
    buf
}

/// Forward transform of complex planes given as split parts.
fn dft_complex(re: &[f64], im: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    fft2_planes(&mut buf, h, w, false);
    buf
}

/// Complex spectrum of a real tensor, split into real and imaginary parts.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    pub real: Tensor,
    pub imag: Tensor,
}

/// Polar form of a spectrum: amplitude ≥ 0 and phase in (−π, π].
#[derive(Clone, Debug)]
pub struct AmplitudePhase {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

/// Forward DFT of every plane of `t`.
pub fn dft2(t: &Tensor) -> Result<ComplexSpectrum> {
    let s = t.shape();
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    if plane == 0 {
        return Err(Error::invalid("dft2", "empty plane"));
    }
    let spec = dft_real(t.data(), h, w);
    // Packed layout per sample: C real planes followed by C imaginary planes.
    let mut packed = Vec::with_capacity(2 * s.numel());
    for sample in spec.chunks_exact(s.c * plane) {
        packed.extend(sample.iter().map(|z| z.re));
        packed.extend(sample.iter().map(|z| z.im));
    }
    let packed = Tensor::from_op(
        "dft2",
        s.with_c(2 * s.c),
        packed,
        vec![t.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            // dL/dx = Re(DFT(gR − i·gI))
            let mut re = Vec::with_capacity(s.numel());
            let mut im = Vec::with_capacity(s.numel());
            for sample in ctx.grad.chunks_exact(2 * s.c * plane) {
                let (gr, gi) = sample.split_at(s.c * plane);
                re.extend_from_slice(gr);
                im.extend(gi.iter().map(|v| -v));
            }
            let z = dft_complex(&re, &im, h, w);
            vec![Some(z.iter().map(|z| z.re).collect())]
        }),
    )?;
    Ok(ComplexSpectrum {
        real: packed.slice_channels(0..s.c)?,
        imag: packed.slice_channels(s.c..2 * s.c)?,
    })
}

/// Inverse DFT (1/(H·W) normalized). Returns the real part; any imaginary
/// residue is discarded.
pub fn idft2(spec: &ComplexSpectrum) -> Result<Tensor> {
    let s = spec.real.shape();
    if spec.imag.shape() != s {
        return Err(Error::shape("idft2", s, spec.imag.shape()));
    }
    let (h, w) = (s.h, s.w);
    let mut buf: Vec<Complex64> = spec
        .real
        .data()
        .iter()
        .zip(spec.imag.data())
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect();
    fft2_planes(&mut buf, h, w, true);
    let data = buf.iter().map(|z| z.re).collect();
    Tensor::from_op(
        "idft2",
        s,
        data,
        vec![spec.real.clone(), spec.imag.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            // dL/dR = Re(DFT(g))/HW, dL/dI = Im(DFT(g))/HW
            let inv = 1.0 / (h * w) as f64;
            let z = dft_real(ctx.grad, h, w);
            vec![
                ctx.needs[0].then(|| z.iter().map(|z| z.re * inv).collect()),
                ctx.needs[1].then(|| z.iter().map(|z| z.im * inv).collect()),
            ]
        }),
    )
}

/// Principal phase in (−π, π]; an exactly zero imaginary part of either
/// sign maps to 0 or π.
fn principal_phase(re: f64, im: f64) -> f64 {
    if im == 0.0 {
        if re < 0.0 {
            PI
        } else {
            0.0
        }
    } else {
        im.atan2(re)
    }
}

/// Amplitude `sqrt(re² + im²)` and phase `atan2(im, re)`.
pub fn decompose(spec: &ComplexSpectrum) -> Result<AmplitudePhase> {
    let s = spec.real.shape();
    if spec.imag.shape() != s {
        return Err(Error::shape("decompose", s, spec.imag.shape()));
    }
    let (re, im) = (spec.real.data(), spec.imag.data());
    let amplitude: Vec<f64> = re.iter().zip(im).map(|(&a, &b)| a.hypot(b)).collect();
    let mut phase: Vec<f64> = re.iter().zip(im).map(|(&a, &b)| principal_phase(a, b)).collect();
    branch::phases(&mut phase);

    let inputs = vec![spec.real.clone(), spec.imag.clone()];
    let amplitude = Tensor::from_op(
        "amplitude",
        s,
        amplitude,
        inputs.clone(),
        Box::new(|ctx: &BackwardCtx<'_>| {
            let (re, im) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let part = |num: &[f64]| -> Vec<f64> {
                ctx.grad
                    .iter()
                    .zip(ctx.output)
                    .zip(num)
                    .map(|((g, &a), n)| if a < AMPLITUDE_EPS { 0.0 } else { g * n / a })
                    .collect()
            };
            vec![ctx.needs[0].then(|| part(re)), ctx.needs[1].then(|| part(im))]
        }),
    )?;
    let phase = Tensor::from_op(
        "phase",
        s,
        phase,
        inputs,
        Box::new(|ctx: &BackwardCtx<'_>| {
            let (re, im) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut dre = vec![0.0; re.len()];
            let mut dim = vec![0.0; re.len()];
            for (i, g) in ctx.grad.iter().enumerate() {
                let a = re[i].hypot(im[i]);
                if a < AMPLITUDE_EPS {
                    continue;
                }
                let a2 = a * a;
                dre[i] = -g * im[i] / a2;
                dim[i] = g * re[i] / a2;
            }
            vec![ctx.needs[0].then_some(dre), ctx.needs[1].then_some(dim)]
        }),
    )?;
    Ok(AmplitudePhase { amplitude, phase })
}

/// `real = A·cos φ`, `imag = A·sin φ`.
pub fn compose(ap: &AmplitudePhase) -> Result<ComplexSpectrum> {
    if ap.amplitude.shape() != ap.phase.shape() {
        return Err(Error::shape("compose", ap.amplitude.shape(), ap.phase.shape()));
    }
    Ok(ComplexSpectrum {
        real: ap.amplitude.mul(&ap.phase.cos()?)?,
        imag: ap.amplitude.mul(&ap.phase.sin()?)?,
    })
}

/// Spectrum with the zero frequency moved to the centre of each plane, for
/// display.
pub fn fftshift(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                dst[((y + h / 2) % h) * w + (x + w / 2) % w] = src[y * w + x];
            }
        }
    }
    out
}
