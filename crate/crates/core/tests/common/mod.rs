//! Shared fixtures and straight-line re-implementations of the network,
//! composed only from primitive tensor ops and parameter names.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgnet_core::blocks::{COUPLING_CLAMP, GATE_LOGIT_BOUND, LEAKY_SLOPE};
use sgnet_core::model::ModelConfig;
use sgnet_core::params::ParamStore;
use sgnet_core::spectral::{compose, decompose, dft2, idft2, AmplitudePhase};
use sgnet_core::{Pool, ResizeFactor, Shape, Tensor};

pub fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape, (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Redraws every parameter uniformly in ±`bound` so that zero-initialised
/// tensors take part in the comparison.
pub fn scramble(store: &mut ParamStore, seed: u64, bound: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, usize)> = store.iter().map(|(n, p)| (n.to_string(), p.tensor().numel())).collect();
    for (name, len) in names {
        store.set(&name, (0..len).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap();
    }
}

pub fn conv(st: &ParamStore, name: &str, x: &Tensor) -> Tensor {
    let w = st.get(&format!("{name}.weight")).unwrap();
    let b = st.param(&format!("{name}.bias")).map(|p| p.tensor());
    let k = w.shape().h;
    x.conv2d(w, b, 1, k / 2).unwrap()
}

fn lrelu(x: &Tensor) -> Tensor {
    x.leaky_relu(LEAKY_SLOPE).unwrap()
}

pub fn residual_group(st: &ParamStore, name: &str, x: &Tensor, depth: usize) -> Tensor {
    let mut h = x.clone();
    for b in 0..depth {
        let body = conv(st, &format!("{name}.block{b}.conv2"), &lrelu(&conv(st, &format!("{name}.block{b}.conv1"), &h)));
        h = h.add(&body).unwrap();
    }
    x.add(&conv(st, &format!("{name}.tail"), &h)).unwrap()
}

pub fn attention(st: &ParamStore, name: &str, x: &Tensor) -> Tensor {
    let mlp = |v: Tensor| conv(st, &format!("{name}.expand"), &lrelu(&conv(st, &format!("{name}.reduce"), &v)));
    let z = mlp(x.global_pool(Pool::Mean).unwrap()).add(&mlp(x.global_pool(Pool::Max).unwrap())).unwrap();
    let gate = z.scale(1.0 / GATE_LOGIT_BOUND).unwrap().tanh().unwrap().scale(GATE_LOGIT_BOUND).unwrap().sigmoid().unwrap();
    x.mul_channels(&gate).unwrap()
}

fn two_convs(st: &ParamStore, name: &str, x: &Tensor) -> Tensor {
    conv(st, &format!("{name}.conv2"), &lrelu(&conv(st, &format!("{name}.conv1"), x)))
}

pub fn coupling(st: &ParamStore, name: &str, x: &Tensor) -> (Tensor, Tensor) {
    let c = x.shape().c / 2;
    let x1 = x.slice_channels(0..c).unwrap();
    let x2 = x.slice_channels(c..2 * c).unwrap();
    let s = two_convs(st, &format!("{name}.scale"), &x1)
        .scale(1.0 / COUPLING_CLAMP)
        .unwrap()
        .tanh()
        .unwrap()
        .scale(COUPLING_CLAMP)
        .unwrap();
    let t = two_convs(st, &format!("{name}.shift"), &x1);
    let y2 = x2.mul(&s.exp().unwrap()).unwrap().add(&t).unwrap();
    (x1, y2)
}

pub fn up(st: &ParamStore, name: &str, x: &Tensor, s: usize) -> Tensor {
    conv(st, name, &x.bicubic_resize(ResizeFactor::up(s).unwrap()).unwrap())
}

pub fn down(st: &ParamStore, name: &str, x: &Tensor, s: usize) -> Tensor {
    conv(st, name, &x.bicubic_resize(ResizeFactor::down(s).unwrap()).unwrap())
}

fn encoder(st: &ParamStore, name: &str, x: &Tensor, depth: usize) -> Tensor {
    residual_group(st, &format!("{name}.rg"), &conv(st, &format!("{name}.lift"), x), depth)
}

/// `(f_ge, g_sr)`.
pub fn gcm(st: &ParamStore, cfg: &ModelConfig, rgb: &Tensor, d_up: &Tensor) -> (Tensor, Tensor) {
    let b = cfg.res_blocks;
    let grads = Tensor::concat(&[&rgb.gradient_map().unwrap(), &d_up.gradient_map().unwrap()]).unwrap();
    let h = conv(st, "gcm.fg.fuse", &grads);
    let h = residual_group(st, "gcm.fg.rg2", &residual_group(st, "gcm.fg.rg1", &h, b), b);
    let g_sr = conv(st, "gcm.fg.out", &attention(st, "gcm.fg.ca", &h));
    let merged = encoder(st, "gcm.fr_depth", d_up, b).add(&encoder(st, "gcm.fr_grad", &g_sr, b)).unwrap();
    (down(st, "gcm.fds", &merged, cfg.scale), g_sr)
}

/// `(f_rgb, f_d)`.
pub fn sdb(st: &ParamStore, name: &str, s: usize, f_rgb: &Tensor, f_d: &Tensor, f_ge: &Tensor) -> (Tensor, Tensor) {
    let c = f_d.shape().c;
    let n = |tag: &str| format!("{name}.{tag}");
    let f_dg = up(st, &n("up"), &conv(st, &n("fuse"), &Tensor::concat(&[f_ge, f_d]).unwrap()), s);
    let dg = decompose(&dft2(&f_dg).unwrap()).unwrap();
    let rg = decompose(&dft2(f_rgb).unwrap()).unwrap();
    let a_diff = rg.amplitude.sub(&dg.amplitude).unwrap().abs().unwrap();
    let p_diff = rg.phase.sub(&dg.phase).unwrap().abs().unwrap();
    let a_f = conv(
        st,
        &n("ff_amp"),
        &Tensor::concat(&[&two_convs(st, &n("fc_amp"), &dg.amplitude), &two_convs(st, &n("fc_amp_diff"), &a_diff)]).unwrap(),
    );
    let p_f = conv(
        st,
        &n("ff_pha"),
        &Tensor::concat(&[&two_convs(st, &n("fc_pha"), &dg.phase), &two_convs(st, &n("fc_pha_diff"), &p_diff)]).unwrap(),
    );
    let f_f = idft2(&compose(&AmplitudePhase { amplitude: a_f, phase: p_f }).unwrap()).unwrap();
    let (rgb_next, f_s) = coupling(st, &n("fi_guide"), &Tensor::concat(&[f_rgb, &f_dg]).unwrap());
    let (m1, m2) = coupling(st, &n("fi_freq"), &Tensor::concat(&[&f_s, &f_f]).unwrap());
    assert_eq!(m1.shape().c, c);
    let f_d_next = down(st, &n("down"), &f_dg.add(&m1.add(&m2).unwrap()).unwrap(), s);
    (rgb_next, f_d_next)
}

pub fn fam(st: &ParamStore, cfg: &ModelConfig, rgb: &Tensor, d_lr: &Tensor, f_ge: &Tensor) -> Tensor {
    let b = cfg.res_blocks;
    let mut f_rgb = encoder(st, "fam.enc_rgb", rgb, b);
    let mut f_d = encoder(st, "fam.enc_depth", d_lr, b);
    let mut history = Vec::new();
    for i in 1..=cfg.sdb_count {
        let (r, d) = sdb(st, &format!("fam.sdb{i}"), cfg.scale, &f_rgb, &f_d, f_ge);
        f_rgb = r;
        f_d = d;
        history.push(f_d.clone());
    }
    let parts: Vec<&Tensor> = history.iter().collect();
    let h = residual_group(st, "fam.agg.rg", &Tensor::concat(&parts).unwrap(), b);
    conv(st, "fam.head", &up(st, "fam.agg.up", &h, cfg.scale))
}

/// `(d_sr, g_sr)`.
pub fn sgnet(st: &ParamStore, cfg: &ModelConfig, rgb: &Tensor, d_lr: &Tensor) -> (Tensor, Tensor) {
    let d_bi = d_lr.bicubic_resize(ResizeFactor::up(cfg.scale).unwrap()).unwrap();
    let (f_ge, g_sr) = gcm(st, cfg, rgb, &d_bi);
    (fam(st, cfg, rgb, d_lr, &f_ge).add(&d_bi).unwrap(), g_sr)
}

/// Scalar count of a conv layer.
pub fn conv_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cout * cin * k * k + if bias { cout } else { 0 }
}

/// Layer-by-layer parameter arithmetic for a configuration.
pub fn audit_param_count(cfg: &ModelConfig) -> usize {
    let (c, n, b, r) = (cfg.channels, cfg.sdb_count, cfg.res_blocks, cfg.attention_ratio);
    let c3 = |cin, cout| conv_params(cin, cout, 3, true);
    let c1 = |cin, cout| conv_params(cin, cout, 1, true);
    let rg = |w: usize| 2 * b * c3(w, w) + c3(w, w);
    let enc = |cin: usize| c3(cin, c) + rg(c);
    let ca = 2 * conv_params(c, c / r, 1, false);
    let gcm = c1(2, c) + 2 * rg(c) + ca + c3(c, 1) + 2 * enc(1) + c3(c, c);
    let coupling = 4 * c3(c, c);
    let sdb = c3(2 * c, c) + c3(c, c) + 4 * 2 * c1(c, c) + 2 * c1(2 * c, c) + 2 * coupling + c3(c, c);
    let fam = enc(3) + enc(1) + n * sdb + rg(n * c) + c3(n * c, c) + c3(c, 1);
    gcm + fam
}
