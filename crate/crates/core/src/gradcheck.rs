//! Finite-difference verification of every parameter gradient of the
//! total loss.
//!
//! Each scalar is checked with a plain central difference first. Entries
//! that disagree are re-measured with the branch decisions of the base pass
//! frozen (see [`crate::branch`]), which removes spurious mismatches where
//! the ±step perturbation crosses a kink of `abs`, `leaky_relu`, max pooling
//! or the phase branch cut.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::branch;
use crate::config::KvFile;
use crate::data::{synth_scene, DepthSample, SceneSpec};
use crate::error::Result;
use crate::gcm::GcmOutput;
use crate::model::{loss_total, ModelConfig, Sgnet};
use crate::ops::ResizeFactor;
use crate::tensor::{no_grad, Tensor};
use crate::train::take_model_keys;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    /// LR extent; the HR sample is `scale ×` larger.
    pub lr_size: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Checks at most this many evenly spaced entries per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                channels: 8,
                sdb_count: 2,
                scale: 2,
                res_blocks: 1,
                ..ModelConfig::default()
            },
            lr_size: 8,
            step: 1e-5,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            max_per_param: None,
        }
    }
}

impl GradcheckConfig {
    /// Flat `key = value` text: model keys plus `lr_size`, `step`,
    /// `rel_tol`, `abs_tol` and `max_per_param`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let mut cfg = GradcheckConfig::default();
        take_model_keys(&mut kv, &mut cfg.model)?;
        kv.take("lr_size", &mut cfg.lr_size)?;
        kv.take("step", &mut cfg.step)?;
        kv.take("rel_tol", &mut cfg.rel_tol)?;
        kv.take("abs_tol", &mut cfg.abs_tol)?;
        let mut cap = 0usize;
        kv.take("max_per_param", &mut cap)?;
        cfg.max_per_param = (cap > 0).then_some(cap);
        kv.finish()?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub autodiff: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Entries that needed the branch-frozen re-measurement to agree.
    pub frozen_passes: usize,
    /// Largest relative error among entries above the absolute floor.
    pub worst_rel_error: f64,
    pub worst_abs_error: f64,
    pub max_abs_grad: f64,
    pub failures: Vec<Mismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Network and sample used by the check. Biases are redrawn away from zero
/// so that their gradients are not compared at the initial point alone.
pub fn gradcheck_instance(cfg: &GradcheckConfig) -> Result<(Sgnet, DepthSample)> {
    let mut net = Sgnet::new(cfg.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed ^ 0x9e37_79b9_7f4a_7c15);
    let biases: Vec<(String, usize)> = net
        .params()
        .iter()
        .filter(|(n, _)| n.ends_with(".bias"))
        .map(|(n, p)| (n.to_string(), p.dims().iter().product()))
        .collect();
    for (name, len) in biases {
        net.params_mut().set(&name, (0..len).map(|_| rng.gen_range(-0.1..0.1)).collect())?;
    }
    let hr = cfg.lr_size * cfg.model.scale;
    let sample = synth_scene(&SceneSpec {
        height: hr,
        width: hr,
        scale: cfg.model.scale,
        seed: cfg.model.seed,
        ..SceneSpec::default()
    })?;
    Ok((net, sample))
}

fn loss_value(net: &Sgnet, s: &DepthSample) -> Result<f64> {
    no_grad(|| Ok(net.loss(&net.forward(&s.rgb, &s.depth_lr)?, &s.depth_hr)?.l_total))
}

/// Bicubic input and GCM output at the base parameters. FAM parameters do
/// not reach the GCM, so probes of those reuse it.
struct GcmCache {
    d_bi: Tensor,
    out: GcmOutput,
}

impl GcmCache {
    fn new(net: &Sgnet, s: &DepthSample) -> Result<Self> {
        no_grad(|| {
            let d_bi = s.depth_lr.bicubic_resize(ResizeFactor::up(net.config().scale)?)?;
            let out = net.gcm().forward(net.params(), &s.rgb, &d_bi)?;
            Ok(GcmCache { d_bi, out })
        })
    }

    fn loss_value(&self, net: &Sgnet, s: &DepthSample) -> Result<f64> {
        no_grad(|| {
            let d_fe = net.fam().forward(net.params(), &s.rgb, &s.depth_lr, &self.out.f_ge)?.d_fe;
            Ok(loss_total(&d_fe.add(&self.d_bi)?, &self.out.g_sr, &s.depth_hr, &net.config().loss)?.l_total)
        })
    }
}

/// Runs the check; `progress` is called once per parameter tensor.
pub fn gradcheck(cfg: &GradcheckConfig, mut progress: impl FnMut(&str, usize)) -> Result<GradcheckReport> {
    let (mut net, sample) = gradcheck_instance(cfg)?;
    let (loss, log) = branch::record(|| net.loss(&net.forward(&sample.rgb, &sample.depth_lr)?, &sample.depth_hr));
    let loss = loss?;
    loss.total.backward()?;
    let grads: Vec<(String, Vec<f64>, Vec<f64>)> = net
        .params()
        .iter()
        .map(|(n, p)| {
            let g = p.tensor().grad().unwrap_or_else(|| vec![0.0; p.tensor().numel()]);
            (n.to_string(), p.tensor().data().to_vec(), g)
        })
        .collect();

    let cache = GcmCache::new(&net, &sample)?;
    let mut report = GradcheckReport::default();
    let h = cfg.step;
    for (name, base, grad) in grads {
        let n = base.len();
        let stride = cfg.max_per_param.map_or(1, |m| n.div_ceil(m.max(1)));
        progress(&name, n.div_ceil(stride));
        let fam_only = name.starts_with("fam.");
        let probe = |i: usize, frozen: bool, net: &mut Sgnet| -> Result<f64> {
            let eval = |delta: f64, net: &mut Sgnet| -> Result<f64> {
                let mut w = base.clone();
                w[i] += delta;
                net.params_mut().set(&name, w)?;
                if frozen {
                    branch::replay(&log, || loss_value(net, &sample))
                } else if fam_only {
                    cache.loss_value(net, &sample)
                } else {
                    loss_value(net, &sample)
                }
            };
            let fd = (eval(h, net)? - eval(-h, net)?) / (2.0 * h);
            Ok(fd)
        };
        for i in (0..n).step_by(stride) {
            report.checked += 1;
            let a = grad[i];
            let mut fd = probe(i, false, &mut net)?;
            let ok = |fd: f64| (a - fd).abs() <= cfg.abs_tol || rel_error(a, fd) < cfg.rel_tol;
            if !ok(fd) {
                fd = probe(i, true, &mut net)?;
                if ok(fd) {
                    report.frozen_passes += 1;
                } else {
                    report.failures.push(Mismatch {
                        name: name.clone(),
                        index: i,
                        autodiff: a,
                        numeric: fd,
                        rel_error: rel_error(a, fd),
                    });
                }
            }
            report.worst_abs_error = report.worst_abs_error.max((a - fd).abs());
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            if (a - fd).abs() > cfg.abs_tol {
                report.worst_rel_error = report.worst_rel_error.max(rel_error(a, fd));
            }
        }
        net.params_mut().set(&name, base)?;
    }
    Ok(report)
}
