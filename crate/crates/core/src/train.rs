//! Adam training on synthetic scene pools, evaluation, and run
//! configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvFile;
use crate::data::{checkpoint, degrade, scene_pool, DepthSample, SceneSpec};
use crate::error::{Error, Result};
use crate::model::{rmse, LossBreakdown, ModelConfig, Sgnet};
use crate::params::ParamStore;
use crate::tensor::{no_grad, Tensor};

/// Depths are metres; metrics are reported in centimetres.
pub const UNIT_SCALE_CM: f64 = 100.0;

/// Generator streams for the training pool, validation pool and batches.
const TRAIN_STREAM: u64 = 0;
const VAL_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub eval_interval: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Template for both pools; its `scale` and `seed` are overridden.
    pub scene: SceneSpec,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            batch_size: 1,
            crop: 32,
            eval_interval: 250,
            train_scenes: 64,
            val_scenes: 16,
            scene: SceneSpec::default(),
            seed: 0,
            checkpoint: None,
            log: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("train_config", reason));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("Adam constants need 0 ≤ β < 1 and ε > 0".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("crop", self.crop),
            ("eval_interval", self.eval_interval),
            ("train_scenes", self.train_scenes),
            ("val_scenes", self.val_scenes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.crop % scale != 0 {
            return bad(format!("crop {} not divisible by scale {scale}", self.crop));
        }
        if self.crop > self.scene.height.min(self.scene.width) {
            return bad(format!("crop {} exceeds scene extent", self.crop));
        }
        if self.crop < 3 * scale {
            return bad(format!("crop {} too small for scale {scale}", self.crop));
        }
        self.pool_template(scale).validate()
    }

    fn pool_template(&self, scale: usize) -> SceneSpec {
        SceneSpec {
            scale,
            ..self.scene.clone()
        }
    }
}

/// Model and training settings read from one flat config file. A single
/// `seed` key seeds both initialisation and data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Consumes the model keys of `kv` into `m`.
pub fn take_model_keys(kv: &mut KvFile, m: &mut ModelConfig) -> Result<()> {
    kv.take("channels", &mut m.channels)?;
    kv.take("sdb_count", &mut m.sdb_count)?;
    kv.take("scale", &mut m.scale)?;
    kv.take("res_blocks", &mut m.res_blocks)?;
    kv.take("attention_ratio", &mut m.attention_ratio)?;
    kv.take("lambda1", &mut m.loss.lambda1)?;
    kv.take("lambda2", &mut m.loss.lambda2)?;
    kv.take("gamma1", &mut m.loss.gamma1)?;
    kv.take("gamma2", &mut m.loss.gamma2)?;
    kv.take("seed", &mut m.seed)
}

/// Consumes scene template keys of `kv` into `s`.
pub fn take_scene_keys(kv: &mut KvFile, s: &mut SceneSpec) -> Result<()> {
    let mut size = 0usize;
    kv.take("scene_size", &mut size)?;
    if size > 0 {
        s.height = size;
        s.width = size;
    }
    kv.take("primitives", &mut s.primitives)?;
    kv.take("z_min", &mut s.z_min)?;
    kv.take("z_max", &mut s.z_max)?;
    kv.take("noise", &mut s.texture.noise)?;
    kv.take("distractors", &mut s.texture.distractors)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let mut run = RunConfig::default();
        take_model_keys(&mut kv, &mut run.model)?;
        run.train.seed = run.model.seed;
        let t = &mut run.train;
        kv.take("lr", &mut t.lr)?;
        kv.take("beta1", &mut t.beta1)?;
        kv.take("beta2", &mut t.beta2)?;
        kv.take("eps", &mut t.eps)?;
        kv.take("steps", &mut t.steps)?;
        kv.take("batch_size", &mut t.batch_size)?;
        kv.take("crop", &mut t.crop)?;
        kv.take("eval_interval", &mut t.eval_interval)?;
        kv.take("train_scenes", &mut t.train_scenes)?;
        kv.take("val_scenes", &mut t.val_scenes)?;
        take_scene_keys(&mut kv, &mut t.scene)?;
        let (mut ckpt, mut log) = (String::new(), String::new());
        kv.take("checkpoint", &mut ckpt)?;
        kv.take("log", &mut log)?;
        t.checkpoint = (!ckpt.is_empty()).then(|| PathBuf::from(ckpt));
        t.log = (!log.is_empty()).then(|| PathBuf::from(log));
        kv.finish()?;
        run.model.validate()?;
        run.train.validate(run.model.scale)?;
        Ok(run)
    }
}

/// A reproducible evaluation pool description.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSpec {
    pub template: SceneSpec,
    pub count: usize,
    pub seed: u64,
    pub stream: u64,
}

impl PoolSpec {
    /// Keys: `count`, `seed`, `stream` and the scene template keys.
    pub fn parse(text: &str, scale: usize) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let mut spec = PoolSpec {
            template: SceneSpec {
                scale,
                ..SceneSpec::default()
            },
            count: 16,
            seed: 0,
            stream: VAL_STREAM,
        };
        kv.take("count", &mut spec.count)?;
        kv.take("seed", &mut spec.seed)?;
        kv.take("stream", &mut spec.stream)?;
        let mut s = 0usize;
        kv.take("scale", &mut s)?;
        if s != 0 && s != scale {
            return Err(Error::invalid("eval", format!("pool scale {s} does not match checkpoint scale {scale}")));
        }
        take_scene_keys(&mut kv, &mut spec.template)?;
        kv.finish()?;
        spec.template.validate()?;
        Ok(spec)
    }

    pub fn samples(&self) -> Result<Vec<DepthSample>> {
        scene_pool(&self.template, self.count, self.seed, self.stream)
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One bias-corrected Adam update of every parameter from its gradient.
/// Gradients are consumed: every parameter is replaced by a fresh leaf.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let mut updates = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        let g = p.tensor().grad().ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        updates.push((name.to_string(), g, p.tensor().data().to_vec()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g, mut w) in updates {
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        store.set(&name, w)?;
    }
    Ok(())
}

/// Crops `crop × crop` at an offset aligned to the sample scale and
/// re-derives the LR depth from the cropped HR depth.
pub fn random_crop(sample: &DepthSample, crop: usize, rng: &mut impl Rng) -> Result<DepthSample> {
    let s = sample.scale;
    let shape = sample.depth_hr.shape();
    if crop == 0 || crop % s != 0 || crop > shape.h || crop > shape.w {
        return Err(Error::invalid(
            "random_crop",
            format!("crop {crop} must be a multiple of {s} within {}×{}", shape.h, shape.w),
        ));
    }
    let top = s * rng.gen_range(0..=(shape.h - crop) / s);
    let left = s * rng.gen_range(0..=(shape.w - crop) / s);
    let depth_hr = sample.depth_hr.crop(top, left, crop, crop)?;
    Ok(DepthSample {
        rgb: sample.rgb.crop(top, left, crop, crop)?,
        depth_lr: degrade(&depth_hr, s)?,
        depth_hr,
        scale: s,
        seed: sample.seed,
    })
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub seed: u64,
    pub rmse_cm: f64,
    pub baseline_cm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_rmse_cm: f64,
    pub mean_baseline_cm: f64,
}

impl EvalReport {
    /// Tab-separated table with a header and a trailing mean row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\tseed\trmse_cm\tbicubic_cm\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\n", r.index, r.seed, r.rmse_cm, r.baseline_cm));
        }
        out.push_str(&format!("mean\t-\t{:.6}\t{:.6}\n", self.mean_rmse_cm, self.mean_baseline_cm));
        out
    }
}

/// Mean per-sample RMSE of the model and of plain bicubic up-sampling.
pub fn evaluate(model: &Sgnet, samples: &[DepthSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "empty sample pool"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        if s.scale != model.config().scale {
            return Err(Error::invalid(
                "evaluate",
                format!("sample scale {} does not match model scale {}", s.scale, model.config().scale),
            ));
        }
        let p = no_grad(|| model.forward(&s.rgb, &s.depth_lr))?;
        rows.push(EvalRow {
            index,
            seed: s.seed,
            rmse_cm: rmse(&p.d_sr, &s.depth_hr, UNIT_SCALE_CM)?,
            baseline_cm: rmse(&p.d_bi, &s.depth_hr, UNIT_SCALE_CM)?,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalReport {
        mean_rmse_cm: rows.iter().map(|r| r.rmse_cm).sum::<f64>() / n,
        mean_baseline_cm: rows.iter().map(|r| r.baseline_cm).sum::<f64>() / n,
        rows,
    })
}

/// Mean total loss over whole samples, without recording gradients.
pub fn pool_loss(model: &Sgnet, samples: &[DepthSample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        sum += no_grad(|| -> Result<f64> {
            let p = model.forward(&s.rgb, &s.depth_lr)?;
            Ok(model.loss(&p, &s.depth_hr)?.l_total)
        })?;
    }
    Ok(sum / samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: Sgnet,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub initial_val_rmse_cm: f64,
    pub final_val_rmse_cm: f64,
    pub best_val_rmse_cm: f64,
    pub best_step: usize,
    pub baseline_rmse_cm: f64,
    pub log: Vec<String>,
}

pub const LOG_HEADER: &str = "step\tl_spa\tl_gra\tl_amp\tl_pha\tl_total\trmse_cm";

fn log_line(step: usize, l: &LossBreakdown, rmse_cm: f64) -> String {
    format!(
        "{step}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.6}",
        l.l_spa, l.l_gra, l.l_amp, l.l_pha, l.l_total, rmse_cm
    )
}

fn batch(pool: &[DepthSample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor, Tensor)> {
    let crops = (0..cfg.batch_size)
        .map(|_| random_crop(&pool[rng.gen_range(0..pool.len())], cfg.crop, rng))
        .collect::<Result<Vec<_>>>()?;
    let stack = |f: fn(&DepthSample) -> &Tensor| Tensor::stack_batch(&crops.iter().map(f).collect::<Vec<_>>());
    Ok((stack(|s| &s.rgb)?, stack(|s| &s.depth_lr)?, stack(|s| &s.depth_hr)?))
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Full training run: pools, Adam steps on random crops, periodic
/// validation, best-validation checkpointing and a TSV metrics log.
pub fn train(cfg: &TrainConfig, mcfg: &ModelConfig) -> Result<TrainReport> {
    mcfg.validate()?;
    cfg.validate(mcfg.scale)?;
    let template = cfg.pool_template(mcfg.scale);
    let train_pool = scene_pool(&template, cfg.train_scenes, cfg.seed, TRAIN_STREAM)?;
    let val_pool = scene_pool(&template, cfg.val_scenes, cfg.seed, VAL_STREAM)?;
    let mut model = Sgnet::new(mcfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(BATCH_STREAM);
    let mut adam = AdamState::default();

    let mut log_file = match &cfg.log {
        Some(p) => {
            let mut f = fs::File::create(p)?;
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut log = vec![LOG_HEADER.to_string()];
    let mut emit = |line: String, log: &mut Vec<String>| -> Result<()> {
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}")?;
        }
        log.push(line);
        Ok(())
    };
    let initial_train_loss = pool_loss(&model, &train_pool)?;
    let initial = evaluate(&model, &val_pool)?;
    let (first_rgb, first_lr, first_hr) = batch(&train_pool, cfg, &mut rng.clone())?;
    let first = no_grad(|| -> Result<LossBreakdown> {
        let p = model.forward(&first_rgb, &first_lr)?;
        model.loss(&p, &first_hr)
    })?;
    emit(log_line(0, &first, initial.mean_rmse_cm), &mut log)?;
    let mut best = (initial.mean_rmse_cm, 0usize);
    if let Some(path) = &cfg.checkpoint {
        checkpoint::save(path, model.params(), model.config())?;
    }

    let mut last_val = initial.mean_rmse_cm;
    for step in 1..=cfg.steps {
        let (rgb, lr, hr) = batch(&train_pool, cfg, &mut rng)?;
        let loss = model
            .forward(&rgb, &lr)
            .and_then(|p| model.loss(&p, &hr))
            .map_err(|e| diverged(step, e))?;
        if !loss.l_total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("{loss:?}"),
            });
        }
        loss.total.backward().map_err(|e| diverged(step, e))?;
        adam_step(model.params_mut(), &mut adam, cfg)?;
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            last_val = evaluate(&model, &val_pool)?.mean_rmse_cm;
            emit(log_line(step, &loss, last_val), &mut log)?;
            if last_val < best.0 {
                best = (last_val, step);
                if let Some(path) = &cfg.checkpoint {
                    checkpoint::save(path, model.params(), model.config())?;
                }
            }
        }
    }
    let final_train_loss = pool_loss(&model, &train_pool)?;
    Ok(TrainReport {
        model,
        initial_train_loss,
        final_train_loss,
        initial_val_rmse_cm: initial.mean_rmse_cm,
        final_val_rmse_cm: last_val,
        best_val_rmse_cm: best.0,
        best_step: best.1,
        baseline_rmse_cm: initial.mean_baseline_cm,
        log,
    })
}

/// Loads a checkpoint into a ready network.
pub fn load_model(path: impl AsRef<Path>) -> Result<Sgnet> {
    let (store, config) = checkpoint::load(path)?;
    Sgnet::with_params(config, store)
}
