mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgnet_core::data::{checkpoint, degrade, synth_scene, SceneSpec};
use sgnet_core::model::{rmse, ModelConfig, Sgnet};
use sgnet_core::params::ParamStore;
use sgnet_core::train::{
    adam_step, evaluate, load_model, random_crop, train, AdamState, PoolSpec, RunConfig, TrainConfig, LOG_HEADER,
    UNIT_SCALE_CM,
};
use sgnet_core::{no_grad, Error, Shape, Tensor};

fn tiny_model() -> ModelConfig {
    ModelConfig { channels: 8, sdb_count: 2, scale: 2, res_blocks: 1, seed: 3, ..ModelConfig::default() }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        steps: 50,
        crop: 16,
        eval_interval: 25,
        train_scenes: 8,
        val_scenes: 4,
        scene: SceneSpec { height: 32, width: 32, ..SceneSpec::default() },
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_descends_a_quadratic_monotonically() {
    let mut store = ParamStore::new();
    store.insert("w", &[1], vec![0.0]).unwrap();
    let cfg = TrainConfig { lr: 0.1, ..TrainConfig::default() };
    let mut state = AdamState::default();
    let loss = |store: &ParamStore| {
        let d = store.get("w").unwrap().shift(-3.0).unwrap();
        d.mul(&d).unwrap().sum().unwrap()
    };
    let mut prev = loss(&store).item().unwrap();
    for step in 1..=10 {
        loss(&store).backward().unwrap();
        adam_step(&mut store, &mut state, &cfg).unwrap();
        let now = loss(&store).item().unwrap();
        assert!(now < prev, "step {step}: {now} ≥ {prev}");
        prev = now;
        assert_eq!(state.step, step);
        assert!(store.get("w").unwrap().grad().is_none(), "gradients are cleared");
        if step == 1 {
            assert!((store.get("w").unwrap().data()[0] - 0.1).abs() < 1e-6, "first update is lr·sign(g)");
        }
    }
}

#[test]
fn adam_with_zero_gradient_keeps_parameters() {
    let mut store = ParamStore::new();
    store.insert("w", &[3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut state = AdamState::default();
    store.get("w").unwrap().scale(0.0).unwrap().sum().unwrap().backward().unwrap();
    adam_step(&mut store, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(store.get("w").unwrap().data(), &[1.0, -2.0, 0.5]);
    assert_eq!(state.m["w"], vec![0.0; 3]);
    assert!(matches!(adam_step(&mut store, &mut state, &TrainConfig::default()), Err(Error::MissingGradient(_))));
}

#[test]
fn crops_keep_the_sample_invariant() {
    let s = synth_scene(&SceneSpec { height: 32, width: 24, scale: 4, seed: 1, ..SceneSpec::default() }).unwrap();
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut b = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let c = random_crop(&s, 16, &mut a).unwrap();
        let d = random_crop(&s, 16, &mut b).unwrap();
        assert!(c.depth_hr.bit_eq(&d.depth_hr) && c.rgb.bit_eq(&d.rgb));
        assert_eq!(c.depth_hr.shape(), Shape::new(1, 1, 16, 16));
        assert!(c.depth_lr.bit_eq(&degrade(&c.depth_hr, 4).unwrap()));
    }
    let full = random_crop(&s, 24, &mut a).unwrap();
    assert_eq!(full.depth_hr.shape().w, 24);
    assert!(random_crop(&s, 18, &mut a).is_err());
    assert!(random_crop(&s, 28, &mut a).is_err());
}

#[test]
fn tiny_run_reduces_training_loss() {
    let report = train(&tiny_train(), &tiny_model()).unwrap();
    assert!(
        report.final_train_loss < report.initial_train_loss,
        "{} → {}",
        report.initial_train_loss,
        report.final_train_loss
    );
    assert_eq!(report.log[0], LOG_HEADER);
    assert_eq!(report.log.len(), 1 + 3);
    for line in &report.log[1..] {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 7);
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn runs_are_deterministic_and_checkpoints_reload() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let cfg = TrainConfig {
            steps: 20,
            eval_interval: 10,
            checkpoint: Some(dir.path().join(format!("{tag}.sgnr"))),
            log: Some(dir.path().join(format!("{tag}.tsv"))),
            ..tiny_train()
        };
        let report = train(&cfg, &tiny_model()).unwrap();
        (report, cfg)
    };
    let (ra, ca) = run("a");
    let (rb, cb) = run("b");
    let read = |p: &Option<std::path::PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
    assert_eq!(read(&ca.checkpoint), read(&cb.checkpoint));
    assert_eq!(read(&ca.log), read(&cb.log));
    assert_eq!(ra.log, rb.log);
    let text = String::from_utf8(read(&ca.log)).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), ra.log);

    let pool = PoolSpec { template: SceneSpec { height: 32, width: 32, scale: 2, ..SceneSpec::default() }, count: 3, seed: 11, stream: 0 };
    let samples = pool.samples().unwrap();
    let best = load_model(ca.checkpoint.as_ref().unwrap()).unwrap();
    if ra.best_step == 20 {
        assert!(best.params().bit_identical(ra.model.params()));
        assert_eq!(evaluate(&best, &samples).unwrap(), evaluate(&ra.model, &samples).unwrap());
    }
    let again = dir.path().join("again.sgnr");
    checkpoint::save(&again, ra.model.params(), ra.model.config()).unwrap();
    let reloaded = load_model(&again).unwrap();
    assert_eq!(evaluate(&reloaded, &samples).unwrap(), evaluate(&ra.model, &samples).unwrap());
}

#[test]
fn zero_steps_checkpoint_is_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("init.sgnr");
    let cfg = TrainConfig { steps: 0, checkpoint: Some(path.clone()), ..tiny_train() };
    let report = train(&cfg, &tiny_model()).unwrap();
    let fresh = Sgnet::new(tiny_model()).unwrap();
    assert!(load_model(&path).unwrap().params().bit_identical(fresh.params()));
    assert!(report.model.params().bit_identical(fresh.params()));
    assert_eq!(report.log.len(), 2);
}

#[test]
fn evaluation_examples() {
    let mut model = Sgnet::new(ModelConfig { scale: 4, ..tiny_model() }).unwrap();
    common::scramble(model.params_mut(), 1, 0.05);
    let pool = PoolSpec { template: SceneSpec { height: 32, width: 32, ..SceneSpec::default() }, count: 3, seed: 2, stream: 0 };
    let samples = pool.samples().unwrap();
    let a = evaluate(&model, &samples).unwrap();
    assert_eq!(a, evaluate(&model, &samples).unwrap());
    for (row, s) in a.rows.iter().zip(&samples) {
        let pred = no_grad(|| model.forward(&s.rgb, &s.depth_lr)).unwrap();
        let dumped = Tensor::new(pred.d_sr.shape(), pred.d_sr.data().to_vec()).unwrap();
        let direct = 100.0
            * (dumped.data().iter().zip(s.depth_hr.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / dumped.numel() as f64)
                .sqrt();
        assert!((row.rmse_cm - direct).abs() < 1e-10);
        assert_eq!(row.rmse_cm, rmse(&pred.d_sr, &s.depth_hr, UNIT_SCALE_CM).unwrap());
    }
    let tsv = a.to_tsv();
    assert_eq!(tsv.lines().count(), 1 + 3 + 1);
    assert!(tsv.starts_with("index\tseed\trmse_cm\tbicubic_cm\n"));

    model.zero_head().unwrap();
    let z = evaluate(&model, &samples).unwrap();
    assert_eq!(z.mean_rmse_cm, z.mean_baseline_cm);
    assert!(z.rows.iter().all(|r| r.rmse_cm == r.baseline_cm));

    let wrong = PoolSpec { template: SceneSpec { scale: 2, ..pool.template.clone() }, ..pool };
    assert!(evaluate(&model, &wrong.samples().unwrap()).is_err());
}

#[test]
fn run_configs_parse_and_reject_unknown_keys() {
    let run = RunConfig::parse(
        "# toy\nchannels = 16\nsdb_count = 3\nscale = 4\nsteps = 10\nlr = 2e-4\ncrop = 32\nscene_size = 64\nseed = 7\n",
    )
    .unwrap();
    assert_eq!((run.model.channels, run.model.sdb_count, run.model.scale, run.model.seed), (16, 3, 4, 7));
    assert_eq!((run.train.steps, run.train.lr, run.train.crop, run.train.seed), (10, 2e-4, 32, 7));
    assert!(RunConfig::parse("chanels = 16\n").is_err());
    assert!(RunConfig::parse("scale = 4\ncrop = 30\n").is_err());
    assert!(RunConfig::parse("batch_size = 0\n").is_err());
    assert!(RunConfig::parse("channels\n").is_err());
}
