use std::path::Path;
use std::process::{Command, Output};

use sgnet_core::data::netpbm::{read_depth_pgm, write_depth_pgm, write_ppm};
use sgnet_core::data::{synth_scene, DepthRange, SceneSpec};

fn sgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnet")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_pair(dir: &Path, scale: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let scene = synth_scene(&SceneSpec { height: 16, width: 24, scale, seed: 3, ..SceneSpec::default() }).unwrap();
    let (rgb, lr) = (dir.join("rgb.ppm"), dir.join("lr.pgm"));
    write_ppm(&rgb, &scene.rgb).unwrap();
    write_depth_pgm(&lr, &scene.depth_lr, DepthRange::new(0.5, 10.0).unwrap()).unwrap();
    (rgb, lr)
}

#[test]
fn degrade_by_one_is_pixel_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, lr) = write_pair(dir.path(), 2);
    let out = dir.path().join("same.pgm");
    let o = sgnet(&["degrade", "--in", s(&lr), "--scale", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&lr).unwrap(), std::fs::read(&out).unwrap());

    let half = dir.path().join("half.pgm");
    assert!(sgnet(&["degrade", "--in", s(&lr), "--scale", "2", "--out", s(&half)]).status.success());
    assert_eq!(read_depth_pgm(&half).unwrap().0.shape().w, 6);
}

#[test]
fn train_infer_eval_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.sgnr");
    let config = dir.path().join("train.cfg");
    std::fs::write(
        &config,
        format!(
            "channels = 4\nsdb_count = 2\nscale = 2\nres_blocks = 1\nsteps = 2\ncrop = 16\neval_interval = 1\n\
             train_scenes = 2\nval_scenes = 1\nscene_size = 32\ncheckpoint = {}\n",
            s(&ckpt)
        ),
    )
    .unwrap();
    let o = sgnet(&["train", "--config", s(&config)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("step\t"));

    let (rgb, lr) = write_pair(dir.path(), 2);
    let out = dir.path().join("sr.pgm");
    let o = sgnet(&["infer", "--ckpt", s(&ckpt), "--rgb", s(&rgb), "--lr", s(&lr), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (sr, _) = read_depth_pgm(&out).unwrap();
    let (small, _) = read_depth_pgm(&lr).unwrap();
    assert_eq!((sr.shape().h, sr.shape().w), (2 * small.shape().h, 2 * small.shape().w));

    let scenes = dir.path().join("pool.cfg");
    std::fs::write(&scenes, "count = 2\nseed = 4\nscene_size = 16\n").unwrap();
    let o = sgnet(&["eval", "--ckpt", s(&ckpt), "--scenes", s(&scenes)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1 + 2 + 1);

    let spectra = dir.path().join("spectra");
    let o = sgnet(&["spectra-dump", "--ckpt", s(&ckpt), "--rgb", s(&rgb), "--lr", s(&lr), "--out-dir", s(&spectra)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["sdb1_a_dg.pgm", "sdb1_a_rgb.pgm", "sdb2_a_diff.pgm"] {
        assert!(std::fs::read(spectra.join(name)).unwrap().starts_with(b"P5\n"), "{name}");
    }
}

#[test]
fn gradcheck_on_a_tiny_config_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gc.cfg");
    std::fs::write(&config, "channels = 4\nsdb_count = 1\nscale = 2\nres_blocks = 1\nlr_size = 4\nmax_per_param = 2\n").unwrap();
    let o = sgnet(&["gradcheck", "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains(" 0 failures"));
}

#[test]
fn exit_codes() {
    assert_eq!(sgnet(&["infer", "--ckpt"]).status.code(), Some(1));
    assert_eq!(sgnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sgnet(&["degrade", "--in", "x.pgm", "--scale", "two", "--out", "y.pgm"]).status.code(), Some(1));
    assert_eq!(sgnet(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pgm");
    let o = sgnet(&["degrade", "--in", s(&missing), "--scale", "2", "--out", s(&dir.path().join("o.pgm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "chanels = 4\n").unwrap();
    assert_eq!(sgnet(&["train", "--config", s(&bad)]).status.code(), Some(2));
}
