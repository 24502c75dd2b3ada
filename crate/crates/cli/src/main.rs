//! `sgnet`: train, run and inspect the guided depth super-resolution model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use sgnet_core::data::netpbm::{encode_log_pgm, read_depth_pgm, read_ppm, write_depth_pgm};
use sgnet_core::data::degrade;
use sgnet_core::gradcheck::{gradcheck, GradcheckConfig};
use sgnet_core::spectral::fftshift;
use sgnet_core::train::{evaluate, load_model, train, PoolSpec, RunConfig};
use sgnet_core::{no_grad, Tensor};

#[derive(Parser)]
#[command(name = "sgnet", version, about = "Guided depth super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a synthetic scene pool.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Super-resolve one LR depth map guided by an RGB image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE of a checkpoint and of bicubic up-sampling on a scene pool.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Bicubic down-sampling of a depth map.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the per-block amplitude spectra as log-scaled PGMs.
    SpectraDump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_train(config: &Path) -> Result<()> {
    let run = RunConfig::parse(&read_text(config)?)?;
    let start = Instant::now();
    let report = train(&run.train, &run.model)?;
    for line in &report.log {
        println!("{line}");
    }
    println!(
        "parameters {}  bicubic {:.4} cm  final {:.4} cm  best {:.4} cm at step {}  ({:.1} s)",
        report.model.num_params(),
        report.baseline_rmse_cm,
        report.final_val_rmse_cm,
        report.best_val_rmse_cm,
        report.best_step,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_pair(rgb: &Path, lr: &Path) -> Result<(Tensor, Tensor, sgnet_core::data::DepthRange)> {
    let rgb = read_ppm(rgb).with_context(|| format!("reading {}", rgb.display()))?;
    let (lr_depth, range) = read_depth_pgm(lr).with_context(|| format!("reading {}", lr.display()))?;
    Ok((rgb, lr_depth, range))
}

fn run_infer(ckpt: &Path, rgb: &Path, lr: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let (rgb, lr_depth, range) = load_pair(rgb, lr)?;
    let pred = no_grad(|| model.forward(&rgb, &lr_depth))?;
    write_depth_pgm(out, &pred.d_sr, range)?;
    let s = pred.d_sr.shape();
    println!("wrote {}×{} depth to {}", s.w, s.h, out.display());
    Ok(())
}

fn run_eval(ckpt: &Path, scenes: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let pool = PoolSpec::parse(&read_text(scenes)?, model.config().scale)?;
    print!("{}", evaluate(&model, &pool.samples()?)?.to_tsv());
    Ok(())
}

fn run_degrade(input: &Path, scale: usize, out: &Path) -> Result<()> {
    let (depth, range) = read_depth_pgm(input)?;
    write_depth_pgm(out, &degrade(&depth, scale)?, range)?;
    Ok(())
}

/// Channel mean of a 1×C×H×W amplitude with the zero frequency centred.
fn mean_plane(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    let plane = s.plane();
    let mut mean = vec![0.0; plane];
    for c in 0..s.c {
        for (m, v) in mean.iter_mut().zip(&t.data()[c * plane..(c + 1) * plane]) {
            *m += v / s.c as f64;
        }
    }
    fftshift(&mean, s.h, s.w)
}

fn run_spectra_dump(ckpt: &Path, rgb: &Path, lr: &Path, out_dir: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let (rgb, lr_depth, _) = load_pair(rgb, lr)?;
    if rgb.shape().n != 1 {
        bail!("spectra-dump takes a single image");
    }
    let pred = no_grad(|| model.forward(&rgb, &lr_depth))?;
    fs::create_dir_all(out_dir)?;
    for (i, trace) in pred.traces.iter().enumerate() {
        for (tag, amp) in [("a_dg", &trace.a_dg), ("a_rgb", &trace.a_rgb), ("a_diff", &trace.a_diff)] {
            let s = amp.shape();
            let path = out_dir.join(format!("sdb{}_{tag}.pgm", i + 1));
            fs::write(&path, encode_log_pgm(&mean_plane(amp), s.h, s.w)?)?;
        }
    }
    println!("wrote {} spectra to {}", 3 * pred.traces.len(), out_dir.display());
    Ok(())
}

fn run_gradcheck(config: &Path) -> Result<bool> {
    let cfg = GradcheckConfig::parse(&read_text(config)?)?;
    let start = Instant::now();
    let report = gradcheck(&cfg, |name, n| eprintln!("checking {name} ({n} entries)"))?;
    for f in &report.failures {
        println!(
            "FAIL {}[{}]: autodiff {:.9e} numeric {:.9e} rel {:.3e}",
            f.name, f.index, f.autodiff, f.numeric, f.rel_error
        );
    }
    println!(
        "checked {} entries, {} failures, {} agreed only with frozen branches, worst rel {:.3e}, worst abs {:.3e}, max |grad| {:.3e} ({:.1} s)",
        report.checked,
        report.failures.len(),
        report.frozen_passes,
        report.worst_rel_error,
        report.worst_abs_error,
        report.max_abs_grad,
        start.elapsed().as_secs_f64()
    );
    Ok(report.passed())
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train { config } => run_train(&config)?,
        Command::Infer { ckpt, rgb, lr, out } => run_infer(&ckpt, &rgb, &lr, &out)?,
        Command::Eval { ckpt, scenes } => run_eval(&ckpt, &scenes)?,
        Command::Degrade { input, scale, out } => run_degrade(&input, scale, &out)?,
        Command::SpectraDump { ckpt, rgb, lr, out_dir } => run_spectra_dump(&ckpt, &rgb, &lr, &out_dir)?,
        Command::Gradcheck { config } => return run_gradcheck(&config),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
