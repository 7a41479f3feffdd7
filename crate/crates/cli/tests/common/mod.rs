//! Shared dataset + checkpoint fixtures for the CLI integration suites.
//!
//! Each test binary builds its own (processes don't share `Lazy` state);
//! everything is seeded, so fixture contents are identical across runs.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use lightcone_cli::pipeline::{cmd_gen_data, cmd_train, RunOptions, TrainOutcome};
use tempfile::TempDir;

pub struct Fixture {
    /// Owns the directory; dropping it deletes the fixture.
    pub dir: TempDir,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub gen_elapsed: Duration,
    pub train_elapsed: Duration,
    pub halved_at_epoch: Option<usize>,
}

pub struct FixtureSpec {
    pub n_sequences: usize,
    pub frames_per_seq: usize,
    pub v_max: f64,
    pub data_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub model_seed: u64,
    pub stop_ratio: Option<f64>,
}

pub fn write_cfg(dir: &std::path::Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

pub fn opts(config: PathBuf, out: PathBuf) -> RunOptions {
    RunOptions {
        config,
        seed: None,
        out: Some(out),
        full_scale: false,
    }
}

pub fn build(spec: &FixtureSpec) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset.lcds");
    let checkpoint = dir.path().join("model.lcck");

    let gen_cfg = write_cfg(
        dir.path(),
        "gen.cfg",
        &format!(
            "n_sequences = {}\nframes_per_seq = {}\nv_max = {}\nseed = {}\ndataset = {}\n",
            spec.n_sequences,
            spec.frames_per_seq,
            spec.v_max,
            spec.data_seed,
            dataset.display()
        ),
    );
    let t0 = Instant::now();
    cmd_gen_data(&opts(gen_cfg, dir.path().join("gen_out"))).unwrap();
    let gen_elapsed = t0.elapsed();

    let mut body = format!(
        "dataset = {}\ncheckpoint = {}\nepochs = {}\nbatch_size = {}\nseed = {}\n",
        dataset.display(),
        checkpoint.display(),
        spec.epochs,
        spec.batch_size,
        spec.model_seed
    );
    if let Some(r) = spec.stop_ratio {
        writeln!(body, "stop_ratio = {r}").unwrap();
    }
    let train_cfg = write_cfg(dir.path(), "train.cfg", &body);
    let t1 = Instant::now();
    let out: TrainOutcome = cmd_train(&opts(train_cfg, dir.path().join("train_out"))).unwrap();
    let train_elapsed = t1.elapsed();

    Fixture {
        dir,
        dataset,
        checkpoint,
        gen_elapsed,
        train_elapsed,
        halved_at_epoch: out.report.halved_at_epoch,
    }
}
