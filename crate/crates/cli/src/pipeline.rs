//! The six commands behind the `lightcone` binary.
//!
//! Every command reads one flat config file, resolves the seed (CLI flag
//! over config key over default), writes its outputs plus a manifest into
//! the run directory, and returns a typed outcome so integration tests can
//! assert on results without re-parsing the files. Exit-code policy lives
//! in [`PipelineError`]: configuration and input problems are code 2,
//! numerical failures 3, and a provably-or-effectively empty cone
//! intersection 4.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use lightcone_core::cones::{
    estimate_aperture, intersection_contains, latent_event, membership_tol, probe_futures,
    probe_pasts, sample_in_section, section_intersection_nonempty, ConeError, EmbeddedFrameEvent,
    LightCone,
};
use lightcone_core::data::{self, Dataset, DatasetConfig};
use lightcone_core::geometry::{Event, PoincarePoint};
use lightcone_core::pvae::{dataset_tensor, PVae, PVaeConfig, PVaeError, TrainReport};
use lightcone_core::wrapped::{RandomState, WrappedNormal};

use crate::config::{Config, ConfigError, SlopeSpec};
use crate::output::{frame_grid, RunDir};
use crate::ssim::choose;

/// Horizons probed by the acceptance-rate experiment.
pub const EXPERIMENT1_HORIZONS: [f64; 3] = [2.0, 10.0, 20.0];

/// Default rejection-sampling budget per cone section.
pub const DEFAULT_BUDGET: usize = 5_000;

/// Default rollout stride: a new cone apex every `k` time steps.
pub const DEFAULT_STRIDE: usize = 2;

/// Candidates decoded when selecting the output frame at the final plane.
const CHOOSE_POOL: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or missing configuration, unreadable inputs, unwritable outputs.
    #[error("{0}")]
    Config(String),
    /// The math broke: divergence, non-finite values, violated invariants.
    #[error("{0}")]
    Numeric(String),
    /// A cone intersection produced no usable samples.
    #[error("{0}")]
    EmptyIntersection(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Numeric(_) => 3,
            PipelineError::EmptyIntersection(_) => 4,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<data::DataError> for PipelineError {
    fn from(e: data::DataError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<PVaeError> for PipelineError {
    fn from(e: PVaeError) -> Self {
        match e {
            PVaeError::Diverged { .. } => PipelineError::Numeric(e.to_string()),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

fn io_err(what: &str, e: std::io::Error) -> PipelineError {
    PipelineError::Config(format!("{what}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    GenData,
    Experiment1,
    Predict,
    Probe,
    Aperture,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::GenData => "gen-data",
            Command::Experiment1 => "experiment1",
            Command::Predict => "predict",
            Command::Probe => "probe",
            Command::Aperture => "aperture",
        }
    }
}

/// Command-line level options; everything else comes from the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub full_scale: bool,
}

/// Dispatch a command, discarding the typed outcome.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<(), PipelineError> {
    match cmd {
        Command::Train => cmd_train(opts).map(drop),
        Command::GenData => cmd_gen_data(opts).map(drop),
        Command::Experiment1 => cmd_experiment1(opts).map(drop),
        Command::Predict => cmd_predict(opts).map(drop),
        Command::Probe => cmd_probe(opts).map(drop),
        Command::Aperture => cmd_aperture(opts).map(drop),
    }
}

// ---------------------------------------------------------------------------
// Shared setup
// ---------------------------------------------------------------------------

struct Ctx {
    cfg: Config,
    seed: u64,
    out: RunDir,
    full_scale: bool,
}

fn ctx(cmd: Command, opts: &RunOptions, default_seed: u64) -> Result<Ctx, PipelineError> {
    let cfg = Config::load(&opts.config)?;
    let seed = match opts.seed {
        Some(s) => {
            cfg.get("seed"); // CLI override wins; still consume the key
            s
        }
        None => cfg.u64_or("seed", default_seed)?,
    };
    let root = opts
        .out
        .clone()
        .or_else(|| cfg.path_opt("out_dir"))
        .unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));
    let out = RunDir::create(root).map_err(|e| io_err("cannot create output directory", e))?;
    Ok(Ctx {
        cfg,
        seed,
        out,
        full_scale: opts.full_scale,
    })
}

impl Ctx {
    /// Reject unused config keys, then write the manifest. Call last.
    fn finish(&self, cmd: Command, extras: &[(String, String)]) -> Result<(), PipelineError> {
        self.cfg.finish()?;
        self.out
            .write_manifest(
                cmd.name(),
                self.seed,
                RandomState::new(self.seed).algorithm(),
                &self.cfg,
                extras,
            )
            .map_err(|e| io_err("cannot write manifest", e))?;
        Ok(())
    }
}

fn load_dataset(cfg: &Config) -> Result<(PathBuf, Dataset), PipelineError> {
    let path = cfg.require_path("dataset")?;
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "dataset not found: {}",
            path.display()
        )));
    }
    let ds = data::load(&path)?;
    Ok((path, ds))
}

fn load_model(cfg: &Config) -> Result<(PathBuf, PVae), PipelineError> {
    let path = cfg.require_path("checkpoint")?;
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    let model = PVae::load(&path)?;
    Ok((path, model))
}

fn frame_of<'d>(
    ds: &'d Dataset,
    seq: usize,
    frame: usize,
) -> Result<&'d data::Frame, PipelineError> {
    let s = ds.sequences.get(seq).ok_or_else(|| {
        PipelineError::Config(format!(
            "seq_index {seq} out of range ({} sequences)",
            ds.n_sequences()
        ))
    })?;
    s.frames.get(frame).ok_or_else(|| {
        PipelineError::Config(format!(
            "frame_index {frame} out of range ({} frames)",
            s.frames.len()
        ))
    })
}

fn embed_frame(model: &PVae, frame: &data::Frame, t: f64) -> EmbeddedFrameEvent {
    let latent = model.encode(frame.pixels()).mu().clone();
    EmbeddedFrameEvent {
        frame_index: t as usize,
        event: latent_event(&latent, t, 1.0),
        latent,
    }
}

// ---------------------------------------------------------------------------
// Slope resolution
// ---------------------------------------------------------------------------

/// Cache encodes by (sequence, frame) index while building aperture inputs:
/// positives and negatives overlap heavily on small datasets.
struct EncodeMemo<'a> {
    model: &'a PVae,
    ds: &'a Dataset,
    cache: HashMap<(usize, usize), PoincarePoint>,
}

impl<'a> EncodeMemo<'a> {
    fn event(&mut self, seq: usize, frame: usize) -> EmbeddedFrameEvent {
        let latent = self
            .cache
            .entry((seq, frame))
            .or_insert_with(|| {
                self.model
                    .encode(self.ds.sequences[seq].frames[frame].pixels())
                    .mu()
                    .clone()
            })
            .clone();
        EmbeddedFrameEvent {
            frame_index: frame,
            event: latent_event(&latent, frame as f64, 1.0),
            latent,
        }
    }
}

/// The config's `slope` directive with its keys fully consumed, so commands
/// can validate the whole config before the (possibly slow) fit runs.
enum SlopeDirective {
    Fixed(f64),
    Estimate { max_seq: usize, n_neg: usize },
}

fn slope_directive(cfg: &Config) -> Result<SlopeDirective, PipelineError> {
    Ok(match cfg.slope_spec()? {
        SlopeSpec::Fixed(v) => SlopeDirective::Fixed(v),
        SlopeSpec::Estimate => SlopeDirective::Estimate {
            max_seq: cfg.usize_or("aperture_sequences", 50)?.max(1),
            n_neg: cfg.usize_or("aperture_negatives", 500)?,
        },
    })
}

/// Turn a slope directive into a number, fitting the aperture from embedded
/// sequences when asked to. Returns the slope and its source tag for the
/// manifest.
fn resolve_slope(
    directive: &SlopeDirective,
    model: &PVae,
    ds: &Dataset,
    seed: u64,
) -> Result<(f64, &'static str), PipelineError> {
    match directive {
        SlopeDirective::Fixed(v) => Ok((*v, "fixed")),
        SlopeDirective::Estimate { max_seq, n_neg } => {
            let slope = fit_aperture(model, ds, seed, *max_seq, *n_neg)?;
            Ok((slope, "estimate"))
        }
    }
}

fn fit_aperture(
    model: &PVae,
    ds: &Dataset,
    seed: u64,
    max_seq: usize,
    n_neg: usize,
) -> Result<f64, PipelineError> {
    if ds.n_sequences() == 0 {
        return Err(PipelineError::Config("dataset has no sequences".into()));
    }
    let mut memo = EncodeMemo {
        model,
        ds,
        cache: HashMap::new(),
    };
    let n_seq = max_seq.min(ds.n_sequences());
    let fps = ds.frames_per_seq();
    let positives: Vec<Vec<EmbeddedFrameEvent>> = (0..n_seq)
        .map(|s| (0..fps).map(|f| memo.event(s, f)).collect())
        .collect();
    // Counter-example pairs are optional: a dataset too small to produce
    // them still yields an estimate from the positive bound alone.
    let mut rng = RandomState::new(seed).substream(2);
    let pairs = match data::negatives(ds, &mut rng, n_neg) {
        Ok(pairs) => pairs,
        Err(data::DataError::DatasetTooSmall) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let negatives: Vec<(EmbeddedFrameEvent, EmbeddedFrameEvent)> = pairs
        .iter()
        .map(|p| (memo.event(p.a.0, p.a.1), memo.event(p.b.0, p.b.1)))
        .collect();
    estimate_aperture(&positives, &negatives)
        .map_err(|e| PipelineError::Config(format!("aperture estimation failed: {e}")))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct GenDataOutcome {
    pub dataset: PathBuf,
    pub n_sequences: usize,
    pub frames_per_seq: usize,
    pub image_side: usize,
}

pub fn cmd_gen_data(opts: &RunOptions) -> Result<GenDataOutcome, PipelineError> {
    let ctx = ctx(Command::GenData, opts, 7)?;
    let base = if ctx.full_scale {
        DatasetConfig::full_scale()
    } else {
        DatasetConfig::default()
    };
    let dcfg = DatasetConfig {
        n_sequences: ctx.cfg.usize_or("n_sequences", base.n_sequences)?,
        frames_per_seq: ctx.cfg.usize_or("frames_per_seq", base.frames_per_seq)?,
        image_side: ctx.cfg.usize_or("image_side", base.image_side)?,
        sprite_px_range: (
            ctx.cfg.f64_or("sprite_px_min", base.sprite_px_range.0)?,
            ctx.cfg.f64_or("sprite_px_max", base.sprite_px_range.1)?,
        ),
        v_max: ctx.cfg.f64_or("v_max", base.v_max)?,
        seed: ctx.seed,
    };
    let path = ctx
        .cfg
        .path_opt("dataset")
        .unwrap_or_else(|| ctx.out.path("dataset.lcds"));
    ctx.cfg.finish()?; // reject typoed keys before any work is done

    let ds = data::generate(&dcfg)?;
    data::save(&ds, &path)?;
    println!(
        "wrote {} ({} sequences x {} frames, side {})",
        path.display(),
        ds.n_sequences(),
        ds.frames_per_seq(),
        ds.image_side
    );

    ctx.finish(
        Command::GenData,
        &[
            ("dataset".into(), path.display().to_string()),
            ("n_sequences".into(), ds.n_sequences().to_string()),
            ("frames_per_seq".into(), ds.frames_per_seq().to_string()),
            ("image_side".into(), ds.image_side.to_string()),
            ("v_max".into(), dcfg.v_max.to_string()),
        ],
    )?;
    Ok(GenDataOutcome {
        dataset: path,
        n_sequences: ds.n_sequences(),
        frames_per_seq: ds.frames_per_seq(),
        image_side: ds.image_side,
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: TrainReport,
    pub seed: u64,
}

pub fn cmd_train(opts: &RunOptions) -> Result<TrainOutcome, PipelineError> {
    let mut ctx = ctx(Command::Train, opts, 1)?;
    let (_, ds) = load_dataset(&ctx.cfg)?;
    let checkpoint = ctx
        .cfg
        .path_opt("checkpoint")
        .unwrap_or_else(|| ctx.out.path("model.lcck"));
    let resume = ctx.cfg.bool_or("resume", false)?;
    let epochs = ctx.cfg.usize_or("epochs", 20)?;
    let stop_ratio = ctx.cfg.f64_opt("stop_ratio")?;
    if let Some(r) = stop_ratio {
        if !(0.0..1.0).contains(&r) {
            return Err(PipelineError::Config(format!(
                "stop_ratio must be in (0, 1), got {r}"
            )));
        }
    }

    let mut model = if resume {
        if !checkpoint.exists() {
            return Err(PipelineError::Config(format!(
                "resume requested but checkpoint not found: {}",
                checkpoint.display()
            )));
        }
        let model = PVae::load(&checkpoint)?;
        let loaded = model.config().clone();
        // A resumed run must continue the exact same schedule; reject any
        // explicitly different hyperparameter rather than silently forking.
        check_resume(&ctx.cfg, "latent_n", loaded.latent_n as f64)?;
        check_resume(&ctx.cfg, "hidden", loaded.hidden as f64)?;
        check_resume(&ctx.cfg, "curvature", loaded.c)?;
        check_resume(&ctx.cfg, "lr", loaded.lr)?;
        check_resume(&ctx.cfg, "batch_size", loaded.batch_size as f64)?;
        if ctx.seed != loaded.seed && (opts.seed.is_some() || ctx.cfg.get("seed").is_some()) {
            return Err(PipelineError::Config(format!(
                "resume keeps the checkpoint's seed {}; drop the conflicting seed {}",
                loaded.seed, ctx.seed
            )));
        }
        if ds.image_side != loaded.image_side {
            return Err(PipelineError::Config(format!(
                "dataset side {} does not match checkpoint side {}",
                ds.image_side, loaded.image_side
            )));
        }
        ctx.seed = loaded.seed;
        model
    } else {
        PVae::new(PVaeConfig {
            image_side: ds.image_side,
            latent_n: ctx.cfg.usize_or("latent_n", 8)?,
            hidden: ctx.cfg.usize_or("hidden", 600)?,
            c: ctx.cfg.f64_or("curvature", 1.0)?,
            lr: ctx.cfg.f64_or("lr", 5e-4)?,
            epochs,
            batch_size: ctx.cfg.usize_or("batch_size", 64)?,
            seed: ctx.seed,
        })
    };
    model.set_epochs(epochs);
    ctx.cfg.finish()?; // reject typoed keys before the long training run

    let x = dataset_tensor(&ds);
    drop(ds); // at desk scale the raw frames and the tensor are ~500 MB each
    let log_path = ctx.out.path("train_log.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| io_err("cannot create train log", e))?,
    );
    let report = model.train(&x, Some(&mut log), stop_ratio)?;
    log.flush().map_err(|e| io_err("cannot write train log", e))?;
    model.save(&checkpoint)?;
    println!(
        "trained {} epochs ({} steps total), smoothed loss {:.3} -> {:.3}, checkpoint {}",
        report.epochs_run,
        model.step_count(),
        report.initial_smoothed,
        report.final_smoothed,
        checkpoint.display()
    );

    let halved = report
        .halved_at_epoch
        .map_or("never".to_string(), |e| e.to_string());
    ctx.finish(
        Command::Train,
        &[
            ("checkpoint".into(), checkpoint.display().to_string()),
            ("epochs_run".into(), report.epochs_run.to_string()),
            ("steps".into(), model.step_count().to_string()),
            (
                "final_smoothed".into(),
                format!("{:.6}", report.final_smoothed),
            ),
            ("halved_at_epoch".into(), halved),
        ],
    )?;
    Ok(TrainOutcome {
        checkpoint,
        log: log_path,
        report,
        seed: ctx.seed,
    })
}

/// On resume, an explicitly-present key must match the checkpoint value.
fn check_resume(cfg: &Config, key: &str, loaded: f64) -> Result<(), PipelineError> {
    if let Some(v) = cfg.f64_opt(key)? {
        if v != loaded {
            return Err(PipelineError::Config(format!(
                "{key} = {v} conflicts with the checkpoint's {loaded}; resumed runs keep their schedule"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment1
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct HorizonRow {
    pub label: String,
    pub attempted: usize,
    pub accepted: usize,
}

impl HorizonRow {
    pub fn rate(&self) -> f64 {
        self.accepted as f64 / self.attempted as f64
    }
}

#[derive(Debug)]
pub struct Experiment1Outcome {
    pub slope: f64,
    pub rows: Vec<HorizonRow>,
    pub report_csv: PathBuf,
    pub grid: PathBuf,
}

/// Acceptance rates of prior samples under a single future cone, at growing
/// horizons, against an unconstrained baseline.
///
/// Every horizon filters the *same* proposal stream (a fresh substream per
/// horizon, same seed), so the rates are monotone by construction: the
/// cone's slice at a later time is a strictly larger ball around the same
/// center, and a draw accepted at one horizon is accepted at every later
/// one.
pub fn cmd_experiment1(opts: &RunOptions) -> Result<Experiment1Outcome, PipelineError> {
    let ctx = ctx(Command::Experiment1, opts, 7)?;
    let (_, model) = load_model(&ctx.cfg)?;
    let (_, ds) = load_dataset(&ctx.cfg)?;
    let default_samples = if ctx.full_scale { 100_000 } else { 10_000 };
    let samples = ctx.cfg.usize_or("samples", default_samples)?.max(1);
    let seq_index = ctx.cfg.usize_or("seq_index", 0)?;
    let frame_index = ctx.cfg.usize_or("frame_index", 0)?;
    let grid_cols = ctx.cfg.usize_or("grid_cols", 8)?.max(1);
    let directive = slope_directive(&ctx.cfg)?;
    ctx.cfg.finish()?; // reject typoed keys before fitting or sampling
    let reference = frame_of(&ds, seq_index, frame_index)?;
    let (slope, slope_source) = resolve_slope(&directive, &model, &ds, ctx.seed)?;
    let apex = embed_frame(&model, reference, 0.0);
    let cone = LightCone::future(apex.event.clone(), slope)
        .map_err(|e| PipelineError::Numeric(e.to_string()))?;
    let mcfg = model.config();
    let prior = WrappedNormal::standard(mcfg.latent_n, mcfg.c);
    let side = mcfg.image_side;

    let mut rows = Vec::new();
    let mut cells: Vec<Option<Vec<f64>>> = Vec::new();
    for &t in &EXPERIMENT1_HORIZONS {
        let mut rng = RandomState::new(ctx.seed).substream(1);
        let cones = std::slice::from_ref(&cone);
        let (accepted, decoded) =
            match sample_in_section(cones, t, &prior, |z, tp| latent_event(z, tp, 1.0), &mut rng, samples)
            {
                Ok(s) => {
                    let decoded: Vec<Vec<f64>> = s
                        .samples
                        .iter()
                        .take(grid_cols)
                        .map(|(_, z)| model.decode_image(z))
                        .collect();
                    (s.accepted(), decoded)
                }
                Err(ConeError::ZeroAccepted { .. }) => {
                    eprintln!("note: no samples accepted at horizon {t} ({samples} trials)");
                    (0, Vec::new())
                }
                Err(e) => return Err(PipelineError::Numeric(e.to_string())),
            };
        for c in 0..grid_cols {
            cells.push(decoded.get(c).cloned());
        }
        rows.push(HorizonRow {
            label: format!("{t}"),
            attempted: samples,
            accepted,
        });
    }

    // Unconstrained baseline: the same prior with no cone filter. Its
    // acceptance is 1 by definition; the grid row shows what the filter is
    // buying.
    let mut rng = RandomState::new(ctx.seed).substream(3);
    for _ in 0..grid_cols {
        cells.push(Some(model.decode_image(&prior.sample(&mut rng))));
    }
    rows.push(HorizonRow {
        label: "unconstrained".to_string(),
        attempted: samples,
        accepted: samples,
    });

    let mut csv = String::from("horizon,attempted,accepted,rate\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.label,
            r.attempted,
            r.accepted,
            r.rate()
        ));
    }
    let report_csv = ctx
        .out
        .write("report.csv", csv.as_bytes())
        .map_err(|e| io_err("cannot write report.csv", e))?;
    let grid = ctx.out.path("grid.pgm");
    frame_grid(&cells, rows.len(), grid_cols, side)
        .write(&grid)
        .map_err(|e| io_err("cannot write grid.pgm", e))?;
    for r in &rows {
        println!("horizon {:>13}: {}/{} accepted ({:.4})", r.label, r.accepted, r.attempted, r.rate());
    }

    ctx.finish(
        Command::Experiment1,
        &[
            ("slope".into(), slope.to_string()),
            ("slope_source".into(), slope_source.to_string()),
            ("samples".into(), samples.to_string()),
        ],
    )?;
    Ok(Experiment1Outcome {
        slope,
        rows,
        report_csv,
        grid,
    })
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RolloutRow {
    pub branch: usize,
    pub time: f64,
    pub attempted: usize,
    pub accepted: usize,
    /// Set on the final plane only, where a frame is chosen.
    pub chosen_ssim: Option<f64>,
}

#[derive(Debug)]
pub struct BranchPrediction {
    pub branch: usize,
    pub chosen: Vec<f64>,
    pub chosen_ssim: f64,
    pub frame: PathBuf,
    /// Accepted latents re-verified against the full cone intersection.
    pub latents_verified: usize,
}

#[derive(Debug)]
pub struct PredictOutcome {
    pub slope: f64,
    pub t_final: f64,
    pub rows: Vec<RolloutRow>,
    pub branches: Vec<BranchPrediction>,
    pub report_csv: PathBuf,
}

/// Causal future-frame synthesis.
///
/// The observed prefix is embedded frame by frame; each embedding anchors a
/// future cone. The rollout then advances in strides of `k`: sample the
/// current intersection's time slice, promote one accepted latent to a new
/// cone apex, and repeat. At the final plane the accepted pool is decoded
/// and the frame most similar to the first observed frame wins.
pub fn cmd_predict(opts: &RunOptions) -> Result<PredictOutcome, PipelineError> {
    let ctx = ctx(Command::Predict, opts, 7)?;
    let (_, model) = load_model(&ctx.cfg)?;
    let (_, ds) = load_dataset(&ctx.cfg)?;
    let seq_index = ctx.cfg.usize_or("seq_index", 0)?;
    let prefix_len = ctx.cfg.usize_or("prefix_len", 1)?.max(1);
    let total_cones = ctx.cfg.usize_or("cones", 2)?;
    let stride = ctx.cfg.usize_or("stride", DEFAULT_STRIDE)?.max(1);
    let budget = ctx.cfg.usize_or("budget", DEFAULT_BUDGET)?.max(1);
    let branches = ctx.cfg.usize_or("branches", 1)?.max(1);
    let prior_proposal = match ctx.cfg.get("proposal").unwrap_or("apex") {
        "apex" => false,
        "prior" => true,
        other => {
            return Err(PipelineError::Config(format!(
                "proposal must be `apex` or `prior`, got {other:?}"
            )))
        }
    };
    let directive = slope_directive(&ctx.cfg)?;
    ctx.cfg.finish()?; // reject typoed keys before fitting or rolling out
    if total_cones < prefix_len {
        return Err(PipelineError::Config(format!(
            "cones = {total_cones} is fewer than the {prefix_len} prefix frames"
        )));
    }
    let seq = ds
        .sequences
        .get(seq_index)
        .ok_or_else(|| PipelineError::Config(format!("seq_index {seq_index} out of range")))?;
    if seq.frames.len() < prefix_len {
        return Err(PipelineError::Config(format!(
            "prefix_len {prefix_len} exceeds the sequence's {} frames",
            seq.frames.len()
        )));
    }
    let (slope, slope_source) = resolve_slope(&directive, &model, &ds, ctx.seed)?;
    let mcfg = model.config().clone();
    let side = mcfg.image_side;
    let reference = seq.frames[0].pixels().to_vec();

    let prefix: Vec<EmbeddedFrameEvent> = (0..prefix_len)
        .map(|i| embed_frame(&model, &seq.frames[i], i as f64))
        .collect();
    let base_cones: Vec<LightCone> = prefix
        .iter()
        .map(|e| LightCone::future(e.event.clone(), slope))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::Numeric(e.to_string()))?;

    let rolls = total_cones - prefix_len;
    let t_last_prefix = (prefix_len - 1) as f64;
    let t_final = t_last_prefix + ((rolls + 1) * stride) as f64;
    let prior = WrappedNormal::standard(mcfg.latent_n, mcfg.c);

    let mut rows = Vec::new();
    let mut out_branches = Vec::new();
    for b in 0..branches {
        let mut rng = RandomState::new(ctx.seed).substream(100 + b as u64);
        let mut cones = base_cones.clone();
        let mut latest = prefix.last().unwrap().clone();

        for j in 1..=rolls {
            let t_s = t_last_prefix + (j * stride) as f64;
            let s = sample_plane(
                &cones, t_s, &latest, slope, &prior, prior_proposal, &mut rng, budget,
            )?;
            let (event, latent) = s.samples[0].clone();
            rows.push(RolloutRow {
                branch: b,
                time: t_s,
                attempted: s.attempted,
                accepted: s.accepted(),
                chosen_ssim: None,
            });
            cones.push(
                LightCone::future(event.clone(), slope)
                    .map_err(|e| PipelineError::Numeric(e.to_string()))?,
            );
            latest = EmbeddedFrameEvent {
                frame_index: t_s as usize,
                event,
                latent,
            };
        }

        let s = sample_plane(
            &cones, t_final, &latest, slope, &prior, prior_proposal, &mut rng, budget,
        )?;
        let pool = &s.samples[..s.samples.len().min(CHOOSE_POOL)];
        let verified = verify_pool(&cones, pool)?;
        let decoded: Vec<Vec<f64>> = pool.iter().map(|(_, z)| model.decode_image(z)).collect();
        let (idx, chosen_ssim) = choose(&decoded, &reference, side)
            .expect("pool is nonempty after a successful sample");
        rows.push(RolloutRow {
            branch: b,
            time: t_final,
            attempted: s.attempted,
            accepted: s.accepted(),
            chosen_ssim: Some(chosen_ssim),
        });

        let frame = ctx.out.path(&format!("predicted_b{b}.pgm"));
        frame_grid(&[Some(decoded[idx].clone())], 1, 1, side)
            .write(&frame)
            .map_err(|e| io_err("cannot write predicted frame", e))?;
        let n_cand = decoded.len().min(8);
        let cand_cells: Vec<Option<Vec<f64>>> =
            decoded.iter().take(n_cand).cloned().map(Some).collect();
        frame_grid(&cand_cells, 1, n_cand, side)
            .write(&ctx.out.path(&format!("candidates_b{b}.pgm")))
            .map_err(|e| io_err("cannot write candidates grid", e))?;
        println!(
            "branch {b}: predicted frame at t = {t_final} (ssim {chosen_ssim:.4} vs first observed frame)"
        );
        out_branches.push(BranchPrediction {
            branch: b,
            chosen: decoded[idx].clone(),
            chosen_ssim,
            frame,
            latents_verified: verified,
        });
    }

    let mut csv = String::from("branch,time,attempted,accepted,rate,chosen_ssim\n");
    for r in &rows {
        let ssim_col = r.chosen_ssim.map_or(String::new(), |v| format!("{v:.6}"));
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{}\n",
            r.branch,
            r.time,
            r.attempted,
            r.accepted,
            r.accepted as f64 / r.attempted as f64,
            ssim_col
        ));
    }
    let report_csv = ctx
        .out
        .write("report.csv", csv.as_bytes())
        .map_err(|e| io_err("cannot write report.csv", e))?;

    ctx.finish(
        Command::Predict,
        &[
            ("slope".into(), slope.to_string()),
            ("slope_source".into(), slope_source.to_string()),
            ("t_final".into(), t_final.to_string()),
            ("cones".into(), total_cones.to_string()),
        ],
    )?;
    Ok(PredictOutcome {
        slope,
        t_final,
        rows,
        branches: out_branches,
        report_csv,
    })
}

/// Sample the cones' intersection on the time-`t` plane, with the proposal
/// centered at the newest apex and sized to the stride's reachable radius
/// (`sigma = slope * dt`), so acceptance stays scale-free. Failures turn
/// into an empty-intersection error carrying the earliest plane the overlap
/// certificate still admits.
#[allow(clippy::too_many_arguments)]
fn sample_plane(
    cones: &[LightCone],
    t: f64,
    latest: &EmbeddedFrameEvent,
    slope: f64,
    prior: &WrappedNormal,
    prior_proposal: bool,
    rng: &mut RandomState,
    budget: usize,
) -> Result<lightcone_core::cones::SectionSample, PipelineError> {
    if !section_intersection_nonempty(cones, t)
        .map_err(|e| PipelineError::Numeric(e.to_string()))?
    {
        return Err(empty_intersection(cones, t, 0));
    }
    let proposal = if prior_proposal {
        prior.clone()
    } else {
        let dt = t - latest.event.t;
        let sigma = vec![slope * dt; latest.latent.coords().len()];
        WrappedNormal::new(latest.latent.clone(), sigma)
            .map_err(|e| PipelineError::Numeric(e.to_string()))?
    };
    match sample_in_section(cones, t, &proposal, |z, tp| latent_event(z, tp, 1.0), rng, budget) {
        Ok(s) => Ok(s),
        Err(ConeError::ZeroAccepted { trials }) => Err(empty_intersection(cones, t, trials)),
        Err(e) => Err(PipelineError::Numeric(e.to_string())),
    }
}

fn empty_intersection(cones: &[LightCone], t: f64, trials: usize) -> PipelineError {
    let detail = if trials == 0 {
        "the pairwise overlap certificate rejects the slice".to_string()
    } else {
        format!("no proposals accepted in {trials} trials")
    };
    let feasible = earliest_feasible(cones, t, t + 100.0)
        .map_or("no feasible slice within 100 steps".to_string(), |ft| {
            format!("earliest feasible slice is t = {ft}")
        });
    PipelineError::EmptyIntersection(format!(
        "cone intersection at t = {t} is empty ({detail}); {feasible}"
    ))
}

/// First integer time in `[from, to]` whose slice passes the overlap
/// certificate.
fn earliest_feasible(cones: &[LightCone], from: f64, to: f64) -> Option<f64> {
    let mut t = from.ceil();
    while t <= to {
        if section_intersection_nonempty(cones, t) == Ok(true) {
            return Some(t);
        }
        t += 1.0;
    }
    None
}

/// Re-check every pooled latent against the full intersection with the
/// scale-aware tolerance; a violation means the sampler and the membership
/// predicate disagree, which is a numerical failure, not bad luck.
fn verify_pool(
    cones: &[LightCone],
    pool: &[(Event, PoincarePoint)],
) -> Result<usize, PipelineError> {
    for (e, _) in pool {
        let tol = cones
            .iter()
            .map(|c| membership_tol(c, e))
            .fold(0.0, f64::max);
        if !intersection_contains(cones, e, tol).map_err(|er| PipelineError::Numeric(er.to_string()))? {
            return Err(PipelineError::Numeric(format!(
                "accepted latent at t = {} fails the intersection membership re-check",
                e.t
            )));
        }
    }
    Ok(pool.len())
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Future,
    Past,
}

impl Direction {
    fn name(&self) -> &'static str {
        match self {
            Direction::Future => "future",
            Direction::Past => "past",
        }
    }
}

#[derive(Debug)]
pub struct ProbeOutcome {
    pub slope: f64,
    pub horizon: f64,
    pub direction: Direction,
    pub state_event: Event,
    /// One event per gallery member, on the probed plane.
    pub events: Vec<Event>,
    pub gallery: PathBuf,
}

/// Decode a gallery of states reachable from (or leading to) one observed
/// frame at a given horizon.
///
/// Horizon zero is the degenerate slice — the cone pinches to its apex — so
/// by convention it decodes draws from the latent neighborhood of the frame
/// instead of filtering, giving "reconstructions and near variants".
pub fn cmd_probe(opts: &RunOptions) -> Result<ProbeOutcome, PipelineError> {
    let ctx = ctx(Command::Probe, opts, 7)?;
    let (_, model) = load_model(&ctx.cfg)?;
    let (_, ds) = load_dataset(&ctx.cfg)?;
    let direction = match ctx.cfg.require("direction")? {
        "future" => Direction::Future,
        "past" => Direction::Past,
        other => {
            return Err(PipelineError::Config(format!(
                "direction must be `future` or `past`, got {other:?}"
            )))
        }
    };
    let horizon = ctx.cfg.f64_or("horizon", 4.0)?;
    if horizon < 0.0 {
        return Err(PipelineError::Config(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    let seq_index = ctx.cfg.usize_or("seq_index", 0)?;
    let frame_index = ctx.cfg.usize_or("frame_index", 0)?;
    let k = ctx.cfg.usize_or("k", 8)?.max(1);
    let budget = ctx.cfg.usize_or("budget", DEFAULT_BUDGET)?.max(1);
    let sigma_key = ctx.cfg.f64_opt("sigma")?;
    if let Some(s) = sigma_key {
        if s <= 0.0 {
            return Err(PipelineError::Config(format!(
                "sigma must be positive, got {s}"
            )));
        }
    }
    let directive = slope_directive(&ctx.cfg)?;
    ctx.cfg.finish()?; // reject typoed keys before fitting or probing
    let frame = frame_of(&ds, seq_index, frame_index)?;
    let (slope, slope_source) = resolve_slope(&directive, &model, &ds, ctx.seed)?;
    let sigma_default = if horizon > 0.0 { slope * horizon } else { 0.05 };
    let sigma = sigma_key.unwrap_or(sigma_default);

    let state = embed_frame(&model, frame, frame_index as f64);
    let n = model.config().latent_n;
    let side = model.config().image_side;
    let proposal = WrappedNormal::new(state.latent.clone(), vec![sigma; n])
        .map_err(|e| PipelineError::Numeric(e.to_string()))?;
    let mut rng = RandomState::new(ctx.seed).substream(1);

    let (events, latents, attempted): (Vec<Event>, Vec<PoincarePoint>, usize) = if horizon == 0.0 {
        let zs: Vec<PoincarePoint> = (0..k).map(|_| proposal.sample(&mut rng)).collect();
        let evs = zs
            .iter()
            .map(|z| latent_event(z, state.event.t, 1.0))
            .collect();
        (evs, zs, k)
    } else {
        let embed = |z: &PoincarePoint, tp: f64| latent_event(z, tp, 1.0);
        let result = match direction {
            Direction::Future => {
                probe_futures(&state, horizon, slope, &proposal, embed, &mut rng, k, budget)
            }
            Direction::Past => {
                probe_pasts(&state, horizon, slope, &proposal, embed, &mut rng, k, budget)
            }
        };
        match result {
            Ok(s) => {
                let (evs, zs) = s.samples.into_iter().unzip();
                (evs, zs, s.attempted)
            }
            Err(ConeError::ZeroAccepted { trials }) => {
                return Err(PipelineError::EmptyIntersection(format!(
                    "no {} states accepted at horizon {horizon} after {trials} trials; \
                     a wider `sigma` may help",
                    direction.name()
                )))
            }
            Err(e) => return Err(PipelineError::Numeric(e.to_string())),
        }
    };

    let cells: Vec<Option<Vec<f64>>> = latents
        .iter()
        .map(|z| Some(model.decode_image(z)))
        .collect();
    let gallery = ctx
        .out
        .path(&format!("gallery_{}_h{}.pgm", direction.name(), horizon));
    frame_grid(&cells, 1, cells.len(), side)
        .write(&gallery)
        .map_err(|e| io_err("cannot write gallery", e))?;

    let csv = format!(
        "direction,horizon,attempted,accepted,gallery\n{},{},{},{},{}\n",
        direction.name(),
        horizon,
        attempted,
        events.len(),
        gallery
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
    );
    ctx.out
        .write("report.csv", csv.as_bytes())
        .map_err(|e| io_err("cannot write report.csv", e))?;
    println!(
        "probe {} h = {horizon}: {} gallery members -> {}",
        direction.name(),
        events.len(),
        gallery.display()
    );

    ctx.finish(
        Command::Probe,
        &[
            ("slope".into(), slope.to_string()),
            ("slope_source".into(), slope_source.to_string()),
            ("direction".into(), direction.name().to_string()),
            ("horizon".into(), horizon.to_string()),
            ("members".into(), events.len().to_string()),
        ],
    )?;
    Ok(ProbeOutcome {
        slope,
        horizon,
        direction,
        state_event: state.event,
        events,
        gallery,
    })
}

// ---------------------------------------------------------------------------
// aperture
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ApertureOutcome {
    pub slope: f64,
    pub file: PathBuf,
}

/// Fit the cone aperture from a dataset and checkpoint, and write it in a
/// form other commands' configs can include verbatim.
pub fn cmd_aperture(opts: &RunOptions) -> Result<ApertureOutcome, PipelineError> {
    let ctx = ctx(Command::Aperture, opts, 7)?;
    let (_, model) = load_model(&ctx.cfg)?;
    let (_, ds) = load_dataset(&ctx.cfg)?;
    let max_seq = ctx.cfg.usize_or("aperture_sequences", 50)?.max(1);
    let n_neg = ctx.cfg.usize_or("aperture_negatives", 500)?;
    ctx.cfg.finish()?; // reject typoed keys before fitting

    let slope = fit_aperture(&model, &ds, ctx.seed, max_seq, n_neg)?;
    println!("slope = {slope}");
    let file = ctx
        .out
        .write("aperture.txt", format!("slope = {slope}\n").as_bytes())
        .map_err(|e| io_err("cannot write aperture.txt", e))?;

    ctx.finish(
        Command::Aperture,
        &[("slope".into(), slope.to_string())],
    )?;
    Ok(ApertureOutcome { slope, file })
}
