//! Poincaré-ball VAE over sprite frames.
//!
//! Encoder: one tanh hidden layer, then two linear heads — a tangent
//! vector pushed through the origin exp-map to give the posterior mean on
//! the ball, and a softplus(+1e-5) scale. The posterior is the wrapped
//! normal of [`crate::wrapped`]; the prior is the standard wrapped normal
//! at the origin.
//!
//! Decoder: a gyroplane layer (signed hyperbolic distance from the latent
//! to one learned geodesic hyperplane per hidden unit), tanh, then a
//! linear map to pixel logits with a Bernoulli likelihood.
//!
//! All weights, including the gyroplane offsets, live in flat parameter
//! space: offsets are tangent vectors mapped onto the ball by exp-map in
//! the forward pass, so plain Adam applies everywhere and no projection
//! step is needed.

use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{
    exp0_rows, log0_rows, mobius_add_rows, wrapped_log_density_rows, wrapped_sample_rows, Adam,
    Checkpoint, CheckpointError, NodeId, Tape, Tensor,
};
use crate::cones::{latent_event, EmbeddedFrameEvent};
use crate::data::{Dataset, Frame, Sequence};
use crate::geometry::PoincarePoint;
use crate::wrapped::{RandomState, WrappedNormal};

/// Steps averaged when smoothing the loss curve.
pub const SMOOTH_WINDOW: usize = 25;

const SIGMA_FLOOR: f64 = 1e-5;

// Derived RNG streams, disjoint by construction: initialization, one
// shuffle stream per epoch, one noise stream per step.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE_BASE: u64 = 1_000_000;
const STREAM_NOISE_BASE: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum PVaeError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    Diverged { step: u64 },
    #[error("checkpoint does not describe this architecture: {0}")]
    BadCheckpoint(&'static str),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PVaeConfig {
    pub image_side: usize,
    /// Spatial latent dimensions; the space-time used downstream is
    /// `1 + latent_n` dimensional.
    pub latent_n: usize,
    pub hidden: usize,
    pub c: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PVaeConfig {
    fn default() -> Self {
        PVaeConfig {
            image_side: 32,
            latent_n: 8,
            hidden: 600,
            c: 1.0,
            lr: 5e-4,
            epochs: 20,
            batch_size: 64,
            seed: 1,
        }
    }
}

impl PVaeConfig {
    pub fn pixels(&self) -> usize {
        self.image_side * self.image_side
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "enc.w1", "enc.b1", "enc.w2", "enc.b2", "dec.q", "dec.a", "dec.w3", "dec.b3",
];

pub struct PVae {
    cfg: PVaeConfig,
    step: u64,
    w1: Tensor, // [pixels x hidden]
    b1: Tensor, // [1 x hidden]
    w2: Tensor, // [hidden x 2·latent_n]
    b2: Tensor, // [1 x 2·latent_n]
    q: Tensor,  // [hidden x latent_n] gyroplane offsets, tangent space
    a: Tensor,  // [hidden x latent_n] gyroplane normals
    w3: Tensor, // [hidden x pixels]
    b3: Tensor, // [1 x pixels]
}

impl PVae {
    pub fn new(cfg: PVaeConfig) -> Self {
        let (p, h, n) = (cfg.pixels(), cfg.hidden, cfg.latent_n);
        let mut rng = RandomState::new(cfg.seed).substream(STREAM_INIT);
        let w1 = Tensor::randn(p, h, 1.0 / (p as f64).sqrt(), &mut rng);
        let w2 = Tensor::randn(h, 2 * n, 1.0 / (h as f64).sqrt(), &mut rng);
        let a = Tensor::randn(h, n, 1.0 / (n as f64).sqrt(), &mut rng);
        let w3 = Tensor::randn(h, p, 1.0 / (h as f64).sqrt(), &mut rng);
        PVae {
            w1,
            b1: Tensor::zeros(1, h),
            w2,
            b2: Tensor::zeros(1, 2 * n),
            q: Tensor::zeros(h, n),
            a,
            w3,
            b3: Tensor::zeros(1, p),
            step: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &PVaeConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Epoch count for the next [`PVae::train`] call. `train` always runs
    /// this many epochs from wherever the step counter stands, so on a
    /// resumed model it means "this many more".
    pub fn set_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.q, &self.a, &self.w3, &self.b3,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.q,
            &mut self.a,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    // -- inference ---------------------------------------------------------

    /// Posterior for one flattened image.
    pub fn encode(&self, pixels: &[f64]) -> WrappedNormal {
        assert_eq!(pixels.len(), self.cfg.pixels(), "wrong image size");
        let x = Tensor::from_vec(1, pixels.len(), pixels.to_vec());
        let (mu, sigma) = self.encode_batch(&x);
        let (point, _) = PoincarePoint::clamped(mu.data, self.cfg.c);
        WrappedNormal::new(point, sigma.data).expect("sigma has a positive floor")
    }

    /// Posterior means and scales for a `[B x pixels]` batch.
    pub fn encode_batch(&self, x: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(x.cols, self.cfg.pixels(), "wrong image size");
        let n = self.cfg.latent_n;
        let mut tape = Tape::new();
        let xl = tape.leaf(x.clone());
        let w1 = tape.leaf(self.w1.clone());
        let b1 = tape.leaf(self.b1.clone());
        let w2 = tape.leaf(self.w2.clone());
        let b2 = tape.leaf(self.b2.clone());
        let (mu, sigma) = encoder_graph(&mut tape, xl, w1, b1, w2, b2, n, self.cfg.c);
        (tape.value(mu).clone(), tape.value(sigma).clone())
    }

    /// Raw per-unit gyroplane responses (signed hyperbolic distances) for
    /// one latent point — the decoder's first layer before tanh.
    pub fn gyroplane_layer(&self, z: &PoincarePoint) -> Vec<f64> {
        let mut tape = Tape::new();
        let zl = tape.leaf(Tensor::from_vec(1, z.dim(), z.coords().to_vec()));
        let q = tape.leaf(self.q.clone());
        let a = tape.leaf(self.a.clone());
        let g = gyroplane_rows(&mut tape, zl, q, a, self.cfg.c);
        tape.value(g).data.clone()
    }

    /// Pixel logits for one latent point.
    pub fn decode_logits(&self, z: &PoincarePoint) -> Vec<f64> {
        let mut tape = Tape::new();
        let zl = tape.leaf(Tensor::from_vec(1, z.dim(), z.coords().to_vec()));
        let q = tape.leaf(self.q.clone());
        let a = tape.leaf(self.a.clone());
        let w3 = tape.leaf(self.w3.clone());
        let b3 = tape.leaf(self.b3.clone());
        let logits = decoder_graph(&mut tape, zl, q, a, w3, b3, self.cfg.c);
        tape.value(logits).data.clone()
    }

    /// Decoded image as Bernoulli means in [0,1].
    pub fn decode_image(&self, z: &PoincarePoint) -> Vec<f64> {
        self.decode_logits(z)
            .into_iter()
            .map(|l| 1.0 / (1.0 + (-l).exp()))
            .collect()
    }

    /// Encode to the posterior mean and decode back.
    pub fn reconstruct(&self, pixels: &[f64]) -> Vec<f64> {
        self.decode_image(self.encode(pixels).mu())
    }

    /// Mean absolute pixel error of mean-posterior reconstructions over a
    /// `[B x pixels]` batch.
    pub fn reconstruction_mae(&self, x: &Tensor) -> f64 {
        let mut total = 0.0;
        for r in 0..x.rows {
            let rec = self.reconstruct(x.row(r));
            total += x
                .row(r)
                .iter()
                .zip(&rec)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        }
        total / (x.rows * x.cols) as f64
    }

    /// Per-frame posterior means as space-time events, time axis = frame
    /// index (unit step), spatial axes = ball coordinates.
    pub fn embed_sequence(&self, seq: &Sequence) -> Vec<EmbeddedFrameEvent> {
        seq.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let latent = self.encode(f.pixels()).mu().clone();
                let event = latent_event(&latent, i as f64, 1.0);
                EmbeddedFrameEvent {
                    frame_index: i,
                    event,
                    latent,
                }
            })
            .collect()
    }

    // -- objective ---------------------------------------------------------

    /// Monte-Carlo ELBO over a `[B x pixels]` batch, averaged per frame.
    /// Uses `kl_samples` posterior draws for both the reconstruction and
    /// KL expectations (1 during training, more for evaluation).
    pub fn elbo(&self, x: &Tensor, rng: &mut RandomState, kl_samples: usize) -> ElboParts {
        assert!(kl_samples >= 1, "need at least one posterior sample");
        let (b, n) = (x.rows, self.cfg.latent_n);
        let eps: Vec<Tensor> = (0..kl_samples)
            .map(|_| Tensor::randn(b, n, 1.0, rng))
            .collect();
        let vals: Vec<Tensor> = self.tensors().iter().map(|t| (*t).clone()).collect();
        let mut tape = Tape::new();
        let (_, nodes) = build_elbo(&mut tape, &vals, x, &eps, self.cfg.c);
        ElboParts {
            elbo: tape.value(nodes.elbo).data[0],
            recon: tape.value(nodes.recon).data[0],
            kl: tape.value(nodes.kl).data[0],
        }
    }

    // -- training ----------------------------------------------------------

    /// Minimize `-ELBO` with Adam over shuffled minibatches. One CSV row
    /// per step goes to `log` (`step,elbo,recon,kl,wall_ms`). Stops early
    /// once the smoothed loss falls to `stop_ratio` times the initial
    /// smoothed loss, when given.
    ///
    /// Shuffle order and sampling noise are pure functions of the config
    /// seed and the global step, so a resumed run continues exactly where
    /// the checkpoint left off (the optimizer's moment estimates restart,
    /// they are not part of the checkpoint).
    pub fn train(
        &mut self,
        x_all: &Tensor,
        mut log: Option<&mut dyn IoWrite>,
        stop_ratio: Option<f64>,
    ) -> Result<TrainReport, PVaeError> {
        let n_frames = x_all.rows;
        if n_frames == 0 {
            return Err(PVaeError::EmptyDataset);
        }
        let batch = self.cfg.batch_size.max(1).min(n_frames);
        let steps_per_epoch = n_frames / batch;
        let n = self.cfg.latent_n;
        let shapes: Vec<(usize, usize)> =
            self.tensors().iter().map(|t| (t.rows, t.cols)).collect();
        let mut opt = Adam::new(self.cfg.lr, &shapes);
        opt.set_step(self.step);
        let start = Instant::now();
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "step,elbo,recon,kl,wall_ms")?;
        }

        let mut curve: Vec<StepLog> = Vec::with_capacity(self.cfg.epochs * steps_per_epoch);
        let mut initial_smoothed: Option<f64> = None;
        let mut halved_at_epoch = None;
        let mut epochs_run = 0;
        let start_epoch = (self.step / steps_per_epoch.max(1) as u64) as usize;

        'epochs: for epoch in start_epoch..start_epoch + self.cfg.epochs {
            let mut order: Vec<usize> = (0..n_frames).collect();
            let mut shuf = RandomState::new(self.cfg.seed)
                .substream(STREAM_SHUFFLE_BASE + epoch as u64);
            for i in (1..order.len()).rev() {
                order.swap(i, shuf.index(i + 1));
            }

            for s in 0..steps_per_epoch {
                let ids = &order[s * batch..(s + 1) * batch];
                let mut xb = Tensor::zeros(batch, x_all.cols);
                for (r, &id) in ids.iter().enumerate() {
                    xb.data[r * x_all.cols..(r + 1) * x_all.cols]
                        .copy_from_slice(x_all.row(id));
                }
                let mut noise =
                    RandomState::new(self.cfg.seed).substream(STREAM_NOISE_BASE + self.step);
                let eps = [Tensor::randn(batch, n, 1.0, &mut noise)];

                let vals: Vec<Tensor> = self.tensors().iter().map(|t| (*t).clone()).collect();
                let mut tape = Tape::new();
                let (leaves, nodes) = build_elbo(&mut tape, &vals, &xb, &eps, self.cfg.c);
                let loss = tape.value(nodes.loss).data[0];
                if !loss.is_finite() {
                    return Err(PVaeError::Diverged { step: self.step });
                }
                let elbo = tape.value(nodes.elbo).data[0];
                let recon = tape.value(nodes.recon).data[0];
                let kl = tape.value(nodes.kl).data[0];
                debug_assert!(
                    kl >= -3.0 * row_sem(tape.value(nodes.kl_rows)) - 1e-12,
                    "KL batch mean {kl} below -3 MC stderr at step {}",
                    self.step
                );

                let grads = tape.backward(nodes.loss);
                let grad_refs: Vec<&Tensor> = leaves
                    .iter()
                    .map(|&l| grads.get(l).expect("loss depends on every parameter"))
                    .collect();
                opt.step(&mut self.tensors_mut(), &grad_refs);
                self.step += 1;

                let row = StepLog {
                    step: self.step,
                    elbo,
                    recon,
                    kl,
                    wall_ms: start.elapsed().as_millis() as u64,
                };
                if let Some(w) = log.as_deref_mut() {
                    writeln!(
                        w,
                        "{},{:.6},{:.6},{:.6},{}",
                        row.step, row.elbo, row.recon, row.kl, row.wall_ms
                    )?;
                }
                curve.push(row);
            }
            epochs_run += 1;

            if initial_smoothed.is_none() && curve.len() >= SMOOTH_WINDOW {
                initial_smoothed = Some(smoothed(&curve[..SMOOTH_WINDOW]));
            }
            if let (Some(init), true) = (initial_smoothed, curve.len() >= SMOOTH_WINDOW) {
                let now = smoothed(&curve[curve.len() - SMOOTH_WINDOW..]);
                if halved_at_epoch.is_none() && now <= 0.5 * init {
                    halved_at_epoch = Some(epochs_run);
                }
                if let Some(r) = stop_ratio {
                    if now <= r * init {
                        break 'epochs;
                    }
                }
            }
        }

        let head = &curve[..curve.len().min(SMOOTH_WINDOW)];
        let tail = &curve[curve.len().saturating_sub(SMOOTH_WINDOW)..];
        Ok(TrainReport {
            initial_smoothed: smoothed(head),
            final_smoothed: smoothed(tail),
            halved_at_epoch,
            epochs_run,
            curve,
        })
    }

    // -- persistence -------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), PVaeError> {
        let mut tensors: Vec<(String, Tensor)> = PARAM_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let c = &self.cfg;
        tensors.push((
            "cfg".to_string(),
            Tensor::from_vec(
                1,
                7,
                vec![
                    c.image_side as f64,
                    c.latent_n as f64,
                    c.hidden as f64,
                    c.c,
                    c.lr,
                    c.epochs as f64,
                    c.batch_size as f64,
                ],
            ),
        ));
        Checkpoint {
            tensors,
            seed: self.cfg.seed,
            step: self.step,
        }
        .save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PVae, PVaeError> {
        let ck = Checkpoint::load(path)?;
        let cfg_t = ck
            .tensor("cfg")
            .ok_or(PVaeError::BadCheckpoint("missing cfg tensor"))?;
        if cfg_t.len() != 7 {
            return Err(PVaeError::BadCheckpoint("cfg tensor has wrong arity"));
        }
        let d = &cfg_t.data;
        let cfg = PVaeConfig {
            image_side: d[0] as usize,
            latent_n: d[1] as usize,
            hidden: d[2] as usize,
            c: d[3],
            lr: d[4],
            epochs: d[5] as usize,
            batch_size: d[6] as usize,
            seed: ck.seed,
        };
        let mut model = PVae::new(cfg);
        model.step = ck.step;
        for (name, slot) in PARAM_NAMES.iter().zip(model.tensors_mut()) {
            let t = ck
                .tensor(name)
                .ok_or(PVaeError::BadCheckpoint("missing parameter tensor"))?;
            if t.shape() != slot.shape() {
                return Err(PVaeError::BadCheckpoint("parameter shape mismatch"));
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<StepLog>,
    pub initial_smoothed: f64,
    pub final_smoothed: f64,
    /// First epoch (1-based, counted in this run) whose smoothed loss was
    /// at most half the initial smoothed loss.
    pub halved_at_epoch: Option<usize>,
    pub epochs_run: usize,
}

fn smoothed(rows: &[StepLog]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|r| -r.elbo).sum::<f64>() / rows.len() as f64
}

/// Standard error of the per-row values of a `[B x 1]` tensor.
fn row_sem(rows: &Tensor) -> f64 {
    let n = rows.rows as f64;
    if rows.rows < 2 {
        return f64::INFINITY;
    }
    let mean = rows.data.iter().sum::<f64>() / n;
    let var = rows.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

/// Flatten frames into a `[B x pixels]` batch tensor.
pub fn frames_tensor(frames: &[&Frame]) -> Tensor {
    assert!(!frames.is_empty(), "empty frame batch");
    let p = frames[0].pixels().len();
    let mut t = Tensor::zeros(frames.len(), p);
    for (r, f) in frames.iter().enumerate() {
        t.data[r * p..(r + 1) * p].copy_from_slice(f.pixels());
    }
    t
}

/// Every frame of every sequence, in dataset order.
pub fn dataset_tensor(ds: &Dataset) -> Tensor {
    let frames: Vec<&Frame> = ds.sequences.iter().flat_map(|s| s.frames.iter()).collect();
    frames_tensor(&frames)
}

fn encoder_graph(
    tape: &mut Tape,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    n: usize,
    c: f64,
) -> (NodeId, NodeId) {
    let xw = tape.matmul(x, w1);
    let pre = tape.add_row_bias(xw, b1);
    let h = tape.tanh(pre);
    let hw = tape.matmul(h, w2);
    let heads = tape.add_row_bias(hw, b2);
    let u = tape.slice_cols(heads, 0, n);
    let s_raw = tape.slice_cols(heads, n, 2 * n);
    let mu = exp0_rows(tape, u, c);
    let sp = tape.softplus(s_raw);
    let sigma = tape.add_const(sp, SIGMA_FLOOR);
    (mu, sigma)
}

/// Signed hyperbolic distances from each latent row to each unit's
/// geodesic hyperplane:
///
/// ```text
/// w = (-p) (+) z,   p = exp_0(q)
/// out = asinh( 2 sqrt(c) <w, a> / ((1 - c|w|^2) |a|) ) / sqrt(c)
/// ```
///
/// Batched by pairing every z row with every unit row: row `b·H + h` of
/// the flat layout holds (z_b, unit_h), reshaped to `[B x H]` at the end.
fn gyroplane_rows(tape: &mut Tape, z: NodeId, q: NodeId, a: NodeId, c: f64) -> NodeId {
    let bsz = tape.value(z).rows;
    let h = tape.value(q).rows;
    let p = exp0_rows(tape, q, c);
    let negp = tape.neg(p);
    let negp_big = tape.tile_rows(negp, bsz); // row b·H + j = -p[j]
    let z_big = tape.repeat_rows(z, h); // row b·H + j = z[b]
    let w = mobius_add_rows(tape, negp_big, z_big, c);
    let a_big = tape.tile_rows(a, bsz);
    let wa = {
        let m = tape.mul(w, a_big);
        tape.sum_axis1(m)
    };
    let ww = {
        let m = tape.mul(w, w);
        tape.sum_axis1(m)
    };
    let anorm = tape.row_norm(a_big, 1e-12);
    let denom = {
        let one_minus = tape.mul_const(ww, -c);
        let one_minus = tape.add_const(one_minus, 1.0);
        tape.mul(one_minus, anorm)
    };
    let num = tape.mul_const(wa, 2.0 * c.sqrt());
    let arg = tape.div(num, denom);
    let dist = tape.asinh(arg);
    let flat = tape.mul_const(dist, 1.0 / c.sqrt());
    tape.reshape(flat, bsz, h)
}

fn decoder_graph(
    tape: &mut Tape,
    z: NodeId,
    q: NodeId,
    a: NodeId,
    w3: NodeId,
    b3: NodeId,
    c: f64,
) -> NodeId {
    let g = gyroplane_rows(tape, z, q, a, c);
    let t = tape.tanh(g);
    let tw = tape.matmul(t, w3);
    tape.add_row_bias(tw, b3)
}

pub struct ElboNodes {
    pub loss: NodeId,
    pub elbo: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
    pub kl_rows: NodeId,
}

/// The full objective graph. `vals` are the eight parameter tensors in
/// [`PARAM_NAMES`] order; `eps` holds one frozen standard-normal draw per
/// KL sample. Returns the parameter leaves (for gradient lookup) and the
/// scalar nodes.
pub fn build_elbo(
    tape: &mut Tape,
    vals: &[Tensor],
    x: &Tensor,
    eps: &[Tensor],
    c: f64,
) -> (Vec<NodeId>, ElboNodes) {
    let leaves: Vec<NodeId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
    let [w1, b1, w2, b2, q, a, w3, b3] = leaves[..] else {
        panic!("expected eight parameter tensors");
    };
    let bsz = x.rows;
    let n = vals[4].cols;
    let s_count = eps.len();

    let xl = tape.leaf(x.clone());
    let x_inv = tape.leaf(Tensor::from_vec(
        x.rows,
        x.cols,
        x.data.iter().map(|v| 1.0 - v).collect(),
    ));
    let ones = tape.leaf(Tensor::from_vec(bsz, n, vec![1.0; bsz * n]));

    let (mu, sigma) = encoder_graph(tape, xl, w1, b1, w2, b2, n, c);

    let mut recon_rows: Option<NodeId> = None;
    let mut kl_rows: Option<NodeId> = None;
    for e in eps {
        let el = tape.leaf(e.clone());
        let (z, tangent) = wrapped_sample_rows(tape, mu, sigma, el, c);
        let lq = wrapped_log_density_rows(tape, tangent, sigma, c);
        let up = log0_rows(tape, z, c);
        let lp = wrapped_log_density_rows(tape, up, ones, c);
        let kl_k = tape.sub(lq, lp);

        let logits = decoder_graph(tape, z, q, a, w3, b3, c);
        let neg_logits = tape.neg(logits);
        let sp_neg = tape.softplus(neg_logits);
        let sp_pos = tape.softplus(logits);
        let on = tape.mul(xl, sp_neg);
        let off = tape.mul(x_inv, sp_pos);
        let nll = tape.add(on, off);
        let nll_rows = tape.sum_axis1(nll);
        let recon_k = tape.neg(nll_rows);

        recon_rows = Some(match recon_rows {
            None => recon_k,
            Some(prev) => tape.add(prev, recon_k),
        });
        kl_rows = Some(match kl_rows {
            None => kl_k,
            Some(prev) => tape.add(prev, kl_k),
        });
    }
    let recon_rows = tape.mul_const(recon_rows.unwrap(), 1.0 / s_count as f64);
    let kl_rows = tape.mul_const(kl_rows.unwrap(), 1.0 / s_count as f64);

    let elbo_rows = tape.sub(recon_rows, kl_rows);
    let inv_b = 1.0 / bsz as f64;
    let elbo = {
        let s = tape.sum_all(elbo_rows);
        tape.mul_const(s, inv_b)
    };
    let recon = {
        let s = tape.sum_all(recon_rows);
        tape.mul_const(s, inv_b)
    };
    let kl = {
        let s = tape.sum_all(kl_rows);
        tape.mul_const(s, inv_b)
    };
    let loss = tape.neg(elbo);
    (
        leaves,
        ElboNodes {
            loss,
            elbo,
            recon,
            kl,
            kl_rows,
        },
    )
}
