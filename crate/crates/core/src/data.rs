//! Procedural sprite sequences: a deterministic stand-in for a
//! moving-digit video corpus.
//!
//! Each sequence is one anti-aliased glyph (disc, ring, or cross — shape
//! parameters derived from the sprite id) translated continuously across
//! the frame, bouncing off the borders so it never clips. Frames are
//! quantized to 8-bit levels at generation time, so a saved dataset
//! reloads bit-identically.
//!
//! Rendering draws the glyph once into a small base raster and then
//! places that raster at each continuous position with bilinear weights.
//! Bilinear placement is linear in the raster, so total mass is conserved
//! and the centroid moves by exactly the applied velocity (both up to
//! 8-bit rounding).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::wrapped::RandomState;

/// Reference frame side the sprite size range is quoted at; other sides
/// scale the glyph proportionally.
pub const REFERENCE_SIDE: usize = 32;

/// Fixed stream used to derive per-id glyph parameters, independent of
/// the dataset seed so sprite 17 looks the same in every dataset.
const SPRITE_SHAPE_SEED: u64 = 0x53505249;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad config: {0}")]
    BadConfig(&'static str),
    #[error("sprite extent {extent:.1}px does not fit a {side}px frame")]
    SpriteTooLarge { extent: f64, side: usize },
    #[error("dataset too small for negative pairs (needs 2+ sequences or 11+ frames)")]
    DatasetTooSmall,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u16),
    #[error("corrupt dataset: {0}")]
    Corrupt(&'static str),
}

/// Single grayscale frame, values on the 8-bit grid k/255 in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    side: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.side + x]
    }

    /// Total intensity.
    pub fn mass(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Intensity-weighted mean position `(x, y)` in pixel-center
    /// coordinates; `None` for an all-black frame.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let m = self.mass();
        if m <= 0.0 {
            return None;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.side {
            for x in 0..self.side {
                let v = self.at(x, y);
                sx += v * (x as f64 + 0.5);
                sy += v * (y as f64 + 0.5);
            }
        }
        Some((sx / m, sy / m))
    }

    /// P5 binary PGM, one byte per pixel.
    pub fn write_pgm(&self, path: &Path) -> Result<(), DataError> {
        let mut buf = format!("P5\n{} {}\n255\n", self.side, self.side).into_bytes();
        buf.extend(self.pixels.iter().map(|&v| (v * 255.0).round() as u8));
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub sprite_id: u32,
    pub frames: Vec<Frame>,
    /// Displacement applied between consecutive frames (post-bounce), one
    /// entry per step: `trajectory[i]` moves frame `i` to frame `i+1`.
    pub trajectory: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_side: usize,
    pub seed: u64,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn frames_per_seq(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.frames.len())
    }

    pub fn n_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n_sequences: usize,
    pub frames_per_seq: usize,
    pub image_side: usize,
    /// Glyph extent range in reference pixels (at a 32px frame); scaled by
    /// `image_side / 32` before use.
    pub sprite_px_range: (f64, f64),
    pub v_max: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    /// Desk-scale default: 2,000 sequences of 30 frames. [`full_scale`]
    /// restores the 10,000-sequence corpus.
    ///
    /// [`full_scale`]: DatasetConfig::full_scale
    fn default() -> Self {
        DatasetConfig {
            n_sequences: 2_000,
            frames_per_seq: 30,
            image_side: 32,
            sprite_px_range: (18.0, 25.0),
            v_max: 1.0,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn full_scale() -> Self {
        DatasetConfig {
            n_sequences: 10_000,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GlyphKind {
    Disc,
    Ring,
    Cross,
}

/// Analytic glyph description in its own continuous coordinates, origin
/// at the glyph center.
struct Glyph {
    kind: GlyphKind,
    /// Full extent (diameter / arm span) in frame pixels.
    extent: f64,
    /// Ring: inner radius as a fraction of the outer. Cross: arm
    /// half-width as a fraction of the half-extent.
    shape_frac: f64,
    /// Cross rotation in radians.
    angle: f64,
}

impl Glyph {
    /// Shape parameters are a pure function of the sprite id.
    fn for_id(id: u32, extent_range: (f64, f64), scale: f64) -> Glyph {
        let mut rng = RandomState::new(SPRITE_SHAPE_SEED).substream(id as u64);
        let kind = match id % 3 {
            0 => GlyphKind::Disc,
            1 => GlyphKind::Ring,
            _ => GlyphKind::Cross,
        };
        let extent = rng.range(extent_range.0, extent_range.1) * scale;
        let shape_frac = match kind {
            GlyphKind::Disc => 0.0,
            GlyphKind::Ring => rng.range(0.45, 0.65),
            GlyphKind::Cross => rng.range(0.25, 0.4),
        };
        let angle = match kind {
            GlyphKind::Cross => rng.range(0.0, std::f64::consts::FRAC_PI_2),
            _ => 0.0,
        };
        Glyph {
            kind,
            extent,
            shape_frac,
            angle,
        }
    }

    /// Signed distance to the glyph boundary (negative inside).
    fn sdf(&self, x: f64, y: f64) -> f64 {
        let half = self.extent / 2.0;
        match self.kind {
            GlyphKind::Disc => (x * x + y * y).sqrt() - half,
            GlyphKind::Ring => {
                let inner = half * self.shape_frac;
                let mid = (half + inner) / 2.0;
                let thick = (half - inner) / 2.0;
                ((x * x + y * y).sqrt() - mid).abs() - thick
            }
            GlyphKind::Cross => {
                let (s, c) = self.angle.sin_cos();
                let (rx, ry) = (c * x + s * y, -s * x + c * y);
                let hw = half * self.shape_frac;
                rect_sdf(rx, ry, half, hw).min(rect_sdf(rx, ry, hw, half))
            }
        }
    }

    /// Anti-aliased base raster, glyph centered. Pixel (ix, iy) is
    /// sampled at its center; coverage ramps across one pixel of SDF.
    fn raster(&self) -> Raster {
        let side = self.extent.ceil() as usize + 3;
        let center = side as f64 / 2.0;
        let mut data = vec![0.0; side * side];
        for iy in 0..side {
            for ix in 0..side {
                let d = self.sdf(ix as f64 + 0.5 - center, iy as f64 + 0.5 - center);
                data[iy * side + ix] = (0.5 - d).clamp(0.0, 1.0);
            }
        }
        Raster { side, data }
    }
}

fn rect_sdf(x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    let qx = x.abs() - hx;
    let qy = y.abs() - hy;
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0)
}

struct Raster {
    side: usize,
    data: Vec<f64>,
}

impl Raster {
    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let ix = fx.floor();
        let iy = fy.floor();
        let wx = fx - ix;
        let wy = fy - iy;
        let mut acc = 0.0;
        for (dy, wyv) in [(0i64, 1.0 - wy), (1, wy)] {
            for (dx, wxv) in [(0i64, 1.0 - wx), (1, wx)] {
                let px = ix as i64 + dx;
                let py = iy as i64 + dy;
                if px >= 0 && py >= 0 && (px as usize) < self.side && (py as usize) < self.side {
                    acc += wxv * wyv * self.data[py as usize * self.side + px as usize];
                }
            }
        }
        acc
    }
}

/// Place the raster with its center at `(cx, cy)` in a fresh frame and
/// quantize to the 8-bit grid.
fn render_frame(raster: &Raster, cx: f64, cy: f64, side: usize) -> Frame {
    let half = raster.side as f64 / 2.0;
    let mut pixels = vec![0.0; side * side];
    // Only pixels the raster can touch need sampling.
    let x0 = ((cx - half - 1.0).floor().max(0.0)) as usize;
    let y0 = ((cy - half - 1.0).floor().max(0.0)) as usize;
    let x1 = ((cx + half + 1.0).ceil() as usize).min(side);
    let y1 = ((cy + half + 1.0).ceil() as usize).min(side);
    for ty in y0..y1 {
        for tx in x0..x1 {
            let v = raster.sample(tx as f64 + 0.5 - cx + half, ty as f64 + 0.5 - cy + half);
            pixels[ty * side + tx] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
    Frame { side, pixels }
}

/// Reflect `p` into `[lo, hi]`, flipping `v`'s sign on each bounce.
fn bounce(mut p: f64, mut v: f64, lo: f64, hi: f64) -> (f64, f64) {
    loop {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// Generate the full corpus. Deterministic in the config; each sequence
/// draws from its own derived stream, so sequence `i` is the same no
/// matter how many others are generated.
pub fn generate(cfg: &DatasetConfig) -> Result<Dataset, DataError> {
    if cfg.n_sequences == 0 || cfg.frames_per_seq == 0 {
        return Err(DataError::BadConfig("empty dataset requested"));
    }
    if cfg.image_side < 4 {
        return Err(DataError::BadConfig("image side must be at least 4"));
    }
    if !(cfg.sprite_px_range.0 > 0.0 && cfg.sprite_px_range.1 >= cfg.sprite_px_range.0) {
        return Err(DataError::BadConfig("bad sprite size range"));
    }
    if cfg.v_max < 0.0 || !cfg.v_max.is_finite() {
        return Err(DataError::BadConfig("v_max must be finite and nonnegative"));
    }
    let scale = cfg.image_side as f64 / REFERENCE_SIDE as f64;
    // Largest possible raster must leave room to move (or at least sit).
    let max_extent = cfg.sprite_px_range.1 * scale;
    let max_raster = max_extent.ceil() + 3.0;
    if max_raster / 2.0 + 1.0 > cfg.image_side as f64 / 2.0 {
        return Err(DataError::SpriteTooLarge {
            extent: max_extent,
            side: cfg.image_side,
        });
    }

    let root = RandomState::new(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let mut rng = root.substream(i as u64);
        let glyph = Glyph::for_id(i as u32, cfg.sprite_px_range, scale);
        let raster = glyph.raster();
        let margin = raster.side as f64 / 2.0 + 1.0;
        let (lo, hi) = (margin, cfg.image_side as f64 - margin);

        let mut cx = rng.range(lo, hi);
        let mut cy = rng.range(lo, hi);
        let speed = cfg.v_max * rng.range(0.3, 1.0);
        let dir = rng.range(0.0, 2.0 * std::f64::consts::PI);
        let (mut vx, mut vy) = (speed * dir.cos(), speed * dir.sin());

        let mut frames = Vec::with_capacity(cfg.frames_per_seq);
        let mut trajectory = Vec::with_capacity(cfg.frames_per_seq.saturating_sub(1));
        frames.push(render_frame(&raster, cx, cy, cfg.image_side));
        for _ in 1..cfg.frames_per_seq {
            // Base velocity plus bounded jitter, speed clamped to v_max.
            let jmag = rng.range(0.0, 0.1 * cfg.v_max);
            let jdir = rng.range(0.0, 2.0 * std::f64::consts::PI);
            let mut sx = vx + jmag * jdir.cos();
            let mut sy = vy + jmag * jdir.sin();
            let s = (sx * sx + sy * sy).sqrt();
            if s > cfg.v_max {
                sx *= cfg.v_max / s;
                sy *= cfg.v_max / s;
            }
            let (px, py) = (cx, cy);
            let (nx, rvx) = bounce(cx + sx, vx, lo, hi);
            let (ny, rvy) = bounce(cy + sy, vy, lo, hi);
            cx = nx;
            cy = ny;
            vx = rvx;
            vy = rvy;
            trajectory.push((cx - px, cy - py));
            frames.push(render_frame(&raster, cx, cy, cfg.image_side));
        }
        sequences.push(Sequence {
            sprite_id: i as u32,
            frames,
            trajectory,
        });
    }
    Ok(Dataset {
        image_side: cfg.image_side,
        seed: cfg.seed,
        sequences,
    })
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"LCDS";
const DATASET_VERSION: u16 = 1;

/// Exact on-disk size for a dataset of uniform shape; the format stores
/// pixels as one byte each after the header and per-sequence metadata.
pub fn container_size(n_sequences: usize, frames_per_seq: usize, image_side: usize) -> usize {
    let header = 4 + 2 + 4 + 4 + 4 + 8;
    let per_seq = 4 + (frames_per_seq - 1) * 16;
    header + n_sequences * per_seq + n_sequences * frames_per_seq * image_side * image_side
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let n = dataset.n_sequences();
    let f = dataset.frames_per_seq();
    if dataset.sequences.iter().any(|s| s.frames.len() != f) {
        return Err(DataError::BadConfig("ragged dataset cannot be saved"));
    }
    let mut buf: Vec<u8> =
        Vec::with_capacity(container_size(n, f.max(1), dataset.image_side));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.image_side as u32).to_le_bytes());
    buf.extend_from_slice(&dataset.seed.to_le_bytes());
    for seq in &dataset.sequences {
        buf.extend_from_slice(&seq.sprite_id.to_le_bytes());
        for &(dx, dy) in &seq.trajectory {
            buf.extend_from_slice(&dx.to_le_bytes());
            buf.extend_from_slice(&dy.to_le_bytes());
        }
    }
    for seq in &dataset.sequences {
        for frame in &seq.frames {
            buf.extend(frame.pixels.iter().map(|&v| (v * 255.0).round() as u8));
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], DataError> {
        if *off + n > bytes.len() {
            return Err(DataError::Corrupt("truncated"));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != DATASET_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(DataError::BadVersion(version));
    }
    let n = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let side = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let sprite_id = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        let mut trajectory = Vec::with_capacity(f.saturating_sub(1));
        for _ in 1..f {
            let dx = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            let dy = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            trajectory.push((dx, dy));
        }
        sequences.push(Sequence {
            sprite_id,
            frames: Vec::with_capacity(f),
            trajectory,
        });
    }
    for seq in &mut sequences {
        for _ in 0..f {
            let raw = take(&mut off, side * side)?;
            let pixels = raw.iter().map(|&b| b as f64 / 255.0).collect();
            seq.frames.push(Frame { side, pixels });
        }
    }
    if off != bytes.len() {
        return Err(DataError::Corrupt("trailing bytes"));
    }
    Ok(Dataset {
        image_side: side,
        seed,
        sequences,
    })
}

// ---------------------------------------------------------------------------
// Counter-example pairs
// ---------------------------------------------------------------------------

/// Frames the causal model should treat as unreachable from one another:
/// different sequences, or the same sequence at least 10 steps apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativePair {
    /// `(sequence, frame)` indices.
    pub a: (usize, usize),
    pub b: (usize, usize),
    /// Frame-index gap `|a.1 - b.1|`.
    pub gap: usize,
}

pub const NEGATIVE_MIN_GAP: usize = 10;

pub fn negatives(
    dataset: &Dataset,
    rng: &mut RandomState,
    n: usize,
) -> Result<Vec<NegativePair>, DataError> {
    let n_seq = dataset.n_sequences();
    let fps = dataset.frames_per_seq();
    let cross_ok = n_seq >= 2;
    let same_ok = fps > NEGATIVE_MIN_GAP;
    if n > 0 && !cross_ok && !same_ok {
        return Err(DataError::DatasetTooSmall);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let cross = match (cross_ok, same_ok) {
            (true, true) => rng.uniform() < 0.5,
            (true, false) => true,
            (false, true) => false,
            (false, false) => unreachable!(),
        };
        let pair = if cross {
            let s1 = rng.index(n_seq);
            let mut s2 = rng.index(n_seq - 1);
            if s2 >= s1 {
                s2 += 1;
            }
            let f1 = rng.index(fps);
            let f2 = rng.index(fps);
            NegativePair {
                a: (s1, f1),
                b: (s2, f2),
                gap: f1.abs_diff(f2),
            }
        } else {
            let s = rng.index(n_seq);
            // Some positions have no partner at the required gap (middle
            // frames of short sequences); redraw until one does. The ends
            // always qualify when fps > MIN_GAP, so this terminates.
            let (f1, below, above) = loop {
                let f1 = rng.index(fps);
                // Partners at least MIN_GAP away: [0, f1-10] below and
                // [f1+10, fps-1] above.
                let below = (f1 + 1).saturating_sub(NEGATIVE_MIN_GAP);
                let above = fps.saturating_sub(f1 + NEGATIVE_MIN_GAP);
                if below + above > 0 {
                    break (f1, below, above);
                }
            };
            let k = rng.index(below + above);
            let f2 = if k < below { k } else { f1 + NEGATIVE_MIN_GAP + (k - below) };
            NegativePair {
                a: (s, f1),
                b: (s, f2),
                gap: f1.abs_diff(f2),
            }
        };
        out.push(pair);
    }
    Ok(out)
}
