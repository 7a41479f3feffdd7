//! Run-directory plumbing: manifest, CSV, and PGM image grids.
//!
//! CSVs and PGMs are assembled in memory and written whole so a rerun with
//! the same seed produces byte-identical files; wall-clock time lives only
//! in the manifest, which is the one file allowed to differ between reruns.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::Config;

/// Output directory for one command invocation.
pub struct RunDir {
    root: PathBuf,
    started: Instant,
}

impl RunDir {
    pub fn create(root: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&root)?;
        Ok(RunDir {
            root,
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }

    /// Config echo, effective seed, version stamps, and elapsed wall time —
    /// the per-run record every command leaves behind. Written last so the
    /// wall time covers the whole run.
    pub fn write_manifest(
        &self,
        command: &str,
        seed: u64,
        prng: &str,
        cfg: &Config,
        extras: &[(String, String)],
    ) -> io::Result<PathBuf> {
        let mut text = String::new();
        text.push_str(&format!("command = {command}\n"));
        text.push_str(&format!("seed = {seed}\n"));
        text.push_str(&format!("prng = {prng}\n"));
        text.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        for (k, v) in extras {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!(
            "wall_ms = {}\n",
            self.started.elapsed().as_millis()
        ));
        text.push_str("config:\n");
        for (k, v) in cfg.entries() {
            text.push_str(&format!("  {k} = {v}\n"));
        }
        self.write("manifest.txt", text.as_bytes())
    }
}

/// A grayscale image ready to serialize as binary PGM.
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub bytes: Vec<u8>,
}

impl Pgm {
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend_from_slice(&self.bytes);
        fs::write(path, buf)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tile frames into a `rows x cols` grid with 1-pixel white separators,
/// row-major. `None` cells render black (e.g. a horizon that accepted fewer
/// samples than the grid has columns).
pub fn frame_grid(cells: &[Option<Vec<f64>>], rows: usize, cols: usize, side: usize) -> Pgm {
    assert_eq!(cells.len(), rows * cols, "grid cell count mismatch");
    let width = cols * side + cols.saturating_sub(1);
    let height = rows * side + rows.saturating_sub(1);
    let mut bytes = vec![255u8; width * height]; // separators; cells overwrite
    for r in 0..rows {
        for c in 0..cols {
            let y0 = r * (side + 1);
            let x0 = c * (side + 1);
            let cell = cells[r * cols + c].as_deref();
            for y in 0..side {
                let out = (y0 + y) * width + x0;
                match cell {
                    Some(px) => {
                        for x in 0..side {
                            bytes[out + x] = quantize(px[y * side + x]);
                        }
                    }
                    None => bytes[out..out + side].fill(0),
                }
            }
        }
    }
    Pgm {
        width,
        height,
        bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dimensions_include_separators() {
        let cells = vec![Some(vec![0.0; 4]); 6];
        let g = frame_grid(&cells, 2, 3, 2);
        assert_eq!((g.width, g.height), (2 * 3 + 2, 2 * 2 + 1));
        assert_eq!(g.bytes.len(), g.width * g.height);
    }

    #[test]
    fn separators_are_white_cells_black_or_quantized() {
        let cells = vec![Some(vec![1.0, 0.0, 0.5, 1.0]), None];
        let g = frame_grid(&cells, 1, 2, 2);
        // Row 0: frame [255, 0], separator 255, empty cell [0, 0].
        assert_eq!(&g.bytes[..5], &[255, 0, 255, 0, 0]);
        // 0.5 quantizes to round(127.5) = 128.
        assert_eq!(g.bytes[g.width], 128);
    }

    #[test]
    fn single_cell_grid_has_no_separators() {
        let g = frame_grid(&[Some(vec![0.2; 9])], 1, 1, 3);
        assert_eq!((g.width, g.height), (3, 3));
        assert!(g.bytes.iter().all(|&b| b == 51));
    }
}
