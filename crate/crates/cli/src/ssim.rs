//! Structural similarity between frames, and the candidate selector built
//! on it.
//!
//! Mean SSIM over unweighted 8x8 windows at stride 4 (49 windows on a 32px
//! frame), with the usual stabilizers `c1 = (0.01 L)^2`, `c2 = (0.03 L)^2`
//! at dynamic range `L = 1`. Uniform windows instead of the Gaussian
//! variant: frames here are tiny and the selector only ranks candidates.

const WINDOW: usize = 8;
const STRIDE: usize = 4;
const C1: f64 = 1e-4; // (0.01 * L)^2
const C2: f64 = 9e-4; // (0.03 * L)^2

/// Mean SSIM between two square frames in `[0, 1]`.
///
/// Panics if the frames differ in shape or are smaller than one window,
/// both of which are caller bugs in this pipeline.
pub fn ssim(a: &[f64], b: &[f64], side: usize) -> f64 {
    assert_eq!(a.len(), side * side, "frame a does not match side {side}");
    assert_eq!(a.len(), b.len(), "frame shapes differ");
    assert!(side >= WINDOW, "frame smaller than one SSIM window");

    let n = (WINDOW * WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    let mut y = 0;
    while y + WINDOW <= side {
        let mut x = 0;
        while x + WINDOW <= side {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in y..y + WINDOW {
                let row = r * side + x;
                for i in row..row + WINDOW {
                    let (pa, pb) = (a[i], b[i]);
                    sa += pa;
                    sb += pb;
                    saa += pa * pa;
                    sbb += pb * pb;
                    sab += pa * pb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            windows += 1;
            x += STRIDE;
        }
        y += STRIDE;
    }
    total / windows as f64
}

/// Pick the candidate most similar to `reference`: the argmax of SSIM, ties
/// broken toward the lowest index. `None` on an empty candidate list.
pub fn choose(candidates: &[Vec<f64>], reference: &[f64], side: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let s = ssim(cand, reference, side);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}
