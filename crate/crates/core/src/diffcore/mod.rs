//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly and appends a
//! node holding its output and whatever context its backward rule needs.
//! [`Graph::backward`] sweeps the tape once in reverse.

mod check;
mod graph;
mod real;
mod tensor;

use std::sync::Arc;

pub use check::{check_gradients, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use real::Real;
pub use tensor::{numel, Tensor};

/// Token grid extents `(t, h, w)`.
pub type Grid3 = [usize; 3];

/// Source-token index for each position of the window-major ordering.
///
/// Windows are enumerated row-major over the window grid, tokens row-major
/// within each window. `grid` must be divisible by `window` on every axis.
pub fn window_partition_index(grid: Grid3, window: Grid3) -> Vec<u32> {
    assert!(
        grid.iter().zip(&window).all(|(g, w)| g % w == 0),
        "grid {grid:?} not divisible by window {window:?}"
    );
    let [gt, gh, gw] = grid;
    let [wt, wh, ww] = window;
    let mut out = Vec::with_capacity(gt * gh * gw);
    for bt in 0..gt / wt {
        for bh in 0..gh / wh {
            for bw in 0..gw / ww {
                for it in 0..wt {
                    for ih in 0..wh {
                        for iw in 0..ww {
                            let (t, h, w) = (bt * wt + it, bh * wh + ih, bw * ww + iw);
                            out.push(((t * gh + h) * gw + w) as u32);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`window_partition_index`]: window-major position of each token.
pub fn window_merge_index(grid: Grid3, window: Grid3) -> Vec<u32> {
    invert_permutation(&window_partition_index(grid, window))
}

pub fn invert_permutation(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p as usize] = i as u32;
    }
    inv
}

/// Expands a row permutation into a flat element index over rows of width `cols`.
pub fn expand_rows(rows: &[u32], cols: usize) -> Arc<[u32]> {
    rows.iter()
        .flat_map(|&r| (0..cols).map(move |c| r * cols as u32 + c as u32))
        .collect()
}
