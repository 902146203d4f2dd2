use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{window_partition_index, Graph, Grid3, Real, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBiasKind {
    /// One relative-bias table per head.
    Rpb,
    /// Two tables per head, chosen per (query, key) by whether both tokens
    /// come from the same sampled mini-patch.
    Grpb,
}

impl PositionBiasKind {
    /// Table rows for `num_rel` relative displacements.
    pub fn table_rows(self, num_rel: usize) -> usize {
        match self {
            PositionBiasKind::Rpb => num_rel,
            PositionBiasKind::Grpb => 2 * num_rel,
        }
    }
}

/// Precomputed gather indices for windowed multi-head attention over one
/// token grid.
#[derive(Clone, Debug)]
pub struct WindowPlan {
    pub grid: Grid3,
    pub window: Grid3,
    pub channels: usize,
    pub heads: usize,
    pub n_windows: usize,
    pub win_tokens: usize,
    /// Number of distinct relative displacements inside one window.
    pub num_rel: usize,
    /// Gathers q, k, v from `[N, 3C]` into `[windows * heads, Nw, d]`.
    qkv_index: [Arc<[u32]>; 3],
    /// Gathers `[windows * heads, Nw, d]` back to `[N, C]` in token order.
    merge_index: Arc<[u32]>,
    rpb_index: Arc<[u32]>,
    grpb_index: Option<Arc<[u32]>>,
}

fn rel_id(q: Grid3, k: Grid3, window: Grid3) -> usize {
    let d = |a: usize| 2 * window[a] - 1;
    let off = |a: usize| q[a] + window[a] - 1 - k[a];
    (off(0) * d(1) + off(1)) * d(2) + off(2)
}

fn unravel(i: usize, dims: Grid3) -> Grid3 {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

impl WindowPlan {
    /// `patch_ids`, when given, labels every token (row-major over `grid`)
    /// with the mini-patch it was sampled from; it enables the gated bias.
    pub fn new(grid: Grid3, window: Grid3, channels: usize, heads: usize, patch_ids: Option<&[u32]>) -> Result<Self> {
        if channels % heads != 0 {
            return Err(Error::Config(format!("{channels} channels not divisible by {heads} heads")));
        }
        if grid.iter().zip(&window).any(|(g, w)| *w == 0 || g % w != 0) {
            return Err(Error::Config(format!("token grid {grid:?} not divisible by window {window:?}")));
        }
        let n: usize = grid.iter().product();
        let nw: usize = window.iter().product();
        let n_windows = n / nw;
        let d = channels / heads;
        let part = window_partition_index(grid, window);

        let mut qkv: [Vec<u32>; 3] = Default::default();
        for (s, idx) in qkv.iter_mut().enumerate() {
            idx.reserve(n * channels);
            for w in 0..n_windows {
                for h in 0..heads {
                    for i in 0..nw {
                        let tok = part[w * nw + i] as usize;
                        let base = tok * 3 * channels + s * channels + h * d;
                        idx.extend((0..d).map(|j| (base + j) as u32));
                    }
                }
            }
        }

        let mut merge = vec![0u32; n * channels];
        for w in 0..n_windows {
            for h in 0..heads {
                for i in 0..nw {
                    let tok = part[w * nw + i] as usize;
                    for j in 0..d {
                        merge[tok * channels + h * d + j] = (((w * heads + h) * nw + i) * d + j) as u32;
                    }
                }
            }
        }

        let num_rel = (0..3).map(|a| 2 * window[a] - 1).product();
        let rel: Vec<usize> = (0..nw * nw)
            .map(|qk| rel_id(unravel(qk / nw, window), unravel(qk % nw, window), window))
            .collect();

        let mut rpb = Vec::with_capacity(n_windows * heads * nw * nw);
        for _ in 0..n_windows {
            for h in 0..heads {
                rpb.extend(rel.iter().map(|&r| (r * heads + h) as u32));
            }
        }

        let grpb = match patch_ids {
            None => None,
            Some(ids) => {
                if ids.len() != n {
                    return Err(Error::dim("patch ids", &[n], &[ids.len()]));
                }
                let mut out = Vec::with_capacity(n_windows * heads * nw * nw);
                for w in 0..n_windows {
                    let toks = &part[w * nw..(w + 1) * nw];
                    for h in 0..heads {
                        for (qk, &r) in rel.iter().enumerate() {
                            let same = ids[toks[qk / nw] as usize] == ids[toks[qk % nw] as usize];
                            let row = if same { r } else { num_rel + r };
                            out.push((row * heads + h) as u32);
                        }
                    }
                }
                Some(out.into())
            }
        };

        Ok(WindowPlan {
            grid,
            window,
            channels,
            heads,
            n_windows,
            win_tokens: nw,
            num_rel,
            qkv_index: qkv.map(Arc::from),
            merge_index: merge.into(),
            rpb_index: rpb.into(),
            grpb_index: grpb,
        })
    }

    pub fn tokens(&self) -> usize {
        self.n_windows * self.win_tokens
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Flat table index for each logit, shaped `[windows * heads, Nw, Nw]`.
    pub fn bias_index(&self, kind: PositionBiasKind) -> Result<&Arc<[u32]>> {
        match kind {
            PositionBiasKind::Rpb => Ok(&self.rpb_index),
            PositionBiasKind::Grpb => self
                .grpb_index
                .as_ref()
                .ok_or_else(|| Error::Contract("gated bias needs fragment geometry".into())),
        }
    }

    /// Gate value (1 = same mini-patch) for every (window, query, key).
    pub fn gate(&self) -> Option<Vec<bool>> {
        let idx = self.grpb_index.as_ref()?;
        let per_head = self.win_tokens * self.win_tokens;
        let mut out = Vec::with_capacity(self.n_windows * per_head);
        for w in 0..self.n_windows {
            let base = w * self.heads * per_head;
            out.extend(
                idx[base..base + per_head]
                    .iter()
                    .map(|&i| (i as usize / self.heads) < self.num_rel),
            );
        }
        Some(out)
    }
}

/// Graph handles for one attention block's weights.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub qkv_weight: Var,
    pub qkv_bias: Var,
    pub proj_weight: Var,
    pub proj_bias: Var,
    /// `[rows, heads]` bias table.
    pub table: Var,
}

/// Multi-head self-attention restricted to non-overlapping windows.
///
/// `x` is `[N, C]` in row-major token order; the result has the same layout.
/// Logits are `q k^T / sqrt(d) + bias[displacement, gate]`.
pub fn window_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &AttnParams,
    plan: &WindowPlan,
    kind: PositionBiasKind,
) -> Result<Var> {
    let n = plan.tokens();
    if g.shape(x) != [n, plan.channels] {
        return Err(Error::dim("window_attention", g.shape(x), &[n, plan.channels]));
    }
    let rows = kind.table_rows(plan.num_rel);
    if g.shape(p.table) != [rows, plan.heads] {
        return Err(Error::dim("position bias", g.shape(p.table), &[rows, plan.heads]));
    }
    let (bh, nw, d) = (plan.n_windows * plan.heads, plan.win_tokens, plan.head_dim());
    let qkv = g.linear(x, p.qkv_weight, Some(p.qkv_bias))?;
    let q = g.gather(qkv, plan.qkv_index[0].clone(), &[bh, nw, d])?;
    let k = g.gather(qkv, plan.qkv_index[1].clone(), &[bh, nw, d])?;
    let v = g.gather(qkv, plan.qkv_index[2].clone(), &[bh, nw, d])?;
    let logits = g.bmm(q, k, true)?;
    let logits = g.scale(logits, T::from_f64_lossy(1.0 / (d as f64).sqrt()));
    let bias = g.gather(p.table, plan.bias_index(kind)?.clone(), &[bh, nw, nw])?;
    let logits = g.add(logits, bias)?;
    let attn = g.softmax(logits, 2)?;
    let out = g.bmm(attn, v, false)?;
    let merged = g.gather(out, plan.merge_index.clone(), &[n, plan.channels])?;
    g.linear(merged, p.proj_weight, Some(p.proj_bias))
}
