//! Hierarchical windowed-attention feature extractor and its Siamese
//! parameter store.
//!
//! Tokens are 3D patches (`temporal × spatial × spatial` pixels) embedded by
//! a strided linear projection. Each stage runs pre-norm transformer blocks
//! with window attention; stages are joined by 2×2 spatial patch merging.
//! The technical branch uses the gated position bias, the aesthetic branch
//! the plain one; every other weight is resolved through the store's
//! binding table.

mod attention;
mod params;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{expand_rows, Graph, Grid3, Real, Var};
use crate::error::{Error, Result};

pub use attention::{window_attention, AttnParams, PositionBiasKind, WindowPlan};
pub use params::{Bindings, Branch, Init, Param, ParamGroup, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEmbed {
    pub spatial: usize,
    pub temporal: usize,
}

/// Pixel geometry of the fragments the technical branch consumes; the
/// gated bias is derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentGeometry {
    pub patch: usize,
    pub frames_per_cube: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stages: Vec<StageConfig>,
    /// Window side in tokens (spatial).
    pub window: usize,
    /// Window extent in tokens along time.
    pub window_t: usize,
    pub patch_embed: PatchEmbed,
    pub input_side: usize,
    pub clip_len: usize,
    pub mlp_ratio: usize,
    pub fragment: FragmentGeometry,
}

impl BackboneConfig {
    /// Two stages × two blocks, channels {32, 64}, heads {2, 4}, window 4,
    /// on 4 × 64 × 64 clips.
    pub fn toy() -> Self {
        BackboneConfig {
            stages: vec![
                StageConfig {
                    blocks: 2,
                    channels: 32,
                    heads: 2,
                },
                StageConfig {
                    blocks: 2,
                    channels: 64,
                    heads: 4,
                },
            ],
            window: 4,
            window_t: 2,
            patch_embed: PatchEmbed {
                spatial: 4,
                temporal: 2,
            },
            input_side: 64,
            clip_len: 4,
            mlp_ratio: 4,
            fragment: FragmentGeometry {
                patch: 16,
                frames_per_cube: 2,
            },
        }
    }

    pub fn grid(&self, stage: usize) -> Grid3 {
        let side = self.input_side / self.patch_embed.spatial >> stage;
        [self.clip_len / self.patch_embed.temporal, side, side]
    }

    pub fn out_grid(&self) -> Grid3 {
        self.grid(self.stages.len() - 1)
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map(|s| s.channels).unwrap_or(0)
    }

    pub fn embed_dim(&self) -> usize {
        self.patch_embed.temporal * self.patch_embed.spatial * self.patch_embed.spatial * 3
    }

    pub fn window3(&self) -> Grid3 {
        [self.window_t, self.window, self.window]
    }

    pub fn validate(&self) -> Result<()> {
        let pe = self.patch_embed;
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if pe.spatial == 0 || pe.temporal == 0 || self.input_side % pe.spatial != 0 || self.clip_len % pe.temporal != 0 {
            return Err(Error::Config(format!(
                "input {}x{} frames of side {} not divisible by patch embedding {pe:?}",
                self.clip_len, self.input_side, self.input_side
            )));
        }
        for (s, st) in self.stages.iter().enumerate() {
            if st.channels == 0 || st.heads == 0 || st.channels % st.heads != 0 {
                return Err(Error::Config(format!("stage {s}: channels {} vs heads {}", st.channels, st.heads)));
            }
            let grid = self.grid(s);
            if grid.iter().any(|&g| g == 0) || grid.iter().zip(self.window3()).any(|(g, w)| w == 0 || g % w != 0) {
                return Err(Error::Config(format!(
                    "stage {s}: token grid {grid:?} not divisible by window {:?}",
                    self.window3()
                )));
            }
            if s + 1 < self.stages.len() && grid[1] % 2 != 0 {
                return Err(Error::Config(format!("stage {s}: odd grid {grid:?} cannot merge")));
            }
        }
        if self.fragment.patch == 0 || self.fragment.frames_per_cube == 0 {
            return Err(Error::Config("fragment geometry must be positive".into()));
        }
        Ok(())
    }
}

/// How backbone weights are laid out across branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One copy bound by both branches (bias tables still per branch).
    Shared,
    /// Independent copy per branch.
    Unshared,
    /// A single branch only.
    Single(Branch),
}

impl Layout {
    pub fn branches(self) -> Vec<Branch> {
        match self {
            Layout::Single(b) => vec![b],
            _ => Branch::BOTH.to_vec(),
        }
    }
}

/// Position-bias variant used by each branch.
pub fn bias_kind(branch: Branch) -> PositionBiasKind {
    match branch {
        Branch::Technical => PositionBiasKind::Grpb,
        Branch::Aesthetic => PositionBiasKind::Rpb,
    }
}

/// Shape and init of every shareable backbone tensor, by logical name.
fn shared_specs(cfg: &BackboneConfig) -> Vec<(String, Vec<usize>, Init)> {
    let tn = Init::TruncNormal(INIT_STD);
    let c0 = cfg.stages[0].channels;
    let mut out = vec![
        ("embed.weight".to_string(), vec![cfg.embed_dim(), c0], tn),
        ("embed.bias".to_string(), vec![c0], Init::Zeros),
        ("embed.norm.gain".to_string(), vec![c0], Init::Ones),
        ("embed.norm.bias".to_string(), vec![c0], Init::Zeros),
    ];
    for (s, st) in cfg.stages.iter().enumerate() {
        let c = st.channels;
        let hidden = c * cfg.mlp_ratio;
        for b in 0..st.blocks {
            let p = format!("stage{s}.block{b}");
            out.extend([
                (format!("{p}.norm1.gain"), vec![c], Init::Ones),
                (format!("{p}.norm1.bias"), vec![c], Init::Zeros),
                (format!("{p}.qkv.weight"), vec![c, 3 * c], tn),
                (format!("{p}.qkv.bias"), vec![3 * c], Init::Zeros),
                (format!("{p}.proj.weight"), vec![c, c], tn),
                (format!("{p}.proj.bias"), vec![c], Init::Zeros),
                (format!("{p}.norm2.gain"), vec![c], Init::Ones),
                (format!("{p}.norm2.bias"), vec![c], Init::Zeros),
                (format!("{p}.mlp.fc1.weight"), vec![c, hidden], tn),
                (format!("{p}.mlp.fc1.bias"), vec![hidden], Init::Zeros),
                (format!("{p}.mlp.fc2.weight"), vec![hidden, c], tn),
                (format!("{p}.mlp.fc2.bias"), vec![c], Init::Zeros),
            ]);
        }
        if s + 1 < cfg.stages.len() {
            let next = cfg.stages[s + 1].channels;
            out.extend([
                (format!("stage{s}.merge.norm.gain"), vec![4 * c], Init::Ones),
                (format!("stage{s}.merge.norm.bias"), vec![4 * c], Init::Zeros),
                (format!("stage{s}.merge.reduction"), vec![4 * c, next], tn),
            ]);
        }
    }
    let cl = cfg.out_channels();
    out.push(("norm.gain".to_string(), vec![cl], Init::Ones));
    out.push(("norm.bias".to_string(), vec![cl], Init::Zeros));
    out
}

fn pos_bias_logical(stage: usize, block: usize) -> String {
    format!("stage{stage}.block{block}.pos_bias")
}

/// Adds all backbone tensors for `layout` to `store` and binds them.
pub fn add_backbone_params<T: Real>(store: &mut ParamStore<T>, cfg: &BackboneConfig, layout: Layout, seed: u64) -> Result<()> {
    cfg.validate()?;
    for (logical, shape, init) in shared_specs(cfg) {
        match layout {
            Layout::Shared => {
                let id = store.insert_init(format!("backbone.{logical}"), ParamGroup::Backbone, &shape, init, seed, &logical)?;
                for b in Branch::BOTH {
                    store.bind(b, logical.clone(), id);
                }
            }
            _ => {
                for b in layout.branches() {
                    let id = store.insert_init(format!("{b}.{logical}"), ParamGroup::Backbone, &shape, init, seed, &logical)?;
                    store.bind(b, logical.clone(), id);
                }
            }
        }
    }
    let num_rel = (2 * cfg.window_t - 1) * (2 * cfg.window - 1) * (2 * cfg.window - 1);
    for (s, st) in cfg.stages.iter().enumerate() {
        for blk in 0..st.blocks {
            let logical = pos_bias_logical(s, blk);
            for b in layout.branches() {
                let rows = bias_kind(b).table_rows(num_rel);
                let id = store.insert_init(
                    format!("{b}.{logical}"),
                    ParamGroup::PositionBias,
                    &[rows, st.heads],
                    Init::Zeros,
                    seed,
                    &logical,
                )?;
                store.bind(b, logical.clone(), id);
            }
        }
    }
    Ok(())
}

/// Sharing mode for a two-branch backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    Shared,
    Unshared,
}

/// Backbone-only store for a two-branch model: truncated-normal weights
/// (std 0.02), zero bias tables, bindings per `mode`.
pub fn build_siamese<T: Real>(cfg: &BackboneConfig, mode: SharingMode, seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    let layout = match mode {
        SharingMode::Shared => Layout::Shared,
        SharingMode::Unshared => Layout::Unshared,
    };
    add_backbone_params(&mut store, cfg, layout, seed)?;
    Ok(store)
}

/// Backbone output: `[T'·H'·W', C]` tokens in row-major grid order.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub grid: Grid3,
    pub channels: usize,
    pub branch: Branch,
}

impl FeatureMap {
    pub fn tokens(&self) -> usize {
        self.grid.iter().product()
    }
}

/// Precomputed index plans for one backbone configuration.
#[derive(Clone, Debug)]
pub struct Backbone {
    cfg: BackboneConfig,
    embed_index: Arc<[u32]>,
    plans: Vec<WindowPlan>,
    merge_index: Vec<Arc<[u32]>>,
}

/// Mini-patch label of every token of a stage grid.
fn patch_ids(cfg: &BackboneConfig, stage: usize) -> Vec<u32> {
    let grid = cfg.grid(stage);
    let token_px = cfg.patch_embed.spatial << stage;
    let per_side = cfg.input_side.div_ceil(cfg.fragment.patch);
    let mut out = Vec::with_capacity(grid.iter().product());
    for t in 0..grid[0] {
        let cube = t * cfg.patch_embed.temporal / cfg.fragment.frames_per_cube;
        for h in 0..grid[1] {
            for w in 0..grid[2] {
                let (pr, pc) = (h * token_px / cfg.fragment.patch, w * token_px / cfg.fragment.patch);
                out.push(((cube * per_side + pr) * per_side + pc) as u32);
            }
        }
    }
    out
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let pe = cfg.patch_embed;
        let side = cfg.input_side;
        let g0 = cfg.grid(0);
        let mut embed = Vec::with_capacity(cfg.clip_len * side * side * 3);
        for t in 0..g0[0] {
            for h in 0..g0[1] {
                for w in 0..g0[2] {
                    for dt in 0..pe.temporal {
                        for dy in 0..pe.spatial {
                            for dx in 0..pe.spatial {
                                let (ft, y, x) = (t * pe.temporal + dt, h * pe.spatial + dy, w * pe.spatial + dx);
                                let base = ((ft * side + y) * side + x) * 3;
                                embed.extend((0..3).map(|c| (base + c) as u32));
                            }
                        }
                    }
                }
            }
        }

        let mut plans = Vec::with_capacity(cfg.stages.len());
        let mut merge_index = Vec::new();
        for (s, st) in cfg.stages.iter().enumerate() {
            let grid = cfg.grid(s);
            let ids = patch_ids(cfg, s);
            plans.push(WindowPlan::new(grid, cfg.window3(), st.channels, st.heads, Some(&ids))?);
            if s + 1 < cfg.stages.len() {
                // children ordered (0,0), (1,0), (0,1), (1,1) as (dy, dx)
                let mut rows = Vec::with_capacity(grid.iter().product());
                for t in 0..grid[0] {
                    for h in 0..grid[1] / 2 {
                        for w in 0..grid[2] / 2 {
                            for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                                rows.push(((t * grid[1] + 2 * h + dy) * grid[2] + 2 * w + dx) as u32);
                            }
                        }
                    }
                }
                merge_index.push(expand_rows(&rows, st.channels));
            }
        }
        Ok(Backbone {
            cfg: cfg.clone(),
            embed_index: embed.into(),
            plans,
            merge_index,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn plan(&self, stage: usize) -> &WindowPlan {
        &self.plans[stage]
    }

    /// Features for `clip: [clip_len, side, side, 3]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bind: &mut Bindings,
        branch: Branch,
        clip: Var,
    ) -> Result<FeatureMap> {
        let cfg = &self.cfg;
        let want = [cfg.clip_len, cfg.input_side, cfg.input_side, 3];
        if g.shape(clip) != want {
            return Err(Error::dim("backbone input", g.shape(clip), &want));
        }
        let mut p = |g: &mut Graph<T>, name: &str| bind.branch(g, store, branch, name);

        let n0: usize = cfg.grid(0).iter().product();
        let patches = g.gather(clip, self.embed_index.clone(), &[n0, cfg.embed_dim()])?;
        let (w, b) = (p(g, "embed.weight")?, p(g, "embed.bias")?);
        let x = g.linear(patches, w, Some(b))?;
        let (ng, nb) = (p(g, "embed.norm.gain")?, p(g, "embed.norm.bias")?);
        let mut x = g.layer_norm(x, ng, nb, LN_EPS)?;

        let kind = bias_kind(branch);
        for (s, st) in cfg.stages.iter().enumerate() {
            let plan = &self.plans[s];
            for blk in 0..st.blocks {
                let pre = format!("stage{s}.block{blk}");
                let (g1, b1) = (p(g, &format!("{pre}.norm1.gain"))?, p(g, &format!("{pre}.norm1.bias"))?);
                let h = g.layer_norm(x, g1, b1, LN_EPS)?;
                let ap = AttnParams {
                    qkv_weight: p(g, &format!("{pre}.qkv.weight"))?,
                    qkv_bias: p(g, &format!("{pre}.qkv.bias"))?,
                    proj_weight: p(g, &format!("{pre}.proj.weight"))?,
                    proj_bias: p(g, &format!("{pre}.proj.bias"))?,
                    table: p(g, &pos_bias_logical(s, blk))?,
                };
                let a = window_attention(g, h, &ap, plan, kind)?;
                x = g.add(x, a)?;

                let (g2, b2) = (p(g, &format!("{pre}.norm2.gain"))?, p(g, &format!("{pre}.norm2.bias"))?);
                let h = g.layer_norm(x, g2, b2, LN_EPS)?;
                let (w1, c1) = (p(g, &format!("{pre}.mlp.fc1.weight"))?, p(g, &format!("{pre}.mlp.fc1.bias"))?);
                let h = g.linear(h, w1, Some(c1))?;
                let h = g.gelu(h);
                let (w2, c2) = (p(g, &format!("{pre}.mlp.fc2.weight"))?, p(g, &format!("{pre}.mlp.fc2.bias"))?);
                let h = g.linear(h, w2, Some(c2))?;
                x = g.add(x, h)?;
            }
            if s + 1 < cfg.stages.len() {
                let n = plan.tokens() / 4;
                let c = st.channels;
                let m = g.gather(x, self.merge_index[s].clone(), &[n, 4 * c])?;
                let (mg, mb) = (p(g, &format!("stage{s}.merge.norm.gain"))?, p(g, &format!("stage{s}.merge.norm.bias"))?);
                let m = g.layer_norm(m, mg, mb, LN_EPS)?;
                let red = p(g, &format!("stage{s}.merge.reduction"))?;
                x = g.matmul(m, red)?;
            }
        }
        let (fg, fb) = (p(g, "norm.gain")?, p(g, "norm.bias")?);
        let x = g.layer_norm(x, fg, fb, LN_EPS)?;
        Ok(FeatureMap {
            var: x,
            grid: cfg.out_grid(),
            channels: cfg.out_channels(),
            branch,
        })
    }
}
