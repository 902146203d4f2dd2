//! Feature fusion, per-token regression head, quality maps, and pooling.
//!
//! In cross-attention mode the technical map is
//! `R(Attn(F_t W_t^Q, F_a W_t^K, F_a W_t^V))` and the aesthetic map is the
//! mirror image; the score is the global mean over both maps. The
//! projections are branch-specific and never shared; the head `R` is one
//! tensor set used for every map.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{Bindings, Branch, FeatureMap, Init, ParamGroup, ParamStore, INIT_STD};
use crate::diffcore::{Graph, Grid3, Real, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Per-branch maps from unfused features; score fusion.
    Score,
    /// Channel concatenation, then the head.
    Concat,
    /// Joint self-attention over the union of both token sets.
    SelfAttention,
    /// Dual cross-attention.
    CrossAttention,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Score,
        FusionMode::Concat,
        FusionMode::SelfAttention,
        FusionMode::CrossAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Score => "score",
            FusionMode::Concat => "concat",
            FusionMode::SelfAttention => "self_attention",
            FusionMode::CrossAttention => "cross_attention",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(FusionMode::Score),
            "concat" => Ok(FusionMode::Concat),
            "self" | "self_attention" => Ok(FusionMode::SelfAttention),
            "cross" | "cross_attention" => Ok(FusionMode::CrossAttention),
            other => Err(Error::Config(format!("unknown fusion mode {other}"))),
        }
    }
}

/// Per-token scalar predictions, `[tokens, 1]` in row-major grid order.
#[derive(Clone, Copy, Debug)]
pub struct QualityMap {
    pub var: Var,
    pub grid: Grid3,
    /// `None` for a map that mixes both branches.
    pub branch: Option<Branch>,
}

#[derive(Clone, Copy, Debug)]
pub struct Projections {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub fc1_weight: Var,
    pub fc1_bias: Var,
    pub fc2_weight: Var,
    pub fc2_bias: Var,
}

/// Graph handles for the fusion layer of one model.
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub technical: Option<Projections>,
    pub aesthetic: Option<Projections>,
    pub joint: Option<Projections>,
    pub head: HeadParams,
    /// Attention heads of the fusion layer.
    pub heads: usize,
}

fn projection_prefix(owner: &str) -> [String; 3] {
    ["q", "k", "v"].map(|s| format!("fusion.{owner}.{s}"))
}

/// Adds fusion projections and the regression head for `mode`.
pub fn add_fusion_params<T: Real>(store: &mut ParamStore<T>, mode: FusionMode, channels: usize, seed: u64) -> Result<()> {
    let tn = Init::TruncNormal(INIT_STD);
    let owners: &[&str] = match mode {
        FusionMode::CrossAttention => &["technical", "aesthetic"],
        FusionMode::SelfAttention => &["joint"],
        _ => &[],
    };
    for owner in owners {
        for name in projection_prefix(owner) {
            store.insert_init(name.clone(), ParamGroup::Fusion, &[channels, channels], tn, seed, &name)?;
        }
    }
    let head_in = if mode == FusionMode::Concat { 2 * channels } else { channels };
    add_head_params(store, head_in, channels / 2, seed)
}

/// Two-layer perceptron head `in -> hidden -> 1` with GELU.
pub fn add_head_params<T: Real>(store: &mut ParamStore<T>, input: usize, hidden: usize, seed: u64) -> Result<()> {
    let tn = Init::TruncNormal(INIT_STD);
    store.insert_init("head.fc1.weight", ParamGroup::Head, &[input, hidden], tn, seed, "head.fc1.weight")?;
    store.insert_init("head.fc1.bias", ParamGroup::Head, &[hidden], Init::Zeros, seed, "head.fc1.bias")?;
    store.insert_init("head.fc2.weight", ParamGroup::Head, &[hidden, 1], tn, seed, "head.fc2.weight")?;
    store.insert_init("head.fc2.bias", ParamGroup::Head, &[1], Init::Zeros, seed, "head.fc2.bias")?;
    Ok(())
}

impl FusionParams {
    pub fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, bind: &mut Bindings, heads: usize) -> Result<Self> {
        let mut proj = |g: &mut Graph<T>, owner: &str| -> Result<Option<Projections>> {
            let [q, k, v] = projection_prefix(owner);
            if !store.contains(&q) {
                return Ok(None);
            }
            Ok(Some(Projections {
                q: bind.named(g, store, &q)?,
                k: bind.named(g, store, &k)?,
                v: bind.named(g, store, &v)?,
            }))
        };
        let technical = proj(g, "technical")?;
        let aesthetic = proj(g, "aesthetic")?;
        let joint = proj(g, "joint")?;
        let head = HeadParams::bind(g, store, bind)?;
        Ok(FusionParams {
            technical,
            aesthetic,
            joint,
            head,
            heads,
        })
    }

    fn branch_projections(&self, branch: Branch) -> Result<Projections> {
        match branch {
            Branch::Technical => self.technical,
            Branch::Aesthetic => self.aesthetic,
        }
        .ok_or_else(|| Error::Contract(format!("model has no {branch} fusion projections")))
    }
}

impl HeadParams {
    pub fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, bind: &mut Bindings) -> Result<Self> {
        Ok(HeadParams {
            fc1_weight: bind.named(g, store, "head.fc1.weight")?,
            fc1_bias: bind.named(g, store, "head.fc1.bias")?,
            fc2_weight: bind.named(g, store, "head.fc2.weight")?,
            fc2_bias: bind.named(g, store, "head.fc2.bias")?,
        })
    }
}

/// `R(x)`: applied independently to every token row of `x: [N, C_in]`.
pub fn regression_head<T: Real>(g: &mut Graph<T>, x: Var, p: &HeadParams) -> Result<Var> {
    let h = g.linear(x, p.fc1_weight, Some(p.fc1_bias))?;
    let h = g.gelu(h);
    g.linear(h, p.fc2_weight, Some(p.fc2_bias))
}

fn head_split_index(n: usize, c: usize, heads: usize) -> Arc<[u32]> {
    let d = c / heads;
    let mut idx = Vec::with_capacity(n * c);
    for h in 0..heads {
        for i in 0..n {
            idx.extend((0..d).map(|j| (i * c + h * d + j) as u32));
        }
    }
    idx.into()
}

fn head_merge_index(n: usize, c: usize, heads: usize) -> Arc<[u32]> {
    let d = c / heads;
    let mut idx = vec![0u32; n * c];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..d {
                idx[i * c + h * d + j] = ((h * n + i) * d + j) as u32;
            }
        }
    }
    idx.into()
}

/// Multi-head attention of `queries: [Nq, C]` over `context: [Nk, C]`,
/// without output projection or residual.
pub fn attention<T: Real>(g: &mut Graph<T>, queries: Var, context: Var, p: &Projections, heads: usize) -> Result<Var> {
    let (sq, sk) = (g.shape(queries).to_vec(), g.shape(context).to_vec());
    if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] {
        return Err(Error::dim("attention", &sq, &sk));
    }
    let (nq, nk, c) = (sq[0], sk[0], sq[1]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels not divisible by {heads} heads")));
    }
    let d = c / heads;
    let q = g.matmul(queries, p.q)?;
    let k = g.matmul(context, p.k)?;
    let v = g.matmul(context, p.v)?;
    let q = g.gather(q, head_split_index(nq, c, heads), &[heads, nq, d])?;
    let k = g.gather(k, head_split_index(nk, c, heads), &[heads, nk, d])?;
    let v = g.gather(v, head_split_index(nk, c, heads), &[heads, nk, d])?;
    let logits = g.bmm(q, k, true)?;
    let logits = g.scale(logits, T::from_f64_lossy(1.0 / (d as f64).sqrt()));
    let attn = g.softmax(logits, 2)?;
    let out = g.bmm(attn, v, false)?;
    g.gather(out, head_merge_index(nq, c, heads), &[nq, c])
}

fn check_pair<T: Real>(g: &Graph<T>, f_t: &FeatureMap, f_a: &FeatureMap) -> Result<()> {
    let (st, sa) = (g.shape(f_t.var), g.shape(f_a.var));
    if st != sa {
        return Err(Error::dim("fusion features", st, sa));
    }
    Ok(())
}

/// Technical queries attend to aesthetic keys/values and vice versa; the
/// shared head turns both results into quality maps.
pub fn dual_cross_attention<T: Real>(
    g: &mut Graph<T>,
    f_t: &FeatureMap,
    f_a: &FeatureMap,
    p: &FusionParams,
) -> Result<(QualityMap, QualityMap)> {
    check_pair(g, f_t, f_a)?;
    let pt = p.branch_projections(Branch::Technical)?;
    let pa = p.branch_projections(Branch::Aesthetic)?;
    let at = attention(g, f_t.var, f_a.var, &pt, p.heads)?;
    let aa = attention(g, f_a.var, f_t.var, &pa, p.heads)?;
    let qt = regression_head(g, at, &p.head)?;
    let qa = regression_head(g, aa, &p.head)?;
    Ok((
        QualityMap {
            var: qt,
            grid: f_t.grid,
            branch: Some(Branch::Technical),
        },
        QualityMap {
            var: qa,
            grid: f_a.grid,
            branch: Some(Branch::Aesthetic),
        },
    ))
}

/// Global average over the concatenation of the maps.
pub fn predict_score<T: Real>(g: &mut Graph<T>, maps: &[QualityMap]) -> Result<Var> {
    let vars: Vec<Var> = maps.iter().map(|m| m.var).collect();
    let all = g.concat(&vars, 0)?;
    Ok(g.mean(all))
}

/// Result of a fusion forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub score: Var,
    pub technical: Option<QualityMap>,
    pub aesthetic: Option<QualityMap>,
    /// Single map over fused tokens (concat mode).
    pub joint: Option<QualityMap>,
}

fn rows_index(start: usize, count: usize) -> Arc<[u32]> {
    (start..start + count).map(|i| i as u32).collect()
}

pub fn fuse<T: Real>(g: &mut Graph<T>, f_t: &FeatureMap, f_a: &FeatureMap, mode: FusionMode, p: &FusionParams) -> Result<FusionOutput> {
    check_pair(g, f_t, f_a)?;
    let n = f_t.tokens();
    match mode {
        FusionMode::Score => {
            let qt = QualityMap {
                var: regression_head(g, f_t.var, &p.head)?,
                grid: f_t.grid,
                branch: Some(Branch::Technical),
            };
            let qa = QualityMap {
                var: regression_head(g, f_a.var, &p.head)?,
                grid: f_a.grid,
                branch: Some(Branch::Aesthetic),
            };
            let score = predict_score(g, &[qt, qa])?;
            Ok(FusionOutput {
                score,
                technical: Some(qt),
                aesthetic: Some(qa),
                joint: None,
            })
        }
        FusionMode::Concat => {
            let x = g.concat(&[f_t.var, f_a.var], 1)?;
            let q = QualityMap {
                var: regression_head(g, x, &p.head)?,
                grid: f_t.grid,
                branch: None,
            };
            let score = predict_score(g, &[q])?;
            Ok(FusionOutput {
                score,
                technical: None,
                aesthetic: None,
                joint: Some(q),
            })
        }
        FusionMode::SelfAttention => {
            let proj = p
                .joint
                .ok_or_else(|| Error::Contract("model has no joint fusion projections".into()))?;
            let x = g.concat(&[f_t.var, f_a.var], 0)?;
            let a = attention(g, x, x, &proj, p.heads)?;
            let all = regression_head(g, a, &p.head)?;
            let qt = g.gather(all, rows_index(0, n), &[n, 1])?;
            let qa = g.gather(all, rows_index(n, n), &[n, 1])?;
            let score = g.mean(all);
            Ok(FusionOutput {
                score,
                technical: Some(QualityMap {
                    var: qt,
                    grid: f_t.grid,
                    branch: Some(Branch::Technical),
                }),
                aesthetic: Some(QualityMap {
                    var: qa,
                    grid: f_a.grid,
                    branch: Some(Branch::Aesthetic),
                }),
                joint: None,
            })
        }
        FusionMode::CrossAttention => {
            let (qt, qa) = dual_cross_attention(g, f_t, f_a, p)?;
            let score = predict_score(g, &[qt, qa])?;
            Ok(FusionOutput {
                score,
                technical: Some(qt),
                aesthetic: Some(qa),
                joint: None,
            })
        }
    }
}

/// Score from one branch alone: the missing branch's features are replaced
/// by this branch's own features, and only this branch's map is pooled.
pub fn branch_only_score<T: Real>(
    g: &mut Graph<T>,
    f: &FeatureMap,
    branch: Branch,
    mode: FusionMode,
    p: &FusionParams,
) -> Result<(Var, QualityMap)> {
    match mode {
        FusionMode::CrossAttention => {
            let proj = p.branch_projections(branch)?;
            let a = attention(g, f.var, f.var, &proj, p.heads)?;
            let map = QualityMap {
                var: regression_head(g, a, &p.head)?,
                grid: f.grid,
                branch: Some(branch),
            };
            Ok((predict_score(g, &[map])?, map))
        }
        _ => {
            let out = fuse(g, f, f, mode, p)?;
            let map = match (mode, branch) {
                (FusionMode::Concat, _) => out.joint,
                (_, Branch::Technical) => out.technical,
                (_, Branch::Aesthetic) => out.aesthetic,
            }
            .expect("fusion mode yields the requested map");
            let map = QualityMap {
                branch: Some(branch),
                ..map
            };
            Ok((predict_score(g, &[map])?, map))
        }
    }
}
