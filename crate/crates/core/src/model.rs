//! Full model: backbone(s), fusion, head, pooled score.

use serde::{Deserialize, Serialize};

use crate::backbone::{add_backbone_params, Backbone, BackboneConfig, Bindings, Branch, FeatureMap, Layout, ParamStore};
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::fragments::{resize_aesthetic, sample_fragment, SamplerConfig};
use crate::fusion::{add_fusion_params, add_head_params, branch_only_score, fuse, predict_score, regression_head, FusionMode, FusionParams, HeadParams, QualityMap};
use crate::video::RawVideo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleTechnical,
    SingleAesthetic,
    TwoBranch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub backbone: BackboneConfig,
    /// Ignored by single-branch models.
    pub fusion: FusionMode,
    /// Backbone weight sharing between the two branches.
    pub shared: bool,
}

impl ModelSpec {
    /// Toy-scale shared model with dual cross-attention.
    pub fn toy() -> Self {
        ModelSpec {
            kind: ModelKind::TwoBranch,
            backbone: BackboneConfig::toy(),
            fusion: FusionMode::CrossAttention,
            shared: true,
        }
    }

    pub fn layout(&self) -> Layout {
        match self.kind {
            ModelKind::SingleTechnical => Layout::Single(Branch::Technical),
            ModelKind::SingleAesthetic => Layout::Single(Branch::Aesthetic),
            ModelKind::TwoBranch if self.shared => Layout::Shared,
            ModelKind::TwoBranch => Layout::Unshared,
        }
    }

    pub fn uses(&self, branch: Branch) -> bool {
        self.layout().branches().contains(&branch)
    }
}

/// Which branches take part in inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    Full,
    TechnicalOnly,
    AestheticOnly,
}

impl Inference {
    pub fn as_str(self) -> &'static str {
        match self {
            Inference::Full => "full",
            Inference::TechnicalOnly => "technical",
            Inference::AestheticOnly => "aesthetic",
        }
    }
}

impl std::str::FromStr for Inference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Inference::Full),
            "technical" | "technical_only" => Ok(Inference::TechnicalOnly),
            "aesthetic" | "aesthetic_only" => Ok(Inference::AestheticOnly),
            other => Err(Error::Config(format!("unknown inference mode {other}"))),
        }
    }
}

/// Both network inputs for one video, already normalized.
#[derive(Clone, Debug)]
pub struct ClipPair<T> {
    pub technical: Tensor<T>,
    pub aesthetic: Tensor<T>,
}

impl<T: Real> ClipPair<T> {
    /// Samples the fragment and the aesthetic clip from the same frames.
    pub fn from_video(video: &RawVideo, sampler: &SamplerConfig) -> Result<Self> {
        let frag = sample_fragment(video, sampler)?;
        let aes = resize_aesthetic(video, sampler.side(), sampler)?;
        Ok(ClipPair {
            technical: frag.to_tensor(),
            aesthetic: aes.to_tensor(),
        })
    }

    pub fn cast<U: Real>(&self) -> ClipPair<U> {
        ClipPair {
            technical: self.technical.cast(),
            aesthetic: self.aesthetic.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub score: Var,
    pub technical: Option<QualityMap>,
    pub aesthetic: Option<QualityMap>,
    pub joint: Option<QualityMap>,
    pub features_t: Option<FeatureMap>,
    pub features_a: Option<FeatureMap>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    backbone: Backbone,
}

impl Model {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        Ok(Model {
            spec: spec.clone(),
            backbone: Backbone::new(&spec.backbone)?,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    fn fusion_heads(&self) -> usize {
        self.spec.backbone.stages.last().map(|s| s.heads).unwrap_or(1)
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        add_backbone_params(&mut store, &self.spec.backbone, self.spec.layout(), seed)?;
        let c = self.spec.backbone.out_channels();
        match self.spec.kind {
            ModelKind::TwoBranch => add_fusion_params(&mut store, self.spec.fusion, c, seed)?,
            _ => add_head_params(&mut store, c, c / 2, seed)?,
        }
        Ok(store)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bind: &mut Bindings,
        clips: &ClipPair<T>,
        inference: Inference,
    ) -> Result<ModelOutput> {
        let want = |b: Branch| match inference {
            Inference::Full => self.spec.uses(b),
            Inference::TechnicalOnly => b == Branch::Technical,
            Inference::AestheticOnly => b == Branch::Aesthetic,
        };
        for b in Branch::BOTH {
            if want(b) && !self.spec.uses(b) {
                return Err(Error::Contract(format!("{:?} model has no {b} branch", self.spec.kind)));
            }
        }
        let mut features = |g: &mut Graph<T>, b: Branch| -> Result<Option<FeatureMap>> {
            if !want(b) {
                return Ok(None);
            }
            let clip = match b {
                Branch::Technical => &clips.technical,
                Branch::Aesthetic => &clips.aesthetic,
            };
            let x = g.constant(clip.clone());
            Ok(Some(self.backbone.forward(g, store, bind, b, x)?))
        };
        let f_t = features(g, Branch::Technical)?;
        let f_a = features(g, Branch::Aesthetic)?;

        let mut out = ModelOutput {
            score: Var::from_index(0),
            technical: None,
            aesthetic: None,
            joint: None,
            features_t: f_t,
            features_a: f_a,
        };
        // every arm below either sets `score` or returns an error
        match (self.spec.kind, f_t, f_a) {
            (ModelKind::TwoBranch, Some(ft), Some(fa)) => {
                let p = FusionParams::bind(g, store, bind, self.fusion_heads())?;
                let fo = fuse(g, &ft, &fa, self.spec.fusion, &p)?;
                out.score = fo.score;
                out.technical = fo.technical;
                out.aesthetic = fo.aesthetic;
                out.joint = fo.joint;
            }
            (ModelKind::TwoBranch, Some(f), None) | (ModelKind::TwoBranch, None, Some(f)) => {
                let p = FusionParams::bind(g, store, bind, self.fusion_heads())?;
                let (score, map) = branch_only_score(g, &f, f.branch, self.spec.fusion, &p)?;
                out.score = score;
                match f.branch {
                    Branch::Technical => out.technical = Some(map),
                    Branch::Aesthetic => out.aesthetic = Some(map),
                }
            }
            (_, Some(f), None) | (_, None, Some(f)) => {
                let head = HeadParams::bind(g, store, bind)?;
                let map = QualityMap {
                    var: regression_head(g, f.var, &head)?,
                    grid: f.grid,
                    branch: Some(f.branch),
                };
                out.score = predict_score(g, &[map])?;
                match f.branch {
                    Branch::Technical => out.technical = Some(map),
                    Branch::Aesthetic => out.aesthetic = Some(map),
                }
            }
            _ => return Err(Error::Contract("no branch selected for inference".into())),
        }
        Ok(out)
    }

    /// Forward pass without gradient bookkeeping; returns the score.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, clips: &ClipPair<T>, inference: Inference) -> Result<f64> {
        let mut g = Graph::new();
        let mut bind = Bindings::frozen();
        let out = self.forward(&mut g, store, &mut bind, clips, inference)?;
        Ok(g.scalar(out.score).to_f64_lossy())
    }
}
