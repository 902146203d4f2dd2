use crate::error::Result;
use crate::fragments::SamplerConfig;
use crate::model::ClipPair;
use crate::rng::derive_seed;
use crate::synthdata::{LabeledVideo, SceneClass};
use crate::video::RawVideo;

/// One video, sampled once and ready for the network.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub label: f64,
    pub scene: SceneClass,
    pub clips: ClipPair<f32>,
}

/// Network inputs for `video`. The sampling seed is derived from the
/// configured seed and the video id, so training and evaluation see the
/// same fragment.
pub fn clip_pair(video: &RawVideo, sampler: &SamplerConfig) -> Result<ClipPair<f32>> {
    let cfg = sampler.clone().with_seed(derive_seed(sampler.seed, &video.id));
    ClipPair::from_video(video, &cfg)
}

pub fn prepare(corpus: &[LabeledVideo], sampler: &SamplerConfig) -> Result<Vec<Sample>> {
    corpus
        .iter()
        .map(|v| {
            Ok(Sample {
                id: v.video.id.clone(),
                label: v.label,
                scene: v.scene,
                clips: clip_pair(&v.video, sampler)?,
            })
        })
        .collect()
}
