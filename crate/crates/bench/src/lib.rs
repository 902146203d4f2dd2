//! Deterministic fixtures shared by the kernel benchmarks.

use vqa_core::harness::{prepare, Sample};
use vqa_core::rng::{named_rng, trunc_normal};
use vqa_core::synthdata::{generate_corpus, CorpusSpec, LabeledVideo, Split};
use vqa_core::{SamplerConfig, Tensor};

pub fn normal_tensor(shape: &[usize], label: &str) -> Tensor<f32> {
    let mut rng = named_rng(0, label);
    let n = shape.iter().product();
    let data = (0..n).map(|_| trunc_normal(&mut rng, 1.0) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub fn toy_corpus(count: usize) -> Vec<LabeledVideo> {
    generate_corpus(&CorpusSpec::toy(count, Split::Train, 0)).expect("toy corpus")
}

pub fn toy_samples(count: usize) -> Vec<Sample> {
    prepare(&toy_corpus(count), &SamplerConfig::toy()).expect("toy samples")
}
