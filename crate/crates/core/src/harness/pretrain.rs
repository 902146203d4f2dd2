
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{add_backbone_params, Backbone, Bindings, Branch, Init, Layout, ParamGroup, ParamStore};
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::harness::{prepare, AdamW, RunConfig, Sample};
use crate::rng::{derive_seed, named_rng};
use crate::synthdata::{generate_corpus, CorpusSpec, SceneClass, Split};

const CLASSES: usize = SceneClass::ALL.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean cross-entropy per epoch.
    pub losses: Vec<f64>,
    /// Final accuracy on the pretraining corpus.
    pub accuracy: f64,
}

/// Mean softmax cross-entropy over rows of `logits: [B, K]`, with gradient.
fn cross_entropy(logits: &[f32], labels: &[usize]) -> (f64, Vec<f32>) {
    let b = labels.len();
    let mut grad = vec![0f32; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits[r * CLASSES..(r + 1) * CLASSES];
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= (exps[y] / z).ln();
        for k in 0..CLASSES {
            let p = exps[k] / z - if k == y { 1.0 } else { 0.0 };
            grad[r * CLASSES + k] = (p / b as f64) as f32;
        }
    }
    (loss / b as f64, grad)
}

fn logits(g: &mut Graph<f32>, backbone: &Backbone, store: &ParamStore<f32>, bind: &mut Bindings, s: &Sample) -> Result<Var> {
    let x = g.constant(s.clips.aesthetic.clone());
    let f = backbone.forward(g, store, bind, Branch::Aesthetic, x)?;
    let pooled = g.mean_axis(f.var, 0)?;
    let pooled = g.reshape(pooled, &[1, f.channels])?;
    let w = bind.named(g, store, "aux.classifier.weight")?;
    let b = bind.named(g, store, "aux.classifier.bias")?;
    g.linear(pooled, w, Some(b))
}

/// Trains a single backbone to classify the scene of undistorted and
/// distorted synthetic videos from their aesthetic view. Stands in for
/// large-scale semantic pretraining.
pub fn pretrain_backbone(cfg: &RunConfig) -> Result<(ParamStore<f32>, PretrainReport)> {
    let p = &cfg.pretrain;
    if p.videos < 2 {
        return Err(Error::Config("pretraining needs at least 2 videos".into()));
    }
    let backbone = Backbone::new(&cfg.model.backbone)?;
    let seed = derive_seed(cfg.seed, "pretrain");
    let mut store = ParamStore::new();
    add_backbone_params(&mut store, &cfg.model.backbone, Layout::Single(Branch::Aesthetic), seed)?;
    let c = cfg.model.backbone.out_channels();
    store.insert_init("aux.classifier.weight", ParamGroup::Aux, &[c, CLASSES], Init::TruncNormal(0.02), seed, "aux.classifier.weight")?;
    store.insert_init("aux.classifier.bias", ParamGroup::Aux, &[CLASSES], Init::Zeros, seed, "aux.classifier.bias")?;

    let side = cfg.model.backbone.input_side;
    let spec = CorpusSpec {
        count: p.videos,
        frames: cfg.sampler.clip_len(),
        height: side,
        width: side,
        seed,
        split: Split::Train,
    };
    let samples = prepare(&generate_corpus(&spec)?, &cfg.sampler)?;
    let mut opt = AdamW::with_lr(&cfg.optim, p.lr);
    let mut rng = named_rng(seed, "shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let chunks: Vec<&[usize]> = order.chunks(p.batch_size).collect();
        for batch in &chunks {
            let mut g = Graph::new();
            let mut bind = Bindings::new();
            let rows = batch
                .iter()
                .map(|&i| logits(&mut g, &backbone, &store, &mut bind, &samples[i]))
                .collect::<Result<Vec<_>>>()?;
            let all = g.concat(&rows, 0)?;
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].scene.index()).collect();
            let (loss, grad) = cross_entropy(g.data(all), &labels);
            let node = g.scalar_fn(all, loss as f32, grad)?;
            let grads = g.backward(node)?;
            store.zero_grads();
            bind.accumulate(&grads, &mut store);
            opt.step(&mut store);
            total += loss;
        }
        losses.push(total / chunks.len() as f64);
    }
    let mut correct = 0;
    for s in &samples {
        let mut g = Graph::new();
        let mut bind = Bindings::frozen();
        let v = logits(&mut g, &backbone, &store, &mut bind, s)?;
        let d = g.data(v);
        let arg = (0..CLASSES).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        correct += usize::from(arg == s.scene.index());
    }
    store.zero_grads();
    let accuracy = correct as f64 / samples.len() as f64;
    Ok((store, PretrainReport { losses, accuracy }))
}

/// Copies pretrained backbone weights into every branch of `target` by
/// logical name. Position-bias tables keep their initialization, since
/// the technical table has a different shape.
pub fn transfer_backbone(pretrained: &ParamStore<f32>, target: &mut ParamStore<f32>) -> Result<()> {
    let copies: Vec<_> = target
        .bindings()
        .filter(|&(_, _, id)| target.get(id).group == ParamGroup::Backbone)
        .map(|(_, logical, id)| Ok((id, pretrained.resolve(Branch::Aesthetic, logical)?)))
        .collect::<Result<_>>()?;
    for (dst, src) in copies {
        let t = pretrained.get(src).tensor.clone();
        if t.shape() != target.get(dst).tensor.shape() {
            return Err(Error::dim("transfer_backbone", target.get(dst).tensor.shape(), t.shape()));
        }
        target.get_mut(dst).tensor = t;
    }
    Ok(())
}
