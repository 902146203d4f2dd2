use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::backbone::{Bindings, ParamStore};
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::harness::eval::evaluate_samples;
use crate::harness::{prepare, pretrain_backbone, transfer_backbone, AdamW, Checkpoint, RunConfig, Sample};
use crate::losses::combined_loss_node;
use crate::metrics::{plcc, srcc};
use crate::model::{Inference, Model};
use crate::rng::named_rng;
use crate::synthdata::LabeledVideo;
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub mono: f64,
    pub plcc_loss: f64,
    /// `None` when the metric is not a result (constant predictions).
    pub train_srcc: Option<f64>,
    pub train_plcc: Option<f64>,
    /// Standard deviation of the train-set predictions.
    pub pred_std: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_srcc(&self) -> Option<f64> {
        self.log.last().and_then(|l| l.train_srcc)
    }
}

/// Splits a shuffled order into batches; a trailing singleton joins the
/// batch before it.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Trains from a fresh initialization (after optional pretraining).
pub fn train(cfg: &RunConfig, corpus: &[LabeledVideo]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(&cfg.model)?;
    let mut store = model.init_params::<f32>(cfg.seed)?;
    if cfg.pretrain.enabled {
        let (pre, report) = pretrain_backbone(cfg)?;
        info!("pretraining: final loss {:.4}, accuracy {:.3}", report.losses.last().copied().unwrap_or(f64::NAN), report.accuracy);
        transfer_backbone(&pre, &mut store)?;
    }
    let samples = prepare(corpus, &cfg.sampler)?;
    train_with_init(cfg, &model, store, &samples)
}

/// Quality training from the given parameters.
pub fn train_with_init(cfg: &RunConfig, model: &Model, mut store: ParamStore<f32>, samples: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Config(format!("training needs at least 2 videos, got {}", samples.len())));
    }
    let mut opt = AdamW::new(&cfg.optim);
    let mut rng = named_rng(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..cfg.optim.epochs {
        order.shuffle(&mut rng);
        opt.set_lr(cfg.optim.lr_at(epoch));
        let (mut loss, mut mono, mut pl) = (0.0, 0.0, 0.0);
        let groups = batches(&order, cfg.optim.batch_size);
        for batch in &groups {
            let mut g = Graph::new();
            let mut bind = Bindings::new();
            let scores = batch
                .iter()
                .map(|&i| Ok(model.forward(&mut g, &store, &mut bind, &samples[i].clips, Inference::Full)?.score))
                .collect::<Result<Vec<_>>>()?;
            let s = g.concat(&scores, 0)?;
            let gt: Vec<f64> = batch.iter().map(|&i| samples[i].label).collect();
            let (node, parts) = combined_loss_node(&mut g, s, &gt, cfg.lambda)?;
            let grads = g.backward(node)?;
            store.zero_grads();
            bind.accumulate(&grads, &mut store);
            opt.step(&mut store);
            loss += parts.total;
            mono += parts.mono;
            pl += parts.plcc;
        }
        let n = groups.len() as f64;
        let mut entry = EpochLog {
            epoch,
            loss: loss / n,
            mono: mono / n,
            plcc_loss: pl / n,
            train_srcc: None,
            train_plcc: None,
            pred_std: None,
        };
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.optim.epochs {
            let preds = evaluate_samples(model, &store, samples, Inference::Full)?;
            entry.train_srcc = srcc(&preds).ok();
            entry.train_plcc = plcc(&preds).ok();
            let m = preds.pred.iter().sum::<f64>() / preds.len() as f64;
            entry.pred_std = Some((preds.pred.iter().map(|v| (v - m).powi(2)).sum::<f64>() / preds.len() as f64).sqrt());
        }
        info!(
            "epoch {epoch}: loss {:.4} (mono {:.4}, plcc {:.4}) train srcc {:?} plcc {:?}",
            entry.loss, entry.mono, entry.plcc_loss, entry.train_srcc, entry.train_plcc
        );
        let reached = matches!((cfg.target_srcc, entry.train_srcc), (Some(t), Some(s)) if s >= t);
        log.push(entry);
        if reached {
            break;
        }
    }
    store.zero_grads();
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(cfg.clone(), store),
        log,
    })
}

/// Writes the epoch log as CSV.
pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], vec![4, 5, 6, 7, 8]);
        assert_eq!(batches(&order[..2], 4), vec![vec![0, 1]]);
    }
}
