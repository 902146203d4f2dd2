use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::ParamStore;
use crate::error::Result;
use crate::harness::{prepare, Checkpoint, Sample};
use crate::losses::ScoreBatch;
use crate::metrics::{plcc, srcc, Metric};
use crate::model::{Inference, Model};
use crate::synthdata::LabeledVideo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub pred: f64,
    pub gt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub inference: Inference,
    pub srcc: Metric,
    pub plcc: Metric,
    pub rows: Vec<Prediction>,
}

/// Predictions in sample order, paired with labels.
pub(crate) fn evaluate_samples(model: &Model, store: &ParamStore<f32>, samples: &[Sample], inference: Inference) -> Result<ScoreBatch> {
    let pred = samples
        .iter()
        .map(|s| model.predict(store, &s.clips, inference))
        .collect::<Result<Vec<_>>>()?;
    ScoreBatch::new(pred, samples.iter().map(|s| s.label).collect())
}

pub fn evaluate(ckpt: &Checkpoint, corpus: &[LabeledVideo], inference: Inference) -> Result<EvalReport> {
    let model = ckpt.model()?;
    let samples = prepare(corpus, &ckpt.config.sampler)?;
    let b = evaluate_samples(&model, &ckpt.store, &samples, inference)?;
    Ok(EvalReport {
        inference,
        srcc: srcc(&b),
        plcc: plcc(&b),
        rows: samples
            .iter()
            .zip(b.pred.iter().zip(&b.gt))
            .map(|(s, (&pred, &gt))| Prediction {
                video_id: s.id.clone(),
                pred,
                gt,
            })
            .collect(),
    })
}

/// CSV with columns `video_id, pred, gt`.
pub fn write_predictions(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
