use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::backbone::ParamStore;
use crate::error::Result;
use crate::fusion::FusionMode;
use crate::harness::eval::evaluate_samples;
use crate::harness::{prepare, pretrain_backbone, train_with_init, transfer_backbone, RunConfig, Sample};
use crate::metrics::{plcc, srcc};
use crate::model::{Inference, Model, ModelKind, ModelSpec};
use crate::synthdata::LabeledVideo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: String,
    pub kind: ModelKind,
    pub shared: bool,
    pub fusion: FusionMode,
    pub inference: Inference,
    pub pretrain: bool,
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    /// Total scalar parameters.
    pub params: usize,
    /// Parameters beyond the same model with score-level fusion.
    pub extra_fusion_params: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.row == name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
        w.write_record([
            "row", "kind", "shared", "fusion", "inference", "pretrain", "srcc", "plcc", "params", "extra_fusion_params", "seed", "config_hash",
        ])?;
        let opt = |v: Option<f64>| v.map_or("NaR".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            w.write_record([
                r.row.clone(),
                format!("{:?}", r.kind),
                r.shared.to_string(),
                r.fusion.as_str().to_string(),
                r.inference.as_str().to_string(),
                r.pretrain.to_string(),
                opt(r.srcc),
                opt(r.plcc),
                r.params.to_string(),
                r.extra_fusion_params.to_string(),
                r.seed.to_string(),
                r.config_hash.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameter counts of `spec` and of the same model with score fusion.
pub fn param_counts(spec: &ModelSpec) -> Result<(usize, usize)> {
    let total = Model::new(spec)?.init_params::<f32>(0)?.count();
    let base = ModelSpec {
        fusion: FusionMode::Score,
        ..spec.clone()
    };
    let base = Model::new(&base)?.init_params::<f32>(0)?.count();
    Ok((total, total.saturating_sub(base)))
}

/// Trains configurations on shared prepared data, caching pretrained
/// backbones per configuration.
struct Runner<'a> {
    train: &'a [Sample],
    test: &'a [Sample],
    pretrained: HashMap<String, ParamStore<f32>>,
}

impl Runner<'_> {
    fn fit(&mut self, cfg: &RunConfig) -> Result<(Model, ParamStore<f32>)> {
        let model = Model::new(&cfg.model)?;
        let mut store = model.init_params::<f32>(cfg.seed)?;
        if cfg.pretrain.enabled {
            let key = serde_json::to_string(&(&cfg.model.backbone, &cfg.pretrain, &cfg.sampler, &cfg.optim.betas, cfg.seed))?;
            if !self.pretrained.contains_key(&key) {
                let (pre, report) = pretrain_backbone(cfg)?;
                info!("pretrained backbone: accuracy {:.3}", report.accuracy);
                self.pretrained.insert(key.clone(), pre);
            }
            transfer_backbone(&self.pretrained[&key], &mut store)?;
        }
        let out = train_with_init(cfg, &model, store, self.train)?;
        Ok((model, out.checkpoint.store))
    }

    fn score(&self, model: &Model, store: &ParamStore<f32>, inference: Inference) -> Result<(Option<f64>, Option<f64>)> {
        let b = evaluate_samples(model, store, self.test, inference)?;
        Ok((srcc(&b).ok(), plcc(&b).ok()))
    }
}

fn variant(base: &RunConfig, kind: ModelKind, shared: bool, fusion: FusionMode, pretrain: bool) -> RunConfig {
    let mut cfg = base.clone();
    cfg.model.kind = kind;
    cfg.model.shared = shared;
    cfg.model.fusion = fusion;
    cfg.pretrain.enabled = pretrain;
    cfg
}

fn row(name: &str, cfg: &RunConfig, inference: Inference, metrics: (Option<f64>, Option<f64>)) -> Result<AblationRow> {
    let (params, extra) = param_counts(&cfg.model)?;
    Ok(AblationRow {
        row: name.to_string(),
        kind: cfg.model.kind,
        shared: cfg.model.shared,
        fusion: cfg.model.fusion,
        inference,
        pretrain: cfg.pretrain.enabled,
        srcc: metrics.0,
        plcc: metrics.1,
        params,
        extra_fusion_params: extra,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
    })
}

/// Trains on `train` and scores on `test` for each row of the ablation
/// matrix: single branches, unshared vs shared score fusion (with
/// branch-only inference), the pretraining pair, and the three feature
/// fusion variants.
pub fn ablate(base: &RunConfig, train: &[LabeledVideo], test: &[LabeledVideo]) -> Result<AblationTable> {
    base.validate()?;
    let train = prepare(train, &base.sampler)?;
    let test = prepare(test, &base.sampler)?;
    let mut runner = Runner {
        train: &train,
        test: &test,
        pretrained: HashMap::new(),
    };
    let mut rows = Vec::new();
    use FusionMode::*;
    use ModelKind::*;

    for (name, kind) in [("single_technical", SingleTechnical), ("single_aesthetic", SingleAesthetic)] {
        let cfg = variant(base, kind, false, Score, true);
        let (m, s) = runner.fit(&cfg)?;
        rows.push(row(name, &cfg, Inference::Full, runner.score(&m, &s, Inference::Full)?)?);
    }
    for (prefix, shared) in [("unshared", false), ("shared", true)] {
        let cfg = variant(base, TwoBranch, shared, Score, true);
        let (m, s) = runner.fit(&cfg)?;
        for (suffix, inf) in [("", Inference::Full), ("_technical_only", Inference::TechnicalOnly), ("_aesthetic_only", Inference::AestheticOnly)] {
            rows.push(row(&format!("{prefix}_score{suffix}"), &cfg, inf, runner.score(&m, &s, inf)?)?);
        }
        let cfg = variant(base, TwoBranch, shared, Score, false);
        let (m, s) = runner.fit(&cfg)?;
        rows.push(row(&format!("{prefix}_score_no_pretrain"), &cfg, Inference::Full, runner.score(&m, &s, Inference::Full)?)?);
    }
    for mode in [Concat, SelfAttention, CrossAttention] {
        let cfg = variant(base, TwoBranch, true, mode, true);
        let (m, s) = runner.fit(&cfg)?;
        rows.push(row(&format!("shared_{}", mode.as_str()), &cfg, Inference::Full, runner.score(&m, &s, Inference::Full)?)?);
    }
    Ok(AblationTable { rows })
}

/// Held-out SRCC for one seed of the weight-sharing experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextOutcome {
    pub seed: u64,
    pub shared_pretrained: Option<f64>,
    pub unshared_pretrained: Option<f64>,
    pub shared_scratch: Option<f64>,
    pub unshared_scratch: Option<f64>,
}

impl ContextOutcome {
    /// Shared minus unshared SRCC, with and without pretraining.
    pub fn gaps(&self) -> (f64, f64) {
        let d = |a: Option<f64>, b: Option<f64>| a.unwrap_or(0.0) - b.unwrap_or(0.0);
        (d(self.shared_pretrained, self.unshared_pretrained), d(self.shared_scratch, self.unshared_scratch))
    }
}

/// Shared vs unshared two-branch models, each with and without synthetic
/// pretraining, for every seed.
pub fn context_experiment(base: &RunConfig, train: &[LabeledVideo], test: &[LabeledVideo], seeds: &[u64]) -> Result<Vec<ContextOutcome>> {
    base.validate()?;
    let train = prepare(train, &base.sampler)?;
    let test = prepare(test, &base.sampler)?;
    let mut runner = Runner {
        train: &train,
        test: &test,
        pretrained: HashMap::new(),
    };
    let mut out = Vec::new();
    for &seed in seeds {
        let mut get = |shared: bool, pretrain: bool| -> Result<Option<f64>> {
            let mut cfg = variant(base, ModelKind::TwoBranch, shared, base.model.fusion, pretrain);
            cfg.seed = seed;
            let (m, s) = runner.fit(&cfg)?;
            Ok(runner.score(&m, &s, Inference::Full)?.0)
        };
        let o = ContextOutcome {
            seed,
            shared_pretrained: get(true, true)?,
            unshared_pretrained: get(false, true)?,
            shared_scratch: get(true, false)?,
            unshared_scratch: get(false, false)?,
        };
        info!("context seed {seed}: {o:?}");
        out.push(o);
    }
    Ok(out)
}
