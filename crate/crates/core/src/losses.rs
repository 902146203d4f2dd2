//! Training objective: `lambda * mono + plcc_loss`.
//!
//! `mono` sums a hinge over all ordered pairs `(i, j)`:
//! `max((pred_i - pred_j) * sgn(gt_j - gt_i), 0)`. It is not normalized by
//! the pair count. `plcc_loss = (1 - PLCC) / 2`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Real, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.3;

/// Variance floor below which PLCC is treated as 0.
pub const VARIANCE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatch {
    pub pred: Vec<f64>,
    pub gt: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(pred: Vec<f64>, gt: Vec<f64>) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::dim("score batch", &[pred.len()], &[gt.len()]));
        }
        if pred.iter().chain(&gt).any(|v| !v.is_finite()) {
            return Err(Error::Contract("score batch has non-finite entries".into()));
        }
        Ok(ScoreBatch { pred, gt })
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    fn require_pairs(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Contract(format!(
                "loss needs at least 2 samples, got {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Loss value together with its gradient with respect to `pred`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn mono_loss(b: &ScoreBatch) -> Result<LossGrad> {
    b.require_pairs()?;
    let n = b.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let s = sgn(b.gt[j] - b.gt[i]);
            let v = (b.pred[i] - b.pred[j]) * s;
            // hinge subgradient at the kink is 0
            if v > 0.0 {
                value += v;
                grad[i] += s;
                grad[j] -= s;
            }
        }
    }
    Ok(LossGrad { value, grad })
}

pub fn plcc_loss(b: &ScoreBatch) -> Result<LossGrad> {
    b.require_pairs()?;
    let n = b.len() as f64;
    let mp = b.pred.iter().sum::<f64>() / n;
    let mg = b.gt.iter().sum::<f64>() / n;
    let p: Vec<f64> = b.pred.iter().map(|v| v - mp).collect();
    let g: Vec<f64> = b.gt.iter().map(|v| v - mg).collect();
    let spp: f64 = p.iter().map(|v| v * v).sum();
    let sgg: f64 = g.iter().map(|v| v * v).sum();
    if spp / n < VARIANCE_EPS || sgg / n < VARIANCE_EPS {
        return Ok(LossGrad {
            value: 0.5,
            grad: vec![0.0; b.len()],
        });
    }
    let spg: f64 = p.iter().zip(&g).map(|(a, c)| a * c).sum();
    let (np, ng) = (spp.sqrt(), sgg.sqrt());
    let r = spg / (np * ng);
    // d r / d pred_k = g_k / (|p||g|) - r p_k / |p|^2  (both vectors centered)
    let grad = p
        .iter()
        .zip(&g)
        .map(|(pk, gk)| -0.5 * (gk / (np * ng) - r * pk / spp))
        .collect();
    Ok(LossGrad {
        value: 0.5 * (1.0 - r),
        grad,
    })
}

/// Components of one evaluation of the combined objective.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub mono: f64,
    pub plcc: f64,
    pub grad: Vec<f64>,
}

pub fn combined_loss(b: &ScoreBatch, lambda: f64) -> Result<CombinedLoss> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    let m = mono_loss(b)?;
    let p = plcc_loss(b)?;
    let grad = m
        .grad
        .iter()
        .zip(&p.grad)
        .map(|(a, c)| lambda * a + c)
        .collect();
    Ok(CombinedLoss {
        total: lambda * m.value + p.value,
        mono: m.value,
        plcc: p.value,
        grad,
    })
}

/// Attaches the combined loss to a graph node holding the `[B]` or `[B, 1]`
/// predicted scores.
pub fn combined_loss_node<T: Real>(
    g: &mut Graph<T>,
    scores: Var,
    gt: &[f64],
    lambda: f64,
) -> Result<(Var, CombinedLoss)> {
    let pred: Vec<f64> = g.data(scores).iter().map(|v| v.to_f64_lossy()).collect();
    let loss = combined_loss(&ScoreBatch::new(pred, gt.to_vec())?, lambda)?;
    let local = loss.grad.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let node = g.scalar_fn(scores, T::from_f64_lossy(loss.total), local)?;
    Ok((node, loss))
}
