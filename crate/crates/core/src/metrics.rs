//! Evaluation correlations. Kept separate from the loss code so that the
//! two can check each other.

use thiserror::Error;

use crate::losses::ScoreBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("correlation undefined: constant input")]
    ConstantInput,
    #[error("correlation needs at least 2 samples")]
    TooFewSamples,
}

/// Correlation value or an explicit not-a-result status.
pub type Metric = Result<f64, MetricError>;

/// Ranks starting at 1; tied values share the mean of the positions they occupy.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) hold ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Metric {
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples);
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(MetricError::ConstantInput);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn plcc(b: &ScoreBatch) -> Metric {
    pearson(&b.pred, &b.gt)
}

pub fn srcc(b: &ScoreBatch) -> Metric {
    if b.len() < 2 {
        return Err(MetricError::TooFewSamples);
    }
    pearson(&average_ranks(&b.pred), &average_ranks(&b.gt))
}

/// Formats a metric for logs and tables; undefined values print as `NaR`.
pub fn fmt_metric(m: &Metric) -> String {
    match m {
        Ok(v) => format!("{v:.6}"),
        Err(_) => "NaR".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(p: &[f64], g: &[f64]) -> ScoreBatch {
        ScoreBatch::new(p.to_vec(), g.to_vec()).unwrap()
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1., 2., 2., 3.]), vec![1., 2.5, 2.5, 4.]);
        assert_eq!(average_ranks(&[5., 5., 5.]), vec![2., 2., 2.]);
    }

    #[test]
    fn perfect_agreement_and_reversal() {
        assert_eq!(srcc(&b(&[1., 5., 9.], &[0., 1., 2.])), Ok(1.0));
        assert_eq!(srcc(&b(&[3., 2., 1.], &[1., 2., 3.])), Ok(-1.0));
    }

    #[test]
    fn plcc_examples() {
        let gt = [1., 2., 4., 7.];
        let pred: Vec<f64> = gt.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((plcc(&b(&pred, &gt)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(plcc(&b(&[1., -1., 1., -1.], &[1., 1., -1., -1.])), Ok(0.0));
    }

    #[test]
    fn constant_input_is_not_a_result() {
        assert_eq!(srcc(&b(&[2., 2., 2.], &[1., 2., 3.])), Err(MetricError::ConstantInput));
        assert_eq!(plcc(&b(&[1., 2., 3.], &[0., 0., 0.])), Err(MetricError::ConstantInput));
        assert_eq!(fmt_metric(&Err(MetricError::ConstantInput)), "NaR");
    }
}
